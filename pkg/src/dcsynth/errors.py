"""Exception and warning types shared across the package."""


class DcsynthError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DcsynthError):
    """An input matrix or vector has an inconsistent shape."""


class NotPositiveDefinite(DcsynthError):
    """A matrix required to be (semi)definite fails the eigenvalue test."""

    def __init__(self, name, min_eig=None, time_index=None):
        self.name = name
        self.min_eig = min_eig
        self.time_index = time_index
        msg = f"matrix {name!r} fails definiteness check"
        if time_index is not None:
            msg += f" at t={time_index}"
        if min_eig is not None:
            msg += f" (min eigenvalue {min_eig:.3e})"
        super().__init__(msg)


class DisconnectedAgentWarning(UserWarning):
    """An agent has no neighbors and no self measurement."""


class SingularInnovation(DcsynthError):
    """An innovation covariance is not positive definite (degenerate noise)."""


class NumericalFailure(DcsynthError):
    """A factorization failed; the problem is extremely ill conditioned."""


class MissingMeasurement(DcsynthError):
    """A neighbor's measurement required by the filter update is absent."""


class SingularStep(DcsynthError):
    """The error-dynamics step matrix is not invertible at the set tolerance."""

    def __init__(self, agent, t, detail=""):
        self.agent = agent
        self.t = t
        super().__init__(f"singular step for agent {agent} at t={t} {detail}".rstrip())


class NotInvertibleCovariance(DcsynthError):
    """A per-agent error covariance is not positive definite where required."""


class ObservabilityViolation(DcsynthError):
    """The network/selector pair fails the observability rank test."""


class ConfigError(DcsynthError):
    """The configuration file is missing or malformed."""


class UsageError(DcsynthError):
    """Invalid command-line usage."""
