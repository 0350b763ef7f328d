"""Problem instance definition: agent dynamics, noise models, network topology,
cost weights and synthesis options, plus validation of all preconditions."""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    DisconnectedAgentWarning,
    NotPositiveDefinite,
)

__all__ = [
    "MasModel",
    "NetworkTopology",
    "SynthesisConfig",
    "ValidatedInstance",
    "validate_model",
    "build_selector",
    "min_eigval",
    "psd_sqrt",
]


def min_eigval(M):
    """Smallest eigenvalue of the symmetrized matrix."""
    if M.shape[0] == 0:
        return np.inf
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def psd_sqrt(M, clip=0.0):
    """Symmetric PSD square root, negative eigenvalues clipped to zero.

    Raises NotPositiveDefinite if an eigenvalue is below -clip.
    """
    Ms = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(Ms)
    if vals[0] < -max(clip, 0.0):
        raise NotPositiveDefinite("psd_sqrt argument", min_eig=float(vals[0]))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _as_matrix(value, rows, cols, name):
    M = np.asarray(value, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.shape != (rows, cols):
        raise DimensionMismatch(f"{name}: expected {rows}x{cols}, got {M.shape}")
    return M


def _theta_static(entry, N, n, name):
    """One time step of process noise: (N, n, n) per-agent covariances.

    Accepts a scalar (s * I_n for every agent), an n x n matrix, a length-N
    vector of per-agent scalars, or an (N, n, n) stack.
    """
    E = np.asarray(entry, dtype=float)
    if E.ndim == 0:
        return np.stack([float(E) * np.eye(n)] * N)
    if E.shape == (n, n):
        return np.stack([E] * N)
    if E.shape == (N,) and n >= 1:
        return np.stack([float(s) * np.eye(n) for s in E])
    if E.shape == (N, n, n):
        return E.copy()
    raise DimensionMismatch(f"{name}: unsupported shape {E.shape}")


def _xi_static(entry, N, n, name):
    """One time step of measurement noise: (N, N, n, n) per-pair covariances.

    Accepts a scalar, an n x n matrix (every pair), a length-N vector of
    per-target scalars (pair (i, j) gets v[j] * I_n), an N x N per-pair
    scalar table, or an (N, N, n, n) stack. When n == N an (N, N) array is
    read as a single matrix for every pair; use the 4-d form for tables.
    """
    E = np.asarray(entry, dtype=float)
    if E.ndim == 0:
        return np.broadcast_to(float(E) * np.eye(n), (N, N, n, n)).copy()
    if E.shape == (n, n):
        return np.broadcast_to(E, (N, N, n, n)).copy()
    if E.shape == (N,):
        out = np.zeros((N, N, n, n))
        for j in range(N):
            out[:, j] = float(E[j]) * np.eye(n)
        return out
    if E.shape == (N, N):
        out = np.zeros((N, N, n, n))
        for i in range(N):
            for j in range(N):
                out[i, j] = float(E[i, j]) * np.eye(n)
        return out
    if E.shape == (N, N, n, n):
        return E.copy()
    raise DimensionMismatch(f"{name}: unsupported shape {E.shape}")


def _noise_sequence(spec, steps, parser, name):
    """Expand a static or per-step noise spec to `steps` entries.

    A list/tuple whose entries do not parse as one static spec is read as a
    time sequence; shorter sequences are extended by holding the last value.
    """
    if isinstance(spec, (list, tuple)):
        try:
            static = parser(spec, name)
        except DimensionMismatch:
            entries = list(spec)
            if len(entries) < steps:
                entries = entries + [entries[-1]] * (steps - len(entries))
            return np.stack([parser(entries[t], f"{name}[t={t}]")
                             for t in range(steps)])
    else:
        static = parser(spec, name)
    return np.broadcast_to(static, (steps,) + static.shape).copy()


@dataclass(frozen=True, eq=False)
class MasModel:
    """Linear stochastic multi-agent model over a finite horizon.

    All N agents share the per-agent dynamics x_i(t+1) = A x_i(t) + B u_i(t) + w_i(t).
    Noise fields accept a constant (broadcast over time) or a per-step sequence.
    """

    A: np.ndarray
    B: np.ndarray
    N: int
    n: int
    p: int
    T: int
    process_noise: object = 1.0
    measurement_noise: object = 1.0
    initial_state_mean: object = None
    initial_state_cov: object = None


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """Measurement graph: agent i observes agent j iff (i, j) is an edge.

    Edges are ordered pairs on 0-based agent indices. By default every agent
    also measures itself; pass self_loops=False to remove that.
    """

    N: int
    edges: frozenset
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    neighborhoods: tuple

    @staticmethod
    def from_edges(N, edges, self_loops=True, symmetric=True):
        pairs = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < N and 0 <= j < N):
                raise DimensionMismatch(f"edge ({i},{j}) out of range for N={N}")
            pairs.add((i, j))
            if symmetric:
                pairs.add((j, i))
        if self_loops:
            pairs.update((i, i) for i in range(N))
        adj = np.zeros((N, N))
        for i, j in pairs:
            adj[i, j] = 1.0
        deg = np.diag(adj.sum(axis=1))
        lap = deg - adj
        hoods = tuple(tuple(j for j in range(N) if adj[i, j] == 1.0) for i in range(N))
        return NetworkTopology(N=N, edges=frozenset(pairs), adjacency=adj,
                               degree=deg, laplacian=lap, neighborhoods=hoods)

    @staticmethod
    def complete(N, self_loops=True):
        return NetworkTopology.from_edges(
            N, [(i, j) for i in range(N) for j in range(N) if i != j],
            self_loops=self_loops)

    def is_connected(self):
        """Connectivity of the undirected skeleton (self-loops ignored)."""
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in range(self.N):
                if j != i and (self.adjacency[i, j] or self.adjacency[j, i]) and j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.N

    def n_links(self):
        """Number of undirected non-self links."""
        und = {(min(i, j), max(i, j)) for (i, j) in self.edges if i != j}
        return len(und)


def build_selector(topo, i, n=1):
    """Selector H_i in {0,1}^(n|Omega_i| x nN) extracting agent i's neighbor blocks."""
    if not (0 <= i < topo.N):
        raise DimensionMismatch(f"agent index {i} out of range")
    hood = topo.neighborhoods[i]
    H = np.zeros((n * len(hood), n * topo.N))
    for m, j in enumerate(hood):
        H[m * n:(m + 1) * n, j * n:(j + 1) * n] = np.eye(n)
    return H


@dataclass(frozen=True, eq=False)
class SynthesisConfig:
    """Cost weights and numerical options for the synthesis loop."""

    Q: np.ndarray
    R: np.ndarray
    eps_stop: float = 1e-6
    n_max: int = 50
    ridge: float = 1e-12
    psd_clip: float = 1e-10
    mc_runs: int = 10000
    rng_seed: int = 0
    stop_mode: str = "relative"  # or "absolute", matching the printed rule


@dataclass(frozen=True, eq=False)
class ValidatedInstance:
    """Immutable validated problem instance with expanded noise arrays.

    theta[t, i] is the process covariance of agent i at step t (t = 0..T-1);
    xi[t, i, j] is the covariance of agent i's measurement of agent j at
    step t (t = 0..T). selectors[i] is the n|Omega_i| x nN neighbor selector.
    Safe to share across concurrent workers.
    """

    model: MasModel
    topology: NetworkTopology
    config: SynthesisConfig
    theta: np.ndarray
    xi: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray
    selectors: tuple

    @property
    def dims(self):
        m = self.model
        return m.N, m.n, m.p, m.T

    def with_horizon(self, T_new, Q=None, R=None):
        """Same model and options with a different horizon length.

        Noise sequences shorter than the new horizon are extended by holding
        their last value. Cost weights are horizon-sized, so they default to
        identities unless replacements are given.
        """
        T_new = int(T_new)
        m = replace(self.model, T=T_new)
        N, n, p = m.N, m.n, m.p
        if Q is None:
            Q = np.eye(N * n * (T_new + 1))
        if R is None:
            R = np.eye(N * p * T_new)
        cfg = replace(self.config, Q=Q, R=R)
        return validate_model(m, self.topology, cfg,
                              allow_singular_noise=True)


def validate_model(model, topo=None, cfg=None, allow_singular_noise=False):
    """Check all dimensional and definiteness preconditions.

    Returns a ValidatedInstance, or raises DimensionMismatch /
    NotPositiveDefinite. Passing an already validated instance returns it
    unchanged. With allow_singular_noise, process and initial covariances only
    need to be PSD (measurement noise must stay PD so innovations invert).
    """
    if isinstance(model, ValidatedInstance):
        return model
    if topo is None or cfg is None:
        raise DimensionMismatch("validate_model needs (model, topology, config)")

    N, n, p, T = model.N, model.n, model.p, model.T
    if min(N, n, p, T) < 1:
        raise DimensionMismatch(f"N, n, p, T must be positive, got {(N, n, p, T)}")
    if topo.N != N:
        raise DimensionMismatch(f"topology has N={topo.N}, model has N={N}")

    A = _as_matrix(model.A, n, n, "A")
    B = _as_matrix(model.B, n, p, "B")
    clip = cfg.psd_clip

    theta = _noise_sequence(model.process_noise, T,
                            lambda e, nm: _theta_static(e, N, n, nm),
                            "process_noise")
    for t in range(T):
        for i in range(N):
            me = min_eigval(theta[t, i])
            if me <= (-clip if allow_singular_noise else clip):
                raise NotPositiveDefinite(f"Theta[{i}]", min_eig=me, time_index=t)

    xi = _noise_sequence(model.measurement_noise, T + 1,
                         lambda e, nm: _xi_static(e, N, n, nm),
                         "measurement_noise")
    for t in range(T + 1):
        for i in range(N):
            for j in range(N):
                me = min_eigval(xi[t, i, j])
                if me <= clip:
                    raise NotPositiveDefinite(f"Xi[{i},{j}]", min_eig=me, time_index=t)

    mu0 = np.zeros(N * n) if model.initial_state_mean is None \
        else np.asarray(model.initial_state_mean, dtype=float).reshape(-1)
    if mu0.shape != (N * n,):
        raise DimensionMismatch(f"initial_state_mean: expected length {N * n}, got {mu0.shape}")
    sigma0 = np.eye(N * n) if model.initial_state_cov is None \
        else _as_matrix(model.initial_state_cov, N * n, N * n, "Sigma0")
    me = min_eigval(sigma0)
    if me < -clip:
        raise NotPositiveDefinite("Sigma0", min_eig=me)

    nx = N * n * (T + 1)
    nu = N * p * T
    Q = _as_matrix(cfg.Q, nx, nx, "Q")
    R = _as_matrix(cfg.R, nu, nu, "R")
    me = min_eigval(Q)
    if me < -clip:
        raise NotPositiveDefinite("Q", min_eig=me)
    me = min_eigval(R)
    if me <= clip:
        raise NotPositiveDefinite("R", min_eig=me)
    if cfg.eps_stop <= 0:
        raise DimensionMismatch("eps_stop must be positive")
    if cfg.n_max < 1 or cfg.mc_runs < 1:
        raise DimensionMismatch("n_max and mc_runs must be positive")

    for i in range(N):
        if len(topo.neighborhoods[i]) == 0:
            warnings.warn(f"agent {i} has no neighbors and no self measurement",
                          DisconnectedAgentWarning)

    selectors = tuple(build_selector(topo, i, n) for i in range(N))
    model = replace(model, A=A, B=B)
    cfg = replace(cfg, Q=Q, R=R)
    return ValidatedInstance(model=model, topology=topo, config=cfg,
                             theta=theta, xi=xi, mu0=mu0, sigma0=sigma0,
                             selectors=selectors)
