"""The alternating design loop: estimator design for the previous law,
per-agent convex control design, agent-wise mixing, cost bookkeeping,
stopping rule, and best-iterate selection."""

import time
from dataclasses import dataclass

import numpy as np

from .control import (
    build_agent_subproblem,
    evaluate_global_cost,
    solve_agent_subproblem,
)
from .errors import DimensionMismatch
from .estimator import design_estimator, extract_horizon_covariances
from .horizon import agent_row_selector, build_horizon, phi_to_law
from .model import validate_model

__all__ = [
    "IterationRecord",
    "SynthesisResult",
    "mix_gains",
    "check_convergence",
    "run_synthesis",
]


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """One stored iterate: the mixed law, its matched estimator gains, and
    the exact objective value of the pair."""

    index: int
    F: np.ndarray
    gains: object
    cost: object          # CostReport
    delta: float          # |J_l - J_{l-1}|, nan on the first iterate
    wall_time: float


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    F_star: np.ndarray
    gains_star: object
    history: tuple
    best_index: int
    converged: bool

    @property
    def J_star(self):
        return self.history[self.best_index - 1].cost.total


def mix_gains(agent_laws, dims):
    """Assemble the deployed law: agent i's input rows are copied from
    agent i's own design."""
    if len(agent_laws) != dims.N:
        raise DimensionMismatch(f"expected {dims.N} agent laws, got {len(agent_laws)}")
    F = np.zeros((dims.nu, dims.nz))
    for i, Fi in enumerate(agent_laws):
        if Fi.shape != (dims.nu, dims.nz):
            raise DimensionMismatch(f"agent {i} law has shape {Fi.shape}, "
                                    f"expected {(dims.nu, dims.nz)}")
        rows = agent_row_selector(dims, i)
        F[rows, :] = Fi[rows, :]
    return F


def check_convergence(costs, cfg):
    """Stopping decision from the cost history (list of J values).

    Relative mode scales the printed absolute rule by max(1, |J_{l-1}|);
    absolute mode applies it as printed.
    """
    if len(costs) < 2:
        return False
    dj = abs(costs[-1] - costs[-2])
    if cfg.stop_mode == "absolute":
        return dj <= cfg.eps_stop
    return dj <= cfg.eps_stop * max(1.0, abs(costs[-2]))


def run_synthesis(instance, topo=None, cfg=None, ops=None, progress=None):
    """Run the full alternating synthesis and return the best iterate.

    Starting from the open-loop law, each iteration designs the estimators
    for the previous law, solves every agent's convex subproblem, mixes the
    per-agent laws, then re-designs the estimators for the mixed law so the
    stored (law, gains, cost) triple is self-consistent. Iterations stop on
    the relative cost change or at the iteration cap, and the returned law
    is the stored iterate with the smallest cost (earliest index on ties).
    """
    instance = validate_model(instance, topo, cfg)
    cfg = instance.config
    if ops is None:
        ops = build_horizon(instance)
    dims = ops.dims
    Q, R = cfg.Q, cfg.R

    F_prev = np.zeros((dims.nu, dims.nz))
    gains_prev, joint_prev = design_estimator(F_prev, instance, ops)

    history = []
    costs = []
    converged = False
    for l in range(1, cfg.n_max + 1):
        t0 = time.perf_counter()
        laws = []
        for i in range(dims.N):
            sigma_i = joint_prev.horizon_cov(i)
            sub = build_agent_subproblem(i, sigma_i, ops, Q, R, cfg)
            phi = solve_agent_subproblem(sub)
            laws.append(phi_to_law(phi, ops))
        F_l = mix_gains(laws, dims)

        gains_l, joint_l = design_estimator(F_l, instance, ops)
        report = evaluate_global_cost(F_l, extract_horizon_covariances(joint_l),
                                      ops, Q, R)
        costs.append(report.total)
        delta = abs(costs[-1] - costs[-2]) if len(costs) > 1 else float("nan")
        history.append(IterationRecord(index=l, F=F_l, gains=gains_l,
                                       cost=report, delta=delta,
                                       wall_time=time.perf_counter() - t0))
        if progress is not None:
            progress(history[-1])
        if check_convergence(costs, cfg):
            converged = True
            break
        gains_prev, joint_prev = gains_l, joint_l

    best = int(np.argmin([r.cost.total for r in history]))  # earliest min
    rec = history[best]
    return SynthesisResult(F_star=rec.F, gains_star=rec.gains,
                           history=tuple(history), best_index=rec.index,
                           converged=converged)
