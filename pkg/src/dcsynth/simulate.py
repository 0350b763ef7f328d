"""Closed-loop execution of a synthesized law: single rollouts with full
trajectories, Monte Carlo batches, baselines, and the topology sweep.

Noise is sampled with counter-based per-run seeding (seed, run index) so
batches are reproducible regardless of batch size or backend.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .control import (
    build_agent_subproblem,
    evaluate_global_cost,
    solve_agent_subproblem,
)
from .errors import ObservabilityViolation
from .estimator import AgentBelief, dense_gains, online_update
from .horizon import apply_mask, build_horizon, f_block, phi_to_law, topology_mask
from .model import NetworkTopology, ValidatedInstance, psd_sqrt, validate_model
from .synthesis import run_synthesis

__all__ = [
    "Rollout",
    "BatchStats",
    "rollout",
    "rollout_measurement",
    "monte_carlo",
    "monte_carlo_measurement",
    "baseline_fully_connected",
    "baseline_topology_restricted",
    "topology_sweep",
    "measurement_noise_moments",
]


@dataclass(frozen=True, eq=False)
class Rollout:
    """One simulated closed-loop sample path."""

    seed: int
    run_index: int
    x: np.ndarray          # (T+1, Nn)
    u: np.ndarray          # (T, Np)
    w: np.ndarray          # (T, Nn)
    v: np.ndarray          # (T+1, N, Nn)
    beliefs: np.ndarray    # (N, T+1, Nn) posterior estimates
    cost: float


@dataclass(frozen=True)
class BatchStats:
    runs: int
    mean: float
    stderr: float


def _noise_factors(instance):
    """Square-root factors used to shape standard normal draws."""
    N, n, p, T = instance.dims
    mx = N * n
    clip = instance.config.psd_clip
    s0 = psd_sqrt(instance.sigma0, clip)
    sth = np.zeros((T, mx, mx))
    for t in range(T):
        for i in range(N):
            sth[t, i * n:(i + 1) * n, i * n:(i + 1) * n] = \
                psd_sqrt(instance.theta[t, i], clip)
    sxi = np.zeros((T + 1, N, mx, mx))
    for t in range(T + 1):
        for i in range(N):
            for j in range(N):
                sxi[t, i, j * n:(j + 1) * n, j * n:(j + 1) * n] = \
                    psd_sqrt(instance.xi[t, i, j], clip)
    return s0, sth, sxi


def _draw_run(instance, factors, seed, run_index):
    """Noise realizations for one run: (x0, w (T, Nn), v (T+1, N, Nn))."""
    N, n, p, T = instance.dims
    mx = N * n
    s0, sth, sxi = factors
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(run_index))))
    z0 = rng.standard_normal(mx)
    zw = rng.standard_normal((T, mx))
    zv = rng.standard_normal((T + 1, N, mx))
    x0 = instance.mu0 + s0 @ z0
    w = np.einsum("tij,tj->ti", sth, zw)
    v = np.einsum("tinm,tim->tin", sxi, zv)
    return x0, w, v


def _fblocks(F, dims):
    out = np.zeros((dims.T, dims.T, dims.mu, dims.mx))
    for t in range(dims.T):
        for k in range(t + 1):
            out[t, k] = f_block(F, dims, t, k)
    return out


def rollout(instance, F, gains, seed, run_index=0, ops=None) -> Rollout:
    """Simulate one sample path of the estimation-based closed loop.

    Every agent runs its own filter on its own measurement stream; the
    plant applies each agent's own input rows. Matches the batch kernels
    run-for-run at equal (seed, run_index).
    """
    instance = validate_model(instance)
    if ops is None:
        ops = build_horizon(instance)
    dims = ops.dims
    N, n, p, T = instance.dims
    factors = _noise_factors(instance)
    x0, w, v = _draw_run(instance, factors, seed, run_index)

    beliefs = [AgentBelief(agent=i, t=0, history=instance.mu0[None, :].copy(),
                           predicted=instance.mu0.copy()) for i in range(N)]
    x = np.empty((T + 1, dims.mx))
    u = np.empty((T, dims.mu))
    x[0] = x0
    for t in range(T):
        ut = np.zeros(dims.mu)
        for i in range(N):
            rows_i = np.zeros(dims.mu)
            for k in range(t + 1):
                rows_i += f_block(F, dims, t, k) @ beliefs[i].history[k]
            ut[i * p:(i + 1) * p] = rows_i[i * p:(i + 1) * p]
        u[t] = ut
        x[t + 1] = ops.atil @ x[t] + ops.btil @ ut + w[t]
        for i in range(N):
            meas = {j: x[t + 1, j * n:(j + 1) * n] + v[t + 1, i, j * n:(j + 1) * n]
                    for j in instance.topology.neighborhoods[i]}
            beliefs[i] = online_update(beliefs[i], gains, F, meas, instance, ops)

    xf = x.ravel()
    uf = u.ravel()
    cost = float(xf @ instance.config.Q @ xf + uf @ instance.config.R @ uf)
    return Rollout(seed=seed, run_index=run_index, x=x, u=u, w=w, v=v,
                   beliefs=np.stack([b.history for b in beliefs]), cost=cost)


def rollout_measurement(instance, F, seed, run_index=0, ops=None) -> Rollout:
    """One sample path of the raw measurement-feedback loop (no filters)."""
    instance = validate_model(instance)
    if ops is None:
        ops = build_horizon(instance)
    dims = ops.dims
    N, n, p, T = instance.dims
    factors = _noise_factors(instance)
    x0, w, v = _draw_run(instance, factors, seed, run_index)

    x = np.empty((T + 1, dims.mx))
    u = np.empty((T, dims.mu))
    x[0] = x0
    meas = np.empty((N, T + 1, dims.mx))
    meas[:, 0] = x0[None, :] + v[0]
    for t in range(T):
        ut = np.zeros(dims.mu)
        for i in range(N):
            rows_i = np.zeros(dims.mu)
            for k in range(t + 1):
                rows_i += f_block(F, dims, t, k) @ meas[i, k]
            ut[i * p:(i + 1) * p] = rows_i[i * p:(i + 1) * p]
        u[t] = ut
        x[t + 1] = ops.atil @ x[t] + ops.btil @ ut + w[t]
        meas[:, t + 1] = x[t + 1][None, :] + v[t + 1]
    xf = x.ravel()
    uf = u.ravel()
    cost = float(xf @ instance.config.Q @ xf + uf @ instance.config.R @ uf)
    return Rollout(seed=seed, run_index=run_index, x=x, u=u, w=w, v=v,
                   beliefs=meas, cost=cost)


def _batch_noise(instance, seed, runs):
    factors = _noise_factors(instance)
    N, n, p, T = instance.dims
    mx = N * n
    x0s = np.empty((runs, mx))
    ws = np.empty((runs, T, mx))
    vs = np.empty((runs, T + 1, N, mx))
    for r in range(runs):
        x0s[r], ws[r], vs[r] = _draw_run(instance, factors, seed, r)
    return x0s, ws, vs


def batch_costs(instance, F, gains, runs, seed, ops=None, backend=None):
    """Per-run costs of the estimation-based loop for a batch of seeds."""
    instance = validate_model(instance)
    if ops is None:
        ops = build_horizon(instance)
    x0s, ws, vs = _batch_noise(instance, seed, runs)
    return _kernels.batch_costs_estimation(
        ops.atil, ops.btil, _fblocks(F, ops.dims),
        dense_gains(gains, instance), instance.mu0, x0s, ws, vs,
        instance.config.Q, instance.config.R, backend=backend)


def batch_costs_measurement_feedback(instance, F, runs, seed, ops=None,
                                     backend=None):
    instance = validate_model(instance)
    if ops is None:
        ops = build_horizon(instance)
    x0s, ws, vs = _batch_noise(instance, seed, runs)
    return _kernels.batch_costs_measurement(
        ops.atil, ops.btil, _fblocks(F, ops.dims), x0s, ws, vs,
        instance.config.Q, instance.config.R, backend=backend)


def _stats(costs):
    runs = costs.size
    stderr = float(costs.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return BatchStats(runs=runs, mean=float(costs.mean()), stderr=stderr)


def monte_carlo(instance, F, gains, runs, seed, ops=None, backend=None):
    """Independent rollouts with per-run derived seeds.

    Returns (BatchStats, per-run costs).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    costs = batch_costs(instance, F, gains, runs, seed, ops=ops, backend=backend)
    return _stats(costs), costs


def monte_carlo_measurement(instance, F, runs, seed, ops=None, backend=None):
    if runs < 1:
        raise ValueError("runs must be >= 1")
    costs = batch_costs_measurement_feedback(instance, F, runs, seed, ops=ops,
                                             backend=backend)
    return _stats(costs), costs


def measurement_noise_moments(instance, ops):
    """Second moments of the raw-measurement feedback terms, shaped like the
    estimator error moments: independent across agents, block diagonal over
    time, zero cross moments with w."""
    N, n, p, T = instance.dims
    mx = N * n
    nx = mx * (T + 1)
    sigma = {}
    for i in range(N):
        Vi = np.zeros((nx, nx))
        for t in range(T + 1):
            for j in range(N):
                sl = slice(t * mx + j * n, t * mx + (j + 1) * n)
                Vi[sl, sl] = instance.xi[t, i, j]
        for j in range(N):
            sigma[(i, j)] = Vi if i == j else np.zeros((nx, nx))
    cross = [np.zeros((nx, nx)) for _ in range(N)]
    return sigma, cross


def _swap_topology(instance, topo):
    return validate_model(instance.model, topo, instance.config,
                          allow_singular_noise=True)


def baseline_fully_connected(instance, progress=None):
    """Re-run the synthesis with the complete graph substituted.

    Returns (SynthesisResult, instance-with-complete-graph).
    """
    instance = validate_model(instance)
    topo_fc = NetworkTopology.complete(instance.model.N)
    inst_fc = _swap_topology(instance, topo_fc)
    return run_synthesis(inst_fc, progress=progress), inst_fc


def baseline_topology_restricted(instance):
    """Heuristic baseline: one convex solve restricted to the network mask,
    with raw measurement feedback in place of estimation errors.

    The surrogate uses the noise covariance (averaged over agents when
    heterogeneous) in the error slot; the resulting parameter is mapped to
    a law and projected back onto the mask, which loses optimality exactly
    when the masked subspace is not closed under the reparameterization
    (partial topologies). Returns (F, CostReport).
    """
    instance = validate_model(instance)
    ops = build_horizon(instance)
    cfg = instance.config
    sigma, _ = measurement_noise_moments(instance, ops)
    N = instance.model.N
    vbar = sum(sigma[(i, i)] for i in range(N)) / N
    mask = topology_mask(ops.dims, instance.topology)
    sub = build_agent_subproblem(0, vbar, ops, cfg.Q, cfg.R, cfg, mask=mask)
    phi = solve_agent_subproblem(sub)
    F = apply_mask(phi_to_law(phi, ops), mask)
    report = evaluate_global_cost(F, measurement_noise_moments(instance, ops),
                                  ops, cfg.Q, cfg.R)
    return F, report


def ring_then_chords(N):
    """Deterministic edge-addition order: ring first, then chords by
    lexicographic pair order."""
    ring = [(i, (i + 1) % N) for i in range(N)]
    ring_set = {(min(e), max(e)) for e in ring}
    chords = [(i, j) for i in range(N) for j in range(i + 1, N)
              if (i, j) not in ring_set]
    return [(min(e), max(e)) for e in ring] + chords


def topology_for_links(N, links):
    """Topology with the requested number of undirected non-self links."""
    order = ring_then_chords(N)
    if not (N <= links <= len(order)):
        raise ValueError(f"links must be in [{N}, {len(order)}] for N={N}")
    return NetworkTopology.from_edges(N, order[:links])


def topology_sweep(instance, link_counts=None, progress=None):
    """Full synthesis per topology; returns rows of
    (links, J, converged, status). Observability failures are reported per
    topology and the sweep continues."""
    from .stability import observability_check

    instance = validate_model(instance)
    N = instance.model.N
    if link_counts is None:
        link_counts = list(range(N, N * (N - 1) // 2 + 1))
    rows = []
    for links in link_counts:
        topo = topology_for_links(N, links)
        inst_l = _swap_topology(instance, topo)
        bad = [i for i in range(N)
               if not observability_check(topo, i, instance.model.n)[0]]
        if bad:
            rows.append({"links": links, "J": float("nan"), "converged": False,
                         "status": f"observability_violation:agents={bad}"})
            continue
        try:
            result = run_synthesis(inst_l, progress=progress)
        except ObservabilityViolation as exc:
            rows.append({"links": links, "J": float("nan"), "converged": False,
                         "status": f"observability_violation:{exc}"})
            continue
        rows.append({"links": links, "J": result.J_star,
                     "converged": result.converged, "status": "ok"})
    return rows
