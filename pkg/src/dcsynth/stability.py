"""Verification suite for the estimator under a static memoryless feedback
gain: network observability test, the exact affine relation between one
agent's error and the stacked error of all agents, and the positive
definiteness of the Lyapunov decrement matrix that certifies expected
error contraction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotInvertibleCovariance, SingularStep
from .estimator import dense_gains, design_estimator
from .horizon import build_horizon
from .model import min_eigval, validate_model
from .simulate import _draw_run, _noise_factors

__all__ = [
    "observability_check",
    "static_gain_setup",
    "AffineMapTrajectory",
    "propagate_affine_map",
    "VerifyResult",
    "verify_affine_identity",
    "lyapunov_decrement_check",
    "own_state_gain",
]

_RCOND = 1e12  # condition-number ceiling for the per-step inversions


def observability_check(topo, i, n=1):
    """Rank test of the pair (graph Laplacian as dynamics, agent-i selector).

    Returns (observable, rank): rank of the stacked observability matrix
    against full state dimension n*N.
    """
    from .model import build_selector

    N = topo.N
    lap = np.kron(topo.laplacian, np.eye(n))
    C = build_selector(topo, i, n)
    if C.shape[0] == 0:
        return False, 0
    blocks = []
    M = C
    for _ in range(n * N):
        blocks.append(M)
        M = M @ lap
    rank = int(np.linalg.matrix_rank(np.vstack(blocks)))
    return rank == n * N, rank


def own_state_gain(N, n, p, scale):
    """Static gain applying scale * (own-state estimate) at each agent."""
    return np.kron(np.eye(N), scale * np.eye(p, n))


def _static_big_f(F_static, dims):
    """Stacked law whose diagonal time blocks all equal the static gain."""
    F = np.zeros((dims.nu, dims.nz))
    for t in range(dims.T):
        F[t * dims.mu:(t + 1) * dims.mu, t * dims.mx:(t + 1) * dims.mx] = F_static
    return F


def static_gain_setup(instance, F_static, horizon):
    """Estimator design specialized to a static gain over a check window.

    Rebuilds the instance with T = horizon, embeds the static gain on the
    block diagonal of the stacked law, and runs the standard estimator
    design (the memory terms vanish, so the recursion reduces to the
    static-law error dynamics).
    """
    instance = validate_model(instance)
    inst_h = instance.with_horizon(horizon)
    ops_h = build_horizon(inst_h)
    F_static = np.asarray(F_static, dtype=float)
    F_big = _static_big_f(F_static, ops_h.dims)
    gains, joint = design_estimator(F_big, inst_h, ops_h)
    return inst_h, ops_h, F_big, gains, joint


def _coupling(btil, m_sel, F_static, N):
    mx = btil.shape[0]
    out = np.empty((mx, N * mx))
    for j in range(N):
        Mj = m_sel[j]
        out[:, j * mx:(j + 1) * mx] = btil @ (Mj.T @ (Mj @ F_static))
    return out


@dataclass(frozen=True, eq=False)
class AffineMapTrajectory:
    """Deterministic pieces of the error decomposition e = H ie + offset.

    maps[t][i] is agent i's (N mx x mx) mapping matrix; offset_cov[t][i]
    the covariance of the lumped-noise offset (exact joint propagation, no
    independence assumption); decomp_gap[t][i] reports how far the
    covariance decomposition Sigma = H iSigma H^T + offset_cov is from the
    designed joint covariance (informational: the neglected cross term).
    """

    instance: object
    ops: object
    F_static: np.ndarray
    gains: object
    joint: object
    d1: np.ndarray
    d12: np.ndarray
    maps: tuple
    offset_cov: tuple
    d2: tuple            # d2[t][i], step matrices D1 + D12 H_i(t)
    d22: tuple           # d22[t][i], update matrices at t+1 (index t)
    decomp_gap: tuple


def propagate_affine_map(instance, F_static, horizon, gains=None, joint=None):
    """Propagate the affine mapping matrices and offset covariances.

    The offset covariance is obtained by propagating the joint second
    moment of all agents' offsets (they share the process noise), which
    needs no independence assumption. Raises SingularStep if a step matrix
    fails invertibility at the condition ceiling.
    """
    if gains is None or joint is None:
        inst_h, ops_h, F_big, gains, joint = static_gain_setup(
            instance, F_static, horizon)
    else:
        inst_h = validate_model(instance).with_horizon(horizon)
        ops_h = build_horizon(inst_h)
    N, n, p, T = inst_h.dims
    mx = N * n
    ne = N * mx
    F_static = np.asarray(F_static, dtype=float)

    d1 = ops_h.atil + ops_h.btil @ F_static
    d12 = -_coupling(ops_h.btil, ops_h.m_sel, F_static, N)
    kg = dense_gains(gains, inst_h)       # kg[i, t] = L_i(t+1) H_i

    # shared prior: every agent's initial map is the stack of N identities
    maps = [np.stack([np.tile(np.eye(mx), (N, 1)) for _ in range(N)])]
    bcov = np.zeros((N * ne, N * ne))
    offset_cov = [np.zeros((N, ne, ne))]
    d2_all, d22_all = [], []
    gaps = [np.zeros(N)]

    for t in range(T):
        d2_t = np.stack([d1 + d12 @ maps[t][i] for i in range(N)])
        d22_t = np.stack([np.eye(mx) - kg[i, t] for i in range(N)])
        steps = np.stack([d22_t[i] @ d2_t[i] for i in range(N)])
        ftil = np.zeros((ne, ne))
        for i in range(N):
            ftil[i * mx:(i + 1) * mx, i * mx:(i + 1) * mx] = steps[i]

        new_maps = np.empty((N, ne, mx))
        for i in range(N):
            cond = np.linalg.cond(steps[i])
            if not np.isfinite(cond) or cond > _RCOND:
                raise SingularStep(i, t + 1, f"(condition number {cond:.3e})")
            new_maps[i] = ftil @ maps[t][i] @ np.linalg.inv(steps[i])

        # joint offset propagation: beta = [offset_1; ...; offset_N]; the
        # gamma vector couples every agent's offset and shares the process
        # noise, so the second moment must be propagated jointly.
        emb = [np.zeros((ne, mx)) for _ in range(N)]
        for j in range(N):
            emb[j][j * mx:(j + 1) * mx] = np.eye(mx)
        G = np.zeros((N * ne, N * ne))
        Gw = np.zeros((N * ne, mx))
        Gv = np.zeros((N, N * ne, mx))     # Gv[j]: map of agent j's meas noise
        theta_blk = np.zeros((mx, mx))
        for i in range(N):
            theta_blk[i * n:(i + 1) * n, i * n:(i + 1) * n] = inst_h.theta[t, i]
        for i in range(N):
            row = slice(i * ne, (i + 1) * ne)
            acc_w = -new_maps[i] @ d22_t[i]
            for j in range(N):
                col = slice(j * ne, (j + 1) * ne)
                G[row, col] = emb[j] @ (d22_t[j] @ d12)
                if i == j:
                    G[row, col] += ftil - new_maps[i] @ (d22_t[i] @ d12)
                acc_w += emb[j] @ d22_t[j]
                gv = -emb[j] @ kg[j, t]
                if j == i:
                    gv += new_maps[i] @ kg[i, t]
                Gv[j, row] = gv
            Gw[row] = acc_w

        xi_blk = np.zeros((N, mx, mx))
        for j in range(N):
            for jj in range(N):
                xi_blk[j, jj * n:(jj + 1) * n, jj * n:(jj + 1) * n] = \
                    inst_h.xi[t + 1, j, jj]
        bcov = G @ bcov @ G.T + Gw @ theta_blk @ Gw.T
        for j in range(N):
            bcov += Gv[j] @ xi_blk[j] @ Gv[j].T
        bcov = 0.5 * (bcov + bcov.T)

        eta = np.stack([bcov[i * ne:(i + 1) * ne, i * ne:(i + 1) * ne]
                        for i in range(N)])
        maps.append(new_maps)
        offset_cov.append(eta)
        d2_all.append(d2_t)
        d22_all.append(d22_t)

        sig = joint.sigma(t + 1)
        gaps.append(np.array([
            float(np.max(np.abs(sig - new_maps[i] @ joint.agent_cov(i, t + 1)
                                @ new_maps[i].T - eta[i])))
            for i in range(N)]))

    return AffineMapTrajectory(instance=inst_h, ops=ops_h, F_static=F_static,
                               gains=gains, joint=joint, d1=d1, d12=d12,
                               maps=tuple(maps), offset_cov=tuple(offset_cov),
                               d2=tuple(d2_all), d22=tuple(d22_all),
                               decomp_gap=tuple(gaps))


@dataclass(frozen=True, eq=False)
class VerifyResult:
    max_residual: float
    residuals: np.ndarray      # (steps+1, N)
    stacked_error: np.ndarray  # (steps+1, N mx)
    agent_errors: np.ndarray   # (steps+1, N, mx)
    offsets: np.ndarray        # (steps+1, N, N mx)
    trajectory: AffineMapTrajectory


def verify_affine_identity(instance, F_static, seed, steps) -> VerifyResult:
    """Simulate one sample path and check e(t) = H_i(t) ie(t) + offset_i(t).

    The simulation and the offset recursion share the same noise
    realizations; the relation is an algebraic identity, so the residual is
    pure floating-point error.
    """
    traj = propagate_affine_map(instance, F_static, steps)
    inst = traj.instance
    ops = traj.ops
    N, n, p, T = inst.dims
    mx = N * n
    ne = N * mx
    kg = dense_gains(traj.gains, inst)
    factors = _noise_factors(inst)
    x0, w, v = _draw_run(inst, factors, seed, 0)

    x = x0.copy()
    xh = np.tile(inst.mu0, (N, 1))
    offs = np.zeros((N, ne))
    resid = np.zeros((T + 1, N))
    errs = np.zeros((T + 1, N, mx))
    stack = np.zeros((T + 1, ne))
    offsets = np.zeros((T + 1, N, ne))
    errs[0] = x[None, :] - xh
    stack[0] = errs[0].ravel()
    for i in range(N):
        resid[0, i] = np.max(np.abs(stack[0] - traj.maps[0][i] @ errs[0, i]
                                    - offs[i]))

    for t in range(T):
        u = np.zeros(N * p)
        for i in range(N):
            ui = traj.F_static @ xh[i]
            u[i * p:(i + 1) * p] = ui[i * p:(i + 1) * p]
        x = ops.atil @ x + ops.btil @ u + w[t]
        preds = xh @ traj.d1.T
        new_xh = np.empty_like(xh)
        for i in range(N):
            new_xh[i] = preds[i] + kg[i, t] @ (x + v[t + 1, i] - preds[i])

        # offset recursion with the same realizations
        zeta = np.stack([traj.d22[t][j] @ w[t] - kg[j, t] @ v[t + 1, j]
                         for j in range(N)])
        gamma = np.concatenate([traj.d22[t][j] @ (traj.d12 @ offs[j]) + zeta[j]
                                for j in range(N)])
        ftil = np.zeros((ne, ne))
        for j in range(N):
            ftil[j * mx:(j + 1) * mx, j * mx:(j + 1) * mx] = \
                traj.d22[t][j] @ traj.d2[t][j]
        new_offs = np.empty_like(offs)
        for i in range(N):
            new_offs[i] = ((ftil - traj.maps[t + 1][i] @ (traj.d22[t][i] @ traj.d12))
                           @ offs[i] + gamma - traj.maps[t + 1][i] @ zeta[i])

        xh = new_xh
        offs = new_offs
        errs[t + 1] = x[None, :] - xh
        stack[t + 1] = errs[t + 1].ravel()
        offsets[t + 1] = offs
        for i in range(N):
            resid[t + 1, i] = np.max(np.abs(
                stack[t + 1] - traj.maps[t + 1][i] @ errs[t + 1, i] - offs[i]))

    return VerifyResult(max_residual=float(resid.max()), residuals=resid,
                        stacked_error=stack, agent_errors=errs,
                        offsets=offsets, trajectory=traj)


def lyapunov_decrement_check(instance, F_static, horizon, strict=False,
                             traj=None):
    """Positive definiteness of the expected-contraction certificate.

    For each agent and step computes the decrement matrix in both printed
    algebraic forms (subtraction and congruence-of-inverse) from the same
    ingredients, and returns rows with the minimum eigenvalue, the relative
    gap between the forms, and the covariance decomposition gap. Steps
    where the agent covariance is not positive definite are reported (or
    raise NotInvertibleCovariance when strict).
    """
    if traj is None:
        traj = propagate_affine_map(instance, F_static, horizon)
    inst = traj.instance
    N, n, p, T = inst.dims
    mx = N * n
    clip = inst.config.psd_clip
    rows = []
    for t in range(T):
        theta_blk = np.zeros((mx, mx))
        for i in range(N):
            theta_blk[i * n:(i + 1) * n, i * n:(i + 1) * n] = inst.theta[t, i]
        for i in range(N):
            sig = traj.joint.agent_cov(i, t)
            me = min_eigval(sig)
            if me <= clip:
                if strict:
                    raise NotInvertibleCovariance(
                        f"agent {i} covariance at t={t} has min eigenvalue {me:.3e}")
                rows.append({"agent": i, "t": t + 1, "min_eig": float("nan"),
                             "forms_gap": float("nan"),
                             "decomp_gap": float(traj.decomp_gap[t][i]),
                             "status": "covariance_not_pd"})
                continue
            d2 = traj.d2[t][i]
            eta = traj.offset_cov[t][i]
            noise = traj.d12 @ eta @ traj.d12.T + theta_blk
            C = inst.selectors[i]
            xi_blk = np.zeros((mx, mx))
            for j in range(N):
                xi_blk[j * n:(j + 1) * n, j * n:(j + 1) * n] = inst.xi[t + 1, i, j]
            pred = d2 @ sig @ d2.T + noise
            w_mat = pred @ C.T @ np.linalg.solve(C @ xi_blk @ C.T, C @ pred)
            sig_inv = np.linalg.inv(sig)
            inner = noise + w_mat
            m_sub = sig_inv - d2.T @ np.linalg.solve(pred + w_mat, d2)
            m_inv = sig_inv @ np.linalg.solve(
                sig_inv + d2.T @ np.linalg.solve(inner, d2), sig_inv)
            m_sub = 0.5 * (m_sub + m_sub.T)
            m_inv = 0.5 * (m_inv + m_inv.T)
            gap = float(np.linalg.norm(m_sub - m_inv) /
                        max(1e-300, np.linalg.norm(m_inv)))
            rows.append({"agent": i, "t": t + 1,
                         "min_eig": min_eigval(m_inv),
                         "forms_gap": gap,
                         "decomp_gap": float(traj.decomp_gap[t + 1][i]),
                         "status": "ok"})
    return rows
