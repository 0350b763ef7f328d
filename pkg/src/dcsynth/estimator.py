"""Offline design of the per-agent distributed estimators for a fixed
feedback law, and the online per-agent filter update.

Each agent runs a Kalman-like filter over the entire MAS state using only
its neighborhood measurements. Because inputs are computed from estimates,
the estimation errors of all agents are coupled and correlated over time;
the design therefore propagates the full joint second moments
E[e(t) e(s)^T] of the stacked error e(t) = [e from agent 1; ...; agent N],
plus the cross moments between the errors and the exogenous vector w
(initial state and process noise), which the exact cost evaluation needs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MissingMeasurement, SingularInnovation
from .horizon import Dims, f_block
from .model import ValidatedInstance, min_eigval

__all__ = [
    "ErrorPropagators",
    "EstimatorGains",
    "JointErrorCovariance",
    "AgentBelief",
    "build_error_operators",
    "design_estimator",
    "extract_horizon_covariances",
    "online_update",
    "dense_gains",
]


@dataclass(frozen=True, eq=False)
class ErrorPropagators:
    """One-step maps of the stacked-error recursion.

    e-(t+1) = current[t] e(t) + sum_{k<t} memory[(k,t)] e(k) + (noise),
    where the lifted process-noise covariance is noise_cov[t].
    """

    dims: Dims
    current: tuple        # per t: (N mx) x (N mx)
    memory: dict          # (k, t) -> (N mx) x (N mx), k < t
    noise_cov: tuple      # per t: lifted process-noise covariance


@dataclass(frozen=True, eq=False)
class EstimatorGains:
    """Optimal filter gains L[i][t-1] for updates at t = 1..T, plus the
    innovation covariances S[i][t-1]."""

    dims: Dims
    L: tuple
    S: tuple


class JointErrorCovariance:
    """Joint error second moments from the estimator design.

    blocks[(t, s)] = E[e(t) e(s)^T] for s <= t (symmetric completion on
    read); w_cross[t] = E[w e(t)^T]. Written once during design, read-only
    afterwards.
    """

    def __init__(self, dims, blocks, w_cross):
        self.dims = dims
        self.blocks = blocks
        self.w_cross = w_cross

    def joint(self, t, s):
        """E[e(t) e(s)^T] for any order of t, s."""
        if t >= s:
            return self.blocks[(t, s)]
        return self.blocks[(s, t)].T

    def sigma(self, t):
        return self.blocks[(t, t)]

    def agent_cov(self, i, t):
        """E[ie(t) ie(t)^T], the agent-i diagonal block of sigma(t)."""
        mx = self.dims.mx
        return self.blocks[(t, t)][i * mx:(i + 1) * mx, i * mx:(i + 1) * mx]

    def pair_cov(self, i, j, t):
        mx = self.dims.mx
        return self.blocks[(t, t)][i * mx:(i + 1) * mx, j * mx:(j + 1) * mx]

    def horizon_cov(self, i, j=None):
        """Covariance of the stacked time series: E[ie je^T] over t = 0..T."""
        if j is None:
            j = i
        mx, T = self.dims.mx, self.dims.T
        out = np.empty((mx * (T + 1), mx * (T + 1)))
        for t in range(T + 1):
            for s in range(T + 1):
                blk = self.joint(t, s)
                out[t * mx:(t + 1) * mx, s * mx:(s + 1) * mx] = \
                    blk[i * mx:(i + 1) * mx, j * mx:(j + 1) * mx]
        return out

    def w_error_cross(self, i):
        """E[w ie^T] with ie the stacked time series of agent i's errors."""
        mx, T = self.dims.mx, self.dims.T
        out = np.empty((self.dims.nx, mx * (T + 1)))
        for t in range(T + 1):
            out[:, t * mx:(t + 1) * mx] = \
                self.w_cross[t][:, i * mx:(i + 1) * mx]
        return out


def _coupling_row(btil, m_sel, F_kt, N):
    """[btil M_1^T M_1 F_kt, ..., btil M_N^T M_N F_kt]: how each agent's
    estimation error enters the true MAS input."""
    mx = btil.shape[0]
    out = np.empty((mx, N * mx))
    for j in range(N):
        Mj = m_sel[j]
        out[:, j * mx:(j + 1) * mx] = btil @ (Mj.T @ (Mj @ F_kt))
    return out


def build_error_operators(F, instance, ops) -> ErrorPropagators:
    """One-step propagators of the stacked-error recursion for a causal F."""
    N, n, p, T = instance.dims
    dims = ops.dims
    atil, btil = ops.atil, ops.btil
    eyeN = np.eye(N)
    ones = np.ones((N, 1))

    current = []
    memory = {}
    noise = []
    for t in range(T):
        Ftt = f_block(F, dims, t, t)
        coup = _coupling_row(btil, ops.m_sel, Ftt, N)
        current.append(np.kron(eyeN, atil + btil @ Ftt) - np.kron(ones, coup))
        for k in range(t):
            Fkt = f_block(F, dims, t, k)
            coup = _coupling_row(btil, ops.m_sel, Fkt, N)
            memory[(k, t)] = np.kron(eyeN, btil @ Fkt) - np.kron(ones, coup)
        theta_blk = np.zeros((dims.mx, dims.mx))
        for i in range(N):
            theta_blk[i * n:(i + 1) * n, i * n:(i + 1) * n] = instance.theta[t, i]
        noise.append(np.tile(theta_blk, (N, N)))
    return ErrorPropagators(dims=dims, current=tuple(current), memory=memory,
                            noise_cov=tuple(noise))


def _xi_block(instance, i, t):
    """Stacked covariance of agent i's measurement noise vector at step t."""
    N, n = instance.model.N, instance.model.n
    out = np.zeros((N * n, N * n))
    for j in range(N):
        out[j * n:(j + 1) * n, j * n:(j + 1) * n] = instance.xi[t, i, j]
    return out


def design_estimator(F, instance, ops=None):
    """Design all agents' filter gains for the feedback law F.

    Runs the joint prediction/update recursion for t = 0..T-1 with the
    shared-prior initialization (every block of the joint covariance at
    t = 0 equals the initial state covariance), keeping every cross-time
    block E[e(t) e(s)^T] and the w-to-error cross moments.

    Returns (EstimatorGains, JointErrorCovariance). Raises
    SingularInnovation if an innovation covariance fails positive
    definiteness at the configured tolerance.
    """
    from .horizon import build_horizon
    if ops is None:
        ops = build_horizon(instance)
    N, n, p, T = instance.dims
    dims = ops.dims
    mx = dims.mx
    ne = N * mx
    clip = instance.config.psd_clip

    props = build_error_operators(F, instance, ops)
    blocks = {(0, 0): np.tile(instance.sigma0, (N, N))}
    w_cross = [np.zeros((dims.nx, ne))]
    w_cross[0][:mx, :] = np.tile(instance.sigma0, (1, N))

    L_all = [[] for _ in range(N)]
    S_all = [[] for _ in range(N)]

    for t in range(T):
        lam = props.current[t]
        # predicted joint covariance, including all memory cross terms
        pred = lam @ blocks[(t, t)] @ lam.T + props.noise_cov[t]
        for q in range(t):
            cross = lam @ blocks[(t, q)] @ props.memory[(q, t)].T
            pred += cross + cross.T
        for pp in range(t):
            for q in range(t):
                epq = blocks[(pp, q)] if pp >= q else blocks[(q, pp)].T
                pred += props.memory[(pp, t)] @ epq @ props.memory[(q, t)].T
        pred = 0.5 * (pred + pred.T)

        # per-agent gains from the diagonal blocks of the prediction
        ltil = np.zeros((ne, ne))
        meas_cov = np.zeros((ne, ne))
        for i in range(N):
            H = instance.selectors[i]
            ipred = pred[i * mx:(i + 1) * mx, i * mx:(i + 1) * mx]
            xi_i = _xi_block(instance, i, t + 1)
            S = H @ (ipred + xi_i) @ H.T
            S = 0.5 * (S + S.T)
            if H.shape[0] and min_eigval(S) <= clip:
                raise SingularInnovation(
                    f"innovation covariance of agent {i} at t={t + 1} "
                    f"has min eigenvalue {min_eigval(S):.3e}")
            Li = ipred @ H.T @ np.linalg.inv(S) if H.shape[0] else np.zeros((mx, 0))
            L_all[i].append(Li)
            S_all[i].append(S)
            ltil[i * mx:(i + 1) * mx, i * mx:(i + 1) * mx] = Li @ H
            meas_cov[i * mx:(i + 1) * mx, i * mx:(i + 1) * mx] = \
                (Li @ H) @ xi_i @ (Li @ H).T

        upd = np.eye(ne) - ltil
        post = upd @ pred @ upd.T + meas_cov
        blocks[(t + 1, t + 1)] = 0.5 * (post + post.T)

        # cross-time blocks: new noise is independent of past errors
        for s in range(t + 1):
            acc = lam @ blocks[(t, s)] if t >= s else lam @ blocks[(s, t)].T
            for k in range(t):
                ek = blocks[(k, s)] if k >= s else blocks[(s, k)].T
                acc += props.memory[(k, t)] @ ek
            blocks[(t + 1, s)] = upd @ acc

        # w-to-error cross moments
        wn = np.zeros((dims.nx, ne))
        theta_blk = props.noise_cov[t][:mx, :mx]  # blkdg of Theta_i(t)
        wn[(t + 1) * mx:(t + 2) * mx, :] = np.tile(theta_blk, (1, N))
        acc = w_cross[t] @ lam.T
        for k in range(t):
            acc += w_cross[k] @ props.memory[(k, t)].T
        w_cross.append((acc + wn) @ upd.T)

    gains = EstimatorGains(dims=dims,
                           L=tuple(tuple(Ls) for Ls in L_all),
                           S=tuple(tuple(Ss) for Ss in S_all))
    return gains, JointErrorCovariance(dims, blocks, w_cross)


def extract_horizon_covariances(joint: JointErrorCovariance):
    """All horizon covariances {(i, j): E[ie je^T]} plus the per-agent
    w-to-error cross moments, as consumed by the cost evaluation."""
    N = joint.dims.N
    sig = {(i, j): joint.horizon_cov(i, j) for i in range(N) for j in range(N)}
    cross = [joint.w_error_cross(i) for i in range(N)]
    return sig, cross


def dense_gains(gains: EstimatorGains, instance) -> np.ndarray:
    """Gains folded with their selectors: out[i, t-1] = L_i(t) H_i, the
    (mx x mx) correction applied to the full innovation vector."""
    N, n, p, T = instance.dims
    mx = N * n
    out = np.zeros((N, T, mx, mx))
    for i in range(N):
        H = instance.selectors[i]
        for t in range(T):
            out[i, t] = gains.L[i][t] @ H
    return out


@dataclass(frozen=True, eq=False)
class AgentBelief:
    """Agent i's filter state: its full-MAS estimates up to time t.

    history[k] is the posterior estimate at time k; the prediction step
    needs the whole history because the feedback law has memory.
    """

    agent: int
    t: int
    history: np.ndarray   # (t+1, mx)
    predicted: np.ndarray

    @property
    def estimate(self):
        return self.history[-1]


def online_update(belief, gains, F, measurements, instance, ops):
    """One filter step for one agent: predict with the agent's own estimate
    history, then correct with its neighborhood measurements at t+1.

    measurements maps neighbor index j to the noisy observation of agent
    j's state (length n). Raises MissingMeasurement if a neighbor is absent.
    """
    i, t = belief.agent, belief.t
    dims = ops.dims
    hood = instance.topology.neighborhoods[i]
    for j in hood:
        if j not in measurements:
            raise MissingMeasurement(f"agent {i} expects a measurement of agent {j} at t={t + 1}")

    full_input = np.zeros(dims.mu)
    for k in range(t + 1):
        full_input += f_block(F, dims, t, k) @ belief.history[k]
    pred = ops.atil @ belief.history[t] + ops.btil @ full_input

    z = np.concatenate([np.asarray(measurements[j], dtype=float).reshape(-1)
                        for j in hood]) if hood else np.zeros(0)
    H = instance.selectors[i]
    innov = z - H @ pred
    post = pred + gains.L[i][t] @ innov
    return AgentBelief(agent=i, t=t + 1,
                       history=np.vstack([belief.history, post[None, :]]),
                       predicted=pred)
