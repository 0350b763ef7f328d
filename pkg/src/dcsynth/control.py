"""Cost evaluation for a candidate law and the per-agent convex control
design in the disturbance-feedback parameterization.

The global objective E[x^T Q x + u^T R u] is evaluated in exact trace form
over the second moments of the exogenous vector w, the estimation errors,
and their cross moments; no matrix square roots of indefinite products are
formed. The per-agent surrogate costs keep the six-term structure and are
exactly convex in the disturbance-feedback parameter.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailure
from .horizon import HorizonOperators, _neumann_inv, causal_mask
from .model import psd_sqrt

__all__ = [
    "CostReport",
    "AgentSubproblem",
    "evaluate_global_cost",
    "agent_cost_control_form",
    "agent_cost_disturbance_form",
    "build_agent_subproblem",
    "solve_agent_subproblem",
    "closed_loop_response",
]


@dataclass(frozen=True)
class CostReport:
    """Objective value split into its second-moment sources.

    error_cost collects every term involving estimation errors, including
    the signed w-to-error cross terms; the other components are nonnegative.
    """

    total: float
    state_cost: float
    input_cost: float
    error_cost: float
    mean_cost: float


@dataclass(frozen=True, eq=False)
class AgentSubproblem:
    """Ridge-regularized quadratic over the free entries of the
    disturbance-feedback parameter: 0.5-less convention
    J(x) = x^T hess x + 2 lin^T x + const with x = phi[free_index]."""

    agent: int
    hess: np.ndarray
    lin: np.ndarray
    const: float
    free_index: np.ndarray
    shape: tuple
    ridge: float


def closed_loop_response(F, ops: HorizonOperators):
    """Affine maps of the closed loop x = Aw w + sum_i Ai ie_i,
    u = Bw w + sum_i Bi ie_i for the estimation-based law F.

    Returns (Aw, Bw, a_err, b_err) where a_err[i], b_err[i] are the maps
    multiplying agent i's stacked estimation error.
    """
    dims = ops.dims
    K = _neumann_inv(-F @ ops.cp12, dims.T + 1)   # (I - F C P12)^{-1}
    FC = F @ ops.ctrunc
    Bw = K @ FC @ ops.p11
    Aw = ops.p11 + ops.p12 @ Bw
    a_err, b_err = [], []
    for i in range(dims.N):
        Bi = -K @ ops.m_lift[i] @ FC
        b_err.append(Bi)
        a_err.append(ops.p12 @ Bi)
    return Aw, Bw, a_err, b_err


def evaluate_global_cost(F, err_moments, ops: HorizonOperators, Q, R) -> CostReport:
    """Exact expected cost of (F, estimator) from designed second moments.

    err_moments is (sigma, cross): sigma[(i, j)] = E[ie je^T] over the
    horizon and cross[i] = E[w ie^T] (pass zeros for laws whose feedback
    noise is independent of w, e.g. raw measurement feedback).
    """
    sigma, cross = err_moments
    Aw, Bw, a_err, b_err = closed_loop_response(F, ops)
    N = ops.dims.N

    sw = ops.sigma_w
    muw = ops.mu_w
    state = float(np.trace(Q @ Aw @ sw @ Aw.T))
    inp = float(np.trace(R @ Bw @ sw @ Bw.T))
    mean = float(muw @ Aw.T @ Q @ Aw @ muw + muw @ Bw.T @ R @ Bw @ muw)

    err = 0.0
    for i in range(N):
        for j in range(N):
            sij = sigma[(i, j)]
            err += float(np.trace(Q @ a_err[i] @ sij @ a_err[j].T))
            err += float(np.trace(R @ b_err[i] @ sij @ b_err[j].T))
        xi = cross[i] if cross is not None else None
        if xi is not None:
            err += 2.0 * float(np.trace(Q @ Aw @ xi @ a_err[i].T))
            err += 2.0 * float(np.trace(R @ Bw @ xi @ b_err[i].T))
    total = state + inp + err + mean
    return CostReport(total=total, state_cost=state, input_cost=inp,
                      error_cost=err, mean_cost=mean)


def _sqrt_weights(Q, R, sigma_w, sigma_i, clip):
    return (psd_sqrt(Q, clip), psd_sqrt(R, clip),
            psd_sqrt(sigma_w, clip), psd_sqrt(sigma_i, clip))


def agent_cost_control_form(F, sigma_i, ops, Q, R, mu_w=None, sigma_w=None, clip=0.0):
    """Agent-local cost of a feedback law F: the six-term form built from
    the closed-loop resolvents. Used to certify the convex reformulation."""
    if mu_w is None:
        mu_w = ops.mu_w
    if sigma_w is None:
        sigma_w = ops.sigma_w
    dims = ops.dims
    qs, rs, sws, sis = _sqrt_weights(Q, R, sigma_w, sigma_i, clip)
    K = _neumann_inv(-F @ ops.cp12, dims.T + 1)
    G = _neumann_inv(-ops.p12 @ F @ ops.ctrunc, dims.T + 1)
    FC = F @ ops.ctrunc
    t1 = np.linalg.norm(qs @ G @ ops.p11 @ sws) ** 2
    t2 = np.linalg.norm(rs @ K @ FC @ ops.p11 @ sws) ** 2
    t3 = np.linalg.norm(qs @ G @ ops.p12 @ FC @ sis) ** 2
    t4 = np.linalg.norm(rs @ K @ FC @ sis) ** 2
    t5 = np.linalg.norm(qs @ G @ ops.p11 @ mu_w) ** 2
    t6 = np.linalg.norm(rs @ K @ FC @ ops.p11 @ mu_w) ** 2
    return t1 + t2 + t3 + t4 + t5 + t6


def agent_cost_disturbance_form(phi, sigma_i, ops, Q, R, mu_w=None, sigma_w=None, clip=0.0):
    """Same cost as a convex function of the disturbance-feedback parameter."""
    if mu_w is None:
        mu_w = ops.mu_w
    if sigma_w is None:
        sigma_w = ops.sigma_w
    qs, rs, sws, sis = _sqrt_weights(Q, R, sigma_w, sigma_i, clip)
    phiC = phi @ ops.ctrunc
    lift = ops.p11 + ops.p12 @ phiC @ ops.p11
    t1 = np.linalg.norm(qs @ lift @ sws) ** 2
    t2 = np.linalg.norm(rs @ phiC @ ops.p11 @ sws) ** 2
    t3 = np.linalg.norm(qs @ ops.p12 @ phiC @ sis) ** 2
    t4 = np.linalg.norm(rs @ phiC @ sis) ** 2
    t5 = np.linalg.norm(qs @ lift @ mu_w) ** 2
    t6 = np.linalg.norm(rs @ phiC @ ops.p11 @ mu_w) ** 2
    return t1 + t2 + t3 + t4 + t5 + t6


def _quadratic_terms(sigma_i, ops, Q, R, mu_w, sigma_w, clip):
    """(L, Rm, Cm) triples so the cost is sum ||L phi Rm + Cm||_F^2."""
    qs, rs, sws, sis = _sqrt_weights(Q, R, sigma_w, sigma_i, clip)
    qp12 = qs @ ops.p12
    cp11sw = ops.ctrunc @ ops.p11 @ sws
    csi = ops.ctrunc @ sis
    cp11mu = (ops.ctrunc @ ops.p11 @ mu_w)[:, None]
    terms = [
        (qp12, cp11sw, qs @ ops.p11 @ sws),
        (rs, cp11sw, None),
        (qp12, csi, None),
        (rs, csi, None),
        (rs, cp11mu, None),
        (qp12, cp11mu, (qs @ ops.p11 @ mu_w)[:, None]),
    ]
    return terms


def build_agent_subproblem(i, sigma_i, ops, Q, R, cfg, mask=None,
                           mu_w=None, sigma_w=None) -> AgentSubproblem:
    """Assemble agent i's convex quadratic over the free (masked) entries.

    sigma_i is the agent's horizon error covariance from the current
    estimator design; the w moments default to the unconditional ones
    (offline design has no measurements to condition on). mask defaults to
    the causal subspace.
    """
    dims = ops.dims
    if mu_w is None:
        mu_w = ops.mu_w
    if sigma_w is None:
        sigma_w = ops.sigma_w
    if mask is None:
        mask = causal_mask(dims)
    free = np.flatnonzero(mask.ravel() > 0)

    nfree = free.size
    hess = np.zeros((nfree, nfree))
    lin = np.zeros(nfree)
    const = 0.0
    for L, Rm, Cm in _quadratic_terms(sigma_i, ops, Q, R, mu_w, sigma_w,
                                      cfg.psd_clip):
        big = np.kron(L.T @ L, Rm @ Rm.T)  # row-major vec convention
        hess += big[np.ix_(free, free)]
        if Cm is not None:
            lin += (L.T @ Cm @ Rm.T).ravel()[free]
            const += float(np.linalg.norm(Cm) ** 2)
    return AgentSubproblem(agent=i, hess=hess, lin=lin, const=const,
                           free_index=free, shape=(dims.nu, dims.nz),
                           ridge=cfg.ridge)


def subproblem_objective(sub: AgentSubproblem, phi):
    """Quadratic value at a full phi matrix (free entries only are read)."""
    x = phi.ravel()[sub.free_index]
    return float(x @ sub.hess @ x + 2.0 * sub.lin @ x + sub.const)


def solve_agent_subproblem(sub: AgentSubproblem) -> np.ndarray:
    """Unique ridge-regularized minimizer over the free entries.

    The ridge is scaled by the Hessian trace so the regularization is
    dimensionless; a failed Cholesky factorization signals extreme
    conditioning and raises NumericalFailure.
    """
    n = sub.free_index.size
    lam = sub.ridge * max(1.0, float(np.trace(sub.hess)) / max(n, 1))
    H = sub.hess + lam * np.eye(n)
    try:
        cf = scipy.linalg.cho_factor(H, check_finite=False)
        x = scipy.linalg.cho_solve(cf, -sub.lin, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalFailure(
            f"normal equations for agent {sub.agent} failed to factor; "
            f"consider raising ridge (currently {sub.ridge:g})") from exc
    phi = np.zeros(sub.shape[0] * sub.shape[1])
    phi[sub.free_index] = x
    return phi.reshape(sub.shape)
