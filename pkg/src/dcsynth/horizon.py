"""Finite-horizon stacked operators, causality/topology masks, and the
disturbance-feedback reparameterization of causal feedback laws.

Layout convention: stacked vectors are time-major (x = [x(0); ...; x(T)],
u = [u(0); ...; u(T-1)]), and a feedback matrix F is a T x T grid of
(Np x Nn) blocks where row-block t is the input time and column-block k is
the estimate time it consumes; causality means k <= t.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import ValidatedInstance

__all__ = [
    "Dims",
    "HorizonOperators",
    "build_horizon",
    "causal_mask",
    "topology_mask",
    "apply_mask",
    "phi_to_law",
    "law_to_phi",
    "f_block",
    "agent_row_selector",
]


@dataclass(frozen=True, eq=False)
class Dims:
    N: int
    n: int
    p: int
    T: int

    @property
    def mx(self):  # MAS state size per step
        return self.N * self.n

    @property
    def mu(self):  # MAS input size per step
        return self.N * self.p

    @property
    def nx(self):  # stacked state size, times 0..T
        return self.mx * (self.T + 1)

    @property
    def nu(self):  # stacked input size, times 0..T-1
        return self.mu * self.T

    @property
    def nz(self):  # stacked feedback-input size, times 0..T-1
        return self.mx * self.T


@dataclass(frozen=True, eq=False)
class HorizonOperators:
    """Stacked trajectory operators: x = p11 w + p12 u.

    w = [x(0); process noise steps], mu_w / sigma_w its first two moments.
    ctrunc drops the final state block; cp12 = ctrunc @ p12 is strictly
    block lower triangular, which makes every (I - F cp12) resolvable by a
    finite Neumann sum.
    """

    dims: Dims
    atil: np.ndarray       # I_N kron A
    btil: np.ndarray       # I_N kron B
    abar: np.ndarray
    bbar: np.ndarray
    dshift: np.ndarray
    p11: np.ndarray
    p12: np.ndarray
    ctrunc: np.ndarray
    cp12: np.ndarray
    mu_w: np.ndarray
    sigma_w: np.ndarray
    m_sel: tuple           # per agent: p x Np input-row selector
    m_lift: tuple          # per agent: I_T kron (M_i^T M_i)


def f_block(F, dims, t, k):
    """The (input time t, estimate time k) block of a stacked feedback matrix."""
    return F[t * dims.mu:(t + 1) * dims.mu, k * dims.mx:(k + 1) * dims.mx]


def agent_row_selector(dims, i):
    """Boolean index of agent i's input rows across all time blocks."""
    rows = np.zeros(dims.nu, dtype=bool)
    for t in range(dims.T):
        base = t * dims.mu + i * dims.p
        rows[base:base + dims.p] = True
    return rows


def build_horizon(instance: ValidatedInstance) -> HorizonOperators:
    """Assemble the stacked operators for a validated instance.

    p11 and p12 are built by forward block substitution (the block
    Toeplitz powers of the one-step map), never by a general inverse.
    """
    N, n, p, T = instance.dims
    dims = Dims(N, n, p, T)
    A, B = instance.model.A, instance.model.B
    atil = np.kron(np.eye(N), A)
    btil = np.kron(np.eye(N), B)
    mx, mu = dims.mx, dims.mu

    abar = np.kron(np.eye(T + 1), atil)
    bbar = np.zeros((dims.nx, dims.nu))
    bbar[:mx * T, :] = np.kron(np.eye(T), btil)
    dshift = np.zeros((dims.nx, dims.nx))
    dshift[mx:, :mx * T] = np.eye(mx * T)

    # powers of the one-step map: p11 block (t, s) = atil^(t-s) for s <= t
    pows = [np.eye(mx)]
    for _ in range(T):
        pows.append(atil @ pows[-1])
    p11 = np.zeros((dims.nx, dims.nx))
    p12 = np.zeros((dims.nx, dims.nu))
    for t in range(T + 1):
        for s in range(t + 1):
            p11[t * mx:(t + 1) * mx, s * mx:(s + 1) * mx] = pows[t - s]
        for k in range(t):
            p12[t * mx:(t + 1) * mx, k * mu:(k + 1) * mu] = pows[t - 1 - k] @ btil

    ctrunc = np.zeros((dims.nz, dims.nx))
    ctrunc[:, :dims.nz] = np.eye(dims.nz)

    mu_w = np.zeros(dims.nx)
    mu_w[:mx] = instance.mu0
    sigma_w = np.zeros((dims.nx, dims.nx))
    sigma_w[:mx, :mx] = instance.sigma0
    for t in range(T):
        base = (t + 1) * mx
        for i in range(N):
            sl = slice(base + i * n, base + (i + 1) * n)
            sigma_w[sl, sl] = instance.theta[t, i]

    m_sel = []
    m_lift = []
    for i in range(N):
        Mi = np.zeros((p, mu))
        Mi[:, i * p:(i + 1) * p] = np.eye(p)
        m_sel.append(Mi)
        m_lift.append(np.kron(np.eye(T), Mi.T @ Mi))

    return HorizonOperators(dims=dims, atil=atil, btil=btil, abar=abar,
                            bbar=bbar, dshift=dshift, p11=p11, p12=p12,
                            ctrunc=ctrunc, cp12=ctrunc @ p12, mu_w=mu_w,
                            sigma_w=sigma_w, m_sel=tuple(m_sel),
                            m_lift=tuple(m_lift))


def causal_mask(dims: Dims) -> np.ndarray:
    """0/1 mask on (nu x nz) with block (t, k) allowed iff k <= t."""
    mask = np.zeros((dims.nu, dims.nz))
    for t in range(dims.T):
        mask[t * dims.mu:(t + 1) * dims.mu, :(t + 1) * dims.mx] = 1.0
    return mask


def topology_mask(dims: Dims, topo) -> np.ndarray:
    """Causal mask further restricted to the network sparsity pattern."""
    mask = causal_mask(dims)
    block = np.kron(topo.adjacency, np.ones((dims.p, dims.n)))
    mask *= np.kron(np.ones((dims.T, dims.T)), block)
    return mask


def apply_mask(M, mask):
    """Entrywise projection onto the masked subspace."""
    if M.shape != mask.shape:
        raise DimensionMismatch(f"mask shape {mask.shape} != matrix shape {M.shape}")
    return M * mask


def _neumann_inv(X, order):
    """(I + X)^{-1} for nilpotent X via the finite Neumann sum."""
    out = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for _ in range(order - 1):
        term = -term @ X
        out += term
    return out


def phi_to_law(phi, ops: HorizonOperators) -> np.ndarray:
    """Map a causal disturbance-feedback parameter to the feedback law.

    F = (I + phi cp12)^{-1} phi. The inverse always exists: phi cp12 is
    strictly block lower triangular, hence nilpotent of index <= T.
    """
    T = ops.dims.T
    return _neumann_inv(phi @ ops.cp12, T) @ phi


def law_to_phi(F, ops: HorizonOperators) -> np.ndarray:
    """Inverse map: phi = F (I - cp12 F)^{-1}; exact by the same nilpotency."""
    T = ops.dims.T
    return F @ _neumann_inv(-ops.cp12 @ F, T)
