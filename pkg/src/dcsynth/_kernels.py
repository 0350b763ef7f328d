"""Hot closed-loop batch kernels: numba-compiled per-run loops with a pure
numpy vectorized fallback.

Selection: the numpy path is forced when the environment variable
DCSYNTH_DISABLE_NUMBA is set to 1/true, or when numba is unavailable.
DCSYNTH_THREADS caps the numba thread count. Both paths implement the same
recursion; costs agree to floating-point reduction order.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "kernel_backend",
    "batch_costs_estimation",
    "batch_costs_measurement",
]

_disable = os.environ.get("DCSYNTH_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")
NUMBA_ENABLED = False
if not _disable:
    try:
        import numba
        from numba import njit, prange

        NUMBA_ENABLED = True
        _threads = os.environ.get("DCSYNTH_THREADS")
        if _threads:
            try:
                numba.set_num_threads(max(1, min(int(_threads),
                                                 numba.config.NUMBA_NUM_THREADS)))
            except ValueError:
                pass
    except ImportError:
        NUMBA_ENABLED = False


def kernel_backend():
    return "numba" if NUMBA_ENABLED else "numpy"


def _est_numpy(atil, btil, fblocks, kgains, mu0, x0s, ws, vs, Q, R):
    """Vectorized-over-runs estimation-feedback closed loop.

    fblocks[t, k] is the (Np x Nn) feedback block consuming the estimate at
    time k; kgains[i, t] is agent i's dense correction L_i(t+1) H_i.
    """
    runs = x0s.shape[0]
    N, T = kgains.shape[0], fblocks.shape[0]
    mx, muu = atil.shape[0], btil.shape[1]
    p = muu // N

    x = x0s.copy()
    xs = np.empty((runs, T + 1, mx))
    us = np.empty((runs, T, muu))
    xs[:, 0] = x
    xh = np.empty((runs, N, T + 1, mx))
    xh[:, :, 0, :] = mu0

    for t in range(T):
        agg = np.zeros((runs, N, muu))
        for k in range(t + 1):
            agg += np.einsum("un,rin->riu", fblocks[t, k], xh[:, :, k, :])
        u = np.empty((runs, muu))
        for i in range(N):
            u[:, i * p:(i + 1) * p] = agg[:, i, i * p:(i + 1) * p]
        x = x @ atil.T + u @ btil.T + ws[:, t]
        xs[:, t + 1] = x
        us[:, t] = u
        pred = xh[:, :, t, :] @ atil.T + agg @ btil.T
        innov = x[:, None, :] + vs[:, t + 1] - pred
        xh[:, :, t + 1, :] = pred + np.einsum("inm,rim->rin", kgains[:, t], innov)

    xf = xs.reshape(runs, -1)
    uf = us.reshape(runs, -1)
    return np.einsum("ri,ij,rj->r", xf, Q, xf) + np.einsum("ri,ij,rj->r", uf, R, uf)


def _meas_numpy(atil, btil, fblocks, x0s, ws, vs, Q, R):
    """Vectorized measurement-feedback loop: inputs feed each agent's own
    raw neighborhood measurements (estimation errors replaced by noise)."""
    runs = x0s.shape[0]
    T = fblocks.shape[0]
    mx = atil.shape[0]
    muu = btil.shape[1]
    N = vs.shape[2]
    p = muu // N

    x = x0s.copy()
    xs = np.empty((runs, T + 1, mx))
    us = np.empty((runs, T, muu))
    xs[:, 0] = x
    meas = np.empty((runs, N, T + 1, mx))
    meas[:, :, 0, :] = x[:, None, :] + vs[:, 0]

    for t in range(T):
        agg = np.zeros((runs, N, muu))
        for k in range(t + 1):
            agg += np.einsum("un,rin->riu", fblocks[t, k], meas[:, :, k, :])
        u = np.empty((runs, muu))
        for i in range(N):
            u[:, i * p:(i + 1) * p] = agg[:, i, i * p:(i + 1) * p]
        x = x @ atil.T + u @ btil.T + ws[:, t]
        xs[:, t + 1] = x
        us[:, t] = u
        meas[:, :, t + 1, :] = x[:, None, :] + vs[:, t + 1]

    xf = xs.reshape(runs, -1)
    uf = us.reshape(runs, -1)
    return np.einsum("ri,ij,rj->r", xf, Q, xf) + np.einsum("ri,ij,rj->r", uf, R, uf)


if NUMBA_ENABLED:

    @njit(cache=True, parallel=True)
    def _est_numba(atil, btil, fblocks, kgains, mu0, x0s, ws, vs, Q, R):
        runs = x0s.shape[0]
        N = kgains.shape[0]
        T = fblocks.shape[0]
        mx = atil.shape[0]
        muu = btil.shape[1]
        p = muu // N
        costs = np.empty(runs)
        for r in prange(runs):
            xs = np.empty((T + 1, mx))
            us = np.empty((T, muu))
            xh = np.empty((N, T + 1, mx))
            xs[0] = x0s[r]
            for i in range(N):
                xh[i, 0] = mu0
            for t in range(T):
                agg = np.zeros((N, muu))
                for i in range(N):
                    for k in range(t + 1):
                        agg[i] += fblocks[t, k] @ xh[i, k]
                u = np.empty(muu)
                for i in range(N):
                    u[i * p:(i + 1) * p] = agg[i, i * p:(i + 1) * p]
                xs[t + 1] = atil @ xs[t] + btil @ u + ws[r, t]
                us[t] = u
                for i in range(N):
                    pred = atil @ xh[i, t] + btil @ agg[i]
                    innov = xs[t + 1] + vs[r, t + 1, i] - pred
                    xh[i, t + 1] = pred + kgains[i, t] @ innov
            xf = xs.ravel()
            uf = us.ravel()
            costs[r] = xf @ (Q @ xf) + uf @ (R @ uf)
        return costs

    @njit(cache=True, parallel=True)
    def _meas_numba(atil, btil, fblocks, x0s, ws, vs, Q, R):
        runs = x0s.shape[0]
        N = vs.shape[2]
        T = fblocks.shape[0]
        mx = atil.shape[0]
        muu = btil.shape[1]
        p = muu // N
        costs = np.empty(runs)
        for r in prange(runs):
            xs = np.empty((T + 1, mx))
            us = np.empty((T, muu))
            meas = np.empty((N, T + 1, mx))
            xs[0] = x0s[r]
            for i in range(N):
                meas[i, 0] = x0s[r] + vs[r, 0, i]
            for t in range(T):
                agg = np.zeros((N, muu))
                for i in range(N):
                    for k in range(t + 1):
                        agg[i] += fblocks[t, k] @ meas[i, k]
                u = np.empty(muu)
                for i in range(N):
                    u[i * p:(i + 1) * p] = agg[i, i * p:(i + 1) * p]
                xs[t + 1] = atil @ xs[t] + btil @ u + ws[r, t]
                us[t] = u
                for i in range(N):
                    meas[i, t + 1] = xs[t + 1] + vs[r, t + 1, i]
            xf = xs.ravel()
            uf = us.ravel()
            costs[r] = xf @ (Q @ xf) + uf @ (R @ uf)
        return costs


def batch_costs_estimation(atil, btil, fblocks, kgains, mu0, x0s, ws, vs, Q, R,
                           backend=None):
    """Per-run realized costs of the estimation-based closed loop."""
    use_numba = NUMBA_ENABLED if backend is None else (backend == "numba")
    if use_numba and not NUMBA_ENABLED:
        raise RuntimeError("numba backend requested but unavailable")
    fn = _est_numba if use_numba else _est_numpy
    return fn(np.ascontiguousarray(atil), np.ascontiguousarray(btil),
              np.ascontiguousarray(fblocks), np.ascontiguousarray(kgains),
              np.ascontiguousarray(mu0), np.ascontiguousarray(x0s),
              np.ascontiguousarray(ws), np.ascontiguousarray(vs),
              np.ascontiguousarray(Q), np.ascontiguousarray(R))


def batch_costs_measurement(atil, btil, fblocks, x0s, ws, vs, Q, R,
                            backend=None):
    """Per-run realized costs of the raw measurement-feedback loop."""
    use_numba = NUMBA_ENABLED if backend is None else (backend == "numba")
    if use_numba and not NUMBA_ENABLED:
        raise RuntimeError("numba backend requested but unavailable")
    fn = _meas_numba if use_numba else _meas_numpy
    return fn(np.ascontiguousarray(atil), np.ascontiguousarray(btil),
              np.ascontiguousarray(fblocks), np.ascontiguousarray(x0s),
              np.ascontiguousarray(ws), np.ascontiguousarray(vs),
              np.ascontiguousarray(Q), np.ascontiguousarray(R))
