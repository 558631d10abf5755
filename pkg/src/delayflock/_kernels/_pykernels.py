"""Pure NumPy implementation of the hot kernels.

Signatures mirror ``_ckernels.pyx`` exactly; see that file for the meaning of
the psi parameters ``(code, beta, grid, values)``.
"""
import numpy as np

TINY = float(np.finfo(float).tiny)
EULER, RK4 = 0, 1


def psi_eval(s, code, beta, grid, values):
    if code == 0:
        out = np.exp(-s)
    elif code == 1:
        out = (1.0 + s * s) ** (-beta)
    elif code == 2:
        out = np.ones_like(s)
    else:
        out = np.interp(s, grid, values)
    return np.maximum(out, TINY)


def weight_matrix(x_now, x_del, code, beta, grid, values):
    """Row-normalized weights psi(|x_del[k] - x_now[i]|) with zero diagonal."""
    x_now = np.asarray(x_now, dtype=float)
    x_del = np.asarray(x_del, dtype=float)
    dist = np.sqrt(((x_del[None, :, :] - x_now[:, None, :]) ** 2).sum(axis=2))
    w = psi_eval(dist, code, beta, grid, values)
    np.fill_diagonal(w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    return w


# cubic Lagrange weights at the midpoint of [j, j+1] for stencils starting at j-1, j, j-2
MID_WEIGHTS = {
    -1: (-1 / 16, 9 / 16, 9 / 16, -1 / 16),
    0: (5 / 16, 15 / 16, -5 / 16, 1 / 16),
    -2: (1 / 16, -5 / 16, 15 / 16, 5 / 16),
}


def mid_stencil(j, lag):
    """Stencil offset for interpolating at node j + 1/2, or None for the linear fallback.

    Solutions lose smoothness at multiples of tau (node indices divisible by
    lag), so the four-node stencil never straddles such a node.
    """
    if lag < 3:
        return None
    if j % lag == 0:
        return 0
    if (j + 1) % lag == 0:
        return -2
    return -1


def _accel(x, v, xd, vd, psi):
    w = weight_matrix(x, xd, *psi)
    return w @ vd - v


def run_steps(x_hist, v_hist, dt, n_steps, scheme, stride, code, beta, grid, values):
    """Advance the delay system from t=0 by ``n_steps`` steps of size ``dt``.

    ``x_hist``/``v_hist`` hold the lag+1 history nodes on [-tau, 0] with
    shape (lag+1, N, d).  Returns ``(x_rec, v_rec, n_done)`` where the records
    are the states after every ``stride``-th step and ``n_done`` is the number
    of steps completed before a non-finite value appeared (== n_steps normally).
    """
    x_hist = np.asarray(x_hist, dtype=float)
    v_hist = np.asarray(v_hist, dtype=float)
    lag = x_hist.shape[0] - 1
    # two extra nodes behind t - tau feed the midpoint interpolation stencil
    ring = lag + 3
    n_agents, dim = x_hist.shape[1], x_hist.shape[2]
    psi = (code, beta, grid, values)

    xbuf = np.empty((ring, n_agents, dim))
    vbuf = np.empty((ring, n_agents, dim))
    for m0 in range(lag + 1):
        xbuf[m0 % ring] = x_hist[m0]
        vbuf[m0 % ring] = v_hist[m0]
    n_rec = n_steps // stride
    x_rec = np.empty((n_rec, n_agents, dim))
    v_rec = np.empty((n_rec, n_agents, dim))

    m = lag  # node index of the current time t = (m - lag) * dt
    r = 0
    for step in range(n_steps):
        cur = m % ring
        d0 = (m - lag) % ring
        x, v = xbuf[cur], vbuf[cur]
        xd0, vd0 = xbuf[d0], vbuf[d0]
        if scheme == EULER:
            a = _accel(x, v, xd0, vd0, psi)
            x_new = x + dt * v
            v_new = v + dt * a
        else:
            d1 = (m - lag + 1) % ring
            xd1, vd1 = xbuf[d1], vbuf[d1]
            j = m - lag
            off = mid_stencil(j, lag)
            if off is None:
                xdm, vdm = 0.5 * (xd0 + xd1), 0.5 * (vd0 + vd1)
            else:
                xdm = np.zeros((n_agents, dim))
                vdm = np.zeros((n_agents, dim))
                for q, c in enumerate(MID_WEIGHTS[off]):
                    slot = (j + off + q) % ring
                    xdm += c * xbuf[slot]
                    vdm += c * vbuf[slot]
            h = 0.5 * dt
            k1x, k1v = v, _accel(x, v, xd0, vd0, psi)
            x2, v2 = x + h * k1x, v + h * k1v
            k2x, k2v = v2, _accel(x2, v2, xdm, vdm, psi)
            x3, v3 = x + h * k2x, v + h * k2v
            k3x, k3v = v3, _accel(x3, v3, xdm, vdm, psi)
            x4, v4 = x + dt * k3x, v + dt * k3v
            k4x, k4v = v4, _accel(x4, v4, xd1, vd1, psi)
            x_new = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
            return x_rec[:r], v_rec[:r], step
        m += 1
        slot = m % ring
        xbuf[slot] = x_new
        vbuf[slot] = v_new
        if (step + 1) % stride == 0:
            x_rec[r] = x_new
            v_rec[r] = v_new
            r += 1
    return x_rec, v_rec, n_steps
