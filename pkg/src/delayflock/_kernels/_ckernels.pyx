# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels.

psi is passed as (code, beta, grid, values):
    code 0  exp(-s)
    code 1  (1 + s^2)^(-beta)
    code 2  1
    code 3  piecewise-linear through (grid, values), constant outside
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow, sqrt, isfinite
from libc.float cimport DBL_MIN

cnp.import_array()

cdef int EULER = 0


cdef inline int _mid_stencil(Py_ssize_t j, Py_ssize_t lag, double* w) noexcept nogil:
    # mirrors mid_stencil in _pykernels; returns the stencil offset or 1 for linear
    if lag < 3:
        return 1
    if j % lag == 0:
        w[0] = 5.0 / 16; w[1] = 15.0 / 16; w[2] = -5.0 / 16; w[3] = 1.0 / 16
        return 0
    if (j + 1) % lag == 0:
        w[0] = 1.0 / 16; w[1] = -5.0 / 16; w[2] = 15.0 / 16; w[3] = 5.0 / 16
        return -2
    w[0] = -1.0 / 16; w[1] = 9.0 / 16; w[2] = 9.0 / 16; w[3] = -1.0 / 16
    return -1


cdef inline double _psi(double s, int code, double beta,
                        const double[::1] grid, const double[::1] values) noexcept nogil:
    cdef double out
    cdef Py_ssize_t lo, hi, mid, n
    if code == 0:
        out = exp(-s)
    elif code == 1:
        out = pow(1.0 + s * s, -beta)
    elif code == 2:
        out = 1.0
    else:
        n = grid.shape[0]
        if s <= grid[0]:
            out = values[0]
        elif s >= grid[n - 1]:
            out = values[n - 1]
        else:
            lo = 0
            hi = n - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if grid[mid] <= s:
                    lo = mid
                else:
                    hi = mid
            out = values[lo] + (values[hi] - values[lo]) * (s - grid[lo]) / (grid[hi] - grid[lo])
    if out < DBL_MIN:
        out = DBL_MIN
    return out


cdef void _accel(const double[:, ::1] x, const double[:, ::1] v,
                 const double[:, ::1] xd, const double[:, ::1] vd,
                 double[:, ::1] out, double[::1] acc,
                 int code, double beta,
                 const double[::1] grid, const double[::1] values) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double dist, diff, w, total
    for i in range(n):
        total = 0.0
        for c in range(dim):
            acc[c] = 0.0
        for k in range(n):
            if k == i:
                continue
            dist = 0.0
            for c in range(dim):
                diff = xd[k, c] - x[i, c]
                dist += diff * diff
            w = _psi(sqrt(dist), code, beta, grid, values)
            total += w
            for c in range(dim):
                acc[c] += w * vd[k, c]
        for c in range(dim):
            out[i, c] = acc[c] / total - v[i, c]


def weight_matrix(x_now, x_del, int code, double beta, grid, values):
    """Row-normalized weights psi(|x_del[k] - x_now[i]|) with zero diagonal."""
    cdef const double[:, ::1] xn = np.ascontiguousarray(x_now, dtype=np.float64)
    cdef const double[:, ::1] xd = np.ascontiguousarray(x_del, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef const double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = xn.shape[0], dim = xn.shape[1]
    out = np.zeros((n, n))
    cdef double[:, ::1] w = out
    cdef Py_ssize_t i, k, c
    cdef double dist, diff, total
    with nogil:
        for i in range(n):
            total = 0.0
            for k in range(n):
                if k == i:
                    continue
                dist = 0.0
                for c in range(dim):
                    diff = xd[k, c] - xn[i, c]
                    dist += diff * diff
                w[i, k] = _psi(sqrt(dist), code, beta, g, vals)
                total += w[i, k]
            for k in range(n):
                w[i, k] /= total
    return out


def run_steps(x_hist, v_hist, double dt, Py_ssize_t n_steps, int scheme, Py_ssize_t stride,
              int code, double beta, grid, values):
    """Advance the delay system from t=0 by ``n_steps`` steps of size ``dt``.

    Same contract as the pure-Python ``run_steps``: a ring buffer of lag+3
    nodes holds [t - tau - 2 dt, t]; returns ``(x_rec, v_rec, n_done)``.
    """
    xh = np.ascontiguousarray(x_hist, dtype=np.float64)
    vh = np.ascontiguousarray(v_hist, dtype=np.float64)
    cdef Py_ssize_t lag = xh.shape[0] - 1
    cdef Py_ssize_t ring = lag + 3
    cdef Py_ssize_t n = xh.shape[1], dim = xh.shape[2]
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef const double[::1] vals = np.ascontiguousarray(values, dtype=np.float64)

    slots = np.arange(lag + 1) % ring
    xb = np.empty((ring, n, dim))
    vb = np.empty((ring, n, dim))
    xb[slots] = xh
    vb[slots] = vh
    cdef double[:, :, ::1] xbuf = xb
    cdef double[:, :, ::1] vbuf = vb
    cdef Py_ssize_t n_rec = n_steps // stride
    x_rec_arr = np.empty((n_rec, n, dim))
    v_rec_arr = np.empty((n_rec, n, dim))
    cdef double[:, :, ::1] x_rec = x_rec_arr
    cdef double[:, :, ::1] v_rec = v_rec_arr

    # stage scratch
    cdef double[:, ::1] xdm = np.empty((n, dim)), vdm = np.empty((n, dim))
    cdef double[:, ::1] xs = np.empty((n, dim)), vs = np.empty((n, dim))
    cdef double[:, ::1] k1 = np.empty((n, dim)), k2 = np.empty((n, dim))
    cdef double[:, ::1] k3 = np.empty((n, dim)), k4 = np.empty((n, dim))
    cdef double[:, ::1] xk2 = np.empty((n, dim)), xk3 = np.empty((n, dim)), xk4 = np.empty((n, dim))
    cdef double[:, ::1] xnew = np.empty((n, dim)), vnew = np.empty((n, dim))
    cdef double[::1] acc = np.empty(dim)

    cdef Py_ssize_t step, m = lag, r = 0, cur, d0, d1, slot, i, c, q, j
    cdef double wts[4]
    cdef int off
    cdef double h = 0.5 * dt
    cdef bint ok = True
    with nogil:
        for step in range(n_steps):
            cur = m % ring
            d0 = (m - lag) % ring
            if scheme == EULER:
                _accel(xbuf[cur], vbuf[cur], xbuf[d0], vbuf[d0], k1, acc, code, beta, g, vals)
                for i in range(n):
                    for c in range(dim):
                        xnew[i, c] = xbuf[cur, i, c] + dt * vbuf[cur, i, c]
                        vnew[i, c] = vbuf[cur, i, c] + dt * k1[i, c]
            else:
                d1 = (m - lag + 1) % ring
                j = m - lag
                off = _mid_stencil(j, lag, wts)
                if off == 1:
                    for i in range(n):
                        for c in range(dim):
                            xdm[i, c] = 0.5 * (xbuf[d0, i, c] + xbuf[d1, i, c])
                            vdm[i, c] = 0.5 * (vbuf[d0, i, c] + vbuf[d1, i, c])
                else:
                    for i in range(n):
                        for c in range(dim):
                            xdm[i, c] = 0.0
                            vdm[i, c] = 0.0
                    for q in range(4):
                        slot = (j + off + q) % ring
                        for i in range(n):
                            for c in range(dim):
                                xdm[i, c] += wts[q] * xbuf[slot, i, c]
                                vdm[i, c] += wts[q] * vbuf[slot, i, c]
                _accel(xbuf[cur], vbuf[cur], xbuf[d0], vbuf[d0], k1, acc, code, beta, g, vals)
                for i in range(n):
                    for c in range(dim):
                        xs[i, c] = xbuf[cur, i, c] + h * vbuf[cur, i, c]
                        vs[i, c] = vbuf[cur, i, c] + h * k1[i, c]
                        xk2[i, c] = vs[i, c]
                _accel(xs, vs, xdm, vdm, k2, acc, code, beta, g, vals)
                for i in range(n):
                    for c in range(dim):
                        xs[i, c] = xbuf[cur, i, c] + h * xk2[i, c]
                        vs[i, c] = vbuf[cur, i, c] + h * k2[i, c]
                        xk3[i, c] = vs[i, c]
                _accel(xs, vs, xdm, vdm, k3, acc, code, beta, g, vals)
                for i in range(n):
                    for c in range(dim):
                        xs[i, c] = xbuf[cur, i, c] + dt * xk3[i, c]
                        vs[i, c] = vbuf[cur, i, c] + dt * k3[i, c]
                        xk4[i, c] = vs[i, c]
                _accel(xs, vs, xbuf[d1], vbuf[d1], k4, acc, code, beta, g, vals)
                for i in range(n):
                    for c in range(dim):
                        xnew[i, c] = xbuf[cur, i, c] + dt / 6.0 * (
                            vbuf[cur, i, c] + 2.0 * xk2[i, c] + 2.0 * xk3[i, c] + xk4[i, c])
                        vnew[i, c] = vbuf[cur, i, c] + dt / 6.0 * (
                            k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
            ok = True
            for i in range(n):
                for c in range(dim):
                    if not (isfinite(xnew[i, c]) and isfinite(vnew[i, c])):
                        ok = False
            if not ok:
                break
            m += 1
            slot = m % ring
            for i in range(n):
                for c in range(dim):
                    xbuf[slot, i, c] = xnew[i, c]
                    vbuf[slot, i, c] = vnew[i, c]
            if (step + 1) % stride == 0:
                for i in range(n):
                    for c in range(dim):
                        x_rec[r, i, c] = xnew[i, c]
                        v_rec[r, i, c] = vnew[i, c]
                r += 1
    if not ok:
        return x_rec_arr[:r], v_rec_arr[:r], step
    return x_rec_arr, v_rec_arr, n_steps
