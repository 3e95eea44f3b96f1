# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops: deep-linear gradient, gradient descent, tracking and the
separable worst-case landscape.  ``_pykernels`` mirrors every function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "compiled"


cdef struct Net:
    int n
    int* dims
    int* offs       # start of layer j (0-based) in the flat vector
    int* poff       # start of prefix product k in pre buffer (d_k x d0)
    int* soff       # start of suffix product k in suf buffer (dn x d_k)
    double* pre
    double* suf
    double* res
    double* tmp
    int d


cdef int _net_init(Net* net, const long[::1] dims) except -1:
    cdef int n = dims.shape[0] - 1
    cdef int k, j, tot_pre = 0, tot_suf = 0, maxd = 0
    net.n = n
    net.dims = <int*> malloc((n + 1) * sizeof(int))
    net.offs = <int*> malloc((n + 1) * sizeof(int))
    net.poff = <int*> malloc((n + 1) * sizeof(int))
    net.soff = <int*> malloc((n + 1) * sizeof(int))
    for k in range(n + 1):
        net.dims[k] = dims[k]
        if dims[k] > maxd:
            maxd = dims[k]
    net.offs[0] = 0
    for j in range(n):
        net.offs[j + 1] = net.offs[j] + net.dims[j + 1] * net.dims[j]
    net.d = net.offs[n]
    for k in range(n + 1):
        net.poff[k] = tot_pre
        tot_pre += net.dims[k] * net.dims[0]
        net.soff[k] = tot_suf
        tot_suf += net.dims[n] * net.dims[k]
    net.pre = <double*> malloc(tot_pre * sizeof(double))
    net.suf = <double*> malloc(tot_suf * sizeof(double))
    net.res = <double*> malloc(net.dims[n] * net.dims[0] * sizeof(double))
    net.tmp = <double*> malloc(net.dims[n] * maxd * sizeof(double))
    return 0


cdef void _net_free(Net* net):
    free(net.dims); free(net.offs); free(net.poff); free(net.soff)
    free(net.pre); free(net.suf); free(net.res); free(net.tmp)


cdef double _lin_grad(Net* net, const double* th, const double* lam, double* g) nogil:
    """Fill ``g`` with the gradient and return the loss without offset."""
    cdef int n = net.n, d0 = net.dims[0], dn = net.dims[n]
    cdef int j, k, r, c, q, rows, cols
    cdef double s, loss = 0.0
    cdef const double* w
    cdef double* p
    cdef double* pp
    cdef double* sf
    cdef double* sn
    # prefix: pre[0] = I (d0 x d0), pre[k] = W_k pre[k-1]
    p = net.pre + net.poff[0]
    for r in range(d0):
        for c in range(d0):
            p[r * d0 + c] = 1.0 if r == c else 0.0
    for k in range(1, n + 1):
        rows = net.dims[k]; cols = net.dims[k - 1]
        w = th + net.offs[k - 1]
        pp = net.pre + net.poff[k - 1]
        p = net.pre + net.poff[k]
        for r in range(rows):
            for c in range(d0):
                s = 0.0
                for q in range(cols):
                    s += w[r * cols + q] * pp[q * d0 + c]
                p[r * d0 + c] = s
    # residual
    p = net.pre + net.poff[n]
    for r in range(dn * d0):
        net.res[r] = p[r] - lam[r]
        loss += net.res[r] * net.res[r]
    # suffix: suf[n] = I (dn x dn), suf[k-1] = suf[k] W_k
    sf = net.suf + net.soff[n]
    for r in range(dn):
        for c in range(dn):
            sf[r * dn + c] = 1.0 if r == c else 0.0
    for k in range(n, 0, -1):
        rows = net.dims[k]; cols = net.dims[k - 1]
        w = th + net.offs[k - 1]
        sf = net.suf + net.soff[k]
        sn = net.suf + net.soff[k - 1]
        for r in range(dn):
            for c in range(cols):
                s = 0.0
                for q in range(rows):
                    s += sf[r * rows + q] * w[q * cols + c]
                sn[r * cols + c] = s
    # grad_j = suf[j]^T res pre[j-1]^T  (layer j is 1-based)
    for j in range(1, n + 1):
        rows = net.dims[j]; cols = net.dims[j - 1]
        pp = net.pre + net.poff[j - 1]
        sf = net.suf + net.soff[j]
        # tmp = res pre[j-1]^T : dn x cols
        for r in range(dn):
            for c in range(cols):
                s = 0.0
                for q in range(d0):
                    s += net.res[r * d0 + q] * pp[c * d0 + q]
                net.tmp[r * cols + c] = s
        for r in range(rows):
            for c in range(cols):
                s = 0.0
                for q in range(dn):
                    s += sf[q * rows + r] * net.tmp[q * cols + c]
                g[net.offs[j - 1] + r * cols + c] = s
    return 0.5 * loss


def linear_loss_grad(const double[::1] theta, const long[::1] dims, const double[:, ::1] lam):
    """Loss (without offset) and flat gradient of the deep-linear objective."""
    cdef Net net
    _net_init(&net, dims)
    if theta.shape[0] != net.d:
        _net_free(&net)
        raise ValueError("theta length does not match dims")
    out = np.empty(net.d)
    cdef double[::1] g = out
    cdef double val
    try:
        val = _lin_grad(&net, &theta[0], &lam[0, 0], &g[0])
    finally:
        _net_free(&net)
    return val, out


def linear_gd(const double[::1] theta0, const long[::1] dims, const double[:, ::1] lam,
              double eta, long steps, long stride, double blowup=1e12):
    """Gradient descent; returns (records every ``stride`` steps, final, bad_index).

    ``bad_index`` is -1 unless an iterate became non-finite or exceeded
    ``blowup`` in norm, in which case records stop there.
    """
    cdef Net net
    _net_init(&net, dims)
    cdef int d = net.d
    cdef long nrec = steps // stride + 1
    rec = np.empty((nrec, d))
    cdef double[:, ::1] R = rec
    th_arr = np.array(theta0, copy=True)
    cdef double[::1] th = th_arr
    cdef double* g = <double*> malloc(d * sizeof(double))
    cdef long k, bad = -1, ri = 0
    cdef int i
    cdef double nrm
    with nogil:
        for i in range(d):
            R[0, i] = th[i]
        ri = 1
        for k in range(1, steps + 1):
            _lin_grad(&net, &th[0], &lam[0, 0], g)
            nrm = 0.0
            for i in range(d):
                th[i] -= eta * g[i]
                nrm += th[i] * th[i]
            if not isfinite(nrm) or nrm > blowup * blowup:
                bad = k
                break
            if k % stride == 0:
                for i in range(d):
                    R[ri, i] = th[i]
                ri += 1
    free(g)
    _net_free(&net)
    return rec[:ri], th_arr, bad


cdef inline void _hermite(const double[:, ::1] S, const double[:, ::1] D,
                          double h, long idx, double s, int d, double* out) nogil:
    cdef double s2 = s * s, s3 = s2 * s
    cdef double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s
    cdef double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2
    cdef int i
    for i in range(d):
        out[i] = (h00 * S[idx, i] + h10 * h * D[idx, i]
                  + h01 * S[idx + 1, i] + h11 * h * D[idx + 1, i])


def linear_gd_track(const double[::1] theta0, const long[::1] dims, const double[:, ::1] lam,
                    double eta, long steps, double grid_h,
                    const double[:, ::1] ref_states, const double[:, ::1] ref_derivs,
                    long block):
    """Run GD and compare iterate k with a reference curve at time k*eta.

    The reference is cubic Hermite on a uniform grid of spacing ``grid_h``.
    Returns (max distance, argmax k, per-block maxima, final iterate).
    """
    cdef Net net
    _net_init(&net, dims)
    cdef int d = net.d
    cdef long ngrid = ref_states.shape[0]
    if (steps * eta) > grid_h * (ngrid - 1) * (1 + 1e-12):
        _net_free(&net)
        raise ValueError("reference grid does not cover the GD horizon")
    cdef long nblocks = steps // block + 1
    blocks_arr = np.zeros(nblocks)
    cdef double[::1] blocks = blocks_arr
    th_arr = np.array(theta0, copy=True)
    cdef double[::1] th = th_arr
    cdef double* g = <double*> malloc(d * sizeof(double))
    cdef double* ref = <double*> malloc(d * sizeof(double))
    cdef long k, idx
    cdef int i
    cdef double t, s, dist, best = -1.0, diff
    cdef long arg = 0
    with nogil:
        for k in range(0, steps + 1):
            if k > 0:
                _lin_grad(&net, &th[0], &lam[0, 0], g)
                for i in range(d):
                    th[i] -= eta * g[i]
            t = k * eta
            idx = <long> (t / grid_h)
            if idx >= ngrid - 1:
                idx = ngrid - 2
            s = t / grid_h - idx
            _hermite(ref_states, ref_derivs, grid_h, idx, s, d, ref)
            dist = 0.0
            for i in range(d):
                diff = th[i] - ref[i]
                dist += diff * diff
            dist = sqrt(dist)
            if not isfinite(dist):
                best = dist
                arg = k
                break
            if dist > best:
                best = dist
                arg = k
            if dist > blocks[k // block]:
                blocks[k // block] = dist
    free(g); free(ref)
    _net_free(&net)
    return best, arg, blocks_arr, th_arr


# ---------------------------------------------------------------- worst case

cdef inline double _dphi(double z, double a, double zc) nogil:
    cdef double sgn = 1.0, s
    if z < 0:
        z = -z
        sgn = -1.0
    if z < zc:
        return sgn * (-a * z)
    if z <= zc + 1.0:
        s = z - zc
        return sgn * (-a * z + 3 * a * (2.0 / 3.0 + zc) * s * s
                      - 4 * a * (0.25 + 0.5 * zc) * s * s * s)
    return 0.0


cdef inline double _dphibar(double z, double a, double zbc, double rho) nogil:
    cdef double z0 = 0.5 * rho - 1.0, sgn = 1.0, s
    if z < z0:
        z = 2 * z0 - z
        sgn = -1.0
    if z < 1.0 - rho:
        return sgn * (-0.5 * a * (z - z0))
    if z <= 1.0:
        return sgn * (-a * z - a / (4 * rho) * (z - 1) * (z - 1))
    if z < zbc:
        return sgn * (-a * z)
    if z <= zbc + 1.0:
        s = z - zbc
        return sgn * (-a * z + 3 * a * (2.0 / 3.0 + zbc) * s * s
                      - 4 * a * (0.25 + 0.5 * zbc) * s * s * s)
    return 0.0


def worst_gd_scan(const double[::1] q0, double a, double zc, double zbc, double rho,
                  double eta, long max_steps, double[::1] target,
                  double t_lo, double t_hi, double blowup=1e12):
    """GD on the separable worst-case objective (first three coordinates).

    Tracks the minimum distance to ``target`` over iterates, stopping once
    coordinate 1 or 2 has passed the target by more than that minimum
    (both are nondecreasing).  Iterates with ``t_lo <= k*eta <= t_hi`` are
    returned for the isotropic-window fit.
    Returns (min distance, argmin, last k, diverged, window ks, window states).
    """
    cdef double x = q0[0], y = q0[1], z = q0[2]
    cdef double best = 1e308, dist, dx, dy, dz, t
    cdef long k = 0, arg = 0, wi = 0
    cdef bint diverged = False
    cdef long kmin = <long> (t_lo / eta), kmax = <long> (t_hi / eta) + 1
    if kmin < 0:
        kmin = 0
    cdef long wcap = kmax - kmin + 1
    if wcap < 1:
        wcap = 1
    ks_arr = np.empty(wcap, dtype=np.int64)
    ws_arr = np.empty((wcap, 3))
    cdef long[::1] ks = ks_arr
    cdef double[:, ::1] ws = ws_arr
    cdef double nx, ny
    with nogil:
        while True:
            dx = x - target[0]; dy = y - target[1]; dz = z - target[2]
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            if dist < best:
                best = dist
                arg = k
            t = k * eta
            if k >= kmin and k <= kmax and wi < wcap and t >= t_lo and t <= t_hi:
                ks[wi] = k
                ws[wi, 0] = x; ws[wi, 1] = y; ws[wi, 2] = z
                wi += 1
            if not (isfinite(x) and isfinite(y) and isfinite(z)) or fabs(z) > blowup:
                diverged = True
                break
            if (dx > best or dy > best) and t > t_hi:
                break
            if k >= max_steps:
                break
            nx = x - eta * _dphi(x, a, zc)
            ny = y - eta * _dphibar(y, a, zbc, rho)
            z = z - eta * 12 * a * z
            x = nx; y = ny
            k += 1
    return best, arg, k, diverged, ks_arr[:wi], ws_arr[:wi]
