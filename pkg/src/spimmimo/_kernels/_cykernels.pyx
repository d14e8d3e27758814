# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled hot kernels: Riemannian CG on the unit-modulus manifold and
stride-1 2-D convolution forward/backward.

Semantics mirror :mod:`spimmimo._kernels._pykernels` exactly; only the
evaluation order of floating-point reductions differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport hypot, sqrt

cnp.import_array()

BACKEND = "compiled"

CG_OK = 0
CG_DEGENERATE = 1

ctypedef fused real_t:
    float
    double


cdef inline double complex _proj1(double complex g, double complex p) noexcept:
    # tangent projection of one entry: drop the radial component along p
    cdef double rad = g.real * p.real + g.imag * p.imag
    return g - rad * p


cdef double _objective_c(double complex[:, ::1] X, double complex[::1] b,
                         double complex[::1] target,
                         double complex[:, ::1] W, bint has_w,
                         double complex[::1] r, double complex[::1] q) noexcept:
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double complex acc
    cdef double obj = 0.0
    for i in range(n):
        acc = target[i]
        for j in range(k):
            acc = acc - X[i, j] * b[j]
        r[i] = acc
    if has_w:
        for i in range(n):
            acc = 0
            for j in range(n):
                acc = acc + W[i, j] * r[j]
            q[i] = acc
    else:
        for i in range(n):
            q[i] = r[i]
    for i in range(n):
        obj += r[i].real * q[i].real + r[i].imag * q[i].imag
    return obj


def cg_unit_modulus(object X0, object b0, object target0, object weight,
                    double modulus, int max_iters, double grad_tol,
                    double armijo_c, double shrink):
    """One analog-matrix update: Riemannian CG with Armijo backtracking.

    Same contract as the pure-numpy kernel: minimizes
    (target - X b)^H W (target - X b) over entrywise-constant-modulus X,
    Polak-Ribiere+ directions with projection transport, reset to steepest
    descent every 10*dim accepted steps. Returns
    ``(X_new, objective, iterations, status)``.
    """
    cdef cnp.ndarray Xa = np.array(X0, dtype=np.complex128, order="C", copy=True)
    cdef cnp.ndarray ba = np.ascontiguousarray(b0, dtype=np.complex128)
    cdef cnp.ndarray ta = np.ascontiguousarray(target0, dtype=np.complex128)
    cdef bint has_w = weight is not None
    cdef cnp.ndarray Wa
    if has_w:
        Wa = np.ascontiguousarray(weight, dtype=np.complex128)
    else:
        Wa = np.zeros((1, 1), dtype=np.complex128)

    cdef double complex[:, ::1] X = Xa
    cdef double complex[::1] b = ba
    cdef double complex[::1] target = ta
    cdef double complex[:, ::1] W = Wa

    cdef Py_ssize_t n = X.shape[0], k = X.shape[1]
    cdef Py_ssize_t dim = n * k
    cdef Py_ssize_t reset_every = 10 * dim

    cdef cnp.ndarray Ya = np.empty((n, k), dtype=np.complex128)
    cdef cnp.ndarray pha = np.empty((n, k), dtype=np.complex128)
    cdef cnp.ndarray ga = np.empty((n, k), dtype=np.complex128)
    cdef cnp.ndarray gna = np.empty((n, k), dtype=np.complex128)
    cdef cnp.ndarray da = np.empty((n, k), dtype=np.complex128)
    cdef cnp.ndarray ra = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray qa = np.empty(n, dtype=np.complex128)
    cdef double complex[:, ::1] Y = Ya
    cdef double complex[:, ::1] ph = pha
    cdef double complex[:, ::1] g = ga
    cdef double complex[:, ::1] gn = gna
    cdef double complex[:, ::1] d = da
    cdef double complex[::1] r = ra
    cdef double complex[::1] q = qa

    cdef Py_ssize_t i, j, it, ls, iters = 0, degenerate
    cdef double complex zz, Gij
    cdef double obj, new_obj, gg, gg_new, slope, beta, num, alpha, mag
    cdef bint accepted, zero_hit

    obj = _objective_c(X, b, target, W, has_w, r, q)
    for i in range(n):
        for j in range(k):
            mag = hypot(X[i, j].real, X[i, j].imag)
            ph[i, j] = X[i, j] / mag
    gg = 0.0
    for i in range(n):
        for j in range(k):
            Gij = -q[i] * b[j].conjugate()
            g[i, j] = _proj1(Gij, ph[i, j])
            d[i, j] = -g[i, j]
            gg += g[i, j].real * g[i, j].real + g[i, j].imag * g[i, j].imag

    for it in range(max_iters):
        if sqrt(gg) <= grad_tol:
            break
        slope = 0.0
        for i in range(n):
            for j in range(k):
                slope += g[i, j].real * d[i, j].real + g[i, j].imag * d[i, j].imag
        if slope >= 0.0:
            for i in range(n):
                for j in range(k):
                    d[i, j] = -g[i, j]
            slope = -gg
        alpha = 1.0
        accepted = False
        degenerate = 0
        for ls in range(60):
            zero_hit = False
            for i in range(n):
                for j in range(k):
                    zz = X[i, j] + alpha * d[i, j]
                    mag = hypot(zz.real, zz.imag)
                    if mag == 0.0:
                        zero_hit = True
                        break
                    Y[i, j] = (modulus / mag) * zz
                if zero_hit:
                    break
            if zero_hit:
                degenerate += 1
                if degenerate > 30:
                    return Xa, obj, iters, CG_DEGENERATE
                alpha *= 0.5
                continue
            new_obj = _objective_c(Y, b, target, W, has_w, r, q)
            if new_obj <= obj + armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            break
        iters = it + 1
        for i in range(n):
            for j in range(k):
                X[i, j] = Y[i, j]
        obj = new_obj
        for i in range(n):
            for j in range(k):
                mag = hypot(X[i, j].real, X[i, j].imag)
                ph[i, j] = X[i, j] / mag
        gg_new = 0.0
        num = 0.0
        for i in range(n):
            for j in range(k):
                Gij = -q[i] * b[j].conjugate()
                gn[i, j] = _proj1(Gij, ph[i, j])
                gg_new += gn[i, j].real * gn[i, j].real + gn[i, j].imag * gn[i, j].imag
                # transport the old gradient, accumulate PR+ numerator
                zz = gn[i, j] - _proj1(g[i, j], ph[i, j])
                num += gn[i, j].real * zz.real + gn[i, j].imag * zz.imag
        beta = num / gg
        if beta < 0.0:
            beta = 0.0
        if (it + 1) % reset_every == 0:
            beta = 0.0
        for i in range(n):
            for j in range(k):
                d[i, j] = -gn[i, j] + beta * _proj1(d[i, j], ph[i, j])
                g[i, j] = gn[i, j]
        gg = gg_new
    return Xa, obj, iters, CG_OK


def conv2d_forward(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] w,
                   real_t[::1] bias, int pad_h, int pad_w):
    """Stride-1 zero-padded cross-correlation; same contract as the pure kernel."""
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], Wd = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = H + 2 * pad_h - kh + 1
    cdef Py_ssize_t Wo = Wd + 2 * pad_w - kw + 1
    if real_t is float:
        dtype = np.float32
    else:
        dtype = np.float64
    ya = np.empty((B, Co, Ho, Wo), dtype=dtype)
    cdef real_t[:, :, :, ::1] y = ya
    cdef Py_ssize_t bb, o, c, i0, j0, di, dj, ii, jj
    cdef real_t acc
    with nogil:
        for bb in range(B):
            for o in range(Co):
                for i0 in range(Ho):
                    for j0 in range(Wo):
                        acc = bias[o]
                        for c in range(Ci):
                            for di in range(kh):
                                ii = i0 + di - pad_h
                                if ii < 0 or ii >= H:
                                    continue
                                for dj in range(kw):
                                    jj = j0 + dj - pad_w
                                    if jj < 0 or jj >= Wd:
                                        continue
                                    acc = acc + x[bb, c, ii, jj] * w[o, c, di, dj]
                        y[bb, o, i0, j0] = acc
    return ya


def conv2d_backward(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] w,
                    real_t[:, :, :, ::1] gy, int pad_h, int pad_w):
    """Gradients of conv2d_forward wrt input, weights and bias."""
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], Wd = x.shape[3]
    cdef Py_ssize_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = gy.shape[2], Wo = gy.shape[3]
    if real_t is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gxa = np.zeros((B, Ci, H, Wd), dtype=dtype)
    gwa = np.zeros((Co, Ci, kh, kw), dtype=dtype)
    gba = np.zeros(Co, dtype=dtype)
    cdef real_t[:, :, :, ::1] gx = gxa
    cdef real_t[:, :, :, ::1] gw = gwa
    cdef real_t[::1] gb = gba
    cdef Py_ssize_t bb, o, c, i0, j0, di, dj, ii, jj
    cdef real_t gval
    with nogil:
        for bb in range(B):
            for o in range(Co):
                for i0 in range(Ho):
                    for j0 in range(Wo):
                        gval = gy[bb, o, i0, j0]
                        gb[o] = gb[o] + gval
                        for c in range(Ci):
                            for di in range(kh):
                                ii = i0 + di - pad_h
                                if ii < 0 or ii >= H:
                                    continue
                                for dj in range(kw):
                                    jj = j0 + dj - pad_w
                                    if jj < 0 or jj >= Wd:
                                        continue
                                    gw[o, c, di, dj] = gw[o, c, di, dj] + gval * x[bb, c, ii, jj]
                                    gx[bb, c, ii, jj] = gx[bb, c, ii, jj] + gval * w[o, c, di, dj]
    return gxa, gwa, gba
