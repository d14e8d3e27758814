"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled extension (`_cykernels`): a Riemannian conjugate
gradient update for unit-modulus matrices, and stride-1 2-D convolution
forward/backward. Selected at import time by :mod:`spimmimo._kernels`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "pure"

# status codes shared with the compiled kernel
CG_OK = 0
CG_DEGENERATE = 1


def _objective(X, b, target, weight):
    r = target - X @ b
    q = r if weight is None else weight @ r
    return float(np.real(np.vdot(r, q))), r, q


def _riem_project(G, phases):
    # tangent projection on the product of circles: drop the radial part
    return G - np.real(G * np.conj(phases)) * phases


def cg_unit_modulus(X, b, target, weight, modulus, max_iters, grad_tol,
                    armijo_c, shrink):
    """One analog-matrix update: Riemannian CG with Armijo backtracking.

    Minimizes (target - X b)^H W (target - X b) over matrices X whose
    entries all have magnitude ``modulus``, holding b fixed.  Polak-Ribiere+
    conjugate directions with projection transport, reset to steepest
    descent every 10*dim iterations.  The objective never increases.

    Returns ``(X_new, objective, iterations, status)``.
    """
    X = X.copy()
    n, k = X.shape
    dim = n * k
    reset_every = 10 * dim

    obj, r, q = _objective(X, b, target, weight)
    phases = X / np.abs(X)
    G = -np.outer(q, np.conj(b))
    g = _riem_project(G, phases)
    gg = float(np.sum(np.real(np.conj(g) * g)))
    d = -g

    iters = 0
    for it in range(max_iters):
        if np.sqrt(gg) <= grad_tol:
            break
        slope = float(np.sum(np.real(np.conj(g) * d)))
        if slope >= 0.0:
            d = -g
            slope = -gg
        # backtracking line search with degenerate-retraction halving
        alpha = 1.0
        accepted = False
        degenerate = 0
        for _ in range(60):
            Z = X + alpha * d
            mags = np.abs(Z)
            if np.any(mags == 0.0):
                degenerate += 1
                if degenerate > 30:
                    return X, obj, iters, CG_DEGENERATE
                alpha *= 0.5
                continue
            Y = modulus * (Z / mags)
            new_obj, r, q = _objective(Y, b, target, weight)
            if new_obj <= obj + armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            break
        iters = it + 1
        X = Y
        obj = new_obj
        phases = X / np.abs(X)
        G = -np.outer(q, np.conj(b))
        g_new = _riem_project(G, phases)
        g_old_t = _riem_project(g, phases)
        gg_new = float(np.sum(np.real(np.conj(g_new) * g_new)))
        beta = float(np.sum(np.real(np.conj(g_new) * (g_new - g_old_t)))) / gg
        beta = max(0.0, beta)
        if (it + 1) % reset_every == 0:
            beta = 0.0
        d = -g_new + beta * _riem_project(d, phases)
        g = g_new
        gg = gg_new
    return X, obj, iters, CG_OK


def conv2d_forward(x, w, bias, pad_h, pad_w):
    """Stride-1 2-D convolution (cross-correlation) with zero padding.

    x: (B, Cin, H, W); w: (Cout, Cin, kh, kw); bias: (Cout,).
    Returns (B, Cout, H + 2*pad_h - kh + 1, W + 2*pad_w - kw + 1).
    """
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    y = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    y += bias[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(x, w, gy, pad_h, pad_w):
    """Gradients of conv2d_forward wrt input, weights and bias."""
    B, _, H, W = x.shape
    kh, kw = w.shape[2], w.shape[3]
    Ho, Wo = gy.shape[2], gy.shape[3]

    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    win = sliding_window_view(xp, (Ho, Wo), axis=(2, 3))
    gw = np.einsum("bohw,bcijhw->ocij", gy, win, optimize=True)
    gbias = gy.sum(axis=(0, 2, 3))

    gyp = np.pad(gy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    gwin = sliding_window_view(gyp, (kh, kw), axis=(2, 3))
    w_rot = w[:, :, ::-1, ::-1]
    gx_full = np.einsum("bohwij,ocij->bchw", gwin, w_rot, optimize=True)
    gx = gx_full[:, :, pad_h:pad_h + H, pad_w:pad_w + W]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw), gbias
