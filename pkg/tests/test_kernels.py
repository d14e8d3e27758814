"""Backend parity and oracle checks for the hot kernels."""

import numpy as np
import pytest

from spimmimo import _kernels
from spimmimo._kernels import _pykernels

try:
    from spimmimo._kernels import _cykernels
except ImportError:
    _cykernels = None

needs_compiled = pytest.mark.skipif(
    _cykernels is None, reason="compiled extension not built")


def _cg_instance(seed, n=8, k=2, weighted=False):
    rng = np.random.default_rng(seed)
    modulus = 1.0 / np.sqrt(n)
    X = modulus * np.exp(1j * rng.uniform(0, 2 * np.pi, (n, k)))
    b = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    target = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if weighted:
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        weight = A @ A.conj().T + 0.1 * np.eye(n)
    else:
        weight = None
    return X, b, target, weight, modulus


def _conv_instance(seed, dtype):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 5, 4)).astype(dtype)
    w = rng.standard_normal((4, 3, 3, 3)).astype(dtype)
    bias = rng.standard_normal(4).astype(dtype)
    return x, w, bias


def conv2d_reference(x, w, bias, pad_h, pad_w):
    """Quadruple-loop convolution used as an independent oracle."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho = H + 2 * pad_h - kh + 1
    Wo = W + 2 * pad_w - kw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    y = np.zeros((B, Cout, Ho, Wo))
    for bi in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = bias[o]
                    for c in range(Cin):
                        for a in range(kh):
                            for d in range(kw):
                                acc += xp[bi, c, i + a, j + d] * w[o, c, a, d]
                    y[bi, o, i, j] = acc
    return y


class TestPureConvOracle:
    @pytest.mark.parametrize("pad", [(0, 0), (1, 1), (2, 1)])
    def test_forward_matches_loops(self, pad):
        x, w, bias = _conv_instance(0, np.float64)
        got = _pykernels.conv2d_forward(x, w, bias, *pad)
        want = conv2d_reference(x, w, bias, *pad)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        x, w, bias = _conv_instance(1, np.float64)
        gy = np.random.default_rng(2).standard_normal((2, 4, 5, 4))
        gx, gw, gb = _pykernels.conv2d_backward(x, w, gy, 1, 1)
        eps = 1e-6

        def loss(xv, wv, bv):
            return float(np.sum(_pykernels.conv2d_forward(xv, wv, bv, 1, 1) * gy))

        for arr, grad in ((x, gx), (w, gw), (bias, gb)):
            flat = arr.reshape(-1)
            idx = np.random.default_rng(3).choice(
                flat.size, size=min(12, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = loss(x, w, bias)
                flat[i] = orig - eps
                dn = loss(x, w, bias)
                flat[i] = orig
                fd = (up - dn) / (2 * eps)
                assert abs(fd - grad.reshape(-1)[i]) < 1e-4 * max(1.0, abs(fd))


class TestPureCG:
    def test_monotone_and_feasible(self):
        X, b, target, weight, modulus = _cg_instance(0, weighted=True)
        obj0 = _pykernels._objective(X, b, target, weight)[0]
        Xn, obj, iters, status = _pykernels.cg_unit_modulus(
            X, b, target, weight, modulus, 40, 1e-9, 1e-4, 0.5)
        assert status == _kernels.CG_OK
        assert obj <= obj0 + 1e-12
        np.testing.assert_allclose(np.abs(Xn), modulus, atol=1e-12)

    def test_no_step_when_converged(self):
        # target exactly representable: gradient is zero at the solution
        rng = np.random.default_rng(4)
        n, k = 6, 2
        modulus = 1.0 / np.sqrt(n)
        X = modulus * np.exp(1j * rng.uniform(0, 2 * np.pi, (n, k)))
        b = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        target = X @ b
        Xn, obj, iters, status = _pykernels.cg_unit_modulus(
            X, b, target, None, modulus, 40, 1e-9, 1e-4, 0.5)
        assert iters == 0
        assert obj < 1e-20


@needs_compiled
class TestBackendParity:
    def test_backend_reports_compiled(self):
        assert _cykernels.BACKEND == "compiled"

    @pytest.mark.parametrize("weighted", [False, True])
    @pytest.mark.parametrize("seed", range(6))
    def test_cg_matches_pure(self, seed, weighted):
        X, b, target, weight, modulus = _cg_instance(seed, weighted=weighted)
        args = (40, 1e-9, 1e-4, 0.5)
        Xp, op, ip, sp = _pykernels.cg_unit_modulus(
            X, b, target, weight, modulus, *args)
        Xc, oc, ic, sc = _cykernels.cg_unit_modulus(
            X, b, target, weight, modulus, *args)
        # accumulation order differs between backends; agreement is to
        # rounding noise, not bitwise
        assert (ip, sp) == (ic, sc)
        np.testing.assert_allclose(Xc, Xp, rtol=0, atol=1e-8)
        assert abs(oc - op) <= 1e-8 * max(1.0, abs(op))

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 2e-5), (np.float64, 1e-12)])
    def test_conv_forward_matches_pure(self, dtype, tol):
        x, w, bias = _conv_instance(5, dtype)
        yp = _pykernels.conv2d_forward(x, w, bias, 1, 1)
        yc = _cykernels.conv2d_forward(x, w, bias, 1, 1)
        assert yc.dtype == dtype
        np.testing.assert_allclose(yc, yp, atol=tol)

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 2e-5), (np.float64, 1e-12)])
    def test_conv_backward_matches_pure(self, dtype, tol):
        x, w, bias = _conv_instance(6, dtype)
        rng = np.random.default_rng(7)
        y = _pykernels.conv2d_forward(x, w, bias, 1, 1)
        gy = rng.standard_normal(y.shape).astype(dtype)
        outs_p = _pykernels.conv2d_backward(x, w, gy, 1, 1)
        outs_c = _cykernels.conv2d_backward(x, w, gy, 1, 1)
        for gc, gp in zip(outs_c, outs_p):
            assert gc.dtype == dtype
            np.testing.assert_allclose(gc, gp, atol=tol)


class TestSelection:
    def test_active_backend_exposed(self):
        assert _kernels.BACKEND in ("pure", "compiled")
        assert callable(_kernels.cg_unit_modulus)
