"""Backend micro-benchmark: pure numpy vs the compiled extension.

Run with ``python3 -m spimmimo.bench``.  Times the two hot kernels on
representative shapes (the analog-update CG inside the beamformer design
loop and the convolution pair inside training) and prints the speedup.
"""

import sys
import time

import numpy as np

from ._kernels import BACKEND, _pykernels

try:
    from ._kernels import _cykernels
except ImportError:
    _cykernels = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cg_case(rng, n):
    X = np.exp(2j * np.pi * rng.random((n, 1))) / np.sqrt(n)
    b = np.array([1.0 + 0.0j])
    target = (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    weight = np.eye(n, dtype=complex)
    return X, b, target, weight, 1.0 / np.sqrt(n)


def _conv_case(rng, batch, cin, cout, h, w):
    x = rng.standard_normal((batch, cin, h, w)).astype(np.float32)
    k = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(cout).astype(np.float32)
    gy = rng.standard_normal((batch, cout, h, w)).astype(np.float32)
    return x, k, bias, gy


def run(repeats: int = 5) -> int:
    if _cykernels is None:
        print("compiled extension not available; nothing to compare "
              "(active backend: %s)" % BACKEND)
        return 1
    rng = np.random.default_rng(0)
    rows = []

    for n in (32, 128):
        X, b, target, weight, mod = _cg_case(rng, n)
        args = (b, target, weight, mod, 200, 1e-9, 1e-4, 0.5)
        rows.append((
            f"cg_unit_modulus n={n}",
            _time(lambda: _pykernels.cg_unit_modulus(X, *args), repeats),
            _time(lambda: _cykernels.cg_unit_modulus(X, *args), repeats),
        ))

    for batch, cin, cout, h, w, label in (
            (128, 4, 8, 4, 32, "desk"), (32, 3, 128, 9, 128, "full")):
        x, k, bias, gy = _conv_case(rng, batch, cin, cout, h, w)
        rows.append((
            f"conv2d fwd {label} ({batch}x{cin}x{h}x{w})",
            _time(lambda: _pykernels.conv2d_forward(x, k, bias, 1, 1),
                  repeats),
            _time(lambda: _cykernels.conv2d_forward(x, k, bias, 1, 1),
                  repeats),
        ))
        rows.append((
            f"conv2d bwd {label} ({batch}x{cin}x{h}x{w})",
            _time(lambda: _pykernels.conv2d_backward(x, k, gy, 1, 1),
                  repeats),
            _time(lambda: _cykernels.conv2d_backward(x, k, gy, 1, 1),
                  repeats),
        ))

    width = max(len(r[0]) for r in rows)
    print(f"active backend: {BACKEND}")
    print(f"{'kernel':<{width}}  {'pure':>10}  {'compiled':>10}  speedup")
    for name, pure, comp in rows:
        print(f"{name:<{width}}  {pure * 1e3:>8.2f}ms  {comp * 1e3:>8.2f}ms"
              f"  {pure / comp:>6.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(run())
