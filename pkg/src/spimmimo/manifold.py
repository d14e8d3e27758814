"""Constant-modulus least-squares fits via alternating minimization.

Analog beamformers live on a product of scaled circles: every entry of an
analog matrix has fixed magnitude 1/sqrt(rows).  Given a target vector t,
the fit

    minimize_{X, b}  (t - X b)^H W (t - X b)

alternates an exact baseband solve for b (normal equations) with a
Riemannian conjugate-gradient update of X on the manifold (the hot kernel,
compiled when available).  W = I for the precoder fit; the combiner fit is
weighted by the received-signal covariance so that both sub-steps minimize
the same function.

Solutions are phase-canonicalized: each baseband entry is rotated to be
real nonnegative with the phase absorbed into the matching analog column,
so results are deterministic functions of the target up to the seeded
initialization.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, linalg
from .exceptions import DegenerateRetractionError, InvalidInputError, SingularMatrixError


@dataclass(frozen=True)
class AltMinConfig:
    """Alternating-minimization controls."""

    max_outer_iters: int = 50
    max_cg_iters: int = 40
    grad_tol: float = 1e-6
    obj_rel_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.max_outer_iters, self.max_cg_iters) < 1:
            raise InvalidInputError("iteration limits must be >= 1")
        if min(self.grad_tol, self.obj_rel_tol, self.armijo_c) <= 0:
            raise InvalidInputError("tolerances must be > 0")
        if not 0 < self.backtrack < 1:
            raise InvalidInputError("backtrack factor must be in (0, 1)")


@dataclass
class PrecoderSolution:
    """Analog matrix (n_tx x M), baseband vector (M,) and fit residual.

    ``history`` records the objective after every outer iteration;
    ``residual`` is the pre-normalization distance to the target.  The
    baseband vector is rescaled on return so ||F_rf @ f_bb||^2 = M.
    """

    F_rf: np.ndarray
    f_bb: np.ndarray
    residual: float
    history: list[float] = field(default_factory=list)


@dataclass
class CombinerSolution:
    """Analog combiner bank (n_rx x M), baseband vector and weighted residual."""

    W_rf: np.ndarray
    w_bb: np.ndarray
    residual: float
    history: list[float] = field(default_factory=list)


def _phase_fix(v: np.ndarray) -> np.ndarray:
    """Rotate v so its largest-magnitude entry is real positive."""
    i = int(np.argmax(np.abs(v)))
    ph = v[i] / abs(v[i]) if v[i] != 0 else 1.0
    return v * np.conj(ph)


def optimal_precoders(H: np.ndarray, k: int) -> np.ndarray:
    """Top-k right singular vectors of H, each phase-fixed, as columns."""
    U, s, V = linalg.svd_thin(H)
    if k > V.shape[1]:
        raise InvalidInputError(
            f"requested {k} precoders but channel has only {V.shape[1]} columns"
        )
    out = np.empty((V.shape[0], k), dtype=np.complex128)
    for m in range(k):
        out[:, m] = _phase_fix(V[:, m])
    return out


def optimal_precoder(H: np.ndarray) -> np.ndarray:
    """Unit-norm dominant right singular vector of the channel."""
    return optimal_precoders(H, 1)[:, 0]


def mmse_combiner(H: np.ndarray, f_opt: np.ndarray, sigma_n_sq: float) -> np.ndarray:
    """Unconstrained MMSE receive vector for the transmit beam f_opt.

    w = H f_opt / (||H f_opt||^2 + sigma_n_sq).
    """
    Hf = H @ f_opt
    return Hf / (float(np.real(np.vdot(Hf, Hf))) + sigma_n_sq)


def riemannian_grad(x: np.ndarray, euclid_grad: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at x.

    Works elementwise for vectors or matrices of constant-magnitude x.
    """
    phases = x / np.abs(x)
    return euclid_grad - np.real(euclid_grad * np.conj(phases)) * phases


def retract(x: np.ndarray, step: np.ndarray, modulus: float) -> np.ndarray:
    """Map x + step back to the circle of radius ``modulus`` entrywise."""
    z = x + step
    mags = np.abs(z)
    if np.any(mags == 0.0):
        raise DegenerateRetractionError(
            "retraction hit an exactly-zero entry; halve the step and retry"
        )
    return modulus * (z / mags)


def _fit_unit_modulus(target, n_cols, modulus, weight, config, rng, init_analog=None):
    """Core alternating minimization; returns (X, b, residual, history).

    ``residual`` is sqrt of the final (weighted) objective.
    """
    target = np.asarray(target, dtype=np.complex128)
    n = target.shape[0]
    if init_analog is not None:
        X = np.array(init_analog, dtype=np.complex128, copy=True)
        if X.shape != (n, n_cols):
            raise InvalidInputError(
                f"initial analog matrix must be {(n, n_cols)}, got {X.shape}")
    else:
        X = modulus * np.exp(2j * np.pi * rng.random((n, n_cols)))
    history: list[float] = []
    obj = np.inf
    b = np.zeros(n_cols, dtype=np.complex128)
    for _ in range(config.max_outer_iters):
        Wx = X if weight is None else weight @ X
        gram = X.conj().T @ Wx
        rhs = Wx.conj().T @ target
        b = np.atleast_1d(linalg.solve_hermitian(gram, rhs))
        X, obj, _, status = _kernels.cg_unit_modulus(
            X, b, target, weight, modulus,
            config.max_cg_iters, config.grad_tol,
            config.armijo_c, config.backtrack,
        )
        if status == _kernels.CG_DEGENERATE:
            raise DegenerateRetractionError(
                "analog update stalled on a zero retraction after 30 halvings"
            )
        history.append(obj)
        if len(history) >= 2:
            prev = history[-2]
            if prev - obj <= config.obj_rel_tol * max(prev, 1e-30):
                break
    # canonical phases: baseband entries real nonnegative
    for m in range(n_cols):
        if b[m] != 0:
            ph = b[m] / abs(b[m])
            X[:, m] *= ph
            b[m] = abs(b[m])
    return X, b, float(np.sqrt(max(obj, 0.0))), history


def alt_min_precoder(f_opt, M: int, config: AltMinConfig,
                     rng: np.random.Generator | None = None,
                     init_analog=None) -> PrecoderSolution:
    """Fit M constant-modulus columns and a baseband vector to f_opt.

    Minimizes ||f_opt - F_rf f_bb|| with |[F_rf]_{ij}| = 1/sqrt(n_tx); on
    return f_bb is rescaled so the transmit power ||F_rf f_bb||^2 equals M.
    ``init_analog`` overrides the seeded random-phase initialization.
    """
    f_opt = np.asarray(f_opt, dtype=np.complex128)
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    if not np.any(f_opt):
        raise InvalidInputError("target precoder is zero")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = f_opt.shape[0]
    X, b, residual, history = _fit_unit_modulus(
        f_opt, M, 1.0 / np.sqrt(n), None, config, rng, init_analog)
    power = linalg.frob_norm(X @ b)
    if power == 0.0:
        raise InvalidInputError("degenerate fit: zero baseband vector")
    b = b * (np.sqrt(M) / power)
    return PrecoderSolution(F_rf=X, f_bb=b, residual=residual, history=history)


def covariance_lambda_y(H, F_rf, f_bb, sigma_n_sq: float) -> np.ndarray:
    """Received-signal covariance H F f f^H F^H H^H + sigma^2 I (Hermitian PSD)."""
    v = H @ (np.asarray(F_rf) @ np.asarray(f_bb))
    lam = np.outer(v, v.conj())
    lam = 0.5 * (lam + lam.conj().T)
    lam += sigma_n_sq * np.eye(H.shape[0])
    return lam


def alt_min_combiner(w_mmse, Lambda_y, M: int, config: AltMinConfig,
                     rng: np.random.Generator | None = None,
                     init_analog=None) -> CombinerSolution:
    """Weighted fit of M constant-modulus combiner columns to w_mmse.

    Minimizes (w - W_rf w_bb)^H Lambda_y (w - W_rf w_bb) with entry
    magnitude 1/sqrt(n_rx); with Lambda_y = I this reduces to the plain
    least-squares fit.

    The weighted landscape is a narrow valley when the covariance is
    dominated by the signal term (condition ~ signal power / noise_var),
    where descent from random phases stalls far from the optimum.  The
    weighted alternation is therefore warm-started from the unweighted
    fit of the same target; ``residual`` and ``history`` report the
    weighted objective of that final alternation.
    """
    w_mmse = np.asarray(w_mmse, dtype=np.complex128)
    Lambda_y = np.asarray(Lambda_y, dtype=np.complex128)
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    eigs = np.linalg.eigvalsh(Lambda_y)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] >= linalg.MAX_CONDITION:
        raise SingularMatrixError(
            f"covariance weight is not positive definite (eigs in [{eigs[0]:.3e}, {eigs[-1]:.3e}])"
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = w_mmse.shape[0]
    warm, _, _, _ = _fit_unit_modulus(
        w_mmse, M, 1.0 / np.sqrt(n), None, config, rng, init_analog)
    X, b, residual, history = _fit_unit_modulus(
        w_mmse, M, 1.0 / np.sqrt(n), Lambda_y, config, rng, init_analog=warm)
    return CombinerSolution(W_rf=X, w_bb=b, residual=residual, history=history)
