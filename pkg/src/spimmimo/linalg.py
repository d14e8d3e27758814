"""Complex linear-algebra primitives used throughout the package.

Thin contract-enforcing wrappers over numpy.linalg.  All beamforming
arithmetic is complex128; matrices are plain 2-D numpy arrays in row-major
order.
"""

import numpy as np

from .exceptions import InvalidInputError, SingularMatrixError

MAX_CONDITION = 1e12


def svd_thin(A):
    """Thin SVD of a complex matrix.

    Returns ``(U, s, V)`` with ``A = U @ diag(s) @ V.conj().T``, singular
    values sorted descending and orthonormal columns in U and V.

    Raises InvalidInputError for non-finite or all-zero input.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("svd_thin: input has non-finite entries")
    if not np.any(A):
        raise InvalidInputError("svd_thin: input matrix is zero")
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    return U, s, Vh.conj().T


def solve_hermitian(A, b, context=None):
    """Solve ``A x = b`` for square well-conditioned A.

    Used both for Hermitian positive-definite normal equations and for the
    general invertible effective-channel inversion.  ``b`` may be a vector
    or a matrix of right-hand sides.

    Raises SingularMatrixError on singular or ill-conditioned systems;
    ``context`` (e.g. a spatial-pattern index) is attached to the error.
    """
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"solve_hermitian: A must be square, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("solve_hermitian: A has non-finite entries")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularMatrixError(
            f"matrix is singular or ill-conditioned (cond={cond:.3e})",
            pattern_index=context,
        )
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond guard first
        raise SingularMatrixError(str(exc), pattern_index=context) from exc


def frob_norm(A):
    """Frobenius norm sqrt(sum |a_ij|^2); zero iff A is all zeros."""
    return float(np.linalg.norm(np.asarray(A)))
