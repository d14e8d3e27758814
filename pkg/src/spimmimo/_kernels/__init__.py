"""Kernel backend selection.

The compiled extension accelerates the analog-update conjugate gradient
(the inner loop of beamformer design) and is preferred for it when
available; ``SPIMMIMO_PURE=1`` forces the numpy fallback.  The
convolution pair is always served by the vectorized numpy implementation:
the scalar compiled loops measure slower at every shape the package uses
(see ``python3 -m spimmimo.bench``), so the extension's versions exist
for comparison only.  Both backends expose identical functions and the
full test suite runs against either one.
"""

import os

from . import _pykernels

if os.environ.get("SPIMMIMO_PURE", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _cykernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
CG_OK = _pykernels.CG_OK
CG_DEGENERATE = _pykernels.CG_DEGENERATE

cg_unit_modulus = _impl.cg_unit_modulus
conv2d_forward = _pykernels.conv2d_forward
conv2d_backward = _pykernels.conv2d_backward

__all__ = [
    "BACKEND",
    "CG_OK",
    "CG_DEGENERATE",
    "cg_unit_modulus",
    "conv2d_forward",
    "conv2d_backward",
]
