"""Multi-user SPIM-MIMO hybrid beamforming simulator.

Designs per-spatial-pattern hybrid beamformers by alternating minimization
with Riemannian conjugate gradient on the unit-modulus manifold, evaluates
spectral efficiency against strongest-path and analog-only baselines, and
simulates federated training of a convolutional beamformer predictor with
exact transmission-overhead accounting.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
