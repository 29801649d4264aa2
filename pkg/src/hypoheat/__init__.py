"""Small-time on-diagonal heat-kernel expansion for 2D hypoelliptic
Kolmogorov-type operators: exact Gaussian kernels, Duhamel perturbation
convolutions, curvature invariants, and stochastic/finite-difference oracles.
"""

__version__ = "0.1.0"

from ._backend import backend_name

__all__ = ["backend_name", "__version__"]
