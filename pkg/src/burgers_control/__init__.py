"""Numerical laboratory for stochastic optimal control of the 1-D Burgers
equation on (0,1) with Dirichlet boundaries, driven by trace-class Gaussian
noise and finite-activity compound-Poisson jumps.

Subpackages follow the pipeline: spectral basis and nonlinearities
(`spectral`), noise models (`noise`), state/variation time stepping
(`integrator`), Monte Carlo semigroup derivatives (`semigroup`), value
function solvers and feedback synthesis (`hjb`), and the control-theoretic
verification experiments (`control`).
"""

__version__ = "0.1.0"

from .spectral import SpectralField, unit_mode, zero_field  # noqa: F401
from .noise import CovarianceOperator, LevyModel, NoiseModel  # noqa: F401
from .integrator import IntegratorConfig, Trajectory  # noqa: F401
