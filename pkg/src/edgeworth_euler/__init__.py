"""Second-order error analysis of the Euler scheme for scalar SDEs.

Simulation with nested Brownian grids, the error process and its expansion
terms, limit-law coefficients, Malliavin derivatives along the path, the
random symbol and the resulting corrected densities, and Monte Carlo
campaigns that check them.
"""
from .model import DiffusionModel, ModelError, builtin_model, check_derivatives
from .pathsim import BrownianPath, CoupledPaths, GridError, TimeGrid, couple, sample_brownian, simulate
from .errorproc import ErrorFunctionals, functionals
from .limitlaw import LimitLawProfile, profile
from .malliavin import DegenerateModelError, SymbolCoefficients, h_coefficients
from .edgeworth import MarginalVDensity, PairDensity, StudentizedDensity, studentized_coeffs
from .experiments import Campaign, rate_regression

__version__ = "0.1.0"

__all__ = [
    "DiffusionModel", "ModelError", "builtin_model", "check_derivatives",
    "BrownianPath", "CoupledPaths", "GridError", "TimeGrid", "couple", "sample_brownian", "simulate",
    "ErrorFunctionals", "functionals", "LimitLawProfile", "profile",
    "DegenerateModelError", "SymbolCoefficients", "h_coefficients",
    "MarginalVDensity", "PairDensity", "StudentizedDensity", "studentized_coeffs",
    "Campaign", "rate_regression",
]
