"""Gaussian-process modeling: exact, Laplace, EP, sparse and state-space inference.

The most used entry points are re-exported here; the submodules hold the
full functional API.
"""

from .errors import ConvergenceError, GPError, InputError, NumericalError, ValidationError
from .estimator import GaussianProcess
from .kernels import Kernel, kern_cross_matrix, kern_eval, kern_train_matrix
from .likelihoods import Likelihood
from .model import Dataset, GPModel, MeanBasis, SparseSpec
from .params import ParamVector, energy_in_w, pack, unpack
from .priors import Prior

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "Dataset", "GPError", "GPModel", "GaussianProcess", "InputError",
    "Kernel", "Likelihood", "MeanBasis", "NumericalError", "ParamVector", "Prior",
    "SparseSpec", "ValidationError", "energy_in_w", "kern_cross_matrix", "kern_eval",
    "kern_train_matrix", "pack", "unpack",
]
