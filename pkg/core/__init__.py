APP_NAME = "ridgepath"
__version__ = "0.1.0"

# Eksport najważniejszych klas/funkcji z core dla wygodnych importów
from .errors import ConfigError, InputError, NumericalError, RidgePathError
from .spectral import Dataset, ModelTruth, PenalisedSpectrum, decompose
from .estimators import FilterSpec, cg_solve, cg_interpolated, gradient_flow, ridge
from .risk import TargetSpec, decompose_cg, decompose_linear
