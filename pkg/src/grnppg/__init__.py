"""PPG motion-artifact detection with gated-residual Transformer classifiers.

The package is built on a small reverse-mode autodiff core (``grnppg.autodiff``)
and covers signal preprocessing, synthetic data, ADASYN rebalancing, models,
training and evaluation, plus a command-line interface (``grnppg.cli``).
"""

from .errors import ConfigError, DataError, GrnPpgError, IntegrityError, NumericError, ShapeError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "GrnPpgError", "IntegrityError", "NumericError", "ShapeError", "__version__"]
