"""ShapleyVIC variable importance for multilayer perceptrons.

Samples nearly optimal MLPs around a trained optimum, attributes their
predictions with Shapley values, pools the per-model importances with a
random-effects meta-analysis and ranks variables across the ensemble.
"""

from shapleyvic.errors import NumericalError, ShapleyVICError, ValidationError

__version__ = "0.1.0"

__all__ = ["NumericalError", "ShapleyVICError", "ValidationError", "__version__"]
