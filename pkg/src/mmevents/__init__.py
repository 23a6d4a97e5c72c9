"""Event detection in hashtag data with a multimodal latent factor model.

Hashtags are described by a bag of words and a set of geotags on the unit
sphere. Latent events mix into both modalities through nonnegative
coefficients and are fitted by generalised EM.
"""
from .em import FitConfig, FitTrace, NumericalError, fit
from .model import (Dataset, GroundTruth, HashtagRecord, ModelState, SyntheticSpec,
                    generate_synthetic, surrogate_objective)

__all__ = ["Dataset", "FitConfig", "FitTrace", "GroundTruth", "HashtagRecord",
           "ModelState", "NumericalError", "SyntheticSpec", "fit", "generate_synthetic",
           "surrogate_objective"]
__version__ = "0.1.0"
