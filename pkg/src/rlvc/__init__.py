"""Feature-level generative zero-shot learning.

Synthesizes visual features for unseen classes with a diffusion-conditioned
WGAN, sharpened by an outcome-reward policy-gradient update and class-wise
visual-prototype distillation, then trains linear heads for CZSL/GZSL
evaluation.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, NumericFailure, UsageError

__all__ = ["ConfigurationError", "NumericFailure", "UsageError", "__version__"]
