"""Soft pseudo-labeling for out-of-domain intent detection over feature vectors."""

__version__ = "0.1.0"

from softood.estimator import SoftOodDetector

__all__ = ["SoftOodDetector", "__version__"]
