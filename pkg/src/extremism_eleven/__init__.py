"""Score posts against extremism questionnaire items and analyse the Extremist Eleven factors."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
