"""satlab: does pretraining on a mixture give features as good as direct training?"""
from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]

__version__ = "0.1.0"
