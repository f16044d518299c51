"""Two-level additive Schwarz methods for the finite-element p-Laplacian."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
