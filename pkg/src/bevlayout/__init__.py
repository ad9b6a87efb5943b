"""Amodal bird's-eye-view road and vehicle layout estimation from a single image."""
from .grid import Box2D, GridSpec, LayoutGrid

__version__ = "0.1.0"

__all__ = ["Box2D", "GridSpec", "LayoutGrid", "__version__"]
