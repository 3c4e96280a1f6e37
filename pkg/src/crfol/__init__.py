"""Numerical certification and construction of CR foliations of fibered manifolds over S."""

from .errors import CRFolError
from .expr import Point, parse
from .geometry import Problem

__all__ = ["CRFolError", "Point", "Problem", "parse"]
__version__ = "0.1.0"
