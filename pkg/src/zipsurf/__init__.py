"""Translation surfaces from zippered rectangles, their saddle connections,
the diagonal flow, and Khinchin-type experiments."""

from .core import PhiSpec, Vec2, parse_phi
from .iet import Permutation, new_iet
from .suspension import build_surface, canonical_suspension
from .connections import enumerate_connections
from .diophantine import cf_expand, twisted_step

__all__ = ["PhiSpec", "Vec2", "parse_phi", "Permutation", "new_iet", "build_surface",
           "canonical_suspension", "enumerate_connections", "cf_expand", "twisted_step"]
__version__ = "0.1.0"
