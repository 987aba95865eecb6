"""Compatible finite elements on the doubly periodic quadrilateral mesh."""

from .mesh import PeriodicQuadMesh, build
from .fespace import Family, Field, FunctionSpace, evaluate, interpolate, make_complex, make_space

__all__ = [
    "PeriodicQuadMesh", "build", "Family", "Field", "FunctionSpace",
    "evaluate", "interpolate", "make_complex", "make_space",
]
