"""2D Galerkin boundary elements for the Laplace layer operators.

Dense Galerkin assembly of the single-layer, double-layer, adjoint
double-layer, and hypersingular operators on piecewise-polynomial spaces
over curves and open arcs, together with a verification laboratory that
measures the sharpest constants in mesh- and degree-weighted inverse
estimates and residual-estimator efficiency bounds as generalized
eigenvalue problems.
"""

__version__ = "0.1.0"

from .geometry import Curve, circle, polygon, slit, square
from .mesh import BoundaryMesh, Element, ShapeReport, build_mesh, refine
from .settings import DEFAULT, Settings
from .spaces import DiscreteSpace, WeightFunction, canonical_weight, check_sigma_admissible, interpolate, make_space

__all__ = [
    "__version__",
    "Curve",
    "circle",
    "polygon",
    "slit",
    "square",
    "BoundaryMesh",
    "Element",
    "ShapeReport",
    "build_mesh",
    "refine",
    "Settings",
    "DEFAULT",
    "DiscreteSpace",
    "WeightFunction",
    "canonical_weight",
    "check_sigma_admissible",
    "interpolate",
    "make_space",
]
