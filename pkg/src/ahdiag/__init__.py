"""Exact-arithmetic toolkit for graph-based building blocks: PL geometry,
eigenvalue-form homomorphisms, certified surjectivity perturbation, and
finite truncations of the associated limit groupoids."""

from .exact import CRat, QSqrt, format_rational, parse_rational
from .geometry import (
    ClosedSubset,
    CoveringTree,
    DomainError,
    Edge,
    Gap,
    GeometryError,
    Graph,
    GraphPoint,
    PLMap,
    Segment,
    build_covering_tree,
    complement_gaps,
    point_distance,
)

__all__ = [
    "CRat",
    "QSqrt",
    "format_rational",
    "parse_rational",
    "ClosedSubset",
    "CoveringTree",
    "DomainError",
    "Edge",
    "Gap",
    "GeometryError",
    "Graph",
    "GraphPoint",
    "PLMap",
    "Segment",
    "build_covering_tree",
    "complement_gaps",
    "point_distance",
]
