"""Small factory functions for the graphs used throughout tests and examples."""
from __future__ import annotations

from fractions import Fraction

from .geometry import Graph


def interval(length=1, edge="e") -> Graph:
    return Graph(["a", "b"], [(edge, "a", "b", Fraction(length))])


def circle(length=1, edge="c") -> Graph:
    return Graph(["o"], [(edge, "o", "o", Fraction(length))])


def star(arms=3, arm_length=1) -> Graph:
    vs = ["c"] + [f"v{k}" for k in range(arms)]
    es = [(f"a{k}", "c", f"v{k}", Fraction(arm_length)) for k in range(arms)]
    return Graph(vs, es)


def figure_eight(length=1) -> Graph:
    return Graph(
        ["o"],
        [("p", "o", "o", Fraction(length)), ("q", "o", "o", Fraction(length))],
    )


def path(edges=2, edge_length=1) -> Graph:
    vs = [f"v{k}" for k in range(edges + 1)]
    es = [(f"e{k}", f"v{k}", f"v{k+1}", Fraction(edge_length)) for k in range(edges)]
    return Graph(vs, es)


def theta(length=1) -> Graph:
    return Graph(
        ["a", "b"],
        [
            ("e0", "a", "b", Fraction(length)),
            ("e1", "a", "b", Fraction(length)),
            ("e2", "a", "b", Fraction(length)),
        ],
    )
