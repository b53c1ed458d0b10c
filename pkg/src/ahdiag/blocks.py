"""Homogeneous building blocks: direct sums of matrix-valued PL functions
over finite graphs, with certified (squared) norm and Lipschitz bounds.

Operator norms are irrational in general; this module never claims exact
norms, only certified rational lower/upper bounds with squared-norm
bookkeeping, so every comparison stays exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .exact import CRat, QSqrt
from .geometry import DomainError, Graph, GraphPoint, ZERO

Matrix = tuple  # tuple of row tuples of CRat


class BlockError(ValueError):
    """Invalid block/element data."""


# -- small exact matrix helpers ---------------------------------------------


def mat(rows) -> Matrix:
    out = []
    for row in rows:
        r = []
        for x in row:
            if isinstance(x, CRat):
                r.append(x)
            elif isinstance(x, complex):
                raise BlockError("floats/complex literals are not exact; use CRat")
            else:
                r.append(CRat.of(x))
        out.append(tuple(r))
    m = tuple(out)
    if any(len(r) != len(m) for r in m):
        raise BlockError("matrix must be square")
    return m


def mat_zero(n: int) -> Matrix:
    z = CRat.zero()
    return tuple(tuple(z for _ in range(n)) for _ in range(n))


def mat_identity(n: int) -> Matrix:
    z, o = CRat.zero(), CRat.one()
    return tuple(tuple(o if i == j else z for j in range(n)) for i in range(n))


def mat_add(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def mat_sub(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x - y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def mat_scale(a: Matrix, c) -> Matrix:
    c = c if isinstance(c, CRat) else CRat.of(c)
    return tuple(tuple(x * c for x in row) for row in a)


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    n = len(a)
    bt = tuple(zip(*b))
    return tuple(
        tuple(sum((x * y for x, y in zip(row, col)), CRat.zero()) for col in bt)
        for row in a
    )


def mat_adjoint(a: Matrix) -> Matrix:
    return tuple(tuple(a[j][i].conj() for j in range(len(a))) for i in range(len(a)))


def mat_pinch(a: Matrix) -> Matrix:
    """Zero out off-diagonal entries (the canonical diagonal expectation)."""
    z = CRat.zero()
    return tuple(
        tuple(a[i][j] if i == j else z for j in range(len(a))) for i in range(len(a))
    )


def mat_block_diag(mats: Sequence[Matrix]) -> Matrix:
    n = sum(len(m) for m in mats)
    z = CRat.zero()
    rows = []
    off = 0
    for m in mats:
        k = len(m)
        for r in m:
            rows.append(tuple([z] * off + list(r) + [z] * (n - off - k)))
        off += k
    return tuple(rows)


def frobenius_sq(a: Matrix) -> Fraction:
    return sum((x.abs2() for row in a for x in row), Fraction(0))


def rowcol_max_sq(a: Matrix) -> Fraction:
    """Max squared Euclidean norm over rows and columns: a lower bound for
    the squared operator norm."""
    best = Fraction(0)
    n = len(a)
    for i in range(n):
        r = sum((a[i][j].abs2() for j in range(n)), Fraction(0))
        c = sum((a[j][i].abs2() for j in range(n)), Fraction(0))
        best = max(best, r, c)
    return best


def mat_interp(m0: Matrix, m1: Matrix, num: Fraction, den: Fraction) -> Matrix:
    """m0 + (m1 - m0) * num/den, exactly."""
    w = Fraction(num, 1) / den
    return tuple(
        tuple(x + (y - x).scale(w) for x, y in zip(r0, r1)) for r0, r1 in zip(m0, m1)
    )


def mat_eq(a: Matrix, b: Matrix) -> bool:
    return a == b


# -- blocks and elements -----------------------------------------------------


@dataclass(frozen=True)
class BlockSummand:
    base: Graph
    matrix_size: int


@dataclass(frozen=True)
class Block:
    summands: tuple

    def __post_init__(self):
        for s in self.summands:
            if s.matrix_size < 1:
                raise BlockError("matrix size must be >= 1")
            if not s.base.is_connected():
                raise BlockError("building-block base spaces must be connected")

    @staticmethod
    def of(*pairs) -> "Block":
        return Block(tuple(BlockSummand(g, n) for g, n in pairs))

    def total_matrix_size(self) -> int:
        return sum(s.matrix_size for s in self.summands)


class MatrixPL:
    """Matrix-valued PL function on a graph: per edge, breakpoints with an
    exact matrix at each, affine interpolation between."""

    __slots__ = ("graph", "size", "data", "_vertex_values")

    def __init__(self, graph: Graph, size: int, data: Mapping):
        self.graph = graph
        self.size = size
        norm = {}
        for e in graph.edges:
            if e.id not in data:
                raise BlockError(f"missing data on edge {e.id!r}")
            breaks, mats = data[e.id]
            breaks = tuple(Fraction(t) for t in breaks)
            mats = tuple(mats)
            if len(breaks) != len(mats) or len(breaks) < 2:
                raise BlockError(f"bad breakpoint data on edge {e.id!r}")
            if breaks[0] != 0 or breaks[-1] != e.length:
                raise BlockError(f"breakpoints must span edge {e.id!r}")
            if any(b >= c for b, c in zip(breaks, breaks[1:])) :
                raise BlockError(f"breakpoints not increasing on edge {e.id!r}")
            for m in mats:
                if len(m) != size or any(len(r) != size for r in m):
                    raise BlockError("matrix size mismatch")
            norm[e.id] = (breaks, mats)
        # continuity at shared vertices
        vertex_values = {}
        for v in graph.vertices:
            val = None
            for e, endc in graph.germs(v):
                breaks, mats = norm[e.id]
                m = mats[0] if endc == 0 else mats[-1]
                if val is None:
                    val = m
                elif val != m:
                    raise BlockError(f"discontinuity at vertex {v!r}")
            vertex_values[v] = val
        self.data = norm
        self._vertex_values = vertex_values

    def eval(self, p: GraphPoint) -> Matrix:
        if p.vertex is not None:
            try:
                return self._vertex_values[p.vertex]
            except KeyError:
                raise DomainError(f"point {p} not on graph") from None
        breaks, mats = self.data[p.edge]
        for k in range(len(breaks) - 1):
            if breaks[k] <= p.coord <= breaks[k + 1]:
                return mat_interp(
                    mats[k], mats[k + 1], p.coord - breaks[k], breaks[k + 1] - breaks[k]
                )
        raise DomainError(f"coordinate {p.coord} outside edge {p.edge!r}")

    def _eval_on_edge(self, eid: str, t: Fraction) -> Matrix:
        breaks, mats = self.data[eid]
        for k in range(len(breaks) - 1):
            if breaks[k] <= t <= breaks[k + 1]:
                return mat_interp(mats[k], mats[k + 1], t - breaks[k], breaks[k + 1] - breaks[k])
        raise DomainError(f"coordinate {t} outside edge {eid!r}")

    def zip_with(self, other: "MatrixPL", fn) -> "MatrixPL":
        if self.graph != other.graph or self.size != other.size:
            raise BlockError("shape mismatch")
        data = {}
        for e in self.graph.edges:
            ts = sorted(set(self.data[e.id][0]) | set(other.data[e.id][0]))
            ms = tuple(
                fn(self._eval_on_edge(e.id, t), other._eval_on_edge(e.id, t)) for t in ts
            )
            data[e.id] = (tuple(ts), ms)
        return MatrixPL(self.graph, self.size, data)

    def map_values(self, fn) -> "MatrixPL":
        data = {
            eid: (breaks, tuple(fn(m) for m in mats))
            for eid, (breaks, mats) in self.data.items()
        }
        return MatrixPL(self.graph, self.size, data)

    def __eq__(self, other):
        if not isinstance(other, MatrixPL):
            return NotImplemented
        if self.graph != other.graph or self.size != other.size:
            return False
        for e in self.graph.edges:
            ts = sorted(set(self.data[e.id][0]) | set(other.data[e.id][0]))
            for t in ts:
                if self._eval_on_edge(e.id, t) != other._eval_on_edge(e.id, t):
                    return False
        return True

    def __hash__(self):
        return hash((self.graph, self.size))

    @staticmethod
    def constant(graph: Graph, m: Matrix) -> "MatrixPL":
        return MatrixPL(
            graph,
            len(m),
            {e.id: ((ZERO, e.length), (m, m)) for e in graph.edges},
        )


class Element:
    """An element of a block: one matrix-valued PL function per summand."""

    __slots__ = ("block", "parts")

    def __init__(self, block: Block, parts: Sequence[MatrixPL]):
        parts = tuple(parts)
        if len(parts) != len(block.summands):
            raise BlockError("one part per summand required")
        for part, s in zip(parts, block.summands):
            if part.graph != s.base or part.size != s.matrix_size:
                raise BlockError("part does not match its summand")
        self.block = block
        self.parts = parts

    @staticmethod
    def constant(block: Block, mats: Sequence[Matrix]) -> "Element":
        return Element(
            block,
            [MatrixPL.constant(s.base, m) for s, m in zip(block.summands, mats)],
        )

    @staticmethod
    def identity(block: Block) -> "Element":
        return Element.constant(
            block, [mat_identity(s.matrix_size) for s in block.summands]
        )

    @staticmethod
    def zero(block: Block) -> "Element":
        return Element.constant(block, [mat_zero(s.matrix_size) for s in block.summands])

    def eval(self, summand: int, p: GraphPoint) -> Matrix:
        try:
            part = self.parts[summand]
        except IndexError:
            raise DomainError(f"no summand {summand}") from None
        return part.eval(p)

    def __add__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(
            self.block,
            [a.zip_with(b, mat_add) for a, b in zip(self.parts, other.parts)],
        )

    def __sub__(self, other: "Element") -> "Element":
        self._check(other)
        return Element(
            self.block,
            [a.zip_with(b, mat_sub) for a, b in zip(self.parts, other.parts)],
        )

    def scale(self, c) -> "Element":
        return Element(self.block, [p.map_values(lambda m: mat_scale(m, c)) for p in self.parts])

    def pinch(self) -> "Element":
        """Pointwise pinch onto the canonical diagonal."""
        return Element(self.block, [p.map_values(mat_pinch) for p in self.parts])

    def adjoint(self) -> "Element":
        return Element(self.block, [p.map_values(mat_adjoint) for p in self.parts])

    def is_diagonal(self) -> bool:
        return self == self.pinch()

    def _check(self, other: "Element"):
        if self.block != other.block:
            raise BlockError("elements of different blocks")

    def __eq__(self, other):
        return (
            isinstance(other, Element)
            and self.block == other.block
            and all(a == b for a, b in zip(self.parts, other.parts))
        )

    def __hash__(self):
        return hash(self.block)


@dataclass(frozen=True)
class NormBounds:
    """Squared certified bounds: lower_sq <= (sup operator norm)^2 <= upper_sq."""

    lower_sq: Fraction
    upper_sq: Fraction

    def lower(self) -> QSqrt:
        return QSqrt(self.lower_sq)

    def upper(self) -> QSqrt:
        return QSqrt(self.upper_sq)


def element_sup_norm_bounds(a: Element) -> NormBounds:
    """Certified two-sided bounds for the sup operator norm.

    Upper: max Frobenius norm over breakpoints (operator <= Frobenius, and
    the operator norm along an affine matrix segment peaks at an endpoint by
    convexity).  Lower: max row/column Euclidean norm over breakpoints.
    """
    lo = Fraction(0)
    hi = Fraction(0)
    for part in a.parts:
        for breaks, mats in part.data.values():
            for m in mats:
                lo = max(lo, rowcol_max_sq(m))
                hi = max(hi, frobenius_sq(m))
    return NormBounds(lo, hi)


def lipschitz_sq_bound(a: Element) -> Fraction:
    """Squared Frobenius bound on slope matrices, maximized over segments.

    If L^2 is the returned value then for all p, q in the same summand base,
    ||a(p) - a(q)||_F <= sqrt(L^2) * d(p, q); in particular the same bound
    holds entrywise and in operator norm.
    """
    best = Fraction(0)
    for part in a.parts:
        for breaks, mats in part.data.values():
            for k in range(len(breaks) - 1):
                dt = breaks[k + 1] - breaks[k]
                slope = tuple(
                    tuple((y - x).scale(Fraction(1) / dt) for x, y in zip(r0, r1))
                    for r0, r1 in zip(mats[k], mats[k + 1])
                )
                best = max(best, frobenius_sq(slope))
    return best


def lipschitz_bound(a: Element) -> QSqrt:
    """The certified Lipschitz constant as an exact square root."""
    return QSqrt(lipschitz_sq_bound(a))
