"""Exact piecewise-linear geometry on finite metric graphs.

Graphs are finite 1-complexes with rational edge lengths (loops and
multi-edges allowed).  Points, the path metric, piecewise-linear maps,
their images, sup-distances and finite covering trees are all computed in
exact rational arithmetic; no floats anywhere.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

ZERO = Fraction(0)


class GeometryError(ValueError):
    """Invalid geometric data."""


class DomainError(GeometryError):
    """A point or map was used outside the graph it belongs to."""


# ---------------------------------------------------------------------------
# graphs and points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str
    length: Fraction

    def is_loop(self) -> bool:
        return self.u == self.v


class Graph:
    """Finite graph; vertices and edges are kept in canonical sorted order."""

    __slots__ = ("vertices", "edges", "_edge_by_id", "_incident", "_vdist", "_hash")

    def __init__(self, vertices: Iterable[str], edges: Iterable[tuple]):
        vs = tuple(sorted(dict.fromkeys(str(v) for v in vertices)))
        es = []
        seen = set()
        for spec in edges:
            if isinstance(spec, Edge):
                e = spec
            else:
                eid, u, v, *rest = spec
                length = Fraction(rest[0]) if rest else Fraction(1)
                e = Edge(str(eid), str(u), str(v), length)
            if e.id in seen:
                raise GeometryError(f"duplicate edge id {e.id!r}")
            seen.add(e.id)
            if e.u not in vs or e.v not in vs:
                raise GeometryError(f"edge {e.id!r} endpoint missing from vertex set")
            if e.length <= 0:
                raise GeometryError(f"edge {e.id!r} must have positive length")
            es.append(e)
        es.sort(key=lambda e: e.id)
        self.vertices = vs
        self.edges = tuple(es)
        self._edge_by_id = {e.id: e for e in self.edges}
        incident: dict[str, list] = {v: [] for v in vs}
        for e in self.edges:
            incident[e.u].append((e, ZERO))
            incident[e.v].append((e, e.length))
        self._incident = {v: tuple(g) for v, g in incident.items()}
        self._vdist = None
        self._hash = hash((self.vertices, self.edges))

    # -- structure ---------------------------------------------------------

    def edge(self, eid: str) -> Edge:
        try:
            return self._edge_by_id[eid]
        except KeyError:
            raise DomainError(f"no edge {eid!r} in graph") from None

    def has_edge(self, eid: str) -> bool:
        return eid in self._edge_by_id

    def germs(self, v: str) -> tuple:
        """Edge-ends at vertex v as (edge, end-coordinate) pairs."""
        try:
            return self._incident[v]
        except KeyError:
            raise DomainError(f"no vertex {v!r} in graph") from None

    def degree(self, v: str) -> int:
        return len(self.germs(v))

    def is_connected(self) -> bool:
        if not self.vertices:
            return True
        seen = {self.vertices[0]}
        stack = [self.vertices[0]]
        while stack:
            x = stack.pop()
            for e, _ in self._incident[x]:
                for y in (e.u, e.v):
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
        return len(seen) == len(self.vertices)

    def is_tree(self) -> bool:
        return self.is_connected() and len(self.edges) == len(self.vertices) - 1

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.vertices == other.vertices
            and self.edges == other.edges
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Graph({len(self.vertices)}v,{len(self.edges)}e)"

    # -- points ------------------------------------------------------------

    def point(self, edge: str, coord) -> "GraphPoint":
        """Canonical point on an edge; endpoint coordinates become vertices."""
        e = self.edge(edge)
        c = Fraction(coord)
        if c < 0 or c > e.length:
            raise DomainError(f"coordinate {c} outside edge {edge!r} of length {e.length}")
        if c == 0:
            return GraphPoint(None, None, e.u)
        if c == e.length:
            return GraphPoint(None, None, e.v)
        return GraphPoint(edge, c, None)

    def vertex_point(self, v: str) -> "GraphPoint":
        if v not in self._incident:
            raise DomainError(f"no vertex {v!r} in graph")
        return GraphPoint(None, None, v)

    def contains_point(self, p: "GraphPoint") -> bool:
        if p.vertex is not None:
            return p.vertex in self._incident
        return (
            p.edge in self._edge_by_id
            and 0 < p.coord < self._edge_by_id[p.edge].length
        )

    def as_edge_coordinate(self, p: "GraphPoint") -> tuple:
        """Some (edge, coordinate) representation of p (first germ for vertices)."""
        if p.vertex is not None:
            germs = self.germs(p.vertex)
            if not germs:
                raise DomainError(f"isolated vertex {p.vertex!r} has no edge chart")
            e, c = germs[0]
            return e.id, c
        return p.edge, p.coord

    def edge_point_coordinate(self, p: "GraphPoint", eid: str):
        """Coordinate of p on edge eid, or None when p is not on that edge."""
        e = self.edge(eid)
        if p.vertex is not None:
            if p.vertex == e.u:
                return ZERO
            if p.vertex == e.v:
                return e.length
            return None
        return p.coord if p.edge == eid else None

    # -- metric ------------------------------------------------------------

    def _vertex_distances(self) -> dict:
        if self._vdist is None:
            dist = {}
            for src in self.vertices:
                d = {src: ZERO}
                heap = [(ZERO, src)]
                while heap:
                    dx, x = heapq.heappop(heap)
                    if dx > d[x]:
                        continue
                    for e, _ in self._incident[x]:
                        y = e.v if x == e.u else e.u
                        nd = dx + e.length
                        if y not in d or nd < d[y]:
                            d[y] = nd
                            heapq.heappush(heap, (nd, y))
                dist[src] = d
            self._vdist = dist
        return self._vdist

    def vertex_distance(self, u: str, v: str) -> Fraction:
        d = self._vertex_distances()[u]
        if v not in d:
            raise DomainError(f"vertices {u!r}, {v!r} not connected")
        return d[v]

    def combinatorial_eccentricity(self, root: str) -> int:
        """Max number of edges on a shortest edge-path from root."""
        depth = {root: 0}
        frontier = [root]
        while frontier:
            nxt = []
            for x in frontier:
                for e, _ in self._incident[x]:
                    y = e.v if x == e.u else e.u
                    if y not in depth:
                        depth[y] = depth[x] + 1
                        nxt.append(y)
            frontier = nxt
        return max(depth.values())


@dataclass(frozen=True, order=False)
class GraphPoint:
    """A point of a graph: either interior to an edge or a vertex.

    Canonicalization (edge endpoints become vertices) is done by
    ``Graph.point``; equality on canonical points is exact and decidable.
    """

    edge: str | None
    coord: Fraction | None
    vertex: str | None

    def is_vertex(self) -> bool:
        return self.vertex is not None

    def sort_key(self):
        if self.vertex is not None:
            return (0, self.vertex, ZERO)
        return (1, self.edge, self.coord)

    def __str__(self):
        if self.vertex is not None:
            return f"@{self.vertex}"
        return f"{self.edge}:{self.coord}"


def point_distance(g: Graph, p: GraphPoint, q: GraphPoint) -> Fraction:
    """Exact path-metric distance between two points of g."""
    for x in (p, q):
        if not g.contains_point(x):
            raise DomainError(f"point {x} not on graph")
    if p == q:
        return ZERO
    if p.vertex is not None and q.vertex is not None:
        return g.vertex_distance(p.vertex, q.vertex)
    if p.vertex is not None:
        return _vertex_to_edgepoint(g, p.vertex, q)
    if q.vertex is not None:
        return _vertex_to_edgepoint(g, q.vertex, p)
    ep, eq = g.edge(p.edge), g.edge(q.edge)
    best = None
    if p.edge == q.edge:
        best = abs(p.coord - q.coord)
    for x, dx in ((ep.u, p.coord), (ep.v, ep.length - p.coord)):
        for y, dy in ((eq.u, q.coord), (eq.v, eq.length - q.coord)):
            cand = dx + g.vertex_distance(x, y) + dy
            if best is None or cand < best:
                best = cand
    return best


def _vertex_to_edgepoint(g: Graph, v: str, q: GraphPoint) -> Fraction:
    e = g.edge(q.edge)
    return min(
        g.vertex_distance(v, e.u) + q.coord,
        g.vertex_distance(v, e.v) + (e.length - q.coord),
    )


# ---------------------------------------------------------------------------
# closed subsets and open complements
# ---------------------------------------------------------------------------


class ClosedSubset:
    """A closed subset of a graph: disjoint closed intervals per edge plus a
    vertex set consistent with the interval endpoints."""

    __slots__ = ("graph", "intervals", "vertices")

    def __init__(self, graph: Graph, intervals: Mapping, vertices: Iterable[str] = ()):
        self.graph = graph
        merged: dict[str, tuple] = {}
        vset = set(vertices)
        for eid, ivals in intervals.items():
            e = graph.edge(eid)
            cleaned = []
            for lo, hi in ivals:
                lo, hi = Fraction(lo), Fraction(hi)
                if lo > hi:
                    lo, hi = hi, lo
                lo = max(lo, ZERO)
                hi = min(hi, e.length)
                if lo > hi:
                    continue
                cleaned.append((lo, hi))
            cleaned.sort()
            out = []
            for lo, hi in cleaned:
                if out and lo <= out[-1][1]:
                    out[-1] = (out[-1][0], max(out[-1][1], hi))
                else:
                    out.append((lo, hi))
            if out:
                merged[eid] = tuple(out)
                if out[0][0] == 0:
                    vset.add(e.u)
                if out[-1][1] == e.length:
                    vset.add(e.v)
        for v in vset:
            if v not in graph.vertices:
                raise DomainError(f"no vertex {v!r} in graph")
        self.intervals = merged
        self.vertices = frozenset(vset)

    @staticmethod
    def empty(graph: Graph) -> "ClosedSubset":
        return ClosedSubset(graph, {})

    @staticmethod
    def whole(graph: Graph) -> "ClosedSubset":
        return ClosedSubset(
            graph,
            {e.id: ((ZERO, e.length),) for e in graph.edges},
            graph.vertices,
        )

    def union(self, other: "ClosedSubset") -> "ClosedSubset":
        if self.graph != other.graph:
            raise DomainError("union of subsets of different graphs")
        ivals: dict[str, list] = {}
        for src in (self.intervals, other.intervals):
            for eid, xs in src.items():
                ivals.setdefault(eid, []).extend(xs)
        return ClosedSubset(self.graph, ivals, self.vertices | other.vertices)

    def contains(self, p: GraphPoint) -> bool:
        if p.vertex is not None:
            return p.vertex in self.vertices
        for lo, hi in self.intervals.get(p.edge, ()):
            if lo <= p.coord <= hi:
                return True
        return False

    def intersect(self, other: "ClosedSubset") -> "ClosedSubset":
        if self.graph != other.graph:
            raise DomainError("intersection of subsets of different graphs")
        ivals: dict[str, list] = {}
        for eid, xs in self.intervals.items():
            ys = other.intervals.get(eid, ())
            out = []
            for lo, hi in xs:
                for lo2, hi2 in ys:
                    a, b = max(lo, lo2), min(hi, hi2)
                    if a <= b:
                        out.append((a, b))
            if out:
                ivals[eid] = out
        return ClosedSubset(self.graph, ivals, self.vertices & other.vertices)

    def is_empty(self) -> bool:
        return not self.intervals and not self.vertices

    def points(self):
        """Isolated description: interval endpoints and vertices (for reports)."""
        out = [self.graph.vertex_point(v) for v in sorted(self.vertices)]
        for eid in sorted(self.intervals):
            for lo, hi in self.intervals[eid]:
                for c in {lo, hi}:
                    p = self.graph.point(eid, c)
                    if p not in out:
                        out.append(p)
        return out

    def is_whole_graph(self) -> bool:
        if set(self.vertices) != set(self.graph.vertices):
            return False
        for e in self.graph.edges:
            ivals = self.intervals.get(e.id, ())
            if len(ivals) != 1 or ivals[0] != (ZERO, e.length):
                return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, ClosedSubset)
            and self.graph == other.graph
            and self.intervals == other.intervals
            and self.vertices == other.vertices
        )

    def __hash__(self):
        return hash((self.graph, tuple(sorted(self.intervals.items())), self.vertices))

    def __repr__(self):
        parts = [f"{k}:{list(v)}" for k, v in sorted(self.intervals.items())]
        return f"ClosedSubset({', '.join(parts)}; V={sorted(self.vertices)})"


@dataclass(frozen=True)
class GapPiece:
    """One oriented edge-interval of an open gap path."""

    edge: str
    lo: Fraction
    hi: Fraction
    forward: bool  # path runs lo->hi when True

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo

    def entry_coord(self) -> Fraction:
        return self.lo if self.forward else self.hi

    def exit_coord(self) -> Fraction:
        return self.hi if self.forward else self.lo


@dataclass(frozen=True)
class Gap:
    """A connected open piece of the complement of a closed subset,
    homeomorphic to an open interval, possibly running through uncovered
    vertices.  ``contains_start``/``contains_end`` flag uncovered degree-one
    endpoints that belong to the gap itself."""

    start: GraphPoint
    end: GraphPoint
    pieces: tuple
    through_vertices: tuple
    contains_start: bool
    contains_end: bool

    @property
    def length(self) -> Fraction:
        return sum((p.length for p in self.pieces), ZERO)

    def sort_key(self):
        return (self.start.sort_key(), self.end.sort_key(), len(self.pieces))

    def path_points(self, graph: Graph):
        """The gap closure as a node path [start, v1, ..., end]."""
        pts = [self.start]
        for v in self.through_vertices:
            pts.append(graph.vertex_point(v))
        pts.append(self.end)
        return pts


def complement_gaps(subset: ClosedSubset) -> tuple:
    """Decompose the open complement of a closed subset into gaps.

    Components through an uncovered vertex are split canonically: the two
    lexicographically smallest germs merge into a through-interval, every
    further germ becomes an interval open at the vertex.  An uncovered cycle
    cannot be written this way and raises GeometryError.
    """
    g = subset.graph
    # raw open pieces per edge: (edge, lo, hi)
    pieces = []
    for e in g.edges:
        covered = list(subset.intervals.get(e.id, ()))
        cuts = [ZERO]
        for lo, hi in covered:
            cuts.extend((lo, hi))
        cuts.append(e.length)
        for lo, hi in zip(cuts[::2], cuts[1::2]):
            if lo < hi:
                pieces.append((e.id, lo, hi))

    def side_vertex(idx, side):
        """Uncovered vertex this piece-end touches, or None."""
        eid, lo, hi = pieces[idx]
        e = g.edge(eid)
        if side == 0:
            return e.u if (lo == 0 and e.u not in subset.vertices) else None
        return e.v if (hi == e.length and e.v not in subset.vertices) else None

    germs_at: dict[str, list] = {}
    for idx in range(len(pieces)):
        for side in (0, 1):
            v = side_vertex(idx, side)
            if v is not None:
                germs_at.setdefault(v, []).append((idx, side))
    # at each uncovered vertex the two lexicographically smallest germs merge
    # through the vertex; further germs stop there (open at the vertex)
    partner = {}
    lone_end = {}  # piece-end -> uncovered deg-1 vertex contained in the gap
    for v, germs in germs_at.items():
        germs.sort(key=lambda t: (pieces[t[0]][0], t[1], t[0]))
        if len(germs) == 1:
            lone_end[germs[0]] = v
        else:
            a, b = germs[0], germs[1]
            partner[a] = (b, v)
            partner[b] = (a, v)

    used = [False] * len(pieces)
    gaps = []
    for start_idx in range(len(pieces)):
        if used[start_idx]:
            continue
        # find a terminal end by walking merges back from (start_idx, 0)
        end = (start_idx, 0)
        seen = set()
        while end in partner:
            if end in seen:
                raise GeometryError(
                    "complement contains an uncovered cycle; "
                    "input is not a delta-approximation"
                )
            seen.add(end)
            nxt, _ = partner[end]
            end = (nxt[0], 1 - nxt[1])
        first_end = end
        # traverse from the terminal end
        chain = []
        through = []
        idx, enter_side = first_end
        while True:
            used[idx] = True
            eid, lo, hi = pieces[idx]
            chain.append(GapPiece(eid, lo, hi, forward=(enter_side == 0)))
            exit_end = (idx, 1 - enter_side)
            if exit_end in partner:
                nxt, v = partner[exit_end]
                through.append(v)
                idx, enter_side = nxt
            else:
                last_end = exit_end
                break

        def end_point(pend):
            pidx, pside = pend
            eid, lo, hi = pieces[pidx]
            coord = lo if pside == 0 else hi
            if pend in lone_end:
                return g.vertex_point(lone_end[pend]), True
            sv = side_vertex(pidx, pside)
            if sv is not None:
                # split germ at an uncovered vertex owned by another gap
                return g.vertex_point(sv), False
            return g.point(eid, coord), False

        p_start, c_start = end_point(first_end)
        p_end, c_end = end_point(last_end)
        gaps.append(
            Gap(
                start=p_start,
                end=p_end,
                pieces=tuple(chain),
                through_vertices=tuple(through),
                contains_start=c_start,
                contains_end=c_end,
            )
        )
    gaps.sort(key=lambda gap: gap.sort_key())
    return tuple(gaps)


# ---------------------------------------------------------------------------
# piecewise-linear maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Affine piece [lo, hi] of a domain edge mapped into one codomain edge,
    stored by its endpoint image coordinates (slope = (c_hi-c_lo)/(hi-lo))."""

    lo: Fraction
    hi: Fraction
    target: str
    c_lo: Fraction
    c_hi: Fraction

    def value(self, t: Fraction) -> Fraction:
        if self.hi == self.lo:
            return self.c_lo
        return self.c_lo + (self.c_hi - self.c_lo) * (t - self.lo) / (self.hi - self.lo)

    def slope(self) -> Fraction:
        return (self.c_hi - self.c_lo) / (self.hi - self.lo)

    def is_constant(self) -> bool:
        return self.c_lo == self.c_hi


def _canonical_segments(domain: Graph, codomain: Graph, raw) -> dict:
    """Validate and canonicalize per-edge segment lists.

    Constant segments sitting at a vertex coordinate are remapped onto the
    lexicographically first incident edge so equal maps have equal data.
    """
    segmap = {}
    for e in domain.edges:
        segs = sorted(raw.get(e.id, ()), key=lambda s: (s.lo, s.hi))
        if not segs:
            raise GeometryError(f"no segments on domain edge {e.id!r}")
        if segs[0].lo != 0 or segs[-1].hi != e.length:
            raise GeometryError(f"segments do not span edge {e.id!r}")
        norm = []
        for i, s in enumerate(segs):
            if i and segs[i - 1].hi != s.lo:
                raise GeometryError(f"segment gap/overlap on edge {e.id!r} at {s.lo}")
            if s.hi <= s.lo:
                raise GeometryError(f"degenerate segment on edge {e.id!r}")
            te = codomain.edge(s.target)
            if not (0 <= s.c_lo <= te.length and 0 <= s.c_hi <= te.length):
                raise GeometryError(
                    f"segment image leaves target edge {s.target!r} on {e.id!r}"
                )
            if s.is_constant():
                p = codomain.point(s.target, s.c_lo)
                if p.vertex is not None:
                    ge, gc = codomain.germs(p.vertex)[0]
                    s = Segment(s.lo, s.hi, ge.id, gc, gc)
            norm.append(s)
        # merge collinear neighbours for canonical form
        merged = [norm[0]]
        for s in norm[1:]:
            prev = merged[-1]
            if (
                prev.target == s.target
                and prev.c_hi == s.c_lo
                and prev.slope() == s.slope()
            ):
                merged[-1] = Segment(prev.lo, s.hi, prev.target, prev.c_lo, s.c_hi)
            else:
                merged.append(s)
        segmap[e.id] = tuple(merged)
    return segmap


class PLMap:
    """A continuous piecewise-linear map between graphs.

    Each affine piece maps into a single codomain edge, which keeps images,
    compositions and distinctness checks exactly computable.
    """

    __slots__ = ("domain", "codomain", "segments", "_vertex_values", "_hash")

    def __init__(self, domain: Graph, codomain: Graph, segments: Mapping):
        self.domain = domain
        self.codomain = codomain
        self.segments = _canonical_segments(domain, codomain, segments)
        # continuity at interior breakpoints
        for eid, segs in self.segments.items():
            for a, b in zip(segs, segs[1:]):
                pa = codomain.point(a.target, a.c_hi)
                pb = codomain.point(b.target, b.c_lo)
                if pa != pb:
                    raise GeometryError(
                        f"discontinuity inside edge {eid!r} at t={a.hi}: {pa} vs {pb}"
                    )
        # continuity across shared domain vertices
        vertex_values = {}
        for v in domain.vertices:
            val = None
            for e, endc in domain.germs(v):
                segs = self.segments[e.id]
                s = segs[0] if endc == 0 else segs[-1]
                c = s.c_lo if endc == 0 else s.c_hi
                p = codomain.point(s.target, c)
                if val is None:
                    val = p
                elif val != p:
                    raise GeometryError(f"discontinuity at vertex {v!r}: {val} vs {p}")
            vertex_values[v] = val
        self._vertex_values = vertex_values
        self._hash = None

    # -- constructors --------------------------------------------------------

    @staticmethod
    def identity(g: Graph) -> "PLMap":
        return PLMap(
            g,
            g,
            {e.id: (Segment(ZERO, e.length, e.id, ZERO, e.length),) for e in g.edges},
        )

    @staticmethod
    def constant(domain: Graph, codomain: Graph, p: GraphPoint) -> "PLMap":
        eid, c = codomain.as_edge_coordinate(p)
        return PLMap(
            domain,
            codomain,
            {e.id: (Segment(ZERO, e.length, eid, c, c),) for e in domain.edges},
        )

    @staticmethod
    def from_breakpoints(domain: Graph, codomain: Graph, data: Mapping) -> "PLMap":
        """Build from rows edge -> [(t, target_edge, coord), ...].

        Consecutive rows describe one affine piece and must share their
        target edge; switch edges by duplicating the joint parameter with
        both charts of the common vertex.
        """
        segmap = {}
        for eid, rows in data.items():
            rows = [(Fraction(t), te, Fraction(c)) for t, te, c in rows]
            rows.sort(key=lambda r: r[0])  # stable: equal-t chart switches keep order
            segs = []
            for (t0, e0, c0), (t1, e1, c1) in zip(rows, rows[1:]):
                if t0 == t1:
                    continue  # chart-switch row
                if e0 != e1:
                    raise GeometryError(
                        f"rows on {eid!r} switch edges {e0!r}->{e1!r} without a joint row"
                    )
                segs.append(Segment(t0, t1, e0, c0, c1))
            segmap[eid] = tuple(segs)
        return PLMap(domain, codomain, segmap)

    # -- basics ----------------------------------------------------------------

    def __eq__(self, other):
        return (
            isinstance(other, PLMap)
            and self.domain == other.domain
            and self.codomain == other.codomain
            and self.segments == other.segments
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(
                (self.domain, self.codomain, tuple(sorted(self.segments.items())))
            )
        return self._hash

    def segment_at(self, eid: str, t: Fraction) -> Segment:
        for s in self.segments[eid]:
            if s.lo <= t <= s.hi:
                return s
        raise DomainError(f"coordinate {t} outside edge {eid!r}")

    def eval(self, p: GraphPoint) -> GraphPoint:
        """Exact image of a point; agrees across vertex representations."""
        if p.vertex is not None:
            try:
                return self._vertex_values[p.vertex]
            except KeyError:
                raise DomainError(f"point {p} not on domain") from None
        if not self.domain.contains_point(p):
            raise DomainError(f"point {p} not on domain")
        s = self.segment_at(p.edge, p.coord)
        return self.codomain.point(s.target, s.value(p.coord))

    def breakpoints(self, eid: str) -> tuple:
        segs = self.segments[eid]
        return tuple([segs[0].lo] + [s.hi for s in segs])

    # -- composition -------------------------------------------------------

    def after(self, g: "PLMap") -> "PLMap":
        """self ∘ g (apply g first)."""
        if g.codomain != self.domain:
            raise DomainError("composition domain/codomain mismatch")
        segmap = {}
        for eid, segs in g.segments.items():
            out = []
            for s in segs:
                cuts = {s.lo, s.hi}
                fsegs = self.segments[s.target]
                bks = set()
                for fs in fsegs:
                    bks.add(fs.lo)
                    bks.add(fs.hi)
                if not s.is_constant():
                    slope = s.slope()
                    for b in bks:
                        t = s.lo + (b - s.c_lo) / slope
                        if s.lo < t < s.hi:
                            cuts.add(t)
                cl = sorted(cuts)
                for lo, hi in zip(cl, cl[1:]):
                    c_lo, c_hi = s.value(lo), s.value(hi)
                    mid = (c_lo + c_hi) / 2
                    fs = self._containing_segment(s.target, mid, c_lo, c_hi)
                    out.append(
                        Segment(lo, hi, fs.target, fs.value(c_lo), fs.value(c_hi))
                    )
            segmap[eid] = tuple(out)
        return PLMap(g.domain, self.codomain, segmap)

    def _containing_segment(self, eid: str, mid: Fraction, lo_c: Fraction, hi_c: Fraction) -> Segment:
        lo, hi = min(lo_c, hi_c), max(lo_c, hi_c)
        for s in self.segments[eid]:
            if s.lo <= lo and hi <= s.hi:
                return s
        for s in self.segments[eid]:
            if s.lo <= mid <= s.hi:
                return s
        raise DomainError(f"no segment of edge {eid!r} contains coordinate {mid}")

    # -- image, preimages ----------------------------------------------------

    def image(self) -> ClosedSubset:
        ivals: dict[str, list] = {}
        for segs in self.segments.values():
            for s in segs:
                lo, hi = min(s.c_lo, s.c_hi), max(s.c_lo, s.c_hi)
                ivals.setdefault(s.target, []).append((lo, hi))
        return ClosedSubset(self.codomain, ivals)

    def preimages(self, q: GraphPoint) -> tuple:
        """All preimages of q; constant stretches contribute their endpoints
        and midpoint (the full stretch is recoverable from segments)."""
        out = []
        seen = set()
        for eid, segs in self.segments.items():
            for s in segs:
                for t in _segment_preimage_params(self.codomain, s, q):
                    p = self.domain.point(eid, t)
                    if p not in seen:
                        seen.add(p)
                        out.append(p)
        out.sort(key=lambda p: p.sort_key())
        return tuple(out)

    # -- metric ----------------------------------------------------------------

    def sup_distance(self, other: "PLMap"):
        """Exact sup of pointwise distance, with a witness point.

        On each common-refinement piece the pointwise distance is a minimum
        of finitely many affine route functions; the sup is attained at piece
        endpoints or crossings of those functions, all rational.
        """
        if self.domain != other.domain or self.codomain != other.codomain:
            raise DomainError("sup-distance of maps with different spaces")
        cod = self.codomain
        best = ZERO
        witness = (
            self.domain.vertex_point(self.domain.vertices[0])
            if self.domain.vertices
            else None
        )
        for e in self.domain.edges:
            cuts = sorted(set(self.breakpoints(e.id)) | set(other.breakpoints(e.id)))
            for lo, hi in zip(cuts, cuts[1:]):
                sf = self.segment_at(e.id, (lo + hi) / 2)
                sg = other.segment_at(e.id, (lo + hi) / 2)
                for t in _sup_candidates(cod, sf, sg, lo, hi):
                    p = self.domain.point(e.id, t)
                    d = point_distance(cod, self.eval(p), other.eval(p))
                    if d > best:
                        best, witness = d, p
        return best, witness

    # -- surgery ----------------------------------------------------------------

    def spliced(self, eid: str, lo: Fraction, hi: Fraction, pieces: Sequence[Segment]) -> "PLMap":
        """Replace the restriction to [lo, hi] of edge eid by new segments."""
        segs = []
        for s in self.segments[eid]:
            if s.hi <= lo or s.lo >= hi:
                segs.append(s)
                continue
            if s.lo < lo:
                segs.append(Segment(s.lo, lo, s.target, s.c_lo, s.value(lo)))
            if s.hi > hi:
                segs.append(Segment(hi, s.hi, s.target, s.value(hi), s.c_hi))
        segs.extend(pieces)
        segs.sort(key=lambda s: s.lo)
        newmap = dict(self.segments)
        newmap[eid] = tuple(segs)
        return PLMap(self.domain, self.codomain, newmap)

    def restriction_segments(self, eid: str, lo: Fraction, hi: Fraction):
        """Segments of the restriction to [lo, hi] (clipped copies)."""
        out = []
        for s in self.segments[eid]:
            a, b = max(s.lo, lo), min(s.hi, hi)
            if a < b:
                out.append(Segment(a, b, s.target, s.value(a), s.value(b)))
        return out

    def __repr__(self):
        n = sum(len(s) for s in self.segments.values())
        return f"PLMap({n} segments)"


def _segment_preimage_params(codomain: Graph, s: Segment, q: GraphPoint):
    """Parameters t in [s.lo, s.hi] with segment value equal to q."""
    c = codomain.edge_point_coordinate(q, s.target)
    out = []
    if s.is_constant():
        if c is not None and s.c_lo == c:
            out = [s.lo, (s.lo + s.hi) / 2, s.hi]
    elif c is not None:
        slope = s.slope()
        t = s.lo + (c - s.c_lo) / slope
        if s.lo <= t <= s.hi:
            out = [t]
    return out


def _sup_candidates(cod: Graph, sf: Segment, sg: Segment, lo: Fraction, hi: Fraction):
    """Candidate parameters where sup of d(f(t), g(t)) can be attained."""
    ef, eg = cod.edge(sf.target), cod.edge(sg.target)

    def coord(seg, t):
        if hi == lo:
            return seg.c_lo
        return seg.value(t)

    # affine route functions r(t) = a + b t
    routes = []

    def affine_from(seg, endpoint_at_zero: bool, edge):
        # distance along the edge from seg value to the chosen endpoint
        c0, c1 = coord(seg, lo), coord(seg, hi)
        if endpoint_at_zero:
            v0, v1 = c0, c1
        else:
            v0, v1 = edge.length - c0, edge.length - c1
        return v0, v1  # values at lo and hi

    cands = {lo, hi}
    pieces = []
    for fx, fv in ((True, ef.u), (False, ef.v)):
        f0, f1 = affine_from(sf, fx, ef)
        for gx, gv in ((True, eg.u), (False, eg.v)):
            g0, g1 = affine_from(sg, gx, eg)
            d = cod.vertex_distance(fv, gv)
            pieces.append((f0 + g0 + d, f1 + g1 + d))
    if sf.target == sg.target:
        d0 = coord(sf, lo) - coord(sg, lo)
        d1 = coord(sf, hi) - coord(sg, hi)
        pieces.append((d0, d1))
        pieces.append((-d0, -d1))
        # zero crossing of the direct difference
        if d0 != d1 and min(d0, d1) < 0 < max(d0, d1):
            t = lo + (hi - lo) * (ZERO - d0) / (d1 - d0)
            cands.add(t)
    for (a0, a1), (b0, b1) in itertools.combinations(pieces, 2):
        da, db = a1 - a0, b1 - b0
        if da == db:
            continue
        t = lo + (hi - lo) * (b0 - a0) / (da - db)
        if lo <= t <= hi:
            cands.add(t)
    return sorted(cands)


# ---------------------------------------------------------------------------
# covering trees
# ---------------------------------------------------------------------------


class CoveringTree:
    """A finite connected subtree of the universal cover of a base graph,
    with an edge-isometric surjective projection."""

    __slots__ = ("tree", "base", "projection", "root")

    def __init__(self, tree: Graph, base: Graph, projection: PLMap, root: str | None = None):
        if projection.domain != tree or projection.codomain != base:
            raise DomainError("projection must map the tree onto the base")
        if not tree.is_tree():
            raise GeometryError("covering tree must be acyclic and connected")
        covered = set()
        for e in tree.edges:
            segs = projection.segments[e.id]
            if len(segs) != 1:
                raise GeometryError(f"projection not edge-isometric on {e.id!r}")
            s = segs[0]
            te = base.edge(s.target)
            spans = sorted((s.c_lo, s.c_hi))
            if spans != [ZERO, te.length] or e.length != te.length:
                raise GeometryError(f"tree edge {e.id!r} must cover base edge {s.target!r} isometrically")
            covered.add(s.target)
        if covered != {e.id for e in base.edges}:
            raise GeometryError("projection is not surjective")
        self.tree = tree
        self.base = base
        self.projection = projection
        self.root = root if root is not None else tree.vertices[0]

    @staticmethod
    def identity(base: Graph) -> "CoveringTree":
        if not base.is_tree():
            raise GeometryError("identity covering needs an acyclic base")
        return CoveringTree(base, base, PLMap.identity(base))

    def fiber(self, w: GraphPoint) -> tuple:
        """Complete list of preimages of a base point."""
        if not self.base.contains_point(w):
            raise DomainError(f"point {w} not on base")
        out = []
        if w.vertex is not None:
            for v in self.tree.vertices:
                if self.projection.eval(self.tree.vertex_point(v)) == w:
                    out.append(self.tree.vertex_point(v))
        else:
            for e in self.tree.edges:
                s = self.projection.segments[e.id][0]
                if s.target != w.edge:
                    continue
                t = s.lo + (w.coord - s.c_lo) / s.slope()
                if s.lo <= t <= s.hi:
                    out.append(self.tree.point(e.id, t))
        out.sort(key=lambda p: p.sort_key())
        return tuple(out)

    def __eq__(self, other):
        return (
            isinstance(other, CoveringTree)
            and self.tree == other.tree
            and self.base == other.base
            and self.projection == other.projection
        )

    def __hash__(self):
        return hash((self.tree, self.base, self.projection))


def build_covering_tree(base: Graph, radius: int) -> CoveringTree:
    """Ball of reduced edge-walks from a root in the universal cover.

    The requested combinatorial radius is extended minimally (never shrunk)
    until the projection is surjective; radius combinatorics follow reduced
    walks, so a loop unfolds in both directions.
    """
    if radius < 0:
        raise GeometryError("radius must be nonnegative")
    if not base.is_connected():
        raise DomainError("base graph must be connected")
    root = base.vertices[0]
    needed = {e.id for e in base.edges}
    max_radius = max(radius, base.combinatorial_eccentricity(root) + 1)

    r = max(radius, 1)
    while True:
        tree, proj_rows, covered = _unfold(base, root, r)
        if covered == needed or r >= max_radius:
            break
        r += 1
    if covered != needed:  # pragma: no cover - unreachable for connected bases
        raise GeometryError("could not reach a surjective subtree")
    tgraph = Graph(tree["vertices"], tree["edges"])
    proj = PLMap(tgraph, base, proj_rows)
    return CoveringTree(tgraph, base, proj, root=tree["root"])


def _unfold(base: Graph, root: str, radius: int):
    """BFS over reduced walks; returns tree data + covered base edges."""
    vertices = []
    edges = []
    proj: dict[str, tuple] = {}
    covered = set()
    node_names = {}

    def name_for(walk):
        if walk not in node_names:
            node_names[walk] = f"t{len(node_names)}"
            vertices.append(node_names[walk])
        return node_names[walk]

    start = ()
    frontier = [(start, root, None)]  # (walk, base vertex, last step)
    name_for(start)
    depth = 0
    counter = 0
    while frontier and depth < radius:
        nxt = []
        for walk, at, last in frontier:
            here = node_names[walk]
            steps = []
            seen_eids = set()
            for e, _endc in base.germs(at):
                if e.id in seen_eids:
                    continue
                seen_eids.add(e.id)
                if e.u == at:
                    steps.append((e, "+"))
                if e.v == at:
                    steps.append((e, "-"))
            steps.sort(key=lambda t: (t[0].id, t[1]))
            for e, d in steps:
                if last is not None and last == (e.id, "+" if d == "-" else "-"):
                    continue  # immediate backtrack is not reduced
                nwalk = walk + ((e.id, d),)
                nname = name_for(nwalk)
                teid = f"te{counter}"
                counter += 1
                edges.append((teid, here, nname, e.length))
                if d == "+":
                    proj[teid] = (Segment(ZERO, e.length, e.id, ZERO, e.length),)
                else:
                    proj[teid] = (Segment(ZERO, e.length, e.id, e.length, ZERO),)
                covered.add(e.id)
                nxt.append((nwalk, e.v if d == "+" else e.u, (e.id, d)))
        frontier = nxt
        depth += 1
    return (
        {"vertices": vertices, "edges": edges, "root": node_names[start]},
        proj,
        covered,
    )
