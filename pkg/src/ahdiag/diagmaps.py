"""Homomorphisms between building blocks in eigenvalue (diagonal) form.

A map is given, per target summand, by a covering tree over the target base
and an ordered tuple of eigenvalue functions into source bases.  The unitary
frame is fixed to the identity, so the induced diagonal is the canonical one
and every check below is exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .blocks import (
    Block,
    BlockError,
    Element,
    Matrix,
    MatrixPL,
    lipschitz_sq_bound,
    mat_block_diag,
    mat_interp,
)
from .exact import QSqrt
from .geometry import (
    ClosedSubset,
    CoveringTree,
    DomainError,
    Gap,
    Graph,
    GraphPoint,
    PLMap,
    Segment,
    ZERO,
    complement_gaps,
)


class DescentError(ValueError):
    """Eigenvalue data does not descend to the base space as required."""


@dataclass(frozen=True)
class DiagEntry:
    source_summand: int
    eigenvalue_map: PLMap


@dataclass(frozen=True)
class TargetData:
    covering: CoveringTree
    entries: tuple


class DiagonalForm:
    """A unital homomorphism in diagonal form with identity unitary frame."""

    __slots__ = ("source", "target", "targets")

    def __init__(self, source: Block, target: Block, targets: Sequence[TargetData]):
        targets = tuple(targets)
        if len(targets) != len(target.summands):
            raise BlockError("one TargetData per target summand required")
        for td, ts in zip(targets, target.summands):
            if td.covering.base != ts.base:
                raise BlockError("covering tree base must be the target summand base")
            total = 0
            for ent in td.entries:
                if not (0 <= ent.source_summand < len(source.summands)):
                    raise BlockError("entry references a missing source summand")
                ssum = source.summands[ent.source_summand]
                if ent.eigenvalue_map.domain != td.covering.tree:
                    raise BlockError("eigenvalue map domain must be the covering tree")
                if ent.eigenvalue_map.codomain != ssum.base:
                    raise BlockError("eigenvalue map codomain must be the source base")
                total += ssum.matrix_size
            if total != ts.matrix_size:
                raise BlockError(
                    f"entry sizes sum to {total}, target summand has size {ts.matrix_size}"
                )
        self.source = source
        self.target = target
        self.targets = targets

    def entry_maps(self, i: int):
        return [e.eigenvalue_map for e in self.targets[i].entries]

    def replace_entry(self, i: int, s: int, new_map: PLMap) -> "DiagonalForm":
        td = self.targets[i]
        entries = list(td.entries)
        entries[s] = DiagEntry(entries[s].source_summand, new_map)
        targets = list(self.targets)
        targets[i] = TargetData(td.covering, tuple(entries))
        return DiagonalForm(self.source, self.target, targets)

    def same_shape(self, other: "DiagonalForm") -> bool:
        if self.source != other.source or self.target != other.target:
            return False
        for a, b in zip(self.targets, other.targets):
            if a.covering != b.covering or len(a.entries) != len(b.entries):
                return False
            if any(x.source_summand != y.source_summand for x, y in zip(a.entries, b.entries)):
                return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, DiagonalForm)
            and self.same_shape(other)
            and all(
                x.eigenvalue_map == y.eigenvalue_map
                for a, b in zip(self.targets, other.targets)
                for x, y in zip(a.entries, b.entries)
            )
        )

    def __hash__(self):
        return hash((self.source, self.target))


# -- spectra and maximal homogeneity -----------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """Multiset of labeled source points hit at one tree point."""

    points: tuple  # tuple of (source_summand, GraphPoint), entry order

    def multiset(self):
        out = {}
        for item in self.points:
            out[item] = out.get(item, 0) + 1
        return out

    def distinct_by_summand(self):
        seen = {}
        for j, p in self.points:
            seen.setdefault(j, set()).add(p)
        return {j: len(ps) for j, ps in seen.items()}


def spectrum_at(form: DiagonalForm, i: int, t: GraphPoint) -> Spectrum:
    try:
        td = form.targets[i]
    except IndexError:
        raise DomainError(f"no target summand {i}") from None
    return Spectrum(
        tuple((e.source_summand, e.eigenvalue_map.eval(t)) for e in td.entries)
    )


@dataclass(frozen=True)
class MHWitness:
    target_summand: int
    point: GraphPoint
    entries: tuple  # (s, s')
    kind: str  # "isolated" | "segment"


@dataclass(frozen=True)
class MHReport:
    holds: bool
    witnesses: tuple


def is_maximally_homogeneous(form: DiagonalForm) -> MHReport:
    """Exact maximal-homogeneity check over the covering trees.

    Per entry pair and common-refinement piece the coincidence set of two
    affine maps is empty, one rational point, or the whole piece; witnesses
    enumerate every violation (a representative point for segment-wide ones).
    """
    witnesses = []
    for i, td in enumerate(form.targets):
        tree = td.covering.tree
        entries = td.entries
        for s, sp in itertools.combinations(range(len(entries)), 2):
            ea, eb = entries[s], entries[sp]
            if ea.source_summand != eb.source_summand:
                continue
            fa, fb = ea.eigenvalue_map, eb.eigenvalue_map
            cod = fa.codomain
            for e in tree.edges:
                cuts = sorted(set(fa.breakpoints(e.id)) | set(fb.breakpoints(e.id)))
                for lo, hi in zip(cuts, cuts[1:]):
                    mid = (lo + hi) / 2
                    sa = fa.segment_at(e.id, mid)
                    sb = fb.segment_at(e.id, mid)
                    for t, kind in _coincidences(cod, sa, sb, lo, hi):
                        witnesses.append(
                            MHWitness(i, tree.point(e.id, t), (s, sp), kind)
                        )
    # dedupe (piece boundaries can repeat)
    seen = set()
    uniq = []
    for w in witnesses:
        key = (w.target_summand, w.point, w.entries)
        if key not in seen:
            seen.add(key)
            uniq.append(w)
    uniq.sort(key=lambda w: (w.target_summand, w.point.sort_key(), w.entries))
    return MHReport(holds=not uniq, witnesses=tuple(uniq))


def _coincidences(cod: Graph, sa: Segment, sb: Segment, lo: Fraction, hi: Fraction):
    """Solutions of sa(t) == sb(t) as canonical points, for t in [lo, hi]."""

    def val(seg, t):
        return seg.value(t)

    out = []
    if sa.target == sb.target:
        a0, a1 = val(sa, lo), val(sa, hi)
        b0, b1 = val(sb, lo), val(sb, hi)
        da, db = a1 - a0, b1 - b0
        if da == db:
            if a0 == b0:
                out.append(((lo + hi) / 2, "segment"))
        else:
            t = lo + (hi - lo) * (b0 - a0) / (da - db)
            if lo <= t <= hi:
                out.append((t, "isolated"))
    # vertex coincidences across different edges (or reaching shared vertices)
    ca = _vertex_hits(cod, sa, lo, hi)
    cb = _vertex_hits(cod, sb, lo, hi)
    if sa.target != sb.target:
        for (ta, va) in ca:
            for (tb, vb) in cb:
                if va != vb:
                    continue
                if ta == "all" and tb == "all":
                    out.append(((lo + hi) / 2, "segment"))
                elif ta == "all":
                    out.append((tb, "isolated"))
                elif tb == "all":
                    out.append((ta, "isolated"))
                elif ta == tb:
                    out.append((ta, "isolated"))
    return out


def _vertex_hits(cod: Graph, seg: Segment, lo: Fraction, hi: Fraction):
    """Parameters in [lo, hi] where the segment value is a vertex."""
    e = cod.edge(seg.target)
    hits = []
    v0, v1 = val0, val1 = seg.value(lo), seg.value(hi)
    if seg.is_constant():
        if val0 == 0:
            hits.append(("all", e.u))
        if val0 == e.length:
            hits.append(("all", e.v))
        return hits
    slope = (val1 - val0) / (hi - lo)
    for coord, vtx in ((ZERO, e.u), (e.length, e.v)):
        t = lo + (coord - val0) / slope
        if lo <= t <= hi:
            hits.append((t, vtx))
    return hits


def fiber_image_dimension(form: DiagonalForm, i: int, t: GraphPoint) -> int:
    """Dimension of the fiberwise image: sum over source summands of
    (#distinct spectrum points) * n_j^2; maximal iff MH holds at t."""
    spec = spectrum_at(form, i, t)
    dims = 0
    for j, count in spec.distinct_by_summand().items():
        n = form.source.summands[j].matrix_size
        dims += count * n * n
    return dims


def max_fiber_dimension(form: DiagonalForm, i: int) -> int:
    dims = 0
    for e in form.targets[i].entries:
        n = form.source.summands[e.source_summand].matrix_size
        dims += n * n
    return dims


# -- unitality / injectivity --------------------------------------------------


@dataclass(frozen=True)
class InjectivityReport:
    unital: bool
    injective: bool
    gaps: tuple  # (source_summand, Gap)
    images: tuple  # per source summand: ClosedSubset


def source_image_union(form: DiagonalForm, j: int) -> ClosedSubset:
    base = form.source.summands[j].base
    acc = ClosedSubset.empty(base)
    for td in form.targets:
        for e in td.entries:
            if e.source_summand == j:
                acc = acc.union(e.eigenvalue_map.image())
    return acc


def check_unital_injective(form: DiagonalForm) -> InjectivityReport:
    unital = True  # construction enforces the size bookkeeping
    gaps = []
    images = []
    for j in range(len(form.source.summands)):
        img = source_image_union(form, j)
        images.append(img)
        for gap in complement_gaps(img):
            gaps.append((j, gap))
    return InjectivityReport(
        unital=unital,
        injective=not gaps,
        gaps=tuple(gaps),
        images=tuple(images),
    )


# -- applying the homomorphism -------------------------------------------------


def _canonical_lifts(ct: CoveringTree):
    """For each base edge: (tree edge id, orientation) of the first lift."""
    lifts = {}
    for e in ct.tree.edges:
        s = ct.projection.segments[e.id][0]
        if s.target not in lifts:
            lifts[s.target] = (e.id, s.c_lo == 0)
    return lifts


def _entry_on_base_edge(ct: CoveringTree, f: PLMap, base_eid: str, tree_eid: str, fwd: bool):
    """Segments of f restricted to a tree edge, in base-edge coordinates."""
    base_len = ct.base.edge(base_eid).length
    segs = []
    for s in f.segments[tree_eid]:
        if fwd:
            segs.append(s)
        else:
            segs.append(
                Segment(base_len - s.hi, base_len - s.lo, s.target, s.c_hi, s.c_lo)
            )
    segs.sort(key=lambda s: s.lo)
    return segs


def check_strong_descent(form: DiagonalForm, i: int):
    """Entrywise descent: each eigenvalue function is constant on fibers.

    This is exactly what the identity unitary frame needs for the diagonal
    formula to define a continuous element over the base.  Returns a list of
    failure descriptions (empty when the form descends entrywise).
    """
    td = form.targets[i]
    ct = td.covering
    lifts = _canonical_lifts(ct)
    failures = []
    for e in ct.tree.edges:
        s = ct.projection.segments[e.id][0]
        ref_eid, ref_fwd = lifts[s.target]
        if ref_eid == e.id:
            continue
        fwd = s.c_lo == 0
        for k, ent in enumerate(td.entries):
            a = _entry_on_base_edge(ct, ent.eigenvalue_map, s.target, ref_eid, ref_fwd)
            b = _entry_on_base_edge(ct, ent.eigenvalue_map, s.target, e.id, fwd)
            if a != b:
                failures.append((i, k, s.target, e.id))
    return failures


def apply_diagform(form: DiagonalForm, a: Element) -> Element:
    """Apply the homomorphism to an element, yielding an element over the
    target block.  Requires entrywise descent (identity frame)."""
    if a.block != form.source:
        raise BlockError("element does not belong to the source block")
    parts = []
    for i, td in enumerate(form.targets):
        fails = check_strong_descent(form, i)
        if fails:
            raise DescentError(
                f"entries {sorted(set(f[1] for f in fails))} of target summand {i} "
                "do not descend entrywise to the base"
            )
        ct = td.covering
        lifts = _canonical_lifts(ct)
        size = form.target.summands[i].matrix_size
        data = {}
        for be in ct.base.edges:
            tree_eid, fwd = lifts[be.id]
            # per entry: matrix PL of a_j ∘ λ_s along this base edge
            per_entry = []
            for ent in td.entries:
                segs = _entry_on_base_edge(ct, ent.eigenvalue_map, be.id, tree_eid, fwd)
                part = a.parts[ent.source_summand]
                rows = _pullback_matrix_pl(part, segs)
                per_entry.append(rows)
            ts = sorted(set().union(*[set(r.keys()) for r in per_entry]))
            mats = []
            for t in ts:
                blockvals = []
                for rows in per_entry:
                    blockvals.append(_interp_rows(rows, t))
                mats.append(mat_block_diag(blockvals))
            data[be.id] = (tuple(ts), tuple(mats))
        parts.append(MatrixPL(ct.base, size, data))
    return Element(form.target, parts)


def _pullback_matrix_pl(part: MatrixPL, segs) -> dict:
    """Breakpoint table t -> matrix of (part ∘ segment-chart)(t)."""
    rows = {}
    for s in segs:
        breaks, mats = part.data[s.target]
        ts = {s.lo, s.hi}
        if not s.is_constant():
            slope = s.slope()
            for b in breaks:
                t = s.lo + (b - s.c_lo) / slope
                if s.lo < t < s.hi:
                    ts.add(t)
        for t in sorted(ts):
            rows[t] = part._eval_on_edge(s.target, s.value(t))
    return rows


def _interp_rows(rows: dict, t: Fraction) -> Matrix:
    if t in rows:
        return rows[t]
    ts = sorted(rows)
    for a, b in zip(ts, ts[1:]):
        if a <= t <= b:
            return mat_interp(rows[a], rows[b], t - a, b - a)
    raise DomainError(f"parameter {t} outside pullback table")


# -- conditional expectation ---------------------------------------------------


def conditional_expectation(a: Element) -> Element:
    """Pointwise pinch onto the canonical diagonal; idempotent, faithful on
    positives, and a bimodule map over the diagonal."""
    return a.pinch()


@dataclass(frozen=True)
class CommutationReport:
    holds: bool
    discrepancies: tuple  # (target summand, point)


def check_expectation_commutes(
    form: DiagonalForm, a: Element, samples: Mapping
) -> CommutationReport:
    """Exact check of P∘phi == phi∘P at the given samples.

    samples: target summand index -> iterable of base points of W_i.
    """
    lhs = apply_diagform(form, conditional_expectation(a))
    rhs = conditional_expectation(apply_diagform(form, a))
    bad = []
    for i, pts in samples.items():
        for p in pts:
            if lhs.eval(i, p) != rhs.eval(i, p):
                bad.append((i, p))
    return CommutationReport(holds=not bad, discrepancies=tuple(bad))


# -- distance bound -------------------------------------------------------------


def diagform_distance_bound(
    phi: DiagonalForm, psi: DiagonalForm, gens: Iterable[Element]
) -> QSqrt:
    """Certified upper bound for max over gens of ||phi(a) - psi(a)||.

    The bound is Lip(a) * max_entry sup-distance(lambda_s, omega_s); with the
    identity frame the difference at any base point is block-diagonal with
    blocks a(lambda_s(t)) - a(omega_s(t)), each bounded in operator norm by
    the Frobenius-Lipschitz constant times the point distance.
    """
    if not phi.same_shape(psi):
        raise BlockError("diagonal forms are not of the same combinatorial type")
    d = ZERO
    for ta, tb in zip(phi.targets, psi.targets):
        for x, y in zip(ta.entries, tb.entries):
            dist, _ = x.eigenvalue_map.sup_distance(y.eigenvalue_map)
            if dist > d:
                d = dist
    lip_sq = Fraction(0)
    for a in gens:
        lip_sq = max(lip_sq, lipschitz_sq_bound(a))
    return QSqrt(lip_sq * d * d)
