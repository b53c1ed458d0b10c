"""Certified surjectivity perturbation for maximally homogeneous forms.

Given a maximally homogeneous, unital diagonal form whose eigenvalue images
may leave gaps of length at most delta in the source bases, the pipeline
grafts PL tents onto anchored eigenvalue functions until the images cover
everything, replicating every local modification across covering-tree
fibers, and finishes with a repair pass for isolated boundary collisions.
The output is maximally homogeneous, injective, descent-compatible, and
within a certified sup-distance of the input.  All checks are exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .diagmaps import (
    DiagEntry,
    DiagonalForm,
    TargetData,
    _entry_on_base_edge,
    check_unital_injective,
    is_maximally_homogeneous,
    source_image_union,
    spectrum_at,
)
from .geometry import (
    ClosedSubset,
    DomainError,
    Gap,
    Graph,
    GraphPoint,
    PLMap,
    Segment,
    ZERO,
    complement_gaps,
    point_distance,
)


class PerturbError(ValueError):
    """Base class for pipeline failures."""


class ParameterError(PerturbError):
    """A parameter violates its admissibility bound."""


class NotDeltaApproximation(PerturbError):
    """A gap is longer than delta (input must be refined first)."""


class AnchorNotFound(PerturbError):
    """No eigenvalue function reaches the required gap endpoint."""


class InvalidInput(PerturbError):
    """The input violates a structural precondition (MH, descent, ...)."""


# ---------------------------------------------------------------------------
# decompositions and chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapDecomposition:
    source_summand: int
    covered: ClosedSubset
    gaps: tuple

    @property
    def total_count(self) -> int:
        return len(self.gaps)

    def max_gap_length(self) -> Fraction:
        return max((g.length for g in self.gaps), default=ZERO)


def gap_decomposition(form: DiagonalForm, j: int) -> GapDecomposition:
    """Exact complement of the eigenvalue images over source summand j."""
    covered = source_image_union(form, j)
    return GapDecomposition(j, covered, complement_gaps(covered))


@dataclass(frozen=True)
class Chain:
    gaps: tuple
    classification: str


@dataclass(frozen=True)
class ChainStructure:
    chains: tuple


def _gap_contacts(gap: Gap, g: Graph):
    pts = {gap.start, gap.end}
    for v in gap.through_vertices:
        pts.add(g.vertex_point(v))
    return pts


def maximal_chains(gd: GapDecomposition, g: Graph) -> ChainStructure:
    """Group gaps into maximal chains (connected closures) and classify."""
    gaps = list(gd.gaps)
    n = len(gaps)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    contacts = [_gap_contacts(gap, g) for gap in gaps]
    for a, b in itertools.combinations(range(n), 2):
        if contacts[a] & contacts[b]:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    groups: dict[int, list] = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    chains = []
    for members in groups.values():
        sub = tuple(sorted((gaps[k] for k in members), key=lambda gp: gp.sort_key()))
        chains.append(Chain(sub, _classify_chain(sub, g)))
    chains.sort(key=lambda c: c.gaps[0].sort_key())
    return ChainStructure(tuple(chains))


def _classify_chain(gaps, g: Graph) -> str:
    if any(gap.through_vertices for gap in gaps):
        if len(gaps) == 1 and not any(
            g.vertex_point(v) in _gap_contacts(other, g)
            for gap in gaps
            for v in gap.through_vertices
            for other in gaps
            if other is not gap
        ):
            # a lone gap running through a vertex is still a line
            return "line" if len(gaps) == 1 else "asterisk-vertex-inside"
        return "asterisk-vertex-inside"
    # shared contact points
    counts: dict = {}
    for gap in gaps:
        for p in (gap.start, gap.end):
            counts[p] = counts.get(p, 0) + 1
    junction_vertex = [p for p, c in counts.items() if c >= 3]
    if junction_vertex:
        return "asterisk-vertex-covered"
    shared = [p for p, c in counts.items() if c == 2]
    if any(p.is_vertex() for p in shared):
        return "line-vertex-split"
    if len(gaps) == 1 and len(set(counts)) == 1:
        # degenerate: start == end cannot happen for interval gaps
        return "line"
    return "line" if _is_path(gaps, counts) else "general"


def _is_path(gaps, counts) -> bool:
    return all(c <= 2 for c in counts.values())


# ---------------------------------------------------------------------------
# perturbation state and log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiberCopy:
    edge: str
    window: tuple  # (lo, hi) on that tree edge
    entry: int  # mu_k(s)
    point: GraphPoint  # copy of t'


@dataclass(frozen=True)
class PerturbEvent:
    kind: str  # "tent" | "bump"
    target: int
    entry: int
    edge: str
    u_interval: tuple
    v_interval: tuple
    t_prime: GraphPoint
    anchor_value: GraphPoint
    peak_value: GraphPoint
    site_kind: str
    fiber_copies: tuple
    gap: Gap | None = None


@dataclass(frozen=True)
class PerturbationLog:
    events: tuple
    bound: Fraction
    per_entry_distance: tuple  # ((i, s), Fraction)


class _State:
    """Mutable working copy of a diagonal form during the pipeline."""

    def __init__(self, form: DiagonalForm, delta: Fraction, rho: Fraction):
        self.form = form
        self.delta = delta
        self.rho = rho
        self.maps = [[e.eigenvalue_map for e in td.entries] for td in form.targets]
        self.originals = [list(row) for row in self.maps]
        self.events: list = []
        self.perturbed: set = set()  # (i, s) pairs touched
        self.pending: list = []  # (i, s_other, point, value) tip collisions

    def current_form(self) -> DiagonalForm:
        targets = []
        for i, td in enumerate(self.form.targets):
            entries = tuple(
                DiagEntry(e.source_summand, m)
                for e, m in zip(td.entries, self.maps[i])
            )
            targets.append(TargetData(td.covering, entries))
        return DiagonalForm(self.form.source, self.form.target, targets)

    def entry_distance(self, i: int, s: int) -> Fraction:
        d, _ = self.maps[i][s].sup_distance(self.originals[i][s])
        return d

    def log(self) -> PerturbationLog:
        per_entry = []
        bound = ZERO
        for i, row in enumerate(self.maps):
            for s in range(len(row)):
                d = self.entry_distance(i, s)
                if d != 0:
                    per_entry.append(((i, s), d))
                if d > bound:
                    bound = d
        return PerturbationLog(tuple(self.events), bound, tuple(per_entry))


# ---------------------------------------------------------------------------
# anchor sites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnchorSite:
    target: int
    entry: int
    edge: str
    t: Fraction
    kind: str  # "stack" | "const" | "kink" | "slide"
    slide_end: int = 0  # -1: segment ends at t0=lo, +1: at hi (for slide)


@dataclass(frozen=True)
class AnchorChoice:
    site: AnchorSite
    u_interval: tuple
    v_interval: tuple
    t_prime: Fraction


def _attainment_sites(state: _State, j: int, X: GraphPoint):
    """All usable anchor sites whose current value attains X exactly."""
    sites = []
    form = state.form
    # pending tip resolutions first
    for (i, s2, qpoint, val) in state.pending:
        if val == X and qpoint.edge is not None:
            cur = state.maps[i][s2]
            if form.targets[i].entries[s2].source_summand == j and cur.eval(qpoint) == X:
                sites.append(
                    (0, (i, s2) in state.perturbed, 0, i, s2, qpoint.edge, qpoint.coord,
                     AnchorSite(i, s2, qpoint.edge, qpoint.coord, "stack"))
                )
    for i, td in enumerate(form.targets):
        for s, ent in enumerate(td.entries):
            if ent.source_summand != j:
                continue
            cur = state.maps[i][s]
            cod = cur.codomain
            for eid, segs in sorted(cur.segments.items()):
                elen = cur.domain.edge(eid).length
                for k, seg in enumerate(segs):
                    c = cod.edge_point_coordinate(X, seg.target)
                    if c is None:
                        continue
                    if seg.is_constant() and seg.c_lo == c:
                        t = (seg.lo + seg.hi) / 2
                        sites.append(
                            (1, (i, s) in state.perturbed, 0, i, s, eid, t,
                             AnchorSite(i, s, eid, t, "const"))
                        )
                        continue
                    if seg.is_constant():
                        continue
                    # kink at an interior breakpoint
                    if seg.c_hi == c and seg.hi < elen and k + 1 < len(segs):
                        nxt = segs[k + 1]
                        cn = cod.edge_point_coordinate(X, nxt.target)
                        if cn is not None and nxt.c_lo == cn:
                            sites.append(
                                (1, (i, s) in state.perturbed, 1, i, s, eid, seg.hi,
                                 AnchorSite(i, s, eid, seg.hi, "kink"))
                            )
                    # slide sites at tree-vertex attainment
                    if seg.c_lo == c and seg.lo == 0:
                        sites.append(
                            (1, (i, s) in state.perturbed, 2, i, s, eid, seg.lo,
                             AnchorSite(i, s, eid, seg.lo, "slide", slide_end=-1))
                        )
                    if seg.c_hi == c and seg.hi == elen:
                        sites.append(
                            (1, (i, s) in state.perturbed, 2, i, s, eid, seg.hi,
                             AnchorSite(i, s, eid, seg.hi, "slide", slide_end=+1))
                        )
    sites.sort(key=lambda row: row[:7])
    out = []
    seen = set()
    for row in sites:
        site = row[7]
        key = (site.target, site.entry, site.edge, site.t, site.kind)
        if key not in seen:
            seen.add(key)
            out.append(site)
    return out


def _path_pieces_of_track(segs) -> list:
    return [(s.target, s.c_lo, s.c_hi) for s in segs if s.c_lo != s.c_hi]


def _track_length(segs) -> Fraction:
    return sum((abs(s.c_hi - s.c_lo) for s in segs), ZERO)


def _gap_path_from(gap: Gap, endpoint_is_start: bool):
    pieces = []
    if endpoint_is_start:
        ordered = gap.pieces
        for p in ordered:
            pieces.append((p.edge, p.entry_coord(), p.exit_coord()))
    else:
        for p in reversed(gap.pieces):
            pieces.append((p.edge, p.exit_coord(), p.entry_coord()))
    return pieces


def _swept_subset(cod: Graph, track_pieces, ext_piece, gap: Gap, extra_vertices=()):
    ivals: dict[str, list] = {}
    verts = set(extra_vertices)
    for (eid, c0, c1) in track_pieces:
        ivals.setdefault(eid, []).append((min(c0, c1), max(c0, c1)))
    if ext_piece is not None:
        eid, c0, c1 = ext_piece
        ivals.setdefault(eid, []).append((min(c0, c1), max(c0, c1)))
    for p in gap.pieces:
        ivals.setdefault(p.edge, []).append((p.lo, p.hi))
    verts.update(gap.through_vertices)
    for pt, flag in ((gap.start, True), (gap.end, True)):
        if pt.vertex is not None:
            verts.add(pt.vertex)
    return ClosedSubset(cod, ivals, verts)


def _values_subset(cod: Graph, segs) -> ClosedSubset:
    ivals: dict[str, list] = {}
    for s in segs:
        ivals.setdefault(s.target, []).append((min(s.c_lo, s.c_hi), max(s.c_lo, s.c_hi)))
    return ClosedSubset(cod, ivals)


def _only_point(subset: ClosedSubset, pt: GraphPoint) -> bool:
    """True when the subset is empty or exactly the single point pt."""
    if subset.is_empty():
        return True
    for eid, ivals in subset.intervals.items():
        for lo, hi in ivals:
            if lo != hi:
                return False
            if subset.graph.point(eid, lo) != pt:
                return False
    for v in subset.vertices:
        if subset.graph.vertex_point(v) != pt:
            return False
    return True


def _fiber_windows(state, i, edge, lo, hi, t):
    """Fiber copies of the point (edge, t) with transported windows.

    Returns (copies, min_separation): copies are (tree_edge, window_lo,
    window_hi, copy_t, same_orientation), excluding the anchor edge itself.
    """
    ct = state.form.targets[i].covering
    tp = ct.tree.point(edge, t)
    w = ct.projection.eval(tp)
    fiber = ct.fiber(w)
    copies = []
    sep = None
    sA = ct.projection.segments[edge][0]
    fwdA = sA.c_lo == 0
    for q in fiber:
        if q == tp:
            continue
        d = point_distance(ct.tree, tp, q)
        sep = d if sep is None else min(sep, d)
        sB = ct.projection.segments[q.edge][0]
        fwdB = sB.c_lo == 0
        same = fwdA == fwdB
        elen = ct.tree.edge(q.edge).length
        if same:
            copies.append((q.edge, lo, hi, q.coord, True))
        else:
            copies.append((q.edge, elen - hi, elen - lo, q.coord, False))
    for a, b in itertools.combinations(fiber, 2):
        d = point_distance(ct.tree, a, b)
        sep = d if sep is None else min(sep, d)
    return copies, sep


def _transport_segments(segs, edge_len: Fraction, window, same_orientation: bool):
    """Re-parametrize segments from the anchor window onto a fiber window."""
    out = []
    for s in segs:
        if same_orientation:
            out.append(s)
        else:
            out.append(
                Segment(edge_len - s.hi, edge_len - s.lo, s.target, s.c_hi, s.c_lo)
            )
    out.sort(key=lambda s: s.lo)
    return out


def _shrink_anchor(state: _State, site: AnchorSite, gap: Gap, X: GraphPoint,
                   Y: GraphPoint, gap_pieces, rho: Fraction):
    """Find U = (t-w, t+w) satisfying all exactness constraints, or None."""
    i, s = site.target, site.entry
    cur = state.maps[i][s]
    tree = cur.domain
    cod = cur.codomain
    elen = tree.edge(site.edge).length
    ent_j = state.form.targets[i].entries[s].source_summand

    # initial half-width from local structure
    if site.kind == "slide":
        seg = cur.segment_at(site.edge, site.t)
        room = (seg.hi - seg.lo)
        eta = room / 2
    else:
        left = site.t
        right = elen - site.t
        eta = min(left, right) / 2
        segb = [b for b in cur.breakpoints(site.edge) if b != site.t]
        for b in segb:
            if abs(b - site.t) / 2 < eta and site.kind != "stack":
                eta = abs(b - site.t) / 2
        if site.kind == "stack":
            # stay inside the surrounding affine flank structure minimally
            eta = min(eta, elen / 8)
    if eta <= 0:
        return None

    for _ in range(64):
        candidate = _try_anchor_width(state, site, gap, X, Y, rho, eta,
                                      cur, tree, cod, elen, ent_j)
        if candidate is not None:
            return candidate
        eta = eta / 2
    return None


def _try_anchor_width(state, site, gap, X, Y, rho, eta, cur, tree, cod, elen, ent_j):
    i, s = site.target, site.entry
    if site.kind == "slide":
        probe = site.t + eta / 8 if site.slide_end < 0 else site.t - eta / 8
        if not (0 < probe < elen):
            return None
        seg = cur.segment_at(site.edge, probe)
        t = seg.lo + eta / 2 if site.slide_end < 0 else seg.hi - eta / 2
        w = eta / 4
        if not (seg.lo <= t - w and t + w <= seg.hi):
            return None
    else:
        t = site.t
        w = eta
    lo, hi = t - w, t + w
    if not (0 < lo and hi < elen):
        return None
    track = cur.restriction_segments(site.edge, lo, hi)
    cur_t = cur.eval(tree.point(site.edge, t))
    off = point_distance(cod, cur_t, X)
    # rho-closeness of the local track to the anchor endpoint value
    if _track_length(track) > rho / 2 or off > rho / 2:
        return None
    copies, sep = _fiber_windows(state, i, site.edge, lo, hi, t)
    if sep is not None and not (w < sep / 3):
        return None
    # extension run from the current value to the anchor endpoint
    ext = None
    if off != 0:
        seg_t = cur.segment_at(site.edge, t)
        cX = cod.edge_point_coordinate(X, seg_t.target)
        if cX is None:
            return None
        ext = (seg_t.target, seg_t.value(t), cX)
    # swept-set disjointness against every other entry over U (tip allowed)
    swept = _swept_subset(cod, _path_pieces_of_track(track), ext, gap)
    windows = [(site.edge, lo, hi, None)] + [
        (fe, flo, fhi, tree.point(fe, ftp)) for (fe, flo, fhi, ftp, same) in copies
    ]
    for (we, wlo, whi, qpt) in windows:
        for s2 in range(len(state.maps[i])):
            if qpt is None and s2 == s:
                continue
            if state.form.targets[i].entries[s2].source_summand != ent_j:
                continue
            if qpt is not None and state.maps[i][s2].eval(qpt) == cur_t:
                continue  # the fiber partner carries the same germ by descent
            other = state.maps[i][s2].restriction_segments(we, wlo, whi)
            inter = swept.intersect(_values_subset(cod, other))
            if not _only_point(inter, Y):
                return None
    vlo, vhi = t - w / 3, t + w / 3
    return AnchorChoice(
        AnchorSite(i, s, site.edge, t, site.kind, site.slide_end),
        (lo, hi),
        (vlo, vhi),
        t,
    )


def select_anchor(form: DiagonalForm, gap: Gap, rho: Fraction,
                  at_end: bool = False, delta: Fraction | None = None) -> AnchorChoice:
    """Standalone anchor selection for one gap endpoint (spec operation)."""
    state = _State(form, delta if delta is not None else Fraction(1, 2), Fraction(rho))
    X = gap.end if at_end else gap.start
    Y = gap.start if at_end else gap.end
    gp = _gap_path_from(gap, endpoint_is_start=not at_end)
    j = _gap_source_summand(form, gap)
    for site in _attainment_sites(state, j, X):
        choice = _shrink_anchor(state, site, gap, X, Y, gp, Fraction(rho))
        if choice is not None:
            return choice
    raise AnchorNotFound(
        f"no eigenvalue function reaches {X} within rho={rho}"
    )


def _gap_source_summand(form: DiagonalForm, gap: Gap) -> int:
    g0 = gap.pieces[0].edge
    for j, s in enumerate(form.source.summands):
        if s.base.has_edge(g0):
            return j
    raise DomainError("gap does not belong to any source summand")


# ---------------------------------------------------------------------------
# tent construction and splicing
# ---------------------------------------------------------------------------


def _tent_segments(cur: PLMap, edge: str, v0: Fraction, v1: Fraction,
                   t_prime: Fraction, ext_piece, gap_pieces):
    """PL segments of the tent over [v0, v1], peaking at the far gap end."""
    up_track = _path_pieces_of_track(cur.restriction_segments(edge, v0, t_prime))
    down_track = _path_pieces_of_track(cur.restriction_segments(edge, t_prime, v1))
    up = list(up_track)
    if ext_piece is not None:
        up.append(ext_piece)
    up.extend(gap_pieces)
    down = [(e, c1, c0) for (e, c0, c1) in reversed(gap_pieces)]
    if ext_piece is not None:
        e, c0, c1 = ext_piece
        down.append((e, c1, c0))
    down.extend(down_track)
    segs = []
    segs.extend(_param_onto_path(up, v0, t_prime))
    segs.extend(_param_onto_path(down, t_prime, v1))
    return segs


def _param_onto_path(pieces, a: Fraction, b: Fraction):
    pieces = [(e, c0, c1) for (e, c0, c1) in pieces if c0 != c1]
    total = sum((abs(c1 - c0) for (_, c0, c1) in pieces), ZERO)
    if total == 0 or a == b:
        raise PerturbError("degenerate tent flank")
    out = []
    acc = ZERO
    for (e, c0, c1) in pieces:
        ln = abs(c1 - c0)
        lo = a + (b - a) * acc / total
        acc += ln
        hi = a + (b - a) * acc / total
        out.append(Segment(lo, hi, e, c0, c1))
    return out


def _splice_with_fibers(state: _State, i: int, s: int, edge: str,
                        window, segs, t: Fraction):
    """Splice new segments into entry (i, s) and every fiber copy.

    Returns the FiberCopy records.  The fiber entry is matched by exact germ
    comparison (value match plus identical transported restriction)."""
    lo, hi = window
    cur = state.maps[i][s]
    tree = cur.domain
    old_track = cur.restriction_segments(edge, lo, hi)
    cur_t_val = cur.eval(tree.point(edge, t))
    copies, _sep = _fiber_windows(state, i, edge, lo, hi, t)
    state.maps[i][s] = cur.spliced(edge, lo, hi, segs)
    state.perturbed.add((i, s))
    records = []
    for (fe, flo, fhi, ft, same) in copies:
        elen = tree.edge(fe).length
        want = _transport_segments(old_track, elen, (flo, fhi), same)
        qpt = tree.point(fe, ft)
        match = None
        for s2 in range(len(state.maps[i])):
            if state.form.targets[i].entries[s2].source_summand != \
               state.form.targets[i].entries[s].source_summand:
                continue
            m2 = state.maps[i][s2]
            if m2.eval(qpt) != cur_t_val:
                continue
            got = m2.restriction_segments(fe, flo, fhi)
            if got == want:
                match = s2
                break
        if match is None:
            raise InvalidInput(
                f"descent violated: no entry of target {i} carries the germ of "
                f"entry {s} over the fiber point {qpt}"
            )
        tsegs = _transport_segments(segs, elen, (flo, fhi), same)
        state.maps[i][match] = state.maps[i][match].spliced(fe, flo, fhi, tsegs)
        state.perturbed.add((i, match))
        records.append(FiberCopy(fe, (flo, fhi), match, qpt))
    return records


def descend(form: DiagonalForm, i: int, s: int, edge: str,
            lo: Fraction, hi: Fraction, segments) -> DiagonalForm:
    """Apply a local modification to entry (i, s) on [lo, hi] of a tree edge
    and replicate it across all covering-tree fibers (spec operation)."""
    state = _State(form, Fraction(1, 2), Fraction(1, 100))
    t = (Fraction(lo) + Fraction(hi)) / 2
    _splice_with_fibers(state, i, s, edge, (Fraction(lo), Fraction(hi)),
                        list(segments), t)
    return state.current_form()


# ---------------------------------------------------------------------------
# gap processing
# ---------------------------------------------------------------------------


def _record_tips(state: _State, i: int, s: int, points, Y: GraphPoint):
    for qpt in points:
        for s2 in range(len(state.maps[i])):
            if s2 == s:
                continue
            if state.form.targets[i].entries[s2].source_summand != \
               state.form.targets[i].entries[s].source_summand:
                continue
            if state.maps[i][s2].eval(qpt) == Y:
                state.pending.append((i, s2, qpt, Y))


def _process_gap(state: _State, gap: Gap, chain_idx: int) -> bool:
    """Try to cover one gap; True on success."""
    form = state.form
    j = _gap_source_summand(form, gap)
    for at_end in (False, True):
        X = gap.end if at_end else gap.start
        Y = gap.start if at_end else gap.end
        if (gap.contains_start and not at_end) or (gap.contains_end and at_end):
            continue  # endpoint belongs to the gap itself; cannot anchor there
        gp = _gap_path_from(gap, endpoint_is_start=not at_end)
        for site in _attainment_sites(state, j, X):
            choice = _shrink_anchor(state, site, gap, X, Y, gp, state.rho)
            if choice is None:
                continue
            i, s = choice.site.target, choice.site.entry
            cur = state.maps[i][s]
            tree = cur.domain
            cod = cur.codomain
            t = choice.t_prime
            vlo, vhi = choice.v_interval
            cur_t = cur.eval(tree.point(choice.site.edge, t))
            ext = None
            if cur_t != X:
                seg = cur.segment_at(choice.site.edge, t)
                cX = cod.edge_point_coordinate(X, seg.target)
                if cX is None:
                    continue
                ext = (seg.target, seg.value(t), cX)
            segs = _tent_segments(cur, choice.site.edge, vlo, vhi, t, ext, gp)
            copies = _splice_with_fibers(
                state, i, s, choice.site.edge, (vlo, vhi), segs, t
            )
            tpt = tree.point(choice.site.edge, t)
            # drop any pending record resolved by this stack
            state.pending = [
                p for p in state.pending
                if not (p[0] == i and p[1] == s and p[2] == tpt)
            ]
            _record_tips(state, i, s, [tpt] + [c.point for c in copies], Y)
            state.events.append(
                PerturbEvent(
                    kind="tent",
                    target=i,
                    entry=s,
                    edge=choice.site.edge,
                    u_interval=choice.u_interval,
                    v_interval=choice.v_interval,
                    t_prime=tpt,
                    anchor_value=X,
                    peak_value=Y,
                    site_kind=choice.site.kind,
                    fiber_copies=tuple(copies),
                    gap=gap,
                )
            )
            return True
    return False


def perturb_chain(form: DiagonalForm, chain: Chain, rho: Fraction,
                  delta: Fraction | None = None):
    """Cover every gap of one chain; returns (new form, events)."""
    if delta is None:
        delta = max((g.length for g in chain.gaps), default=Fraction(1, 4))
    state = _State(form, Fraction(delta), Fraction(rho))
    todo = list(chain.gaps)
    while todo:
        progressed = False
        for gap in list(todo):
            if _process_gap(state, gap, 0):
                todo.remove(gap)
                progressed = True
        if not progressed:
            raise AnchorNotFound(
                "no admissible anchor for remaining gaps "
                f"(first: {todo[0].start} .. {todo[0].end})"
            )
    return state.current_form(), tuple(state.events)


# ---------------------------------------------------------------------------
# repair of isolated boundary collisions
# ---------------------------------------------------------------------------


def _overshoot_directions(cod: Graph, vpt: GraphPoint):
    """Candidate short runs away from a value point, as (edge, c0, c1)."""
    out = []
    if vpt.vertex is None:
        e = cod.edge(vpt.edge)
        room_up = e.length - vpt.coord
        room_dn = vpt.coord
        if room_up > 0:
            out.append((vpt.edge, vpt.coord, vpt.coord + room_up))
        if room_dn > 0:
            out.append((vpt.edge, vpt.coord, vpt.coord - room_dn))
    else:
        for e, endc in cod.germs(vpt.vertex):
            if endc == 0:
                out.append((e.id, ZERO, e.length))
            else:
                out.append((e.id, e.length, ZERO))
    return out


def _bump_entry(state: _State, i: int, s: int, point: GraphPoint,
                eps: Fraction, h_scale: int) -> bool:
    """Overshoot-bump entry (i, s) near a collision point; True on success."""
    cur = state.maps[i][s]
    tree = cur.domain
    cod = cur.codomain
    vpt = cur.eval(point)
    if point.vertex is not None:
        # collisions at tree vertices: bump every germ consistently
        return _bump_at_tree_vertex(state, i, s, point, eps, h_scale)
    eid, tc = point.edge, point.coord
    elen = tree.edge(eid).length
    h = min(tc, elen - tc) / (4 * h_scale)
    if h <= 0:
        return False
    copies, sep = _fiber_windows(state, i, eid, tc - h, tc + h, tc)
    if sep is not None:
        while h >= sep / 3 and h > 0:
            h = h / 2
    if h <= 0:
        return False
    for (de, c0, c1) in _overshoot_directions(cod, vpt):
        run = min(abs(c1 - c0), eps)
        if run <= 0:
            continue
        cpeak = c0 + run if c1 > c0 else c0 - run
        ext = (de, c0, cpeak)
        try:
            segs = _tent_segments(cur, eid, tc - h, tc + h, tc, ext, [])
        except PerturbError:
            continue
        saved_maps = [list(r) for r in state.maps]
        saved_pert = set(state.perturbed)
        try:
            fibs = _splice_with_fibers(state, i, s, eid, (tc - h, tc + h), segs, tc)
        except InvalidInput:
            state.maps = saved_maps
            state.perturbed = saved_pert
            continue
        state.events.append(
            PerturbEvent(
                kind="bump",
                target=i,
                entry=s,
                edge=eid,
                u_interval=(tc - h, tc + h),
                v_interval=(tc - h, tc + h),
                t_prime=point,
                anchor_value=vpt,
                peak_value=cod.point(de, cpeak),
                site_kind="bump",
                fiber_copies=tuple(fibs),
            )
        )
        return True
    return False


def _bump_at_tree_vertex(state, i, s, point, eps, h_scale) -> bool:
    cur = state.maps[i][s]
    tree = cur.domain
    cod = cur.codomain
    vpt = cur.eval(point)
    germs = tree.germs(point.vertex)
    for (de, c0, c1) in _overshoot_directions(cod, vpt):
        run = min(abs(c1 - c0), eps)
        if run <= 0:
            continue
        cpeak = c0 + run if c1 > c0 else c0 - run
        saved_maps = [list(r) for r in state.maps]
        saved_pert = set(state.perturbed)
        ok = True
        try:
            for e, endc in germs:
                elen = e.length
                h = elen / (8 * h_scale)
                if endc == 0:
                    lo, hi, tpk = ZERO, h, ZERO
                else:
                    lo, hi, tpk = elen - h, elen, elen
                track = state.maps[i][s].restriction_segments(e.id, lo, hi)
                pieces = _path_pieces_of_track(track)
                if endc == 0:
                    down = [(de, cpeak, c0)] + pieces
                    segs = _param_onto_path(down, lo, hi)
                else:
                    up = pieces + [(de, c0, cpeak)]
                    segs = _param_onto_path(up, lo, hi)
                _splice_with_fibers(state, i, s, e.id, (lo, hi), segs,
                                    (lo + hi) / 2)
        except (InvalidInput, PerturbError):
            state.maps = saved_maps
            state.perturbed = saved_pert
            ok = False
        if ok:
            state.events.append(
                PerturbEvent(
                    kind="bump",
                    target=i,
                    entry=s,
                    edge=germs[0][0].id,
                    u_interval=(ZERO, ZERO),
                    v_interval=(ZERO, ZERO),
                    t_prime=point,
                    anchor_value=vpt,
                    peak_value=cod.point(de, cpeak),
                    site_kind="vertex-bump",
                    fiber_copies=(),
                )
            )
            return True
    return False


def repair_distinctness(form: DiagonalForm, epsilon: Fraction | None = None,
                        state: _State | None = None):
    """Remove isolated pointwise collisions by tiny overshoot bumps.

    Bumps prefer entries not yet perturbed in this pipeline, are replicated
    across fibers, and never shrink any image (they overshoot).  Non-isolated
    collision loci mean the input was not maximally homogeneous.
    """
    own_state = state is None
    if own_state:
        state = _State(form, Fraction(1, 2), Fraction(1, 100))
    eps = Fraction(epsilon) if epsilon is not None else Fraction(1, 64)
    for round_no in range(40):
        rep = is_maximally_homogeneous(state.current_form())
        if rep.holds:
            return (state.current_form(), tuple(e for e in state.events
                                                if e.kind.endswith("bump")))
        w = rep.witnesses[0]
        if w.kind == "segment":
            raise InvalidInput(
                f"non-isolated collision locus at {w.point} "
                f"(entries {w.entries} of target {w.target_summand}); "
                "input was not maximally homogeneous"
            )
        s_a, s_b = w.entries
        prefer = sorted(
            [s_a, s_b],
            key=lambda s: ((w.target_summand, s) in state.perturbed, -s),
        )
        fixed = False
        for s in prefer:
            for h_scale in (1, 4, 16):
                if _bump_entry(state, w.target_summand, s, w.point,
                               eps / (round_no + 1), h_scale):
                    fixed = True
                    break
            if fixed:
                break
        if not fixed:
            raise InvalidInput(
                f"could not repair collision at {w.point} between entries "
                f"{w.entries} of target {w.target_summand}"
            )
    raise InvalidInput("repair did not converge; collisions persist")


# ---------------------------------------------------------------------------
# descent verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DescentReport:
    holds: bool
    failures: tuple  # (target, base_edge, tree_edge, piece)


def verify_descent(form: DiagonalForm) -> DescentReport:
    """Exact fiberwise spectrum matching.

    Per base edge and fiber pair of tree edges, the multiset of eigenvalue
    germs (as affine functions in base-edge coordinates) must coincide
    piecewise; for affine pieces this is equivalent to pointwise multiset
    equality of spectra, and a matching of equal germs realizes the fiber
    permutations.
    """
    failures = []
    for i, td in enumerate(form.targets):
        ct = td.covering
        by_base: dict[str, list] = {}
        for e in ct.tree.edges:
            s = ct.projection.segments[e.id][0]
            by_base.setdefault(s.target, []).append((e.id, s.c_lo == 0))
        for be, lifts in sorted(by_base.items()):
            ref_eid, ref_fwd = lifts[0]
            ref_rows = [
                _entry_on_base_edge(ct, ent.eigenvalue_map, be, ref_eid, ref_fwd)
                for ent in td.entries
            ]
            for (eid, fwd) in lifts[1:]:
                rows = [
                    _entry_on_base_edge(ct, ent.eigenvalue_map, be, eid, fwd)
                    for ent in td.entries
                ]
                cuts = sorted(
                    {x for rr in (ref_rows, rows) for segs in rr for s in segs
                     for x in (s.lo, s.hi)}
                )
                for lo, hi in zip(cuts, cuts[1:]):
                    mid = (lo + hi) / 2
                    a = sorted(
                        _germ_signature(td.entries[k].source_summand,
                                        ref_rows[k], lo, hi, mid)
                        for k in range(len(td.entries))
                    )
                    b = sorted(
                        _germ_signature(td.entries[k].source_summand,
                                        rows[k], lo, hi, mid)
                        for k in range(len(td.entries))
                    )
                    if a != b:
                        failures.append((i, be, eid, (lo, hi)))
                        break
    return DescentReport(holds=not failures, failures=tuple(failures))


def _germ_signature(j: int, segs, lo: Fraction, hi: Fraction, mid: Fraction):
    """(source summand, target edge, value at lo, value at hi) over a piece."""
    for s in segs:
        if s.lo <= mid <= s.hi:
            return (j, s.target, s.value(lo), s.value(hi))
    raise DomainError(f"no germ covers the piece around {mid}")


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------


def delta_admissible_bound(form: DiagonalForm) -> Fraction:
    total = sum(s.matrix_size for s in form.target.summands)
    return Fraction(1, total)


def make_surjective_mh(form: DiagonalForm, delta, rho=None):
    """Theorem-level pipeline: perturb a maximally homogeneous unital form
    into an injective (surjective-eigenvalue) maximally homogeneous one.

    Returns (new_form, PerturbationLog); the log's bound is the exact max
    per-entry sup-distance and is certified <= delta + rho.
    """
    delta = Fraction(delta)
    bound = delta_admissible_bound(form)
    if delta <= 0 or delta >= bound:
        raise ParameterError(
            f"delta must satisfy 0 < delta < {bound} (= 1/sum of target sizes); "
            f"got {delta}"
        )
    if delta >= Fraction(1, 2):
        raise ParameterError(f"delta must be smaller than 1/2; got {delta}")
    mh = is_maximally_homogeneous(form)
    if not mh.holds:
        raise InvalidInput(
            f"input is not maximally homogeneous (witness at "
            f"{mh.witnesses[0].point})"
        )
    decomps = [
        gap_decomposition(form, j) for j in range(len(form.source.summands))
    ]
    all_gaps = []
    min_gap = None
    for gd in decomps:
        for gap in gd.gaps:
            if gap.length > delta:
                raise NotDeltaApproximation(
                    f"gap {gap.start} .. {gap.end} has length {gap.length} > "
                    f"delta = {delta}; refine the input"
                )
            all_gaps.append(gap)
            min_gap = gap.length if min_gap is None else min(min_gap, gap.length)
    if rho is None:
        rho = min(delta / 100, min_gap / 2) if min_gap is not None else delta / 100
    rho = Fraction(rho)
    if rho <= 0:
        raise ParameterError("rho must be positive")

    if not all_gaps:
        empty = PerturbationLog((), ZERO, ())
        return form, empty

    max_chain = sum(s.matrix_size for s in form.target.summands)
    for gd in decomps:
        base = form.source.summands[gd.source_summand].base
        for chain in maximal_chains(gd, base).chains:
            if len(chain.gaps) > max_chain:
                raise NotDeltaApproximation(
                    f"a maximal chain has {len(chain.gaps)} gaps > sum of "
                    f"target sizes {max_chain}; not a delta-approximation"
                )

    state = _State(form, delta, rho)
    todo = list(all_gaps)
    while todo:
        progressed = False
        for gap in list(todo):
            if _process_gap(state, gap, 0):
                todo.remove(gap)
                progressed = True
        if not progressed:
            raise AnchorNotFound(
                f"no admissible anchor for gap {todo[0].start} .. {todo[0].end}"
            )

    # repair isolated boundary collisions, replicated through fibers
    slack = delta + rho - max(
        (state.entry_distance(i, s) for (i, s) in state.perturbed), default=ZERO
    )
    eps = min(rho / 2, slack / 2) if slack > 0 else rho / 4
    repair_distinctness(form, eps, state=state)

    out = state.current_form()
    log = state.log()
    # exact postcondition suite
    inj = check_unital_injective(out)
    if not inj.injective:
        raise PerturbError("internal: output images do not cover the source")
    if not is_maximally_homogeneous(out).holds:
        raise PerturbError("internal: output is not maximally homogeneous")
    if not verify_descent(out).holds:
        raise PerturbError("internal: output violates descent")
    if log.bound > delta + rho:
        raise PerturbError(
            f"internal: certified bound {log.bound} exceeds delta+rho = {delta + rho}"
        )
    return out, log
