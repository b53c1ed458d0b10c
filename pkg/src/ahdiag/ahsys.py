"""Inductive systems with generalized diagonal connecting maps.

Spaces are finite graphs or symbolic finite products of graphs; connecting
data is a list of entries (lambda_y, target component, bundle tag) per step.
Product spaces carry no PL geometry: only identity, constant, coordinate
projection and composites, evaluated at exact sample tuples.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .blocks import Block, Element, lipschitz_sq_bound, element_sup_norm_bounds
from .diagmaps import DiagonalForm, apply_diagform, diagform_distance_bound
from .exact import QSqrt
from .geometry import DomainError, Graph, GraphPoint, PLMap


class SystemError_(ValueError):
    """Invalid generalized-diagonal system data."""


# ---------------------------------------------------------------------------
# spaces and map expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceHandle:
    """A graph or a finite symbolic product of graphs, with sample tuples."""

    factors: tuple  # tuple[Graph, ...], length >= 1
    samples: tuple  # tuple of point tuples (len == len(factors))

    def __post_init__(self):
        if not self.factors:
            raise SystemError_("a space needs at least one factor")
        for tup in self.samples:
            if len(tup) != len(self.factors):
                raise SystemError_("sample arity mismatch")
            for g, p in zip(self.factors, tup):
                if not g.contains_point(p):
                    raise SystemError_(f"sample point {p} not in its factor")

    @property
    def is_graph(self) -> bool:
        return len(self.factors) == 1

    @staticmethod
    def graph(g: Graph, samples: Iterable[GraphPoint] = ()) -> "SpaceHandle":
        return SpaceHandle((g,), tuple((p,) for p in samples))

    @staticmethod
    def product(factors: Sequence[Graph], samples=()) -> "SpaceHandle":
        return SpaceHandle(tuple(factors), tuple(tuple(t) for t in samples))


class MapExpr:
    """Continuous map between space handles, in one of five shapes."""

    kind: str

    def eval(self, point):
        raise NotImplementedError

    def normalized(self) -> "MapExpr":
        return self


@dataclass(frozen=True)
class IdentityMap(MapExpr):
    space: SpaceHandle
    kind: str = "identity"

    @property
    def domain(self):
        return self.space

    @property
    def codomain(self):
        return self.space

    def eval(self, point):
        return tuple(point)


@dataclass(frozen=True)
class ConstantMap(MapExpr):
    domain_space: SpaceHandle
    codomain_space: SpaceHandle
    value: tuple  # point tuple in the codomain
    kind: str = "constant"

    def __post_init__(self):
        if len(self.value) != len(self.codomain_space.factors):
            raise SystemError_("constant value arity mismatch")

    @property
    def domain(self):
        return self.domain_space

    @property
    def codomain(self):
        return self.codomain_space

    def eval(self, point):
        return self.value


@dataclass(frozen=True)
class PLExprMap(MapExpr):
    domain_space: SpaceHandle
    codomain_space: SpaceHandle
    plmap: PLMap
    kind: str = "pl"

    def __post_init__(self):
        if not (self.domain_space.is_graph and self.codomain_space.is_graph):
            raise SystemError_("pl maps connect graph spaces only")
        if self.plmap.domain != self.domain_space.factors[0]:
            raise SystemError_("pl map domain mismatch")
        if self.plmap.codomain != self.codomain_space.factors[0]:
            raise SystemError_("pl map codomain mismatch")

    @property
    def domain(self):
        return self.domain_space

    @property
    def codomain(self):
        return self.codomain_space

    def eval(self, point):
        return (self.plmap.eval(point[0]),)


@dataclass(frozen=True)
class CoordProjection(MapExpr):
    domain_space: SpaceHandle
    indices: tuple  # selected factor indices
    kind: str = "projection"

    def __post_init__(self):
        for k in self.indices:
            if not (0 <= k < len(self.domain_space.factors)):
                raise SystemError_(f"projection index {k} out of range")
        if not self.indices:
            raise SystemError_("projection needs at least one index")

    @property
    def domain(self):
        return self.domain_space

    @property
    def codomain(self):
        return SpaceHandle(
            tuple(self.domain_space.factors[k] for k in self.indices), ()
        )

    def eval(self, point):
        return tuple(point[k] for k in self.indices)


@dataclass(frozen=True)
class CompositeMap(MapExpr):
    outer: MapExpr
    inner: MapExpr
    kind: str = "composite"

    def __post_init__(self):
        if _space_shape(self.inner.codomain) != _space_shape(self.outer.domain):
            raise SystemError_("composite shape mismatch")

    @property
    def domain(self):
        return self.inner.domain

    @property
    def codomain(self):
        return self.outer.codomain

    def eval(self, point):
        return self.outer.eval(self.inner.eval(point))

    def normalized(self) -> MapExpr:
        return compose_maps(self.outer.normalized(), self.inner.normalized())


def _space_shape(s: SpaceHandle):
    return tuple(s.factors)


def compose_maps(outer: MapExpr, inner: MapExpr) -> MapExpr:
    """Normalized composite: constants absorb, identities vanish, PL pieces
    compose exactly, projections re-index."""
    outer = outer.normalized()
    inner = inner.normalized()
    if _space_shape(inner.codomain) != _space_shape(outer.domain):
        raise SystemError_("composite shape mismatch")
    if isinstance(inner, ConstantMap):
        return ConstantMap(inner.domain, outer.codomain, outer.eval(inner.value))
    if isinstance(outer, ConstantMap):
        return ConstantMap(inner.domain, outer.codomain, outer.value)
    if isinstance(outer, IdentityMap):
        return inner
    if isinstance(inner, IdentityMap):
        return outer
    if isinstance(outer, PLExprMap) and isinstance(inner, PLExprMap):
        return PLExprMap(inner.domain, outer.codomain, outer.plmap.after(inner.plmap))
    if isinstance(outer, CoordProjection) and isinstance(inner, CoordProjection):
        return CoordProjection(
            inner.domain, tuple(inner.indices[k] for k in outer.indices)
        )
    return CompositeMap(outer, inner)


# ---------------------------------------------------------------------------
# generalized diagonal systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bundle:
    kind: str  # "trivial" | "line"
    slot: int | None = None  # slot index for trivial rank-one bundles
    tag: str | None = None  # opaque tag for symbolic line bundles

    @staticmethod
    def trivial(slot: int) -> "Bundle":
        return Bundle("trivial", slot=slot)

    @staticmethod
    def line(tag: str) -> "Bundle":
        return Bundle("line", tag=tag)


@dataclass(frozen=True)
class YEntry:
    target_component: int  # component of Z_{n+1} where the bundle lives
    source_component: int  # component of Z_n the map lands in
    map: MapExpr  # from the target component space into the source one
    bundle: Bundle


@dataclass(frozen=True)
class Level:
    spaces: tuple  # tuple[SpaceHandle, ...]
    rank: int


@dataclass(frozen=True)
class Step:
    s: int
    entries: tuple  # tuple[YEntry, ...]


class GenDiagSystem:
    """Levels of component spaces with rank data plus per-step entry lists."""

    __slots__ = ("levels", "steps")

    def __init__(self, levels: Sequence[Level], steps: Sequence[Step]):
        levels = tuple(levels)
        steps = tuple(steps)
        if len(steps) != len(levels) - 1:
            raise SystemError_("need exactly one step between consecutive levels")
        for n, st in enumerate(steps):
            lo, hi = levels[n], levels[n + 1]
            if hi.rank != lo.rank * st.s:
                raise SystemError_(
                    f"rank recursion fails at level {n}: {hi.rank} != {lo.rank}*{st.s}"
                )
            for ent in st.entries:
                if not (0 <= ent.target_component < len(hi.spaces)):
                    raise SystemError_(f"bad target component at level {n}")
                if not (0 <= ent.source_component < len(lo.spaces)):
                    raise SystemError_(f"bad source component at level {n}")
                dom = ent.map.domain
                cod = ent.map.codomain
                if _space_shape(dom) != _space_shape(hi.spaces[ent.target_component]):
                    raise SystemError_(f"entry domain mismatch at level {n}")
                if _space_shape(cod) != _space_shape(lo.spaces[ent.source_component]):
                    raise SystemError_(f"entry codomain mismatch at level {n}")
        self.levels = levels
        self.steps = steps

    def entries_into(self, n: int, target_component: int):
        return [
            (k, e)
            for k, e in enumerate(self.steps[n].entries)
            if e.target_component == target_component
        ]

    def __eq__(self, other):
        return (
            isinstance(other, GenDiagSystem)
            and self.levels == other.levels
            and self.steps == other.steps
        )

    def __hash__(self):
        return hash((len(self.levels), tuple(st.s for st in self.steps)))


def composite_eigenvalue(sys: GenDiagSystem, n: int, word: Sequence[int]) -> MapExpr:
    """Normalized composite lambda_{word[0]} ∘ ... ∘ lambda_{word[-1]}.

    word[k] indexes an entry of step n+k; consecutive entries must chain
    (the outer entry's target component is the inner entry's source)."""
    if not word:
        raise SystemError_("empty word")
    exprs = []
    for k, y in enumerate(word):
        step = sys.steps[n + k]
        try:
            ent = step.entries[y]
        except IndexError:
            raise SystemError_(f"no entry {y} in step {n + k}") from None
        exprs.append(ent)
    for outer, inner in zip(exprs, exprs[1:]):
        if inner.source_component != outer.target_component:
            raise SystemError_(
                "word is not level-compatible: entry components do not chain"
            )
    out = exprs[0].map.normalized()
    for ent in exprs[1:]:
        out = compose_maps(out, ent.map)
    return out


def compatible_words(sys: GenDiagSystem, n: int, m: int, end_component: int):
    """All entry-index words of length m from level n+m down to level n that
    are defined on the given component of Z_{n+m}, in lexicographic order."""
    if m == 0:
        return [()]
    # build inner-first: word[m-1] indexes step n+m-1 (defined on the given
    # component of Z_{n+m}), each further entry chains through components
    words = [((), end_component)]
    for k in range(n + m - 1, n - 1, -1):
        nxt = []
        for (word, comp) in words:
            for idx, ent in enumerate(sys.steps[k].entries):
                if ent.target_component == comp:
                    nxt.append(((idx,) + word, ent.source_component))
        words = nxt
    return sorted(w for (w, _) in words)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepCoverage:
    component: int
    status: str  # "covered" | "not-covered" | "inconclusive"
    detail: str


@dataclass(frozen=True)
class GenDiagReport:
    ok: bool
    rank_ok: bool
    unitality: tuple  # (level, component, count, expected) failures
    slot_clashes: tuple
    coverage: tuple  # (level, StepCoverage) rows
    bundle_ok: bool

    def passed(self) -> bool:
        return self.ok


def gendiag_check(sys: GenDiagSystem) -> GenDiagReport:
    """Unitality bookkeeping, rank recursion, slot orthogonality, and
    injectivity (image coverage) per step."""
    unit_fail = []
    slot_fail = []
    coverage = []
    rank_ok = True  # construction enforces it
    for n, st in enumerate(sys.steps):
        hi = sys.levels[n + 1]
        lo = sys.levels[n]
        # unitality per target component: rank-one bundles must sum to s
        for j in range(len(hi.spaces)):
            ents = sys.entries_into(n, j)
            count = len(ents)
            if count != st.s:
                unit_fail.append((n, j, count, st.s))
            slots = [e.bundle.slot for _, e in ents if e.bundle.kind == "trivial"]
            if len(slots) != len(set(slots)):
                slot_fail.append((n, j))
        # injectivity: per source component, union of entry images covers
        for c in range(len(lo.spaces)):
            space = lo.spaces[c]
            ents = [e for e in st.entries if e.source_component == c]
            if not ents:
                coverage.append((n, StepCoverage(c, "not-covered", "no entries")))
                continue
            if space.is_graph:
                g = space.factors[0]
                acc = None
                for e in ents:
                    expr = e.map.normalized()
                    img = _graph_image(expr, g)
                    if img is None:
                        acc = None
                        coverage.append(
                            (n, StepCoverage(c, "inconclusive", "unevaluable image"))
                        )
                        break
                    acc = img if acc is None else acc.union(img)
                else:
                    if acc is not None and acc.is_whole_graph():
                        coverage.append((n, StepCoverage(c, "covered", "exact image union")))
                    else:
                        coverage.append(
                            (n, StepCoverage(c, "not-covered", "image union has gaps"))
                        )
            else:
                status, detail = _product_coverage(ents, space)
                coverage.append((n, StepCoverage(c, status, detail)))
    bundle_ok = True  # the representation enforces the line-bundle condition
    ok = not unit_fail and not slot_fail and all(
        row.status == "covered" for _, row in coverage
    ) and rank_ok
    return GenDiagReport(
        ok=ok,
        rank_ok=rank_ok,
        unitality=tuple(unit_fail),
        slot_clashes=tuple(slot_fail),
        coverage=tuple(coverage),
        bundle_ok=bundle_ok,
    )


def _graph_image(expr: MapExpr, g: Graph):
    from .geometry import ClosedSubset

    if isinstance(expr, IdentityMap):
        return ClosedSubset.whole(g)
    if isinstance(expr, ConstantMap):
        p = expr.value[0]
        eid, c = g.as_edge_coordinate(p)
        return ClosedSubset(g, {eid: [(c, c)]},
                            {p.vertex} if p.vertex is not None else ())
    if isinstance(expr, PLExprMap):
        return expr.plmap.image()
    if isinstance(expr, CoordProjection):
        return ClosedSubset.whole(g)  # projections of full products are onto
    return None


def _product_coverage(ents, space: SpaceHandle):
    """Closure rules for product spaces; 'inconclusive' when rules fail."""
    for e in ents:
        expr = e.map.normalized()
        if isinstance(expr, IdentityMap):
            return "covered", "identity entry"
        if isinstance(expr, CoordProjection):
            if len(expr.indices) == len(space.factors) and _space_shape(
                expr.codomain
            ) == _space_shape(space):
                return "covered", "surjective coordinate projection"
    if all(isinstance(e.map.normalized(), ConstantMap) for e in ents):
        return "not-covered", "only constant entries (finite image)"
    return "inconclusive", "no closure rule applies to a product space"


def untwist(sys: GenDiagSystem) -> GenDiagSystem:
    """Replace every bundle by a standard rank-one slot per component.

    Spaces, ranks and eigenvalue maps are preserved verbatim; slots are
    assigned in entry order within each target component."""
    steps = []
    for n, st in enumerate(sys.steps):
        counters: dict[int, int] = {}
        entries = []
        for e in st.entries:
            k = counters.get(e.target_component, 0)
            counters[e.target_component] = k + 1
            entries.append(replace(e, bundle=Bundle.trivial(k)))
        steps.append(Step(st.s, tuple(entries)))
    return GenDiagSystem(sys.levels, steps)


def is_trivial_bundle(sys: GenDiagSystem) -> bool:
    return all(
        e.bundle.kind == "trivial" for st in sys.steps for e in st.entries
    )


# ---------------------------------------------------------------------------
# example generators
# ---------------------------------------------------------------------------


def generate_example(kind: str, **params) -> GenDiagSystem:
    if kind == "goodearl":
        return _goodearl(**params)
    if kind == "villadsen1":
        return _villadsen1(**params)
    if kind == "villadsen2_skeleton":
        return _villadsen2(**params)
    if kind == "dynamics":
        return _dynamics(**params)
    raise SystemError_(f"unknown example kind {kind!r}")


def _goodearl(base: Graph, points: Sequence[GraphPoint], s: int | Sequence[int],
              levels: int, samples: Sequence[GraphPoint] = ()) -> GenDiagSystem:
    """Identity plus constants at the scheduled points, multiplicity s_n."""
    if levels < 2:
        raise SystemError_("need at least two levels")
    s_list = [s] * (levels - 1) if isinstance(s, int) else list(s)
    if len(s_list) != levels - 1:
        raise SystemError_("schedule length mismatch")
    space = SpaceHandle.graph(base, samples)
    lv = [Level((space,), 1)]
    steps = []
    for n in range(levels - 1):
        sn = s_list[n]
        if sn < 1:
            raise SystemError_("s_n must be >= 1")
        if sn > 1 and not points:
            raise SystemError_(f"cannot realize s_n = {sn} without constant points")
        entries = [YEntry(0, 0, IdentityMap(space), Bundle.trivial(0))]
        x = points[min(n, len(points) - 1)] if points else None
        for k in range(sn - 1):
            entries.append(
                YEntry(0, 0, ConstantMap(space, space, (x,)), Bundle.trivial(k + 1))
            )
        steps.append(Step(sn, tuple(entries)))
        lv.append(Level((space,), lv[-1].rank * sn))
    return GenDiagSystem(lv, steps)


def _villadsen1(seed: Graph, levels: int, projections_per_step: int = 2,
                constants_per_step: int = 1,
                constant_point: GraphPoint | None = None,
                samples: Sequence[GraphPoint] = ()) -> GenDiagSystem:
    """Product powers of a seed graph with disjoint coordinate projections
    plus constant entries; k_{n+1} = projections_per_step * k_n."""
    if constant_point is None:
        e0 = seed.edges[0]
        constant_point = seed.point(e0.id, e0.length / 2)
    sn = projections_per_step + constants_per_step
    k = 1
    spaces = []
    lv = []
    steps = []
    rank = 1
    for n in range(levels):
        tup = tuple(seed for _ in range(k))
        smp = tuple(tuple(p for _ in range(k)) for p in samples)
        spaces.append(SpaceHandle.product(tup, smp))
        lv.append(Level((spaces[-1],), rank))
        rank *= sn
        k *= projections_per_step
    for n in range(levels - 1):
        dom = spaces[n + 1]
        k_lo = len(spaces[n].factors)
        entries = []
        for p in range(projections_per_step):
            idx = tuple(range(p * k_lo, (p + 1) * k_lo))
            entries.append(
                YEntry(0, 0, CoordProjection(dom, idx), Bundle.trivial(p))
            )
        for c in range(constants_per_step):
            entries.append(
                YEntry(
                    0,
                    0,
                    ConstantMap(dom, spaces[n], tuple(constant_point for _ in range(k_lo))),
                    Bundle.trivial(projections_per_step + c),
                )
            )
        steps.append(Step(sn, tuple(entries)))
    return GenDiagSystem(lv, steps)


def _villadsen2(seed: Graph, levels: int, projections_per_step: int = 2,
                constants_per_step: int = 1,
                constant_point: GraphPoint | None = None,
                samples: Sequence[GraphPoint] = ()) -> GenDiagSystem:
    """Villadsen-II skeleton: same map data, symbolic line bundles."""
    base = _villadsen1(seed, levels, projections_per_step, constants_per_step,
                       constant_point, samples)
    steps = []
    for n, st in enumerate(base.steps):
        entries = tuple(
            replace(e, bundle=Bundle.line(f"L{n}.{k}"))
            for k, e in enumerate(st.entries)
        )
        steps.append(Step(st.s, entries))
    return GenDiagSystem(base.levels, steps)


def _dynamics(base: Graph, sigma: PLMap, levels: int, s: int = 2,
              samples: Sequence[GraphPoint] = ()) -> GenDiagSystem:
    """Connecting maps drawn from iterates of a PL surjection."""
    if sigma.domain != base or sigma.codomain != base:
        raise SystemError_("sigma must be a self-map of the base graph")
    if not sigma.image().is_whole_graph():
        raise SystemError_("sigma must be surjective")
    space = SpaceHandle.graph(base, samples)
    iterates = [sigma]
    for _ in range(s - 1):
        iterates.append(iterates[-1].after(sigma))
    lv = [Level((space,), 1)]
    steps = []
    for n in range(levels - 1):
        entries = tuple(
            YEntry(0, 0, PLExprMap(space, space, iterates[k % len(iterates)]),
                   Bundle.trivial(k))
            for k in range(s)
        )
        steps.append(Step(s, entries))
        lv.append(Level((space,), lv[-1].rank * s))
    return GenDiagSystem(lv, steps)


# ---------------------------------------------------------------------------
# approximate intertwining (Lemma-style checker)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteSystemPair:
    blocks: tuple  # level blocks 1..N
    phi: tuple  # DiagonalForm steps, len N-1
    psi: tuple
    generators: tuple  # per level: tuple of Elements

    def __post_init__(self):
        n = len(self.blocks)
        if len(self.phi) != n - 1 or len(self.psi) != n - 1:
            raise SystemError_("need one phi/psi step per consecutive level pair")
        for k, (a, b) in enumerate(zip(self.phi, self.psi)):
            if a.source != self.blocks[k] or a.target != self.blocks[k + 1]:
                raise SystemError_(f"phi step {k} does not match its blocks")
            if not a.same_shape(b):
                raise SystemError_(f"phi/psi step {k} differ in combinatorial type")
        if len(self.generators) != n:
            raise SystemError_("one generator set per level required")


@dataclass(frozen=True)
class LevelVerdict:
    level: int
    threshold: Fraction
    upper: QSqrt
    lower_sq: Fraction
    verdict: str  # "satisfied" | "violated" | "inconclusive"
    containment_ok: bool


@dataclass(frozen=True)
class IntertwiningReport:
    verdicts: tuple
    overall: str

    def satisfied(self) -> bool:
        return self.overall == "satisfied"


def check_approx_intertwining(pair: FiniteSystemPair, depth: int) -> IntertwiningReport:
    """Per level n <= depth: compare certified bounds for
    max_{a in F_n} ||phi_n(a) - psi_n(a)|| against 2^-n.

    'satisfied' needs a certified upper bound strictly below the threshold,
    'violated' a certified lower bound at or above it; anything else is
    'inconclusive'.  Also checks the forward-image containment hypothesis.
    """
    verdicts = []
    n_levels = len(pair.blocks)
    depth = min(depth, n_levels - 1)
    for n in range(1, depth + 1):
        phi_n = pair.phi[n - 1]
        psi_n = pair.psi[n - 1]
        gens = pair.generators[n - 1]
        threshold = Fraction(1, 2 ** n)
        upper = diagform_distance_bound(phi_n, psi_n, gens)
        lower_sq = Fraction(0)
        for a in gens:
            diff = apply_diagform(phi_n, a) - apply_diagform(psi_n, a)
            nb = element_sup_norm_bounds(diff)
            lower_sq = max(lower_sq, nb.lower_sq)
            # sharpen the upper bound with the elementwise estimate
            if nb.upper_sq < upper.sq:
                pass  # keep the Lipschitz bound: it covers all of F_n at once
        containment = _containment_ok(pair, n)
        if lower_sq >= threshold * threshold:
            verdict = "violated"
        elif upper < threshold:
            verdict = "satisfied"
        else:
            verdict = "inconclusive"
        verdicts.append(
            LevelVerdict(n, threshold, upper, lower_sq, verdict, containment)
        )
    if any(v.verdict == "violated" for v in verdicts):
        overall = "violated"
    elif all(v.verdict == "satisfied" and v.containment_ok for v in verdicts):
        overall = "satisfied"
    else:
        overall = "inconclusive"
    return IntertwiningReport(tuple(verdicts), overall)


def _containment_ok(pair: FiniteSystemPair, n: int) -> bool:
    """F_n must contain the phi- and psi-forward images of earlier F_k."""
    target = list(pair.generators[n - 1])
    for k in range(1, n):
        for a in pair.generators[k - 1]:
            for chain in (pair.phi, pair.psi):
                img = a
                for step in chain[k - 1 : n - 1]:
                    img = apply_diagform(step, img)
                if img not in target:
                    return False
    return True
