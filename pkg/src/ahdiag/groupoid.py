"""Finite-depth truncations of the limit groupoid of a trivial-bundle system.

A depth-m stage over base level n enumerates arrows (z, w, k0, l0) for
sampled base points z of level n+m, level-compatible y-words w of length m,
and matrix indices k0, l0 in {1..r_n}.  Stage combinatorics are exact; no
claim is made about the limit topology beyond the sampled points.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .ahsys import (
    GenDiagSystem,
    SystemError_,
    compatible_words,
    composite_eigenvalue,
    is_trivial_bundle,
)
from .geometry import Graph, GraphPoint, point_distance


class GroupoidError(ValueError):
    """Invalid stage construction or composition."""


@dataclass(frozen=True)
class Arrow:
    component: int  # component of Z_{n+m} the base point lives in
    z: tuple  # sample point tuple
    word: tuple  # entry indices, levels n .. n+m-1 (outer first)
    k: int  # range index in {1..r_n}
    l: int  # source index in {1..r_n}

    def is_unit(self) -> bool:
        return self.k == self.l

    def inverse(self) -> "Arrow":
        return Arrow(self.component, self.z, self.word, self.l, self.k)


@dataclass(frozen=True)
class GroupoidStage:
    sys: GenDiagSystem
    n: int
    m: int
    samples: tuple  # tuple of (component, point tuple)
    arrows: tuple
    r_n: int

    def units(self):
        return tuple(a for a in self.arrows if a.is_unit())

    def arrows_at(self, component: int, z: tuple):
        return tuple(a for a in self.arrows if a.component == component and a.z == z)


def build_stage(sys: GenDiagSystem, n: int, m: int, samples) -> GroupoidStage:
    """Enumerate the depth-m stage over the sampled level-(n+m) points."""
    if not is_trivial_bundle(sys):
        raise GroupoidError(
            "stage construction needs a trivial-bundle system; run untwist first"
        )
    if not (0 <= n < len(sys.levels) and n + m < len(sys.levels)):
        raise GroupoidError("levels out of range")
    r_n = sys.levels[n].rank
    srows = []
    for item in samples:
        comp, z = item
        srows.append((comp, tuple(z)))
    arrows = []
    for comp, z in srows:
        words = compatible_words(sys, n, m, comp)
        for w in words:
            for k in range(1, r_n + 1):
                for l in range(1, r_n + 1):
                    arrows.append(Arrow(comp, z, w, k, l))
    return GroupoidStage(sys, n, m, tuple(srows), tuple(arrows), r_n)


def default_samples(sys: GenDiagSystem, level: int):
    """Sample tuples declared on the level's component spaces."""
    out = []
    for comp, space in enumerate(sys.levels[level].spaces):
        for tup in space.samples:
            out.append((comp, tup))
    return out


def compose_arrows(stage: GroupoidStage, g: Arrow, h: Arrow) -> Arrow:
    """Pair-groupoid composition: (z,w,k,l) ∘ (z,w,l,l') = (z,w,k,l')."""
    if (g.component, g.z, g.word) != (h.component, h.z, h.word):
        raise GroupoidError("arrows live over different units")
    if g.l != h.k:
        raise GroupoidError("source of g does not match range of h")
    return Arrow(g.component, g.z, g.word, g.k, h.l)


def project_arrow(stage: GroupoidStage, a: Arrow):
    """Image of an arrow in the base-level groupoid: evaluated composite
    point plus the untouched matrix indices."""
    if stage.m == 0:
        return (a.component, a.z, a.k, a.l)
    expr = composite_eigenvalue(stage.sys, stage.n, list(a.word))
    value = expr.eval(a.z)
    comp0 = stage.sys.steps[stage.n].entries[a.word[0]].source_component
    return (comp0, value, a.k, a.l)


# -- embeddings and orbits ----------------------------------------------------


def _entry_rank_in_component(sys: GenDiagSystem, level: int, entry_idx: int) -> int:
    ent = sys.steps[level].entries[entry_idx]
    rank = 0
    for idx, e in enumerate(sys.steps[level].entries):
        if e.target_component == ent.target_component:
            if idx == entry_idx:
                return rank
            rank += 1
    raise GroupoidError("entry not found in its component")


def _entries_into(sys: GenDiagSystem, level: int, component: int):
    return [
        (idx, e)
        for idx, e in enumerate(sys.steps[level].entries)
        if e.target_component == component
    ]


def reindex_to_base(sys: GenDiagSystem, n: int, view_base: int, k: int,
                    component_at_n: int):
    """Decompose k in {1..r_n} as (k' in {1..r_view}, extension word).

    The identification is lexicographic with k' major, matching the fixed
    block order of the matrix-unit isomorphism; the extension word chains
    levels view_base .. n-1 and ends at the given level-n component.
    """
    if view_base > n:
        raise GroupoidError("view base must not exceed the stage base")
    idx = k - 1
    word = []
    comp = component_at_n
    for level in range(n - 1, view_base - 1, -1):
        ents = _entries_into(sys, level, comp)
        s = len(ents)
        if s == 0:
            raise GroupoidError("no entries into the component; system not unital")
        rank_in_comp = idx % s
        idx //= s
        entry_idx, ent = ents[rank_in_comp]
        word.insert(0, entry_idx)
        comp = ent.source_component
    return idx + 1, tuple(word), comp


@dataclass(frozen=True)
class OrbitReport:
    view_base: int
    orbits: tuple  # ((component, z, full word), unit k' indices)
    sizes: tuple
    representatives: tuple  # evaluated composite values per orbit


def orbit(stage: GroupoidStage, unit: Arrow, view_base: int) -> OrbitReport:
    """Orbit of a unit when the stage is re-indexed at a lower base level."""
    if not unit.is_unit():
        raise GroupoidError("orbit is defined for units")
    sys = stage.sys
    comp_n = (
        sys.steps[stage.n].entries[unit.word[0]].source_component
        if stage.m > 0
        else unit.component
    )
    kprime, ext, comp_view = reindex_to_base(sys, stage.n, view_base, unit.k, comp_n)
    full = ext + unit.word
    members = []
    r_view = sys.levels[view_base].rank
    for a in stage.arrows:
        if not a.is_unit() or (a.component, a.z) != (unit.component, unit.z):
            continue
        kp, ex, _ = reindex_to_base(sys, stage.n, view_base, a.k, comp_n)
        if a.word == unit.word and ex == ext:
            members.append((a, kp))
    sizes = (len(members),)
    rep = None
    if full:
        expr = composite_eigenvalue(sys, view_base, list(full))
        rep = expr.eval(unit.z)
    return OrbitReport(
        view_base,
        (((unit.component, unit.z, full), tuple(kp for _, kp in members)),),
        sizes,
        (rep,),
    )


def orbit_partition(stage: GroupoidStage, view_base: int) -> OrbitReport:
    """Partition of all stage units by (z, word extended to the view base)."""
    sys = stage.sys
    buckets: dict = {}
    for a in stage.arrows:
        if not a.is_unit():
            continue
        comp_n = (
            sys.steps[stage.n].entries[a.word[0]].source_component
            if stage.m > 0
            else a.component
        )
        kp, ext, _ = reindex_to_base(sys, stage.n, view_base, a.k, comp_n)
        key = (a.component, a.z, ext + a.word)
        buckets.setdefault(key, []).append(kp)
    orbits = tuple(sorted((k, tuple(sorted(v))) for k, v in buckets.items()))
    sizes = tuple(len(v) for _, v in orbits)
    reps = []
    for (comp, z, word), _ in orbits:
        if word:
            reps.append(composite_eigenvalue(sys, view_base, list(word)).eval(z))
        else:
            reps.append(z)
    return OrbitReport(view_base, orbits, sizes, tuple(reps))


# -- structural checks ---------------------------------------------------------


@dataclass(frozen=True)
class FibrewiseReport:
    bijective: bool
    surjective: bool
    details: tuple


def check_fibrewise_bijective(sys: GenDiagSystem, n: int, samples=None) -> FibrewiseReport:
    """The one-step projection restricted to each source fiber is the
    identity on matrix indices (structural for trivial bundles); its
    surjectivity onto level n means exact image coverage."""
    if not is_trivial_bundle(sys):
        raise GroupoidError("run untwist first")
    from .ahsys import gendiag_check

    rep = gendiag_check(sys)
    rows = [row for (lvl, row) in rep.coverage if lvl == n]
    surj = all(row.status == "covered" for row in rows)
    details = tuple((row.component, row.status, row.detail) for row in rows)
    return FibrewiseReport(bijective=True, surjective=surj, details=details)


@dataclass(frozen=True)
class DensityRow:
    depth: int
    passed: bool
    uncovered: tuple  # net points with no value within epsilon


@dataclass(frozen=True)
class DensityReport:
    epsilon: Fraction
    rows: tuple
    passed_at: int | None  # smallest depth that passed, if any


def density_report(sys: GenDiagSystem, n: int, epsilon, max_m: int) -> DensityReport:
    """Test epsilon-density of composite values in the level-n spaces.

    Uses a fixed net of spacing epsilon/2 per edge; verdicts are per depth,
    and failure at max_m only means density was not detected up to there.
    """
    epsilon = Fraction(epsilon)
    for space in sys.levels[n].spaces:
        if not space.is_graph:
            raise GroupoidError("density diagnostics need graph-kind level spaces")
    nets = [
        _edge_net(space.factors[0], epsilon / 2)
        for space in sys.levels[n].spaces
    ]
    rows = []
    passed_at = None
    for m in range(0, max_m + 1):
        if n + m >= len(sys.levels):
            break
        values: dict[int, list] = {c: [] for c in range(len(sys.levels[n].spaces))}
        for comp, z in default_samples(sys, n + m):
            words = compatible_words(sys, n, m, comp)
            for w in words:
                if w:
                    expr = composite_eigenvalue(sys, n, list(w))
                    val = expr.eval(z)
                    comp0 = sys.steps[n].entries[w[0]].source_component
                else:
                    val, comp0 = z, comp
                values[comp0].append(val[0])
        uncovered = []
        for c, net in enumerate(nets):
            g = sys.levels[n].spaces[c].factors[0]
            vals = values[c]
            for q in net:
                if not any(point_distance(g, q, v) <= epsilon for v in vals):
                    uncovered.append((c, q))
        ok = not uncovered
        rows.append(DensityRow(m, ok, tuple(uncovered[:8])))
        if ok and passed_at is None:
            passed_at = m
    return DensityReport(epsilon, tuple(rows), passed_at)


def _edge_net(g: Graph, spacing: Fraction):
    pts = [g.vertex_point(v) for v in g.vertices]
    for e in g.edges:
        k = 1
        while k * spacing < e.length:
            pts.append(g.point(e.id, k * spacing))
            k += 1
    # dedupe canonically
    out = []
    seen = set()
    for p in pts:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


# -- export ---------------------------------------------------------------------


def export_stage_dot(stage: GroupoidStage) -> str:
    """Deterministic DOT digraph of the stage: units as nodes, arrows as
    edges from source unit to range unit."""
    lines = ["digraph stage {"]
    node_ids = {}

    def fmt_point(z):
        return ",".join(str(p) for p in z)

    units = sorted(
        (a for a in stage.arrows if a.is_unit()),
        key=lambda a: (a.component, tuple(p.sort_key() for p in a.z), a.word, a.k),
    )
    for idx, u in enumerate(units):
        node_ids[(u.component, u.z, u.word, u.k)] = f"n{idx}"
        label = f"c{u.component}|{fmt_point(u.z)}|w={'.'.join(map(str, u.word))}|k={u.k}"
        lines.append(f'  n{idx} [label="{label}"];')
    arrows = sorted(
        stage.arrows,
        key=lambda a: (a.component, tuple(p.sort_key() for p in a.z), a.word, a.k, a.l),
    )
    for a in arrows:
        src = node_ids[(a.component, a.z, a.word, a.l)]
        dst = node_ids[(a.component, a.z, a.word, a.k)]
        lines.append(f"  {src} -> {dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
