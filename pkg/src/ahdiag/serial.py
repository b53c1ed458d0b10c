"""The structured text format for system files.

One self-describing line-based format with an explicit version key; all
numbers are exact rationals ``p/q`` and are never parsed as floats.  The
serializer is canonical (sorted sections, fixed orderings), so
serialize(parse(f)) is byte-stable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .ahsys import (
    Bundle,
    CompositeMap,
    ConstantMap,
    CoordProjection,
    FiniteSystemPair,
    GenDiagSystem,
    IdentityMap,
    Level,
    MapExpr,
    PLExprMap,
    SpaceHandle,
    Step,
    SystemError_,
    YEntry,
)
from .blocks import Block, BlockSummand, Element, MatrixPL, mat
from .diagmaps import DiagEntry, DiagonalForm, TargetData
from .exact import CRat, format_rational, parse_crat, parse_rational
from .geometry import CoveringTree, Edge, Graph, GraphPoint, PLMap, Segment

FORMAT_HEADER = "ahdiag-format 1"


class SchemaError(ValueError):
    """Parse or validation failure with line positions."""

    def __init__(self, errors):
        self.errors = list(errors)
        msg = "; ".join(f"line {ln}: {m}" for ln, m in self.errors)
        super().__init__(msg)


@dataclass
class SystemModel:
    graphs: dict = field(default_factory=dict)
    plmaps: dict = field(default_factory=dict)
    coverings: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    elements: dict = field(default_factory=dict)
    element_blocks: dict = field(default_factory=dict)  # element -> block name
    diagforms: dict = field(default_factory=dict)
    diagform_meta: dict = field(default_factory=dict)  # name -> section rows
    gendiags: dict = field(default_factory=dict)
    generators: dict = field(default_factory=dict)  # name -> (block, [elements])
    pairs: dict = field(default_factory=dict)  # name -> dict of name lists
    params: dict = field(default_factory=dict)

    def pair_object(self, name: str) -> FiniteSystemPair:
        refs = self.pairs[name]
        return FiniteSystemPair(
            blocks=tuple(self.blocks[b] for b in refs["blocks"]),
            phi=tuple(self.diagforms[d] for d in refs["phi"]),
            psi=tuple(self.diagforms[d] for d in refs["psi"]),
            generators=tuple(
                tuple(self.elements[e] for e in self.generators[g][1])
                for g in refs["gens"]
            ),
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTION_KINDS = (
    "graph",
    "plmap",
    "covering",
    "block",
    "element",
    "diagform",
    "gendiag",
    "generators",
    "pair",
)


def parse_system(text: str) -> SystemModel:
    """Parse a system document; raises SchemaError with line positions."""
    errors: list = []
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise SchemaError([(1, f"missing header {FORMAT_HEADER!r}")])
    sections = []  # (kind, name, [(lineno, tokens)])
    current = None
    params = {}
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indented = line[0] in " \t"
        tokens = line.split()
        if not indented:
            if tokens[0] == "param":
                if len(tokens) != 3:
                    errors.append((ln, "param needs a key and a value"))
                else:
                    params[tokens[1]] = tokens[2]
                current = None
                continue
            if tokens[0] not in _SECTION_KINDS:
                errors.append((ln, f"unknown section kind {tokens[0]!r}"))
                current = None
                continue
            if len(tokens) != 2:
                errors.append((ln, f"section header needs exactly one name"))
                current = None
                continue
            current = (tokens[0], tokens[1], [])
            sections.append(current)
        else:
            if current is None:
                errors.append((ln, "indented line outside any section"))
            else:
                current[2].append((ln, tokens))
    if errors:
        raise SchemaError(errors)

    model = SystemModel(params=params)
    order = {k: i for i, k in enumerate(_SECTION_KINDS)}
    for kind in _SECTION_KINDS:
        for (k, name, rows) in sections:
            if k != kind:
                continue
            try:
                _PARSERS[kind](model, name, rows, errors)
            except _Bail:
                pass
    if errors:
        raise SchemaError(errors)
    return model


class _Bail(Exception):
    pass


def _fail(errors, ln, msg):
    errors.append((ln, msg))
    raise _Bail


def _rat(errors, ln, tok) -> Fraction:
    try:
        return parse_rational(tok)
    except ValueError as e:
        _fail(errors, ln, str(e))


def _parse_graph(model, name, rows, errors):
    vertices = []
    edges = []
    for ln, t in rows:
        if t[0] == "vertex" and len(t) == 2:
            vertices.append(t[1])
        elif t[0] == "edge" and len(t) == 5:
            edges.append((t[1], t[2], t[3], _rat(errors, ln, t[4])))
        else:
            _fail(errors, ln, f"bad graph row {' '.join(t)!r}")
    try:
        model.graphs[name] = Graph(vertices, edges)
    except ValueError as e:
        _fail(errors, rows[0][0] if rows else 1, str(e))


def _get(model_dict, errors, ln, name, what):
    if name not in model_dict:
        _fail(errors, ln, f"dangling reference: {what} {name!r} is not defined")
    return model_dict[name]


def _parse_point(errors, ln, g: Graph, tok: str) -> GraphPoint:
    try:
        if tok.startswith("@"):
            return g.vertex_point(tok[1:])
        eid, _, coord = tok.partition(":")
        if not coord:
            raise ValueError(f"bad point token {tok!r}")
        return g.point(eid, parse_rational(coord))
    except ValueError as e:
        _fail(errors, ln, str(e))


def _parse_plmap(model, name, rows, errors):
    dom = cod = None
    segs: dict = {}
    for ln, t in rows:
        if t[0] == "from" and len(t) == 2:
            dom = _get(model.graphs, errors, ln, t[1], "graph")
        elif t[0] == "to" and len(t) == 2:
            cod = _get(model.graphs, errors, ln, t[1], "graph")
        elif t[0] == "seg" and len(t) == 8 and t[4] == "->":
            segs.setdefault(t[1], []).append(
                Segment(
                    _rat(errors, ln, t[2]),
                    _rat(errors, ln, t[3]),
                    t[5],
                    _rat(errors, ln, t[6]),
                    _rat(errors, ln, t[7]),
                )
            )
        else:
            _fail(errors, ln, f"bad plmap row {' '.join(t)!r}")
    if dom is None or cod is None:
        _fail(errors, rows[0][0] if rows else 1, "plmap needs 'from' and 'to'")
    try:
        model.plmaps[name] = PLMap(dom, cod, segs)
    except ValueError as e:
        _fail(errors, rows[0][0], str(e))


def _parse_covering(model, name, rows, errors):
    tree = base = proj = None
    for ln, t in rows:
        if t[0] == "tree" and len(t) == 2:
            tree = _get(model.graphs, errors, ln, t[1], "graph")
        elif t[0] == "base" and len(t) == 2:
            base = _get(model.graphs, errors, ln, t[1], "graph")
        elif t[0] == "projection" and len(t) == 2:
            proj = _get(model.plmaps, errors, ln, t[1], "plmap")
        else:
            _fail(errors, ln, f"bad covering row {' '.join(t)!r}")
    if tree is None or base is None or proj is None:
        _fail(errors, rows[0][0] if rows else 1,
              "covering needs tree, base and projection")
    try:
        model.coverings[name] = CoveringTree(tree, base, proj)
    except ValueError as e:
        _fail(errors, rows[0][0], str(e))


def _parse_block(model, name, rows, errors):
    summands = []
    for ln, t in rows:
        if t[0] == "summand" and len(t) == 3:
            g = _get(model.graphs, errors, ln, t[1], "graph")
            summands.append(BlockSummand(g, int(t[2])))
        else:
            _fail(errors, ln, f"bad block row {' '.join(t)!r}")
    try:
        model.blocks[name] = Block(tuple(summands))
    except ValueError as e:
        _fail(errors, rows[0][0] if rows else 1, str(e))


def _parse_matrix(errors, ln, tok: str):
    if not (tok.startswith("[") and tok.endswith("]")):
        _fail(errors, ln, f"bad matrix literal {tok!r}")
    body = tok[1:-1]
    try:
        rows = [
            tuple(parse_crat(x) for x in row.split(",")) for row in body.split(";")
        ]
        return mat(rows)
    except ValueError as e:
        _fail(errors, ln, str(e))


def _parse_element(model, name, rows, errors):
    block = None
    block_name = None
    data: dict = {}
    for ln, t in rows:
        if t[0] == "block" and len(t) == 2:
            block = _get(model.blocks, errors, ln, t[1], "block")
            block_name = t[1]
        elif t[0] == "mat" and len(t) == 5:
            m = _parse_matrix(errors, ln, t[4])
            data.setdefault(int(t[1]), {}).setdefault(t[2], []).append(
                (_rat(errors, ln, t[3]), m)
            )
        else:
            _fail(errors, ln, f"bad element row {' '.join(t)!r}")
    if block is None:
        _fail(errors, rows[0][0] if rows else 1, "element needs a block")
    parts = []
    try:
        for si, summand in enumerate(block.summands):
            edges = {}
            for eid, rws in data.get(si, {}).items():
                rws.sort(key=lambda r: r[0])
                edges[eid] = (
                    tuple(r[0] for r in rws),
                    tuple(r[1] for r in rws),
                )
            parts.append(MatrixPL(summand.base, summand.matrix_size, edges))
        model.elements[name] = Element(block, parts)
        model.element_blocks[name] = block_name
    except ValueError as e:
        _fail(errors, rows[0][0], str(e))


def _parse_diagform(model, name, rows, errors):
    source = target = None
    meta = {"source": None, "target": None, "tsummands": {}, "entries": {}}
    for ln, t in rows:
        if t[0] == "source" and len(t) == 2:
            source = _get(model.blocks, errors, ln, t[1], "block")
            meta["source"] = t[1]
        elif t[0] == "target" and len(t) == 2:
            target = _get(model.blocks, errors, ln, t[1], "block")
            meta["target"] = t[1]
        elif t[0] == "tsummand" and len(t) == 3:
            cov = _get(model.coverings, errors, ln, t[2], "covering")
            meta["tsummands"][int(t[1])] = (t[2], cov)
        elif t[0] == "entry" and len(t) == 4:
            pl = _get(model.plmaps, errors, ln, t[3], "plmap")
            meta["entries"].setdefault(int(t[1]), []).append((int(t[2]), t[3], pl))
        else:
            _fail(errors, ln, f"bad diagform row {' '.join(t)!r}")
    if source is None or target is None:
        _fail(errors, rows[0][0] if rows else 1, "diagform needs source and target")
    targets = []
    try:
        for i in range(len(target.summands)):
            if i not in meta["tsummands"]:
                _fail(errors, rows[0][0], f"missing tsummand {i}")
            _, cov = meta["tsummands"][i]
            entries = tuple(
                DiagEntry(j, pl) for (j, _nm, pl) in meta["entries"].get(i, [])
            )
            targets.append(TargetData(cov, entries))
        model.diagforms[name] = DiagonalForm(source, target, targets)
        model.diagform_meta[name] = meta
    except _Bail:
        raise
    except ValueError as e:
        _fail(errors, rows[0][0], str(e))


def _tokenize_sexpr(errors, ln, toks):
    out = []
    for t in toks:
        t = t.replace("(", " ( ").replace(")", " ) ")
        out.extend(t.split())
    return out


def _parse_mapexpr(model, errors, ln, tokens, dom: SpaceHandle, cod: SpaceHandle):
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            _fail(errors, ln, f"map expression: expected {tok!r}")
        pos += 1

    def parse_expr(d: SpaceHandle, c: SpaceHandle | None) -> MapExpr:
        nonlocal pos
        expect("(")
        if pos >= len(tokens):
            _fail(errors, ln, "map expression truncated")
        head = tokens[pos]
        pos += 1
        if head == "id":
            expect(")")
            return IdentityMap(d)
        if head == "const":
            expect("(")
            pts = []
            target = c if c is not None else d
            k = 0
            while pos < len(tokens) and tokens[pos] != ")":
                if k >= len(target.factors):
                    _fail(errors, ln, "constant arity exceeds codomain")
                pts.append(_parse_point(errors, ln, target.factors[k], tokens[pos]))
                pos += 1
                k += 1
            expect(")")
            expect(")")
            return ConstantMap(d, target, tuple(pts))
        if head == "pl":
            nm = tokens[pos]
            pos += 1
            expect(")")
            pl = _get(model.plmaps, errors, ln, nm, "plmap")
            return PLExprMap(d, c if c is not None else SpaceHandle.graph(pl.codomain), pl)
        if head == "proj":
            idx = []
            while pos < len(tokens) and tokens[pos] != ")":
                idx.append(int(tokens[pos]))
                pos += 1
            expect(")")
            return CoordProjection(d, tuple(idx))
        if head == "comp":
            _fail(errors, ln,
                  "composite map expressions are not stored; compose pl maps "
                  "before writing")
        _fail(errors, ln, f"unknown map expression head {head!r}")

    expr = parse_expr(dom, cod)
    if pos != len(tokens):
        _fail(errors, ln, "trailing tokens in map expression")
    return expr


def _parse_gendiag(model, name, rows, errors):
    level_ranks: dict[int, int] = {}
    level_spaces: dict[int, dict[int, SpaceHandle]] = {}
    level_samples: dict[int, dict[int, list]] = {}
    step_s: dict[int, int] = {}
    step_rows: dict[int, list] = {}
    for ln, t in rows:
        if t[0] == "level" and len(t) == 4 and t[2] == "rank":
            level_ranks[int(t[1])] = int(t[3])
        elif t[0] == "space" and len(t) >= 4:
            n, c = int(t[1]), int(t[2])
            if t[3] == "graph" and len(t) == 5:
                g = _get(model.graphs, errors, ln, t[4], "graph")
                level_spaces.setdefault(n, {})[c] = ("graph", (g,))
            elif t[3] == "product" and len(t) >= 5:
                gs = tuple(
                    _get(model.graphs, errors, ln, nm, "graph") for nm in t[4:]
                )
                level_spaces.setdefault(n, {})[c] = ("product", gs)
            else:
                _fail(errors, ln, f"bad space row {' '.join(t)!r}")
        elif t[0] == "sample" and len(t) >= 4:
            n, c = int(t[1]), int(t[2])
            level_samples.setdefault(n, {}).setdefault(c, []).append((ln, t[3:]))
        elif t[0] == "step" and len(t) == 4 and t[2] == "s":
            step_s[int(t[1])] = int(t[3])
        elif t[0] == "ymap" and len(t) >= 7:
            step_rows.setdefault(int(t[1]), []).append((ln, t[2:]))
        else:
            _fail(errors, ln, f"bad gendiag row {' '.join(t)!r}")
    if not level_ranks:
        _fail(errors, rows[0][0] if rows else 1, "gendiag needs levels")
    n_levels = max(level_ranks) + 1
    levels = []
    spaces_by_level = {}
    for n in range(n_levels):
        if n not in level_ranks or n not in level_spaces:
            _fail(errors, rows[0][0], f"missing level {n} data")
        comp = level_spaces[n]
        spaces = []
        for c in range(len(comp)):
            if c not in comp:
                _fail(errors, rows[0][0], f"missing component {c} of level {n}")
            kind, gs = comp[c]
            sample_rows = level_samples.get(n, {}).get(c, [])
            samples = []
            for (ln, toks) in sample_rows:
                flat = _tokenize_sexpr(errors, ln, toks)
                if flat[0] != "(" or flat[-1] != ")":
                    _fail(errors, ln, "sample tuples are parenthesized")
                pts = []
                for k, tok in enumerate(flat[1:-1]):
                    if k >= len(gs):
                        _fail(errors, ln, "sample arity exceeds the space")
                    pts.append(_parse_point(errors, ln, gs[k], tok))
                samples.append(tuple(pts))
            spaces.append(SpaceHandle(tuple(gs), tuple(samples)))
        spaces_by_level[n] = spaces
        levels.append(Level(tuple(spaces), level_ranks[n]))
    steps = []
    for n in range(n_levels - 1):
        if n not in step_s:
            _fail(errors, rows[0][0], f"missing step {n}")
        entries = []
        for (ln, t) in step_rows.get(n, []):
            tc, sc = int(t[0]), int(t[1])
            if t[2] == "trivial":
                bundle = Bundle.trivial(int(t[3]))
            elif t[2] == "line":
                bundle = Bundle.line(t[3])
            else:
                _fail(errors, ln, f"unknown bundle kind {t[2]!r}")
            dom = spaces_by_level[n + 1][tc]
            cod = spaces_by_level[n][sc]
            toks = _tokenize_sexpr(errors, ln, t[4:])
            expr = _parse_mapexpr(model, errors, ln, toks, dom, cod)
            entries.append(YEntry(tc, sc, expr, bundle))
        steps.append(Step(step_s[n], tuple(entries)))
    try:
        model.gendiags[name] = GenDiagSystem(levels, steps)
    except ValueError as e:
        _fail(errors, rows[0][0], str(e))


def _parse_generators(model, name, rows, errors):
    block = None
    elements = []
    for ln, t in rows:
        if t[0] == "block" and len(t) == 2:
            _get(model.blocks, errors, ln, t[1], "block")
            block = t[1]
        elif t[0] == "element" and len(t) == 2:
            _get(model.elements, errors, ln, t[1], "element")
            elements.append(t[1])
        else:
            _fail(errors, ln, f"bad generators row {' '.join(t)!r}")
    model.generators[name] = (block, elements)


def _parse_pair(model, name, rows, errors):
    refs = {"blocks": [], "phi": [], "psi": [], "gens": []}
    for ln, t in rows:
        if t[0] in refs and len(t) >= 2:
            pool = {
                "blocks": model.blocks,
                "phi": model.diagforms,
                "psi": model.diagforms,
                "gens": model.generators,
            }[t[0]]
            for nm in t[1:]:
                _get(pool, errors, ln, nm, t[0])
            refs[t[0]] = list(t[1:])
        else:
            _fail(errors, ln, f"bad pair row {' '.join(t)!r}")
    model.pairs[name] = refs


_PARSERS = {
    "graph": _parse_graph,
    "plmap": _parse_plmap,
    "covering": _parse_covering,
    "block": _parse_block,
    "element": _parse_element,
    "diagform": _parse_diagform,
    "gendiag": _parse_gendiag,
    "generators": _parse_generators,
    "pair": _parse_pair,
}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt_point(p: GraphPoint) -> str:
    if p.vertex is not None:
        return f"@{p.vertex}"
    return f"{p.edge}:{format_rational(p.coord)}"


def _fmt_matrix(m) -> str:
    return "[" + ";".join(",".join(str(x) for x in row) for row in m) + "]"


def _fmt_mapexpr(expr: MapExpr, names: Mapping) -> str:
    if isinstance(expr, IdentityMap):
        return "(id)"
    if isinstance(expr, ConstantMap):
        pts = " ".join(_fmt_point(p) for p in expr.value)
        return f"(const ({pts}))"
    if isinstance(expr, PLExprMap):
        return f"(pl {names[id(expr.plmap)]})"
    if isinstance(expr, CoordProjection):
        return "(proj " + " ".join(str(k) for k in expr.indices) + ")"
    raise SystemError_("composite map expressions are normalized before writing")


def serialize_system(model: SystemModel) -> str:
    """Canonical text for a model: sorted sections, fixed inner order."""
    out = [FORMAT_HEADER, ""]
    for key in sorted(model.params):
        out.append(f"param {key} {model.params[key]}")
    if model.params:
        out.append("")
    for name in sorted(model.graphs):
        g = model.graphs[name]
        out.append(f"graph {name}")
        for v in g.vertices:
            out.append(f"  vertex {v}")
        for e in g.edges:
            out.append(f"  edge {e.id} {e.u} {e.v} {format_rational(e.length)}")
        out.append("")
    graph_names = {id(g): nm for nm, g in model.graphs.items()}
    for name in sorted(model.plmaps):
        f = model.plmaps[name]
        out.append(f"plmap {name}")
        out.append(f"  from {_graph_name(model, f.domain)}")
        out.append(f"  to {_graph_name(model, f.codomain)}")
        for eid in sorted(f.segments):
            for s in f.segments[eid]:
                out.append(
                    f"  seg {eid} {format_rational(s.lo)} {format_rational(s.hi)}"
                    f" -> {s.target} {format_rational(s.c_lo)} {format_rational(s.c_hi)}"
                )
        out.append("")
    for name in sorted(model.coverings):
        ct = model.coverings[name]
        out.append(f"covering {name}")
        out.append(f"  tree {_graph_name(model, ct.tree)}")
        out.append(f"  base {_graph_name(model, ct.base)}")
        out.append(f"  projection {_plmap_name(model, ct.projection)}")
        out.append("")
    for name in sorted(model.blocks):
        b = model.blocks[name]
        out.append(f"block {name}")
        for s in b.summands:
            out.append(f"  summand {_graph_name(model, s.base)} {s.matrix_size}")
        out.append("")
    for name in sorted(model.elements):
        el = model.elements[name]
        out.append(f"element {name}")
        out.append(f"  block {model.element_blocks[name]}")
        for si, part in enumerate(el.parts):
            for eid in sorted(part.data):
                breaks, mats = part.data[eid]
                for t, m in zip(breaks, mats):
                    out.append(
                        f"  mat {si} {eid} {format_rational(t)} {_fmt_matrix(m)}"
                    )
        out.append("")
    for name in sorted(model.diagforms):
        form = model.diagforms[name]
        out.append(f"diagform {name}")
        out.append(f"  source {_block_name(model, form.source)}")
        out.append(f"  target {_block_name(model, form.target)}")
        for i, td in enumerate(form.targets):
            out.append(f"  tsummand {i} {_covering_name(model, td.covering)}")
        for i, td in enumerate(form.targets):
            for ent in td.entries:
                out.append(
                    f"  entry {i} {ent.source_summand} "
                    f"{_plmap_name(model, ent.eigenvalue_map)}"
                )
        out.append("")
    for name in sorted(model.gendiags):
        sys_ = model.gendiags[name]
        out.append(f"gendiag {name}")
        plnames = {}
        for nm, f in model.plmaps.items():
            plnames[id(f)] = nm
        for n, lv in enumerate(sys_.levels):
            out.append(f"  level {n} rank {lv.rank}")
        for n, lv in enumerate(sys_.levels):
            for c, sp in enumerate(lv.spaces):
                gs = " ".join(_graph_name(model, g) for g in sp.factors)
                kind = "graph" if sp.is_graph else "product"
                out.append(f"  space {n} {c} {kind} {gs}")
                for tup in sp.samples:
                    pts = " ".join(_fmt_point(p) for p in tup)
                    out.append(f"  sample {n} {c} ({pts})")
        for n, st in enumerate(sys_.steps):
            out.append(f"  step {n} s {st.s}")
            for e in st.entries:
                bspec = (
                    f"trivial {e.bundle.slot}"
                    if e.bundle.kind == "trivial"
                    else f"line {e.bundle.tag}"
                )
                expr = _fmt_mapexpr(e.map.normalized(), plnames)
                out.append(
                    f"  ymap {n} {e.target_component} {e.source_component} "
                    f"{bspec} {expr}"
                )
        out.append("")
    for name in sorted(model.generators):
        block, els = model.generators[name]
        out.append(f"generators {name}")
        out.append(f"  block {block}")
        for el in els:
            out.append(f"  element {el}")
        out.append("")
    for name in sorted(model.pairs):
        refs = model.pairs[name]
        out.append(f"pair {name}")
        for key in ("blocks", "phi", "psi", "gens"):
            if refs[key]:
                out.append(f"  {key} " + " ".join(refs[key]))
        out.append("")
    return "\n".join(out).rstrip("\n") + "\n"


def _graph_name(model, g: Graph) -> str:
    for nm, x in model.graphs.items():
        if x == g:
            return nm
    raise SystemError_("graph is not registered in the model")


def _plmap_name(model, f: PLMap) -> str:
    for nm, x in model.plmaps.items():
        if x == f:
            return nm
    raise SystemError_("plmap is not registered in the model")


def _block_name(model, b: Block) -> str:
    for nm, x in model.blocks.items():
        if x == b:
            return nm
    raise SystemError_("block is not registered in the model")


def _covering_name(model, ct: CoveringTree) -> str:
    for nm, x in model.coverings.items():
        if x == ct:
            return nm
    raise SystemError_("covering is not registered in the model")


# -- registration helpers ------------------------------------------------------


def register_graph(model: SystemModel, name: str, g: Graph) -> str:
    for nm, x in model.graphs.items():
        if x == g:
            return nm
    model.graphs[name] = g
    return name


def register_plmap(model: SystemModel, name: str, f: PLMap) -> str:
    for nm, x in model.plmaps.items():
        if x == f:
            return nm
    register_graph(model, f"{name}.dom", f.domain)
    register_graph(model, f"{name}.cod", f.codomain)
    model.plmaps[name] = f
    return name


def register_covering(model: SystemModel, name: str, ct: CoveringTree) -> str:
    for nm, x in model.coverings.items():
        if x == ct:
            return nm
    register_graph(model, f"{name}.tree", ct.tree)
    register_graph(model, f"{name}.base", ct.base)
    register_plmap(model, f"{name}.proj", ct.projection)
    model.coverings[name] = ct
    return name


def register_block(model: SystemModel, name: str, b: Block) -> str:
    for nm, x in model.blocks.items():
        if x == b:
            return nm
    for k, s in enumerate(b.summands):
        register_graph(model, f"{name}.Z{k}", s.base)
    model.blocks[name] = b
    return name


def register_diagform(model: SystemModel, name: str, form: DiagonalForm) -> str:
    register_block(model, f"{name}.src", form.source)
    register_block(model, f"{name}.tgt", form.target)
    for i, td in enumerate(form.targets):
        register_covering(model, f"{name}.D{i}", td.covering)
        for s, ent in enumerate(td.entries):
            register_plmap(model, f"{name}.lam{i}.{s}", ent.eigenvalue_map)
    model.diagforms[name] = form
    return name


def register_gendiag(model: SystemModel, name: str, sys_: GenDiagSystem) -> str:
    for n, lv in enumerate(sys_.levels):
        for c, sp in enumerate(lv.spaces):
            for k, g in enumerate(sp.factors):
                register_graph(model, f"{name}.L{n}.{c}.{k}", g)
    for n, st in enumerate(sys_.steps):
        for y, ent in enumerate(st.entries):
            expr = ent.map.normalized()
            if isinstance(expr, PLExprMap):
                register_plmap(model, f"{name}.y{n}.{y}", expr.plmap)
    model.gendiags[name] = sys_
    return name
