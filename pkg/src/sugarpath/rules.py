"""Reaction templates and reaction-center enumeration.

A template is one or two connected atom patterns plus an edit script. Every
injective, constraint-satisfying placement of the patterns is a candidate
reaction center; placements related by a molecular automorphism share a
``site_key`` and collapse to one :class:`Match`.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .molgraph import (
    Atom,
    Bond,
    MolGraph,
    ValenceError,
    canonical_smiles,
    disjoint_union,
    fnv1a,
    parse_smiles,
    valence,
)

log = logging.getLogger(__name__)

MAX_PATTERN_ATOMS = 8
WATER = "O"
HYDRONIUM = "[OH3+]"
AUXILIARY = frozenset({WATER, HYDRONIUM})


class CatalogError(ValueError):
    """Malformed rule catalog text."""


class EditConflict(ValueError):
    """Edit script is structurally inapplicable at a placement (e.g. bond exists)."""


class TemplateError(RuntimeError):
    """A template produced an invalid product; the template is wrong, not the input."""


class StaleMatchError(ValueError):
    pass


@dataclass(frozen=True)
class AtomConstraint:
    element: str = "*"
    charge: int | None = None
    h_min: int = 0
    h_max: int | None = None
    degree_min: int = 0
    degree_max: int | None = None
    ring: bool | None = None
    o_neighbors: int | None = None

    def accepts(self, mol: MolGraph, i: int) -> bool:
        atom = mol.atoms[i]
        if self.element != "*" and atom.element != self.element:
            return False
        if self.charge is not None and atom.formal_charge != self.charge:
            return False
        if atom.implicit_h < self.h_min or (self.h_max is not None and atom.implicit_h > self.h_max):
            return False
        deg = mol.degree(i)
        if deg < self.degree_min or (self.degree_max is not None and deg > self.degree_max):
            return False
        if self.ring is not None and mol.in_ring(i) != self.ring:
            return False
        if self.o_neighbors is not None:
            n_o = sum(1 for j in mol.neighbors(i) if mol.atoms[j].element == "O")
            if n_o != self.o_neighbors:
                return False
        return True


@dataclass(frozen=True)
class BondConstraint:
    a: int
    b: int
    order: int = 0  # 0 matches any order
    ring_sizes: frozenset[int] | None = None  # smallest ring through the bond

    def accepts(self, mol: MolGraph, i: int, j: int) -> bool:
        order = mol.bond_order(i, j)
        if not order or (self.order and order != self.order):
            return False
        if self.ring_sizes is not None:
            return mol.smallest_ring_through(i, j) in self.ring_sizes
        return True


@dataclass(frozen=True)
class Pattern:
    atoms: tuple[AtomConstraint, ...]
    bonds: tuple[BondConstraint, ...] = ()

    def __post_init__(self):
        n = len(self.atoms)
        if not 1 <= n <= MAX_PATTERN_ATOMS:
            raise CatalogError(f"pattern must have 1..{MAX_PATTERN_ATOMS} atoms, got {n}")
        adj = {i: set() for i in range(n)}
        for b in self.bonds:
            if not (0 <= b.a < n and 0 <= b.b < n) or b.a == b.b:
                raise CatalogError(f"bad pattern bond {b.a}-{b.b}")
            adj[b.a].add(b.b)
            adj[b.b].add(b.a)
        seen = {0}
        stack = [0]
        while stack:
            for v in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != n:
            raise CatalogError("pattern is not connected")

    @property
    def size(self) -> int:
        return len(self.atoms)

    def search_order(self) -> list[int]:
        """BFS order from atom 0; every later atom has an earlier neighbor."""
        order = [0]
        for u in order:
            for b in self.bonds:
                for x, y in ((b.a, b.b), (b.b, b.a)):
                    if x == u and y not in order:
                        order.append(y)
        return order


@dataclass(frozen=True)
class Edit:
    op: str
    args: tuple

    def __str__(self) -> str:
        return " ".join([self.op, *map(str, self.args)])


_EDIT_ARITY = {
    "add_bond": 3,
    "remove_bond": 2,
    "set_bond": 3,
    "set_charge": 2,
    "add_h": 2,
    "attach": 3,
    "emit": 2,
}


@dataclass(frozen=True)
class ReactionTemplate:
    id: str
    name: str
    patterns: tuple[Pattern, ...]
    edits: tuple[Edit, ...]
    consumes: tuple[str, ...] = ()
    produces: tuple[str, ...] = ()
    reverse: str | None = None
    new_ring_sizes: frozenset[int] | None = None
    flags: tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self):
        if not 1 <= len(self.patterns) <= 2:
            raise CatalogError(f"{self.id}: templates take one or two reactant patterns")
        for e in self.edits:
            if e.op not in _EDIT_ARITY:
                raise CatalogError(f"{self.id}: unknown edit {e.op!r}")
            if len(e.args) != _EDIT_ARITY[e.op]:
                raise CatalogError(f"{self.id}: edit {e} takes {_EDIT_ARITY[e.op]} arguments")

    @property
    def n_pattern_atoms(self) -> int:
        return sum(p.size for p in self.patterns)

    @property
    def emitted(self) -> tuple[str, ...]:
        return tuple(e.args[1] for e in self.edits if e.op == "emit")

    @property
    def produces_aux(self) -> tuple[str, ...]:
        """Auxiliary species released: declared outright plus emitted fragments."""
        return tuple(sorted(self.produces + self.emitted))

    @property
    def consumes_aux(self) -> tuple[str, ...]:
        return tuple(sorted(self.consumes))


@dataclass(frozen=True)
class Match:
    template_id: str
    mapping: tuple[int, ...]  # pattern atom -> atom index in the reactant union
    site_key: str


@dataclass(frozen=True)
class Application:
    """Full result of running an edit script."""

    products: tuple[MolGraph, ...]
    aux_consumed: tuple[str, ...]
    aux_produced: tuple[str, ...]


# -- matching ------------------------------------------------------------


def _placements(template: ReactionTemplate, union: MolGraph, offsets: list[int], sizes: list[int]):
    """Yield every injective constraint-satisfying placement of all patterns."""
    # flatten patterns into one index space
    constraints: list[AtomConstraint] = []
    owner: list[int] = []
    bonds_by_atom: dict[int, list[tuple[int, BondConstraint]]] = {}
    order: list[int] = []
    base = 0
    for k, pat in enumerate(template.patterns):
        constraints.extend(pat.atoms)
        owner.extend([k] * pat.size)
        for b in pat.bonds:
            bonds_by_atom.setdefault(base + b.a, []).append((base + b.b, b))
            bonds_by_atom.setdefault(base + b.b, []).append((base + b.a, b))
        order.extend(base + i for i in pat.search_order())
        base += pat.size

    mapping: list[int | None] = [None] * base
    used: set[int] = set()

    def candidates(p: int):
        for q, _ in bonds_by_atom.get(p, ()):
            if mapping[q] is not None:
                return union.neighbors(mapping[q])
        k = owner[p]
        return range(offsets[k], offsets[k] + sizes[k])

    def feasible(p: int, t: int) -> bool:
        if t in used or not constraints[p].accepts(union, t):
            return False
        for q, bc in bonds_by_atom.get(p, ()):
            if mapping[q] is None:
                continue
            if not bc.accepts(union, t, mapping[q]):
                return False
        return True

    def extend(depth: int):
        if depth == len(order):
            yield tuple(mapping)  # type: ignore[arg-type]
            return
        p = order[depth]
        for t in sorted(candidates(p)):
            if feasible(p, t):
                mapping[p] = t
                used.add(t)
                yield from extend(depth + 1)
                used.discard(t)
                mapping[p] = None

    yield from extend(0)


def _site_key(template: ReactionTemplate, reactants: Sequence[MolGraph], offsets, mapping) -> str:
    parts = []
    for k, mol in enumerate(reactants):
        labels = {}
        for p, t in enumerate(mapping):
            if offsets[k] <= t < offsets[k] + mol.n_atoms:
                labels[t - offsets[k]] = p + 1
        parts.append(canonical_smiles(mol, labels))
    return ".".join(parts)


def find_matches(template: ReactionTemplate, *reactants: MolGraph) -> list[Match]:
    """All distinct reaction centers of ``template`` on ``reactants``.

    Placements whose edits are structurally impossible (e.g. closing a bond
    that already exists, or forming a ring of a disallowed size) are dropped.
    Result is sorted by ``site_key``.
    """
    if len(reactants) != len(template.patterns):
        raise ValueError(
            f"template {template.id} takes {len(template.patterns)} reactant(s), got {len(reactants)}"
        )
    union, offsets = disjoint_union(reactants)
    sizes = [m.n_atoms for m in reactants]
    found: dict[str, Match] = {}
    for mapping in _placements(template, union, offsets, sizes):
        key = _site_key(template, reactants, offsets, mapping)
        if key in found:
            continue
        try:
            _execute(template, union, mapping)
        except EditConflict:
            continue
        found[key] = Match(template.id, mapping, key)
    return [found[k] for k in sorted(found)]


# -- applying ------------------------------------------------------------


def _ref(token, new_atoms: list[int], mapping) -> int:
    if isinstance(token, str) and token.startswith("n"):
        return new_atoms[int(token[1:])]
    return mapping[int(token)]


def _execute(template: ReactionTemplate, union: MolGraph, mapping) -> Application:
    elements = [a.element for a in union.atoms]
    charges = [a.formal_charge for a in union.atoms]
    hs = [a.implicit_h for a in union.atoms]
    bonds = {(b.a, b.b): b.order for b in union.bonds}
    new_atoms: list[int] = []
    emitted: list[int] = []
    added: list[tuple[int, int]] = []
    consumed_graphs = [parse_smiles(s) for s in template.consumes]

    def key(i, j):
        return (i, j) if i < j else (j, i)

    for edit in template.edits:
        op, args = edit.op, edit.args
        if op in ("add_bond", "remove_bond", "set_bond"):
            i = _ref(args[0], new_atoms, mapping)
            j = _ref(args[1], new_atoms, mapping)
            k = key(i, j)
            if op == "add_bond":
                if k in bonds:
                    raise EditConflict(f"bond {k} already present")
                bonds[k] = int(args[2])
                added.append(k)
            elif op == "remove_bond":
                if k not in bonds:
                    raise EditConflict(f"bond {k} missing")
                del bonds[k]
            else:
                if k not in bonds:
                    raise EditConflict(f"bond {k} missing")
                bonds[k] = int(args[2])
        elif op == "set_charge":
            charges[_ref(args[0], new_atoms, mapping)] = int(args[1])
        elif op == "add_h":
            hs[_ref(args[0], new_atoms, mapping)] += int(args[1])
        elif op == "attach":
            i = _ref(args[0], new_atoms, mapping)
            aux = consumed_graphs[int(args[1])]
            if aux.n_atoms != 1:
                raise TemplateError(f"{template.id}: only single-atom species can be attached")
            atom = aux.atoms[0]
            elements.append(atom.element)
            charges.append(atom.formal_charge)
            hs.append(atom.implicit_h)
            t = len(elements) - 1
            new_atoms.append(t)
            bonds[key(i, t)] = int(args[2])
            added.append(key(i, t))
        elif op == "emit":
            emitted.append(_ref(args[0], new_atoms, mapping))

    for i, h in enumerate(hs):
        if h < 0:
            raise TemplateError(f"{template.id}: negative hydrogen count on atom {i}")
    try:
        atoms = [Atom(e, c, h) for e, c, h in zip(elements, charges, hs)]
        result = MolGraph(atoms, [Bond(a, b, o) for (a, b), o in sorted(bonds.items())])
    except ValenceError as exc:
        raise TemplateError(f"{template.id}: product violates valence ({exc})") from exc
    except ValueError as exc:
        raise TemplateError(f"{template.id}: invalid product ({exc})") from exc

    if template.new_ring_sizes is not None:
        for i, j in added:
            if result.smallest_ring_through(i, j) not in template.new_ring_sizes:
                raise EditConflict(f"new bond {i}-{j} closes a ring of a disallowed size")

    comps = result.components()
    products = []
    produced = list(template.produces)
    emitted_comps = {next(c for c in comps if x in c)[0] for x in emitted}
    for comp in comps:
        sub = result.subgraph(comp)
        if comp[0] in emitted_comps:
            produced.append(canonical_smiles(sub))
        else:
            products.append(sub)
    products.sort(key=canonical_smiles)
    return Application(tuple(products), tuple(sorted(template.consumes)), tuple(sorted(produced)))


def balance_delta(reactants: Iterable[MolGraph], app: Application) -> Counter:
    """Element/H/charge difference (left minus right); empty when balanced."""
    left: Counter = Counter()
    right: Counter = Counter()
    for m in reactants:
        left.update(m.formula())
        left["charge"] += m.charge
    for s in app.aux_consumed:
        m = parse_smiles(s)
        left.update(m.formula())
        left["charge"] += m.charge
    for m in app.products:
        right.update(m.formula())
        right["charge"] += m.charge
    for s in app.aux_produced:
        m = parse_smiles(s)
        right.update(m.formula())
        right["charge"] += m.charge
    delta = Counter(left)
    delta.subtract(right)
    return Counter({k: v for k, v in delta.items() if v})


def apply_full(template: ReactionTemplate, reactants: Sequence[MolGraph], match: Match) -> Application:
    """Apply at ``match``, returning products plus auxiliary bookkeeping."""
    if match.template_id != template.id:
        raise StaleMatchError(f"match is for {match.template_id}, not {template.id}")
    if len(reactants) != len(template.patterns):
        raise StaleMatchError("reactant count does not fit the template")
    union, offsets = disjoint_union(reactants)
    if len(match.mapping) != template.n_pattern_atoms or any(
        t >= union.n_atoms for t in match.mapping
    ):
        raise StaleMatchError("match does not fit these reactants")
    if _site_key(template, reactants, offsets, match.mapping) != match.site_key:
        raise StaleMatchError("match was computed on different reactants")
    # constraints must still hold
    base = 0
    for pat in template.patterns:
        for p, c in enumerate(pat.atoms):
            if not c.accepts(union, match.mapping[base + p]):
                raise StaleMatchError("atom constraint no longer satisfied")
        for b in pat.bonds:
            if not b.accepts(union, match.mapping[base + b.a], match.mapping[base + b.b]):
                raise StaleMatchError("bond constraint no longer satisfied")
        base += pat.size
    app = _execute(template, union, match.mapping)
    delta = balance_delta(reactants, app)
    if delta:
        raise TemplateError(f"{template.id}: unbalanced application {dict(delta)}")
    return app


def apply(template: ReactionTemplate, reactants: Sequence[MolGraph], match: Match) -> list[MolGraph]:
    """Principal products of ``template`` applied at ``match``."""
    return list(apply_full(template, reactants, match).products)


@dataclass(frozen=True)
class InstantiatedReaction:
    template_id: str
    site_key: str
    reactant_ids: tuple[int, ...]
    products: tuple[MolGraph, ...]
    aux_consumed: tuple[str, ...] = ()
    aux_produced: tuple[str, ...] = ()

    @property
    def product_keys(self) -> tuple[str, ...]:
        return tuple(canonical_smiles(p) for p in self.products)


def enumerate_reactions(
    ruleset: Sequence[ReactionTemplate],
    species: Sequence[MolGraph],
    aux_available: Iterable[str] | None = None,
) -> list[InstantiatedReaction]:
    """Every reaction available from ``species`` (indexed by position).

    ``aux_available`` lists the auxiliary species a reaction may draw on; None
    means an inexhaustible aqueous pool. Two-pattern templates are tried on
    every ordered pair of distinct species.
    """
    avail = None if aux_available is None else Counter(aux_available)
    out = []
    for tpl in ruleset:
        if avail is not None:
            need = Counter(tpl.consumes)
            if any(avail[s] < k for s, k in need.items()):
                continue
        if len(tpl.patterns) == 1:
            groups = [(i,) for i in range(len(species))]
        else:
            groups = [(i, j) for i in range(len(species)) for j in range(len(species)) if i != j]
        for ids in groups:
            mols = [species[i] for i in ids]
            for m in find_matches(tpl, *mols):
                app = apply_full(tpl, mols, m)
                out.append(
                    InstantiatedReaction(
                        tpl.id, m.site_key, ids, app.products, app.aux_consumed, app.aux_produced
                    )
                )
    keys = [canonical_smiles(s) for s in species]
    out.sort(key=lambda r: (r.template_id, r.site_key, tuple(keys[i] for i in r.reactant_ids)))
    return out


# -- catalog I/O ---------------------------------------------------------


def _parse_atom(tokens: list[str], lineno: int) -> AtomConstraint:
    kw = {"element": tokens[0]}
    if tokens[0] not in ("C", "O", "*"):
        raise CatalogError(f"line {lineno}: unknown element {tokens[0]!r}")
    for tok in tokens[1:]:
        if ">=" in tok:
            name, val = tok.split(">=")
            if name == "h":
                kw["h_min"] = int(val)
            elif name == "degree":
                kw["degree_min"] = int(val)
            else:
                raise CatalogError(f"line {lineno}: bad constraint {tok!r}")
            continue
        if "=" not in tok:
            raise CatalogError(f"line {lineno}: bad constraint {tok!r}")
        name, val = tok.split("=", 1)
        if name == "charge":
            kw["charge"] = int(val)
        elif name == "h":
            kw["h_min"] = kw["h_max"] = int(val)
        elif name == "degree":
            kw["degree_min"] = kw["degree_max"] = int(val)
        elif name == "ring":
            if val not in ("yes", "no"):
                raise CatalogError(f"line {lineno}: ring must be yes or no")
            kw["ring"] = val == "yes"
        elif name == "onbr":
            kw["o_neighbors"] = int(val)
        else:
            raise CatalogError(f"line {lineno}: unknown constraint {name!r}")
    return AtomConstraint(**kw)


def _format_atom(c: AtomConstraint) -> str:
    parts = [c.element]
    if c.charge is not None:
        parts.append(f"charge={c.charge}")
    if c.h_max is not None and c.h_max == c.h_min:
        parts.append(f"h={c.h_min}")
    elif c.h_min:
        parts.append(f"h>={c.h_min}")
    if c.degree_max is not None and c.degree_max == c.degree_min:
        parts.append(f"degree={c.degree_min}")
    elif c.degree_min:
        parts.append(f"degree>={c.degree_min}")
    if c.ring is not None:
        parts.append("ring=yes" if c.ring else "ring=no")
    if c.o_neighbors is not None:
        parts.append(f"onbr={c.o_neighbors}")
    return " ".join(parts)


def _sizes(text: str) -> frozenset[int]:
    return frozenset(int(x) for x in text.split(","))


def parse_catalog(text: str) -> list[ReactionTemplate]:
    """Parse rule catalog text (format in ``docs/rule_catalog.md``)."""
    templates = []
    cur: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        if word == "template":
            if cur is not None:
                raise CatalogError(f"line {lineno}: 'template' inside an open record")
            cur = {"id": rest, "name": "", "patterns": [], "edits": [], "consumes": [],
                   "produces": [], "reverse": None, "rings": None, "flags": [], "note": ""}
            continue
        if cur is None:
            raise CatalogError(f"line {lineno}: {word!r} outside a template record")
        if word == "end":
            patterns = []
            for atoms, bonds in cur["patterns"]:
                patterns.append(Pattern(tuple(atoms), tuple(bonds)))
            try:
                templates.append(
                    ReactionTemplate(
                        id=cur["id"],
                        name=cur["name"],
                        patterns=tuple(patterns),
                        edits=tuple(cur["edits"]),
                        consumes=tuple(cur["consumes"]),
                        produces=tuple(cur["produces"]),
                        reverse=cur["reverse"],
                        new_ring_sizes=cur["rings"],
                        flags=tuple(cur["flags"]),
                        note=cur["note"],
                    )
                )
            except CatalogError as exc:
                raise CatalogError(f"line {lineno}: {exc}") from exc
            cur = None
        elif word == "name":
            cur["name"] = rest
        elif word == "note":
            cur["note"] = rest
        elif word == "flag":
            cur["flags"].append(rest)
        elif word == "reverse":
            cur["reverse"] = rest
        elif word == "consumes":
            cur["consumes"].extend(rest.split())
        elif word == "produces":
            cur["produces"].extend(rest.split())
        elif word == "new_ring_sizes":
            cur["rings"] = _sizes(rest.replace(" ", ","))
        elif word == "pattern":
            cur["patterns"].append(([], []))
        elif word == "atom":
            if not cur["patterns"]:
                cur["patterns"].append(([], []))
            tokens = rest.split()
            atoms = cur["patterns"][-1][0]
            if int(tokens[0]) != len(atoms):
                raise CatalogError(f"line {lineno}: atoms must be numbered 0,1,2,... per pattern")
            atoms.append(_parse_atom(tokens[1:], lineno))
        elif word == "bond":
            tokens = rest.split()
            if len(tokens) < 3:
                raise CatalogError(f"line {lineno}: bond needs two atoms and an order")
            order = 0 if tokens[2] == "any" else int(tokens[2])
            rings = None
            for tok in tokens[3:]:
                if tok.startswith("ring="):
                    rings = _sizes(tok[5:])
                else:
                    raise CatalogError(f"line {lineno}: bad bond option {tok!r}")
            cur["patterns"][-1][1].append(BondConstraint(int(tokens[0]), int(tokens[1]), order, rings))
        elif word == "edit":
            tokens = rest.split()
            args = tuple(t if (t.startswith("n") or t.startswith("[") or not _is_int(t)) else int(t)
                         for t in tokens[1:])
            cur["edits"].append(Edit(tokens[0], args))
        else:
            raise CatalogError(f"line {lineno}: unknown keyword {word!r}")
    if cur is not None:
        raise CatalogError("unterminated template record")
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise CatalogError("duplicate template ids")
    known = set(ids)
    for t in templates:
        if t.reverse is not None and t.reverse not in known:
            log.warning("template %s names unknown reverse %s", t.id, t.reverse)
    return templates


def _is_int(tok: str) -> bool:
    try:
        int(tok)
    except ValueError:
        return False
    return True


def format_catalog(templates: Sequence[ReactionTemplate]) -> str:
    """Normalized catalog text; ``parse_catalog`` inverts it."""
    lines = []
    for t in templates:
        lines.append(f"template {t.id}")
        lines.append(f"name {t.name}")
        if t.note:
            lines.append(f"note {t.note}")
        for f in t.flags:
            lines.append(f"flag {f}")
        if t.reverse:
            lines.append(f"reverse {t.reverse}")
        if t.consumes:
            lines.append("consumes " + " ".join(t.consumes))
        if t.produces:
            lines.append("produces " + " ".join(t.produces))
        if t.new_ring_sizes:
            lines.append("new_ring_sizes " + " ".join(map(str, sorted(t.new_ring_sizes))))
        for pat in t.patterns:
            lines.append("pattern")
            for i, a in enumerate(pat.atoms):
                lines.append(f"atom {i} {_format_atom(a)}")
            for b in pat.bonds:
                s = f"bond {b.a} {b.b} {b.order or 'any'}"
                if b.ring_sizes:
                    s += " ring=" + ",".join(map(str, sorted(b.ring_sizes)))
                lines.append(s)
        for e in t.edits:
            lines.append(f"edit {e}")
        lines.append("end")
        lines.append("")
    return "\n".join(lines)


def catalog_hash(templates: Sequence[ReactionTemplate]) -> str:
    return f"{fnv1a(format_catalog(templates).encode()):016x}"


def load_catalog(path: str | Path | None = None) -> list[ReactionTemplate]:
    """Load a catalog file; the shipped default when ``path`` is None."""
    if path is None:
        text = resources.files("sugarpath").joinpath("data/default_catalog.rxn").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_catalog(text)


def select(templates: Sequence[ReactionTemplate], prefixes: Iterable[str]) -> list[ReactionTemplate]:
    """Templates whose id starts with any rule letter in ``prefixes``."""
    prefixes = tuple(prefixes)
    return [t for t in templates if t.id.startswith(prefixes)]
