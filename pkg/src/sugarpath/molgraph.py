"""Molecular graphs over carbon and oxygen with implicit hydrogens.

Covers the SMILES subset used throughout the package (grammar in
``docs/smiles_grammar.ebnf``), exact canonical labeling and a folded
Morgan-style circular fingerprint.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

ELEMENTS = ("C", "O")
ATOMIC_NUMBER = {"C": 6, "O": 8}

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a(data: bytes, seed: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a hash of ``data``."""
    h = seed
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


class SmilesError(ValueError):
    """Base class for SMILES parsing failures."""


class SmilesSyntaxError(SmilesError):
    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"syntax error at position {position}: {reason}")


class UnsupportedFeatureError(SmilesError):
    def __init__(self, position: int, feature: str):
        self.position = position
        self.feature = feature
        super().__init__(f"unsupported feature at position {position}: {feature}")


class RingClosureError(SmilesError):
    def __init__(self, label: int, reason: str = "unmatched ring-closure label"):
        self.label = label
        super().__init__(f"{reason}: {label}")


class ValenceError(ValueError):
    def __init__(self, atom_index: int, detail: str = ""):
        self.atom_index = atom_index
        msg = f"valence violation at atom {atom_index}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DisconnectedGraphError(ValueError):
    pass


def valence(element: str, charge: int) -> int:
    """Number of bonds plus hydrogens an atom carries at ``charge``.

    Oxygen gains a bond when positive (oxonium); carbon loses one when charged
    either way (carbocation / carbanion).
    """
    if element == "O":
        return 2 + charge
    return 4 - abs(charge)


@dataclass(frozen=True, slots=True)
class Atom:
    element: str
    formal_charge: int = 0
    implicit_h: int = 0

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise ValueError(f"unsupported element {self.element!r}")
        if self.formal_charge not in (-1, 0, 1):
            raise ValueError(f"formal charge out of range: {self.formal_charge}")
        if self.implicit_h < 0:
            raise ValueError("negative hydrogen count")


@dataclass(frozen=True, slots=True)
class Bond:
    a: int
    b: int
    order: int = 1

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("bond endpoints must differ")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if self.order not in (1, 2):
            raise ValueError(f"unsupported bond order {self.order}")

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a


@dataclass(frozen=True)
class MolGraph:
    """Immutable heavy-atom graph; hydrogens are per-atom counts.

    The valence rule is checked on construction. Connectivity is not, since
    reaction edits pass through disconnected intermediates; use
    :meth:`components` to split and :func:`canonicalize` to reject.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        if self._check:
            self.validate()

    def validate(self) -> None:
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond {bond} references a missing atom")
            key = (bond.a, bond.b)
            if key in seen:
                raise ValueError(f"duplicate bond between atoms {key}")
            seen.add(key)
        for i, atom in enumerate(self.atoms):
            used = self.bond_order_sum(i)
            expected = valence(atom.element, atom.formal_charge) - used
            if expected < 0 or atom.implicit_h != expected:
                raise ValenceError(
                    i,
                    f"{atom.element} charge {atom.formal_charge:+d} has "
                    f"{used} bond order and {atom.implicit_h} H",
                )

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per-atom tuple of ``(neighbor, bond order)``."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        return tuple(tuple(sorted(x)) for x in adj)

    @cached_property
    def _bond_lookup(self) -> dict[tuple[int, int], int]:
        return {(b.a, b.b): b.order for b in self.bonds}

    def bond_order(self, i: int, j: int) -> int:
        """Order of the bond between ``i`` and ``j``; 0 if absent."""
        if i > j:
            i, j = j, i
        return self._bond_lookup.get((i, j), 0)

    def bond_order_sum(self, i: int) -> int:
        return sum(order for _, order in self.adjacency[i])

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.adjacency[i]]

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def charge(self) -> int:
        return sum(a.formal_charge for a in self.atoms)

    def formula(self) -> Counter:
        """Element counts including hydrogens."""
        counts = Counter(a.element for a in self.atoms)
        counts["H"] = sum(a.implicit_h for a in self.atoms)
        return counts

    def formula_string(self) -> str:
        f = self.formula()
        parts = []
        for el in ("C", "H", "O"):
            if f[el]:
                parts.append(el if f[el] == 1 else f"{el}{f[el]}")
        return "".join(parts)

    @cached_property
    def ring_atoms(self) -> frozenset[int]:
        """Atoms lying on at least one cycle."""
        return frozenset(i for b in self._ring_bonds for i in (b[0], b[1]))

    @cached_property
    def _ring_bonds(self) -> frozenset[tuple[int, int]]:
        # a bond is in a ring iff it is not a bridge
        n = len(self.atoms)
        disc = [-1] * n
        low = [0] * n
        bridges = set()
        timer = 0
        for root in range(n):
            if disc[root] != -1:
                continue
            stack = [(root, -1, iter(self.neighbors(root)))]
            disc[root] = low[root] = timer
            timer += 1
            while stack:
                u, parent, it = stack[-1]
                advanced = False
                for v in it:
                    if v == parent:
                        continue
                    if disc[v] == -1:
                        disc[v] = low[v] = timer
                        timer += 1
                        stack.append((v, u, iter(self.neighbors(v))))
                        advanced = True
                        break
                    low[u] = min(low[u], disc[v])
                if not advanced:
                    stack.pop()
                    if stack:
                        p = stack[-1][0]
                        low[p] = min(low[p], low[u])
                        if low[u] > disc[p]:
                            bridges.add((min(p, u), max(p, u)))
        return frozenset((b.a, b.b) for b in self.bonds if (b.a, b.b) not in bridges)

    def in_ring(self, i: int) -> bool:
        return i in self.ring_atoms

    def smallest_ring_through(self, i: int, j: int) -> int | None:
        """Size of the smallest cycle containing bond ``i-j``, if any."""
        if not self.bond_order(i, j):
            return None
        # BFS from i to j avoiding the direct edge
        dist = {i: 0}
        frontier = [i]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors(u):
                    if (u == i and v == j) or (u == j and v == i):
                        continue
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        if v == j:
                            return dist[v] + 1
                        nxt.append(v)
            frontier = nxt
        return None

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom index lists, ordered by first atom."""
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            comp = []
            stack = [start]
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.neighbors(u):
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.atoms) > 0 and len(self.components()) == 1

    def subgraph(self, indices: Sequence[int]) -> "MolGraph":
        index = {old: new for new, old in enumerate(indices)}
        atoms = [self.atoms[i] for i in indices]
        bonds = [
            Bond(index[b.a], index[b.b], b.order)
            for b in self.bonds
            if b.a in index and b.b in index
        ]
        return MolGraph(atoms, bonds)

    def split(self) -> list["MolGraph"]:
        return [self.subgraph(c) for c in self.components()]

    def permute(self, perm: Sequence[int]) -> "MolGraph":
        """Relabel so that old atom ``i`` becomes atom ``perm[i]``."""
        atoms: list[Atom | None] = [None] * len(self.atoms)
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds]
        bonds.sort(key=lambda b: (b.a, b.b))
        return MolGraph(atoms, bonds)

    def __str__(self) -> str:
        return write_smiles(self)


def disjoint_union(mols: Iterable[MolGraph]) -> tuple[MolGraph, list[int]]:
    """Union of graphs plus the atom offset of each input."""
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    offsets = []
    for m in mols:
        off = len(atoms)
        offsets.append(off)
        atoms.extend(m.atoms)
        bonds.extend(Bond(b.a + off, b.b + off, b.order) for b in m.bonds)
    return MolGraph(atoms, bonds), offsets


# -- parsing -------------------------------------------------------------


def parse_smiles(text: str) -> MolGraph:
    """Parse a SMILES string in the C/O subset into a :class:`MolGraph`."""
    return _Parser(text).parse()


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[dict] = []
        self.bonds: dict[tuple[int, int], int] = {}
        self.rings: dict[int, tuple[int, int | None, int]] = {}

    def error(self, reason: str, pos: int | None = None):
        raise SmilesSyntaxError(self.pos if pos is None else pos, reason)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> MolGraph:
        text = self.text
        if not text:
            self.error("empty string")
        prev: int | None = None
        stack: list[int | None] = []
        pending_bond: int | None = None
        pending_pos = 0
        while self.pos < len(text):
            ch = text[self.pos]
            if ch in "CO[":
                idx = self._atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending_bond or 1, pending_pos)
                elif pending_bond is not None:
                    self.error("bond without preceding atom", pending_pos)
                pending_bond = None
                prev = idx
            elif ch in "-=":
                if pending_bond is not None:
                    self.error("consecutive bond symbols")
                if prev is None:
                    self.error("bond without preceding atom")
                pending_bond = 1 if ch == "-" else 2
                pending_pos = self.pos
                self.pos += 1
            elif ch == "(":
                if prev is None:
                    self.error("branch without preceding atom")
                if pending_bond is not None:
                    self.error("bond symbol before branch")
                stack.append(prev)
                self.pos += 1
                if self.peek() == ")":
                    self.error("empty branch")
            elif ch == ")":
                if not stack:
                    self.error("unbalanced ')'")
                if pending_bond is not None:
                    self.error("dangling bond symbol")
                prev = stack.pop()
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.error("ring closure without preceding atom")
                self._ring(prev, pending_bond, pending_pos)
                pending_bond = None
            elif ch in "cos":
                raise UnsupportedFeatureError(self.pos, "aromatic atom")
            elif ch in "@/\\":
                raise UnsupportedFeatureError(self.pos, "stereochemistry")
            elif ch == "#" or ch == "$":
                raise UnsupportedFeatureError(self.pos, "triple or quadruple bond")
            elif ch == ".":
                raise UnsupportedFeatureError(self.pos, "disconnected components")
            elif ch in "NSPFIBn" or ch == "H" or ch.isalpha():
                raise UnsupportedFeatureError(self.pos, f"element or symbol {ch!r}")
            else:
                self.error(f"unexpected character {ch!r}")
        if stack:
            self.error("unclosed branch")
        if pending_bond is not None:
            self.error("dangling bond symbol")
        if self.rings:
            raise RingClosureError(min(self.rings))
        return self._build()

    def _atom(self) -> int:
        ch = self.text[self.pos]
        if ch == "[":
            return self._bracket()
        self.pos += 1
        self.atoms.append({"element": ch, "charge": 0, "h": None, "pos": self.pos - 1})
        return len(self.atoms) - 1

    def _bracket(self) -> int:
        start = self.pos
        end = self.text.find("]", start)
        if end < 0:
            self.error("unterminated bracket atom")
        body = self.text[start + 1 : end]
        i = 0
        if i < len(body) and body[i].isdigit():
            raise UnsupportedFeatureError(start + 1, "isotope")
        if i >= len(body):
            self.error("empty bracket atom", start)
        el = body[i]
        if el in "co":
            raise UnsupportedFeatureError(start + 1, "aromatic atom")
        if el not in "CO" or (i + 1 < len(body) and body[i + 1].islower()):
            raise UnsupportedFeatureError(start + 1, f"element in {body!r}")
        i += 1
        if i < len(body) and body[i] == "@":
            raise UnsupportedFeatureError(start + 1 + i, "stereochemistry")
        h = 0
        if i < len(body) and body[i] == "H":
            i += 1
            h = 1
            if i < len(body) and body[i].isdigit():
                h = int(body[i])
                i += 1
        charge = 0
        if i < len(body) and body[i] in "+-":
            sign = 1 if body[i] == "+" else -1
            i += 1
            mag = 1
            if i < len(body) and body[i].isdigit():
                mag = int(body[i])
                i += 1
            elif i < len(body) and body[i] in "+-":
                self.error("repeated charge sign", start + 1 + i)
            charge = sign * mag
            if abs(charge) > 1:
                raise UnsupportedFeatureError(start, f"formal charge {charge:+d}")
        label = None
        if i < len(body) and body[i] == ":":
            i += 1
            j = i
            while i < len(body) and body[i].isdigit():
                i += 1
            if j == i:
                self.error("empty atom class", start + 1 + j)
            label = int(body[j:i])
        if i != len(body):
            self.error(f"unexpected {body[i:]!r} in bracket atom", start + 1 + i)
        self.pos = end + 1
        self.atoms.append(
            {"element": el, "charge": charge, "h": h, "pos": start, "label": label}
        )
        return len(self.atoms) - 1

    def _ring(self, atom: int, bond: int | None, bond_pos: int):
        start = self.pos
        if self.text[self.pos] == "%":
            digits = self.text[self.pos + 1 : self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                self.error("'%' must be followed by two digits")
            label = int(digits)
            self.pos += 3
        else:
            label = int(self.text[self.pos])
            self.pos += 1
        if label in self.rings:
            other, other_bond, other_pos = self.rings.pop(label)
            if other == atom:
                self.error("ring closure to the same atom", start)
            if bond is not None and other_bond is not None and bond != other_bond:
                self.error(f"conflicting bond orders on ring closure {label}", start)
            order = bond or other_bond or 1
            self._add_bond(other, atom, order, start)
        else:
            self.rings[label] = (atom, bond, start)

    def _add_bond(self, i: int, j: int, order: int, pos: int):
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            self.error("duplicate bond between the same atoms", pos)
        self.bonds[key] = order

    def _build(self) -> MolGraph:
        used = [0] * len(self.atoms)
        for (i, j), order in self.bonds.items():
            used[i] += order
            used[j] += order
        atoms = []
        for i, spec in enumerate(self.atoms):
            if spec["h"] is None:
                h = valence(spec["element"], 0) - used[i]
                if h < 0:
                    raise ValenceError(i, f"{spec['element']} has {used[i]} bond order")
            else:
                h = spec["h"]
            atoms.append(Atom(spec["element"], spec["charge"], h))
        bonds = [Bond(i, j, o) for (i, j), o in sorted(self.bonds.items())]
        return MolGraph(atoms, bonds)


def parse_smiles_with_labels(text: str) -> tuple[MolGraph, dict[int, int]]:
    """Parse, also returning ``{atom index: atom class}`` for labeled atoms."""
    parser = _Parser(text)
    mol = parser.parse()
    labels = {
        i: spec["label"]
        for i, spec in enumerate(parser.atoms)
        if spec.get("label") is not None
    }
    return mol, labels


# -- writing -------------------------------------------------------------


def _atom_symbol(atom: Atom, label: int | None) -> str:
    if atom.formal_charge == 0 and label is None:
        return atom.element
    s = "[" + atom.element
    if atom.implicit_h:
        s += "H" if atom.implicit_h == 1 else f"H{atom.implicit_h}"
    if atom.formal_charge:
        s += "+" if atom.formal_charge > 0 else "-"
    if label is not None:
        s += f":{label}"
    return s + "]"


def _ring_label(n: int) -> str:
    return str(n) if n < 10 else f"%{n:02d}"


def _write(mol: MolGraph, rank: Sequence[int], labels: Mapping[int, int] | None = None) -> str:
    """Write ``mol`` walking atoms in ``rank`` order (lower rank first)."""
    labels = labels or {}
    n = mol.n_atoms
    if n == 0:
        return ""
    nbrs = [sorted(mol.neighbors(i), key=lambda j: rank[j]) for i in range(n)]
    start = min(range(n), key=lambda i: rank[i])

    # pass 1: spanning tree, ring-closure bonds and visit order
    visited = [False] * n
    children: list[list[int]] = [[] for _ in range(n)]
    opens: list[list[int]] = [[] for _ in range(n)]  # closure partners opened here
    closes: list[list[int]] = [[] for _ in range(n)]  # closure partners closed here
    closure_seen = set()
    stack = [(start, -1)]
    order = []
    while stack:
        u, parent = stack.pop()
        if visited[u]:
            continue
        visited[u] = True
        order.append(u)
        if parent >= 0:
            children[parent].append(u)
        pending = []
        for v in nbrs[u]:
            if v == parent:
                continue
            if visited[v]:
                key = (min(u, v), max(u, v))
                if key not in closure_seen:
                    closure_seen.add(key)
                    opens[v].append(u)
                    closes[u].append(v)
            else:
                pending.append(v)
        for v in reversed(pending):
            stack.append((v, u))
    pos = {a: k for k, a in enumerate(order)}
    for i in range(n):
        opens[i].sort(key=lambda j: pos[j])
        closes[i].sort(key=lambda j: pos[j])

    free: list[int] = []
    next_label = 1
    assigned: dict[tuple[int, int], int] = {}
    out: list[str] = []

    def bond_sym(i: int, j: int) -> str:
        return "=" if mol.bond_order(i, j) == 2 else ""

    def emit(u: int):
        nonlocal next_label
        out.append(_atom_symbol(mol.atoms[u], labels.get(u)))
        for v in closes[u]:
            key = (min(u, v), max(u, v))
            lab = assigned.pop(key)
            out.append(bond_sym(u, v) + _ring_label(lab))
            free.append(lab)
            free.sort()
        for v in opens[u]:
            key = (min(u, v), max(u, v))
            if free:
                lab = free.pop(0)
            else:
                lab = next_label
                next_label += 1
            assigned[key] = lab
            out.append(bond_sym(u, v) + _ring_label(lab))
        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_sym(u, v))
            emit(v)
            if not last:
                out.append(")")

    emit(start)
    return "".join(out)


def write_smiles(mol: MolGraph) -> str:
    """SMILES for ``mol``; canonical, so equal to :func:`canonicalize` text."""
    return canonicalize(mol).text


# -- canonical labeling --------------------------------------------------


@dataclass(frozen=True, slots=True)
class CanonicalForm:
    text: str

    def __str__(self) -> str:
        return self.text


def _initial_colors(mol: MolGraph, labels: Mapping[int, int]) -> list[int]:
    inv = []
    for i, atom in enumerate(mol.atoms):
        orders = tuple(sorted(o for _, o in mol.adjacency[i]))
        inv.append(
            (
                labels.get(i, 0),
                ATOMIC_NUMBER[atom.element],
                atom.formal_charge,
                atom.implicit_h,
                orders,
            )
        )
    return _rank(inv)


def _rank(keys: Sequence) -> list[int]:
    uniq = sorted(set(keys))
    pos = {k: r for r, k in enumerate(uniq)}
    return [pos[k] for k in keys]


def _refine(mol: MolGraph, colors: list[int]) -> list[int]:
    n_colors = len(set(colors))
    while True:
        sigs = [
            (colors[i], tuple(sorted((o, colors[j]) for j, o in mol.adjacency[i])))
            for i in range(mol.n_atoms)
        ]
        new = _rank(sigs)
        k = len(set(new))
        if k == n_colors:
            return new
        colors, n_colors = new, k


def _search(mol: MolGraph, colors: list[int], labels: Mapping[int, int], best: list):
    colors = _refine(mol, colors)
    n = mol.n_atoms
    if len(set(colors)) == n:
        text = _write(mol, colors, labels)
        if best[0] is None or text < best[0]:
            best[0] = text
        return
    counts = Counter(colors)
    target = min(c for c, k in counts.items() if k > 1)
    for i in range(n):
        if colors[i] != target:
            continue
        indiv = [2 * c + (0 if j == i or c != target else 1) for j, c in enumerate(colors)]
        _search(mol, _rank(indiv), labels, best)


def canonical_smiles(mol: MolGraph, labels: Mapping[int, int] | None = None) -> str:
    """Canonical SMILES of ``mol``, optionally with atom-class labels.

    Exact: color refinement, then individualization of every member of the
    first tied cell, keeping the lexicographically smallest output.
    """
    if not mol.is_connected():
        raise DisconnectedGraphError("canonicalization requires a single connected molecule")
    labels = labels or {}
    best: list[str | None] = [None]
    _search(mol, _initial_colors(mol, labels), labels, best)
    return best[0]


def canonicalize(mol: MolGraph) -> CanonicalForm:
    return CanonicalForm(canonical_smiles(mol))


def canonical_key(smiles: str) -> str:
    """Canonical text for a SMILES string."""
    return canonical_smiles(parse_smiles(smiles))


def is_isomorphic(m1: MolGraph, m2: MolGraph) -> bool:
    return canonical_smiles(m1) == canonical_smiles(m2)


# -- fingerprints --------------------------------------------------------


def morgan_fingerprint(mol: MolGraph, radius: int = 2, n_bits: int = 1000) -> np.ndarray:
    """Folded circular fingerprint as a read-only ``uint8`` vector of length ``n_bits``.

    Round 0 identifiers hash (element, charge, H count, degree); round ``r``
    hashes the previous identifier with the sorted (bond order, neighbor
    identifier) pairs. Every identifier of every round sets bit ``id % n_bits``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    bits = np.zeros(n_bits, dtype=np.uint8)
    ids = []
    for i, atom in enumerate(mol.atoms):
        data = struct.pack(
            "<5q", 0, ATOMIC_NUMBER[atom.element], atom.formal_charge, atom.implicit_h, mol.degree(i)
        )
        ids.append(fnv1a(data))
    for ident in ids:
        bits[ident % n_bits] = 1
    for r in range(1, radius + 1):
        new_ids = []
        for i in range(mol.n_atoms):
            env = sorted((o, ids[j]) for j, o in mol.adjacency[i])
            data = struct.pack("<qQ", r, ids[i])
            data += b"".join(struct.pack("<qQ", o, k) for o, k in env)
            new_ids.append(fnv1a(data))
        ids = new_ids
        for ident in ids:
            bits[ident % n_bits] = 1
    bits.flags.writeable = False
    return bits
