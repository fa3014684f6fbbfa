"""Independent reference implementations used as test oracles."""

import struct

import networkx as nx
from hypothesis import strategies as st

from sugarpath.molgraph import Atom, Bond, MolGraph, valence

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def to_nx(mol: MolGraph) -> nx.Graph:
    g = nx.Graph()
    for i, a in enumerate(mol.atoms):
        g.add_node(i, label=(a.element, a.formal_charge, a.implicit_h))
    for b in mol.bonds:
        g.add_edge(b.a, b.b, order=b.order)
    return g


def nx_isomorphic(m1: MolGraph, m2: MolGraph) -> bool:
    """VF2 from networkx, matching atom labels and bond orders."""
    return nx.is_isomorphic(
        to_nx(m1),
        to_nx(m2),
        node_match=lambda x, y: x["label"] == y["label"],
        edge_match=lambda x, y: x["order"] == y["order"],
    )


def fnv(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) % (1 << 64)
    return h


def reference_fingerprint(mol: MolGraph, radius: int, n_bits: int) -> set[int]:
    """Set-bit indices, written directly from the algorithm description."""
    z = {"C": 6, "O": 8}
    nbrs = {i: [] for i in range(len(mol.atoms))}
    for b in mol.bonds:
        nbrs[b.a].append((b.b, b.order))
        nbrs[b.b].append((b.a, b.order))
    ids = [
        fnv(struct.pack("<5q", 0, z[a.element], a.formal_charge, a.implicit_h, len(nbrs[i])))
        for i, a in enumerate(mol.atoms)
    ]
    bits = {x % n_bits for x in ids}
    for r in range(1, radius + 1):
        new = []
        for i in range(len(mol.atoms)):
            pairs = sorted((order, ids[j]) for j, order in nbrs[i])
            blob = struct.pack("<qQ", r, ids[i]) + b"".join(struct.pack("<qQ", o, k) for o, k in pairs)
            new.append(fnv(blob))
        ids = new
        bits |= {x % n_bits for x in ids}
    return bits


@st.composite
def molecules(draw, max_atoms: int = 10):
    """Random connected, valence-valid C/O graphs with optional charges and rings."""
    n = draw(st.integers(1, max_atoms))
    elements, charges = [], []
    for _ in range(n):
        el = draw(st.sampled_from("CCCO"))
        q = draw(st.sampled_from([0, 0, 0, 0, 1, -1]))
        elements.append(el)
        charges.append(q)
    cap = [valence(e, q) for e, q in zip(elements, charges)]
    used = [0] * n
    bonds = {}
    for i in range(1, n):
        choices = [j for j in range(i) if used[j] < cap[j]]
        if not choices or used[i] >= cap[i]:
            # no room: make atom i a plain carbon that can take a single bond
            elements[i], charges[i], cap[i] = "C", 0, 4
            choices = [j for j in range(i) if used[j] < cap[j]]
            if not choices:
                # every earlier atom is saturated; fall back to a smaller molecule
                n = i
                break
        j = draw(st.sampled_from(choices))
        room = min(cap[i] - used[i], cap[j] - used[j])
        order = draw(st.sampled_from([1, 1, 1, 2])) if room >= 2 else 1
        bonds[(j, i)] = order
        used[i] += order
        used[j] += order
    elements, charges, cap, used = elements[:n], charges[:n], cap[:n], used[:n]
    for _ in range(draw(st.integers(0, 2))):
        if n < 3:
            break
        i = draw(st.integers(0, n - 1))
        j = draw(st.integers(0, n - 1))
        k = (min(i, j), max(i, j))
        if i != j and k not in bonds and used[i] < cap[i] and used[j] < cap[j]:
            bonds[k] = 1
            used[i] += 1
            used[j] += 1
    atoms = [Atom(e, q, c - u) for e, q, c, u in zip(elements, charges, cap, used)]
    return MolGraph(atoms, [Bond(a, b, o) for (a, b), o in sorted(bonds.items())])
