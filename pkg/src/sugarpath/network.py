"""Reaction-network generation, reversal, statistics and the ``RXNNET`` file format."""

from __future__ import annotations

import logging
import warnings
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .molgraph import MolGraph, canonical_smiles, fnv1a, parse_smiles
from .rules import (
    AUXILIARY,
    ReactionTemplate,
    apply_full,
    catalog_hash,
    find_matches,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
REVERSED_SUFFIX = "~"


class NetworkFormatError(ValueError):
    pass


class ChecksumError(NetworkFormatError):
    pass


class CatalogMismatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SpeciesFilter:
    """Admission test for newly generated species."""

    charges: frozenset[int] = frozenset({0, 1})
    max_heavy_atoms: int = 13

    def accepts(self, mol: MolGraph) -> bool:
        return mol.charge in self.charges and mol.n_atoms <= self.max_heavy_atoms

    @property
    def descriptor(self) -> str:
        charges = ",".join(str(c) for c in sorted(self.charges))
        return f"charge={charges};heavy<={self.max_heavy_atoms}"

    @classmethod
    def parse(cls, text: str) -> "SpeciesFilter":
        kw = {}
        for part in filter(None, text.split(";")):
            if part.startswith("charge="):
                kw["charges"] = frozenset(int(c) for c in part[7:].split(","))
            elif part.startswith("heavy<="):
                kw["max_heavy_atoms"] = int(part[7:])
            else:
                raise ValueError(f"unknown filter clause {part!r}")
        return cls(**kw)


@dataclass(frozen=True)
class Limits:
    max_species: int = 100_000
    max_heavy_atoms: int | None = None


@dataclass(frozen=True)
class Species:
    id: int
    canonical: str
    charge: int
    formula: str

    @property
    def auxiliary(self) -> bool:
        return self.canonical in AUXILIARY

    def mol(self) -> MolGraph:
        return parse_smiles(self.canonical)


@dataclass(frozen=True)
class Reaction:
    id: int
    template_id: str
    site_key: str
    reactant_ids: tuple[int, ...]
    product_ids: tuple[int, ...]
    aux_consumed: tuple[int, ...] = ()
    aux_produced: tuple[int, ...] = ()

    @property
    def reversed(self) -> bool:
        return self.template_id.endswith(REVERSED_SUFFIX)


@dataclass
class ReactionNetwork:
    species: list[Species]
    reactions: list[Reaction]
    initial_ids: tuple[int, ...] = ()
    goal_ids: tuple[int, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)
    catalog_mismatch: bool = field(default=False, compare=False)

    def __post_init__(self):
        self._by_key = {s.canonical: s.id for s in self.species}
        self._out: dict[int, list[Reaction]] | None = None

    def __eq__(self, other):
        if not isinstance(other, ReactionNetwork):
            return NotImplemented
        return dumps(self) == dumps(other)

    @property
    def catalog_hash(self) -> str:
        return self.metadata.get("catalog", "0" * 16)

    @property
    def filter_descriptor(self) -> str:
        return self.metadata.get("filter", SpeciesFilter().descriptor)

    def id_of(self, smiles_or_key: str) -> int | None:
        """Species id for a SMILES string (any atom order), or None."""
        sid = self._by_key.get(smiles_or_key)
        if sid is not None:
            return sid
        try:
            return self._by_key.get(canonical_smiles(parse_smiles(smiles_or_key)))
        except ValueError:
            return None

    def outgoing(self, species_id: int) -> list[Reaction]:
        """Reactions whose first reactant is ``species_id``, in network order."""
        if self._out is None:
            out: dict[int, list[Reaction]] = {}
            for r in self.reactions:
                out.setdefault(r.reactant_ids[0], []).append(r)
            self._out = out
        return self._out.get(species_id, [])

    @property
    def principal_initial(self) -> tuple[int, ...]:
        return _principal(self, self.initial_ids)

    @property
    def principal_goal(self) -> tuple[int, ...]:
        return _principal(self, self.goal_ids)


def _principal(net: ReactionNetwork, ids: Sequence[int]) -> tuple[int, ...]:
    """Drop auxiliary species unless nothing else is left."""
    main = tuple(i for i in ids if not net.species[i].auxiliary)
    return main or tuple(ids[:1])


# -- expansion -----------------------------------------------------------


def _make_species(sid: int, mol: MolGraph, key: str) -> Species:
    return Species(sid, key, mol.charge, mol.formula_string())


def expand(
    initial: Sequence[MolGraph],
    ruleset: Sequence[ReactionTemplate],
    species_filter: SpeciesFilter | None = None,
    limits: Limits | None = None,
    goal: MolGraph | None = None,
) -> ReactionNetwork:
    """Breadth-first fixpoint expansion from ``initial``.

    Every rule is applied to every species as it leaves the frontier; a
    reaction is kept only if all of its products pass the filter. Expansion
    stops at fixpoint or when ``limits.max_species`` would be exceeded; the
    cause lands in ``metadata['termination']``.
    """
    if not initial:
        raise ValueError("expansion needs at least one initial species")
    species_filter = species_filter or SpeciesFilter()
    limits = limits or Limits()
    if limits.max_species < 1:
        raise ValueError("max_species must be positive")
    max_atoms = species_filter.max_heavy_atoms
    if limits.max_heavy_atoms is not None:
        max_atoms = min(max_atoms, limits.max_heavy_atoms)

    species: list[Species] = []
    mols: list[MolGraph] = []
    by_key: dict[str, int] = {}
    queue: deque[int] = deque()

    def intern(mol: MolGraph, key: str | None = None) -> int:
        key = key or canonical_smiles(mol)
        sid = by_key.get(key)
        if sid is None:
            sid = len(species)
            by_key[key] = sid
            species.append(_make_species(sid, mol, key))
            mols.append(mol)
            queue.append(sid)
        return sid

    initial_ids = []
    for mol in initial:
        if not mol.is_connected():
            raise ValueError("initial species must be single connected molecules")
        initial_ids.append(intern(mol))
    initial_ids = tuple(dict.fromkeys(initial_ids))
    goal_ids: tuple[int, ...] = ()

    reactions: list[Reaction] = []
    seen_rxn: set[tuple] = set()
    termination = "fixpoint"
    processed: list[int] = []
    single = [t for t in ruleset if len(t.patterns) == 1]
    double = [t for t in ruleset if len(t.patterns) == 2]

    while queue:
        sid = queue.popleft()
        processed.append(sid)
        jobs = [(t, (sid,)) for t in single]
        for t in double:
            for other in processed:
                jobs.append((t, (sid, other)))
                if other != sid:
                    jobs.append((t, (other, sid)))
        for tpl, ids in jobs:
            reactants = [mols[i] for i in ids]
            for match in find_matches(tpl, *reactants):
                key = (tpl.id, match.site_key, ids)
                if key in seen_rxn:
                    continue
                app = apply_full(tpl, reactants, match)
                if not all(species_filter.accepts(p) and p.n_atoms <= max_atoms for p in app.products):
                    continue
                prod_keys = [canonical_smiles(p) for p in app.products]
                new = {k for k in prod_keys if k not in by_key}
                new.update(k for k in app.aux_produced + app.aux_consumed if k not in by_key)
                if len(species) + len(new) > limits.max_species:
                    termination = "max_species"
                    continue
                seen_rxn.add(key)
                product_ids = tuple(intern(p, k) for p, k in zip(app.products, prod_keys))
                consumed = tuple(intern(parse_smiles(s), s) for s in app.aux_consumed)
                produced = tuple(intern(parse_smiles(s), s) for s in app.aux_produced)
                reactions.append(
                    Reaction(len(reactions), tpl.id, match.site_key, ids, product_ids, consumed, produced)
                )
    if goal is not None:
        gkey = canonical_smiles(goal)
        if gkey in by_key:
            goal_ids = (by_key[gkey],)
        else:
            log.warning("goal %s not generated", gkey)

    metadata = {
        "catalog": catalog_hash(ruleset),
        "filter": species_filter.descriptor,
        "termination": termination,
    }
    return ReactionNetwork(species, reactions, initial_ids, goal_ids, metadata)


def with_goal(net: ReactionNetwork, goal: str | int) -> ReactionNetwork:
    gid = goal if isinstance(goal, int) else net.id_of(goal)
    if gid is None or not 0 <= gid < len(net.species):
        raise KeyError(f"goal {goal!r} is not a species of this network")
    return ReactionNetwork(net.species, net.reactions, net.initial_ids, (gid,), dict(net.metadata))


def _toggle(template_id: str) -> str:
    if template_id.endswith(REVERSED_SUFFIX):
        return template_id[: -len(REVERSED_SUFFIX)]
    return template_id + REVERSED_SUFFIX


def reverse(net: ReactionNetwork) -> ReactionNetwork:
    """Swap both sides of every reaction and exchange initial/goal species.

    Reversed reactions carry a ``~`` suffix on their template id, so
    ``reverse(reverse(net)) == net`` exactly.
    """
    reactions = [
        Reaction(r.id, _toggle(r.template_id), r.site_key, r.product_ids, r.reactant_ids,
                 r.aux_produced, r.aux_consumed)
        for r in net.reactions
    ]
    meta = dict(net.metadata)
    flipped = meta.get("reversed", "0") != "1"
    meta["reversed"] = "1" if flipped else "0"
    if meta["reversed"] == "0":
        del meta["reversed"]
    return ReactionNetwork(list(net.species), reactions, net.goal_ids, net.initial_ids, meta)


def stats(net: ReactionNetwork, max_steps: int = 20) -> dict:
    """Size and MDP-shape statistics.

    Dead ends and out-degrees are counted over the states reachable from the
    network's principal initial species within ``max_steps`` steps.
    """
    from .env import EnvConfig
    from .oracle import build_state_graph

    goal = net.principal_goal
    config = EnvConfig(
        network=net,
        start=net.principal_initial,
        goal=goal[0] if goal else None,
        max_steps=max_steps,
    )
    graph = build_state_graph(config)
    degrees = graph.out_degrees()
    return {
        "species": len(net.species),
        "reactions": len(net.reactions),
        "states": len(graph.nodes),
        "dead_ends": len(graph.dead_ends()),
        "max_out_degree": max(degrees.values()) if degrees else 0,
        "degree_histogram": dict(sorted(Counter(degrees.values()).items())),
    }


# -- serialization -------------------------------------------------------


def _ids(xs: Sequence[int]) -> str:
    return " ".join(map(str, xs))


def dumps(net: ReactionNetwork) -> str:
    lines = [f"RXNNET {FORMAT_VERSION} {net.catalog_hash} {net.filter_descriptor}"]
    for k in sorted(net.metadata):
        if k not in ("catalog", "filter"):
            lines.append(f"M {k}={net.metadata[k]}")
    lines.append("I " + _ids(net.initial_ids))
    lines.append("G " + _ids(net.goal_ids))
    for s in sorted(net.species, key=lambda s: s.id):
        lines.append(f"S {s.id} {s.charge} {s.canonical}")
    for r in net.reactions:
        lines.append(
            f"R {r.id} {r.template_id} {r.site_key} | {_ids(r.reactant_ids)} | "
            f"{_ids(r.aux_consumed)} => {_ids(r.product_ids)} | {_ids(r.aux_produced)}"
        )
    body = "\n".join(lines) + "\n"
    return body + f"CK {fnv1a(body.encode('utf-8')):016x}\n"


def _parse_ids(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split())


def loads(text: str, expected_catalog: str | None = None) -> ReactionNetwork:
    """Parse ``RXNNET`` text, verifying version and checksum.

    When ``expected_catalog`` is given and differs from the file's catalog
    hash, a :class:`CatalogMismatchWarning` is issued and
    ``catalog_mismatch`` is set on the result.
    """
    body, sep, tail = text.rpartition("CK ")
    if not sep or not body.endswith("\n"):
        raise ChecksumError("missing checksum line")
    tail = tail.strip()
    if tail != f"{fnv1a(body.encode('utf-8')):016x}":
        raise ChecksumError("checksum mismatch")
    lines = body.splitlines()
    header = lines[0].split(" ")
    if len(header) != 4 or header[0] != "RXNNET":
        raise NetworkFormatError("bad header")
    if header[1] != str(FORMAT_VERSION):
        raise NetworkFormatError(f"unsupported format version {header[1]}")
    metadata = {"catalog": header[2], "filter": header[3]}
    species, reactions = [], []
    initial, goal = (), ()
    for lineno, line in enumerate(lines[1:], 2):
        tag, _, rest = line.partition(" ")
        try:
            if tag == "M":
                k, _, v = rest.partition("=")
                metadata[k] = v
            elif tag == "I":
                initial = _parse_ids(rest)
            elif tag == "G":
                goal = _parse_ids(rest)
            elif tag == "S":
                sid, charge, key = rest.split(" ")
                mol = parse_smiles(key)
                species.append(Species(int(sid), key, int(charge), mol.formula_string()))
            elif tag == "R":
                head, reac, mid, aux_out = rest.split(" | ")
                rid, tid, site = head.split(" ")
                aux_in, _, prods = mid.partition(" => ")
                reactions.append(
                    Reaction(int(rid), tid, site, _parse_ids(reac), _parse_ids(prods),
                             _parse_ids(aux_in), _parse_ids(aux_out))
                )
            else:
                raise NetworkFormatError(f"line {lineno}: unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, NetworkFormatError):
                raise
            raise NetworkFormatError(f"line {lineno}: {exc}") from exc
    if [s.id for s in species] != list(range(len(species))):
        raise NetworkFormatError("species ids must be 0..n-1 in order")
    net = ReactionNetwork(species, reactions, initial, goal, metadata)
    if expected_catalog is not None and expected_catalog != net.catalog_hash:
        warnings.warn(
            f"network was built with catalog {net.catalog_hash}, expected {expected_catalog}",
            CatalogMismatchWarning,
            stacklevel=2,
        )
        net.catalog_mismatch = True
    return net


def save(net: ReactionNetwork, path: str | Path) -> None:
    Path(path).write_text(dumps(net), encoding="utf-8")


def load(path: str | Path, expected_catalog: str | None = None) -> ReactionNetwork:
    return loads(Path(path).read_text(encoding="utf-8"), expected_catalog)
