"""Episodic MDP over a reaction network.

States are multisets of species (canonical SMILES). An action is one
reaction at one reaction center; the legal set changes from state to state.
Rewards arrive once, at the end of an episode: ``1 + 1/T`` on reaching the
goal after ``T`` steps, ``-1`` for a dead end or for running out of steps.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .molgraph import MolGraph, canonical_smiles, morgan_fingerprint, parse_smiles
from .network import ReactionNetwork, SpeciesFilter
from .rules import AUXILIARY, ReactionTemplate, apply_full, find_matches

RUNNING, GOAL, DEAD_END, TIMEOUT = "running", "goal", "dead_end", "timeout"
INEXHAUSTIBLE, COUNTED = "inexhaustible", "counted"


class ConfigError(ValueError):
    pass


class EnvError(RuntimeError):
    """Illegal use of an environment (stepping a finished episode, bad index)."""


@dataclass(frozen=True)
class Rewards:
    goal_base: float = 1.0
    dead_end: float = -1.0
    timeout: float = -1.0

    def goal(self, steps: int) -> float:
        return self.goal_base + 1.0 / max(steps, 1)


def _key(x: str) -> str:
    return x if x in AUXILIARY else canonical_smiles(parse_smiles(x))


@dataclass(frozen=True)
class EnvConfig:
    """Environment configuration.

    Exactly one backend is used: ``network`` (dataset mode) or ``catalog``
    (live mode, rules applied on the fly under ``species_filter``). ``start``
    and ``goal`` accept species ids (dataset mode) or SMILES.
    """

    network: ReactionNetwork | None = None
    catalog: Sequence[ReactionTemplate] | None = None
    species_filter: SpeciesFilter = field(default_factory=SpeciesFilter)
    start: Sequence[int | str] = ()
    goal: int | str | None = None
    max_steps: int = 20
    rewards: Rewards = field(default_factory=Rewards)
    aux_pool: str = INEXHAUSTIBLE
    aux_counts: tuple[tuple[str, int], ...] = ((canonical_smiles(parse_smiles("O")), 10), ("[OH3+]", 10))
    forbid_revisit: bool = False
    n_bits: int = 1000
    radius: int = 2

    def __post_init__(self):
        if (self.network is None) == (self.catalog is None):
            raise ConfigError("give exactly one of network (dataset mode) or catalog (live mode)")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.aux_pool not in (INEXHAUSTIBLE, COUNTED):
            raise ConfigError(f"unknown aux_pool {self.aux_pool!r}")
        if isinstance(self.start, (str, int)):
            object.__setattr__(self, "start", (self.start,))
        if not self.start:
            raise ConfigError("start state is empty")

    @property
    def mode(self) -> str:
        return "dataset" if self.network is not None else "live"

    def resolve(self, x: int | str) -> str:
        """Canonical key for a species id or SMILES string."""
        if isinstance(x, (int, np.integer)):
            if self.network is None:
                raise ConfigError("species ids need a network")
            if not 0 <= x < len(self.network.species):
                raise ConfigError(f"no species with id {x}")
            return self.network.species[int(x)].canonical
        try:
            key = _key(x)
        except ValueError as exc:
            raise ConfigError(f"cannot parse species {x!r}: {exc}") from exc
        if self.network is not None and self.network.id_of(key) is None:
            raise ConfigError(f"species {x!r} is not in the network")
        return key


@dataclass(frozen=True)
class EnvState:
    species: tuple[str, ...]  # sorted multiset of canonical keys
    t: int = 0
    outcome: str = RUNNING
    reward: float = 0.0  # reward of the transition that produced this state
    aux: tuple[tuple[str, int], ...] = ()  # counted pool, sorted
    history: frozenset = frozenset()  # visited state keys, forbid_revisit only

    @property
    def done(self) -> bool:
        return self.outcome != RUNNING

    @property
    def key(self) -> tuple:
        return (self.species, self.aux)


@dataclass(frozen=True)
class ActionInstance:
    index: int
    template_id: str
    site_key: str
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    aux_consumed: tuple[str, ...] = ()
    aux_produced: tuple[str, ...] = ()
    reaction_id: int | None = None

    @property
    def label(self) -> str:
        return f"{self.template_id}@{self.site_key}"


@dataclass(frozen=True)
class Observation:
    bits: np.ndarray
    step_frac: float

    def vector(self) -> np.ndarray:
        """Flattened ``n_bits + 1`` float vector."""
        out = np.empty(self.bits.shape[0] + 1)
        out[:-1] = self.bits
        out[-1] = self.step_frac
        return out


def _sub(multiset: Sequence[str], remove: Sequence[str]) -> list[str] | None:
    pool = Counter(multiset)
    need = Counter(remove)
    if any(pool[k] < v for k, v in need.items()):
        return None
    pool.subtract(need)
    return sorted(pool.elements())


class ReactionEnv:
    """Stateless-step environment: every method is a pure function of its inputs.

    Legal action lists and fingerprints are memoized per instance.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.start_species = tuple(sorted(config.resolve(s) for s in config.start))
        self.goal = config.resolve(config.goal) if config.goal is not None else None
        self._fp: dict[str, np.ndarray] = {}
        self._mol: dict[str, MolGraph] = {}
        self._reactions: dict[str, list[ActionInstance]] = {}
        self._legal: dict[tuple, list[ActionInstance]] = {}
        if config.aux_pool == COUNTED:
            pool = Counter()
            for k, v in config.aux_counts:
                pool[_key(k)] += v
            self._aux0 = tuple(sorted((k, v) for k, v in pool.items() if v > 0))
        else:
            self._aux0 = ()

    # -- species-level reactions ----------------------------------------

    def _species_reactions(self, key: str) -> list[ActionInstance]:
        """Reactions with ``key`` as first reactant (index field unset)."""
        cached = self._reactions.get(key)
        if cached is not None:
            return cached
        out = []
        net = self.config.network
        if net is not None:
            sid = net.id_of(key)
            for r in net.outgoing(sid) if sid is not None else ():
                sp = net.species
                out.append(
                    ActionInstance(
                        -1,
                        r.template_id,
                        r.site_key,
                        tuple(sp[i].canonical for i in r.reactant_ids),
                        tuple(sp[i].canonical for i in r.product_ids),
                        tuple(sp[i].canonical for i in r.aux_consumed),
                        tuple(sp[i].canonical for i in r.aux_produced),
                        r.id,
                    )
                )
        else:
            mol = self.mol(key)
            flt = self.config.species_filter
            for tpl in self.config.catalog:
                if len(tpl.patterns) != 1:
                    continue
                for m in find_matches(tpl, mol):
                    app = apply_full(tpl, [mol], m)
                    if not all(flt.accepts(p) for p in app.products):
                        continue
                    out.append(
                        ActionInstance(
                            -1,
                            tpl.id,
                            m.site_key,
                            (key,),
                            tuple(canonical_smiles(p) for p in app.products),
                            app.aux_consumed,
                            app.aux_produced,
                        )
                    )
        self._reactions[key] = out
        return out

    def _live_pair_reactions(self, species: Sequence[str]) -> list[ActionInstance]:
        out = []
        distinct = sorted(set(species))
        flt = self.config.species_filter
        for tpl in self.config.catalog or ():
            if len(tpl.patterns) != 2:
                continue
            for a in distinct:
                for b in distinct:
                    if a == b and Counter(species)[a] < 2:
                        continue
                    mols = [self.mol(a), self.mol(b)]
                    for m in find_matches(tpl, *mols):
                        app = apply_full(tpl, mols, m)
                        if all(flt.accepts(p) for p in app.products):
                            out.append(ActionInstance(-1, tpl.id, m.site_key, (a, b),
                                                      tuple(canonical_smiles(p) for p in app.products),
                                                      app.aux_consumed, app.aux_produced))
        return out

    def mol(self, key: str) -> MolGraph:
        m = self._mol.get(key)
        if m is None:
            m = self._mol[key] = parse_smiles(key)
        return m

    def fingerprint(self, key: str) -> np.ndarray:
        fp = self._fp.get(key)
        if fp is None:
            fp = self._fp[key] = morgan_fingerprint(self.mol(key), self.config.radius, self.config.n_bits)
        return fp

    # -- MDP interface ---------------------------------------------------

    def reset(self, seed: int | None = None) -> tuple[EnvState, Observation, list[ActionInstance]]:
        """Initial state, its observation and legal actions.

        ``seed`` is accepted for interface stability; transitions are
        deterministic so it has no effect.
        """
        state = EnvState(self.start_species, 0, RUNNING, 0.0, self._aux0)
        if self.config.forbid_revisit:
            state = EnvState(state.species, 0, RUNNING, 0.0, state.aux, frozenset({state.key}))
        if self.goal is not None and self.goal in state.species:
            # degenerate start==goal: reward as for a one-step path
            state = EnvState(state.species, 0, GOAL, self.config.rewards.goal(1), state.aux, state.history)
            return state, self.encode_observation(state), []
        legal = self._compute_legal(state)
        if not legal:
            state = EnvState(state.species, 0, DEAD_END, self.config.rewards.dead_end, state.aux, state.history)
        return state, self.encode_observation(state), legal

    def legal_actions(self, state: EnvState) -> list[ActionInstance]:
        if state.done:
            raise EnvError("episode is over; no legal actions")
        return self._compute_legal(state)

    def _compute_legal(self, state: EnvState) -> list[ActionInstance]:
        cache_key = (state.key, state.history) if self.config.forbid_revisit else state.key
        cached = self._legal.get(cache_key)
        if cached is not None:
            return cached
        cands = []
        for key in sorted(set(state.species)):
            for a in self._species_reactions(key):
                if len(a.reactants) > 1 and _sub(state.species, a.reactants) is None:
                    continue
                cands.append(a)
        if self.config.network is None:
            cands.extend(self._live_pair_reactions(state.species))
        if self.config.aux_pool == COUNTED:
            pool = [k for k, v in state.aux for _ in range(v)]
            cands = [a for a in cands if _sub(pool, a.aux_consumed) is not None]
        if self.config.forbid_revisit:
            cands = [a for a in cands if self._successor_key(state, a) not in state.history]
        cands.sort(key=lambda a: (a.template_id, a.site_key, a.reactants))
        legal = [
            ActionInstance(i, a.template_id, a.site_key, a.reactants, a.products,
                           a.aux_consumed, a.aux_produced, a.reaction_id)
            for i, a in enumerate(cands)
        ]
        self._legal[cache_key] = legal
        return legal

    def _successor_species(self, state: EnvState, action: ActionInstance) -> tuple[tuple[str, ...], tuple]:
        rest = _sub(state.species, action.reactants)
        if rest is None:
            raise EnvError(f"action {action.label} needs species not present")
        species = tuple(sorted(rest + list(action.products)))
        aux = state.aux
        if self.config.aux_pool == COUNTED:
            pool = Counter(dict(state.aux))
            pool.subtract(action.aux_consumed)
            pool.update(action.aux_produced)
            aux = tuple(sorted((k, v) for k, v in pool.items() if v > 0))
        return species, aux

    def _successor_key(self, state: EnvState, action: ActionInstance) -> tuple:
        return self._successor_species(state, action)

    def step(self, state: EnvState, action_index: int) -> tuple[EnvState, Observation, float, bool]:
        if state.done:
            raise EnvError("step on a finished episode")
        legal = self._compute_legal(state)
        if not 0 <= action_index < len(legal):
            raise EnvError(f"action index {action_index} out of range (0..{len(legal) - 1})")
        action = legal[action_index]
        species, aux = self._successor_species(state, action)
        t = state.t + 1
        history = state.history | {(species, aux)} if self.config.forbid_revisit else state.history
        nxt = EnvState(species, t, RUNNING, 0.0, aux, history)
        rewards = self.config.rewards
        if self.goal is not None and self.goal in species:
            nxt = EnvState(species, t, GOAL, rewards.goal(t), aux, history)
        elif not self._compute_legal(nxt):
            nxt = EnvState(species, t, DEAD_END, rewards.dead_end, aux, history)
        elif t >= self.config.max_steps:
            nxt = EnvState(species, t, TIMEOUT, rewards.timeout, aux, history)
        return nxt, self.encode_observation(nxt), nxt.reward, nxt.done

    def state_bits(self, species: Sequence[str]) -> np.ndarray:
        bits = np.zeros(self.config.n_bits, dtype=np.uint8)
        for key in set(species):
            if key not in AUXILIARY:
                bits |= self.fingerprint(key)
        return bits

    def encode_observation(self, state: EnvState) -> Observation:
        return Observation(self.state_bits(state.species), state.t / self.config.max_steps)

    def afterstate_bits(self, state: EnvState, action: ActionInstance) -> np.ndarray:
        """Fingerprint bits of the state ``action`` would lead to, without stepping."""
        if state.done:
            raise EnvError("episode is over")
        legal = self._compute_legal(state)
        if not (0 <= action.index < len(legal) and legal[action.index] == action):
            raise EnvError(f"action {action.label} is not legal here")
        species, _ = self._successor_species(state, action)
        return self.state_bits(species)

    def successor_state(self, state: EnvState, action_index: int) -> EnvState:
        return self.step(state, action_index)[0]


def trace_line(t: int, action: ActionInstance, reward: float) -> str:
    """One line of the episode trace format."""
    return f"T {t} {action.label} -> {'.'.join(action.products)} r={reward:g}"


def make_env(
    network: ReactionNetwork,
    start: Sequence[int | str] | int | str | None = None,
    goal: int | str | None = None,
    **kwargs,
) -> ReactionEnv:
    """Dataset-mode environment defaulting to the network's own start/goal."""
    if start is None:
        start = network.principal_initial
    if goal is None and network.principal_goal:
        goal = network.principal_goal[0]
    return ReactionEnv(EnvConfig(network=network, start=start, goal=goal, **kwargs))
