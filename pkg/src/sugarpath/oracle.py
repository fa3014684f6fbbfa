"""Ground-truth search over the environment's state graph.

Nodes are environment states (species multisets plus aux pool), edges are
legal actions. Breadth-first search gives optimal path lengths; a separate
depth-limited DFS enumerates paths on small graphs so the two can be
checked against each other.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .env import DEAD_END, GOAL, EnvConfig, EnvState, ReactionEnv, trace_line

DEFAULT_MAX_STATES = 200_000
EXHAUSTIVE_NODE_CAP = 10_000


class OracleOverflow(RuntimeError):
    """State or path count exceeded its guard."""


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    action: int  # index into the legal list of ``src``
    label: str  # template_id@site_key


@dataclass
class StateGraph:
    env: ReactionEnv
    nodes: list[EnvState]
    edges: list[Edge]
    start: int
    goals: frozenset[int]
    depth: list[int]  # BFS depth of each node from start
    out: dict[int, list[Edge]] = field(default_factory=dict)
    legal_counts: dict[int, int] = field(default_factory=dict)
    truncated: bool = False  # some node sat on the depth cap with moves left

    def out_degrees(self) -> dict[int, int]:
        """Legal-action count of every node that is not terminal."""
        return dict(self.legal_counts)

    def dead_ends(self) -> list[int]:
        return [i for i, s in enumerate(self.nodes) if s.outcome == DEAD_END]

    def index_of(self, species) -> int | None:
        key = tuple(sorted(species))
        for i, s in enumerate(self.nodes):
            if s.species == key:
                return i
        return None


def _node_key(state: EnvState):
    return state.key


def build_state_graph(
    config: EnvConfig | ReactionEnv,
    depth_cap: int | None = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> StateGraph:
    """BFS closure of the states reachable from the start within ``depth_cap`` steps.

    ``depth_cap`` defaults to the episode horizon. Nodes are keyed by species
    multiset and aux pool only (the step counter is dropped), so a state seen
    at several depths is one node. Goal and dead-end nodes are not expanded.
    """
    env = config if isinstance(config, ReactionEnv) else ReactionEnv(config)
    if env.config.forbid_revisit:
        raise ValueError("state graph is defined for forbid_revisit=False only")
    cap = env.config.max_steps if depth_cap is None else depth_cap
    if cap < 0:
        raise ValueError("depth cap must be >= 0")
    root, _, _ = env.reset()
    # drop the step counter and any terminal reward from the node record
    def bare(s: EnvState) -> EnvState:
        return EnvState(s.species, 0, s.outcome if s.outcome in (GOAL, DEAD_END) else "running", 0.0, s.aux)

    nodes = [bare(root)]
    index = {_node_key(root): 0}
    depth = [0]
    edges: list[Edge] = []
    out: dict[int, list[Edge]] = {}
    legal_counts: dict[int, int] = {}
    goals = {0} if root.outcome == GOAL else set()
    truncated = False
    queue = deque([0])
    while queue:
        i = queue.popleft()
        node = nodes[i]
        if node.done:
            continue
        legal = env.legal_actions(node)
        legal_counts[i] = len(legal)
        if depth[i] >= cap:
            truncated = truncated or bool(legal)
            continue
        for a in legal:
            # step from t=0 so the horizon never cuts an edge short
            nxt, _, _, _ = env.step(node, a.index)
            key = _node_key(nxt)
            j = index.get(key)
            if j is None:
                if len(nodes) >= max_states:
                    raise OracleOverflow(f"more than {max_states} states")
                j = len(nodes)
                index[key] = j
                nodes.append(bare(nxt))
                depth.append(depth[i] + 1)
                if nxt.outcome == GOAL:
                    goals.add(j)
                queue.append(j)
            e = Edge(i, j, a.index, a.label)
            edges.append(e)
            out.setdefault(i, []).append(e)
    return StateGraph(env, nodes, edges, 0, frozenset(goals), depth, out, legal_counts, truncated)


@dataclass
class PathResult:
    exists: bool
    length: int = 0
    actions: list[int] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    trace: list[str] = field(default_factory=list)

    def report(self) -> str:
        """One line per action in episode-trace format."""
        if not self.exists:
            return "exists=false\n"
        return "".join(line + "\n" for line in self.trace)


class ReplayError(AssertionError):
    pass


def replay(env: ReactionEnv, actions: list[int], start: EnvState | None = None):
    """Step ``actions`` through ``env``; return (final state, trace lines)."""
    state = start if start is not None else env.reset()[0]
    lines = []
    for a in actions:
        if state.done:
            raise ReplayError("path continues past a terminal state")
        legal = env.legal_actions(state)
        if not 0 <= a < len(legal):
            raise ReplayError(f"action {a} not legal at t={state.t}")
        state, _, r, _ = env.step(state, a)
        lines.append(trace_line(state.t, legal[a], r))
    return state, lines


def shortest_path(graph: StateGraph, start: int | None = None, goal=None) -> PathResult:
    """BFS-optimal path from ``start`` to a goal node.

    ``goal`` may be a node index, an iterable of node indices or None (the
    graph's goal set). Among equally short paths the one with the
    lexicographically smallest action-index sequence wins; since legal lists
    are sorted, that is also the smallest sequence of (template, site) labels.
    """
    start = graph.start if start is None else start
    if goal is None:
        targets = set(graph.goals)
    elif isinstance(goal, int):
        targets = {goal}
    else:
        targets = set(goal)
    if not 0 <= start < len(graph.nodes) or any(not 0 <= g < len(graph.nodes) for g in targets):
        raise KeyError("node index out of range")
    parent: dict[int, Edge | None] = {start: None}
    queue = deque([start])
    found = start if start in targets else None
    # FIFO over index-ordered edges: first discovery is the lexicographic minimum
    while queue and found is None:
        i = queue.popleft()
        for e in graph.out.get(i, ()):
            if e.dst in parent:
                continue
            parent[e.dst] = e
            if e.dst in targets:
                found = e.dst
                break
            queue.append(e.dst)
    if found is None:
        return PathResult(False)
    path: list[Edge] = []
    n = found
    while parent[n] is not None:
        path.append(parent[n])
        n = parent[n].src
    path.reverse()
    actions = [e.action for e in path]
    result = PathResult(True, len(path), actions, [e.label for e in path])
    if start == graph.start:
        final, lines = replay(graph.env, actions)
        if path and final.outcome != GOAL and found in graph.goals:
            raise ReplayError(f"replay ended in {final.outcome}, expected goal")
        result.trace = lines
    return result


@dataclass
class ExhaustiveResult:
    paths: list[list[int]]
    min_length: int | None
    dead_ends: int
    max_out_degree: int
    n_nodes: int


def exhaustive_check(
    graph: StateGraph,
    max_steps: int | None = None,
    node_cap: int = EXHAUSTIVE_NODE_CAP,
    max_paths: int = 100_000,
) -> ExhaustiveResult:
    """Enumerate every goal-reaching path of at most ``max_steps`` steps by DFS.

    Paths may revisit states; they stop at the first goal node. Raises
    OracleOverflow if the graph has more than ``node_cap`` nodes or there are
    more than ``max_paths`` paths. Cross-checks the BFS shortest length.
    """
    if len(graph.nodes) > node_cap:
        raise OracleOverflow(f"{len(graph.nodes)} nodes exceeds cap {node_cap}")
    m = graph.env.config.max_steps if max_steps is None else max_steps
    paths: list[list[int]] = []
    prefix: list[int] = []

    def dfs(i: int) -> None:
        if i in graph.goals:
            if len(paths) >= max_paths:
                raise OracleOverflow(f"more than {max_paths} goal paths")
            paths.append(list(prefix))
            return
        if len(prefix) >= m:
            return
        for e in graph.out.get(i, ()):
            prefix.append(e.action)
            dfs(e.dst)
            prefix.pop()

    dfs(graph.start)
    min_len = min((len(p) for p in paths), default=None)
    bfs = shortest_path(graph)
    if bfs.exists and bfs.length <= m:
        if min_len != bfs.length:
            raise AssertionError(f"DFS minimum {min_len} disagrees with BFS length {bfs.length}")
    elif min_len is not None:
        raise AssertionError("DFS found a path BFS missed")
    degrees = graph.out_degrees()
    return ExhaustiveResult(
        paths, min_len, len(graph.dead_ends()), max(degrees.values(), default=0), len(graph.nodes)
    )


def reversal_check(forward: StateGraph, backward: StateGraph) -> bool:
    """A forward start->goal path of length L must have a reversed path of length L."""
    f = shortest_path(forward)
    b = shortest_path(backward)
    return f.exists == b.exists and (not f.exists or f.length == b.length)


def revalidate(env: ReactionEnv, actions: list[int], catalog) -> list[str]:
    """Re-derive every step of a path with the rule engine.

    For each action the template is re-matched on the reactant molecules,
    the match with the recorded site key is applied, and the products must
    equal the recorded ones. A reversed action (``~`` suffix) is checked by
    applying its forward template to its products. Returns the trace.
    """
    from .molgraph import canonical_smiles, parse_smiles
    from .rules import find_matches, apply

    by_id = {t.id: t for t in catalog}
    state = env.reset()[0]
    lines = []
    for step, a in enumerate(actions, 1):
        legal = env.legal_actions(state)
        act = legal[a]
        tid, flipped = act.template_id, act.template_id.endswith("~")
        tpl = by_id.get(tid.rstrip("~"))
        if tpl is None:
            raise ReplayError(f"step {step}: template {tid} not in catalog")
        lhs, rhs = (act.products, act.reactants) if flipped else (act.reactants, act.products)
        mols = [parse_smiles(k) for k in lhs]
        found = [m for m in find_matches(tpl, *mols) if m.site_key == act.site_key]
        if not found:
            raise ReplayError(f"step {step}: {act.label} does not match")
        got = sorted(canonical_smiles(p) for p in apply(tpl, mols, found[0]))
        if got != sorted(rhs):
            raise ReplayError(f"step {step}: {act.label} gives {got}, recorded {sorted(rhs)}")
        state, _, r, _ = env.step(state, a)
        lines.append(trace_line(state.t, act, r))
    return lines
