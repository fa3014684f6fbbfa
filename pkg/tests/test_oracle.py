from collections import Counter

import networkx as nx
import pytest

from sugarpath import network
from sugarpath.env import GOAL, make_env
from sugarpath.oracle import (
    OracleOverflow,
    ReplayError,
    build_state_graph,
    exhaustive_check,
    replay,
    revalidate,
    reversal_check,
    shortest_path,
)

from conftest import toy_network

ALKANES = ["C" * k for k in range(1, 8)]

# frozen from the default catalog network
FWD_TEMPLATES = ["a1", "e1", "a2", "a1", "b1", "a1", "g2", "b1", "a1", "b1"]
FWD_ACTIONS = [0, 1, 0, 0, 1, 1, 2, 1, 0, 1]
REV_TEMPLATES = ["b1~", "a1~", "b1~", "a1~", "g2~", "b1~", "a1~", "a2~", "e1~", "a1~"]
REV_ACTIONS = [3, 0, 4, 0, 6, 5, 0, 4, 1, 0]


@pytest.fixture(scope="module")
def fwd_graph(fructose_net):
    return build_state_graph(make_env(fructose_net))


@pytest.fixture(scope="module")
def rev_graph(reversed_net):
    return build_state_graph(make_env(reversed_net))


def independent_state_bfs(net, cap):
    """State graph straight from the reaction list, as a networkx digraph."""
    start = tuple(sorted(net.species[i].canonical for i in net.principal_initial))
    goal = net.species[net.principal_goal[0]].canonical
    by_reactant = {}
    for r in net.reactions:
        by_reactant.setdefault(r.reactant_ids, []).append(r)
    g = nx.DiGraph()
    g.add_node(start)
    depth = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for s in frontier:
            if goal in s or depth[s] >= cap:
                continue
            ids = Counter(net.id_of(k) for k in s)
            for key, rs in by_reactant.items():
                if Counter(key) - ids:
                    continue
                for r in rs:
                    left = Counter(s)
                    left.subtract(net.species[i].canonical for i in r.reactant_ids)
                    left.update(net.species[i].canonical for i in r.product_ids)
                    t = tuple(sorted(left.elements()))
                    if t not in depth:
                        depth[t] = depth[s] + 1
                        nxt.append(t)
                    g.add_edge(s, t)
        frontier = nxt
    return g, start, [n for n in g if goal in n]


def test_chain():
    net = toy_network(ALKANES[:5], [(i, i + 1) for i in range(4)], goal=(4,))
    g = build_state_graph(make_env(net))
    res = shortest_path(g)
    assert res.exists and res.length == 4
    assert res.labels == [f"t{k:02d}@{net.species[k].canonical}" for k in range(4)]
    assert len(g.nodes) == 5 and len(g.edges) == 4
    ex = exhaustive_check(g)
    assert ex.paths == [[0, 0, 0, 0]]


def test_loop_has_no_path():
    net = toy_network(ALKANES[:3], [(0, 1), (1, 0)], goal=(2,))
    g = build_state_graph(make_env(net))
    res = shortest_path(g)
    assert not res.exists and res.length == 0
    assert res.report() == "exists=false\n"
    assert len(g.nodes) == 2 and g.dead_ends() == []
    assert exhaustive_check(g).paths == []


def test_empty_network_dead_end():
    net = toy_network(ALKANES[:2], [], goal=(1,))
    g = build_state_graph(make_env(net))
    assert len(g.nodes) == 1 and g.dead_ends() == [0]
    assert not shortest_path(g).exists


def test_lexicographic_tie_break():
    # two length-2 routes; the one through the lower action index wins
    net = toy_network(ALKANES[:4], [(0, 2), (0, 1), (1, 3), (2, 3)], goal=(3,))
    g = build_state_graph(make_env(net))
    res = shortest_path(g)
    assert res.length == 2
    assert res.actions == [0, 0]
    assert res.labels[0].startswith("t00")
    assert sorted(exhaustive_check(g).paths) == [[0, 0], [1, 0]]


def test_depth_cap_truncates():
    net = toy_network(ALKANES[:5], [(i, i + 1) for i in range(4)], goal=(4,))
    g = build_state_graph(make_env(net), depth_cap=2)
    assert g.truncated and len(g.nodes) == 3
    assert not shortest_path(g).exists


def test_guards(fructose_net):
    with pytest.raises(OracleOverflow):
        build_state_graph(make_env(fructose_net), max_states=50)
    with pytest.raises(ValueError):
        build_state_graph(make_env(fructose_net, forbid_revisit=True))
    with pytest.raises(ValueError):
        build_state_graph(make_env(fructose_net), depth_cap=-1)


def test_fructose_shortest_pinned(fwd_graph):
    res = shortest_path(fwd_graph)
    assert res.length == 10
    assert [l.split("@")[0] for l in res.labels] == FWD_TEMPLATES
    assert res.actions == FWD_ACTIONS
    assert len(res.trace) == 10 and res.trace[-1].endswith("r=1.1")


def test_fructose_graph_pinned(fwd_graph, rev_graph):
    assert (len(fwd_graph.nodes), len(fwd_graph.edges)) == (939, 2445)
    assert fwd_graph.dead_ends() == [] and max(fwd_graph.out_degrees().values()) == 8
    assert (len(rev_graph.nodes), len(rev_graph.edges)) == (102, 246)
    assert rev_graph.dead_ends() == []


def test_shortest_matches_networkx(fructose_net, reversed_net, fwd_graph, rev_graph):
    for net, graph in ((fructose_net, fwd_graph), (reversed_net, rev_graph)):
        g, start, goals = independent_state_bfs(net, 20)
        assert g.number_of_nodes() == len(graph.nodes)
        dist = nx.single_source_shortest_path_length(g, start)
        assert min(dist[n] for n in goals) == shortest_path(graph).length


def test_exhaustive_agrees(fwd_graph, rev_graph):
    for g in (fwd_graph, rev_graph):
        ten = exhaustive_check(g, max_steps=10)
        eleven = exhaustive_check(g, max_steps=11)
        assert (len(ten.paths), ten.min_length) == (16, 10)
        assert len(eleven.paths) == 19
        assert shortest_path(g).actions in ten.paths


def test_exhaustive_node_cap(fwd_graph):
    with pytest.raises(OracleOverflow):
        exhaustive_check(fwd_graph, node_cap=100)


def test_exhaustive_path_cap(fwd_graph):
    with pytest.raises(OracleOverflow):
        exhaustive_check(fwd_graph, max_steps=11, max_paths=5)


def test_reversal_duality(fwd_graph, rev_graph):
    assert reversal_check(fwd_graph, rev_graph)
    res = shortest_path(rev_graph)
    assert [l.split("@")[0] for l in res.labels] == REV_TEMPLATES
    assert res.actions == REV_ACTIONS


def test_reversal_toy():
    net = toy_network(ALKANES[:4], [(0, 1), (1, 2), (2, 3), (0, 3)], goal=(3,))
    rev = network.reverse(net)
    fwd_g, rev_g = build_state_graph(make_env(net)), build_state_graph(make_env(rev))
    assert shortest_path(fwd_g).length == shortest_path(rev_g).length == 1
    assert reversal_check(fwd_g, rev_g)


def test_replay(fructose_net):
    env = make_env(fructose_net)
    final, trace = replay(env, FWD_ACTIONS)
    assert final.outcome == GOAL and final.t == 10
    assert trace == shortest_path(build_state_graph(env)).trace
    with pytest.raises(ReplayError):
        replay(env, [99])
    with pytest.raises(ReplayError):
        replay(env, FWD_ACTIONS + [0])


def test_revalidate(fructose_net, reversed_net, catalog):
    lines = revalidate(make_env(fructose_net), FWD_ACTIONS, catalog)
    assert len(lines) == 10 and lines[0].startswith("T 1 a1@")
    back = revalidate(make_env(reversed_net), REV_ACTIONS, catalog)
    assert back[-1].endswith("r=1.1")


def test_revalidate_catches_forgery(fructose_net, catalog):
    forged = [t for t in catalog if t.id != "e1"]
    with pytest.raises(ReplayError):
        revalidate(make_env(fructose_net), FWD_ACTIONS, forged)
