import networkx as nx
import pytest

from cpcsim import scenario as scn
from cpcsim.checker import History, sequentially_composable
from cpcsim.dataplane import Rule
from cpcsim.fixtag import (ALL_FLOWS, CatalogOverflow, PathCatalog, add_tagging_rule,
                           enumerate_paths, ingress_rule)
from cpcsim.policy import DROP, WORLD, Domain, Policy
from cpcsim.scheduler import FaultPlan, Simulator


def nx_paths(topo):
    g = nx.DiGraph()
    g.add_edges_from(topo.links)
    return {tuple(p) for i in topo.ingress for t in (WORLD, DROP) for p in nx.all_simple_paths(g, i, t)}


# sizes computed once with the networkx oracle above and frozen here
@pytest.mark.parametrize("build,size", [
    (scn._triangle, 195),
    (scn.ring4, 72),
    (lambda: scn.lowerbound_topology(1)[0], 36),
    (lambda: scn.lowerbound_topology(2)[0], 76),
    (lambda: scn.weakport().topology, 16),
])
def test_catalog_matches_simple_path_oracle(build, size):
    topo = build()
    paths = enumerate_paths(topo)
    assert len(paths) == size
    assert set(paths) == nx_paths(topo)
    assert paths == sorted(paths, key=lambda p: [(isinstance(x, str), x) for x in p])


def test_catalog_cap():
    with pytest.raises(CatalogOverflow):
        PathCatalog(scn._triangle(), cap=50)


def test_every_policy_path_has_a_tag():
    sc = scn.fig1("fixtag")
    cat = PathCatalog(sc.topology)
    for p in [sc.initial] + sc.policies:
        for ing, path in p.paths:
            assert cat.paths[cat.tag_of(path)] == path


def test_add_tagging_rule_outcomes():
    a = Rule("a", Domain.of((0, 9)), 1, 3, set_tag=1)
    same = Rule("a", Domain.of((0, 9)), 1, 3, set_tag=1)
    clash = Rule("b", Domain.of((5, 20)), 1, 3, set_tag=2)
    fine = Rule("c", Domain.of((5, 20)), 2, 3, set_tag=3)
    rules, res = add_tagging_rule(a)(())
    assert res == "ok" and rules == (a,)
    assert add_tagging_rule(same)(rules) == (rules, "ok")
    assert add_tagging_rule(clash)(rules)[1][0] == "conflict"
    assert add_tagging_rule(fine)(rules)[0] == (a, fine)


def test_missing_path_tags_to_drop():
    sc = scn.fig1("fixtag")
    cat = PathCatalog(sc.topology)
    p = Policy.make("partial", [(0, 1)], 3, {1: [1, 13, WORLD]})
    r = ingress_rule(p, 2, cat)
    assert r.out == DROP and cat.paths[r.set_tag] == (2, DROP)


def ingress_count(sc):
    return len(sc.topology.ingress)


@pytest.mark.parametrize("seed", range(40))
def test_wait_free_under_n_minus_one_crashes(seed):
    n = 4
    sc = scn.random_workload("fixtag", n - 1, seed, n=n, crashes=n - 1)
    res = Simulator(sc, seed).run()
    assert res.status == "quiescent" and not res.stalled
    bound = 2 + 2 * ingress_count(sc)
    for ev in res.events:
        if ev["kind"] == "response":
            assert ev["task_steps"] <= bound
    assert not any(ev["kind"] in ("ps_pull", "ps_push", "oracle_query") for ev in res.events)
    assert sequentially_composable(History.from_run(res)).composable


def test_loser_completes_winner_before_nack():
    # p1 and p2 conflict; p2 loses at port 1 and must finish p1 everywhere
    sc = scn.fig1("fixtag")
    p1 = Policy.make("p1", [(0, 9)], 1, {1: [1, 13, WORLD], 2: [2, 21, WORLD], 3: [3, 32, WORLD]})
    p2 = Policy.make("p2", [(5, 20)], 1, {1: [1, 12, WORLD], 2: [2, 23, WORLD], 3: [3, 31, WORLD]})
    sc.policies = [p1, p2]
    sc.requests = [{"controller": 1, "policy": "p1", "at": 0}, {"controller": 2, "policy": "p2", "at": 0}]
    sc.injects = []
    sc.faults = FaultPlan(1, {})
    sc.schedule.script = [
        {"do": "request", "index": 0}, {"do": "request", "index": 1},
        {"do": "ctrl", "cid": 1}, {"do": "ctrl", "cid": 1},   # broadcast, port 1
        {"do": "crash", "cid": 1},
        {"do": "run", "controllers": [2], "until_response": 1},
    ]
    sc.schedule.then = "stop"
    res = Simulator(sc).run()
    assert res.responses() == {1: "nack"}
    for port in sc.topology.ingress:
        assert any(r.policy == "p1" for r in res.dataplane.rules(port))
