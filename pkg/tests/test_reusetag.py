import pytest

from cpcsim import scenario as scn
from cpcsim.checker import History, sequentially_composable
from cpcsim.dataplane import Rule
from cpcsim.policy import WORLD, Domain
from cpcsim.psm import replay
from cpcsim.reusetag import add_rules, flip_ingress, prune
from cpcsim.scheduler import Simulator

D = Domain.of((0, 9))


def test_add_rules_keeps_newest_version():
    old = Rule("a", D, 1, 3, tag=1, version=2)
    new = Rule("a", D, 1, 4, tag=1, version=5)
    rules, _ = add_rules([new])((old,))
    assert rules == (new,)
    rules, _ = add_rules([old])(rules)
    assert rules == (new,)
    other = Rule("a", D, 1, 3, tag=2, version=1)
    assert len(add_rules([other])(rules)[0]) == 2


def test_flip_is_conditional_on_current_tag():
    cur = (Rule("a", D, 1, 3, set_tag=0),)
    new = (Rule("b", D, 1, 3, set_tag=1),)
    assert flip_ingress(0, new)(cur) == (new, "ok")
    assert flip_ingress(2, new)(cur) == (cur, "rejected")


def test_prune_drops_older_generations():
    rules = tuple(Rule("a", D, 1, 3, tag=t, version=v) for t, v in ((0, 0), (1, 3), (2, 5)))
    kept, _ = prune(3)(rules)
    assert [r.version for r in kept] == [3, 5]


@pytest.mark.parametrize("f", [0, 1, 2])
@pytest.mark.parametrize("seed", range(25))
def test_random_runs_are_correct_with_f_plus_2_tags(f, seed):
    sc = scn.random_workload("reusetag", f, seed)
    res = Simulator(sc, seed).run()
    H = History.from_run(res)
    v = sequentially_composable(H)
    assert v.composable, v.violation
    assert v.tag_count <= f + 2
    assert not res.stalled
    assert replay(res.events, f, sc.initial, {p.id: p for p in sc.policies}) == []


def test_weak_ports_split_update_into_read_and_write():
    res = Simulator(scn.weakport()).run()
    ops = {ev["op"] for ev in res.events if ev["kind"] == "port_op"}
    assert ops == {"read", "write"}


def test_catchup_broadcast_skips_reinstall():
    sc = scn.random_workload("reusetag", 1, 3)
    plain = Simulator(sc, 3).run()
    sc.protocol["catchup_broadcast"] = True
    fast = Simulator(sc, 3).run()
    assert sequentially_composable(History.from_run(fast)).composable
    count = lambda r: sum(ev["kind"] == "port_op" for ev in r.events)
    assert fast.stats["messages"] > 0
    assert count(fast) <= count(plain) + 20
