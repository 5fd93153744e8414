import pytest

from cpcsim import scenario as scn
from cpcsim.scheduler import (STARVATION_BOUND, FaultPlan, OracleWait, Pull, PortUpdate, ScenarioError,
                              Simulator, op_signature)


def test_same_seed_same_log():
    sc = scn.random_workload("reusetag", 1, 11)
    assert Simulator(sc, 5).run().to_jsonl() == Simulator(sc, 5).run().to_jsonl()
    assert Simulator(sc, 5).run().to_jsonl() != Simulator(sc, 6).run().to_jsonl()


def test_log_framing():
    lines = Simulator(scn.fig1()).run().to_jsonl().splitlines()
    assert '"kind":"meta"' in lines[0] and '"kind":"end"' in lines[-1]


def test_fault_plan_limits():
    with pytest.raises(ScenarioError):
        FaultPlan(2, {}).check(2)
    with pytest.raises(ScenarioError):
        FaultPlan(1, {1: {"at_step": 0}, 2: {"at_step": 0}}).check(3)


def test_crash_triggers_fire():
    sc = scn.random_workload("reusetag", 2, 1, crashes=0)
    sc.faults = FaultPlan(2, {1: {"at_step": 0}, 2: {"after_steps": 3}})
    res = Simulator(sc, 1).run()
    crashes = [ev for ev in res.events if ev["kind"] == "crash"]
    assert [ev["cid"] for ev in crashes] == [1, 2]
    assert crashes[0]["seq"] == 0
    assert sum(ev.get("cid") == 2 and ev["kind"] not in ("crash",) and "cid" in ev
               for ev in res.events if ev["kind"] != "invoke") == 3
    assert res.crashed == [1, 2]


def test_guards_disable_waiting_ops():
    sim = Simulator(scn.fig1())
    assert not sim._op_enabled(1, Pull(wait=True))      # nothing pushed yet
    assert sim._op_enabled(1, Pull(wait=False))
    assert sim._op_enabled(1, OracleWait(frozenset({0})))


def test_op_signature():
    sig = op_signature(PortUpdate(3, None, ("ingress", 1)))
    assert sig == {"op": "port_update", "port": 3, "label": ["ingress", 1]}


def test_idle_time_advances_to_next_arrival():
    sc = scn.fig1()
    sc.schedule = scn.Schedule(seed=0)
    sc.requests = [dict(r, at=500) for r in sc.requests]
    res = Simulator(sc).run()
    invokes = [ev["seq"] for ev in res.events if ev["kind"] == "invoke"]
    assert min(invokes) >= 500 and not res.stalled


def test_step_cap_reported():
    sc = scn.random_workload("reusetag", 1, 2)
    sc.schedule.steps = 20
    res = Simulator(sc, 2).run()
    assert res.status == "step_cap" and not res.terminated


def test_fair_scheduler_bounds_waiting():
    res = Simulator(scn.random_workload("fixtag", 2, 4), 4).run()
    assert res.stats["max_wait"] <= STARVATION_BOUND


def test_inject_is_stamped_atomically():
    res = Simulator(scn.random_workload("reusetag", 1, 9), 9).run()
    for a, b in zip(res.events, res.events[1:]):
        if a["kind"] == "inject":
            assert b["kind"] == "forward" and b["uid"] == a["uid"] and b["port"] == a["port"]
