"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary."""
import random
import time

import pytest

from conftest import ACCEPTANCE
from cpcsim import fixtag
from cpcsim import scenario as scn
from cpcsim.checker import History, sequentially_composable, verify_witness
from cpcsim.cli import evaluate, simulate
from cpcsim.naive import naive_composable, synthetic_history
from cpcsim.psm import replay
from cpcsim.scheduler import Simulator

SEEDS = 1000


def record(num, desc, ok, detail):
    ACCEPTANCE[num] = (desc, bool(ok), detail)
    assert ok, detail


def reusetag_sweep(f):
    rows = []
    for seed in range(SEEDS):
        sc = scn.random_workload("reusetag", f, seed)
        res = Simulator(sc, seed).run()
        H = History.from_run(res)
        rep = evaluate(H)
        rows.append({"seed": seed, "status": rep["verdict"]["status"],
                     "tags": rep["verdict"]["tag_count"], "stalled": res.stalled,
                     "term": rep["termination"], "replay": rep["ps_replay"]})
    return rows


@pytest.fixture(scope="module")
def reuse_rows():
    return {f: reusetag_sweep(f) for f in (0, 1, 2)}


def fixtag_sweep(n=4, per_count=250):
    rows = []
    for crashes in range(n):
        for seed in range(per_count):
            sc = scn.random_workload("fixtag", n - 1, seed, n=n, crashes=crashes)
            res = Simulator(sc, seed).run()
            rows.append((sc, res, sequentially_composable(History.from_run(res))))
    return rows


@pytest.fixture(scope="module")
def fix_rows():
    return fixtag_sweep()


def test_1_fig1_reproduction():
    t0 = time.perf_counter()
    res, rep = simulate(scn.fig1())
    elapsed = time.perf_counter() - t0
    v = rep["verdict"]
    order = [e["policy"] for e in v["witness"] if e["type"] == "request"]
    ok = (rep["results"] == {"0": "ack", "1": "ack", "2": "nack"} and v["composable"]
          and order == ["pi1", "pi2", "pi3"] and elapsed < 1.0)
    record(1, "fig1 ack/ack/nack, witness pi1,pi2,pi3", ok,
           f"results={list(rep['results'].values())} order={order} {elapsed * 1000:.0f} ms")


def test_2_reusetag_tag_bound(reuse_rows):
    bad, worst = [], {}
    for f, rows in reuse_rows.items():
        worst[f] = max(r["tags"] for r in rows)
        bad += [(f, r["seed"]) for r in rows
                if r["status"] != "composable" or r["tags"] > f + 2 or r["stalled"]
                or r["term"] != "ok"]
    record(2, f"ReuseTag f+2 tags over {SEEDS} seeds per f", not bad,
           f"max tags per f={worst} failures={bad[:5]}")


def test_3_single_bit_when_f_is_zero(reuse_rows):
    rows = reuse_rows[0]
    worst = max(r["tags"] for r in rows)
    ok = worst <= 2 and all(r["status"] == "composable" for r in rows)
    record(3, "f=0 uses at most 2 tags", ok, f"max tags={worst} over {len(rows)} runs")


def test_4_fixtag_wait_free(fix_rows):
    # the protocol code has no way to wait: none of the guarded operations are in scope
    no_waits = not any(hasattr(fixtag, name) for name in ("OracleWait", "Pull", "Push"))
    bad, worst = [], 0
    for sc, res, v in fix_rows:
        bound = 2 + 2 * len(sc.topology.ingress)
        steps = [ev["task_steps"] for ev in res.events if ev["kind"] == "response"]
        worst = max([worst] + steps)
        waited = any(ev["kind"] in ("ps_pull", "ps_push", "oracle_query") for ev in res.events)
        if not v.composable or res.stalled or waited or any(s > bound for s in steps):
            bad.append(res.meta["seed"])
    record(4, "FixTag wait-free and correct with up to n-1 crashes", no_waits and not bad,
           f"{len(fix_rows)} runs, max steps to response={worst} (bound {bound}), failures={bad[:5]}")


def test_5_fixtag_all_or_nothing(fix_rows):
    bad = []
    for sc, res, _ in fix_rows:
        used = {ev["rule"] for ev in res.events
                if ev["kind"] == "forward" and ev["port"] in sc.topology.ingress}
        for pid in used:
            if not all(any(r.policy == pid for r in res.dataplane.rules(p))
                       for p in sc.topology.ingress):
                bad.append((res.meta["seed"], pid))
    record(5, "FixTag policies seen by packets are installed at every ingress", not bad,
           f"{len(fix_rows)} runs, incomplete={bad[:5]}")


def test_6_lower_bound():
    lines, ok = [], True
    for f in (1, 2):
        _, short = simulate(scn.gen_lowerbound(f, tag_budget=f + 1))
        _, enough = simulate(scn.gen_lowerbound(f, tag_budget=f + 2))
        _, reuse = simulate(scn.gen_lowerbound(f, tag_budget=f + 1, exhaustion="reuse"))
        _, reuse_ok = simulate(scn.gen_lowerbound(f, tag_budget=f + 2, exhaustion="reuse"))
        ok &= short["exit"] in (2, 3) and reuse["exit"] == 2
        ok &= enough["exit"] == 0 and reuse_ok["exit"] == 0
        lines.append(f"f={f}: budget f+1 -> {short['termination']}/{reuse['verdict']['status']},"
                     f" budget f+2 -> exit {enough['exit']}/{reuse_ok['exit']}")
    record(6, "f+1 tags fail on T_f, f+2 pass", ok, "; ".join(lines))


def weakport_report():
    sc = scn.weakport()
    return sc, simulate(sc)[1]


def test_7_weak_ports_violate():
    sc, rep = weakport_report()
    viol = rep["verdict"]["violation"] or {}
    pi2 = next(p for p in sc.policies if p.id == "pi2")
    shape = (viol.get("follows") == "pi1" and "pi2" in viol.get("committed_before", [])
             and viol.get("flow") in pi2.domain)
    record(7, "weak-port interleaving is not composable (expected failure)",
           rep["verdict"]["status"] == "violation" and shape,
           f"trace {viol.get('ports')} flow {viol.get('flow')} follows {viol.get('follows')}"
           f" after {viol.get('committed_before')} committed")


@pytest.mark.xfail(strict=True, reason="read/write ports admit no crash-tolerant solution")
def test_7_weak_ports_expected_failure():
    assert weakport_report()[1]["verdict"]["composable"]


def test_8_checker_matches_naive():
    rng = random.Random(2024)
    n, agree, comp = 300, 0, 0
    for _ in range(n):
        events, init, pols = synthetic_history(rng, max_requests=4, max_injects=6)
        H = History.from_events(events, init, pols)
        v = sequentially_composable(H)
        same = v.composable == naive_composable(events, init, pols)
        agree += same and (not v.composable or verify_witness(v, H))
        comp += v.composable
    record(8, "checker agrees with naive enumeration", agree == n,
           f"{agree}/{n} agree ({comp} composable)")


def test_9_ps_replay(reuse_rows):
    problems = sum(len(r["replay"]) for rows in reuse_rows.values() for r in rows)
    runs = sum(len(rows) for rows in reuse_rows.values())
    for name in ("fig1", "lowerbound_f1", "lowerbound_f1_budget2"):
        res, rep = simulate(scn.CANNED[name]())
        sc = scn.Scenario.from_json(res.meta["scenario"])
        found = replay(res.events, sc.faults.f, sc.initial, {p.id: p for p in sc.policies},
                       sc.protocol.get("tag_budget"))
        problems += len(found)
        runs += 1
    record(9, "PS replay finds no discrepancy", problems == 0, f"{runs} runs, {problems} problems")


def test_10_determinism():
    cases = [(scn.CANNED[k](), None) for k in sorted(scn.CANNED)]
    cases += [(scn.random_workload(p, 1, s), s) for p in ("reusetag", "fixtag") for s in range(25)]
    diffs = sum(Simulator(sc, s).run().to_jsonl() != Simulator(sc, s).run().to_jsonl()
                for sc, s in cases)
    record(10, "re-runs are byte-identical", diffs == 0, f"{len(cases)} pairs, {diffs} diffs")
