import copy

import pytest
from hypothesis import given, strategies as st

from cpcsim.policy import WORLD, Policy
from cpcsim.psm import PSState, replay

PI0 = Policy.make("pi0", [(0, 999)], 0, {1: [1, WORLD]})


def pol(i, dom=(0, 9), pr=None):
    return Policy.make(f"p{i}", [dom], i if pr is None else pr, {1: [1, WORLD]})


def log_pull(ps, cid, events):
    res, info = ps.pull(cid)
    out = None if res is None else {"index": res.index, "policy": res.policy.id,
                                    "tag": res.tag, "installed": res.installed}
    events.append(dict(info, seq=len(events), kind="ps_pull", cid=cid, result=out))
    return res


def log_push(ps, cid, p, events):
    k = ps.push(cid, p)
    events.append({"seq": len(events), "kind": "ps_push", "cid": cid, "policy": p.id, "index": k})
    return k


def test_pull_without_push_is_bottom():
    ps = PSState(1, PI0)
    assert ps.pull(1)[0] is None
    assert ps.pull(1)[1]["reason"] == "no-push"


def test_single_bit_alternates_with_f0():
    ps = PSState(0, PI0)
    tags = []
    for i in range(1, 6):
        ps.push(1, pol(i))
        tags.append(ps.pull(1)[0].tag)
    assert tags == [1, 0, 1, 0, 1]


def test_agreement_across_controllers():
    ps = PSState(1, PI0)
    ps.push(1, pol(1))
    ps.push(2, pol(2))
    a = [ps.pull(1)[0] for _ in range(2)]
    b = [ps.pull(2)[0] for _ in range(2)]
    assert [(r.index, r.policy.id, r.tag) for r in a] == [(r.index, r.policy.id, r.tag) for r in b]


def test_holder_blocks_predecessor_tag():
    ps = PSState(1, PI0)
    ps.push(1, pol(1))
    assert ps.pull(1)[0].tag == 1          # controller 1 now installs index 1
    assert ps.blocked_tags() == {0}
    ps.push(2, pol(2))
    assert ps.pull(2)[0].tag == 1          # index 1 was already tagged
    res, info = ps.pull(2)
    assert res.tag == 2 and info["blocked"] == [0]   # 0 is blocked by controller 1
    assert ps.pull(3)[1]["reason"] == "blocked"   # tags 0 and 1 are both held
    ps.pull(1)                             # controller 1 moves on to index 2
    late = ps.pull(3)[0]                   # a lagging controller reaches index 1
    assert late.index == 1 and late.installed
    assert 3 not in [c for c, held in ps.holding.items() if held]


def test_stall_and_reuse_when_tags_run_out():
    for mode, expect in (("stall", None), ("reuse", 0)):
        ps = PSState(1, PI0, budget=2, exhaustion=mode)
        ps.push(1, pol(1))
        ps.pull(1)                          # holds, blocks tag 0
        ps.push(2, pol(2))
        ps.pull(2)                          # index 1, tag 1
        res, info = ps.pull(2)
        if expect is None:
            assert res is None and info["reason"] == "exhausted"
        else:
            assert res.tag == expect


def test_f_plus_one_blocked_tags_give_bottom():
    ps = PSState(1, PI0, budget=4)
    for cid in (1, 2, 3):
        ps.push(cid, pol(cid))
    ps.pull(1)          # holds index 1, blocks tag 0
    ps.pull(2)
    ps.pull(2)          # holds index 2 (tag 2), blocks tag 1
    assert ps.blocked_tags(exclude=3) == {0, 1}
    res, info = ps.pull(3)
    assert res is None and info["reason"] == "blocked"
    ps.pull(1)          # controller 1 moves on to index 2 and blocks tag 1 instead
    assert ps.blocked_tags(exclude=3) == {1}
    assert ps.pull(3)[0].index == 1


def test_predecessor_skips_conflicting_pushes():
    ps = PSState(0, PI0)
    ps.push(1, pol(1, pr=1))
    ps.push(1, pol(2, pr=1))               # conflicts with p1: not committed
    ps.push(1, pol(3, (50, 60), pr=1))
    assert [ps.committed[k] for k in (1, 2, 3)] == [True, False, True]
    tags = [ps.pull(1)[0].tag for _ in range(3)]
    assert ps.pred_index(3) == 1
    assert tags[2] != tags[0]


def test_duplicate_push_rejected():
    ps = PSState(0, PI0)
    ps.push(1, pol(1))
    with pytest.raises(ValueError):
        ps.push(2, pol(1))


ops = st.lists(st.tuples(st.sampled_from(["push", "pull"]), st.integers(1, 4),
                         st.integers(0, 3), st.integers(0, 2)), max_size=40)


@given(ops, st.integers(0, 2))
def test_random_operation_sequences_replay_cleanly(seq, f):
    ps = PSState(f, PI0)
    policies = {}
    events = []
    n = 0
    for op, cid, dom, pr in seq:
        if op == "push":
            n += 1
            p = Policy.make(f"q{n}", [(dom * 10, dom * 10 + 14)], pr, {1: [1, WORLD]})
            policies[p.id] = p
            log_push(ps, cid, p, events)
        else:
            res = log_pull(ps, cid, events)
            if res is not None:
                assert 0 <= res.tag < f + 2
                assert res.tag != ps.pred_tag(res.index)
    assert replay(events, f, PI0, policies) == []


def test_replay_flags_tampering():
    ps = PSState(1, PI0)
    events, policies = [], {}
    for i in (1, 2):
        p = pol(i)
        policies[p.id] = p
        log_push(ps, 1, p, events)
    log_pull(ps, 1, events)
    log_pull(ps, 2, events)
    log_pull(ps, 2, events)
    assert replay(events, 1, PI0, policies) == []

    wrong_tag = copy.deepcopy(events)
    wrong_tag[-1]["result"]["tag"] = 0
    assert any("tag" in p for p in replay(wrong_tag, 1, PI0, policies))

    disagree = copy.deepcopy(events)
    disagree[3]["result"]["tag"] = 2
    assert replay(disagree, 1, PI0, policies)

    bottom = copy.deepcopy(events)
    bottom[2]["result"] = None
    assert any("unjustified bottom" in p for p in replay(bottom, 1, PI0, policies))
