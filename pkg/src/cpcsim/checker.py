"""Offline correctness checking of recorded histories.

A history is the observable part of a run: request invocations and
responses, packet injections and forwarding steps.  The checker rebuilds one
trace per injected packet and searches for a legal sequential ordering of
requests and injects that respects real-time precedence.

Incomplete requests are completed with a response placed at the very end of
the history.  That placement imposes the fewest ordering constraints, so it
subsumes every other placement.  With the response position fixed, the
outcome of an incomplete request is forced by legality (ack exactly when it
does not conflict with what is committed before it), so the search only
branches over orderings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .policy import DROP, TERMINALS, Policy, conflicts_with_any, expected_ports

REQUEST_CAP = 7
INJECT_CAP = 10


class MalformedHistory(Exception):
    pass


@dataclass
class Request:
    req: int
    cid: int
    policy: str
    invoke: int
    response: Optional[int] = None
    result: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.response is not None


@dataclass
class Trace:
    uid: int
    flow: int
    ingress: object
    inject: int
    ports: list
    tags: list  # tag carried on arrival at ports[i]
    terminated: bool = False

    def states(self) -> list:
        return list(zip(self.tags, self.ports))


@dataclass
class History:
    initial: Policy
    policies: dict
    requests: dict
    traces: dict
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    end: dict = field(default_factory=dict)

    @classmethod
    def from_events(cls, events, initial: Policy, policies, meta=None, end=None) -> "History":
        pols = policies if isinstance(policies, dict) else {p.id: p for p in policies}
        requests = {}
        busy: dict = {}
        for ev in events:
            kind = ev["kind"]
            if kind == "invoke":
                cid = ev["cid"]
                if busy.get(cid) is not None:
                    raise MalformedHistory(
                        f"event {ev['seq']}: controller {cid} invoked while request "
                        f"{busy[cid]} is outstanding")
                if ev["req"] in requests:
                    raise MalformedHistory(f"event {ev['seq']}: request {ev['req']} invoked twice")
                if ev["policy"] not in pols:
                    raise MalformedHistory(f"event {ev['seq']}: unknown policy {ev['policy']}")
                requests[ev["req"]] = Request(ev["req"], cid, ev["policy"], ev["seq"])
                busy[cid] = ev["req"]
            elif kind == "response":
                rq = requests.get(ev["req"])
                if rq is None or rq.complete:
                    raise MalformedHistory(f"event {ev['seq']}: unmatched response {ev['req']}")
                if rq.cid != ev["cid"]:
                    raise MalformedHistory(f"event {ev['seq']}: response from the wrong controller")
                rq.response, rq.result = ev["seq"], ev["result"]
                busy[rq.cid] = None
        return cls(initial, pols, requests, extract_traces(events), list(events),
                   dict(meta or {}), dict(end or {}))

    @classmethod
    def from_jsonl(cls, text: str) -> "History":
        from .scenario import Scenario

        meta, end, events = {}, {}, []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedHistory(f"line {n}: {e.msg}") from None
            if obj.get("kind") == "meta":
                meta = obj
            elif obj.get("kind") == "end":
                end = obj
            else:
                events.append(obj)
        if not meta:
            raise MalformedHistory("log has no meta line")
        sc = Scenario.from_json(meta["scenario"])
        return cls.from_events(events, sc.initial, sc.policies, meta, end)

    @classmethod
    def from_run(cls, result) -> "History":
        from .scenario import Scenario

        sc = Scenario.from_json(result.meta["scenario"])
        return cls.from_events(result.events, sc.initial, sc.policies, result.meta,
                               result.end_record())


def extract_traces(events) -> dict:
    """One trace per inject, chained by packet uid."""
    traces: dict = {}
    for ev in events:
        kind = ev["kind"]
        if kind == "inject":
            if ev["uid"] in traces:
                raise MalformedHistory(f"event {ev['seq']}: packet {ev['uid']} injected twice")
            traces[ev["uid"]] = Trace(ev["uid"], ev["flow"], ev["port"], ev["seq"],
                                      [ev["port"]], [None])
        elif kind == "forward":
            tr = traces.get(ev["uid"])
            if tr is None:
                raise MalformedHistory(f"event {ev['seq']}: forward of unknown packet {ev['uid']}")
            if tr.terminated or tr.ports[-1] != ev["port"]:
                raise MalformedHistory(
                    f"event {ev['seq']}: packet {ev['uid']} forwarded from {ev['port']} "
                    f"but its trace ends at {tr.ports[-1]}")
            tr.ports.append(ev["to"])
            tr.tags.append(ev["tag"])
            tr.terminated = ev["to"] in TERMINALS
    return traces


# -- precedence ---------------------------------------------------------------

def _span(x, H: History):
    """(start, end) positions of a request or inject item; open end = None."""
    if x[0] == "req":
        rq = H.requests[x[1]]
        return rq.invoke, rq.response
    tr = H.traces[x[1]]
    return tr.inject, tr.inject


def precedes(x, y, H: History) -> bool:
    """``x <_H y`` for items ``("req", i)`` or ``("inj", uid)``.

    Injects are ordered among themselves only when they share a port.
    """
    if x == y:
        return False
    if x[0] == "inj" and y[0] == "inj":
        a, b = H.traces[x[1]], H.traces[y[1]]
        return a.ingress == b.ingress and a.inject < b.inject
    _, x_end = _span(x, H)
    y_start, _ = _span(y, H)
    return x_end is not None and x_end < y_start


# -- legality -----------------------------------------------------------------

def trace_consistent(ports, terminated, committed, flow, ingress) -> bool:
    want = list(expected_ports(committed, flow, ingress))
    if terminated:
        return list(ports) == want
    return list(ports) == want[:len(ports)]


def is_legal(S, initial: Policy, policies: dict) -> bool:
    """Legality of a sequential complete history.

    ``S`` is a list of ``("req", policy_id, result)`` and
    ``("inj", flow, ingress, ports, terminated)`` entries.
    """
    committed = [initial]
    for item in S:
        if item[0] == "req":
            pol = policies[item[1]]
            ok = not conflicts_with_any(pol, committed)
            if (item[2] == "ack") != ok:
                return False
            if ok:
                committed.append(pol)
        else:
            _, flow, ingress, ports, terminated = item
            if not trace_consistent(ports, terminated, committed, flow, ingress):
                return False
    return True


# -- the search ---------------------------------------------------------------

@dataclass
class Verdict:
    status: str  # composable | violation | undecided
    witness: list = field(default_factory=list)
    completion: dict = field(default_factory=dict)
    violation: Optional[dict] = None
    tag_count: int = 0
    max_tag: Optional[int] = None
    reason: str = ""

    @property
    def composable(self) -> bool:
        return self.status == "composable"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "composable": self.composable,
            "witness": self.witness,
            "completion": {str(k): v for k, v in sorted(self.completion.items())},
            "violation": self.violation,
            "tag_count": self.tag_count,
            "max_tag": self.max_tag,
            "reason": self.reason,
        }


def items_of(H: History) -> list:
    """Requests and injects ordered by their first event in H."""
    items = [("req", r) for r in H.requests] + [("inj", u) for u in H.traces]
    return sorted(items, key=lambda x: _span(x, H)[0])


def witness_entry(x, H: History, result=None) -> dict:
    if x[0] == "req":
        rq = H.requests[x[1]]
        return {"type": "request", "req": rq.req, "policy": rq.policy,
                "result": result, "invoke": rq.invoke, "response": rq.response}
    tr = H.traces[x[1]]
    return {"type": "inject", "uid": tr.uid, "seq": tr.inject,
            "ports": list(tr.ports), "terminated": tr.terminated}


def to_sequential(entries, H: History) -> list:
    """Witness entries as input for :func:`is_legal`."""
    S = []
    for e in entries:
        if e["type"] == "request":
            S.append(("req", e["policy"], e["result"]))
        else:
            tr = H.traces[e["uid"]]
            S.append(("inj", tr.flow, tr.ingress, tuple(tr.ports), tr.terminated))
    return S


def sequentially_composable(H: History, request_cap: int = REQUEST_CAP,
                            inject_cap: int = INJECT_CAP) -> Verdict:
    count, top = tag_complexity(H)
    if len(H.requests) > request_cap or len(H.traces) > inject_cap:
        return Verdict("undecided", tag_count=count, max_tag=top,
                       reason=f"{len(H.requests)} requests / {len(H.traces)} injects exceed "
                              f"the caps {request_cap} / {inject_cap}")
    # injects are tried before requests, each group in H order; this makes the
    # reported witness follow invocation order whenever that is legal
    items = sorted(items_of(H), key=lambda x: (x[0] == "req", _span(x, H)[0]))
    m = len(items)
    preds = [0] * m
    for j, y in enumerate(items):
        for i, x in enumerate(items):
            if precedes(x, y, H):
                preds[j] |= 1 << i
    full = (1 << m) - 1
    pol = H.policies

    @lru_cache(maxsize=None)
    def expected(committed: frozenset, flow, ingress):
        return expected_ports([H.initial] + [pol[p] for p in sorted(committed)], flow, ingress)

    def consistent(tr, committed):
        want = list(expected(committed, tr.flow, tr.ingress))
        if tr.terminated:
            return tr.ports == want
        return tr.ports == want[:len(tr.ports)]

    dead: set = set()
    order: list = []

    def dfs(mask: int, committed: frozenset) -> bool:
        if mask == full:
            return True
        if (mask, committed) in dead:
            return False
        for i, x in enumerate(items):
            if mask >> i & 1 or preds[i] & ~mask:
                continue
            if x[0] == "req":
                rq = H.requests[x[1]]
                p = pol[rq.policy]
                ok = not conflicts_with_any(p, [H.initial] + [pol[c] for c in committed])
                result = "ack" if ok else "nack"
                if rq.complete and rq.result != result:
                    continue
                nxt = committed | {p.id} if ok else committed
                order.append((x, result))
                if dfs(mask | 1 << i, nxt):
                    return True
                order.pop()
            else:
                if not consistent(H.traces[x[1]], committed):
                    continue
                order.append((x, None))
                if dfs(mask | 1 << i, committed):
                    return True
                order.pop()
        dead.add((mask, committed))
        return False

    if dfs(0, frozenset()):
        witness = [witness_entry(x, H, res) for x, res in order]
        completion = {x[1]: res for x, res in order
                      if x[0] == "req" and not H.requests[x[1]].complete}
        return Verdict("composable", witness, completion, tag_count=count, max_tag=top)
    return Verdict("violation", violation=diagnose(H), tag_count=count, max_tag=top,
                   reason="no legal sequential equivalent")


def _subsets(xs):
    for mask in range(1 << len(xs)):
        yield [x for i, x in enumerate(xs) if mask >> i & 1]


def followed_policy(tr: Trace, candidates) -> Optional[str]:
    """A policy whose path for the trace's ingress the trace follows."""
    for p in candidates:
        if tr.flow not in p.domain:
            continue
        path = list(p.path_for(tr.ingress) or (tr.ingress, DROP))
        if tr.ports == path[:len(tr.ports)] and (not tr.terminated or tr.ports == path):
            return p.id
    return None


def diagnose(H: History) -> dict:
    """Locate the first inject whose trace no admissible committed set explains.

    The committed set must contain every acked request that responded before
    the inject and may add any request invoked before it that was not nacked.
    """
    pol = H.policies
    for tr in sorted(H.traces.values(), key=lambda t: t.inject):
        forced = sorted(r.policy for r in H.requests.values()
                        if r.result == "ack" and r.response is not None and r.response < tr.inject)
        optional = sorted(r.policy for r in H.requests.values()
                          if r.invoke < tr.inject and r.policy not in forced and r.result != "nack")
        explained = False
        for extra in _subsets(optional):
            C = [H.initial] + [pol[p] for p in forced + extra]
            if any(conflicts_with_any(p, C) for p in C):
                continue
            if trace_consistent(tr.ports, tr.terminated, C, tr.flow, tr.ingress):
                explained = True
                break
        if not explained:
            cands = [H.initial] + sorted(pol.values(), key=lambda p: -p.priority)
            return {"kind": "trace", "uid": tr.uid, "inject": tr.inject, "flow": tr.flow,
                    "ingress": tr.ingress, "ports": list(tr.ports),
                    "follows": followed_policy(tr, cands), "committed_before": forced}
    for rq in sorted(H.requests.values(), key=lambda r: r.invoke):
        if rq.result == "ack":
            return {"kind": "request", "req": rq.req, "policy": rq.policy,
                    "note": "no ordering makes every response legal"}
    return {"kind": "unknown"}


def tag_complexity(H: History) -> tuple[int, Optional[int]]:
    tags = set(H.meta.get("initial_tags", []))
    for ev in H.events:
        if ev["kind"] == "port_op":
            tags.update(ev.get("tags", []))
        elif ev["kind"] == "forward" and ev.get("tag") is not None:
            tags.add(ev["tag"])
    return len(tags), (max(tags) if tags else None)


def verify_witness(v: Verdict, H: History) -> bool:
    """Independent re-check of a witness: legality, completeness, precedence."""
    if not v.composable:
        return False
    keys = []
    for e in v.witness:
        keys.append(("req", e["req"]) if e["type"] == "request" else ("inj", e["uid"]))
    if sorted(keys, key=str) != sorted(items_of(H), key=str):
        return False
    pos = {k: i for i, k in enumerate(keys)}
    for x in keys:
        for y in keys:
            if precedes(x, y, H) and pos[x] > pos[y]:
                return False
    for e in v.witness:
        if e["type"] == "request":
            rq = H.requests[e["req"]]
            if rq.complete and rq.result != e["result"]:
                return False
    return is_legal(to_sequential(v.witness, H), H.initial, H.policies)


def termination(end: dict) -> str:
    """``ok``, ``stall`` (a correct controller's request never answered) or ``step_cap``."""
    if end.get("status") == "step_cap":
        return "step_cap"
    if end.get("stalled"):
        return "stall"
    return "ok"
