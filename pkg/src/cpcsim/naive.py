"""A second, deliberately simple composability decision procedure.

It shares no search code with :mod:`cpcsim.checker`: it rebuilds traces from
raw events, enumerates request permutations and completion outcomes
explicitly, and then places each inject into a gap between requests.
Injects only need to respect same-port order among themselves, so a greedy
left-to-right choice of gaps per port decides feasibility.

Also provides a generator of small synthetic histories for cross-checking.
"""
from __future__ import annotations

import itertools
import random

DROP = "Drop"
ENDS = ("World", "Drop")


def _overlap(a, b) -> bool:
    return any(lo1 <= hi2 and lo2 <= hi1
               for lo1, hi1 in a.domain.intervals for lo2, hi2 in b.domain.intervals)


def _clash(a, b) -> bool:
    return a.id != b.id and a.priority == b.priority and _overlap(a, b)


def _route(committed, flow, ingress) -> list:
    best = None
    for p in committed:
        if any(lo <= flow <= hi for lo, hi in p.domain.intervals):
            if best is None or p.priority > best.priority:
                best = p
    if best is None:
        return [ingress, DROP]
    for port, path in best.paths:
        if port == ingress:
            return list(path)
    return [ingress, DROP]


def _fits(ports, done, route) -> bool:
    return ports == route if done else ports == route[:len(ports)]


def naive_composable(events, initial, policies) -> bool:
    pols = policies if isinstance(policies, dict) else {p.id: p for p in policies}
    reqs = {}
    pkts = {}
    for ev in events:
        k = ev["kind"]
        if k == "invoke":
            reqs[ev["req"]] = [ev["policy"], ev["seq"], None, None]
        elif k == "response":
            reqs[ev["req"]][2] = ev["seq"]
            reqs[ev["req"]][3] = ev["result"]
        elif k == "inject":
            pkts[ev["uid"]] = [ev["flow"], ev["port"], ev["seq"], [ev["port"]], False]
        elif k == "forward":
            pk = pkts[ev["uid"]]
            pk[3].append(ev["to"])
            pk[4] = ev["to"] in ENDS
    rids = sorted(reqs)
    open_ids = [r for r in rids if reqs[r][2] is None]
    by_port: dict = {}
    for uid in sorted(pkts, key=lambda u: pkts[u][2]):
        by_port.setdefault(pkts[uid][1], []).append(uid)

    for perm in itertools.permutations(rids):
        where = {r: i for i, r in enumerate(perm)}
        if any(reqs[a][2] is not None and reqs[a][2] < reqs[b][1] and where[a] > where[b]
               for a in rids for b in rids):
            continue
        for outcome in itertools.product(("ack", "nack"), repeat=len(open_ids)):
            result = {r: reqs[r][3] for r in rids}
            result.update(zip(open_ids, outcome))
            # committed sets after 0..m requests
            prefix = [[initial]]
            ok = True
            for r in perm:
                cur = prefix[-1]
                p = pols[reqs[r][0]]
                clash = any(_clash(p, q) for q in cur)
                if (result[r] == "ack") == clash:
                    ok = False
                    break
                prefix.append(cur + [p] if result[r] == "ack" else cur)
            if not ok:
                continue
            if all(_place_port(uids, pkts, reqs, where, prefix) for uids in by_port.values()):
                return True
    return False


def _slots(uid, pkts, reqs, where, prefix) -> list:
    flow, ingress, pos, ports, done = pkts[uid]
    m = len(prefix) - 1
    lo, hi = 0, m
    for r, (_, inv, resp, _) in reqs.items():
        if resp is not None and resp < pos:
            lo = max(lo, where[r] + 1)
        if pos < inv:
            hi = min(hi, where[r])
    return [s for s in range(lo, hi + 1) if _fits(ports, done, _route(prefix[s], flow, ingress))]


def _place_port(uids, pkts, reqs, where, prefix) -> bool:
    last = 0
    for uid in uids:
        options = [s for s in _slots(uid, pkts, reqs, where, prefix) if s >= last]
        if not options:
            return False
        last = options[0]
    return True


# -- synthetic histories ----------------------------------------------------------

def synthetic_history(rng: random.Random, max_requests: int = 4, max_injects: int = 6):
    """Random well-formed history on the ring topology.

    Returns ``(events, initial, policies)``.  Responses and traces are drawn
    so that both composable and non-composable histories are common.
    """
    from .scenario import FLOW_SPACE, RING, ring_policy

    initial = ring_policy("pi0", [FLOW_SPACE], 0, 1, 1)
    spans = [(0, 99), (50, 149), (100, 199), (0, 199)]
    nreq = rng.randint(0, max_requests)
    pols = [ring_policy(f"pi{i + 1}", [rng.choice(spans)], rng.choice((1, 2)),
                        rng.choice(RING), rng.choice((1, -1))) for i in range(nreq)]
    timeline = []  # (time, tiebreak, event-without-seq)
    for i, p in enumerate(pols):
        t0 = rng.uniform(0, 10)
        timeline.append((t0, 0, {"kind": "invoke", "cid": i + 1, "req": i, "policy": p.id}))
        if rng.random() < 0.8:
            res = rng.choice(("ack", "ack", "nack"))
            timeline.append((t0 + rng.uniform(0, 6), 1,
                             {"kind": "response", "cid": i + 1, "req": i, "result": res}))
    for uid in range(rng.randint(0, max_injects)):
        t = rng.uniform(0, 16)
        port = rng.choice(RING)
        flow = rng.choice((10, 75, 120, 175, 300))
        chosen = [initial] + [p for p in pols if rng.random() < 0.5]
        try:
            route = _route_checked(chosen, flow, port)
        except ValueError:
            route = _route([initial], flow, port)
        if rng.random() < 0.2:
            route = route[:rng.randint(1, len(route))]
        timeline.append((t, 2, {"kind": "inject", "uid": uid, "flow": flow, "port": port}))
        for j, (here, nxt) in enumerate(zip(route, route[1:])):
            timeline.append((t, 3 + j, {"kind": "forward", "uid": uid, "port": here,
                                        "to": nxt, "tag": None, "rule": None}))
    timeline.sort(key=lambda e: (e[0], e[1]))
    events = []
    for seq, (_, _, ev) in enumerate(timeline):
        events.append(dict(ev, seq=seq))
    return events, initial, pols


def _route_checked(committed, flow, ingress):
    covering = [p for p in committed if any(lo <= flow <= hi for lo, hi in p.domain.intervals)]
    if covering:
        top = max(p.priority for p in covering)
        if len([p for p in covering if p.priority == top]) > 1:
            raise ValueError("conflicting composition")
    return _route(committed, flow, ingress)
