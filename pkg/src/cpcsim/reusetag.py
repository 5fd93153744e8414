"""ReuseTag: PS-ordered, oracle-gated, two-phase installation with f+2 tags.

Every controller runs an installer loop that pulls the next policy from PS,
checks it against the committed sequence, waits until the network only
carries the predecessor's tag, and then installs the whole composition
under the new tag: internal ports first, then a conditional flip of each
ingress port, then pruning of rules from older generations.

Rules carry the PS index that installed them (``version``).  Pruning keeps
every rule at least as new as the predecessor, which removes the same rules
as "drop every tag but the last two" for an up-to-date controller while
staying harmless when a slow controller prunes late.

A pull marked ``installed`` means a later policy already got its tag, which
only happens after this one was fully installed.  The controller then just
records the policy.  Re-installing it would be unsafe: the ingress check only
sees tags, and by then the predecessor's tag may be in use again by a newer
generation.
"""
from __future__ import annotations

from types import SimpleNamespace

from .dataplane import Rule
from .policy import DROP, conflicts_with_any, validate
from .psm import PSState
from .scheduler import (Broadcast, Controller, OracleWait, PortRead, PortUpdate,
                        PortWrite, Pull, Push, Respond, ScenarioError)


def internal_rules(port, composed, tag, version) -> list[Rule]:
    rules = []
    for pol in composed:
        hops = pol.next_hops().get(port)
        if hops:
            (nxt,) = hops
            rules.append(Rule(pol.id, pol.domain, pol.priority, nxt, tag=tag, version=version))
    return rules


def ingress_rules(port, composed, tag, version) -> list[Rule]:
    rules = []
    for pol in composed:
        path = pol.path_for(port) or (port, DROP)
        rules.append(Rule(pol.id, pol.domain, pol.priority, path[1], set_tag=tag, version=version))
    return rules


def add_rules(new_rules):
    """Merge rules keyed by (policy, tag); an existing key keeps the newest version."""
    def g(rules):
        out = list(rules)
        where = {r.key: i for i, r in enumerate(out)}
        for r in new_rules:
            i = where.get(r.key)
            if i is None:
                where[r.key] = len(out)
                out.append(r)
            elif out[i].version < r.version:
                out[i] = r
        return tuple(out), "ok"
    return g


def flip_ingress(prev_tag, new_rules):
    """Replace the tagging rules iff the port currently tags with ``prev_tag``."""
    def g(rules):
        if {r.set_tag for r in rules} == {prev_tag}:
            return tuple(new_rules), "ok"
        return rules, "rejected"
    return g


def prune(min_version):
    def g(rules):
        return tuple(r for r in rules if r.version >= min_version), "ok"
    return g


class ReuseTagController(Controller):
    def __init__(self, cid, ctx):
        super().__init__(cid, ctx)
        # (policy, tag, PS index); index 0 is the initial policy
        self.seq = [(ctx.initial, ctx.initial_tag, 0)]
        self.cur = None
        self.released = True
        self.installed_elsewhere: set = set()
        self.spawn("installer", self._installer())

    def on_apply(self, req, policy):
        if self.cur is not None:
            raise ScenarioError(f"controller {self.cid} got a request while busy")
        self.cur = (req, policy)
        self.spawn(f"apply:{req}", self._apply(policy))

    def on_message(self, src, msg):
        if msg.get("type") == "installed":
            self.installed_elsewhere.add(msg["index"])

    def _apply(self, policy):
        yield Push(policy)

    def _installer(self):
        while True:
            got = yield Pull(wait=self.released)
            if got is None:
                self.released = True
                continue
            self.released = False
            policy, tag, k = got.policy, got.tag, got.index
            committed = [p for p, _, _ in self.seq]
            if conflicts_with_any(policy, committed):
                res = "nack"
            else:
                _, prev_tag, prev_k = self.seq[-1]
                self.seq.append((policy, tag, k))
                if not got.installed and k not in self.installed_elsewhere:
                    yield OracleWait(frozenset({prev_tag}))
                    yield from self._install(k, tag, prev_tag, prev_k)
                    if self.ctx.catchup:
                        yield Broadcast({"type": "installed", "index": k})
                res = "ack"
            if self.cur is not None and self.cur[1].id == policy.id:
                req = self.cur[0]
                self.cur = None
                yield Respond(req, res)

    def _port(self, port, g, label):
        if self.ctx.weak:
            rules = yield PortRead(port, label)
            new, resp = g(rules)
            yield PortWrite(port, tuple(new), label)
            return resp
        return (yield PortUpdate(port, g, label))

    def _install(self, k, tag, prev_tag, prev_k):
        composed = [p for p, _, _ in self.seq]
        topo = self.ctx.topo
        for port in topo.internal:
            rules = internal_rules(port, composed, tag, k)
            yield from self._port(port, add_rules(rules), ("internal", k))
        for port in topo.ingress:
            rules = ingress_rules(port, composed, tag, k)
            yield from self._port(port, flip_ingress(prev_tag, rules), ("ingress", k))
        for port in topo.internal:
            yield from self._port(port, prune(prev_k), ("prune", k))


def setup(sim) -> None:
    cfg = sim.scenario.protocol
    f = sim.faults.f
    for pol in [sim.initial] + list(sim.policies.values()):
        errs = validate(pol, sim.topo)
        if errs:
            raise ScenarioError("; ".join(errs))
    sim.ps = PSState(f, sim.initial, 0, cfg.get("tag_budget"), cfg.get("exhaustion", "stall"))
    for port in sim.topo.internal:
        sim.dp.install_initial(port, internal_rules(port, [sim.initial], 0, 0))
    for port in sim.topo.ingress:
        sim.dp.install_initial(port, ingress_rules(port, [sim.initial], 0, 0))
    ctx = SimpleNamespace(
        topo=sim.topo, initial=sim.initial, initial_tag=0,
        weak=bool(cfg.get("weak_ports", False)),
        catchup=bool(cfg.get("catchup_broadcast", False)),
    )
    for cid in sim.cids:
        sim.controllers[cid] = ReuseTagController(cid, ctx)
