"""FixTag: one static tag per forwarding path, edge-only tagging.

Every loop-free ingress-to-exit path gets its own tag; internal ports are
pre-loaded with rules for all of them.  Installing a policy only adds a
tagging rule at each ingress port, visited in ascending port order, so a
conflict always surfaces at the lowest ingress port first.  The policy that
won there is then completed on every ingress port before the loser answers
nack.  No oracle, no consensus and no waiting on other controllers.
"""
from __future__ import annotations

from types import SimpleNamespace

from .dataplane import Rule
from .policy import DROP, TERMINALS, Domain, Policy
from .scheduler import Broadcast, Controller, PortUpdate, Respond

DEFAULT_CATALOG_CAP = 10**4
ALL_FLOWS = Domain.of((0, 2**31 - 1))


class CatalogOverflow(Exception):
    pass


def _port_key(p):
    return (1, p) if isinstance(p, str) else (0, p)


def enumerate_paths(topo, cap: int = DEFAULT_CATALOG_CAP) -> list[tuple]:
    """All simple paths from an ingress port to World or Drop, canonically ordered."""
    out = []
    succ = {p: sorted(topo.successors(p), key=_port_key) for p in topo.ports}

    def dfs(path):
        here = path[-1]
        for nxt in succ[here]:
            if nxt in TERMINALS:
                out.append(tuple(path) + (nxt,))
                if len(out) > cap:
                    raise CatalogOverflow(f"more than {cap} paths")
            elif nxt not in path:
                path.append(nxt)
                dfs(path)
                path.pop()

    for ing in topo.ingress:
        dfs([ing])
    return sorted(out, key=lambda p: tuple(_port_key(x) for x in p))


class PathCatalog:
    def __init__(self, topo, cap: int = DEFAULT_CATALOG_CAP):
        self.paths = enumerate_paths(topo, cap)
        self.index = {p: k for k, p in enumerate(self.paths)}

    def __len__(self):
        return len(self.paths)

    def tag_of(self, path) -> int:
        try:
            return self.index[tuple(path)]
        except KeyError:
            raise KeyError(f"path {path} is not in the catalog") from None


def preinstall(dp, catalog: PathCatalog) -> None:
    """Load internal ports with one forwarding rule per catalog path."""
    per_port: dict = {p: list(dp.rules(p)) for p in dp.topo.ports}
    for k, path in enumerate(catalog.paths):
        for here, nxt in zip(path[1:-1], path[2:]):
            per_port[here].append(Rule(f"path{k}", ALL_FLOWS, 0, nxt, tag=k))
    for p, rules in per_port.items():
        dp.install_initial(p, rules)


def ingress_rule(pol: Policy, ingress, catalog: PathCatalog) -> Rule:
    path = pol.path_for(ingress) or (ingress, DROP)
    return Rule(pol.id, pol.domain, pol.priority, path[1], set_tag=catalog.tag_of(path),
                origin=pol)


def add_tagging_rule(new: Rule):
    """Port transformer: add ``new`` unless present or conflicting.

    A conflict reports the policy stored with the rule that is in the way.
    """
    def g(rules):
        if any(r.policy == new.policy for r in rules):
            return rules, "ok"
        for r in rules:
            if r.priority == new.priority and r.domain.overlaps(new.domain):
                return rules, ("conflict", r.origin)
        return tuple(rules) + (new,), "ok"
    return g


class FixTagController(Controller):
    def __init__(self, cid, ctx):
        super().__init__(cid, ctx)
        self.seen: set = set()

    def on_apply(self, req, policy):
        self.seen.add(policy.id)
        self.spawn(f"apply:{req}", self._apply(req, policy))

    def on_message(self, src, msg):
        if msg.get("type") != "intent" or msg["policy"] in self.seen:
            return
        self.seen.add(msg["policy"])
        self.spawn(f"help:{msg['policy']}", self._help(msg))

    def _apply(self, req, policy):
        yield Broadcast({"type": "intent", "origin": self.cid, "policy": policy.id})
        res = yield from self._install(policy)
        yield Respond(req, res)

    def _help(self, msg):
        yield Broadcast(msg)
        yield from self._install(self.ctx.policies[msg["policy"]])

    def _install(self, policy):
        for port in self.ctx.topo.ingress:
            rule = ingress_rule(policy, port, self.ctx.catalog)
            res = yield PortUpdate(port, add_tagging_rule(rule), label=("ingress", policy.id))
            if res != "ok":
                # the winner may not have reached every ingress port yet; finish
                # it so that nothing observed after our nack contradicts it
                yield from self._complete(res[1])
                return "nack"
        return "ack"

    def _complete(self, winner):
        for port in self.ctx.topo.ingress:
            rule = ingress_rule(winner, port, self.ctx.catalog)
            yield PortUpdate(port, add_tagging_rule(rule), label=("complete", winner.id))


def setup(sim) -> None:
    cfg = sim.scenario.protocol
    catalog = PathCatalog(sim.topo, cfg.get("catalog_cap", DEFAULT_CATALOG_CAP))
    preinstall(sim.dp, catalog)
    for port in sim.topo.ingress:
        sim.dp.install_initial(port, [ingress_rule(sim.initial, port, catalog)])
    ctx = SimpleNamespace(topo=sim.topo, policies=sim.policies, catalog=catalog)
    sim.catalog = catalog
    sim.stats["catalog_size"] = len(catalog)
    for cid in sim.cids:
        sim.controllers[cid] = FixTagController(cid, ctx)
