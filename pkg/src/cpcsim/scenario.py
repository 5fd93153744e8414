"""Scenario files (versioned JSON) and the canned scenarios shipped in-repo."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .dataplane import Topology
from .policy import DROP, WORLD, Domain, Policy, _port, missing_ingress, validate
from .scheduler import DEFAULT_STEP_CAP, FaultPlan, Schedule, ScenarioError

SCHEMA_VERSION = 1
FLOW_SPACE = (0, 65535)


@dataclass
class Scenario:
    name: str
    topology: Topology
    initial: Policy
    policies: list
    protocol: dict
    controllers: int
    requests: list = field(default_factory=list)
    injects: list = field(default_factory=list)
    faults: FaultPlan = field(default_factory=FaultPlan)
    schedule: Schedule = field(default_factory=Schedule)

    def check(self) -> list[str]:
        """Validation errors; warnings about missing paths are not errors."""
        errors = []
        ids = [p.id for p in self.policies]
        if len(set(ids)) != len(ids) or self.initial.id in ids:
            errors.append("policy ids must be unique")
        for pol in [self.initial] + self.policies:
            errors += validate(pol, self.topology)
        if missing_ingress(self.initial, self.topology):
            errors.append("the initial policy needs a path for every ingress port")
        used = [r["policy"] for r in self.requests]
        if len(set(used)) != len(used):
            errors.append("each policy may be requested once")
        known = set(ids)
        for i, r in enumerate(self.requests):
            if r["policy"] not in known:
                errors.append(f"request {i}: unknown policy {r['policy']}")
            if not 1 <= r["controller"] <= self.controllers:
                errors.append(f"request {i}: unknown controller {r['controller']}")
        for i, inj in enumerate(self.injects):
            if inj["port"] not in self.topology.ingress:
                errors.append(f"inject {i}: port {inj['port']} is not an ingress port")
        if self.protocol.get("name") not in ("fixtag", "reusetag"):
            errors.append(f"unknown protocol {self.protocol.get('name')!r}")
        try:
            self.faults.check(self.controllers)
        except ScenarioError as e:
            errors.append(str(e))
        return errors

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "name": self.name,
            "topology": self.topology.to_json(),
            "initial_policy": self.initial.to_json(),
            "policies": [p.to_json() for p in self.policies],
            "protocol": dict(self.protocol),
            "controllers": self.controllers,
            "requests": list(self.requests),
            "injects": list(self.injects),
            "faults": {"f": self.faults.f,
                       "crashes": {str(k): v for k, v in sorted(self.faults.crashes.items())}},
            "schedule": {"seed": self.schedule.seed, "mode": self.schedule.mode,
                         "script": list(self.schedule.script), "then": self.schedule.then,
                         "steps": self.schedule.steps},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        if obj.get("version") != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario version {obj.get('version')!r}")
        sched = obj.get("schedule", {})
        faults = obj.get("faults", {})
        sc = cls(
            name=obj.get("name", "unnamed"),
            topology=Topology.from_json(obj["topology"]),
            initial=Policy.from_json(obj["initial_policy"]),
            policies=[Policy.from_json(p) for p in obj.get("policies", [])],
            protocol=dict(obj["protocol"]),
            controllers=int(obj["controllers"]),
            requests=[dict(r) for r in obj.get("requests", [])],
            injects=[dict(i, port=_port(i["port"])) for i in obj.get("injects", [])],
            faults=FaultPlan(int(faults.get("f", 0)),
                             {int(k): v for k, v in faults.get("crashes", {}).items()}),
            schedule=Schedule(
                seed=int(sched.get("seed", 0)), mode=sched.get("mode", "random-fair"),
                script=list(sched.get("script", [])), then=sched.get("then", "fair"),
                steps=int(sched.get("steps", DEFAULT_STEP_CAP)),
            ),
        )
        errors = sc.check()
        if errors:
            raise ScenarioError("invalid scenario: " + "; ".join(errors))
        return sc


def load(path) -> Scenario:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return Scenario.from_json(obj)


def dump(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_json(), indent=2) + "\n")


# -- triangle example: three switches, three controllers -------------------------
#
# Host port of switch a is ``a``; ``10*a + b`` is the port of switch b that
# receives traffic from switch a.

def _triangle() -> Topology:
    sw = (1, 2, 3)
    ports = list(sw) + [10 * a + b for a in sw for b in sw if a != b]
    links = []
    for a in sw:
        links += [(a, 10 * a + b) for b in sw if b != a]
    for a in sw:
        for b in sw:
            if a == b:
                continue
            links.append((10 * a + b, WORLD))
            links += [(10 * a + b, 10 * b + c) for c in sw if c != b]
    return Topology.build(ports, links)


def fig1(protocol: str = "reusetag", seed: int = 0) -> Scenario:
    topo = _triangle()
    pi0 = Policy.make("pi0", [FLOW_SPACE], 0,
                      {1: [1, 12, 21, WORLD], 2: [2, 23, 32, WORLD], 3: [3, 31, 13, WORLD]})
    pi1 = Policy.make("pi1", [(0, 99)], 1,  # http
                      {1: [1, 13, WORLD], 2: [2, 21, WORLD], 3: [3, 32, WORLD]})
    pi2 = Policy.make("pi2", [(100, 199)], 1,  # ssh
                      {1: [1, 12, WORLD], 2: [2, 23, WORLD], 3: [3, 31, WORLD]})
    pi3 = Policy.make("pi3", [(50, 149)], 1,  # overlaps both at the same priority
                      {1: [1, 13, 31, WORLD], 2: [2, 21, 12, WORLD], 3: [3, 32, 23, WORLD]})
    requests = [{"controller": 1, "policy": "pi1", "at": 0},
                {"controller": 2, "policy": "pi2", "at": 0},
                {"controller": 3, "policy": "pi3", "at": 0}]
    injects = [{"flow": 10, "port": 1, "at": 0},
               {"flow": 10, "port": 2, "at": 0},
               {"flow": 150, "port": 3, "at": 0}]
    if protocol == "reusetag":
        script = [
            {"do": "request", "index": 0}, {"do": "request", "index": 1},
            {"do": "request", "index": 2},
            {"do": "ctrl", "cid": 1, "task": "apply:0"},
            {"do": "ctrl", "cid": 2, "task": "apply:1"},
            {"do": "ctrl", "cid": 3, "task": "apply:2"},
            {"do": "inject", "index": 0}, {"do": "drain"},
            {"do": "run", "controllers": [1], "until_response": 0},
            {"do": "inject", "index": 1}, {"do": "drain"},
            {"do": "run", "controllers": [2], "until_response": 1},
            {"do": "inject", "index": 2}, {"do": "drain"},
        ]
    else:
        script = [
            {"do": "request", "index": 0}, {"do": "request", "index": 1},
            {"do": "request", "index": 2},
            {"do": "inject", "index": 0}, {"do": "drain"},
            {"do": "run", "controllers": [1], "until_response": 0},
            {"do": "inject", "index": 1}, {"do": "drain"},
            {"do": "run", "controllers": [2], "until_response": 1},
            {"do": "inject", "index": 2}, {"do": "drain"},
        ]
    return Scenario(
        name=f"fig1-{protocol}", topology=topo, initial=pi0, policies=[pi1, pi2, pi3],
        protocol={"name": protocol}, controllers=3, requests=requests, injects=injects,
        faults=FaultPlan(f=1), schedule=Schedule(seed=seed, mode="scripted", script=script),
    )


# -- read/write ports counterexample ---------------------------------------------

def weakport(seed: int = 0) -> Scenario:
    """Two ingress ports; the second update is overwritten by a stale write."""
    topo = Topology.build([1, 2, 3, 4, 5, 6],
                          [(1, 3), (2, 3), (3, 4), (3, 5), (3, 6),
                           (4, WORLD), (5, WORLD), (6, WORLD)])
    pi0 = Policy.make("pi0", [FLOW_SPACE], 0, {1: [1, 3, 4, WORLD], 2: [2, 3, 4, WORLD]})
    pi1 = Policy.make("pi1", [(0, 49)], 1, {1: [1, 3, 5, WORLD], 2: [2, 3, 5, WORLD]})
    pi2 = Policy.make("pi2", [(0, 9)], 2, {1: [1, 3, 6, WORLD], 2: [2, 3, 6, WORLD]})
    script = [
        {"do": "request", "index": 0},
        {"do": "ctrl", "cid": 1, "task": "apply:0"},
        # p1 has read port 2 and is about to write pi0.pi1 there
        {"do": "ctrl_until", "cid": 1,
         "match": {"op": "port_write", "port": 2, "label": ["ingress", 1]}},
        {"do": "inject", "index": 0}, {"do": "drain"},
        {"do": "request", "index": 1},
        {"do": "ctrl", "cid": 2, "task": "apply:1"},
        {"do": "run", "controllers": [2], "until_response": 1},
        {"do": "ctrl", "cid": 1, "task": "installer"},  # the outdated write
        {"do": "inject", "index": 1}, {"do": "drain"},
    ]
    return Scenario(
        name="weakport", topology=topo, initial=pi0, policies=[pi1, pi2],
        protocol={"name": "reusetag", "weak_ports": True}, controllers=2,
        requests=[{"controller": 1, "policy": "pi1", "at": 0},
                  {"controller": 2, "policy": "pi2", "at": 0}],
        injects=[{"flow": 30, "port": 1, "at": 0}, {"flow": 5, "port": 2, "at": 0}],
        faults=FaultPlan(f=1), schedule=Schedule(seed=seed, mode="scripted", script=script),
    )


# -- lower-bound network T_f -----------------------------------------------------

def lowerbound_topology(f: int) -> tuple[Topology, dict]:
    """Ingress A=1, B=2 feeding a chain of f+1 loops, each with an upper and a
    lower branch, ending at World."""
    loops = f + 1
    branch = {i: 10 * i for i in range(1, loops + 2)}
    upper = {i: 10 * i + 1 for i in range(1, loops + 1)}
    lower = {i: 10 * i + 2 for i in range(1, loops + 1)}
    ports = [1, 2] + list(branch.values()) + list(upper.values()) + list(lower.values())
    links = [(1, branch[1]), (2, branch[1]), (branch[loops + 1], WORLD)]
    for i in range(1, loops + 1):
        links += [(branch[i], upper[i]), (branch[i], lower[i]),
                  (upper[i], branch[i + 1]), (lower[i], branch[i + 1])]
    return Topology.build(ports, links), {"branch": branch, "upper": upper, "lower": lower}


def _loop_path(start, f, names, low: Optional[int]):
    path = [start]
    for i in range(1, f + 2):
        path += [names["branch"][i], names["lower" if i == low else "upper"][i]]
    return path + [names["branch"][f + 2], WORLD]


def gen_lowerbound(f: int, tag_budget: Optional[int] = None, exhaustion: str = "stall",
                   seed: int = 0) -> Scenario:
    """Refinement chain pi_0..pi_{f+1} on T_f with the freeze schedule.

    Controllers 1..f each push pi_l, flip ingress A and freeze right before
    flipping B; controller f+2 finishes every update.  Controller f+1 then
    requests pi_{f+1}, which needs a tag none of the frozen controllers blocks.
    With ``exhaustion="stall"`` the frozen controllers then crash, so a
    blocked request stays blocked.  With ``"reuse"`` they resume their
    delayed ingress flip instead.  Traffic at both ingress ports follows.
    """
    if f < 1:
        raise ScenarioError("the lower-bound construction needs f >= 1")
    topo, names = lowerbound_topology(f)
    n = f + 2
    helper = n
    top = 10 * (f + 2)

    def pol(i):
        dom = [(0, top - 10 * i - 1)] if i else [FLOW_SPACE]
        low = i if i else None
        return Policy.make(f"pi{i}", dom, i,
                           {1: _loop_path(1, f, names, low), 2: _loop_path(2, f, names, low)})

    policies = [pol(i) for i in range(1, f + 2)]
    requests = [{"controller": i, "policy": f"pi{i}", "at": 0} for i in range(1, f + 2)]
    injects = []
    script = []
    for i in range(1, f + 1):
        injects.append({"flow": 0, "port": 1, "at": 0})
        script += [
            {"do": "request", "index": i - 1},
            {"do": "ctrl", "cid": i, "task": f"apply:{i - 1}"},
            {"do": "ctrl_until", "cid": i,
             "match": {"op": "port_update", "port": 2, "label": ["ingress", i]}},
            {"do": "inject", "index": len(injects) - 1}, {"do": "drain"},
            {"do": "freeze", "cid": i},
            {"do": "run", "controllers": [helper]},
        ]
    script += [
        {"do": "request", "index": f},
        {"do": "ctrl", "cid": f + 1, "task": f"apply:{f}"},
        {"do": "run", "controllers": [f + 1, helper], "until_response": f},
    ]
    for i in range(1, f + 1):
        if exhaustion == "reuse":
            script.append({"do": "release", "cid": i})
            script.append({"do": "ctrl", "cid": i, "task": "installer"})  # the delayed flip
        else:
            # a frozen controller is indistinguishable from a crashed one
            script.append({"do": "crash", "cid": i})
    for port in (1, 2):
        injects.append({"flow": 0, "port": port, "at": 0})
        script += [{"do": "inject", "index": len(injects) - 1}, {"do": "drain"}]
    budget = f + 2 if tag_budget is None else tag_budget
    name = f"lowerbound-f{f}-budget{budget}" + ("-reuse" if exhaustion == "reuse" else "")
    return Scenario(
        name=name, topology=topo, initial=pol(0), policies=policies,
        protocol={"name": "reusetag", "tag_budget": budget, "exhaustion": exhaustion},
        controllers=n, requests=requests, injects=injects, faults=FaultPlan(f=f),
        schedule=Schedule(seed=seed, mode="scripted", script=script),
    )


# -- random workloads on a four-switch ring ---------------------------------------------

RING = (1, 2, 3, 4)


def _ring_next(a, direction):
    return RING[(RING.index(a) + direction) % len(RING)]


def ring4() -> Topology:
    ports = list(RING)
    links = []
    for a in RING:
        for d in (1, -1):
            b = _ring_next(a, d)
            ports.append(10 * a + b)
            links.append((a, 10 * a + b))
        links.append((a, WORLD))
    for a in RING:
        for d in (1, -1):
            b = _ring_next(a, d)
            here = 10 * a + b
            links.append((here, WORLD))
            c = _ring_next(b, d)
            links.append((here, 10 * b + c))
    return Topology.build(ports, links)


def ring_policy(pid, domain, priority, exit_switch, direction) -> Policy:
    """Traffic travels the ring in ``direction`` and leaves at ``exit_switch``."""
    paths = {}
    for a in RING:
        path = [a]
        here_sw = a
        while here_sw != exit_switch:
            nxt = _ring_next(here_sw, direction)
            path.append(10 * here_sw + nxt)
            here_sw = nxt
        paths[a] = path + [WORLD]
    return Policy.make(pid, domain, priority, paths)


def random_workload(protocol: str, f: int, seed: int, n: Optional[int] = None,
                    requests: int = 5, injects: int = 6, crashes: Optional[int] = None,
                    max_at: int = 120) -> Scenario:
    """Seeded random scenario on the ring: policies, arrivals and crash points."""
    rng = random.Random(seed)
    n = f + 2 if n is None else n
    pi0 = ring_policy("pi0", [FLOW_SPACE], 0, 1, 1)
    spans = [(0, 99), (50, 149), (100, 199), (0, 199), (20, 39), (150, 249)]
    pols = []
    for i in range(requests):
        lo, hi = rng.choice(spans)
        pols.append(ring_policy(f"pi{i + 1}", [(lo, hi)], rng.choice((1, 2)),
                                rng.choice(RING), rng.choice((1, -1))))
    reqs = [{"controller": rng.randint(1, n), "policy": p.id, "at": rng.randint(0, max_at)}
            for p in pols]
    reqs.sort(key=lambda r: r["at"])
    injs = [{"flow": rng.randint(0, 259), "port": rng.choice(RING), "at": rng.randint(0, 3 * max_at)}
            for _ in range(injects)]
    injs.sort(key=lambda i: i["at"])
    ncrash = rng.randint(0, f) if crashes is None else crashes
    plan = {}
    for cid in rng.sample(range(1, n + 1), ncrash):
        if rng.random() < 0.5:
            plan[cid] = {"at_step": rng.randint(0, 4 * max_at)}
        else:
            plan[cid] = {"after_steps": rng.randint(1, 30)}
    return Scenario(
        name=f"ring4-{protocol}-f{f}-s{seed}", topology=ring4(), initial=pi0, policies=pols,
        protocol={"name": protocol}, controllers=n, requests=reqs, injects=injs,
        faults=FaultPlan(f=f, crashes=plan), schedule=Schedule(seed=seed),
    )


CANNED = {
    "fig1": lambda: fig1("reusetag"),
    "fig1_fixtag": lambda: fig1("fixtag"),
    "weakport": weakport,
    "lowerbound_f1": lambda: gen_lowerbound(1),
    "lowerbound_f1_budget2": lambda: gen_lowerbound(1, tag_budget=2),
    "lowerbound_f1_reuse": lambda: gen_lowerbound(1, tag_budget=2, exhaustion="reuse"),
}
