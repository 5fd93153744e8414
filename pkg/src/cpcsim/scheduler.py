"""Deterministic scheduler owning all simulation state.

Controllers are written as generators that yield one operation at a time;
the scheduler executes each yielded operation atomically as one step and
sends the result back.  "wait until" conditions are expressed as guarded
operations that are only enabled once their condition holds.
"""
from __future__ import annotations

import importlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .dataplane import ConfigError, DataPlane, Packet, Rule
from .policy import Policy

DEFAULT_STEP_CAP = 10**6
STARVATION_BOUND = 10**4

PROTOCOLS = {
    "fixtag": "cpcsim.fixtag",
    "reusetag": "cpcsim.reusetag",
}


class ScenarioError(Exception):
    pass


# -- operations a controller may yield ----------------------------------------

@dataclass
class PortUpdate:
    port: Any
    g: Callable
    label: tuple = ()


@dataclass
class PortRead:
    port: Any
    label: tuple = ()


@dataclass
class PortWrite:
    port: Any
    rules: tuple
    label: tuple = ()


@dataclass
class Push:
    policy: Policy


@dataclass
class Pull:
    wait: bool = False


@dataclass
class OracleWait:
    allowed: frozenset


@dataclass
class Broadcast:
    msg: dict


@dataclass
class Respond:
    req: int
    result: str


OP_NAMES = {
    PortUpdate: "port_update",
    PortRead: "port_read",
    PortWrite: "port_write",
    Push: "push",
    Pull: "pull",
    OracleWait: "oracle_wait",
    Broadcast: "broadcast",
    Respond: "respond",
}


def op_signature(op) -> dict:
    sig = {"op": OP_NAMES[type(op)]}
    if hasattr(op, "port"):
        sig["port"] = op.port
    if hasattr(op, "label"):
        sig["label"] = list(op.label)
    if isinstance(op, Respond):
        sig["req"] = op.req
    return sig


# -- controllers ---------------------------------------------------------------

class Task:
    def __init__(self, name, gen):
        self.name = name
        self.gen = gen
        self.pending = None
        self.steps = 0


class Controller:
    """Base class: holds tasks; subclasses implement the protocol."""

    def __init__(self, cid, ctx):
        self.cid = cid
        self.ctx = ctx
        self.tasks: dict[str, Task] = {}
        self.steps = 0

    def spawn(self, name, gen) -> None:
        if name in self.tasks:
            raise ScenarioError(f"controller {self.cid} already runs task {name}")
        task = Task(name, gen)
        try:
            task.pending = next(gen)
        except StopIteration:
            return
        self.tasks[name] = task

    def on_apply(self, req, policy):
        raise NotImplementedError

    def on_message(self, src, msg):
        pass


# -- configuration -------------------------------------------------------------

@dataclass
class FaultPlan:
    f: int = 0
    # cid -> {"at_step": s} or {"after_steps": k}
    crashes: dict = field(default_factory=dict)

    def check(self, n: int) -> None:
        if not 0 <= self.f < n:
            raise ScenarioError(f"need 0 <= f < n, got f={self.f}, n={n}")
        if len(self.crashes) > self.f:
            raise ScenarioError(f"{len(self.crashes)} crashes exceed f={self.f}")


@dataclass
class Schedule:
    seed: int = 0
    mode: str = "random-fair"
    script: list = field(default_factory=list)
    then: str = "fair"  # after a script: "fair" or "stop"
    steps: int = DEFAULT_STEP_CAP


@dataclass
class RunResult:
    meta: dict
    events: list
    status: str
    pending: list
    stalled: list
    crashed: list
    frozen: list
    stats: dict
    dataplane: Any = None
    ps: Any = None
    controllers: dict = None

    @property
    def terminated(self) -> bool:
        return self.status != "step_cap" and not self.stalled

    def responses(self) -> dict:
        return {ev["req"]: ev["result"] for ev in self.events if ev["kind"] == "response"}

    def end_record(self) -> dict:
        return {"kind": "end", "status": self.status, "pending": self.pending,
                "stalled": self.stalled, "crashed": self.crashed, "frozen": self.frozen,
                "stats": self.stats}

    def to_jsonl(self) -> str:
        recs = [self.meta] + self.events + [self.end_record()]
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in recs)


# -- the simulator -------------------------------------------------------------

class Simulator:
    def __init__(self, scenario, seed: Optional[int] = None):
        self.scenario = scenario
        sched = scenario.schedule
        self.seed = sched.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.topo = scenario.topology
        self.policies = {p.id: p for p in scenario.policies}
        self.initial = scenario.initial
        cfg = scenario.protocol
        self.dp = DataPlane(self.topo, weak=bool(cfg.get("weak_ports", False)))
        self.ps = None
        self.cids = list(range(1, scenario.controllers + 1))
        self.faults = scenario.faults
        self.faults.check(len(self.cids))
        self.controllers: dict[int, Controller] = {}
        self.crashed: set = set()
        self.frozen: set = set()
        self.events: list = []
        self.t = 0
        self.msgs: dict[int, tuple] = {}
        self._mid = 0
        self.first_seen: dict = {}
        self.max_wait = 0
        self.req_status: dict[int, str] = {}
        self.req_by_ctrl: dict[int, list] = {c: [] for c in self.cids}
        for i, rq in enumerate(scenario.requests):
            if rq["controller"] not in self.req_by_ctrl:
                raise ScenarioError(f"request {i} targets unknown controller {rq['controller']}")
            self.req_by_ctrl[rq["controller"]].append(i)
        self.inject_next: dict = {}
        self.inject_by_port: dict = {}
        for i, inj in enumerate(scenario.injects):
            self.inject_by_port.setdefault(inj["port"], []).append(i)
        self.injected: set = set()
        self.stats = {"messages": 0}
        self.initial_tags: set = set()
        mod = importlib.import_module(PROTOCOLS[cfg["name"]])
        mod.setup(self)
        for port in self.topo.ports:
            for r in self.dp.rules(port):
                if port in self.topo.ingress and r.set_tag is not None:
                    self.initial_tags.add(r.set_tag)
        if cfg["name"] == "reusetag":
            self.initial_tags.add(self.ps.initial_tag)

    # -- enabled actions --------------------------------------------------

    def _op_enabled(self, cid, op) -> bool:
        if isinstance(op, Pull) and op.wait:
            return self.ps.would_return(cid)
        if isinstance(op, OracleWait):
            return self.dp.tags_in_use() <= op.allowed
        return True

    def _live(self, cid) -> bool:
        return cid not in self.crashed and cid not in self.frozen

    def _outstanding(self, cid) -> bool:
        return any(self.req_status.get(i) == "invoked" for i in self.req_by_ctrl[cid])

    def _next_request(self, cid):
        for i in self.req_by_ctrl[cid]:
            if i not in self.req_status:
                return i
        return None

    def enabled(self) -> list:
        acts = []
        for cid in self.cids:
            if not self._live(cid):
                continue
            if not self._outstanding(cid):
                i = self._next_request(cid)
                if i is not None and self.t >= self.scenario.requests[i].get("at", 0):
                    acts.append(("request", i))
            for name, task in sorted(self.controllers[cid].tasks.items()):
                if self._op_enabled(cid, task.pending):
                    acts.append(("ctrl", cid, name))
        for port, idxs in sorted(self.inject_by_port.items()):
            pos = self.inject_next.get(port, 0)
            if pos < len(idxs) and self.t >= self.scenario.injects[idxs[pos]].get("at", 0):
                acts.append(("inject", idxs[pos]))
        for port in self.dp.nonempty_ports():
            acts.append(("forward", port))
        for mid, (src, dst, _) in sorted(self.msgs.items()):
            if self._live(dst):
                acts.append(("deliver", mid))
        return acts

    def _due_crash(self):
        for cid, trig in sorted(self.faults.crashes.items()):
            if cid in self.crashed:
                continue
            if "at_step" in trig and self.t >= trig["at_step"]:
                return cid
            if "after_steps" in trig and self.controllers[cid].steps >= trig["after_steps"]:
                return cid
        return None

    # -- executing --------------------------------------------------------

    def _emit(self, kind, **payload) -> dict:
        ev = {"seq": self.t, "kind": kind}
        ev.update(payload)
        self.events.append(ev)
        self.t += 1
        return ev

    def crash(self, cid) -> dict:
        self.crashed.add(cid)
        self.controllers[cid].tasks.clear()
        return self._emit("crash", cid=cid)

    def execute(self, act) -> dict:
        if act in self.first_seen:
            self.max_wait = max(self.max_wait, self.t - self.first_seen[act])
        kind = act[0]
        if kind == "request":
            i = act[1]
            rq = self.scenario.requests[i]
            cid = rq["controller"]
            pol = self.policies[rq["policy"]]
            self.req_status[i] = "invoked"
            ev = self._emit("invoke", cid=cid, req=i, policy=pol.id)
            self.controllers[cid].on_apply(i, pol)
            return ev
        if kind == "inject":
            i = act[1]
            inj = self.scenario.injects[i]
            self.dp.inject(Packet(uid=i, flow=inj["flow"]), inj["port"])
            self.inject_next[inj["port"]] = self.inject_next.get(inj["port"], 0) + 1
            self.injected.add(i)
            ev = self._emit("inject", uid=i, flow=inj["flow"], port=inj["port"])
            # the ingress port stamps the packet as part of the same atomic step
            self.execute(("forward", inj["port"]))
            return ev
        if kind == "forward":
            port = act[1]
            pk, new, out, rule = self.dp.forward_step(port)
            return self._emit(
                "forward", uid=pk.uid, port=port, to=out, tag=new.tag,
                rule=None if rule is None else rule.policy,
            )
        if kind == "deliver":
            src, dst, msg = self.msgs.pop(act[1])
            ev = self._emit("msg_deliver", mid=act[1], src=src, dst=dst, msg=msg)
            self.controllers[dst].on_message(src, msg)
            return ev
        if kind == "ctrl":
            return self._run_op(act[1], act[2])
        raise ScenarioError(f"unknown action {act}")

    def _run_op(self, cid, name) -> dict:
        ctrl = self.controllers[cid]
        task = ctrl.tasks[name]
        op = task.pending
        if isinstance(op, PortUpdate):
            result = self.dp.port_update(op.port, op.g)
            ev = self._emit("port_op", cid=cid, op="update", port=op.port, label=list(op.label),
                            response=_status(result), tags=_rule_tags(self.dp.rules(op.port)))
        elif isinstance(op, PortRead):
            result = self.dp.port_read(op.port)
            ev = self._emit("port_op", cid=cid, op="read", port=op.port, label=list(op.label),
                            response="ok", tags=_rule_tags(result))
        elif isinstance(op, PortWrite):
            result = self.dp.port_write(op.port, op.rules)
            ev = self._emit("port_op", cid=cid, op="write", port=op.port, label=list(op.label),
                            response=result, tags=_rule_tags(op.rules))
        elif isinstance(op, Push):
            k = self.ps.push(cid, op.policy)
            result = "ok"
            ev = self._emit("ps_push", cid=cid, policy=op.policy.id, index=k)
        elif isinstance(op, Pull):
            result, info = self.ps.pull(cid)
            out = None if result is None else {
                "index": result.index, "policy": result.policy.id, "tag": result.tag,
                "installed": result.installed}
            ev = self._emit("ps_pull", cid=cid, result=out, **info)
        elif isinstance(op, OracleWait):
            result = self.dp.tags_in_use()
            ev = self._emit("oracle_query", cid=cid, tags=sorted(result), allowed=sorted(op.allowed))
        elif isinstance(op, Broadcast):
            mids = []
            for dst in self.cids:
                if dst != cid:
                    self._mid += 1
                    self.msgs[self._mid] = (cid, dst, op.msg)
                    mids.append(self._mid)
            self.stats["messages"] += len(mids)
            result = None
            ev = self._emit("msg_send", cid=cid, mids=mids, msg=op.msg)
        elif isinstance(op, Respond):
            self.req_status[op.req] = "done"
            result = None
            ev = self._emit("response", cid=cid, req=op.req, result=op.result,
                            task_steps=task.steps + 1)
        else:
            raise ScenarioError(f"unknown operation {op!r}")
        ctrl.steps += 1
        task.steps += 1
        try:
            task.pending = task.gen.send(result)
        except StopIteration:
            del ctrl.tasks[name]
        return ev

    # -- driving ----------------------------------------------------------

    def fair_step(self, acts) -> dict:
        t = self.t
        for a in list(self.first_seen):
            if a not in acts:
                del self.first_seen[a]
        for a in acts:
            self.first_seen.setdefault(a, t)
        oldest = min(acts, key=lambda a: (self.first_seen[a], acts.index(a)))
        if t - self.first_seen[oldest] >= STARVATION_BOUND:
            return self.execute(oldest)
        weights = [1 + t - self.first_seen[a] for a in acts]
        return self.execute(self.rng.choices(acts, weights=weights)[0])

    def step(self) -> Optional[dict]:
        """One fair step; None when quiescent."""
        cid = self._due_crash()
        if cid is not None:
            return self.crash(cid)
        acts = self.enabled()
        if not acts:
            wake = self._next_arrival()
            if wake is None:
                return None
            self.t = wake  # idle until the next scheduled request or inject
            return self.step()
        return self.fair_step(acts)

    def _next_arrival(self) -> Optional[int]:
        times = []
        for cid in self.cids:
            if self._live(cid) and not self._outstanding(cid):
                i = self._next_request(cid)
                if i is not None:
                    times.append(self.scenario.requests[i].get("at", 0))
        for port, idxs in self.inject_by_port.items():
            pos = self.inject_next.get(port, 0)
            if pos < len(idxs):
                times.append(self.scenario.injects[idxs[pos]].get("at", 0))
        times = [x for x in times if x > self.t]
        return min(times) if times else None

    def run(self) -> RunResult:
        cap = self.scenario.schedule.steps
        sched = self.scenario.schedule
        status = None
        if sched.mode == "scripted":
            from .script import run_script
            run_script(self, sched.script)
            if sched.then != "fair":
                status = "script_end"
        while status is None:
            if self.t >= cap:
                status = "step_cap"
                break
            if self.step() is None:
                status = "quiescent"
        return self.result(status)

    def result(self, status) -> RunResult:
        pending = sorted(i for i, s in self.req_status.items() if s == "invoked")
        stalled = [i for i in pending
                   if self._live(self.scenario.requests[i]["controller"])]
        # requests that a live controller never got to invoke are stalls as well
        for cid in self.cids:
            if self._live(cid):
                stalled += [i for i in self.req_by_ctrl[cid] if i not in self.req_status]
        stats = dict(self.stats, steps=self.t, max_wait=self.max_wait,
                     in_flight=self.dp.in_flight())
        meta = {"kind": "meta", "scenario": self.scenario.to_json(), "seed": self.seed,
                "initial_tags": sorted(self.initial_tags)}
        return RunResult(meta, self.events, status, pending, sorted(stalled),
                         sorted(self.crashed), sorted(self.frozen), stats,
                         dataplane=self.dp, ps=self.ps, controllers=self.controllers)


def _status(response):
    """Loggable part of a port response; extra payload stays with the controller."""
    return response[0] if isinstance(response, tuple) else response


def _rule_tags(rules) -> list:
    tags = set()
    for r in rules:
        if r.tag is not None:
            tags.add(r.tag)
        if r.set_tag is not None:
            tags.add(r.set_tag)
    return sorted(tags)


def run_until_quiescent(scenario, seed: Optional[int] = None) -> RunResult:
    return Simulator(scenario, seed).run()
