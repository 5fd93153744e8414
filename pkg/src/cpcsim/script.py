"""Interpreter for scripted schedules (adversarial replays).

A script is a list of commands, each a dict with a ``do`` key:

    request  {index}                 invoke request ``index``
    inject   {index}                 inject packet ``index``
    forward  {port}                  forward the head of a queue
    drain    {}                      forward until every queue is empty
    deliver  {to} | {mid}            deliver one message
    ctrl     {cid, task?}            one operation of a controller
    ctrl_until {cid, match, task?}   run a controller until its next
                                     operation matches ``match`` (not executed)
    run      {controllers, until_response?}
                                     round-robin the listed controllers until
                                     the request responded or none can move
                                     (a stuck request stays pending)
    freeze / release / crash {cid}
    fair     {steps}                 seeded fair steps
"""
from __future__ import annotations

from .scheduler import ScenarioError, op_signature

MAX_MACRO_STEPS = 10**5


def _matches(sig: dict, want: dict) -> bool:
    for k, v in want.items():
        got = sig.get(k)
        if isinstance(v, (list, tuple)):
            if list(got or []) != list(v):
                return False
        elif got != v:
            return False
    return True


def _ctrl_action(sim, cid, task=None):
    acts = [a for a in sim.enabled() if a[0] == "ctrl" and a[1] == cid]
    if task is not None:
        acts = [a for a in acts if a[2] == task]
    return acts[0] if acts else None


def _require(act, cmd, sim):
    if act is None:
        raise ScenarioError(f"step {sim.t}: scripted command {cmd} is not enabled")
    return act


def run_script(sim, script) -> None:
    for cmd in script:
        do = cmd["do"]
        if do == "request":
            act = ("request", cmd["index"])
            _require(act if act in sim.enabled() else None, cmd, sim)
            sim.execute(act)
        elif do == "inject":
            act = ("inject", cmd["index"])
            _require(act if act in sim.enabled() else None, cmd, sim)
            sim.execute(act)
        elif do == "forward":
            act = ("forward", cmd["port"])
            _require(act if act in sim.enabled() else None, cmd, sim)
            sim.execute(act)
        elif do == "drain":
            for _ in range(MAX_MACRO_STEPS):
                ports = sim.dp.nonempty_ports()
                if not ports:
                    break
                sim.execute(("forward", ports[0]))
        elif do == "deliver":
            if "mid" in cmd:
                act = ("deliver", cmd["mid"])
            else:
                mids = sorted(m for m, (_, dst, _) in sim.msgs.items() if dst == cmd["to"])
                act = ("deliver", mids[0]) if mids else None
            _require(act if act in sim.enabled() else None, cmd, sim)
            sim.execute(act)
        elif do == "ctrl":
            sim.execute(_require(_ctrl_action(sim, cmd["cid"], cmd.get("task")), cmd, sim))
        elif do == "ctrl_until":
            cid = cmd["cid"]
            for _ in range(MAX_MACRO_STEPS):
                ctrl = sim.controllers[cid]
                if any(_matches(op_signature(t.pending), cmd["match"]) for t in ctrl.tasks.values()):
                    break
                sim.execute(_require(_ctrl_action(sim, cid, cmd.get("task")), cmd, sim))
            else:
                raise ScenarioError(f"ctrl_until did not reach {cmd['match']}")
        elif do == "run":
            cids = cmd["controllers"]
            target = cmd.get("until_response")
            for _ in range(MAX_MACRO_STEPS):
                if target is not None and sim.req_status.get(target) == "done":
                    break
                moved = False
                for cid in cids:
                    act = _ctrl_action(sim, cid)
                    if act is not None:
                        sim.execute(act)
                        moved = True
                    if target is not None and sim.req_status.get(target) == "done":
                        break
                if not moved:
                    # a stuck target is left pending; the termination check reports it
                    break
        elif do == "freeze":
            sim.frozen.add(cmd["cid"])
        elif do == "release":
            sim.frozen.discard(cmd["cid"])
        elif do == "crash":
            sim.crash(cmd["cid"])
        elif do == "fair":
            for _ in range(cmd["steps"]):
                if sim.step() is None:
                    break
        else:
            raise ScenarioError(f"unknown script command {do!r}")
