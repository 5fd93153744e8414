"""Command line: run, check, sweep, gen-lowerbound.

Exit codes: 0 pass, 2 consistency violation, 3 suspected non-termination
(step cap or a correct controller's request left unanswered), 4 undecided.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import scenario as scn
from .checker import History, sequentially_composable, termination
from .psm import replay
from .scheduler import Simulator, ScenarioError

EXIT_OK, EXIT_VIOLATION, EXIT_NONTERM, EXIT_UNDECIDED = 0, 2, 3, 4


def load_scenario(name: str) -> scn.Scenario:
    """A scenario file path or the name of a canned scenario."""
    if name in scn.CANNED and not Path(name).exists():
        return scn.CANNED[name]()
    return scn.load(name)


def apply_overrides(sc: scn.Scenario, args) -> scn.Scenario:
    if getattr(args, "steps", None) is not None:
        sc.schedule.steps = args.steps
    if getattr(args, "tag_budget", None) is not None:
        sc.protocol["tag_budget"] = args.tag_budget
    if getattr(args, "protocol", None) is not None:
        sc.protocol["name"] = args.protocol
    return sc


def evaluate(H: History) -> dict:
    """Verdict, termination, tag statistics and PS replay for one history."""
    v = sequentially_composable(H)
    report = {"verdict": v.to_json(), "termination": termination(H.end)}
    sc = H.meta.get("scenario", {})
    proto = sc.get("protocol", {})
    if proto.get("name") == "reusetag" and proto.get("exhaustion", "stall") == "stall":
        report["ps_replay"] = replay(H.events, sc["faults"]["f"], H.initial, H.policies,
                                     proto.get("tag_budget"))
    report["results"] = {str(r.req): r.result for r in sorted(H.requests.values(),
                                                               key=lambda r: r.req)}
    report["exit"] = exit_code(report)
    return report


def exit_code(report: dict) -> int:
    if report["verdict"]["status"] == "violation" or report.get("ps_replay"):
        return EXIT_VIOLATION
    if report["termination"] != "ok":
        return EXIT_NONTERM
    if report["verdict"]["status"] == "undecided":
        return EXIT_UNDECIDED
    return EXIT_OK


def simulate(sc: scn.Scenario, seed=None):
    res = Simulator(sc, seed).run()
    return res, evaluate(History.from_run(res))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(args) -> int:
    sc = apply_overrides(load_scenario(args.scenario), args)
    res, report = simulate(sc, args.seed)
    report["stats"] = res.stats
    if args.out:
        out = Path(args.out)
        stem = f"{sc.name}-s{res.meta['seed']}"
        _write(out / f"{stem}.jsonl", res.to_jsonl())
        _write(out / f"{stem}.verdict.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=None if args.compact else 2, sort_keys=True))
    return report["exit"]


def cmd_check(args) -> int:
    H = History.from_jsonl(Path(args.log).read_text())
    report = evaluate(H)
    print(json.dumps(report, indent=2, sort_keys=True))
    return report["exit"]


def _sweep_one(job):
    kind, payload, seed, overrides = job
    if kind == "random":
        sc = scn.random_workload(payload["protocol"], payload["f"], seed,
                                 crashes=payload.get("crashes"))
        sc.schedule.steps = overrides.get("steps") or sc.schedule.steps
    else:
        sc = scn.Scenario.from_json(payload)
        if overrides.get("steps"):
            sc.schedule.steps = overrides["steps"]
    res, report = simulate(sc, seed)
    return {"seed": seed, "exit": report["exit"], "status": report["verdict"]["status"],
            "termination": report["termination"], "tag_count": report["verdict"]["tag_count"],
            "ps_replay": len(report.get("ps_replay", [])), "steps": res.stats["steps"]}


def parse_seeds(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi)))
    return [int(s) for s in text.split(",")]


def sweep(jobs, workers: int = 1) -> dict:
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_sweep_one, jobs, chunksize=16))
    else:
        rows = [_sweep_one(j) for j in jobs]
    failures = [r for r in rows if r["exit"] != EXIT_OK]
    return {
        "runs": len(rows),
        "composable": sum(r["status"] == "composable" for r in rows),
        "violations": sum(r["status"] == "violation" for r in rows),
        "nonterminating": sum(r["termination"] != "ok" for r in rows),
        "undecided": sum(r["status"] == "undecided" for r in rows),
        "ps_discrepancies": sum(r["ps_replay"] for r in rows),
        "max_tag_count": max((r["tag_count"] for r in rows), default=0),
        "max_steps": max((r["steps"] for r in rows), default=0),
        "failed_seeds": [r["seed"] for r in failures][:20],
        "exit": max((r["exit"] for r in failures), default=EXIT_OK),
    }


def cmd_sweep(args) -> int:
    seeds = parse_seeds(args.seeds)
    overrides = {"steps": args.steps}
    if args.scenario.startswith("random"):
        payload = {"protocol": args.protocol or "reusetag", "f": args.f, "crashes": args.crashes}
        jobs = [("random", payload, s, overrides) for s in seeds]
    else:
        sc = apply_overrides(load_scenario(args.scenario), args)
        jobs = [("file", sc.to_json(), s, overrides) for s in seeds]
    summary = sweep(jobs, args.workers)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary["exit"]


def cmd_gen_lowerbound(args) -> int:
    sc = scn.gen_lowerbound(args.f, args.tag_budget, args.exhaustion)
    text = json.dumps(sc.to_json(), indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpcsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate one scenario and check the history")
    p.add_argument("scenario", help="scenario file or canned name (%s)" % ", ".join(scn.CANNED))
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--tag-budget", type=int)
    p.add_argument("--protocol", choices=("fixtag", "reusetag"))
    p.add_argument("--out", help="directory for the event log and verdict")
    p.add_argument("--compact", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="check a recorded JSONL event log")
    p.add_argument("log")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run many seeds and aggregate")
    p.add_argument("scenario", help="scenario file, canned name, or 'random' for ring workloads")
    p.add_argument("--seeds", default="0:100", help="lo:hi range or comma list")
    p.add_argument("--steps", type=int)
    p.add_argument("--tag-budget", type=int)
    p.add_argument("--protocol", choices=("fixtag", "reusetag"))
    p.add_argument("--f", type=int, default=1, help="fault bound for random workloads")
    p.add_argument("--crashes", type=int, help="exact crash count for random workloads")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-lowerbound", help="emit the T_f lower-bound scenario")
    p.add_argument("--f", type=int, default=1)
    p.add_argument("--tag-budget", type=int)
    p.add_argument("--exhaustion", choices=("stall", "reuse"), default="stall")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_lowerbound)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
