"""Tag usage of ReuseTag on random ring workloads, per fault bound f."""
import argparse
import time
from collections import Counter

from cpcsim.cli import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--f", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--seeds", type=int, default=1000)
    ap.add_argument("--protocol", default="reusetag", choices=("reusetag", "fixtag"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    print(f"{'f':>2} {'runs':>5} {'ok':>5} {'viol':>4} {'stall':>5} {'max tags':>8} {'secs':>6}")
    for f in args.f:
        t0 = time.perf_counter()
        jobs = [("random", {"protocol": args.protocol, "f": f}, s, {}) for s in range(args.seeds)]
        s = sweep(jobs, args.workers)
        print(f"{f:>2} {s['runs']:>5} {s['composable']:>5} {s['violations']:>4} "
              f"{s['nonterminating']:>5} {s['max_tag_count']:>8} {time.perf_counter() - t0:>6.1f}")
        if s["failed_seeds"]:
            print("   failing seeds:", s["failed_seeds"])


if __name__ == "__main__":
    main()
