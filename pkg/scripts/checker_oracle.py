"""Cross-check the search-based checker against brute-force enumeration on
random small histories and report timings of both."""
import argparse
import random
import time

from cpcsim.checker import History, sequentially_composable
from cpcsim.naive import naive_composable, synthetic_history


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--requests", type=int, default=4)
    ap.add_argument("--injects", type=int, default=6)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    agree = comp = 0
    t_fast = t_slow = 0.0
    for _ in range(args.n):
        events, init, pols = synthetic_history(rng, args.requests, args.injects)
        t0 = time.perf_counter()
        a = sequentially_composable(History.from_events(events, init, pols)).composable
        t1 = time.perf_counter()
        b = naive_composable(events, init, pols)
        t2 = time.perf_counter()
        t_fast, t_slow = t_fast + t1 - t0, t_slow + t2 - t1
        agree += a == b
        comp += a
        if a != b:
            print("disagreement:", events)
    print(f"{agree}/{args.n} agree, {comp} composable; "
          f"checker {t_fast * 1e3 / args.n:.2f} ms, naive {t_slow * 1e3 / args.n:.2f} ms per history")


if __name__ == "__main__":
    main()
