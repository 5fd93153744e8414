"""Run the T_f freeze schedule with f+1 and f+2 tags, in both exhaustion modes."""
import argparse

from cpcsim import scenario as scn
from cpcsim.cli import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--f", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()
    print(f"{'f':>2} {'budget':>6} {'mode':>6} {'verdict':>11} {'termination':>11} {'exit':>4}")
    for f in args.f:
        for budget in (f + 1, f + 2):
            for mode in ("stall", "reuse"):
                _, rep = simulate(scn.gen_lowerbound(f, budget, mode))
                print(f"{f:>2} {budget:>6} {mode:>6} {rep['verdict']['status']:>11} "
                      f"{rep['termination']:>11} {rep['exit']:>4}")


if __name__ == "__main__":
    main()
