"""Run the three-controller triangle example under both protocols and print
the responses and the sequential witness."""
import argparse

from cpcsim import scenario as scn
from cpcsim.cli import simulate


def show(protocol):
    _, rep = simulate(scn.fig1(protocol))
    v = rep["verdict"]
    print(f"== {protocol}: {v['status']}, {v['tag_count']} tags, exit {rep['exit']}")
    for req, res in rep["results"].items():
        print(f"  request {req}: {res}")
    for e in v["witness"]:
        if e["type"] == "request":
            print(f"  {e['policy']} -> {e['result']}")
        else:
            print(f"  packet {e['uid']} via {' > '.join(map(str, e['ports']))}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--protocol", choices=("reusetag", "fixtag", "both"), default="both")
    args = ap.parse_args()
    for p in ("reusetag", "fixtag") if args.protocol == "both" else (args.protocol,):
        show(p)


if __name__ == "__main__":
    main()
