"""How often does boosting-based selection keep every planted informative channel?"""
import argparse

from bfopt import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--days", type=int, default=20)
    args = ap.parse_args()
    rows = experiments.feature_recovery(range(args.seeds), args.days)
    for r in rows:
        print(r["seed"], r["planted"], "positions", r["positions"], "ok" if r["recovered"] else "MISSED")
    print(f"recovered {sum(r['recovered'] for r in rows)}/{len(rows)}")


if __name__ == "__main__":
    main()
