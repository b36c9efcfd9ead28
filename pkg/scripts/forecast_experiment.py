"""Train the classical and hybrid temperature models on a synthetic series and compare
them with the persistence baseline.

    python3 scripts/forecast_experiment.py --days 20 --epochs 100 --out forecast.json
"""
import argparse
import json
import logging

from bfopt import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--models", default="mt-classical,mt-hybrid")
    ap.add_argument("--out", default="forecast.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    res = experiments.forecast_experiment(args.days, args.epochs, args.seed, tuple(args.models.split(",")))
    with open(args.out, "w") as fh:
        json.dump(res, fh, indent=2)
    print(f"persistence RMSE {res['persistence']['rmse_all_c']:.3f} C")
    for kind, r in res["models"].items():
        print(f"{kind}: RMSE {r['rmse_all_c']:.3f} C, {r['improvement_vs_persistence']:.1%} better than persistence, "
              f"{r['n_params']} params, best epoch {r['best_epoch']}/{r['epochs_run']}, {r['seconds']:.0f}s")


if __name__ == "__main__":
    main()
