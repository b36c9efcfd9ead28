"""Closed-loop PCI control on the synthetic plant, with and without tap noise.

Trains the all-feature model once on the zero-noise plant's uncontrolled log
(cached under --cache), then runs the receding-horizon controller against the
same plant with each requested noise level.

    python3 scripts/closed_loop_experiment.py --noise 0 2 --out closed_loop/
"""
import argparse
import dataclasses
import json
import logging
from pathlib import Path

from bfopt import dataio, experiments, models, workflow
from bfopt.preprocess import PreprocessConfig


def main():
    sc = experiments.ControlScenario()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 2.0])
    for f in dataclasses.fields(sc):
        ap.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    ap.add_argument("--cache", help="checkpoint directory for the trained model (reused if present)")
    ap.add_argument("--out", default="closed_loop")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    sc = experiments.ControlScenario(**{f.name: getattr(args, f.name) for f in dataclasses.fields(sc)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.cache and Path(args.cache, "params.bin").exists():
        mall, _ = models.load(args.cache)
        frame = dataio.generate_plant(sc.plant(0.0), sc.days * experiments.DAY)
        ds = workflow.prepare(frame, PreprocessConfig(l_window=sc.l_window, train_ratio=1.0),
                              workflow.FeatselConfig())
        info = {"cached": args.cache}
    else:
        mall, ds, info = experiments.train_controller_model(sc)
        if args.cache:
            mall.save(args.cache)
    print("model:", json.dumps(info))

    summary = {"scenario": dataclasses.asdict(sc), "model": info, "runs": {}}
    for noise in args.noise:
        res = experiments.run_closed_loop(sc, mall, ds, noise)
        st = res.stats()
        summary["runs"][str(noise)] = st
        (out / f"closed_loop_noise{noise:g}.csv").write_text(res.to_csv())
        c, u = st["controlled"], st["uncontrolled"]
        print(f"noise {noise:g} C: mean|dev| {c['mean_abs_dev']:.2f} vs {u['mean_abs_dev']:.2f} uncontrolled "
              f"(ratio {st['mean_dev_ratio']:.2f}); within +-{st['band']:g} C {c['within_band_frac']:.1%} vs "
              f"{u['within_band_frac']:.1%}; max|dev| {c['max_abs_dev']:.1f} vs {u['max_abs_dev']:.1f}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
