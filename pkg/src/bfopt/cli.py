"""Command-line entry point: ``bfopt <command> [options]``.

Every command reads an optional ``key = value`` run config (``--config``),
writes its outputs atomically, and on failure prints one JSON line
``{"error": ..., "message": ..., "command": ...}`` to stderr with exit code 1.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataio, models, pci_opt, preprocess, trainer, workflow
from .dataio import PlantConfig
from .pci_opt import ClosedLoopConfig, OptimConfig
from .preprocess import PreprocessConfig, Sidecar
from .trainer import TrainConfig
from .workflow import FeatselConfig

log = logging.getLogger("bfopt")


@dataclass
class ModelSizes:
    hidden_t: int = 143
    hidden_all: int = 256
    qdi_grad: str = "adjoint"


@dataclass
class RunConfig:
    """Every tunable of a run. ``seed`` is copied into all component seeds."""

    seed: int = 0
    minutes: int = 20 * 1440
    plant: PlantConfig = field(default_factory=PlantConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    featsel: FeatselConfig = field(default_factory=FeatselConfig)
    model: ModelSizes = field(default_factory=ModelSizes)
    train: TrainConfig = field(default_factory=TrainConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    closed_loop: ClosedLoopConfig = field(default_factory=ClosedLoopConfig)

    def seeded(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self, seed=seed,
            plant=dataclasses.replace(self.plant, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            optim=dataclasses.replace(self.optim, seed=seed),
        )


def load_run_config(path: str | None, seed: int | None) -> RunConfig:
    cfg = cfgmod.load(RunConfig, path) if path else RunConfig()
    if seed is None:
        seed = cfgmod.default_seed(cfg.seed)
    cfg = cfg.seeded(seed)
    cfg.plant.validate()
    return cfg


def _write_json(path, obj) -> None:
    cfgmod.atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_list(path) -> list[str]:
    return [s.strip() for s in Path(path).read_text(encoding="utf-8").splitlines() if s.strip()]


def _model_spec(cfg: RunConfig, kind: str, n_features: int) -> models.ModelSpec:
    hidden = {"mt-classical": cfg.model.hidden_t, "mt-hybrid": cfg.model.hidden_t, "mall": cfg.model.hidden_all}
    if kind not in hidden:
        raise ValueError(f"cannot train model kind {kind!r}")
    return models.ModelSpec(kind=kind, n_features=n_features, hidden=hidden[kind], qdi_grad=cfg.model.qdi_grad,
                            seed=cfg.seed)


def _scaled_samples(disc, side: Sidecar, features: list[str]):
    values, scaler = workflow.scaled_matrix(disc, side, features)
    return preprocess.make_samples(values), scaler


# commands ----------------------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, minutes: int, out) -> dataio.SensorFrame:
    frame = dataio.generate_plant(cfg.plant, minutes)
    dataio.save_csv(frame, out)
    return frame


def cmd_preprocess(cfg: RunConfig, src, out, sidecar):
    frame = dataio.load_csv(src)
    side = preprocess.fit_sidecar(frame, cfg.preprocess)
    disc = preprocess.apply_frame(frame, side, cfg.preprocess)
    side.save(sidecar)
    cfgmod.atomic_write(out, preprocess.disc_to_csv(disc))
    return disc, side


def cmd_select_features(cfg: RunConfig, src, out, selected_out):
    disc = preprocess.disc_from_csv(src, cfg.preprocess.l_window)
    sel = workflow.select_features(disc, cfg.featsel, cfg.preprocess.train_ratio)
    rows = ["target,feature,influence,corr,rank"]
    for target, rep in (("temperature", sel.report_T), ("pci", sel.report_PCI)):
        for line in rep.to_csv().splitlines()[1:]:
            rows.append(f"{target},{line}")
    cfgmod.atomic_write(out, "\n".join(rows) + "\n")
    cfgmod.atomic_write(selected_out, "\n".join(sel.selected) + "\n")
    return sel


def cmd_train(cfg: RunConfig, kind: str, src, sidecar, features_file, checkpoint):
    side = Sidecar.load(sidecar)
    disc = preprocess.disc_from_csv(src, side.l_window)
    features = preprocess.model_features(_read_list(features_file))
    samples, scaler = _scaled_samples(disc, side, features)
    train, _ = trainer.split(samples, cfg.train.split_ratio)
    model = models.build(_model_spec(cfg, kind, len(features)))
    curve = trainer.train(model, train, cfg.train)
    meta = {"features": ",".join(features), "l_window": str(side.l_window),
            "scaler": scaler.fingerprint(features), "best_epoch": str(curve.best_epoch)}
    model.save(checkpoint, meta)
    cfgmod.atomic_write(Path(checkpoint) / "loss_curve.csv", curve.to_csv())
    return model, curve


def _load_checkpoint(path, side: Sidecar):
    model, meta = models.load(path)
    features = meta["features"].split(",")
    scaler = side.scaler(features)
    if meta.get("scaler") and meta["scaler"] != scaler.fingerprint(features):
        raise pci_opt.UnitMismatch(f"{path}: checkpoint was trained with a different sidecar")
    if int(meta.get("l_window", side.l_window)) != side.l_window:
        raise pci_opt.UnitMismatch(f"{path}: checkpoint l_window differs from sidecar")
    return model, features, scaler


def cmd_evaluate(cfg: RunConfig, checkpoints, src, sidecar, out_json, out_csv):
    side = Sidecar.load(sidecar)
    disc = preprocess.disc_from_csv(src, side.l_window)
    reports, temp_model_reports = [], []
    test = scale = None
    for path in checkpoints:
        model, features, scaler = _load_checkpoint(path, side)
        samples, _ = _scaled_samples(disc, side, features)
        _, test = trainer.split(samples, cfg.train.split_ratio)
        scale = scaler.scale_of(preprocess.TEMPERATURE)
        rep = trainer.evaluate(model, test, scale, name=f"{model.spec.kind}:{Path(path).name}")
        reports.append(rep)
        if model.spec.kind.startswith("mt-"):
            temp_model_reports.append(rep)
    if test is None:
        raise ValueError("no checkpoints given")
    base = trainer.evaluate(None, test, scale, name="persistence", pred=trainer.persistence_predictions(test))
    result = {"models": [r.as_dict() for r in reports], "persistence": base.as_dict(),
              "improvement_vs_persistence": {r.model: 1.0 - r.rmse_all_c / base.rmse_all_c for r in reports}}
    if len(temp_model_reports) >= 2:
        result["comparison"] = trainer.compare_models(temp_model_reports[0], temp_model_reports[1])
    _write_json(out_json, result)
    rows = ["model,horizon,rmse_c,mae_c,rmse_norm,mae_norm"]
    for r in reports + [base]:
        for k in range(len(r.rmse_c)):
            rows.append(f"{r.model},{k + 1} step,{r.rmse_c[k]!r},{r.mae_c[k]!r},{r.rmse_norm[k]!r},{r.mae_norm[k]!r}")
        rows.append(f"{r.model},all steps,{r.rmse_all_c!r},{r.mae_all_c!r},{r.rmse_all_norm!r},{r.mae_all_norm!r}")
    cfgmod.atomic_write(out_csv, "\n".join(rows) + "\n")
    return result


def cmd_optimize(cfg: RunConfig, checkpoint, src, sidecar, iterations, out_dir, at: int | None = None):
    side = Sidecar.load(sidecar)
    disc = preprocess.disc_from_csv(src, side.l_window)
    mall, features, scaler = _load_checkpoint(checkpoint, side)
    if mall.spec.kind != "mall":
        raise ValueError(f"{checkpoint} is not an all-feature model")
    values = scaler.transform(disc.select(features).values)
    end = len(values) if at is None else at
    if end < mall.spec.steps or end > len(values):
        raise ValueError(f"history end {end} outside [{mall.spec.steps}, {len(values)}]")
    problem = pci_opt.OptimProblem.build(values[end - mall.spec.steps : end], scaler, features,
                                         cfg.optim.target_temp, cfg.optim.penalty, mall.spec.horizon)
    moptim = pci_opt.new_policy_model(len(features), mall.spec.steps, mall.spec.horizon, cfg.optim.seed)
    pol = pci_opt.optimize(problem, mall, moptim, cfg.optim, iterations, scaler, scaler.fingerprint(features))
    out_dir = Path(out_dir)
    raw_pci = scaler.inverse_transform(pol.pci, [dataio.PCI_CHANNEL])
    _write_json(out_dir / "policy.json", {
        "pci_scaled": pol.pci.tolist(), "pci_raw": raw_pci.tolist(), "predicted_T": pol.predicted_T.tolist(),
        "loss": pol.loss, "initial_loss": pol.initial_loss, "iteration": pol.iteration,
        "within_bounds": pol.within_bounds, "history_end": int(end), "target": cfg.optim.target_temp,
    })
    cfgmod.atomic_write(out_dir / "trace.csv", pci_opt.trace_to_csv(pol, scaler))
    return pol


def cmd_closed_loop(cfg: RunConfig, checkpoint, sidecar, minutes, out_dir, plant_config=None):
    side = Sidecar.load(sidecar)
    mall, features, _ = _load_checkpoint(checkpoint, side)
    plant = dataio.load_plant_config(plant_config) if plant_config else cfg.plant
    missing = [f for f in features if f not in plant.channel_names + [preprocess.TEMPERATURE]]
    if missing:
        raise ValueError(f"plant lacks model features: {', '.join(missing)}")
    ccfg = dataclasses.replace(cfg.closed_loop, duration=minutes) if minutes else cfg.closed_loop
    res = pci_opt.closed_loop_eval(plant, mall, side, features, cfg.optim, ccfg)
    out_dir = Path(out_dir)
    cfgmod.atomic_write(out_dir / "closed_loop.csv", res.to_csv())
    _write_json(out_dir / "closed_loop_summary.json", res.stats())
    return res


def cmd_pipeline(cfg: RunConfig, out_dir, kinds=("mt-classical", "mt-hybrid", "mall")) -> dict:
    """generate -> preprocess -> select-features -> train -> evaluate -> optimize -> closed-loop."""
    out = Path(out_dir)
    timings = {}

    def timed(name, fn, *args):
        t = time.perf_counter()
        res = fn(*args)
        timings[name] = time.perf_counter() - t
        return res

    timed("generate", cmd_generate, cfg, cfg.minutes, out / "plant.csv")
    timed("preprocess", cmd_preprocess, cfg, out / "plant.csv", out / "discretized.csv", out / "sidecar.csv")
    timed("select_features", cmd_select_features, cfg, out / "discretized.csv", out / "importance.csv",
          out / "selected.txt")
    for kind in kinds:
        timed(f"train_{kind}", cmd_train, cfg, kind, out / "discretized.csv", out / "sidecar.csv",
              out / "selected.txt", out / "checkpoints" / kind)
    timed("evaluate", cmd_evaluate, cfg, [out / "checkpoints" / k for k in kinds], out / "discretized.csv",
          out / "sidecar.csv", out / "report.json", out / "report.csv")
    if "mall" in kinds:
        timed("optimize", cmd_optimize, cfg, out / "checkpoints" / "mall", out / "discretized.csv",
              out / "sidecar.csv", cfg.optim.iterations, out / "optimize")
        if cfg.closed_loop.duration > 0:
            timed("closed_loop", cmd_closed_loop, cfg, out / "checkpoints" / "mall", out / "sidecar.csv",
                  cfg.closed_loop.duration, out / "closed_loop")
    cfgmod.atomic_write(out / "run_config.txt", cfgmod.dumps(cfg))
    # wall times vary run to run, so they live apart from the reports
    _write_json(out / "timings.json", timings)
    return timings


# argument parsing --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bfopt", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value run config file")
    p.add_argument("--seed", type=int, help=f"overrides config seed and ${cfgmod.SEED_ENV}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="synthetic plant CSV")
    s.add_argument("--minutes", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("preprocess", help="clip, impute, discretize; fit sidecar")
    s.add_argument("--in", dest="src", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sidecar", required=True)

    s = sub.add_parser("select-features", help="boosting importance and the selected channel list")
    s.add_argument("--in", dest="src", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--selected", help="selected-channel list (default: <out dir>/selected.txt)")

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--model", required=True, choices=["mt-classical", "mt-hybrid", "mall"])
    s.add_argument("--in", dest="src", required=True)
    s.add_argument("--sidecar", required=True)
    s.add_argument("--features", required=True, help="selected-channel list")
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("evaluate", help="test-split RMSE/MAE report")
    s.add_argument("--checkpoints", nargs="+", required=True)
    s.add_argument("--in", dest="src", required=True)
    s.add_argument("--sidecar", required=True)
    s.add_argument("--out", required=True, help="report JSON; a CSV is written next to it")

    s = sub.add_parser("optimize", help="PCI policy for one history window")
    s.add_argument("--checkpoint-mall", required=True)
    s.add_argument("--in", dest="src", required=True)
    s.add_argument("--sidecar", required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--at", type=int, help="history ends before this discrete step (default: end of data)")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("closed-loop", help="controller on the synthetic plant vs. uncontrolled run")
    s.add_argument("--checkpoints", "--checkpoint-mall", dest="checkpoint", required=True)
    s.add_argument("--sidecar", required=True)
    s.add_argument("--plant-config", help="PlantConfig key = value file (default: run config's plant.*)")
    s.add_argument("--minutes", type=int)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("pipeline", help="run every stage into one directory")
    s.add_argument("--out", required=True)
    s.add_argument("--models", default="mt-classical,mt-hybrid,mall")
    return p


def run(args: argparse.Namespace) -> None:
    cfg = load_run_config(args.config, args.seed)
    c = args.command
    if c == "generate":
        cmd_generate(cfg, args.minutes or cfg.minutes, args.out)
    elif c == "preprocess":
        cmd_preprocess(cfg, args.src, args.out, args.sidecar)
    elif c == "select-features":
        cmd_select_features(cfg, args.src, args.out, args.selected or Path(args.out).with_name("selected.txt"))
    elif c == "train":
        cmd_train(cfg, args.model, args.src, args.sidecar, args.features, args.checkpoint)
    elif c == "evaluate":
        out = Path(args.out)
        cmd_evaluate(cfg, args.checkpoints, args.src, args.sidecar, out, out.with_suffix(".csv"))
    elif c == "optimize":
        it = cfg.optim.iterations if args.iterations is None else args.iterations
        cmd_optimize(cfg, args.checkpoint_mall, args.src, args.sidecar, it, args.out, args.at)
    elif c == "closed-loop":
        cmd_closed_loop(cfg, args.checkpoint, args.sidecar, args.minutes, args.out, args.plant_config)
    elif c == "pipeline":
        cmd_pipeline(cfg, args.out, tuple(k for k in args.models.split(",") if k))


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        err = {"error": type(exc).__name__, "message": _one_line(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
