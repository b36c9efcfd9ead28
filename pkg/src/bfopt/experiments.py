"""Synthetic-plant experiments shared by the acceptance suite and ``scripts/``."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import dataio, models, pci_opt, trainer, workflow
from .dataio import PlantConfig
from .preprocess import PreprocessConfig

DAY = 1440


def feature_recovery(seeds=range(10), days: int = 20, n_channels: int = 40) -> list[dict]:
    """Does boosting selection keep every planted channel? One row per seed."""
    rows = []
    for seed in seeds:
        plant = dataio.Plant(PlantConfig(seed=seed, n_channels=n_channels))
        frame = plant.run(days * DAY)
        ds = workflow.prepare(frame, PreprocessConfig(), workflow.FeatselConfig())
        planted = [f"ch{i:02d}" for i in plant.informative]
        sel = ds.selection.selected
        rows.append({"seed": seed, "planted": planted, "positions": [sel.index(p) if p in sel else None
                                                                      for p in planted],
                     "recovered": all(p in sel for p in planted)})
    return rows


def forecast_experiment(days: int = 20, epochs: int = 100, seed: int = 0,
                        kinds=("mt-classical", "mt-hybrid")) -> dict:
    """Train the temperature models on one synthetic series and score them against persistence."""
    frame = dataio.generate_plant(PlantConfig(seed=seed), days * DAY)
    ds = workflow.prepare(frame, PreprocessConfig(), workflow.FeatselConfig())
    train, test = trainer.split(ds.samples)
    base = trainer.evaluate(None, test, ds.temp_scale, name="persistence",
                            pred=trainer.persistence_predictions(test))
    out = {"persistence": base.as_dict(), "models": {}, "selected": ds.selection.selected}
    for kind in kinds:
        model = models.build(models.ModelSpec.default(kind, seed=seed))
        t0 = time.perf_counter()
        curve = trainer.train(model, train, trainer.TrainConfig(epochs=epochs, seed=seed))
        rep = trainer.evaluate(model, test, ds.temp_scale)
        out["models"][kind] = {**rep.as_dict(), "best_epoch": curve.best_epoch, "epochs_run": len(curve.train),
                               "seconds": time.perf_counter() - t0,
                               "improvement_vs_persistence": 1.0 - rep.rmse_all_c / base.rmse_all_c}
    return out


@dataclass
class ControlScenario:
    """Plant and model settings for the closed-loop study.

    Windows of 30 minutes make the 150-minute PCI delay exactly one 5-step
    horizon, so every proposed PCI value lands inside the model's forecast.
    Short operator holds decorrelate neighbouring windows in the training log,
    which the model needs to learn a causal PCI response.
    """

    days: int = 40
    l_window: int = 30
    hold_min: int = 30
    hold_max: int = 90
    epochs: int = 100
    patience: int = 15
    iterations: int = 100
    apply_steps: int = 1
    duration: int = 2 * DAY
    lr: float = 1e-3
    seed: int = 0

    def plant(self, noise_std: float = 0.0) -> PlantConfig:
        """Every random term off except tap measurement noise of ``noise_std`` degC."""
        return PlantConfig(seed=self.seed, operator_hold_min=self.hold_min, operator_hold_max=self.hold_max,
                           noise_std=noise_std, disturbance_std=0.0, channel_noise=0.0, informative_noise=0.0,
                           missing_rate=0.0, outlier_rate=0.0)


def train_controller_model(sc: ControlScenario) -> tuple[models.Model, workflow.Dataset, dict]:
    """All-feature model on the zero-noise plant's uncontrolled log."""
    frame = dataio.generate_plant(sc.plant(0.0), sc.days * DAY)
    ds = workflow.prepare(frame, PreprocessConfig(l_window=sc.l_window, train_ratio=1.0), workflow.FeatselConfig())
    train, test = trainer.split(ds.samples, 0.9)
    mall = models.build(models.ModelSpec.default("mall", seed=sc.seed))
    t0 = time.perf_counter()
    curve = trainer.train(mall, train, trainer.TrainConfig(epochs=sc.epochs, patience=sc.patience, seed=sc.seed))
    rep = trainer.evaluate(mall, test, ds.temp_scale)
    base = trainer.evaluate(None, test, ds.temp_scale, pred=trainer.persistence_predictions(test))
    info = {"seconds": time.perf_counter() - t0, "best_epoch": curve.best_epoch, "rmse_T": rep.rmse_all_c,
            "rmse_persistence": base.rmse_all_c}
    return mall, ds, info


def run_closed_loop(sc: ControlScenario, mall: models.Model, ds: workflow.Dataset,
                    noise_std: float = 0.0) -> pci_opt.ClosedLoopResult:
    ocfg = pci_opt.OptimConfig(lr=sc.lr, seed=sc.seed)
    ccfg = pci_opt.ClosedLoopConfig(warmup_minutes=sc.days * DAY, duration=sc.duration, iterations=sc.iterations,
                                    apply_steps=sc.apply_steps)
    return pci_opt.closed_loop_eval(sc.plant(noise_std), mall, ds.side, ds.features, ocfg, ccfg)


def optimization_study(mall: models.Model, ds: workflow.Dataset, ends, iterations: int = 500,
                       cfg: pci_opt.OptimConfig | None = None) -> list[dict]:
    """One fresh solve per history end index; reports the relative loss reduction."""
    cfg = cfg or pci_opt.OptimConfig()
    rows = []
    for end in ends:
        problem = pci_opt.OptimProblem.build(ds.values[end - mall.spec.steps:end], ds.scaler, ds.features,
                                             cfg.target_temp, cfg.penalty, mall.spec.horizon)
        moptim = pci_opt.new_policy_model(len(ds.features), mall.spec.steps, mall.spec.horizon, cfg.seed)
        pol = pci_opt.optimize(problem, mall, moptim, dataclasses.replace(cfg, iterations=iterations),
                               scaler=ds.scaler)
        rows.append({"end": int(end), "initial_loss": pol.initial_loss, "loss": pol.loss,
                     "reduction": 1.0 - pol.loss / pol.initial_loss, "iteration": pol.iteration,
                     "within_bounds": pol.within_bounds, "predicted_T": pol.predicted_T.tolist(),
                     "mean_abs_dev": float(np.mean(np.abs(pol.predicted_T - cfg.target_temp)))})
    return rows
