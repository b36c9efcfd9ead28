"""Chronological splitting, mini-batch Adam training with early stopping, RMSE/MAE evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .models import Model
from .preprocess import SampleSet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    split_ratio: float = 0.8
    val_fraction: float = 0.1
    patience: int = 10  # 0 disables early stopping


@dataclass
class LossCurve:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for i, (t, v) in enumerate(zip(self.train, self.val), 1):
            rows.append(f"{i},{t!r},{v!r}")
        return "\n".join(rows) + "\n"


def split(samples: SampleSet, ratio: float = 0.8) -> tuple[SampleSet, SampleSet]:
    """First ``ratio`` of samples (by time) train, the rest test; never shuffled."""
    n = len(samples)
    if n < 5:
        raise ValueError(f"need at least 5 samples to split, got {n}")
    n_train = min(max(int(round(n * ratio)), 1), n - 1)
    return samples.take(np.arange(n_train)), samples.take(np.arange(n_train, n))


def rmse(y, yhat) -> float:
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("rmse needs equal, non-empty shapes")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("mae needs equal, non-empty shapes")
    return float(np.mean(np.abs(y - yhat)))


def targets_for(model: Model, data: SampleSet) -> np.ndarray:
    return data.targets_all if model.spec.kind == "mall" else data.targets_T


def predict(model: Model, inputs, batch_size: int = 256) -> np.ndarray:
    frozen = model.frozen()
    outs = [frozen(inputs[i : i + batch_size]).data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0,))


def evaluate_loss(model: Model, data: SampleSet) -> float:
    pred = predict(model, data.inputs)
    return float(np.mean((pred - targets_for(model, data)) ** 2))


def train(model: Model, data: SampleSet, cfg: TrainConfig, val: SampleSet | None = None) -> LossCurve:
    """Adam on the mean-squared loss. Without an explicit ``val`` set, the last
    ``val_fraction`` of ``data`` is held out for early stopping only."""
    if val is None and cfg.val_fraction > 0 and len(data) >= 10:
        n_val = max(1, int(round(len(data) * cfg.val_fraction)))
        val = data.take(np.arange(len(data) - n_val, len(data)))
        data = data.take(np.arange(0, len(data) - n_val))
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = ad.AdamState(lr=cfg.lr)
    targets = targets_for(model, data)
    curve = LossCurve()
    best_val, best_flat, stale = np.inf, model.flat(), 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model.zero_grad()
            loss = ad.l2_loss(model(data.inputs[idx]), targets[idx])
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            ad.backward(loss)
            ad.adam_step(params, state)
            total += loss.item() * len(idx)
        curve.train.append(total / len(order))
        v = evaluate_loss(model, val) if val is not None else curve.train[-1]
        curve.val.append(v)
        log.info("epoch %d train %.6g val %.6g", epoch + 1, curve.train[-1], v)
        if v < best_val:
            best_val, best_flat, stale, curve.best_epoch = v, model.flat(), 0, epoch + 1
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    model.set_flat(best_flat)
    return curve


@dataclass
class EvalReport:
    model: str
    rmse_norm: list[float]  # per horizon step
    mae_norm: list[float]
    rmse_c: list[float]  # degC
    mae_c: list[float]
    rmse_all_norm: float
    mae_all_norm: float
    rmse_all_c: float
    mae_all_c: float
    n_params: int
    n_head_params: int
    n_test: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate(model: Model, test: SampleSet, temp_scale: float, name: str | None = None,
             pred: np.ndarray | None = None) -> EvalReport:
    """RMSE/MAE of the temperature forecast per horizon step and overall, scaled and in degC.

    ``temp_scale`` is the temperature scaler's (max - min); the offset cancels in residuals.
    """
    if pred is None:
        pred = predict(model, test.inputs)
    if pred.ndim == 3:  # all-feature model: temperature is the last column
        pred = pred[:, :, -1]
    y = test.targets_T
    steps = y.shape[1]
    r = [rmse(y[:, k], pred[:, k]) for k in range(steps)]
    m = [mae(y[:, k], pred[:, k]) for k in range(steps)]
    return EvalReport(
        model=name or (model.spec.kind if model is not None else "baseline"),
        rmse_norm=r, mae_norm=m,
        rmse_c=[v * temp_scale for v in r], mae_c=[v * temp_scale for v in m],
        rmse_all_norm=rmse(y, pred), mae_all_norm=mae(y, pred),
        rmse_all_c=rmse(y, pred) * temp_scale, mae_all_c=mae(y, pred) * temp_scale,
        n_params=model.n_params() if model is not None else 0,
        n_head_params=model.n_params("head") if model is not None else 0,
        n_test=len(y),
    )


def persistence_predictions(test: SampleSet, temp_col: int = -1) -> np.ndarray:
    """Last observed temperature repeated over the horizon."""
    last = test.inputs[:, -1, temp_col]
    return np.repeat(last[:, None], test.targets_T.shape[1], axis=1)


def compare_models(classical: EvalReport, hybrid: EvalReport) -> dict:
    """Table-style rows plus relative RMSE improvement (RMSE_cl - RMSE_q) / RMSE_cl."""
    if classical.n_test != hybrid.n_test:
        raise ValueError("reports were computed on different test sets")

    def improvement(a, b):
        return 0.0 if a == b else (a - b) / a if a else 0.0

    rows = []
    for rep in (classical, hybrid):
        for k, (r, m) in enumerate(zip(rep.rmse_c, rep.mae_c), 1):
            rows.append({"model": rep.model, "horizon": f"{k} step", "rmse": r, "mae": m})
        rows.append({"model": rep.model, "horizon": "all steps", "rmse": rep.rmse_all_c, "mae": rep.mae_all_c})
    return {
        "rows": rows,
        "improvement_per_step": [improvement(a, b) for a, b in zip(classical.rmse_c, hybrid.rmse_c)],
        "improvement_all": improvement(classical.rmse_all_c, hybrid.rmse_all_c),
        "params": {classical.model: classical.n_params, hybrid.model: hybrid.n_params},
    }
