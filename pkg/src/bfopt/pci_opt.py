"""Prediction-based PCI optimization and its closed-loop evaluation on the synthetic plant.

One solve:
  1. forecast the next ``m`` rows of all features with the frozen all-feature model;
  2. stack them under the 24-row history with the future PCI entries zeroed;
  3. the linear policy model maps the stack to ``m`` PCI values;
  4-5. write those into the future PCI entries, feed the last 24 rows back into
     the all-feature model, read off its temperature forecast;
  6. Adam step on the policy model to reduce |T - target|_1 + penalty * bound violation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataio import PCI_CHANNEL, Plant, PlantConfig, SensorFrame, raw_to_pci
from .models import Model, ModelSpec, PolicyModel
from .preprocess import TEMPERATURE, MinMaxScaler, Sidecar, apply_frame

log = logging.getLogger(__name__)

EPS_BOUND = 1e-6


class OptimizationDiverged(RuntimeError):
    pass


class UnitMismatch(ValueError):
    pass


@dataclass
class OptimConfig:
    iterations: int = 500
    lr: float = 1e-3  # the policy map has ~800 inputs; larger steps overshoot
    lr_decay: bool = True  # cosine decay to zero over the iteration budget
    penalty: float = 1.0
    target_temp: float = 1510.0
    warm_start: bool = True
    seed: int = 0


@dataclass
class OptimProblem:
    history: np.ndarray  # (24, F) scaled
    target_raw: float
    target_scaled: float
    pci_col: int
    temp_col: int
    horizon: int = 5
    penalty: float = 1.0
    fingerprint: str = ""

    @classmethod
    def build(cls, history, scaler: MinMaxScaler, features: list[str], target_temp: float = 1510.0,
              penalty: float = 1.0, horizon: int = 5) -> "OptimProblem":
        history = np.asarray(history, dtype=float)
        if history.shape[1] != len(features):
            raise ValueError(f"history has {history.shape[1]} columns, features list has {len(features)}")
        target = float(scaler.transform(np.array([target_temp]), [TEMPERATURE])[0])
        return cls(history, target_temp, target, features.index(PCI_CHANNEL), features.index(TEMPERATURE),
                   horizon, penalty, scaler.fingerprint(features))


@dataclass
class PciPolicy:
    pci: np.ndarray  # scaled policy values (projected onto [0, 1])
    predicted_T: np.ndarray  # degC
    predicted_T_scaled: np.ndarray
    loss: float
    iteration: int
    raw_pci: np.ndarray  # unprojected policy-model output at that iteration
    params: np.ndarray | None = None  # policy-model weights at that iteration
    initial_loss: float = float("nan")
    trace: list[dict] = field(default_factory=list)

    @property
    def within_bounds(self) -> bool:
        return bool(np.all(self.pci >= -EPS_BOUND) and np.all(self.pci <= 1 + EPS_BOUND))


def new_policy_model(n_features: int, steps: int = 24, horizon: int = 5, seed: int = 0) -> PolicyModel:
    return PolicyModel(ModelSpec(kind="moptim", n_features=n_features, hidden=0, steps=steps, horizon=horizon,
                                 seed=seed))


def baseline_predict(mall: Model, history) -> np.ndarray:
    """All-feature forecast (horizon x F) from the 24-row history."""
    if mall is None:
        raise ValueError("baseline_predict needs a trained all-feature model")
    return mall.predict(np.asarray(history, dtype=float)[None])[0]


def stack_with_zeroed_pci(history, future, pci_col: int) -> np.ndarray:
    history = np.asarray(history, dtype=float)
    future = np.array(future, dtype=float)
    if history.ndim != 2 or future.ndim != 2 or history.shape[1] != future.shape[1]:
        raise ad.ShapeError(f"cannot stack history {history.shape} with future {future.shape}")
    future[:, pci_col] = 0.0
    return np.vstack([history, future])


def propose_policy(moptim: Model, stacked) -> ad.Tensor:
    return moptim(ad.as_tensor(stacked))


def _placement(rows: int, n_feat: int, horizon: int, pci_col: int) -> np.ndarray:
    place = np.zeros((horizon, rows * n_feat))
    for k in range(horizon):
        place[k, (rows - horizon + k) * n_feat + pci_col] = 1.0
    return place


def simulate_stacked(mall: Model, stacked, policy, pci_col: int, temp_col: int) -> ad.Tensor:
    """Write ``policy`` into the future PCI entries of ``stacked``, run the all-feature model on
    the last ``steps`` rows and return its temperature forecast (scaled units)."""
    stacked = np.array(stacked, dtype=float)
    policy = ad.as_tensor(policy)
    rows, n_feat = stacked.shape
    horizon = policy.shape[-1] if policy.data.ndim == 1 else -1
    if horizon < 1 or rows <= horizon:
        raise ad.ShapeError(f"policy {policy.shape} does not fit stack {stacked.shape}")
    stacked[rows - horizon :, pci_col] = 0.0
    inserted = ad.reshape(policy @ _placement(rows, n_feat, horizon, pci_col), (rows, n_feat))
    x = inserted + stacked
    steps = mall.spec.steps
    out = mall(ad.reshape(x[rows - steps :], (1, steps, n_feat)))
    return out[0, :, temp_col]


def simulate_policy(mall: Model, history, future, policy, pci_col: int, temp_col: int) -> ad.Tensor:
    return simulate_stacked(mall, stack_with_zeroed_pci(history, future, pci_col), policy, pci_col, temp_col)


def composite_loss(temps, policy, problem: OptimProblem, fingerprint: str | None = None) -> ad.Tensor:
    """L1 distance of the forecast from the scaled target plus penalty * hinge bound violation."""
    if fingerprint is not None and problem.fingerprint and fingerprint != problem.fingerprint:
        raise UnitMismatch("temperatures and target come from different scalers")
    temps, policy = ad.as_tensor(temps), ad.as_tensor(policy)
    dev = ad.l1_loss(temps, np.full(temps.shape, problem.target_scaled))
    viol = ad.tsum(ad.relu(policy - 1.0) + ad.relu(-policy))
    return dev + problem.penalty * viol


def optimize(problem: OptimProblem, mall: Model, moptim: PolicyModel, cfg: OptimConfig | None = None,
             iterations: int | None = None, scaler: MinMaxScaler | None = None,
             mall_fingerprint: str | None = None) -> PciPolicy:
    """Tune ``moptim`` for ``iterations`` Adam steps with ``mall`` frozen.

    Returns the best iterate seen (by the loss of its policy projected onto
    [0, 1]), so the result never gets worse with more iterations.
    """
    cfg = cfg or OptimConfig()
    iterations = cfg.iterations if iterations is None else iterations
    if mall_fingerprint is not None and problem.fingerprint and mall_fingerprint != problem.fingerprint:
        raise UnitMismatch("all-feature model was trained with a different scaler")
    frozen = mall.frozen()
    future = baseline_predict(frozen, problem.history)
    stacked = stack_with_zeroed_pci(problem.history, future, problem.pci_col)
    params = moptim.parameters()
    state = ad.AdamState(lr=cfg.lr)
    best: PciPolicy | None = None
    trace = []
    initial = float("nan")
    for it in range(iterations + 1):
        moptim.zero_grad()
        policy = propose_policy(moptim, stacked)
        temps = simulate_stacked(frozen, stacked, policy, problem.pci_col, problem.temp_col)
        loss = composite_loss(temps, policy, problem)
        lval = loss.item()
        if not np.isfinite(lval) or lval > 1e6:
            raise OptimizationDiverged(f"loss {lval} at iteration {it}")
        raw = policy.data.copy()
        proj = np.clip(raw, 0.0, 1.0)
        if np.array_equal(proj, raw):
            p_temps, p_loss = temps.data.copy(), lval
        else:
            pt = simulate_stacked(frozen, stacked, proj, problem.pci_col, problem.temp_col)
            p_temps, p_loss = pt.data.copy(), composite_loss(pt, proj, problem).item()
        if it == 0:
            initial = p_loss
        trace.append({"iteration": it, "loss": p_loss, "raw_loss": lval, "policy": proj.tolist(),
                      "raw_policy": raw.tolist(), "temps_scaled": p_temps.tolist()})
        if best is None or p_loss < best.loss:
            best = PciPolicy(proj, _to_celsius(p_temps, scaler), p_temps, p_loss, it, raw, moptim.flat())
        if it == iterations:
            break
        ad.backward(loss)
        if cfg.lr_decay and iterations > 0:
            state.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * it / iterations))
        ad.adam_step(params, state)
    moptim.set_flat(best.params)  # leave the policy model at the returned iterate
    best.initial_loss = initial
    best.trace = trace
    return best


def _to_celsius(temps_scaled, scaler: MinMaxScaler | None) -> np.ndarray:
    if scaler is None:
        return np.full(len(temps_scaled), np.nan)
    return scaler.inverse_transform(temps_scaled, [TEMPERATURE])


def trace_to_csv(policy: PciPolicy, scaler: MinMaxScaler | None = None) -> str:
    h = len(policy.pci)
    head = (["iteration", "loss", "raw_loss"] + [f"pci{k + 1}" for k in range(h)]
            + [f"raw_pci{k + 1}" for k in range(h)] + [f"T{k + 1}" for k in range(h)])
    rows = [",".join(head)]
    for row in policy.trace:
        temps = _to_celsius(np.array(row["temps_scaled"]), scaler) if scaler is not None else row["temps_scaled"]
        vals = [row["iteration"], row["loss"], row["raw_loss"], *row["policy"], *row["raw_policy"], *temps]
        rows.append(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in vals))
    return "\n".join(rows) + "\n"


# closed loop --------------------------------------------------------------------------------------


@dataclass
class ClosedLoopConfig:
    warmup_minutes: int = 14 * 1440  # uncontrolled history before the controller takes over
    duration: int = 2 * 1440
    band: float = 10.0
    iterations: int = 200  # per solve
    warm_start: bool = True
    apply_steps: int = 1  # policy windows applied before re-solving (1 .. horizon)


@dataclass
class ClosedLoopResult:
    minutes: np.ndarray
    pci_controlled: np.ndarray  # raw ton/hr
    pci_uncontrolled: np.ndarray
    temp_controlled: np.ndarray  # measured tap mean, degC
    temp_uncontrolled: np.ndarray
    temp_predicted: np.ndarray  # controller's forecast for that minute's window (NaN if none)
    eval_start: int  # index into the arrays where statistics begin
    target: float
    band: float
    solves: list[dict] = field(default_factory=list)

    def stats(self) -> dict:
        def block(t):
            dev = t[self.eval_start :] - self.target
            return {"mean_abs_dev": float(np.mean(np.abs(dev))), "max_abs_dev": float(np.max(np.abs(dev))),
                    "std_dev": float(np.std(dev)), "rmse_dev": float(np.sqrt(np.mean(dev**2))),
                    "within_band_frac": float(np.mean(np.abs(dev) <= self.band))}

        ctl, unc = block(self.temp_controlled), block(self.temp_uncontrolled)
        return {"target": self.target, "band": self.band, "eval_minutes": int(len(self.minutes) - self.eval_start),
                "controlled": ctl, "uncontrolled": unc,
                "mean_dev_ratio": ctl["mean_abs_dev"] / unc["mean_abs_dev"] if unc["mean_abs_dev"] else float("nan"),
                "n_solves": len(self.solves)}

    def to_csv(self) -> str:
        from .dataio import minutes_to_iso

        rows = ["time,pci_applied,realized_T,predicted_T,pci_uncontrolled,uncontrolled_T"]
        for i, m in enumerate(self.minutes):
            rows.append(",".join([minutes_to_iso(m)] + [repr(float(v)) for v in (
                self.pci_controlled[i], self.temp_controlled[i], self.temp_predicted[i],
                self.pci_uncontrolled[i], self.temp_uncontrolled[i])]))
        return "\n".join(rows) + "\n"


def _measured_temp(frame: SensorFrame) -> np.ndarray:
    t = frame.temps
    cnt = np.sum(~np.isnan(t), axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(cnt > 0, np.nansum(t, axis=1) / np.maximum(cnt, 1), np.nan)


def history_window(frame: SensorFrame, side: Sidecar, features: list[str], scaler: MinMaxScaler,
                   steps: int = 24) -> np.ndarray:
    """Scaled feature rows for the last ``steps`` complete windows ending at the frame's end."""
    l = side.l_window
    need = (steps + 4) * l  # extra windows absorb imputation edge effects
    recent = frame.slice(len(frame) - need, len(frame))
    disc = apply_frame(recent, side)
    return scaler.transform(disc.select(features).values[-steps:])


def closed_loop_eval(plant_cfg: PlantConfig, mall: Model, side: Sidecar, features: list[str],
                     ocfg: OptimConfig, ccfg: ClosedLoopConfig, controller: bool = True) -> ClosedLoopResult:
    """Run the plant uncontrolled for ``warmup_minutes``, then solve, apply the first
    ``apply_steps`` policy windows, and re-solve (receding horizon).

    The same plant is also run without the controller over the same span for comparison.
    """
    scaler = side.scaler(features)
    l = side.l_window
    horizon = mall.spec.horizon
    if not 1 <= ccfg.apply_steps <= horizon:
        raise ValueError(f"apply_steps must lie in [1, {horizon}]")
    if ccfg.warmup_minutes % l:
        raise ValueError("warmup_minutes must be a multiple of the window length")
    missing = [f for f in features if f not in plant_cfg.channel_names + [TEMPERATURE]]
    if missing:
        raise ValueError(f"plant lacks model features: {', '.join(missing)}")
    cycle = ccfg.apply_steps * l
    fingerprint = scaler.fingerprint(features)

    reference = Plant(plant_cfg)
    ref_frame = reference.run(ccfg.warmup_minutes + ccfg.duration)

    plant = Plant(plant_cfg)
    frame = plant.run(ccfg.warmup_minutes)
    moptim = new_policy_model(len(features), mall.spec.steps, horizon, ocfg.seed)
    predicted = np.full(ccfg.duration, np.nan)
    solves = []
    done = 0
    while done < ccfg.duration:
        n = min(cycle, ccfg.duration - done)
        if controller:
            hist = history_window(frame, side, features, scaler, mall.spec.steps)
            problem = OptimProblem.build(hist, scaler, features, ocfg.target_temp, ocfg.penalty, horizon)
            if not ccfg.warm_start:
                moptim = new_policy_model(len(features), mall.spec.steps, horizon, ocfg.seed)
            pol = optimize(problem, mall, moptim, ocfg, ccfg.iterations, scaler, fingerprint)
            raw_pci = scaler.inverse_transform(pol.pci, [PCI_CHANNEL])
            u = np.repeat(raw_to_pci(raw_pci[: ccfg.apply_steps]), l)[:n]
            # the forecast covers the windows right after the policy horizon
            lo = done + horizon * l
            hi = min(lo + cycle, ccfg.duration)
            if hi > lo:
                predicted[lo:hi] = np.repeat(pol.predicted_T[: ccfg.apply_steps], l)[: hi - lo]
            solves.append({"minute": int(frame.timestamps[-1] + 1), "loss": pol.loss,
                           "initial_loss": pol.initial_loss, "iteration": pol.iteration, "pci": pol.pci.tolist(),
                           "predicted_T": pol.predicted_T.tolist()})
            chunk = plant.run(n, inputs=u)
        else:
            chunk = plant.run(n)
        frame = frame.append(chunk)
        done += n
        log.info("closed loop %d/%d minutes", done, ccfg.duration)
    w = ccfg.warmup_minutes
    ctl = frame.slice(w, len(frame))
    unc = ref_frame.slice(w, len(ref_frame))
    return ClosedLoopResult(
        minutes=ctl.timestamps, pci_controlled=ctl.channel(PCI_CHANNEL), pci_uncontrolled=unc.channel(PCI_CHANNEL),
        temp_controlled=_measured_temp(ctl), temp_uncontrolled=_measured_temp(unc), temp_predicted=predicted,
        eval_start=min(plant_cfg.pci_delay_steps, ccfg.duration - 1), target=ocfg.target_temp, band=ccfg.band,
        solves=solves,
    )
