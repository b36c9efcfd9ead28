"""Temperature assembly, IQR clipping, gap imputation, window discretization and scaling."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataio import PCI_CHANNEL, SensorFrame

TEMPERATURE = "temperature"
IMPUTE_HORIZON = 30  # minutes
INPUT_STEPS = 24
HORIZON = 5


class GapError(ValueError):
    pass


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class IqrBounds:
    q1: float
    q3: float
    k: float = 5.0

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def lower(self) -> float:
        return self.q1 - self.k * self.iqr

    @property
    def upper(self) -> float:
        return self.q3 + self.k * self.iqr

    @classmethod
    def fit(cls, series, k: float = 5.0) -> "IqrBounds":
        """Quartiles by linear interpolation between closest ranks, ignoring NaN."""
        x = np.asarray(series, dtype=float)
        if np.all(np.isnan(x)):
            raise ValueError("cannot fit IQR bounds on an all-missing series")
        q1, q3 = np.nanquantile(x, [0.25, 0.75], method="linear")
        return cls(float(q1), float(q3), k)


def iqr_correct(series, bounds: IqrBounds) -> np.ndarray:
    """Clip values outside [lower, upper] onto the violated bound; NaN passes through."""
    x = np.asarray(series, dtype=float)
    return np.where(x < bounds.lower, bounds.lower, np.where(x > bounds.upper, bounds.upper, x))


def impute(series, horizon: int = IMPUTE_HORIZON, strict: bool = True) -> np.ndarray:
    """Forward-fill runs of missing values no longer than ``horizon``.

    A leading run (no earlier value) is back-filled under the same limit.
    Longer runs raise :class:`GapError` when ``strict``, else stay NaN so
    :func:`segments` can split around them.
    """
    x = np.array(series, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    for j in range(x.shape[1]):
        col = x[:, j]
        miss = np.isnan(col)
        if not miss.any():
            continue
        if miss.all():
            if strict:
                raise GapError(f"column {j} is entirely missing")
            continue
        # run boundaries
        edges = np.flatnonzero(np.diff(np.concatenate([[0], miss.view(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            if stop - start > horizon:
                if strict:
                    raise GapError(f"column {j}: {stop - start}-minute gap at row {start} exceeds {horizon}")
                continue
            col[start:stop] = col[start - 1] if start > 0 else col[stop] if stop < len(col) else np.nan
    return x[:, 0] if squeeze else x


def segments(mask_ok) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs where ``mask_ok`` is true."""
    ok = np.asarray(mask_ok, dtype=bool)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], ok.view(np.int8), [0]])))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def assemble_temperature(frame: SensorFrame, horizon: int = IMPUTE_HORIZON) -> np.ndarray:
    """Per-minute mean over the non-missing tap temperatures, short gaps imputed."""
    temps = frame.temps
    counts = np.sum(~np.isnan(temps), axis=1)
    sums = np.nansum(temps, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return impute(mean, horizon, strict=True)


@dataclass
class DiscretizedSeries:
    l_window: int
    names: list[str]
    values: np.ndarray  # (steps, features) window means
    timestamps: np.ndarray  # window start minute

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names) -> "DiscretizedSeries":
        idx = [self.names.index(n) for n in names]
        return DiscretizedSeries(self.l_window, list(names), self.values[:, idx], self.timestamps)


def discretize(series, l_window: int = 10) -> np.ndarray:
    """Non-overlapping means of exactly ``l_window`` samples; the tail remainder is dropped."""
    x = np.asarray(series, dtype=float)
    if l_window < 1:
        raise ValueError("l_window must be >= 1")
    if x.shape[0] < l_window:
        raise ValueError(f"series of length {x.shape[0]} is shorter than one window ({l_window})")
    steps = x.shape[0] // l_window
    return x[: steps * l_window].reshape((steps, l_window) + x.shape[1:]).mean(axis=1)


@dataclass
class MinMaxScaler:
    names: list[str] = field(default_factory=list)
    data_min: np.ndarray | None = None
    data_max: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.data_min is not None

    def fit(self, x, names=None) -> "MinMaxScaler":
        """Fit on training rows. Constant columns are dropped from ``names``/bounds."""
        x = np.asarray(x, dtype=float)
        names = list(names) if names is not None else [str(i) for i in range(x.shape[1])]
        lo, hi = np.nanmin(x, axis=0), np.nanmax(x, axis=0)
        keep = hi > lo
        self.names = [n for n, k in zip(names, keep) if k]
        self.data_min, self.data_max = lo[keep], hi[keep]
        self.dropped = [n for n, k in zip(names, keep) if not k]
        return self

    def _cols(self, names):
        if not self.fitted:
            raise NotFittedError("scaler has not been fitted")
        if names is None:
            return slice(None)
        return [self.names.index(n) for n in names]

    def transform(self, x, names=None) -> np.ndarray:
        """(x - min) / (max - min); values beyond the training range map outside [0, 1]."""
        c = self._cols(names)
        lo, hi = self.data_min[c], self.data_max[c]
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def inverse_transform(self, z, names=None) -> np.ndarray:
        c = self._cols(names)
        lo, hi = self.data_min[c], self.data_max[c]
        return np.asarray(z, dtype=float) * (hi - lo) + lo

    def scale_of(self, name: str) -> float:
        i = self._cols([name])[0]
        return float(self.data_max[i] - self.data_min[i])

    def fingerprint(self, names=None) -> str:
        c = self._cols(names)
        h = hashlib.sha256()
        for n in (self.names if names is None else names):
            h.update(n.encode())
        h.update(np.ascontiguousarray(self.data_min[c]).tobytes())
        h.update(np.ascontiguousarray(self.data_max[c]).tobytes())
        return h.hexdigest()[:16]


@dataclass
class SampleSet:
    inputs: np.ndarray  # (N, 24, F)
    targets_all: np.ndarray  # (N, 5, F)
    targets_T: np.ndarray  # (N, 5)
    start: np.ndarray  # (N,) discrete index of each window's first row

    def __len__(self) -> int:
        return len(self.inputs)

    def take(self, idx) -> "SampleSet":
        return SampleSet(self.inputs[idx], self.targets_all[idx], self.targets_T[idx], self.start[idx])


def make_samples(values, temp_col: int = -1, in_steps: int = INPUT_STEPS, horizon: int = HORIZON,
                 offset: int = 0) -> SampleSet:
    """Stride-1 windows: rows [i, i+in_steps) as input, the next ``horizon`` rows as targets."""
    v = np.asarray(values, dtype=float)
    need = in_steps + horizon
    if v.shape[0] < need:
        raise ValueError(f"need at least {need} discrete steps, got {v.shape[0]}")
    n = v.shape[0] - need + 1
    win = np.lib.stride_tricks.sliding_window_view(v, need, axis=0)  # (n, F, need)
    win = np.moveaxis(win, -1, 1)
    inputs = np.ascontiguousarray(win[:, :in_steps])
    targets = np.ascontiguousarray(win[:, in_steps:])
    return SampleSet(inputs, targets, targets[:, :, temp_col].copy(), np.arange(n) + offset)


# full-frame pipeline ------------------------------------------------------------------------------


@dataclass
class PreprocessConfig:
    l_window: int = 10
    iqr_k: float = 5.0
    impute_horizon: int = IMPUTE_HORIZON
    train_ratio: float = 0.8
    iqr_channels: bool = True  # clip sensor channels too, not only tap temperatures
    iqr_skip: tuple[str, ...] = (PCI_CHANNEL,)


@dataclass
class Sidecar:
    """Frozen per-channel statistics (min/max for scaling, q1/q3 for clipping)."""

    rows: dict[str, tuple[float, float, float, float]]  # name -> (min, max, q1, q3)
    iqr_k: float = 5.0
    l_window: int = 10

    def bounds(self, name: str) -> IqrBounds | None:
        q1, q3 = self.rows[name][2:]
        if np.isnan(q1):
            return None
        return IqrBounds(q1, q3, self.iqr_k)

    def scaler(self, names) -> MinMaxScaler:
        sc = MinMaxScaler(list(names))
        sc.data_min = np.array([self.rows[n][0] for n in names])
        sc.data_max = np.array([self.rows[n][1] for n in names])
        sc.dropped = []
        return sc

    def dumps(self) -> str:
        lines = [f"# l_window={self.l_window} iqr_k={self.iqr_k!r}", "channel,min,max,q1,q3"]
        for name, vals in self.rows.items():
            lines.append(",".join([name, *(repr(float(v)) for v in vals)]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        cfgmod.atomic_write(path, self.dumps())

    @classmethod
    def load(cls, path) -> "Sidecar":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        meta = dict(kv.split("=") for kv in text[0].lstrip("# ").split())
        rows = {}
        for line in text[2:]:
            if line.strip():
                name, *vals = line.split(",")
                rows[name] = tuple(float(v) for v in vals)
        return cls(rows, float(meta["iqr_k"]), int(meta["l_window"]))


def fit_sidecar(frame: SensorFrame, cfg: PreprocessConfig, train_rows: int | None = None) -> Sidecar:
    """IQR quartiles on raw training minutes (taps per column); min/max on the discretized result."""
    n_train = train_rows if train_rows is not None else int(len(frame) * cfg.train_ratio)
    raw = frame.slice(0, n_train)
    rows: dict[str, list[float]] = {}
    for j, name in enumerate(raw.names):
        clip = cfg.iqr_channels and name not in cfg.iqr_skip
        if clip:
            b = IqrBounds.fit(raw.values[:, j], cfg.iqr_k)
            rows[name] = [np.nan, np.nan, b.q1, b.q3]
        else:
            rows[name] = [np.nan] * 4
    for k in range(4):
        b = IqrBounds.fit(raw.temps[:, k], cfg.iqr_k)
        rows[f"temp{k + 1}"] = [np.nan, np.nan, b.q1, b.q3]
    side = Sidecar({n: tuple(v) for n, v in rows.items()}, cfg.iqr_k, cfg.l_window)
    disc = apply_frame(raw, side, cfg)
    lo, hi = np.nanmin(disc.values, axis=0), np.nanmax(disc.values, axis=0)
    for i, name in enumerate(disc.names):
        prev = rows.get(name, [np.nan] * 4)
        rows[name] = [float(lo[i]), float(hi[i]), prev[2], prev[3]]
    side.rows = {n: tuple(v) for n, v in rows.items()}
    return side


def apply_frame(frame: SensorFrame, side: Sidecar, cfg: PreprocessConfig | None = None) -> DiscretizedSeries:
    """Clip with frozen bounds, assemble temperature, impute short gaps, window-average."""
    horizon = cfg.impute_horizon if cfg is not None else IMPUTE_HORIZON
    temps = np.empty_like(frame.temps)
    for k in range(4):
        b = side.bounds(f"temp{k + 1}")
        temps[:, k] = frame.temps[:, k] if b is None else iqr_correct(frame.temps[:, k], b)
    clipped = SensorFrame(frame.timestamps, frame.names, frame.values, temps)
    temperature = assemble_temperature(clipped, horizon)
    chans = np.empty_like(frame.values)
    for j, name in enumerate(frame.names):
        b = side.bounds(name) if name in side.rows else None
        chans[:, j] = frame.values[:, j] if b is None else iqr_correct(frame.values[:, j], b)
    chans = impute(chans, horizon, strict=True)
    full = np.column_stack([chans, temperature])
    disc = discretize(full, side.l_window)
    stamps = frame.timestamps[: disc.shape[0] * side.l_window : side.l_window]
    return DiscretizedSeries(side.l_window, list(frame.names) + [TEMPERATURE], disc, stamps)


def model_features(selected) -> list[str]:
    """The model's column order: selected sensors, then PCI, then temperature."""
    return list(selected) + [PCI_CHANNEL, TEMPERATURE]


def disc_to_csv(disc: DiscretizedSeries) -> str:
    from .dataio import minutes_to_iso

    out = ["timestamp," + ",".join(disc.names)]
    for t, row in zip(disc.timestamps, disc.values.tolist()):
        out.append(minutes_to_iso(t) + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def disc_from_csv(path, l_window: int) -> DiscretizedSeries:
    from .dataio import iso_to_minutes

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names = lines[0].split(",")[1:]
    stamps, vals = [], []
    for line in lines[1:]:
        if line:
            t, *rest = line.split(",")
            stamps.append(iso_to_minutes(t))
            vals.append([float(v) for v in rest])
    return DiscretizedSeries(l_window, names, np.array(vals).reshape(len(vals), len(names)), np.array(stamps, np.int64))
