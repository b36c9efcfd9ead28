"""Sensor-frame I/O, the synthetic blast-furnace plant, and PCI/RAR formulas."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod

TEMP_COLUMNS = ("temp1", "temp2", "temp3", "temp4")
PCI_CHANNEL = "pci"
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
# raw PCI (ton/hr) = PCI_RAW_LO + PCI_RAW_SPAN * u, u the normalized plant input
PCI_RAW_LO = 60.0
PCI_RAW_SPAN = 60.0


class ParseError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass
class SensorFrame:
    """Minute-cadence sensor log. Missing cells are NaN."""

    timestamps: np.ndarray  # int64 minutes since epoch
    names: list[str]
    values: np.ndarray  # (T, C)
    temps: np.ndarray  # (T, 4) tap-hole temperatures, degC

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.timestamps), len(self.names))
        self.temps = np.asarray(self.temps, dtype=float).reshape(len(self.timestamps), 4)
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) != 1):
            raise ValueError("timestamps must advance by exactly one minute")

    def __len__(self) -> int:
        return len(self.timestamps)

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def slice(self, start: int, stop: int) -> "SensorFrame":
        return SensorFrame(self.timestamps[start:stop], list(self.names), self.values[start:stop], self.temps[start:stop])

    def append(self, other: "SensorFrame") -> "SensorFrame":
        if other.names != self.names:
            raise ValueError("channel mismatch")
        return SensorFrame(np.concatenate([self.timestamps, other.timestamps]), list(self.names),
                           np.vstack([self.values, other.values]), np.vstack([self.temps, other.temps]))


def minutes_to_iso(minute: int) -> str:
    return (EPOCH + timedelta(minutes=int(minute))).strftime("%Y-%m-%dT%H:%M")


def iso_to_minutes(text: str) -> int:
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - EPOCH
    if delta.seconds % 60 or delta.microseconds:
        raise ValueError(f"timestamp {text!r} is not on a whole minute")
    return delta.days * 1440 + delta.seconds // 60


def _cell(raw: str) -> float:
    raw = raw.strip()
    if raw == "" or raw.lower() in ("null", "nan", "none"):
        return math.nan
    return float(raw)


def load_csv(path: str | Path) -> SensorFrame:
    """Read a sensor log. Cadence gaps become all-missing rows; zero temps count as missing."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "timestamp" or tuple(header[-4:]) != TEMP_COLUMNS:
            raise ParseError(f"{path}:1: header must be timestamp,<channels...>,temp1,temp2,temp3,temp4")
        names = header[1:-4]
        if len(set(names)) != len(names):
            raise ParseError(f"{path}:1: duplicate channel names")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = iso_to_minutes(row[0])
                vals = [_cell(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if stamps and t <= stamps[-1]:
                kind = "duplicate" if t == stamps[-1] else "out-of-order"
                raise ParseError(f"{path}:{lineno}: {kind} timestamp {row[0].strip()}")
            stamps.append(t)
            rows.append(vals)
    if not stamps:
        return SensorFrame(np.zeros(0, np.int64), names, np.zeros((0, len(names))), np.zeros((0, 4)))
    data = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    t0 = stamps[0]
    n = stamps[-1] - t0 + 1
    full = np.full((n, data.shape[1]), np.nan)
    full[np.asarray(stamps) - t0] = data
    temps = full[:, -4:]
    temps[temps == 0.0] = np.nan
    return SensorFrame(np.arange(t0, t0 + n), names, full[:, :-4], temps)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def frame_to_csv(frame: SensorFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *frame.names, *TEMP_COLUMNS])
    for t, vals, temps in zip(frame.timestamps, frame.values.tolist(), frame.temps.tolist()):
        w.writerow([minutes_to_iso(t), *map(_fmt, vals), *map(_fmt, temps)])
    return buf.getvalue()


def save_csv(frame: SensorFrame, path: str | Path) -> None:
    cfgmod.atomic_write(path, frame_to_csv(frame))


# synthetic plant ---------------------------------------------------------------------------------


@dataclass
class PlantConfig:
    """Synthetic furnace: first-order heat balance driven by delayed, saturating PCI response."""

    n_channels: int = 40
    pci_delay_steps: int = 150  # minutes
    response_gain: float = 40.0  # degC per unit normalized PCI (small-signal)
    saturation: float = 0.5
    time_constant: float = 5.0  # minutes
    base_temp: float = 1510.0
    pci_ref: float = 0.5
    noise_std: float = 2.0  # tap measurement noise, degC
    disturbance_std: float = 0.2  # per-minute innovation of the slow AR(1) disturbance, degC
    disturbance_phi: float = 0.995
    drift_amp: float = 6.0  # deterministic slow drift amplitude, degC
    channel_noise: float = 0.05
    informative_noise: float = 0.5  # slow AR noise on planted channels, so they are not near-duplicates
    informative: tuple[int, ...] = ()  # planted channel indices; empty -> drawn from seed
    n_informative: int = 5
    operator_hold_min: int = 60
    operator_hold_max: int = 240
    operator_lo: float = 0.15
    operator_hi: float = 0.85
    missing_rate: float = 0.002
    outlier_rate: float = 0.001
    start_minute: int = 27_767_520  # 2022-10-17T00:00
    seed: int = 0

    def validate(self) -> None:
        if not 120 <= self.pci_delay_steps <= 180:
            raise ValueError("pci_delay_steps must lie in [120, 180] minutes")
        if self.n_channels < 1:
            raise ValueError("n_channels must be positive")
        if min(self.noise_std, self.disturbance_std, self.channel_noise, self.informative_noise) < 0:
            raise ValueError("noise levels must be non-negative")
        if self.time_constant < 1:
            raise ValueError("time_constant must be >= 1 minute")
        if not 0 <= self.missing_rate < 1 or not 0 <= self.outlier_rate < 1:
            raise ValueError("missing_rate and outlier_rate must be in [0, 1)")
        if not 0 < self.operator_hold_min <= self.operator_hold_max:
            raise ValueError("operator hold range invalid")
        if any(not 0 <= i < self.n_channels for i in self.informative):
            raise ValueError("informative channel index out of range")
        if not self.informative and not 0 <= self.n_informative <= self.n_channels:
            raise ValueError("n_informative out of range")

    @property
    def channel_names(self) -> list[str]:
        return [PCI_CHANNEL] + [f"ch{i:02d}" for i in range(self.n_channels)]


def load_plant_config(path: str | Path) -> PlantConfig:
    return cfgmod.load(PlantConfig, path)


def pci_to_raw(u):
    return PCI_RAW_LO + PCI_RAW_SPAN * np.asarray(u, dtype=float)


def raw_to_pci(raw):
    return (np.asarray(raw, dtype=float) - PCI_RAW_LO) / PCI_RAW_SPAN


class Plant:
    """Stateful minute-by-minute simulator.

    Each random stream draws a fixed amount per minute, so advancing in chunks
    yields exactly the same trajectory as one long run.
    """

    def __init__(self, config: PlantConfig):
        config.validate()
        self.cfg = c = config
        ss = np.random.SeedSequence(c.seed)
        s_struct, s_op, s_dist, s_tap, s_chan, s_fault = ss.spawn(6)
        st = np.random.default_rng(s_struct)
        n = c.n_channels
        if c.informative:
            self.informative = tuple(int(i) for i in c.informative)
        else:
            self.informative = tuple(sorted(int(i) for i in st.choice(n, c.n_informative, replace=False)))
        k = len(self.informative)
        # informative channel = gain * transform(latent heat lagged) + offset
        self.inf_gain = st.uniform(0.6, 1.4, k) * np.where(st.random(k) < 0.75, -1.0, 1.0)
        self.inf_lag = st.integers(0, 61, k)
        self.inf_offset = st.uniform(-2, 2, k)
        self.inf_nonlinear = st.random(k) < 0.4
        self.noise_phi = st.uniform(0.95, 0.999, n)
        self.noise_offset = st.uniform(-2, 2, n)
        self.drift_period = (st.uniform(0.7, 1.1) * 1440, st.uniform(1.8, 2.8) * 1440)
        self.drift_phase = st.uniform(0, 2 * np.pi, 2)
        self._rng_op = np.random.default_rng(s_op)
        self._rng_dist = np.random.default_rng(s_dist)
        self._rng_tap = np.random.default_rng(s_tap)
        self._rng_chan = np.random.default_rng(s_chan)
        self._rng_fault = np.random.default_rng(s_fault)
        self.minute = 0
        self._op_level = self._rng_op.uniform(c.operator_lo, c.operator_hi)
        self._op_left = int(self._rng_op.integers(c.operator_hold_min, c.operator_hold_max + 1))
        self._u_hist = [self._op_level] * c.pci_delay_steps  # inputs not yet felt
        self._dist = 0.0
        self._noise_state = np.zeros(n)
        lag_max = int(self.inf_lag.max()) if k else 0
        self._heat_hist = [self._equilibrium(self._op_level, 0.0)] * (lag_max + 1)
        self._heat = self._heat_hist[-1]

    def _effect(self, u: float) -> float:
        s = self.cfg.saturation
        return self.cfg.response_gain * s * math.tanh((u - self.cfg.pci_ref) / s)

    def drift(self, minute: int) -> float:
        c = self.cfg
        p1, p2 = self.drift_period
        return c.drift_amp * (0.6 * math.sin(2 * math.pi * minute / p1 + self.drift_phase[0])
                              + 0.4 * math.sin(2 * math.pi * minute / p2 + self.drift_phase[1]))

    def _equilibrium(self, u: float, disturbance: float) -> float:
        return self.cfg.base_temp + self._effect(u) + disturbance

    def operator_input(self) -> float:
        """Next value of the built-in (uncontrolled) operator schedule; always advances the schedule."""
        c = self.cfg
        if self._op_left <= 0:
            self._op_level = self._rng_op.uniform(c.operator_lo, c.operator_hi)
            self._op_left = int(self._rng_op.integers(c.operator_hold_min, c.operator_hold_max + 1))
        self._op_left -= 1
        return self._op_level

    def step(self, u: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Advance one minute with normalized PCI ``u`` (operator schedule when None)."""
        c = self.cfg
        op = self.operator_input()
        u = op if u is None else float(u)
        self._u_hist.append(u)
        felt = self._u_hist.pop(0)
        self._dist = c.disturbance_phi * self._dist + c.disturbance_std * self._rng_dist.standard_normal()
        target = self._equilibrium(felt, self._dist + self.drift(self.minute))
        self._heat += (target - self._heat) / c.time_constant
        self._heat_hist.append(self._heat)
        self._heat_hist.pop(0)

        n = c.n_channels
        eps = self._rng_chan.standard_normal(n)
        self._noise_state = self.noise_phi * self._noise_state + np.sqrt(1 - self.noise_phi**2) * eps
        chans = self._noise_state + self.noise_offset
        inf_eps = self._rng_chan.standard_normal(len(self.informative))
        for j, ch in enumerate(self.informative):
            lagged = self._heat_hist[-1 - int(self.inf_lag[j])]
            z = (lagged - c.base_temp) / 10.0
            if self.inf_nonlinear[j]:
                z = math.tanh(z)
            chans[ch] = (self.inf_gain[j] * z + self.inf_offset[j] + c.informative_noise * self._noise_state[ch]
                         + c.channel_noise * inf_eps[j])

        taps = self._heat + c.noise_std * self._rng_tap.standard_normal(4)
        fault = self._rng_fault.random((2, 4))
        mag = self._rng_fault.uniform(150.0, 250.0, 4)
        taps = np.where(fault[0] < c.outlier_rate, taps - mag, taps)
        taps = np.where(fault[1] < c.missing_rate, np.nan, taps)
        self.minute += 1
        return np.concatenate([[pci_to_raw(u)], chans]), taps

    @property
    def heat(self) -> float:
        return self._heat

    def run(self, minutes: int, inputs=None) -> SensorFrame:
        """Advance ``minutes`` steps; ``inputs`` is an optional per-minute normalized PCI sequence."""
        start = self.minute
        vals = np.empty((minutes, self.cfg.n_channels + 1))
        temps = np.empty((minutes, 4))
        for i in range(minutes):
            vals[i], temps[i] = self.step(None if inputs is None else inputs[i])
        stamps = self.cfg.start_minute + np.arange(start, start + minutes)
        return SensorFrame(stamps, self.cfg.channel_names, vals, temps)


def generate_plant(config: PlantConfig, minutes: int) -> SensorFrame:
    """Uncontrolled plant log of ``minutes`` one-minute rows (operator-driven PCI)."""
    config.validate()
    if minutes <= config.pci_delay_steps:
        raise ValueError("minutes must exceed pci_delay_steps")
    return Plant(config).run(minutes)


def xcorr_lag(x, y, max_lag: int, difference: bool = True) -> int:
    """Lag ``k >= 0`` maximizing |corr(x[t], y[t+k])|; differencing whitens step-like inputs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if difference:
        x, y = np.diff(x), np.diff(y)
    best, best_k = -1.0, 0
    for k in range(max_lag + 1):
        a, b = x[: len(x) - k], y[k:]
        sa, sb = a.std(), b.std()
        if sa == 0 or sb == 0:
            continue
        r = abs(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
        if r > best:
            best, best_k = r, k
    return best_k


# domain formulas ----------------------------------------------------------------------------------


@dataclass
class ReductantInputs:
    R_c: float = 0.0  # corrected reductant rate
    R_d: float = 0.0  # dropped coal rate
    P: float = 0.0  # hot-metal production
    PCI_total: float = 0.0
    P_real: float = 0.0
    C_c: float = 0.0
    C_pb: float = 0.0


def pci_rate(r: ReductantInputs) -> float:
    """PCI (ton/hr) = R_c - R_d * P * 1000 / 24."""
    vals = (r.R_c, r.R_d, r.P)
    if not all(math.isfinite(v) for v in vals):
        raise DomainError("pci_rate inputs must be finite")
    return r.R_c - r.R_d * r.P * 1000.0 / 24.0


def rar(r: ReductantInputs) -> float:
    """Total reductant ratio: (PCI_total / P_real * 24 + C_c / C_pb) * 1000."""
    if r.P_real == 0 or r.C_pb == 0:
        raise DomainError("rar needs non-zero P_real and C_pb")
    if min(r.PCI_total, r.P_real, r.C_c, r.C_pb) < 0:
        raise DomainError("rar inputs must be non-negative")
    return (r.PCI_total / r.P_real * 24.0 + r.C_c / r.C_pb) * 1000.0
