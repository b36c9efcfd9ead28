"""Glue between stages: raw frame -> discretized series -> selected, scaled samples."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import featsel
from .dataio import PCI_CHANNEL, SensorFrame
from .preprocess import (TEMPERATURE, DiscretizedSeries, MinMaxScaler, PreprocessConfig, SampleSet, Sidecar,
                         apply_frame, fit_sidecar, make_samples, model_features)


@dataclass
class FeatselConfig:
    n_T: int = 19
    n_PCI: int = 6
    rounds: int = 100
    depth: int = 3
    shrinkage: float = 0.1


@dataclass
class Selection:
    report_T: featsel.ImportanceReport
    report_PCI: featsel.ImportanceReport
    selected: list[str] = field(default_factory=list)

    @property
    def features(self) -> list[str]:
        return model_features(self.selected)


def train_rows(n: int, ratio: float) -> int:
    return int(n * ratio)


def select_features(disc: DiscretizedSeries, cfg: FeatselConfig, ratio: float = 0.8) -> Selection:
    """Fit temperature- and PCI-targeted boosting on the training rows and merge their rankings."""
    n = train_rows(len(disc.values), ratio)
    cand = [c for c in disc.names if c not in (PCI_CHANNEL, TEMPERATURE)]
    X = disc.select(cand).values[:n]
    keep = [c for c, lo, hi in zip(cand, X.min(axis=0), X.max(axis=0)) if hi > lo]
    X = disc.select(keep).values[:n]
    temp = disc.column(TEMPERATURE)[:n]
    pci = disc.column(PCI_CHANNEL)[:n]
    gb_T = featsel.fit_gb(X, temp, cfg.rounds, cfg.depth, cfg.shrinkage)
    gb_P = featsel.fit_gb(X, pci, cfg.rounds, cfg.depth, cfg.shrinkage)
    rep_T = featsel.importance(gb_T, keep, X, temp)
    rep_P = featsel.importance(gb_P, keep, X, temp)
    return Selection(rep_T, rep_P, featsel.select_features(rep_T, rep_P, cfg.n_T, cfg.n_PCI))


def scaled_matrix(disc: DiscretizedSeries, side: Sidecar, features: list[str]) -> tuple[np.ndarray, MinMaxScaler]:
    scaler = side.scaler(features)
    return scaler.transform(disc.select(features).values), scaler


@dataclass
class Dataset:
    side: Sidecar
    disc: DiscretizedSeries
    selection: Selection
    scaler: MinMaxScaler
    values: np.ndarray  # scaled (steps, 27)
    samples: SampleSet

    @property
    def features(self) -> list[str]:
        return self.selection.features

    @property
    def temp_scale(self) -> float:
        return self.scaler.scale_of(TEMPERATURE)


def prepare(frame: SensorFrame, pcfg: PreprocessConfig, fcfg: FeatselConfig,
            side: Sidecar | None = None, selected: list[str] | None = None) -> Dataset:
    side = side or fit_sidecar(frame, pcfg)
    disc = apply_frame(frame, side, pcfg)
    if selected is None:
        selection = select_features(disc, fcfg, pcfg.train_ratio)
    else:
        empty = featsel.ImportanceReport([], np.zeros(0), np.zeros(0))
        selection = Selection(empty, empty, list(selected))
    values, scaler = scaled_matrix(disc, side, selection.features)
    return Dataset(side, disc, selection, scaler, values, make_samples(values))
