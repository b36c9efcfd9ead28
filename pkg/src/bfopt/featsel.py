"""Least-squares gradient boosting on regression trees, used to rank sensors by importance."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegressionTree:
    # parallel node arrays; leaves have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray  # SSE decrease of each split (0 for leaves)
    max_depth: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.max_depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[np.arange(len(X)), np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]


def _best_split(X, r, idx, order, min_leaf):
    """Exact greedy split over all features for the samples in ``idx``.

    Returns (gain, feature, threshold, left_idx, right_idx) or None.  Ties go
    to the lowest feature index, then the lowest threshold.
    """
    n = len(idx)
    if n < 2 * min_leaf:
        return None
    member = np.zeros(X.shape[0], dtype=bool)
    member[idx] = True
    rows = order[member[order]].reshape(order.shape[0], n)  # (F, n) sample ids sorted per feature
    xs = np.take_along_axis(X.T, rows, axis=1)
    rs = r[rows]
    csum = np.cumsum(rs, axis=1)[:, :-1]
    total = rs[0].sum()
    n_left = np.arange(1, n)
    n_right = n - n_left
    gain = csum**2 / n_left + (total - csum) ** 2 / n_right - total**2 / n
    valid = xs[:, :-1] < xs[:, 1:]
    valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, pos = divmod(flat, n - 1)
    best = gain[f, pos]
    if not np.isfinite(best) or best <= 1e-12 * max(1.0, total**2 / n):
        return None
    thr = 0.5 * (xs[f, pos] + xs[f, pos + 1])
    return float(best), int(f), float(thr), rows[f, : pos + 1], rows[f, pos + 1 :]


def fit_tree(X, r, max_depth: int = 3, min_leaf: int = 1, order=None) -> RegressionTree:
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    if order is None:
        order = np.argsort(X, axis=0, kind="stable").T
    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node(ids):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(r[ids].mean()))
        gain.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(len(r)))
    frontier = [(root, np.arange(len(r)), 0)]
    while frontier:
        node, ids, depth = frontier.pop(0)
        if depth >= max_depth:
            continue
        split = _best_split(X, r, ids, order, min_leaf)
        if split is None:
            continue
        g, f, thr, li, ri = split
        feature[node], threshold[node], gain[node] = f, thr, g
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        frontier += [(ln, li, depth + 1), (rn, ri, depth + 1)]
    return RegressionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                          np.array(value), np.array(gain), max_depth)


@dataclass
class GbModel:
    init: float
    shrinkage: float
    n_features: int
    trees: list[RegressionTree] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        out = np.full(len(X), self.init)
        for t in self.trees:
            out += self.shrinkage * t.predict(X)
        return out


def fit_gb(X, y, rounds: int = 100, depth: int = 3, shrinkage: float = 0.1, min_leaf: int = 1) -> GbModel:
    """Squared-loss boosting: each round fits a depth-limited tree to the residuals."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, features) with len(y) == n")
    if len(y) < 2:
        raise ValueError("need at least two samples")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("missing values are not allowed")
    model = GbModel(float(y.mean()), shrinkage, X.shape[1])
    pred = np.full(len(y), model.init)
    model.train_loss.append(float(np.mean((y - pred) ** 2)))
    if np.all(y == y[0]):
        return model
    order = np.argsort(X, axis=0, kind="stable").T
    for _ in range(rounds):
        tree = fit_tree(X, y - pred, depth, min_leaf, order)
        if tree.feature[0] < 0:
            break
        model.trees.append(tree)
        pred += shrinkage * tree.predict(X)
        model.train_loss.append(float(np.mean((y - pred) ** 2)))
    return model


@dataclass
class ImportanceReport:
    names: list[str]
    scores: np.ndarray  # sum to 100 (all zero for a tree-less model)
    corr: np.ndarray

    @property
    def ranking(self) -> list[int]:
        # stable sort on -score keeps lowest index first among ties
        return list(np.argsort(-self.scores, kind="stable"))

    @property
    def ranks(self) -> np.ndarray:
        out = np.empty(len(self.names), dtype=int)
        out[self.ranking] = np.arange(1, len(self.names) + 1)
        return out

    def top(self, n: int) -> list[str]:
        return [self.names[i] for i in self.ranking[:n]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "influence", "corr", "rank"])
        ranks = self.ranks
        for i in self.ranking:
            w.writerow([self.names[i], f"{self.scores[i]:.6f}", f"{self.corr[i]:.6f}", int(ranks[i])])
        return buf.getvalue()


def pearson(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    den = np.sqrt((xc**2).sum(axis=0) * (yc**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, xc.T @ yc / np.where(den > 0, den, 1.0), 0.0)


def importance(model: GbModel, names=None, X=None, reference=None) -> ImportanceReport:
    """Total split gain per feature over all trees, normalized to sum 100.

    ``X``/``reference`` (e.g. the temperature series) fill the correlation column.
    """
    if model is None or not isinstance(model, GbModel):
        raise ValueError("importance needs a fitted GbModel")
    tot = np.zeros(model.n_features)
    for t in model.trees:
        internal = t.feature >= 0
        np.add.at(tot, t.feature[internal], t.gain[internal])
    s = tot.sum()
    scores = 100.0 * tot / s if s > 0 else tot
    names = list(names) if names is not None else [f"x{i}" for i in range(model.n_features)]
    corr = pearson(X, reference) if X is not None and reference is not None else np.zeros(model.n_features)
    return ImportanceReport(names, scores, corr)


def select_features(report_T: ImportanceReport, report_PCI: ImportanceReport, n_T: int = 19, n_PCI: int = 6,
                    total: int | None = None) -> list[str]:
    """Top ``n_T`` by temperature importance, then top ``n_PCI`` by PCI importance not already
    taken, padded from the temperature ranking up to ``total`` (default n_T + n_PCI)."""
    total = n_T + n_PCI if total is None else total
    if set(report_T.names) != set(report_PCI.names):
        raise ValueError("reports cover different feature sets")
    if len(report_T.names) < total:
        raise ValueError(f"only {len(report_T.names)} distinct features available, need {total}")
    chosen: list[str] = []
    for name in report_T.top(n_T) + report_PCI.top(n_PCI):
        if name not in chosen:
            chosen.append(name)
    for name in report_T.top(len(report_T.names)):
        if len(chosen) >= total:
            break
        if name not in chosen:
            chosen.append(name)
    return chosen[:total]
