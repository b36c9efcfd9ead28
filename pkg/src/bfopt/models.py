"""LSTM forecasters (classical / QDI-hybrid temperature model, all-feature model) and the linear
policy model, built on :mod:`bfopt.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from .qsim import QdiCircuitSpec, qdi_layer

N_FEATURES = 27
INPUT_STEPS = 24
HORIZON = 5


@dataclass
class ModelSpec:
    kind: str = "mt-classical"  # mt-classical | mt-hybrid | mall | moptim
    n_features: int = N_FEATURES
    hidden: int = 143
    steps: int = INPUT_STEPS
    horizon: int = HORIZON
    qdi_qubits: int = 6
    qdi_depth: int = 4
    qdi_grad: str = "adjoint"  # adjoint | parameter-shift
    seed: int = 0

    @classmethod
    def default(cls, kind: str, **kw) -> "ModelSpec":
        hidden = {"mt-classical": 143, "mt-hybrid": 143, "mall": 256, "moptim": 0}[kind]
        return cls(kind=kind, hidden=kw.pop("hidden", hidden), **kw)


class Model:
    """Named float64 parameter store plus a forward function."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: dict[str, ad.Tensor] = {}
        self._rng = np.random.default_rng(spec.seed)

    def _uniform(self, name: str, shape, k: float) -> None:
        self.params[name] = ad.Tensor(self._rng.uniform(-k, k, size=shape), requires_grad=True)

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def n_params(self, prefix: str = "") -> int:
        return int(sum(p.size for n, p in self.params.items() if n.startswith(prefix)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} values, got {vec.size}")
        i = 0
        for p in self.params.values():
            p.data[...] = vec[i : i + p.size].reshape(p.shape)
            i += p.size

    def frozen(self) -> "Model":
        """Shallow copy whose parameters do not require grad (data shared, read-only use)."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = {n: ad.Tensor(p.data) for n, p in self.params.items()}
        return clone

    def __call__(self, x):
        return self.forward(ad.as_tensor(x))

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        return self.frozen()(np.asarray(x, dtype=float)).data

    # persistence: flat little-endian float64 vector + text manifest
    def save(self, directory, extra: dict[str, str] | None = None) -> None:
        directory = Path(directory)
        cfgmod.atomic_write(directory / "params.bin", self.flat().astype("<f8").tobytes())
        lines = [cfgmod.dumps(self.spec).rstrip("\n")]
        for k, v in (extra or {}).items():
            lines.append(f"meta.{k} = {v}")
        for n, p in self.params.items():
            lines.append(f"param.{n} = {','.join(map(str, p.shape)) or 'scalar'}")
        cfgmod.atomic_write(directory / "manifest.txt", "\n".join(lines) + "\n")


class LstmCell:
    """Single-layer LSTM without peepholes; gate order input, forget, candidate, output.

    One fused weight ``W`` of shape (features + hidden, 4*hidden) and one bias,
    so the parameter count is 4*(H*F + H*H + H).
    """

    def __init__(self, model: Model, prefix: str, n_in: int, hidden: int):
        k = 1.0 / np.sqrt(hidden)
        model._uniform(f"{prefix}.W", (n_in + hidden, 4 * hidden), k)
        model._uniform(f"{prefix}.b", (4 * hidden,), k)
        self.model, self.prefix, self.n_in, self.hidden = model, prefix, n_in, hidden

    def __call__(self, seq: ad.Tensor) -> ad.Tensor:
        return lstm_forward(seq, self.model.params[f"{self.prefix}.W"], self.model.params[f"{self.prefix}.b"],
                            self.hidden)


def lstm_forward(seq: ad.Tensor, W: ad.Tensor, b: ad.Tensor, hidden: int) -> ad.Tensor:
    """Final hidden state for ``seq`` of shape (batch, steps, features); zero initial state."""
    if seq.data.ndim != 3 or W.shape[0] != seq.shape[2] + hidden:
        raise ad.ShapeError(f"lstm_forward: sequence {seq.shape} incompatible with weights {W.shape}")
    batch, steps, _ = seq.shape
    H = hidden
    h = ad.Tensor(np.zeros((batch, H)))
    c = ad.Tensor(np.zeros((batch, H)))
    for t in range(steps):
        z = ad.concat([seq[:, t, :], h], axis=1) @ W + b
        i = ad.sigmoid(z[:, :H])
        f = ad.sigmoid(z[:, H : 2 * H])
        g = ad.tanh(z[:, 2 * H : 3 * H])
        o = ad.sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * ad.tanh(c)
    return h


def _dense(model: Model, name: str, n_in: int, n_out: int) -> None:
    k = 1.0 / np.sqrt(n_in)
    model._uniform(f"{name}.W", (n_in, n_out), k)
    model._uniform(f"{name}.b", (n_out,), k)


def _apply_dense(model: Model, name: str, x: ad.Tensor) -> ad.Tensor:
    return x @ model.params[f"{name}.W"] + model.params[f"{name}.b"]


def _check_seq(x: ad.Tensor, spec: ModelSpec) -> ad.Tensor:
    if x.data.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    if x.data.ndim != 3 or x.shape[1:] != (spec.steps, spec.n_features):
        raise ad.ShapeError(f"expected (batch, {spec.steps}, {spec.n_features}) input, got {x.shape}")
    return x


class TemperatureModel(Model):
    """M_T: LSTM -> dense -> 5 temperatures (classical), or
    LSTM -> dense(H->24) -> QDI(24->6) -> dense(6->5) (hybrid)."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.lstm = LstmCell(self, "lstm", spec.n_features, spec.hidden)
        if spec.kind == "mt-classical":
            _dense(self, "head", spec.hidden, spec.horizon)
        elif spec.kind == "mt-hybrid":
            self.qdi = QdiCircuitSpec(spec.qdi_qubits, spec.qdi_depth)
            _dense(self, "head.pre", spec.hidden, self.qdi.n_inputs)
            self.params["head.qdi"] = ad.Tensor(self._rng.uniform(-0.1, 0.1, self.qdi.n_angles), requires_grad=True)
            _dense(self, "head.post", self.qdi.n_outputs, spec.horizon)
        else:
            raise ValueError(f"not a temperature model kind: {spec.kind}")

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        x = _check_seq(x, self.spec)
        h = self.lstm(x)
        if self.spec.kind == "mt-classical":
            return _apply_dense(self, "head", h)
        q = qdi_layer(_apply_dense(self, "head.pre", h), self.params["head.qdi"], self.qdi, self.spec.qdi_grad)
        return _apply_dense(self, "head.post", q)


class AllFeatureModel(Model):
    """M_all: LSTM(H_all) -> dense(H_all -> 5*27) reshaped to (5, 27)."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.lstm = LstmCell(self, "lstm", spec.n_features, spec.hidden)
        _dense(self, "head", spec.hidden, spec.horizon * spec.n_features)

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        x = _check_seq(x, self.spec)
        out = _apply_dense(self, "head", self.lstm(x))
        return ad.reshape(out, (x.shape[0], self.spec.horizon, self.spec.n_features))


class PolicyModel(Model):
    """M_optim: one affine map from the flattened (steps + horizon) x features stack to
    ``horizon`` PCI values; no nonlinearity."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.n_in = (spec.steps + spec.horizon) * spec.n_features
        _dense(self, "linear", self.n_in, spec.horizon)

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        rows = self.spec.steps + self.spec.horizon
        if x.shape[-2:] != (rows, self.spec.n_features):
            raise ad.ShapeError(f"expected ({rows}, {self.spec.n_features}) stack, got {x.shape}")
        flat = ad.reshape(x, x.shape[:-2] + (self.n_in,))
        return _apply_dense(self, "linear", flat)


def build(spec: ModelSpec) -> Model:
    if spec.kind in ("mt-classical", "mt-hybrid"):
        return TemperatureModel(spec)
    if spec.kind == "mall":
        return AllFeatureModel(spec)
    if spec.kind == "moptim":
        return PolicyModel(spec)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def load(directory) -> tuple[Model, dict[str, str]]:
    directory = Path(directory)
    kv = cfgmod.parse_kv((directory / "manifest.txt").read_text(encoding="utf-8"))
    meta = {k[5:]: v for k, v in kv.items() if k.startswith("meta.")}
    shapes = {k[6:]: v for k, v in kv.items() if k.startswith("param.")}
    spec = cfgmod.from_flat(ModelSpec, {k: v for k, v in kv.items() if not k.startswith(("meta.", "param."))})
    model = build(spec)
    if list(shapes) != list(model.params):
        raise ValueError(f"{directory}: parameter manifest does not match model kind {spec.kind}")
    vec = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8")
    model.set_flat(vec.astype(np.float64))
    return model, meta


def head_param_count(model: Model) -> int:
    return model.n_params("head")
