"""Exact state-vector simulation of the QDI (quantum depth-infused) layer.

Qubit ordering is little-endian: qubit ``q`` is bit ``q`` of the amplitude
index.  States are complex arrays of shape ``(..., 2**n)``; leading axes are
a batch of independent circuits.

The QDI circuit re-uploads data: each of ``depth`` blocks applies
``Rx(x[6k+q])`` then ``Ry(theta[6k+q])`` on every qubit ``q`` and finishes
with a CNOT ring ``q -> q+1 (mod n)``.  The readout is ``<Z_q>`` per qubit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad

N_QUBITS = 6
DEPTH = 4
NORM_TOL = 1e-8


@dataclass(frozen=True)
class QdiCircuitSpec:
    n_qubits: int = N_QUBITS
    depth: int = DEPTH

    @property
    def n_inputs(self) -> int:
        return self.depth * self.n_qubits

    @property
    def n_angles(self) -> int:
        return self.depth * self.n_qubits

    @property
    def n_outputs(self) -> int:
        return self.n_qubits


def zero_state(n_qubits: int = N_QUBITS, batch: tuple[int, ...] = ()) -> np.ndarray:
    psi = np.zeros(batch + (2**n_qubits,), dtype=np.complex128)
    psi[..., 0] = 1.0
    return psi


def _n_qubits(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n:
        raise ValueError(f"state length {dim} is not a power of two")
    return n


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise ValueError(f"qubit index {q} out of range for {n} qubits")


def rx_matrix(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c + 0j, -1j * s], -1), np.stack([-1j * s, c + 0j], -1)], -2)


def ry_matrix(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(np.complex128)


def _drx_matrix(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return 0.5 * np.stack([np.stack([-s + 0j, -1j * c], -1), np.stack([-1j * c, -s + 0j], -1)], -2)


def _dry_matrix(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return 0.5 * np.stack([np.stack([-s, -c], -1), np.stack([c, -s], -1)], -2).astype(np.complex128)


def apply_1q(state: np.ndarray, qubit: int, mat: np.ndarray) -> np.ndarray:
    """Apply a 2x2 matrix (or a batch of them, shape ``batch + (2, 2)``) to one qubit."""
    n = _n_qubits(state)
    _check_qubit(qubit, n)
    batch = state.shape[:-1]
    v = state.reshape(batch + (2 ** (n - 1 - qubit), 2, 2**qubit))
    a0, a1 = v[..., 0, :], v[..., 1, :]
    m = np.asarray(mat)
    if m.ndim > 2:
        m = m[..., None, None, :, :]
    out = np.empty_like(v)
    out[..., 0, :] = m[..., 0, 0] * a0 + m[..., 0, 1] * a1
    out[..., 1, :] = m[..., 1, 0] * a0 + m[..., 1, 1] * a1
    return out.reshape(state.shape)


def apply_rx(state: np.ndarray, qubit: int, theta) -> np.ndarray:
    return apply_1q(state, qubit, rx_matrix(theta))


def apply_ry(state: np.ndarray, qubit: int, theta) -> np.ndarray:
    return apply_1q(state, qubit, ry_matrix(theta))


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.where((idx >> control) & 1, idx ^ (1 << target), idx)


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    n = _n_qubits(state)
    _check_qubit(control, n)
    _check_qubit(target, n)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    return state[..., _cnot_perm(n, control, target)]


@lru_cache(maxsize=None)
def _ring_perm(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index permutation of the whole CNOT ring and its inverse."""
    perm = np.arange(2**n)
    for q in range(n):
        perm = perm[_cnot_perm(n, q, (q + 1) % n)]
    return perm, np.argsort(perm)


@lru_cache(maxsize=None)
def _z_signs(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.stack([1.0 - 2.0 * ((idx >> q) & 1) for q in range(n)])  # (n, 2**n)


def expectation_z(state: np.ndarray, qubit: int | None = None) -> np.ndarray:
    """<Z_qubit>, or all qubits stacked on the last axis when ``qubit`` is None."""
    n = _n_qubits(state)
    probs = np.abs(state) ** 2
    if np.any(np.abs(probs.sum(-1) - 1.0) > NORM_TOL):
        raise ValueError("state is not normalized")
    if qubit is None:
        return probs @ _z_signs(n).T
    _check_qubit(qubit, n)
    return probs @ _z_signs(n)[qubit]


def _check_lengths(inputs: np.ndarray, angles: np.ndarray, spec: QdiCircuitSpec) -> None:
    if inputs.shape[-1] != spec.n_inputs or angles.shape[-1] != spec.n_angles:
        raise ValueError(
            f"QDI expects {spec.n_inputs} inputs and {spec.n_angles} angles, "
            f"got {inputs.shape[-1]} and {angles.shape[-1]}"
        )


def qdi_state(inputs, angles, spec: QdiCircuitSpec = QdiCircuitSpec()) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    angles = np.asarray(angles, dtype=float)
    _check_lengths(inputs, angles, spec)
    n = spec.n_qubits
    batch = np.broadcast_shapes(inputs.shape[:-1], angles.shape[:-1])
    psi = zero_state(n, batch)
    ring, _ = _ring_perm(n)
    rx, ry = rx_matrix(inputs), ry_matrix(angles)
    for k in range(spec.depth):
        for q in range(n):
            psi = apply_1q(psi, q, rx[..., k * n + q, :, :])
        for q in range(n):
            psi = apply_1q(psi, q, ry[..., k * n + q, :, :])
        psi = psi[..., ring]
    return psi


def qdi_forward(inputs, angles, spec: QdiCircuitSpec = QdiCircuitSpec()) -> np.ndarray:
    """Run the QDI circuit from |0...0> and return the per-qubit Z expectations."""
    return expectation_z(qdi_state(inputs, angles, spec))


def qdi_gradients(inputs, angles, spec: QdiCircuitSpec = QdiCircuitSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift Jacobians ``(d out/d angles, d out/d inputs)``, each ``batch + (n_outputs, 24)``.

    Every input and angle drives exactly one Pauli rotation, so the two-term
    shift rule with shift pi/2 is exact for both.
    """
    inputs = np.asarray(inputs, dtype=float)
    angles = np.asarray(angles, dtype=float)
    _check_lengths(inputs, angles, spec)
    batch = np.broadcast_shapes(inputs.shape[:-1], angles.shape[:-1])
    x = np.broadcast_to(inputs, batch + (spec.n_inputs,))
    th = np.broadcast_to(angles, batch + (spec.n_angles,))
    p = spec.n_angles
    shifts = np.concatenate([np.eye(p), -np.eye(p)]) * (np.pi / 2)  # (2p, p)

    def jac(shift_inputs: bool) -> np.ndarray:
        xs = x[..., None, :] + (shifts if shift_inputs else 0.0)
        ts = th[..., None, :] + (0.0 if shift_inputs else shifts)
        out = qdi_forward(xs, ts, spec)  # batch + (2p, n_out)
        g = 0.5 * (out[..., :p, :] - out[..., p:, :])
        return np.swapaxes(g, -1, -2)

    return jac(False), jac(True)


def qdi_vjp(inputs, angles, upstream, spec: QdiCircuitSpec = QdiCircuitSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint-method vector-Jacobian product.

    ``upstream`` has shape ``batch + (n_outputs,)``.  Returns the gradient of
    ``sum(upstream * outputs)`` w.r.t. inputs (per batch element) and angles
    (summed over the batch when angles are shared).
    """
    inputs = np.asarray(inputs, dtype=float)
    angles = np.asarray(angles, dtype=float)
    _check_lengths(inputs, angles, spec)
    n = spec.n_qubits
    psi = qdi_state(inputs, angles, spec)
    lam = psi * (np.asarray(upstream, dtype=float) @ _z_signs(n))
    _, ring_inv = _ring_perm(n)
    batch = psi.shape[:-1]
    g_in = np.zeros(batch + (spec.n_inputs,))
    g_th = np.zeros(batch + (spec.n_angles,))
    gates = []
    for k in range(spec.depth):
        gates += [("x", k * n + q, q) for q in range(n)]
        gates += [("y", k * n + q, q) for q in range(n)]
        gates.append(("ring", None, None))
    for kind, slot, q in reversed(gates):
        if kind == "ring":
            psi = psi[..., ring_inv]
            lam = lam[..., ring_inv]
            continue
        if kind == "x":
            t = inputs[..., slot]
            u, du, dest = rx_matrix(t), _drx_matrix(t), g_in
        else:
            t = angles[..., slot]
            u, du, dest = ry_matrix(t), _dry_matrix(t), g_th
        u_dag = np.conj(np.swapaxes(u, -1, -2))
        psi = apply_1q(psi, q, u_dag)
        mu = apply_1q(psi, q, du)
        dest[..., slot] = 2.0 * np.real(np.sum(np.conj(lam) * mu, axis=-1))
        lam = apply_1q(lam, q, u_dag)
    if angles.ndim == 1 and g_th.ndim > 1:
        g_th = g_th.reshape(-1, spec.n_angles).sum(axis=0)
    return g_in, g_th


def qdi_layer(x: ad.Tensor, angles: ad.Tensor, spec: QdiCircuitSpec = QdiCircuitSpec(),
              method: str = "adjoint") -> ad.Tensor:
    """QDI circuit as an autodiff node. ``method`` selects adjoint or parameter-shift gradients."""
    xv, tv = x.data, angles.data
    out = qdi_forward(xv, tv, spec)

    def _bw(g):
        if method == "adjoint":
            return qdi_vjp(xv, tv, g, spec)
        if method == "parameter-shift":
            j_th, j_in = qdi_gradients(xv, tv, spec)
            g_in = np.einsum("...o,...oi->...i", g, j_in)
            g_th = np.einsum("...o,...oi->...i", g, j_th)
            if tv.ndim == 1 and g_th.ndim > 1:
                g_th = g_th.reshape(-1, spec.n_angles).sum(axis=0)
            return g_in, g_th
        raise ValueError(f"unknown gradient method {method!r}")

    return ad.custom((x, angles), out, _bw, op="qdi")
