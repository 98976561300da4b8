"""Variational quantum classifiers.

``VqcModel``
    Angle encoding (one RY(x_i) per qubit) followed by ``num_layers`` blocks of
    per-qubit RY rotations and a CX ring, then a closing RY layer. Class ``c``
    collects the probability of every basis index ``b`` with ``b % C == c``.

``QcnnModel``
    Angle encoding followed by log2(n) convolution/pooling stages. Each stage
    pairs up neighbouring active qubits, applies RY, RY, CX and an RZ on the
    kept qubit, then drops the second qubit of each pair. The last remaining
    qubit is read out: class 0 if <Z> >= 0, class 1 otherwise.

Both models evaluate a whole dataset in one batched state-vector pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import quantum as qc
from .dataset import LabeledDataset
from .optimize import ObjectiveTrace, OptimizerConfig, minimize
from .quantum import Gate, GateKind

LOG_EPS = 1e-12
TIE_TOL = 1e-12

# (kind, targets, parameter index or None)
_Op = tuple[GateKind, tuple[int, ...], Union[int, None]]


class ModelError(ValueError):
    pass


def _as_params(params, expected: int) -> np.ndarray:
    arr = np.array(params, dtype=float).reshape(-1)
    if arr.size != expected:
        raise ModelError(f"expected {expected} parameters, got {arr.size}")
    arr.flags.writeable = False
    return arr


def ring_pairs(n: int) -> list[tuple[int, int]]:
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


@dataclass(frozen=True, eq=False)
class VqcModel:
    num_qubits: int
    num_layers: int = 1
    num_classes: int = 2
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.num_qubits < 1 or self.num_qubits > qc.MAX_QUBITS:
            raise ModelError(f"num_qubits must be in [1, {qc.MAX_QUBITS}], got {self.num_qubits}")
        if self.num_layers < 1:
            raise ModelError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_classes < 2 or self.num_classes > 2**self.num_qubits:
            raise ModelError(
                f"num_classes must be in [2, 2**num_qubits = {2**self.num_qubits}], got {self.num_classes}"
            )
        raw = np.zeros(self.num_params) if self.params is None else self.params
        object.__setattr__(self, "params", _as_params(raw, self.num_params))

    @property
    def num_params(self) -> int:
        return self.num_qubits * (self.num_layers + 1)

    def with_params(self, params) -> VqcModel:
        return replace(self, params=params)

    def ansatz_ops(self) -> list[_Op]:
        n = self.num_qubits
        ops: list[_Op] = []
        k = 0
        for _ in range(self.num_layers):
            for q in range(n):
                ops.append((GateKind.RY, (q,), k))
                k += 1
            for c, t in ring_pairs(n):
                ops.append((GateKind.CX, (c, t), None))
        for q in range(n):
            ops.append((GateKind.RY, (q,), k))
            k += 1
        return ops

    def batch_class_probabilities(self, features: np.ndarray) -> np.ndarray:
        probs = _run_batch(self.num_qubits, features, self.ansatz_ops(), self.params)
        b = probs.shape[0]
        index_class = np.arange(2**self.num_qubits) % self.num_classes
        out = np.zeros((b, self.num_classes))
        for c in range(self.num_classes):
            out[:, c] = probs[:, index_class == c].sum(axis=1)
        return out


@dataclass(frozen=True, eq=False)
class QcnnModel:
    num_qubits: int
    num_classes: int = 2
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        n = self.num_qubits
        if n < 2 or n > qc.MAX_QUBITS or n & (n - 1):
            raise ModelError(f"QCNN num_qubits must be a power of two >= 2, got {n}")
        if self.num_classes != 2:
            raise ModelError(f"QCNN is a binary classifier, got num_classes={self.num_classes}")
        raw = np.zeros(self.num_params) if self.params is None else self.params
        object.__setattr__(self, "params", _as_params(raw, self.num_params))

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.num_qubits))

    @property
    def num_params(self) -> int:
        return 3 * (self.num_qubits - 1)

    def with_params(self, params) -> QcnnModel:
        return replace(self, params=params)

    def active_after_stages(self) -> list[list[int]]:
        """Active qubit lists: index 0 is before any stage, index s after stage s."""
        active = list(range(self.num_qubits))
        history = [active]
        while len(active) > 1:
            active = active[0::2]
            history.append(active)
        return history

    def ansatz_ops(self) -> list[_Op]:
        ops: list[_Op] = []
        k = 0
        for active in self.active_after_stages()[:-1]:
            for i in range(0, len(active), 2):
                keep, drop = active[i], active[i + 1]
                ops.append((GateKind.RY, (keep,), k))
                ops.append((GateKind.RY, (drop,), k + 1))
                ops.append((GateKind.CX, (drop, keep), None))
                ops.append((GateKind.RZ, (keep,), k + 2))
                k += 3
        return ops

    @property
    def readout_qubit(self) -> int:
        return self.active_after_stages()[-1][0]

    def batch_class_probabilities(self, features: np.ndarray) -> np.ndarray:
        probs = _run_batch(self.num_qubits, features, self.ansatz_ops(), self.params)
        z = qc.batch_expectation_z(probs, self.readout_qubit, self.num_qubits)
        p0 = np.clip((1.0 + z) / 2.0, 0.0, 1.0)
        return np.stack([p0, 1.0 - p0], axis=1)


Model = Union[VqcModel, QcnnModel]


def encode_features(x: Sequence[float], num_qubits: int | None = None) -> list[Gate]:
    """Angle-encode a pre-scaled feature vector as one RY(x_i) per qubit."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if num_qubits is not None and x.size != num_qubits:
        raise ModelError(f"feature vector has {x.size} entries, model has {num_qubits} qubits")
    return [qc.ry(i, v) for i, v in enumerate(x)]


def _run_batch(n: int, features: np.ndarray, ops: list[_Op], params: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=float)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[1] != n:
        raise ModelError(f"feature dimension {feats.shape[1]} does not match {n} qubits")
    amps = qc.zero_batch(feats.shape[0], n)
    for q in range(n):
        amps = qc.apply_kind(amps, GateKind.RY, (q,), feats[:, q], n)
    for kind, targets, k in ops:
        angle = None if k is None else params[k]
        amps = qc.apply_kind(amps, kind, targets, angle, n)
    return qc.batch_probabilities(amps)


def model_circuit(model: Model, x: Sequence[float]) -> qc.CircuitSpec:
    """Single-sample circuit (encoding + ansatz) as explicit gates."""
    gates = encode_features(x, model.num_qubits)
    for kind, targets, k in model.ansatz_ops():
        gates.append(Gate(kind, targets, None if k is None else model.params[k]))
    return qc.CircuitSpec(model.num_qubits, tuple(gates))


def class_probabilities(model: Model, x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.num_qubits:
        raise ModelError(f"feature vector has {x.size} entries, model has {model.num_qubits} qubits")
    return model.batch_class_probabilities(x[None, :])[0]


def argmax_class(probs: np.ndarray) -> np.ndarray | int:
    """Argmax with exact-tie resolution toward the lowest class id."""
    p = np.asarray(probs, dtype=float)
    top = p.max(axis=-1, keepdims=True)
    winners = p >= top - TIE_TOL
    out = np.argmax(winners, axis=-1)
    return int(out) if p.ndim == 1 else out


def predict(model: Model, x: Sequence[float]) -> int:
    return argmax_class(class_probabilities(model, x))


def predict_batch(model: Model, features: np.ndarray) -> np.ndarray:
    return argmax_class(model.batch_class_probabilities(features))


def _check_labels(model: Model, data: LabeledDataset) -> None:
    if len(data) == 0:
        raise ModelError("dataset is empty")
    if data.labels.max() >= model.num_classes:
        raise ModelError(f"label {int(data.labels.max())} out of range for {model.num_classes} classes")


def cross_entropy_loss(model: Model, data: LabeledDataset) -> float:
    _check_labels(model, data)
    probs = model.batch_class_probabilities(data.features)
    p_true = probs[np.arange(len(data)), data.labels]
    return float(np.mean(-np.log(p_true + LOG_EPS)))


def evaluate(model: Model, data: LabeledDataset) -> tuple[float, float]:
    """Return (accuracy, cross-entropy loss) of ``model`` on ``data``."""
    _check_labels(model, data)
    probs = model.batch_class_probabilities(data.features)
    acc = float(np.mean(argmax_class(probs) == data.labels))
    p_true = probs[np.arange(len(data)), data.labels]
    return acc, float(np.mean(-np.log(p_true + LOG_EPS)))


def train(model: Model, data: LabeledDataset, opt: OptimizerConfig) -> tuple[np.ndarray, ObjectiveTrace]:
    _check_labels(model, data)

    def objective(theta: np.ndarray) -> float:
        return cross_entropy_loss(model.with_params(theta), data)

    return minimize(objective, model.params, opt)
