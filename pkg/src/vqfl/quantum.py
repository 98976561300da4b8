"""Dense state-vector simulation of small circuits.

Qubit ordering is little-endian: qubit ``q`` is bit ``q`` of the basis index,
so X on qubit 0 of |00> lands on basis index 1.

The kernels below accept a leading batch axis so the models can push a whole
dataset through one circuit at once; the public ``QuantumState`` API is the
single-state view of the same code.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 20
NORM_TOL = 1e-10


class GateKind(str, enum.Enum):
    H = "H"
    X = "X"
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CX = "CX"
    CZ = "CZ"
    CRZ = "CRZ"


ROTATIONS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRZ})
TWO_QUBIT = frozenset({GateKind.CX, GateKind.CZ, GateKind.CRZ})

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_H = np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=complex)
_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
HADAMARD = _H
PAULI_X = _X


class CircuitError(ValueError):
    """Structurally invalid gate, circuit or state."""


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        want = 2 if self.kind in TWO_QUBIT else 1
        if len(self.targets) != want:
            raise CircuitError(f"{self.kind.value} needs {want} target(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise CircuitError(f"targets must be distinct, got {self.targets}")
        if any(t < 0 for t in self.targets):
            raise CircuitError(f"negative qubit index in {self.targets}")
        if self.kind in ROTATIONS:
            if self.angle is None:
                raise CircuitError(f"{self.kind.value} requires an angle")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise CircuitError(f"{self.kind.value} takes no angle")

    def check(self, num_qubits: int) -> None:
        if max(self.targets) >= num_qubits:
            raise CircuitError(
                f"{self.kind.value} targets {self.targets} out of range for {num_qubits} qubit(s)"
            )

    def inverse(self) -> Gate:
        if self.kind in ROTATIONS:
            return Gate(self.kind, self.targets, -self.angle)
        return self


def h(q: int) -> Gate:
    return Gate(GateKind.H, (q,))


def x(q: int) -> Gate:
    return Gate(GateKind.X, (q,))


def rx(q: int, angle: float) -> Gate:
    return Gate(GateKind.RX, (q,), angle)


def ry(q: int, angle: float) -> Gate:
    return Gate(GateKind.RY, (q,), angle)


def rz(q: int, angle: float) -> Gate:
    return Gate(GateKind.RZ, (q,), angle)


def cx(control: int, target: int) -> Gate:
    return Gate(GateKind.CX, (control, target))


def cz(a: int, b: int) -> Gate:
    return Gate(GateKind.CZ, (a, b))


def crz(control: int, target: int, angle: float) -> Gate:
    return Gate(GateKind.CRZ, (control, target), angle)


@dataclass(frozen=True)
class CircuitSpec:
    num_qubits: int
    gates: tuple[Gate, ...] = ()

    def __post_init__(self) -> None:
        _check_qubits(self.num_qubits)
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            g.check(self.num_qubits)


@dataclass(frozen=True, eq=False)
class QuantumState:
    num_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        _check_qubits(self.num_qubits)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.num_qubits:
            raise CircuitError(
                f"{self.num_qubits} qubit(s) need {2**self.num_qubits} amplitudes, got {amps.shape[0]}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-8:
            raise CircuitError(f"state is not normalised (squared norm {norm})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, num_qubits: int) -> QuantumState:
        return cls.basis(num_qubits, 0)

    @classmethod
    def basis(cls, num_qubits: int, index: int) -> QuantumState:
        _check_qubits(num_qubits)
        amps = np.zeros(2**num_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(num_qubits, amps)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))


def _check_qubits(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or n < 1 or n > MAX_QUBITS:
        raise CircuitError(f"num_qubits must be an integer in [1, {MAX_QUBITS}], got {n!r}")


# -- batched kernels ---------------------------------------------------------
#
# ``amps`` has shape (B, 2**n).  ``angle`` may be a scalar or a length-B array,
# which is how per-sample feature encodings are applied in one call.


def _rotation(kind: GateKind, angle) -> np.ndarray:
    """Return a (2, 2) or (B, 2, 2) rotation matrix."""
    theta = np.asarray(angle, dtype=float)
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    if kind is GateKind.RY:
        m = [[c, -s], [s, c]]
    elif kind is GateKind.RX:
        m = [[c, -1j * s], [-1j * s, c]]
    else:  # RZ / CRZ target block
        m = [[np.exp(-0.5j * theta), np.zeros_like(c)], [np.zeros_like(c), np.exp(0.5j * theta)]]
    mat = np.array(m, dtype=complex)
    if mat.ndim == 3:
        mat = np.moveaxis(mat, 2, 0)
    return mat


def apply_1q(amps: np.ndarray, mat: np.ndarray, qubit: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    view = amps.reshape(b, 2 ** (n - qubit - 1), 2, 2**qubit)
    if mat.ndim == 2:
        out = np.einsum("ij,bhjl->bhil", mat, view)
    else:
        out = np.einsum("bij,bhjl->bhil", mat, view)
    return out.reshape(b, 2**n)


def apply_controlled(amps: np.ndarray, mat: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    out = amps.reshape((b,) + (2,) * n).copy()
    c_axis = n - control
    t_axis = n - target
    sel = [slice(None)] * (n + 1)
    sel[c_axis] = 1
    sub = out[tuple(sel)]
    # the control axis is gone from ``sub``; shift the target axis if it sat after it
    t_sub = t_axis - 1 if t_axis > c_axis else t_axis
    sub = np.moveaxis(sub, t_sub, -1)
    if mat.ndim == 2:
        sub = sub @ mat.T
    else:
        shape = sub.shape
        flat = sub.reshape(b, -1, 2)
        flat = np.einsum("bij,bkj->bki", mat, flat)
        sub = flat.reshape(shape)
    out[tuple(sel)] = np.moveaxis(sub, -1, t_sub)
    return out.reshape(b, 2**n)


def apply_kind(amps: np.ndarray, kind: GateKind, targets: Sequence[int], angle, n: int) -> np.ndarray:
    """Apply one gate (possibly with per-sample angles) to a batch of states."""
    if kind is GateKind.H:
        return apply_1q(amps, _H, targets[0], n)
    if kind is GateKind.X:
        return apply_1q(amps, _X, targets[0], n)
    if kind in (GateKind.RX, GateKind.RY, GateKind.RZ):
        return apply_1q(amps, _rotation(kind, angle), targets[0], n)
    if kind is GateKind.CX:
        return apply_controlled(amps, _X, targets[0], targets[1], n)
    if kind is GateKind.CZ:
        return apply_controlled(amps, _Z, targets[0], targets[1], n)
    if kind is GateKind.CRZ:
        return apply_controlled(amps, _rotation(GateKind.RZ, angle), targets[0], targets[1], n)
    raise CircuitError(f"unknown gate kind {kind!r}")


def zero_batch(batch: int, n: int) -> np.ndarray:
    amps = np.zeros((batch, 2**n), dtype=complex)
    amps[:, 0] = 1.0
    return amps


def batch_probabilities(amps: np.ndarray) -> np.ndarray:
    return amps.real**2 + amps.imag**2


def batch_expectation_z(probs: np.ndarray, qubit: int, n: int) -> np.ndarray:
    b = probs.shape[0]
    view = probs.reshape(b, 2 ** (n - qubit - 1), 2, 2**qubit)
    p0 = view[:, :, 0, :].sum(axis=(1, 2))
    p1 = view[:, :, 1, :].sum(axis=(1, 2))
    return p0 - p1


# -- single-state API --------------------------------------------------------


def apply_gate(state: QuantumState, gate: Gate) -> QuantumState:
    """Return the image of ``state`` under ``gate``."""
    gate.check(state.num_qubits)
    amps = apply_kind(state.amplitudes[None, :], gate.kind, gate.targets, gate.angle, state.num_qubits)
    return QuantumState(state.num_qubits, amps[0])


def run_circuit(circuit: CircuitSpec, initial: QuantumState | None = None) -> QuantumState:
    if initial is None:
        initial = QuantumState.zero(circuit.num_qubits)
    if initial.num_qubits != circuit.num_qubits:
        raise CircuitError(
            f"circuit has {circuit.num_qubits} qubit(s) but the initial state has {initial.num_qubits}"
        )
    n = circuit.num_qubits
    amps = np.array(initial.amplitudes)[None, :]
    for g in circuit.gates:
        amps = apply_kind(amps, g.kind, g.targets, g.angle, n)
    return QuantumState(n, amps[0])


def probabilities(state: QuantumState) -> np.ndarray:
    return batch_probabilities(state.amplitudes[None, :])[0]


def measure_all(state: QuantumState, rng: np.random.Generator) -> str:
    """Sample one computational-basis outcome.

    Character ``q`` of the returned string is the bit measured on qubit ``q``.
    """
    p = probabilities(state)
    p = p / p.sum()
    index = int(rng.choice(p.shape[0], p=p))
    return "".join("1" if (index >> q) & 1 else "0" for q in range(state.num_qubits))


def expectation_z(state: QuantumState, qubit: int) -> float:
    if not 0 <= qubit < state.num_qubits:
        raise CircuitError(f"qubit {qubit} out of range for {state.num_qubits} qubit(s)")
    probs = probabilities(state)[None, :]
    return float(batch_expectation_z(probs, qubit, state.num_qubits)[0])


def circuit_from(num_qubits: int, gates: Iterable[Gate]) -> CircuitSpec:
    return CircuitSpec(num_qubits, tuple(gates))
