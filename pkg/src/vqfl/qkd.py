"""BB84 key distribution over a simulated channel, plus the payload ciphers.

Every transmitted qubit is simulated as a one-qubit state vector: the sender
prepares H^b X^d |0>, an optional eavesdropper acts on it, the receiver
applies H^b' and measures in Z. Bases are encoded 0 = Z (rectilinear) and
1 = X (diagonal).
"""

from __future__ import annotations

import csv
import enum
import io
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import quantum as qc
from .rng import as_generator, stream


class EveKind(str, enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept"
    SWAP = "swap"
    HALF_SWAP = "halfswap"


class Cipher(str, enum.Enum):
    SHIFT256 = "shift256"
    XOR = "xor"


class QkdError(ValueError):
    pass


class KeyShortfallError(QkdError):
    """Not enough sifted key bits to cover the message."""


class QkdAbort(RuntimeError):
    """Key establishment failed after every allowed attempt."""


@dataclass(frozen=True)
class EveModel:
    kind: EveKind = EveKind.NONE
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EveKind(self.kind))


@dataclass(frozen=True)
class ChannelConfig:
    flip_probability: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            raise QkdError(f"flip_probability must be in [0, 1], got {self.flip_probability}")


@dataclass(frozen=True, eq=False)
class QkdSession:
    n: int
    sender_bits: np.ndarray
    sender_bases: np.ndarray
    receiver_bases: np.ndarray
    receiver_bits: np.ndarray
    sifted_indices: np.ndarray
    eve_swapped: bool = False

    @property
    def sender_key(self) -> np.ndarray:
        return self.sender_bits[self.sifted_indices]

    @property
    def receiver_key(self) -> np.ndarray:
        return self.receiver_bits[self.sifted_indices]

    @property
    def sift_fraction(self) -> float:
        return self.sifted_indices.size / self.n if self.n else 0.0

    def sifted_error_rate(self) -> float:
        """Disagreement over every sifted position (not just test bits)."""
        if self.sifted_indices.size == 0:
            return 0.0
        return float(np.mean(self.sender_key != self.receiver_key))


@dataclass(frozen=True, eq=False)
class TestReport:
    tested_indices: np.ndarray
    error_count: int
    qber: float
    n_allowed: int
    passed: bool
    remaining_indices: np.ndarray = field(repr=False)


# -- qubit-level simulation ------------------------------------------------------

_I2 = np.eye(2, dtype=complex)


def _select(mask: np.ndarray, gate: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask, bool)[:, None, None], gate, _I2)


def prepare_states(bits: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """One row per qubit: H^basis X^bit |0>."""
    amps = qc.zero_batch(len(bits), 1)
    amps = qc.apply_1q(amps, _select(bits, qc.PAULI_X), 0, 1)
    return qc.apply_1q(amps, _select(bases, qc.HADAMARD), 0, 1)


def measure_in_bases(amps: np.ndarray, bases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply H where the basis is X, then sample each qubit in Z."""
    rotated = qc.apply_1q(amps, _select(bases, qc.HADAMARD), 0, 1)
    p1 = qc.batch_probabilities(rotated)[:, 1]
    return (rng.random(len(p1)) < p1).astype(np.uint8)


def quantum_random_bits(n: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """``n`` bits from measuring H|0> in Z."""
    if n < 0:
        raise QkdError(f"n must be >= 0, got {n}")
    rng = as_generator(rng)
    amps = qc.apply_1q(qc.zero_batch(n, 1), qc.HADAMARD, 0, 1)
    p1 = qc.batch_probabilities(amps)[:, 1]
    return (rng.random(n) < p1).astype(np.uint8)


def _eve_rng(eve: EveModel, rng: np.random.Generator) -> np.random.Generator:
    if eve.seed is not None:
        return stream(eve.seed, "eve")
    return np.random.Generator(np.random.Philox(rng.integers(0, 2**63)))


def _eavesdrop(amps: np.ndarray, eve: EveModel, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    n = amps.shape[0]
    if eve.kind is EveKind.NONE:
        return amps, False
    erng = _eve_rng(eve, rng)
    if eve.kind is EveKind.INTERCEPT_RESEND:
        bases = quantum_random_bits(n, erng)
        seen = measure_in_bases(amps, bases, erng)
        return prepare_states(seen, bases), False
    # a whole-session coin: either every qubit passes untouched or every one is swapped
    if eve.kind is EveKind.HALF_SWAP and erng.random() < 0.5:
        return amps, False
    fake = prepare_states(quantum_random_bits(n, erng), quantum_random_bits(n, erng))
    return fake, True


def bb84_exchange(
    n: int,
    eve: EveModel | None = None,
    channel: ChannelConfig | None = None,
    rng: np.random.Generator | int | None = None,
) -> QkdSession:
    if n < 1:
        raise QkdError(f"n must be >= 1, got {n}")
    eve = eve or EveModel()
    channel = channel or ChannelConfig()
    rng = as_generator(rng)
    sender_bits = quantum_random_bits(n, rng)
    sender_bases = quantum_random_bits(n, rng)
    receiver_bases = quantum_random_bits(n, rng)
    sent = prepare_states(sender_bits, sender_bases)
    arrived, swapped = _eavesdrop(sent, eve, rng)
    received = measure_in_bases(arrived, receiver_bases, rng)
    if channel.flip_probability > 0:
        flips = rng.random(n) < channel.flip_probability
        received = received ^ flips.astype(np.uint8)
    sifted = np.flatnonzero(sender_bases == receiver_bases)
    return QkdSession(n, sender_bits, sender_bases, receiver_bases, received, sifted, swapped)


def run_test(
    session: QkdSession,
    test_fraction: float,
    n_allowed: int,
    rng: np.random.Generator | int | None = None,
    n_test: int | None = None,
) -> TestReport:
    """Publicly compare a random sample of sifted positions.

    ``n_test`` overrides the ``ceil(test_fraction * |S|)`` sample size.
    """
    if not 0.0 < test_fraction <= 1.0:
        raise QkdError(f"test_fraction must be in (0, 1], got {test_fraction}")
    rng = as_generator(rng)
    sifted = session.sifted_indices
    if sifted.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return TestReport(empty, 0, 0.0, n_allowed, 0 <= n_allowed, empty)
    k = math.ceil(test_fraction * sifted.size) if n_test is None else int(n_test)
    k = max(1, min(k, sifted.size))
    chosen = np.sort(rng.choice(sifted.size, size=k, replace=False))
    tested = sifted[chosen]
    errors = int(np.sum(session.sender_bits[tested] != session.receiver_bits[tested]))
    remaining = np.delete(sifted, chosen)
    return TestReport(tested, errors, errors / k, n_allowed, errors <= n_allowed, remaining)


# -- keys and ciphers ------------------------------------------------------------


def fit_key_to_message(key: Sequence[int], needed_bytes: int) -> bytes:
    """Pack the first ``8 * needed_bytes`` key bits big-endian into bytes."""
    bits = np.asarray(key, dtype=np.uint8).reshape(-1)
    need = 8 * needed_bytes
    if bits.size < need:
        raise KeyShortfallError(f"need {need} key bits, only {bits.size} available")
    return np.packbits(bits[:need]).tobytes()


def _check_lengths(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise QkdError(f"message and key lengths differ ({len(a)} vs {len(b)})")


def encrypt_bytes(message: bytes, key: bytes) -> bytes:
    _check_lengths(message, key)
    return bytes((m + 2 * k) % 256 for m, k in zip(message, key))


def decrypt_bytes(cipher: bytes, key: bytes) -> bytes:
    _check_lengths(cipher, key)
    return bytes((c - 2 * k) % 256 for c, k in zip(cipher, key))


def xor_cipher(message: Sequence[int], key: Sequence[int]) -> np.ndarray:
    _check_lengths(message, key)
    return np.bitwise_xor(np.asarray(message, dtype=np.uint8), np.asarray(key, dtype=np.uint8))


def xor_bytes(message: bytes, key: bytes) -> bytes:
    _check_lengths(message, key)
    return bytes(m ^ k for m, k in zip(message, key))


def encrypt(message: bytes, key: bytes, cipher: Cipher = Cipher.SHIFT256) -> bytes:
    return encrypt_bytes(message, key) if Cipher(cipher) is Cipher.SHIFT256 else xor_bytes(message, key)


def decrypt(payload: bytes, key: bytes, cipher: Cipher = Cipher.SHIFT256) -> bytes:
    return decrypt_bytes(payload, key) if Cipher(cipher) is Cipher.SHIFT256 else xor_bytes(payload, key)


# -- parameter serialisation -------------------------------------------------------

_NUMBER = re.compile(r"-?\d+\.\d+\Z")


def serialize_params(params: Sequence[float], decimals: int = 12) -> bytes:
    if not 1 <= decimals <= 17:
        raise QkdError(f"decimals must be in [1, 17], got {decimals}")
    values = np.asarray(params, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise QkdError("cannot serialise non-finite parameters")
    return ",".join(f"{v:.{decimals}f}" for v in values).encode("ascii")


def deserialize_params(payload: bytes) -> np.ndarray:
    if not payload:
        return np.zeros(0)
    try:
        text = payload.decode("ascii")
    except UnicodeDecodeError:
        raise QkdError("malformed parameter payload (non-ASCII bytes)") from None
    fields = text.split(",")
    if not all(_NUMBER.match(f) for f in fields):
        raise QkdError("malformed parameter payload")
    return np.array([float(f) for f in fields])


# -- key establishment -------------------------------------------------------------


@dataclass(frozen=True)
class SharedKey:
    sender: bytes
    receiver: bytes
    attempts: int
    qber: float


def establish_key(
    needed_bytes: int,
    rng: np.random.Generator,
    *,
    channel: ChannelConfig | None = None,
    eve: EveModel | None = None,
    test_fraction: float = 0.1,
    n_allowed: int = 0,
    oversample: int = 3,
    max_attempts: int = 5,
) -> SharedKey:
    """Run BB84 until a passing session yields enough key for ``needed_bytes``.

    Each attempt transmits ``oversample`` times the needed key bits. Failed
    tests and short keys both trigger a fresh exchange; after ``max_attempts``
    the exchange is abandoned with ``QkdAbort``.
    """
    need_bits = 8 * needed_bytes
    if need_bits == 0:
        return SharedKey(b"", b"", 0, 0.0)
    last = "no attempt made"
    for attempt in range(1, max_attempts + 1):
        session = bb84_exchange(oversample * need_bits, eve, channel, rng)
        report = run_test(session, test_fraction, n_allowed, rng)
        if not report.passed:
            last = f"test failed ({report.error_count} errors > n_allowed={n_allowed}, qber={report.qber:.4f})"
            continue
        left = report.remaining_indices
        try:
            s_key = fit_key_to_message(session.sender_bits[left], needed_bytes)
            r_key = fit_key_to_message(session.receiver_bits[left], needed_bytes)
        except KeyShortfallError as exc:
            last = str(exc)
            continue
        return SharedKey(s_key, r_key, attempt, report.qber)
    raise QkdAbort(f"key establishment failed after {max_attempts} attempts: {last}")


def session_dump(session: QkdSession) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "sender_bit", "sender_basis", "receiver_basis", "receiver_bit", "sifted"])
    sifted = np.zeros(session.n, dtype=bool)
    sifted[session.sifted_indices] = True
    letter = "ZX"
    for j in range(session.n):
        w.writerow([
            j,
            int(session.sender_bits[j]),
            letter[session.sender_bases[j]],
            letter[session.receiver_bases[j]],
            int(session.receiver_bits[j]),
            int(sifted[j]),
        ])
    return buf.getvalue()
