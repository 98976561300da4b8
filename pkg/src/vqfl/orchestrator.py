"""Federated round engine.

One round: broadcast the global parameters to every client, train locally,
perturb and encrypt the uploads, take the sample-weighted average, optionally
fine-tune on the server's validation split, then score the prediction model.

All randomness comes from named streams under the root seed, so the security
layers draw from their own streams and never shift the training trajectory.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import qkd
from .dataset import LabeledDataset
from .models import Model, ModelError, evaluate, train
from .optimize import OptimizerConfig, OptimizerError
from .privacy import DpConfig, add_noise
from .rng import stream

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "round,global_ft_val_acc,global_ft_test_acc,global_ft_val_loss,pred_test_acc,pred_val_acc,"
    "pred_val_loss,avg_local_train_acc,avg_local_test_acc,avg_local_train_loss,"
    "avg_local_train_time_s,comm_time_s"
)
TIME_COLUMNS = ("avg_local_train_time_s", "comm_time_s")


class FtMode(str, enum.Enum):
    NOFT = "noft"
    FT = "ft"
    FTAVG = "ftavg"


class RoundAbort(RuntimeError):
    """A round could not complete (key establishment failure, no surviving clients)."""


@dataclass(frozen=True)
class SecurityMode:
    dp_enabled: bool = False
    qkd_enabled: bool = False

    @property
    def label(self) -> str:
        return "QFL" + ("-DP" if self.dp_enabled else "") + ("-QKD" if self.qkd_enabled else "")


@dataclass
class ClientState:
    id: int
    train_set: LabeledDataset
    test_set: LabeledDataset
    params: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.train_set) == 0:
            raise ValueError(f"client {self.id} has an empty training set")

    @property
    def num_samples(self) -> int:
        return len(self.train_set)


@dataclass
class ServerState:
    params: np.ndarray
    validation_set: LabeledDataset
    test_set: LabeledDataset

    def __post_init__(self) -> None:
        if len(self.validation_set) == 0 or len(self.test_set) == 0:
            raise ValueError("the server needs non-empty validation and test sets")


@dataclass
class RoundMetrics:
    round: int
    global_ft_val_acc: float
    global_ft_test_acc: float
    global_ft_val_loss: float
    pred_test_acc: float
    pred_val_acc: float
    pred_val_loss: float
    avg_local_train_acc: float
    avg_local_test_acc: float
    avg_local_train_loss: float
    avg_local_train_time_s: float
    comm_time_s: float
    dropped_clients: tuple[int, ...] = field(default=(), compare=False)

    def row(self) -> list[str]:
        out = [str(self.round)]
        for name in METRICS_HEADER.split(",")[1:]:
            out.append(f"{getattr(self, name):.6f}")
        return out

    def without_times(self) -> tuple:
        return tuple(
            getattr(self, f.name)
            for f in fields(self)
            if f.name not in TIME_COLUMNS and f.name != "dropped_clients"
        )


@dataclass(frozen=True)
class LocalMetrics:
    train_acc: float
    train_loss: float
    test_acc: float | None
    train_time_s: float


@dataclass(frozen=True)
class FtMetrics:
    val_acc: float
    val_loss: float
    test_acc: float


# -- aggregation ------------------------------------------------------------------


def weighted_average(params_list: Sequence[Sequence[float]], counts: Sequence[float]) -> np.ndarray:
    """Coordinate-wise mean weighted by ``n_k / sum(n)``."""
    if len(params_list) == 0:
        raise ValueError("nothing to aggregate")
    if len(params_list) != len(counts):
        raise ValueError(f"{len(params_list)} parameter vectors but {len(counts)} counts")
    stacked = np.array([np.asarray(p, dtype=float).reshape(-1) for p in params_list])
    if stacked.ndim != 2:
        raise ValueError("parameter vectors differ in length")
    w = np.asarray(counts, dtype=float)
    if np.any(w <= 0):
        raise ValueError("sample counts must be positive")
    w = w / w.sum()
    return w @ stacked


# -- secure channel ----------------------------------------------------------------


@dataclass(frozen=True)
class QkdLink:
    cipher: qkd.Cipher = qkd.Cipher.SHIFT256
    channel: qkd.ChannelConfig = field(default_factory=qkd.ChannelConfig)
    test_fraction: float = 0.1
    n_allowed: int = 0
    eve: qkd.EveModel = field(default_factory=qkd.EveModel)

    def key_for(self, nbytes: int, rng: np.random.Generator) -> qkd.SharedKey:
        return qkd.establish_key(
            nbytes,
            rng,
            channel=self.channel,
            eve=self.eve,
            test_fraction=self.test_fraction,
            n_allowed=self.n_allowed,
        )


@dataclass(frozen=True)
class Transmission:
    payload: bytes
    key: qkd.SharedKey | None = None
    cipher: qkd.Cipher = qkd.Cipher.SHIFT256


def secure_uplink(
    params: Sequence[float],
    dp: DpConfig | None,
    rng: np.random.Generator | None,
    link: QkdLink | None,
    decimals: int = 12,
    qkd_rng: np.random.Generator | None = None,
) -> Transmission:
    """DP noise, then serialisation, then encryption when a QKD link is given.

    ``rng`` feeds the DP noise; ``qkd_rng`` (defaulting to ``rng``) feeds BB84.
    """
    theta = np.asarray(params, dtype=float)
    if dp is not None:
        if rng is None:
            raise ValueError("DP noise needs a random stream")
        theta = add_noise(theta, dp, rng)
    plain = qkd.serialize_params(theta, decimals)
    if link is None:
        return Transmission(plain)
    qkd_rng = qkd_rng if qkd_rng is not None else rng
    if qkd_rng is None:
        raise ValueError("key establishment needs a random stream")
    key = link.key_for(len(plain), qkd_rng)
    return Transmission(qkd.encrypt(plain, key.sender, link.cipher), key, link.cipher)


def secure_downlink(tx: Transmission) -> np.ndarray:
    """Receiver side of ``secure_uplink``: decrypt (if keyed) and deserialise."""
    plain = tx.payload if tx.key is None else qkd.decrypt(tx.payload, tx.key.receiver, tx.cipher)
    return qkd.deserialize_params(plain)


# -- client / server steps -----------------------------------------------------------


def local_round(
    client: ClientState, incoming: Sequence[float], model: Model, opt: OptimizerConfig
) -> tuple[np.ndarray, LocalMetrics]:
    incoming = np.asarray(incoming, dtype=float)
    if incoming.size != model.num_params:
        raise ModelError(f"client {client.id}: got {incoming.size} params, model needs {model.num_params}")
    client.params = incoming
    start = time.perf_counter()
    trained, _ = train(model.with_params(incoming), client.train_set, opt)
    elapsed = time.perf_counter() - start
    client.params = trained
    fitted = model.with_params(trained)
    train_acc, train_loss = evaluate(fitted, client.train_set)
    test_acc = evaluate(fitted, client.test_set)[0] if len(client.test_set) else None
    return trained, LocalMetrics(train_acc, train_loss, test_acc, elapsed)


def server_fine_tune(
    global_params: Sequence[float],
    server: ServerState,
    mode: FtMode,
    model: Model,
    opt: OptimizerConfig,
) -> tuple[np.ndarray, np.ndarray, FtMetrics]:
    """Return (broadcast params, prediction params, fine-tuned model metrics)."""
    mode = FtMode(mode)
    untouched = np.array(global_params, dtype=float)
    try:
        tuned, _ = train(model.with_params(untouched), server.validation_set, opt)
    except (OptimizerError, ModelError) as exc:
        log.warning("server fine-tuning failed (%s); falling back to no fine-tuning", exc)
        tuned, mode = untouched.copy(), FtMode.NOFT
    tuned_model = model.with_params(tuned)
    val_acc, val_loss = evaluate(tuned_model, server.validation_set)
    test_acc, _ = evaluate(tuned_model, server.test_set)
    metrics = FtMetrics(val_acc, val_loss, test_acc)
    if mode is FtMode.NOFT:
        out = untouched
    elif mode is FtMode.FT:
        out = np.array(tuned)
    else:
        out = 0.5 * (tuned + untouched)
    return out, out.copy(), metrics


# -- the loop -----------------------------------------------------------------------


@dataclass(frozen=True)
class FederationSettings:
    model: Model
    rounds: int
    optimizer: OptimizerConfig
    server_optimizer: OptimizerConfig | None = None
    ft_mode: FtMode = FtMode.NOFT
    dp: DpConfig | None = None
    link: QkdLink | None = None
    serialization_decimals: int = 12
    root_seed: int = 0
    workers: int = 1

    @property
    def security(self) -> SecurityMode:
        return SecurityMode(self.dp is not None, self.link is not None)


def initial_params(model: Model, root_seed: int) -> np.ndarray:
    return stream(root_seed, "init").uniform(-np.pi, np.pi, model.num_params)


@dataclass
class _ClientResult:
    client_id: int
    transmission: Transmission | None
    metrics: LocalMetrics | None
    error: str | None = None


class Federation:
    """Stateful driver for ``settings.rounds`` rounds over fixed clients and server."""

    def __init__(self, settings: FederationSettings, clients: Sequence[ClientState], server_val: LabeledDataset,
                 server_test: LabeledDataset):
        if not clients:
            raise ValueError("need at least one client")
        self.settings = settings
        self.clients = list(clients)
        self.server = ServerState(initial_params(settings.model, settings.root_seed), server_val, server_test)
        self.history: list[RoundMetrics] = []
        self.broadcast_log: list[np.ndarray] = []
        self.aggregate_log: list[np.ndarray] = []

    def _downlink(self, t: int, client: ClientState) -> np.ndarray:
        s = self.settings
        tx = secure_uplink(
            self.server.params,
            None,
            None,
            s.link,
            s.serialization_decimals,
            qkd_rng=stream(s.root_seed, "qkd-down", t, client.id),
        )
        return secure_downlink(tx)

    def _client_task(self, t: int, client: ClientState) -> _ClientResult:
        s = self.settings
        try:
            incoming = self._downlink(t, client)
        except qkd.QkdError as exc:
            log.warning("round %d: client %d could not read the broadcast, dropped: %s", t, client.id, exc)
            return _ClientResult(client.id, None, None, str(exc))
        try:
            trained, metrics = local_round(client, incoming, s.model, s.optimizer)
        except (OptimizerError, ModelError) as exc:
            log.warning("round %d: client %d dropped during training: %s", t, client.id, exc)
            return _ClientResult(client.id, None, None, str(exc))
        tx = secure_uplink(
            trained,
            s.dp,
            stream(s.root_seed, "dp", t, client.id),
            s.link,
            s.serialization_decimals,
            qkd_rng=stream(s.root_seed, "qkd-up", t, client.id),
        )
        return _ClientResult(client.id, tx, metrics)

    def run_round(self, t: int) -> RoundMetrics:
        s = self.settings
        start = time.perf_counter()
        try:
            if s.workers > 1:
                with ThreadPoolExecutor(max_workers=s.workers) as pool:
                    results = list(pool.map(lambda c: self._client_task(t, c), self.clients))
            else:
                results = [self._client_task(t, c) for c in self.clients]
        except qkd.QkdAbort as exc:
            raise RoundAbort(f"round {t}: {exc}") from exc

        uploads, counts, local, dropped = [], [], [], []
        for client, res in zip(self.clients, results):
            if res.transmission is None:
                dropped.append(client.id)
                continue
            try:
                recovered = secure_downlink(res.transmission)
                if recovered.size != s.model.num_params:
                    raise qkd.QkdError(f"expected {s.model.num_params} values, got {recovered.size}")
            except qkd.QkdError as exc:
                log.warning("round %d: client %d upload unreadable, dropped: %s", t, client.id, exc)
                dropped.append(client.id)
                continue
            uploads.append(recovered)
            counts.append(client.num_samples)
            local.append(res.metrics)
        if not uploads:
            raise RoundAbort(f"round {t}: every client dropped")

        aggregate = weighted_average(uploads, counts)
        self.aggregate_log.append(aggregate)
        broadcast, prediction, ft = server_fine_tune(
            aggregate, self.server, s.ft_mode, s.model, s.server_optimizer or s.optimizer
        )
        self.server.params = broadcast
        self.broadcast_log.append(broadcast)
        pred = s.model.with_params(prediction)
        pred_val_acc, pred_val_loss = evaluate(pred, self.server.validation_set)
        pred_test_acc, _ = evaluate(pred, self.server.test_set)
        test_accs = [m.test_acc for m in local if m.test_acc is not None]
        metrics = RoundMetrics(
            round=t,
            global_ft_val_acc=ft.val_acc,
            global_ft_test_acc=ft.test_acc,
            global_ft_val_loss=ft.val_loss,
            pred_test_acc=pred_test_acc,
            pred_val_acc=pred_val_acc,
            pred_val_loss=pred_val_loss,
            avg_local_train_acc=float(np.mean([m.train_acc for m in local])),
            avg_local_test_acc=float(np.mean(test_accs)) if test_accs else math.nan,
            avg_local_train_loss=float(np.mean([m.train_loss for m in local])),
            avg_local_train_time_s=float(np.mean([m.train_time_s for m in local])),
            comm_time_s=time.perf_counter() - start,
            dropped_clients=tuple(dropped),
        )
        self.history.append(metrics)
        return metrics

    def run(self) -> list[RoundMetrics]:
        for t in range(1, self.settings.rounds + 1):
            self.run_round(t)
        return self.history


def write_metrics(path: str | Path, metrics: Sequence[RoundMetrics]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for m in metrics:
            w.writerow(m.row())


def run_experiment(config, workers: int = 1) -> list[RoundMetrics]:
    """Build data and settings from an ``ExperimentConfig`` and run every round."""
    from .config import build_federation

    return build_federation(config, workers=workers).run()
