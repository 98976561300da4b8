"""Experiment configuration: JSON parsing, validation and federation assembly.

Unknown keys anywhere in the document are rejected so a typo cannot silently
fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import data as dp_data
from . import qkd
from .dataset import LabeledDataset
from .models import Model, ModelError, QcnnModel, VqcModel
from .optimize import Method, OptimizerConfig, OptimizerError
from .orchestrator import ClientState, Federation, FederationSettings, FtMode, QkdLink
from .privacy import DpConfig, Mechanism, PrivacyConfigError
from .quantum import MAX_QUBITS
from .rng import stream


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class OptimizerSection:
    method: str = "gradient_free"
    maxiter: int = 20
    seed: int = 0
    step_size: float = 0.1
    initial_simplex_scale: float = 0.5
    fd_epsilon: float = 1e-5

    def build(self) -> OptimizerConfig:
        return OptimizerConfig(
            Method(self.method), self.maxiter, self.seed, self.step_size, self.initial_simplex_scale, self.fd_epsilon
        )


@dataclass
class SecuritySection:
    dp_enabled: bool = False
    mechanism: str = "laplace"
    epsilon: float = 1.0
    delta: float | None = None
    sensitivity: float = 1.0
    clip_nonnegative: bool = True
    decimals: int | None = None
    qkd_enabled: bool = False
    cipher: str = "shift256"
    flip_probability: float = 0.0
    test_fraction: float = 0.1
    n_allowed: int = 0
    serialization_decimals: int = 12


@dataclass
class DataSection:
    source: str = "blobs"
    n_samples: int = 400
    n_features: int = 2
    class_separation: float = 6.0
    class_weights: list[float] | None = None
    csv_path: str | None = None
    scaler: str = "minmax"
    pca_k: int | None = None
    balance: bool = False
    server_val_count: int = 50
    server_test_count: int = 50
    client_train_fraction: float = 0.8


@dataclass
class ExperimentConfig:
    model: str = "vqc"
    num_qubits: int = 2
    num_layers: int = 1
    num_classes: int = 2
    devices: int | list[int] = 3
    rounds: int = 2
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    server_optimizer: OptimizerSection | None = None
    security: SecuritySection = field(default_factory=SecuritySection)
    ft_mode: str = "noft"
    data: DataSection = field(default_factory=DataSection)
    root_seed: int = 0
    output: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def device_values(self) -> list[int]:
        return list(self.devices) if isinstance(self.devices, list) else [self.devices]

    def with_devices(self, k: int) -> ExperimentConfig:
        return dataclasses.replace(self, devices=k)


_SECTIONS = {"optimizer": OptimizerSection, "server_optimizer": OptimizerSection, "security": SecuritySection,
             "data": DataSection}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _fill(cls, raw: Any, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip("."), "expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown key")
    kwargs = {}
    for name, value in raw.items():
        if name in _SECTIONS and cls is ExperimentConfig:
            kwargs[name] = None if value is None else _fill(_SECTIONS[name], value, f"{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    cfg = _fill(ExperimentConfig, raw, "")
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON ({exc})") from None
    return parse_config(raw)


def _need(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(name, message)


def _validate_optimizer(sec: OptimizerSection, prefix: str) -> None:
    _need(sec.method in {m.value for m in Method}, f"{prefix}.method",
          f"must be one of {[m.value for m in Method]}")
    _need(_is_int(sec.maxiter) and sec.maxiter >= 0, f"{prefix}.maxiter", "must be an integer >= 0")
    _need(_is_int(sec.seed), f"{prefix}.seed", "must be an integer")
    for name in ("step_size", "initial_simplex_scale", "fd_epsilon"):
        v = getattr(sec, name)
        _need(_is_real(v) and v > 0, f"{prefix}.{name}", "must be a positive number")


def validate(cfg: ExperimentConfig) -> None:
    _need(cfg.model in ("vqc", "qcnn"), "model", "must be 'vqc' or 'qcnn'")
    _need(_is_int(cfg.num_qubits) and 1 <= cfg.num_qubits <= MAX_QUBITS, "num_qubits",
          f"must be an integer in [1, {MAX_QUBITS}]")
    _need(_is_int(cfg.num_layers) and cfg.num_layers >= 1, "num_layers", "must be an integer >= 1")
    _need(_is_int(cfg.num_classes) and cfg.num_classes >= 2, "num_classes", "must be an integer >= 2")
    _need(cfg.num_classes <= 2**cfg.num_qubits, "num_classes",
          f"{cfg.num_classes} classes cannot be read out from {cfg.num_qubits} qubit(s) "
          f"(at most {2**cfg.num_qubits})")
    if cfg.model == "qcnn":
        n = cfg.num_qubits
        _need(n >= 2 and n & (n - 1) == 0, "num_qubits", "qcnn needs a power of two >= 2")
        _need(cfg.num_classes == 2, "num_classes", "qcnn is a binary classifier")
    devices = cfg.devices if isinstance(cfg.devices, list) else [cfg.devices]
    _need(len(devices) > 0 and all(_is_int(k) and k >= 1 for k in devices), "devices",
          "must be an integer >= 1 or a non-empty list of them")
    _need(_is_int(cfg.rounds) and cfg.rounds >= 1, "rounds", "must be an integer >= 1")
    _need(cfg.ft_mode in {m.value for m in FtMode}, "ft_mode", f"must be one of {[m.value for m in FtMode]}")
    _need(_is_int(cfg.root_seed) and cfg.root_seed >= 0, "root_seed", "must be a non-negative integer")
    _need(cfg.output is None or isinstance(cfg.output, str), "output", "must be a path string")
    _validate_optimizer(cfg.optimizer, "optimizer")
    if cfg.server_optimizer is not None:
        _validate_optimizer(cfg.server_optimizer, "server_optimizer")

    s = cfg.security
    for name in ("dp_enabled", "clip_nonnegative", "qkd_enabled"):
        _need(isinstance(getattr(s, name), bool), f"security.{name}", "must be true or false")
    _need(s.mechanism in {m.value for m in Mechanism}, "security.mechanism", "must be 'laplace' or 'gaussian'")
    _need(_is_real(s.epsilon) and s.epsilon > 0, "security.epsilon", "must be > 0")
    _need(_is_real(s.sensitivity) and s.sensitivity >= 0, "security.sensitivity", "must be >= 0")
    if s.mechanism == "gaussian":
        _need(s.delta is not None, "security.delta", "required by the gaussian mechanism")
    if s.delta is not None:
        _need(_is_real(s.delta) and 0 < s.delta < 1, "security.delta", "must be in (0, 1)")
    _need(s.decimals is None or (_is_int(s.decimals) and s.decimals >= 0), "security.decimals",
          "must be null or an integer >= 0")
    _need(s.cipher in {c.value for c in qkd.Cipher}, "security.cipher", "must be 'shift256' or 'xor'")
    _need(_is_real(s.flip_probability) and 0 <= s.flip_probability <= 1, "security.flip_probability",
          "must be in [0, 1]")
    _need(_is_real(s.test_fraction) and 0 < s.test_fraction < 1, "security.test_fraction", "must be in (0, 1)")
    _need(_is_int(s.n_allowed) and s.n_allowed >= 0, "security.n_allowed", "must be an integer >= 0")
    _need(_is_int(s.serialization_decimals) and 1 <= s.serialization_decimals <= 17,
          "security.serialization_decimals", "must be an integer in [1, 17]")

    d = cfg.data
    _need(d.source in ("blobs", "csv"), "data.source", "must be 'blobs' or 'csv'")
    if d.source == "csv":
        _need(isinstance(d.csv_path, str) and d.csv_path != "", "data.csv_path", "required when source is 'csv'")
    else:
        _need(_is_int(d.n_samples) and d.n_samples >= 1, "data.n_samples", "must be an integer >= 1")
        _need(_is_int(d.n_features) and d.n_features >= 1, "data.n_features", "must be an integer >= 1")
        _need(_is_real(d.class_separation) and d.class_separation >= 0, "data.class_separation", "must be >= 0")
        if d.class_weights is not None:
            w = d.class_weights
            _need(isinstance(w, list) and len(w) == cfg.num_classes and all(_is_real(v) and v >= 0 for v in w)
                  and abs(sum(w) - 1.0) <= 1e-9, "data.class_weights",
                  f"must be {cfg.num_classes} non-negative proportions summing to 1")
    _need(d.scaler in ("minmax", "standard", "none"), "data.scaler", "must be 'minmax', 'standard' or 'none'")
    _need(d.pca_k is None or (_is_int(d.pca_k) and d.pca_k >= 1), "data.pca_k", "must be null or an integer >= 1")
    _need(isinstance(d.balance, bool), "data.balance", "must be true or false")
    for name in ("server_val_count", "server_test_count"):
        _need(_is_int(getattr(d, name)) and getattr(d, name) >= 1, f"data.{name}", "must be an integer >= 1")
    _need(_is_real(d.client_train_fraction) and 0 < d.client_train_fraction <= 1, "data.client_train_fraction",
          "must be in (0, 1]")
    if d.source == "blobs":
        feats = d.pca_k if d.pca_k is not None else d.n_features
        if d.pca_k is not None:
            _need(d.pca_k <= d.n_features, "data.pca_k", "cannot exceed data.n_features")
        _need(feats == cfg.num_qubits, "num_qubits",
              f"must equal the feature count after preprocessing ({feats})")


# -- assembly -----------------------------------------------------------------------


def build_model(cfg: ExperimentConfig) -> Model:
    if cfg.model == "qcnn":
        return QcnnModel(cfg.num_qubits, cfg.num_classes)
    return VqcModel(cfg.num_qubits, cfg.num_layers, cfg.num_classes)


def build_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    """Load or generate the full dataset and apply balancing, PCA and scaling."""
    d = cfg.data
    if d.source == "csv":
        try:
            ds = dp_data.load_csv(d.csv_path)
        except (OSError, dp_data.DataError) as exc:
            raise ConfigError("data.csv_path", str(exc)) from None
    else:
        ds = dp_data.generate_blobs(
            d.n_samples, d.n_features, cfg.num_classes, d.class_separation, d.class_weights,
            stream(cfg.root_seed, "blobs"),
        )
    if d.balance:
        ds = dp_data.balance_classes(ds, stream(cfg.root_seed, "balance"))
    if d.pca_k is not None:
        _need(d.pca_k <= ds.n_features, "data.pca_k", f"cannot exceed the {ds.n_features} input features")
        ds = dp_data.pca_transform(ds, dp_data.pca_fit(ds, d.pca_k))
    if d.scaler != "none":
        ds = dp_data.scaler_transform(ds, dp_data.scaler_fit(ds, d.scaler))
    _need(ds.n_features == cfg.num_qubits, "num_qubits",
          f"must equal the feature count after preprocessing ({ds.n_features})")
    if len(ds):
        _need(int(ds.labels.max()) < cfg.num_classes, "num_classes",
              f"data has {int(ds.labels.max()) + 1} classes")
    return ds


def build_federation(cfg: ExperimentConfig, workers: int = 1) -> Federation:
    if isinstance(cfg.devices, list):
        raise ConfigError("devices", "expand a device sweep before building a federation")
    ds = build_dataset(cfg)
    d = cfg.data
    try:
        plan = dp_data.partition(ds, cfg.devices, d.server_val_count, d.server_test_count,
                                 stream(cfg.root_seed, "partition"))
    except dp_data.DataError as exc:
        raise ConfigError("devices", str(exc)) from None
    clients = []
    for k, shard in enumerate(plan.shards):
        local = ds.subset(shard)
        if d.client_train_fraction < 1.0 and len(local) >= 2:
            train, test = dp_data.train_test_split(local, d.client_train_fraction, stream(cfg.root_seed, "split", k))
        else:
            train, test = local, local.subset([])
        if len(train) == 0:
            raise ConfigError("devices", f"client {k} ends up with no training samples")
        clients.append(ClientState(k, train, test))

    s = cfg.security
    try:
        dp = None
        if s.dp_enabled:
            dp = DpConfig(Mechanism(s.mechanism), s.epsilon, s.delta, s.sensitivity, s.clip_nonnegative, s.decimals)
        link = None
        if s.qkd_enabled:
            link = QkdLink(qkd.Cipher(s.cipher), qkd.ChannelConfig(s.flip_probability), s.test_fraction, s.n_allowed)
        settings = FederationSettings(
            model=build_model(cfg),
            rounds=cfg.rounds,
            optimizer=cfg.optimizer.build(),
            server_optimizer=cfg.server_optimizer.build() if cfg.server_optimizer else None,
            ft_mode=FtMode(cfg.ft_mode),
            dp=dp,
            link=link,
            serialization_decimals=s.serialization_decimals,
            root_seed=cfg.root_seed,
            workers=workers,
        )
    except (PrivacyConfigError, OptimizerError, ModelError, qkd.QkdError) as exc:
        raise ConfigError("config", str(exc)) from None
    return Federation(settings, clients, ds.subset(plan.server_val), ds.subset(plan.server_test))
