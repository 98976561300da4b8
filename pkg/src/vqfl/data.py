"""Dataset construction and preprocessing.

Synthetic Gaussian class blobs stand in for the driving datasets; CSV files
with a trailing ``label`` column can be ingested instead. Scalers, a Jacobi
PCA, IID device partitioning and undersampling-based class balancing round
out the pipeline.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LabeledDataset
from .rng import as_generator


class DataError(ValueError):
    pass


# -- synthetic data ----------------------------------------------------------


def proportional_counts(n: int, weights: Sequence[float]) -> np.ndarray:
    """Largest-remainder allocation of ``n`` items to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = n * w
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def class_centers(n_classes: int, n_features: int, separation: float) -> np.ndarray:
    """Centers with pairwise distance ``separation`` (adjacent distance on a circle if C > d)."""
    centers = np.zeros((n_classes, n_features))
    if separation == 0:
        return centers
    if n_classes <= n_features:
        centers[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
        return centers
    if n_features == 1:
        centers[:, 0] = separation * np.arange(n_classes)
        return centers
    radius = separation / (2.0 * math.sin(math.pi / n_classes))
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def generate_blobs(
    n_samples: int,
    n_features: int,
    n_classes: int,
    class_separation: float = 4.0,
    class_weights: Sequence[float] | None = None,
    seed: int | np.random.Generator = 0,
    cluster_std: float = 1.0,
) -> LabeledDataset:
    if n_classes < 2:
        raise DataError(f"n_classes must be >= 2, got {n_classes}")
    if n_features < 1 or n_samples < 1:
        raise DataError("n_samples and n_features must be positive")
    weights = np.full(n_classes, 1.0 / n_classes) if class_weights is None else np.asarray(class_weights, float)
    if weights.shape != (n_classes,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DataError(f"class_weights must be {n_classes} non-negative proportions summing to 1")
    rng = as_generator(seed)
    counts = proportional_counts(n_samples, weights)
    centers = class_centers(n_classes, n_features, class_separation)
    labels = np.repeat(np.arange(n_classes), counts)
    features = centers[labels] + cluster_std * rng.standard_normal((n_samples, n_features))
    order = rng.permutation(n_samples)
    return LabeledDataset(features[order], labels[order])


# -- scalers -----------------------------------------------------------------


class ScalerKind(str, enum.Enum):
    STANDARD = "standard"
    MINMAX = "minmax"


@dataclass(frozen=True, eq=False)
class ScalerParams:
    kind: ScalerKind
    center: np.ndarray  # mean (standard) or min (minmax)
    spread: np.ndarray  # population std (standard) or max - min (minmax)
    lo: float = -math.pi
    hi: float = math.pi


def scaler_fit(data, kind: ScalerKind | str = ScalerKind.MINMAX, feature_range=(-math.pi, math.pi)) -> ScalerParams:
    x = _features(data)
    if x.shape[0] == 0:
        raise DataError("cannot fit a scaler on empty data")
    kind = ScalerKind(kind)
    lo, hi = float(feature_range[0]), float(feature_range[1])
    if kind is ScalerKind.STANDARD:
        return ScalerParams(kind, x.mean(axis=0), x.std(axis=0), lo, hi)
    mn = x.min(axis=0)
    return ScalerParams(kind, mn, x.max(axis=0) - mn, lo, hi)


def scaler_transform(data, params: ScalerParams):
    x = _features(data)
    if x.shape[1] != params.center.shape[0]:
        raise DataError(f"scaler fitted on {params.center.shape[0]} features, got {x.shape[1]}")
    live = params.spread > 0
    safe = np.where(live, params.spread, 1.0)
    if params.kind is ScalerKind.STANDARD:
        out = np.where(live, (x - params.center) / safe, 0.0)
    else:
        unit = (x - params.center) / safe
        out = np.where(live, params.lo + unit * (params.hi - params.lo), 0.5 * (params.lo + params.hi))
    return _rewrap(data, out)


def scaler_inverse(data, params: ScalerParams):
    """Undo ``scaler_transform`` (degenerate features return their fitted center)."""
    x = _features(data)
    if params.kind is ScalerKind.STANDARD:
        out = x * params.spread + params.center
    else:
        out = (x - params.lo) / (params.hi - params.lo) * params.spread + params.center
    return _rewrap(data, out)


# -- PCA ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise DataError("matrix is not symmetric")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def pca_fit(data, k: int) -> PcaModel:
    x = _features(data)
    n, d = x.shape
    if not 1 <= k <= d:
        raise DataError(f"k must be in [1, {d}], got {k}")
    if n < 2:
        raise DataError("PCA needs at least two samples")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = jacobi_eigh(cov)
    comps = vecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps, np.clip(vals[:k], 0.0, None))


def pca_transform(data, model: PcaModel):
    x = _features(data)
    if x.shape[1] != model.mean.shape[0]:
        raise DataError(f"PCA fitted on {model.mean.shape[0]} features, got {x.shape[1]}")
    return _rewrap(data, (x - model.mean) @ model.components.T)


def pca_inverse(reduced, model: PcaModel):
    z = _features(reduced)
    return _rewrap(reduced, z @ model.components + model.mean)


# -- splitting / partitioning / balancing --------------------------------------


@dataclass(frozen=True)
class PartitionPlan:
    num_devices: int
    shards: tuple[tuple[int, ...], ...]
    server_val: tuple[int, ...]
    server_test: tuple[int, ...]

    @property
    def holdout(self) -> tuple[int, ...]:
        return self.server_val + self.server_test


def partition(
    data,
    num_devices: int,
    server_val_count: int = 0,
    server_test_count: int = 0,
    seed: int | np.random.Generator = 0,
) -> PartitionPlan:
    """Shuffle, carve off the server holdouts, then deal equal IID shards."""
    n = len(data) if isinstance(data, LabeledDataset) else int(data)
    if num_devices < 1:
        raise DataError(f"need at least one device, got {num_devices}")
    if server_val_count < 0 or server_test_count < 0:
        raise DataError("holdout counts must be non-negative")
    if num_devices + server_val_count + server_test_count > n:
        raise DataError(
            f"{n} samples cannot cover {num_devices} device(s) plus "
            f"{server_val_count + server_test_count} server holdout samples"
        )
    order = as_generator(seed).permutation(n)
    val = tuple(int(i) for i in order[:server_val_count])
    test = tuple(int(i) for i in order[server_val_count : server_val_count + server_test_count])
    pool = order[server_val_count + server_test_count :]
    base, extra = divmod(pool.size, num_devices)
    shards, start = [], 0
    for k in range(num_devices):
        size = base + (1 if k < extra else 0)
        shards.append(tuple(int(i) for i in pool[start : start + size]))
        start += size
    return PartitionPlan(num_devices, tuple(shards), val, test)


def balance_indices(labels: np.ndarray, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Indices that undersample every present class to the smallest class count."""
    labels = np.asarray(labels)
    rng = as_generator(seed)
    present = np.unique(labels)
    if present.size == 0:
        return np.zeros(0, dtype=np.int64)
    target = min(int(np.sum(labels == c)) for c in present)
    keep = [rng.choice(np.flatnonzero(labels == c), size=target, replace=False) for c in present]
    idx = np.concatenate(keep)
    return idx[rng.permutation(idx.size)]


def balance_classes(data: LabeledDataset, seed: int | np.random.Generator = 0) -> LabeledDataset:
    return data.subset(balance_indices(data.labels, seed))


def train_test_split(
    data: LabeledDataset, train_fraction: float, seed: int | np.random.Generator = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must be in (0, 1), got {train_fraction}")
    order = as_generator(seed).permutation(len(data))
    cut = int(round(train_fraction * len(data)))
    return data.subset(order[:cut]), data.subset(order[cut:])


# -- CSV -----------------------------------------------------------------------


def label_encode(raw_labels: Sequence) -> tuple[np.ndarray, dict[str, int]]:
    """Map distinct labels to 0..C-1 in first-appearance order."""
    mapping: dict[str, int] = {}
    out = np.empty(len(raw_labels), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        key = str(lab).strip()
        if key not in mapping:
            mapping[key] = len(mapping)
        out[i] = mapping[key]
    return out, mapping


def load_csv(path: str | Path) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    if not body:
        raise DataError(f"{path}: no data rows")
    feats, raw = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:-1]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        raw.append(row[-1])
    labels, mapping = label_encode(raw)
    names = tuple(mapping)
    return LabeledDataset(np.array(feats), labels, names)


def write_csv(data: LabeledDataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = data.label_names
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(data.n_features)] + ["label"])
        for row, lab in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [names[lab] if names else int(lab)])


def _features(data) -> np.ndarray:
    x = data.features if isinstance(data, LabeledDataset) else np.asarray(data, dtype=float)
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _rewrap(data, features: np.ndarray):
    if isinstance(data, LabeledDataset):
        return LabeledDataset(features, data.labels, data.label_names)
    return features
