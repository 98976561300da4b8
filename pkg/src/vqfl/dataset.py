from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix (samples x features) with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=float)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        labels = np.array(self.labels).reshape(-1)
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if feats.shape[0] != labels.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        feats.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> LabeledDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.label_names)

    def class_counts(self, num_classes: int | None = None) -> np.ndarray:
        size = num_classes if num_classes is not None else (int(self.labels.max()) + 1 if len(self) else 0)
        return np.bincount(self.labels, minlength=size)
