"""Seeded synthetic datasets: Gaussian blobs (ID), a ring (OOD), noisy copies."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_NOISE_SIGMAS",
    "OOD_LABEL",
    "LabeledDataset",
    "Standardizer",
    "class_means",
    "gaussian_blobs",
    "ood_ring",
    "add_noise",
    "stratified_split",
    "write_csv",
    "read_csv",
]

OOD_LABEL = -1
DEFAULT_NOISE_SIGMAS = tuple(round(0.025 * k, 3) for k in range(1, 9))


@dataclass(frozen=True)
class LabeledDataset:
    """Features (n, d), one-hot labels (n, C) and a per-row origin tag.

    OOD rows carry an all-zero label row (class index ``OOD_LABEL``) and must
    not be used for training.  Origins are ``"id"``, ``"ood"`` or
    ``"noisy(<sigma>)"``.
    """

    features: np.ndarray
    labels: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        o = np.asarray(self.origin, dtype=object)
        if x.ndim != 2 or y.ndim != 2 or o.ndim != 1:
            raise ValueError("features and labels must be 2-D, origin 1-D")
        if not (x.shape[0] == y.shape[0] == o.shape[0]):
            raise ValueError("row counts differ")
        is_ood = o == "ood"
        sums = y.sum(axis=1)
        if np.any(sums[is_ood] != 0) or np.any(sums[~is_ood] != 1) or np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be one-hot, all-zero for ood rows")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "origin", o)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def label_index(self) -> np.ndarray:
        idx = self.labels.argmax(axis=1)
        return np.where(self.labels.sum(axis=1) > 0, idx, OOD_LABEL)

    @property
    def is_ood(self) -> np.ndarray:
        return self.origin == "ood"

    def subset(self, rows) -> LabeledDataset:
        return LabeledDataset(self.features[rows], self.labels[rows], self.origin[rows])

    def with_features(self, features) -> LabeledDataset:
        return LabeledDataset(features, self.labels, self.origin)

    @staticmethod
    def concat(parts: list[LabeledDataset]) -> LabeledDataset:
        return LabeledDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.origin for p in parts]),
        )


def class_means(num_classes: int, dim: int, radius: float) -> np.ndarray:
    """Class centres evenly spaced on a circle in the first two coordinates."""
    theta = 2.0 * np.pi * np.arange(num_classes) / num_classes
    mu = np.zeros((num_classes, dim))
    mu[:, 0] = radius * np.cos(theta)
    mu[:, 1] = radius * np.sin(theta)
    return mu


def gaussian_blobs(
    num_classes: int,
    n_per_class: int,
    dim: int = 2,
    spread: float = 1.0,
    seed: int = 0,
    radius: float = 3.0,
) -> LabeledDataset:
    """Isotropic Gaussian classes centred by :func:`class_means`."""
    if num_classes < 2 or dim < 2 or n_per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 2 and n_per_class >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    mu = class_means(num_classes, dim, radius)
    idx = np.repeat(np.arange(num_classes), n_per_class)
    x = mu[idx] + spread * rng.standard_normal((idx.size, dim))
    y = np.eye(num_classes)[idx]
    return LabeledDataset(x, y, np.full(idx.size, "id", dtype=object))


def ood_ring(n: int, dim: int, radius: float, seed: int = 0, num_classes: int = 2, width: float = 0.1) -> LabeledDataset:
    """Points with uniform direction and norm uniform in radius*(1 +- width)."""
    if n < 1 or dim < 2:
        raise ValueError("need n >= 1 and dim >= 2")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(1.0 - width, 1.0 + width, size=(n, 1))
    return LabeledDataset(direction * r, np.zeros((n, num_classes)), np.full(n, "ood", dtype=object))


def add_noise(ds: LabeledDataset, sigmas=DEFAULT_NOISE_SIGMAS, seed: int = 0) -> list[LabeledDataset]:
    """One copy of ``ds`` per sigma with i.i.d. N(0, sigma^2) added to every feature."""
    out = []
    for i, sigma in enumerate(sigmas):
        if sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        rng = np.random.default_rng([seed, i])
        x = ds.features + sigma * rng.standard_normal(ds.features.shape)
        out.append(LabeledDataset(x, ds.labels, np.full(len(ds), f"noisy({sigma:g})", dtype=object)))
    return out


def stratified_split(ds: LabeledDataset, fractions, seed: int = 0) -> list[LabeledDataset]:
    """Split every class by ``fractions`` (summing to 1); reproducible per seed.

    Row counts per class are floor(fraction * n_c), with the remainder going
    to the first part.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    labels = ds.label_index
    parts: list[list[int]] = [[] for _ in fractions]
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        rows = rows[rng.permutation(rows.size)]
        counts = np.floor(fractions * rows.size).astype(int)
        counts[0] += rows.size - counts.sum()
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(len(fractions)):
            parts[k].extend(rows[bounds[k] : bounds[k + 1]])
    return [ds.subset(np.sort(np.asarray(p, dtype=int))) for p in parts]


class Standardizer:
    """Zero-mean / unit-variance scaling with statistics from one dataset."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, x) -> Standardizer:
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        return ds.with_features(self(ds.features))


def write_csv(ds: LabeledDataset, path) -> None:
    """Header ``x0..x{d-1},label,origin``; label is -1 on OOD rows."""
    labels = ds.label_index
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(ds.dim)] + ["label", "origin"])
        for row, lab, org in zip(ds.features, labels, ds.origin):
            w.writerow([repr(float(v)) for v in row] + [int(lab), org])


def read_csv(path, num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[-2:] != ["label", "origin"]:
            raise ValueError(f"{path}: expected trailing 'label,origin' columns")
        d = len(header) - 2
        rows = list(r)
    x = np.array([[float(v) for v in row[:d]] for row in rows]).reshape(len(rows), d)
    lab = np.array([int(row[d]) for row in rows], dtype=int)
    origin = np.array([row[d + 1] for row in rows], dtype=object)
    c = num_classes if num_classes is not None else int(lab.max(initial=-1)) + 1
    if c < 1 or lab.max(initial=-1) >= c:
        raise ValueError(f"{path}: cannot infer class count; pass num_classes")
    y = np.zeros((len(rows), c))
    keep = lab >= 0
    y[np.flatnonzero(keep), lab[keep]] = 1.0
    return LabeledDataset(x, y, origin)
