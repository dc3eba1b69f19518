"""Datasets, linear transforms and squared distances under a learned metric.

A metric is parameterized by a real matrix ``A`` of shape ``(r, d)``; the
induced squared distance is ``||A(u - v)||^2 = (u - v)^T M (u - v)`` with
``M = A^T A``. Squared distances are used everywhere, nothing takes a root.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """N patterns with d features and one integer class label each."""

    patterns: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        X = np.array(self.patterns, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.labels, copy=True).astype(np.int64).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"patterns must be a non-empty 2-D array, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} patterns")
        if not np.all(np.isfinite(X)):
            raise ValueError("patterns contain non-finite values")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "patterns", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_features(self) -> int:
        return self.patterns.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.patterns[index], self.labels[index], name or self.name)

    def with_patterns(self, patterns) -> "Dataset":
        return Dataset(patterns, self.labels, self.name)


def same_class(labels) -> np.ndarray:
    """Boolean matrix ``y[i, j] = labels[i] == labels[j]`` (diagonal is True)."""
    labels = np.asarray(labels)
    return labels[:, None] == labels[None, :]


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature min-max scaling onto [0, 1] using training statistics.

    Constant features map to 0. Data outside the training range is not
    clamped.
    """

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("scaler requires maximum >= minimum per feature")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @classmethod
    def fit(cls, ds: Dataset) -> "FeatureScaler":
        return cls(ds.patterns.min(axis=0), ds.patterns.max(axis=0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.minimum.shape[0]:
            raise ValueError(
                f"scaler fitted on {self.minimum.shape[0]} features, got {X.shape[-1]}"
            )
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.minimum) / safe, 0.0)

    def apply(self, ds: Dataset) -> Dataset:
        return ds.with_patterns(self.transform(ds.patterns))


def _as_transform(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"transform must be a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("transform contains non-finite entries")
    return A


def mahalanobis_distance(M, u, v) -> float:
    """Quadratic form ``(u - v)^T M (u - v)``."""
    M = np.asarray(M, dtype=np.float64)
    diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    if diff.ndim != 1 or M.shape != (diff.shape[0], diff.shape[0]):
        raise ValueError(f"matrix {M.shape} does not match vectors of length {diff.shape}")
    return float(diff @ M @ diff)


def transform_distance(A, u, v) -> float:
    """Squared Euclidean distance between ``Au`` and ``Av``."""
    A = _as_transform(A)
    diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    if diff.ndim != 1 or A.shape[1] != diff.shape[0]:
        raise ValueError(f"transform {A.shape} does not match vectors of length {diff.shape}")
    w = A @ diff
    return float(w @ w)


def to_quadratic(A) -> np.ndarray:
    """The positive semidefinite matrix ``A^T A``."""
    A = _as_transform(A)
    return A.T @ A


def compose_scale_rotation(tx: float, ty: float, theta: float) -> np.ndarray:
    """2x2 matrix scaling the axes by (tx, ty), then rotating by theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[tx * c, -ty * s], [tx * s, ty * c]])


def pairwise_sq_distances(Z) -> np.ndarray:
    """Squared distances between the rows of ``Z``; exact zero diagonal."""
    Z = np.asarray(Z, dtype=np.float64)
    diff = Z[:, None, :] - Z[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(D, 0.0)
    return D


def cross_sq_distances(Q, Z) -> np.ndarray:
    """Squared distances from each row of ``Q`` to each row of ``Z``."""
    Q = np.asarray(Q, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    # accumulate over coordinates to keep memory at O(len(Q) * len(Z))
    D = np.zeros((Q.shape[0], Z.shape[0]))
    for k in range(Q.shape[1]):
        diff = Q[:, k, None] - Z[None, :, k]
        D += diff * diff
    return D


@dataclass
class ProjectedDataset:
    """Cache of ``Z = X A^T`` and all pairwise squared distances.

    Mutable: :meth:`update_entry` changes one entry of the transform and
    refreshes the cache in O(N^2) instead of O(N^2 d). A single instance is
    meant to be owned by one optimizer run.
    """

    source: Dataset
    transform: np.ndarray
    projected: np.ndarray = field(repr=False)
    sq_distances: np.ndarray = field(repr=False)

    def copy(self) -> "ProjectedDataset":
        return ProjectedDataset(
            self.source, self.transform.copy(), self.projected.copy(), self.sq_distances.copy()
        )

    def _check_entry(self, row: int, col: int) -> None:
        r, d = self.transform.shape
        if not (0 <= row < r and 0 <= col < d):
            raise ValueError(f"entry ({row}, {col}) outside a {r}x{d} transform")

    def trial_sq_distances(self, row: int, col: int, delta: float) -> np.ndarray:
        """Distances if ``transform[row, col]`` were shifted by ``delta``."""
        self._check_entry(row, col)
        x = self.source.patterns[:, col]
        z = self.projected[:, row]
        dx = np.subtract.outer(x, x)
        dz = np.subtract.outer(z, z)
        return self.sq_distances + delta * dx * (2.0 * dz + delta * dx)

    def update_entry(self, row: int, col: int, delta: float) -> "ProjectedDataset":
        """Shift ``transform[row, col]`` by ``delta`` in place; returns self.

        Only coordinate ``row`` of every projected point moves, by
        ``delta * x[col]``.
        """
        self._check_entry(row, col)
        if not np.isfinite(delta):
            raise ValueError("delta must be finite")
        if delta == 0.0:
            return self
        self.sq_distances = self.trial_sq_distances(row, col, delta)
        self.projected[:, row] += delta * self.source.patterns[:, col]
        self.transform[row, col] += delta
        return self

    def commit_entry(self, row: int, col: int, delta: float, sq_distances: np.ndarray) -> np.ndarray:
        """Like :meth:`update_entry` with the edited distances precomputed.

        Returns the replaced distance matrix so its storage can be reused.
        """
        self._check_entry(row, col)
        previous, self.sq_distances = self.sq_distances, sq_distances
        self.projected[:, row] += delta * self.source.patterns[:, col]
        self.transform[row, col] += delta
        return previous

    def drift(self) -> float:
        """Largest deviation of the cached distances from a fresh projection."""
        fresh = project(self.transform, self.source)
        return float(np.max(np.abs(fresh.sq_distances - self.sq_distances), initial=0.0))

    def resync(self) -> None:
        fresh = project(self.transform, self.source)
        self.projected = fresh.projected
        self.sq_distances = fresh.sq_distances


def project(A, ds: Dataset) -> ProjectedDataset:
    """Apply ``A`` to every pattern and cache all pairwise squared distances."""
    A = _as_transform(A)
    if A.shape[1] != ds.n_features:
        raise ValueError(f"transform has {A.shape[1]} columns, dataset has {ds.n_features} features")
    Z = ds.patterns @ A.T
    return ProjectedDataset(ds, A.copy(), Z, pairwise_sq_distances(Z))


def save_transform(path, A) -> None:
    """Write ``A`` as text: a ``"r d"`` line, then r rows of d values."""
    A = _as_transform(A)
    lines = [f"{A.shape[0]} {A.shape[1]}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in A]
    Path(path).write_text("\n".join(lines) + "\n")


def load_transform(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty transform file")
    r, d = (int(t) for t in lines[0].split())
    rows = [[float(t) for t in ln.split()] for ln in lines[1:]]
    A = np.array(rows, dtype=np.float64)
    if A.shape != (r, d):
        raise ValueError(f"{path}: header says {r}x{d}, body is {A.shape}")
    return A
