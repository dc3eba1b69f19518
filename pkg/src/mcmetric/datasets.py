"""Dataset loading, builtin datasets and synthetic generators."""

from __future__ import annotations

import csv
import itertools
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Dataset


class ParseError(ValueError):
    """Malformed dataset file; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _dense_labels(raw) -> np.ndarray:
    # class ids in order of first appearance
    ids: dict[str, int] = {}
    return np.array([ids.setdefault(v, len(ids)) for v in raw], dtype=np.int64)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_dense_csv(path, label_column: int | str = "last", name: str | None = None) -> Dataset:
    """Comma-separated patterns with one label column.

    A first row with any non-numeric feature cell is treated as a header.
    Labels are mapped to 0-based ids in order of first appearance.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if any(c.strip() for c in row)]
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc}") from exc
    if not rows:
        raise ParseError(path, 0, "no data rows")
    width = len(rows[0][1])
    col = width - 1 if label_column == "last" else int(label_column)
    if not -width <= col < width:
        raise ParseError(path, rows[0][0], f"label column {label_column} outside {width} fields")
    col %= width

    def features(row):
        return [c.strip() for k, c in enumerate(row) if k != col]

    if not all(_is_number(c) for c in features(rows[0][1])):
        rows = rows[1:]
    patterns, raw_labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise ParseError(path, lineno, f"expected {width} fields, found {len(row)}")
        try:
            patterns.append([float(c) for c in features(row)])
        except ValueError:
            raise ParseError(path, lineno, "non-numeric feature value") from None
        raw_labels.append(row[col].strip())
    if not patterns:
        raise ParseError(path, 0, "no data rows")
    return Dataset(np.array(patterns), _dense_labels(raw_labels), name or path.stem)


def save_dense_csv(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{k + 1}" for k in range(ds.n_features)] + ["class"])
        for x, y in zip(ds.patterns, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_sparse(path, name: str | None = None) -> Dataset:
    """LIBSVM-style lines ``label idx:val ...`` with 1-based, increasing indices.

    Missing features are 0; the dimension is the largest index seen.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc}") from exc
    entries, raw_labels = [], []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        raw_labels.append(tokens[0])
        row, last = {}, 0
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            try:
                k, v = int(idx), float(val)
            except ValueError:
                raise ParseError(path, lineno, f"malformed token {tok!r}") from None
            if not sep or k < 1:
                raise ParseError(path, lineno, f"malformed token {tok!r}")
            if k <= last:
                raise ParseError(path, lineno, f"index {k} does not increase")
            row[k], last = v, k
        entries.append(row)
    if not entries:
        raise ParseError(path, 0, "no data rows")
    d = max((max(r) for r in entries if r), default=1)
    X = np.zeros((len(entries), d))
    for i, row in enumerate(entries):
        for k, v in row.items():
            X[i, k - 1] = v
    return Dataset(X, _dense_labels(raw_labels), name or path.stem)


def balance_scale() -> Dataset:
    """The balance-scale problem: every weight/distance combination in 1..5.

    The class is which way the scale tips (left torque ``LW * LD`` against
    right torque ``RW * RD``).
    """
    X = np.array(list(itertools.product(range(1, 6), repeat=4)), dtype=np.float64)
    left, right = X[:, 0] * X[:, 1], X[:, 2] * X[:, 3]
    raw = np.where(left > right, "L", np.where(left < right, "R", "B"))
    return Dataset(X, _dense_labels(raw), "balance")


def _bundled(name: str) -> Dataset:
    with resources.as_file(resources.files("mcmetric") / "data" / f"{name}.csv") as path:
        return load_dense_csv(path, name=name)


BUILTINS = {
    "iris": lambda: _bundled("iris"),
    "wine": lambda: _bundled("wine"),
    "balance": balance_scale,
}

SYNTHETIC_KINDS = ("two-gaussians", "three-class-rings", "xor")


def _class_sizes(n: int, k: int) -> list[int]:
    return [n // k + (c < n % k) for c in range(k)]


def generate_synthetic(kind: str, n: int, seed: int = 0) -> Dataset:
    """Small labelled point clouds; rows grouped by class, sizes within 1.

    ``two-gaussians``
        Two isotropic blobs, well separated along the first axis.
    ``three-class-rings``
        Three concentric noisy rings squashed along the second axis, so
        that neighbours across rings are closer than along them.
    ``xor``
        Four blobs at the corners of a square, opposite corners sharing a
        class, plus a noisy, uninformative third coordinate scaled large.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    rng = np.random.default_rng(seed)
    if kind == "two-gaussians":
        sizes = _class_sizes(n, 2)
        centers = np.array([[0.0, 0.0], [4.0, 0.0]])
        X = np.vstack([rng.normal(centers[c], 1.0, size=(m, 2)) for c, m in enumerate(sizes)])
    elif kind == "three-class-rings":
        sizes = _class_sizes(n, 3)
        parts = []
        for c, m in enumerate(sizes):
            angle = rng.uniform(0, 2 * np.pi, m)
            radius = (c + 1) + rng.normal(0, 0.1, m)
            parts.append(np.column_stack([radius * np.cos(angle), 0.15 * radius * np.sin(angle)]))
        X = np.vstack(parts)
    elif kind == "xor":
        sizes = _class_sizes(n, 2)
        parts = []
        for c, m in enumerate(sizes):
            corners = np.array([[1.0, 1.0], [-1.0, -1.0]]) if c == 0 else np.array([[1.0, -1.0], [-1.0, 1.0]])
            pick = corners[rng.integers(0, 2, m)]
            xy = pick + rng.normal(0, 0.25, size=(m, 2))
            parts.append(np.column_stack([xy, rng.normal(0, 3.0, m)]))
        X = np.vstack(parts)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    y = np.repeat(np.arange(len(sizes)), sizes)
    return Dataset(X, y, kind)


def resolve_dataset(spec: str, label_column: int | str = "last") -> Dataset:
    """A builtin or synthetic name, or a path (``.csv`` dense, else sparse)."""
    if spec in BUILTINS:
        return BUILTINS[spec]()
    if spec in SYNTHETIC_KINDS:
        return generate_synthetic(spec, 60, seed=0)
    path = Path(spec)
    if not path.is_file():
        raise FileNotFoundError(f"dataset {spec!r} is neither a builtin nor a readable file")
    if path.suffix.lower() == ".csv":
        return load_dense_csv(path, label_column)
    return load_sparse(path)
