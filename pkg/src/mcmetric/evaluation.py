"""kNN classification under a learned transform and the cross-validation harness.

Protocol: ``runs`` independent random stratified splits into ``folds`` folds;
each fold is the test set once. Features are min-max scaled with the
training fold's statistics, a transform is learned on the training fold,
and the test error is computed for every k from 1 to ``k_max``.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .core import Dataset, FeatureScaler, _as_transform, cross_sq_distances
from .objective import NcaEnergy
from .solvers import GradientConfig, OptimizerConfig, derive_seed, fit_dmlfe, fit_nca_gradient, multi_quench


def _check_transform(A, d: int) -> np.ndarray:
    A = _as_transform(A)
    if A.shape[1] != d:
        raise ValueError(f"transform has {A.shape[1]} columns, data has {d} features")
    return A


def knn_predictions(train: Dataset, A, queries, k_max: int) -> np.ndarray:
    """Predicted labels for every query and every k in ``1..K``, shape (M, K).

    ``K = min(k_max, len(train))``. Neighbours at equal distance are taken in
    training order. A vote tie goes to the class whose voters have the
    smaller summed squared distance, then to the smaller class id.
    """
    A = _check_transform(A, train.n_features)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != train.n_features:
        raise ValueError(f"queries have {queries.shape[1]} features, training data {train.n_features}")
    K = min(int(k_max), train.n_patterns)
    if K < 1:
        raise ValueError("k must be at least 1")
    D = cross_sq_distances(queries @ A.T, train.patterns @ A.T)
    order = np.argsort(D, axis=1, kind="stable")[:, :K]
    classes, idx = np.unique(train.labels, return_inverse=True)
    votes = idx[order]
    dist = np.take_along_axis(D, order, axis=1)
    onehot = votes[..., None] == np.arange(classes.size)
    counts = np.cumsum(onehot, axis=1)
    sums = np.cumsum(np.where(onehot, dist[..., None], 0.0), axis=1)
    top = counts == counts.max(axis=2, keepdims=True)
    sums = np.where(top, sums, np.inf)
    winner = top & (sums == sums.min(axis=2, keepdims=True))
    return classes[np.argmax(winner, axis=2)]


def knn_predict(train: Dataset, A, k: int, query) -> int:
    """Majority vote of the k nearest training patterns under ``A``."""
    k = min(int(k), train.n_patterns)
    return int(knn_predictions(train, A, np.asarray(query)[None, :], k)[0, k - 1])


def knn_error_curve(train: Dataset, test: Dataset, A, k_max: int) -> np.ndarray:
    """Test error in percent for k = 1..min(k_max, len(train))."""
    if test.n_patterns == 0:
        raise ValueError("empty test set")
    pred = knn_predictions(train, A, test.patterns, k_max)
    return 100.0 * np.mean(pred != test.labels[:, None], axis=0)


def best_k_error(train: Dataset, test: Dataset, A, k_max: int = 40) -> tuple[int, float]:
    """Lowest test error over k and the smallest k attaining it."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    curve = knn_error_curve(train, test, A, k_max)
    k = int(np.argmin(curve))
    return k + 1, float(curve[k])


# metric-producing procedures: called as method(train, seed) -> transform


@dataclass(frozen=True)
class Euclidean:
    name: str = "euclidean"

    def __call__(self, train: Dataset, seed: int) -> np.ndarray:
        return np.eye(train.n_features)


@dataclass(frozen=True)
class Dmlfe:
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    name: str = "dmlfe"
    model: object = field(default_factory=NcaEnergy)

    def __call__(self, train: Dataset, seed: int) -> np.ndarray:
        return fit_dmlfe(train, self.model, replace(self.config, seed=seed)).best_transform


@dataclass(frozen=True)
class DmlfeQuench:
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    restarts: int = 20
    name: str = "dmlfe-quench"
    model: object = field(default_factory=NcaEnergy)

    def __call__(self, train: Dataset, seed: int) -> np.ndarray:
        return multi_quench(train, self.model, replace(self.config, seed=seed), self.restarts).best_transform


@dataclass(frozen=True)
class NcaGradient:
    config: GradientConfig = field(default_factory=GradientConfig)
    name: str = "nca-gd"

    def __call__(self, train: Dataset, seed: int) -> np.ndarray:
        return fit_nca_gradient(train, replace(self.config, seed=seed)).best_transform


@dataclass(frozen=True)
class CvPlan:
    runs: int = 5
    folds: int = 2
    seed: int = 0
    k_max: int = 40
    k_selection: str = "average"
    normalization: str = "fold"

    def __post_init__(self):
        if self.runs < 1 or self.folds < 2 or self.k_max < 1:
            raise ValueError("runs >= 1, folds >= 2 and k_max >= 1 are required")
        if self.k_selection not in ("average", "per-fold"):
            raise ValueError(f"unknown k_selection {self.k_selection!r}")
        if self.normalization not in ("fold", "global", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def fold_assignment(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Random fold id per pattern, stratified by class when every class can be."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < folds:
        warnings.warn(
            f"a class has fewer than {folds} members; using an unstratified split", stacklevel=2
        )
        order = rng.permutation(labels.size)
    else:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
    fold = np.empty(labels.size, dtype=np.int64)
    fold[order] = np.arange(labels.size) % folds
    return fold


@dataclass
class ExperimentResult:
    method: str
    dataset: str
    mean_error: float
    per_evaluation_errors: list[float]
    best_k: int
    mean_error_by_k: list[float] = field(default_factory=list)


def _cv_job(job):
    method, train, test, seed, k_max = job
    A = method(train, seed)
    return knn_error_curve(train, test, A, k_max), A


def evaluate_jobs(jobs, workers: int = 1):
    """(error curve, transform) per job, in job order."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_cv_job, jobs))
    return [_cv_job(job) for job in jobs]


def cv_jobs(ds: Dataset, method, plan: CvPlan, name: str):
    """(method, train, test, seed, k_max) for every run and fold, in order."""
    if plan.normalization == "global":
        ds = FeatureScaler.fit(ds).apply(ds)
    jobs = []
    for run in range(plan.runs):
        rng = np.random.default_rng(derive_seed(plan.seed, ds.name, "split", run))
        fold = fold_assignment(ds.labels, plan.folds, rng)
        for f in range(plan.folds):
            train = ds.subset(np.flatnonzero(fold != f))
            test = ds.subset(np.flatnonzero(fold == f))
            if plan.normalization == "fold":
                scaler = FeatureScaler.fit(train)
                train, test = scaler.apply(train), scaler.apply(test)
            seed = derive_seed(plan.seed, ds.name, name, run, f)
            jobs.append((method, train, test, seed, plan.k_max))
    return jobs


def summarize_cv(curves, plan: CvPlan, method: str, dataset: str) -> ExperimentResult:
    K = min(len(c) for c in curves)
    E = np.array([c[:K] for c in curves])
    by_k = E.mean(axis=0)
    if plan.k_selection == "average":
        k = int(np.argmin(by_k))
        per_eval = E[:, k]
        best_k = k + 1
    else:
        ks = np.argmin(E, axis=1)
        per_eval = E[np.arange(len(E)), ks]
        values, counts = np.unique(ks, return_counts=True)
        best_k = int(values[np.argmax(counts)]) + 1
    return ExperimentResult(
        method, dataset, float(np.mean(per_eval)), [float(e) for e in per_eval], best_k, [float(v) for v in by_k]
    )


def run_cv(ds: Dataset, method, plan: CvPlan | None = None, name: str | None = None, workers: int = 1) -> ExperimentResult:
    """Mean kNN test error of ``method`` over the runs x folds protocol.

    Every (run, fold) job is seeded independently of scheduling, so the
    result does not depend on ``workers``.
    """
    plan = CvPlan() if plan is None else plan
    name = name or getattr(method, "name", "method")
    outcomes = evaluate_jobs(cv_jobs(ds, method, plan, name), workers)
    return summarize_cv([curve for curve, _ in outcomes], plan, name, ds.name)


@dataclass
class ErrorMatrix:
    """Error rates in percent, shape (methods, datasets)."""

    methods: list[str]
    datasets: list[str]
    errors: np.ndarray

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if self.errors.shape != (len(self.methods), len(self.datasets)):
            raise ValueError("errors shape does not match method and dataset names")
        if not np.all(np.isfinite(self.errors)):
            raise ValueError("error matrix has missing cells")
        if np.any((self.errors < 0) | (self.errors > 100)):
            raise ValueError("error rates must lie in [0, 100]")

    @classmethod
    def from_results(cls, results: list[ExperimentResult]) -> "ErrorMatrix":
        methods = list(dict.fromkeys(r.method for r in results))
        datasets = list(dict.fromkeys(r.dataset for r in results))
        E = np.full((len(methods), len(datasets)), np.nan)
        for r in results:
            E[methods.index(r.method), datasets.index(r.dataset)] = r.mean_error
        return cls(methods, datasets, E)

    def column(self, method: str) -> np.ndarray:
        return self.errors[self.methods.index(method)]

    def to_csv(self, path) -> None:
        """Rows are datasets, columns methods."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", *self.methods])
            for j, name in enumerate(self.datasets):
                w.writerow([name, *(repr(float(v)) for v in self.errors[:, j])])

    @classmethod
    def read_csv(cls, path) -> "ErrorMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        methods = rows[0][1:]
        datasets = [r[0] for r in rows[1:]]
        E = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).T
        return cls(methods, datasets, E)


def rank_methods(em: ErrorMatrix, ties: str = "min") -> np.ndarray:
    """Average rank of each method over datasets; rank 1 is the lowest error.

    Tied errors share the lowest of their rank positions by default
    (competition ranking), which is how published rank tables are usually
    built. ``ties="average"`` gives mid-ranks.
    """
    ranks = np.apply_along_axis(rankdata, 0, em.errors, method=ties)
    return ranks.mean(axis=1)


def write_results_csv(path, results: list[ExperimentResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "dataset", "mean_error", "best_k"])
        for r in results:
            w.writerow([r.method, r.dataset, repr(r.mean_error), r.best_k])


def write_results_json(path, results: list[ExperimentResult], em: ErrorMatrix | None = None) -> None:
    doc = {"results": [asdict(r) for r in results]}
    if em is not None:
        doc["error_matrix"] = {"methods": em.methods, "datasets": em.datasets, "errors": em.errors.tolist()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
