"""Nonparametric comparison of methods over datasets.

Wilcoxon signed-rank for paired columns, the Friedman test over the whole
error matrix, and Nemenyi / Bonferroni-Dunn post-hoc comparisons against a
control method by critical difference of average ranks. Only alpha = 0.05
is tabled for the post-hoc tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, rankdata

from .evaluation import ErrorMatrix, rank_methods

REJECTED = "Rejected"
ACCEPTED = "Accepted"
NEMENYI = "nemenyi"
BONFERRONI_DUNN = "bonferroni-dunn"


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    p_value: float
    alpha: float = 0.05

    __test__ = False  # not a pytest class

    @property
    def rejected(self) -> bool:
        return self.p_value < self.alpha

    @property
    def decision(self) -> str:
        return REJECTED if self.rejected else ACCEPTED


# q_alpha at alpha = 0.05 for n_c = 2..20.
# Nemenyi: studentized range quantile (infinite df) over sqrt(2).
# Bonferroni-Dunn: two-sided normal quantile at alpha / (n_c - 1).
CRITICAL_VALUES = {
    NEMENYI: (
        1.960, 2.344, 2.569, 2.728, 2.850, 2.948, 3.031, 3.102, 3.164, 3.219,
        3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517, 3.544,
    ),
    BONFERRONI_DUNN: (
        1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.734, 2.773, 2.807,
        2.838, 2.865, 2.891, 2.914, 2.935, 2.955, 2.974, 2.991, 3.008,
    ),
}
MIN_METHODS, MAX_METHODS = 2, 20


def critical_value(kind: str, n_c: int) -> float:
    if kind not in CRITICAL_VALUES:
        raise ValueError(f"unknown post-hoc test {kind!r}; choose from {sorted(CRITICAL_VALUES)}")
    if not MIN_METHODS <= n_c <= MAX_METHODS:
        raise ValueError(f"critical values are tabled for {MIN_METHODS}..{MAX_METHODS} methods, got {n_c}")
    return CRITICAL_VALUES[kind][n_c - MIN_METHODS]


def critical_difference(kind: str, n_c: int, n_t: int) -> float:
    """Smallest average-rank gap that is significant at alpha = 0.05."""
    if n_t < 1:
        raise ValueError("need at least one dataset")
    return critical_value(kind, n_c) * math.sqrt(n_c * (n_c + 1) / (6.0 * n_t))


def _normal_two_sided(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(a, b, alpha: float = 0.05) -> TestOutcome:
    """Two-sided Wilcoxon signed-rank test, normal approximation.

    Zero differences are dropped and tied magnitudes share mid-ranks. The
    variance carries the tie correction and the z score a continuity
    correction of 1/2. The statistic is ``min(W+, W-)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    diff = a - b
    diff = diff[diff != 0]
    n = diff.size
    if n < 6:
        raise InsufficientDataError(f"{n} nonzero differences; the normal approximation needs at least 6")
    ranks = rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    t = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(diff), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    z = (t - mean + 0.5) / math.sqrt(var) if t < mean else 0.0
    return TestOutcome(t, _normal_two_sided(z), alpha)


def friedman_test(em: ErrorMatrix, alpha: float = 0.05) -> TestOutcome:
    """Friedman chi-square over mid-rank average ranks, ``n_c - 1`` dof."""
    n_c, n_t = em.errors.shape
    if n_c < 2 or n_t < 2:
        raise ValueError("need at least two methods and two datasets")
    R = rank_methods(em, ties="average")
    stat = 12.0 * n_t / (n_c * (n_c + 1)) * (float(np.sum(R**2)) - n_c * (n_c + 1) ** 2 / 4.0)
    stat = max(stat, 0.0)
    p = 1.0 if stat == 0.0 else float(chi2.sf(stat, n_c - 1))
    return TestOutcome(stat, p, alpha)


@dataclass(frozen=True)
class PostHocDecision:
    method: str
    rank_gap: float
    critical_difference: float

    @property
    def rejected(self) -> bool:
        return self.rank_gap >= self.critical_difference

    @property
    def decision(self) -> str:
        return REJECTED if self.rejected else ACCEPTED


def post_hoc(em: ErrorMatrix, control: str, kind: str = NEMENYI, alpha: float = 0.05, ties: str = "min") -> list[PostHocDecision]:
    """Compare every method's average rank with the control's.

    A method differs from the control iff the rank gap reaches the critical
    difference. ``ties`` is passed to the ranking (competition ranks by default).
    """
    if alpha != 0.05:
        raise ValueError("critical values are tabled for alpha = 0.05 only")
    if control not in em.methods:
        raise ValueError(f"control {control!r} not among methods {em.methods}")
    n_c, n_t = em.errors.shape
    cd = critical_difference(kind, n_c, n_t)
    R = rank_methods(em, ties=ties)
    rc = R[em.methods.index(control)]
    return [PostHocDecision(m, float(abs(r - rc)), cd) for m, r in zip(em.methods, R)]


@dataclass
class ComparisonReport:
    """Ranks, omnibus test and per-method decisions against one control."""

    control: str
    methods: list[str]
    all_methods: list[str]
    average_ranks: np.ndarray
    friedman: TestOutcome
    wilcoxon: dict
    nemenyi: dict
    bonferroni_dunn: dict
    n_datasets: int = 0

    @property
    def cd_nemenyi(self) -> float:
        return critical_difference(NEMENYI, len(self.all_methods), self.n_datasets)

    @property
    def cd_bonferroni_dunn(self) -> float:
        return critical_difference(BONFERRONI_DUNN, len(self.all_methods), self.n_datasets)


def compare_to_control(em: ErrorMatrix, control: str, alpha: float = 0.05) -> ComparisonReport:
    if control not in em.methods:
        raise ValueError(f"control {control!r} not among methods {em.methods}")
    others = [m for m in em.methods if m != control]
    wil = {}
    for m in others:
        try:
            wil[m] = wilcoxon_signed_rank(em.column(control), em.column(m), alpha)
        except InsufficientDataError:
            wil[m] = None
    nem = {d.method: d for d in post_hoc(em, control, NEMENYI, alpha) if d.method != control}
    bd = {d.method: d for d in post_hoc(em, control, BONFERRONI_DUNN, alpha) if d.method != control}
    return ComparisonReport(
        control, others, list(em.methods), rank_methods(em), friedman_test(em, alpha), wil, nem, bd, len(em.datasets)
    )


def write_decisions_csv(path, report: ComparisonReport) -> None:
    """``method,wilcoxon,nemenyi,bonferroni_dunn``; too few pairs gives ``NA``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "wilcoxon", "nemenyi", "bonferroni_dunn"])
        for m in report.methods:
            wil = report.wilcoxon[m]
            w.writerow([m, "NA" if wil is None else wil.decision, report.nemenyi[m].decision, report.bonferroni_dunn[m].decision])


def write_ranks_csv(path, report: ComparisonReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "average_rank"])
        for m, r in zip(report.all_methods, report.average_ranks):
            w.writerow([m, repr(float(r))])
        w.writerow(["friedman_statistic", repr(report.friedman.statistic)])
        w.writerow(["friedman_p_value", repr(report.friedman.p_value)])
