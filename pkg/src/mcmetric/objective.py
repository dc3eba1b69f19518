"""Energy functions over a transform and a labelled dataset.

``nca_energy`` is the expected leave-one-out error of stochastic
nearest-neighbour classification; ``lmnn_energy`` is the large-margin hinge
energy over fixed target neighbours. Both are functions of the pairwise
squared-distance matrix alone, which is what makes the single-entry
incremental evaluation in :class:`EnergyState` possible.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numba
import numpy as np

from .core import Dataset, ProjectedDataset, _as_transform, pairwise_sq_distances, project, same_class

# no "reassoc": keeps the polynomial below evaluated in written order
_FAST = {"nnan", "ninf", "nsz", "arcp", "contract", "afn"}
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e00


def _check_supervised(ds: Dataset) -> None:
    if ds.n_patterns < 2:
        raise ValueError("at least two patterns are required")


def _neighbor_weights(D):
    """Row-stabilized ``exp(-D)`` with the diagonal excluded, and row sums."""
    D = np.array(D, dtype=np.float64, copy=True)
    np.fill_diagonal(D, np.inf)
    W = np.exp(D.min(axis=1, keepdims=True) - D)
    return W, W.sum(axis=1)


def nca_energy_from_sqdist(D, same) -> float:
    W, total = _neighbor_weights(D)
    hit = np.where(same, W, 0.0).sum(axis=1)
    return float(1.0 - np.mean(hit / total))


def stochastic_neighbor_probs(pd: ProjectedDataset) -> np.ndarray:
    """Softmax over negative squared distances, excluding self (p_ii = 0)."""
    _check_supervised(pd.source)
    W, total = _neighbor_weights(pd.sq_distances)
    return W / total[:, None]


def nca_energy(A, ds: Dataset) -> float:
    """One minus the expected leave-one-out accuracy; lies in [0, 1]."""
    _check_supervised(ds)
    pd = project(A, ds)
    return nca_energy_from_sqdist(pd.sq_distances, same_class(ds.labels))


def nca_gradient(A, ds: Dataset) -> np.ndarray:
    """Exact gradient of :func:`nca_energy` with respect to ``A``.

    With ``x_ij = x_i - x_j`` and ``p_i = sum_j y_ij p_ij``::

        dE/dA = -(2/N) A sum_ij (p_i p_ij - y_ij p_ij) x_ij x_ij^T
    """
    A = _as_transform(A)
    _check_supervised(ds)
    pd = project(A, ds)
    P = stochastic_neighbor_probs(pd)
    Y = same_class(ds.labels)
    p_correct = np.where(Y, P, 0.0).sum(axis=1)
    W = p_correct[:, None] * P - np.where(Y, P, 0.0)
    # sum_ij W_ij (x_i - x_j)(x_i - x_j)^T as a weighted graph Laplacian
    S = W + W.T
    L = np.diag(S.sum(axis=1)) - S
    X = ds.patterns
    return -(2.0 / ds.n_patterns) * A @ (X.T @ L @ X)


@numba.njit(cache=True, fastmath=_FAST)
def _exp_nonpositive(x, out, ibuf):
    # exp for x <= 0 in a branch-free form the compiler can vectorize;
    # Cody-Waite reduction, degree-12 Taylor on |r| <= ln2/2, 2^m via exponent bits
    n = x.shape[0]
    for k in range(n):
        v = max(x[k], -700.0)
        m = np.floor(v * _INV_LN2 + 0.5)
        r = (v - m * _LN2_HI) - m * _LN2_LO
        out[k] = 1.0 + r * (1.0 + r * (1 / 2 + r * (1 / 6 + r * (1 / 24 + r * (1 / 120 + r * (
            1 / 720 + r * (1 / 5040 + r * (1 / 40320 + r * (1 / 362880 + r * (
                1 / 3628800 + r * (1 / 39916800 + r * (1 / 479001600))))))))))))
        ibuf[k] = (np.int64(m) + 1023) << 52
    scale = ibuf.view(np.float64)
    for k in range(n):
        out[k] *= scale[k]


# reductions use four explicit lanes since reassociation is disabled


@numba.njit(cache=True, fastmath=_FAST)
def _row_min(v):
    n = v.shape[0]
    m = n - n % 4
    a0 = a1 = a2 = a3 = 1e300
    for j in range(0, m, 4):
        a0 = min(a0, v[j])
        a1 = min(a1, v[j + 1])
        a2 = min(a2, v[j + 2])
        a3 = min(a3, v[j + 3])
    for j in range(m, n):
        a0 = min(a0, v[j])
    return min(min(a0, a1), min(a2, a3))


@numba.njit(cache=True, fastmath=_FAST)
def _row_sums(w, same):
    n = w.shape[0]
    m = n - n % 4
    s0 = s1 = s2 = s3 = 0.0
    t0 = t1 = t2 = t3 = 0.0
    for j in range(0, m, 4):
        s0 += w[j]
        s1 += w[j + 1]
        s2 += w[j + 2]
        s3 += w[j + 3]
        t0 += w[j] * same[j]
        t1 += w[j + 1] * same[j + 1]
        t2 += w[j + 2] * same[j + 2]
        t3 += w[j + 3] * same[j + 3]
    for j in range(m, n):
        s0 += w[j]
        t0 += w[j] * same[j]
    return (s0 + s1) + (s2 + s3), (t0 + t1) + (t2 + t3)


@numba.njit(cache=True, fastmath=_FAST)
def _nca_trial_energy(D, z, x, delta, same, out, arg, w, ibuf):
    # writes D_ij + delta * dx_ij * (2 dz_ij + delta * dx_ij) into out and
    # returns the NCA energy of that distance matrix
    n = D.shape[0]
    total = 0.0
    for i in range(n):
        zi = z[i]
        xi = x[i]
        row = out[i]
        for j in range(n):
            dx = xi - x[j]
            row[j] = D[i, j] + delta * dx * (2.0 * (zi - z[j]) + delta * dx)
        row[i] = 1e300
        lo = _row_min(row)
        row[i] = 0.0
        for j in range(n):
            arg[j] = lo - row[j]
        arg[i] = -700.0
        _exp_nonpositive(arg, w, ibuf)
        w[i] = 0.0
        s, t = _row_sums(w, same[i])
        total += t / s
    return 1.0 - total / n


def target_neighbors(ds: Dataset, k: int = 3) -> list[np.ndarray]:
    """The k nearest same-class patterns of each pattern in input space.

    Sets shrink for classes with fewer than ``k + 1`` members. Ties in
    distance go to the lower index.
    """
    if k < 1:
        raise ValueError("k must be positive")
    D = pairwise_sq_distances(ds.patterns)
    labels = ds.labels
    targets = []
    for i in range(ds.n_patterns):
        cand = np.flatnonzero((labels == labels[i]) & (np.arange(ds.n_patterns) != i))
        order = np.argsort(D[i, cand], kind="stable")
        targets.append(cand[order[:k]])
    return targets


def _flatten_targets(targets):
    rows = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(targets)])
    cols = np.concatenate([np.asarray(t, dtype=np.int64) for t in targets])
    return rows, cols


def lmnn_energy_from_sqdist(D, targets, labels) -> float:
    rows, cols = _flatten_targets(targets)
    if rows.size == 0:
        return 0.0
    d_target = D[rows, cols]
    impostor = ~same_class(labels)[rows]
    hinge = np.maximum(0.0, 1.0 + d_target[:, None] - D[rows])
    return float(d_target.sum() + np.where(impostor, hinge, 0.0).sum())


def lmnn_energy(A, ds: Dataset, targets=None, k: int = 3) -> float:
    """Pull term over target neighbours plus unit-margin impostor hinges."""
    if targets is None:
        targets = target_neighbors(ds, k)
    pd = project(A, ds)
    return lmnn_energy_from_sqdist(pd.sq_distances, targets, ds.labels)


class _BoundNca:
    def __init__(self, ds: Dataset):
        _check_supervised(ds)
        n = ds.n_patterns
        self.same = same_class(ds.labels)
        self._same = self.same.astype(np.float64)
        self._work = (np.empty(n), np.empty(n), np.empty(n, dtype=np.int64))
        self.pending = None

    def from_sqdist(self, D) -> float:
        # same kernel as trial(), so a zero edit reproduces the energy bit for bit
        n = D.shape[0]
        zero = np.zeros(n)
        return _nca_trial_energy(np.ascontiguousarray(D), zero, zero, 0.0, self._same, np.empty((n, n)), *self._work)

    def trial(self, pd: ProjectedDataset, row: int, col: int, delta: float) -> float:
        pd._check_entry(row, col)
        out = self.pending[1] if self.pending is not None else np.empty_like(pd.sq_distances)
        z = np.ascontiguousarray(pd.projected[:, row])
        x = np.ascontiguousarray(pd.source.patterns[:, col])
        energy = _nca_trial_energy(pd.sq_distances, z, x, float(delta), self._same, out, *self._work)
        self.pending = ((row, col, delta), out)
        return energy


class _BoundLmnn:
    def __init__(self, ds: Dataset, k: int):
        self.targets = target_neighbors(ds, k)
        self.labels = ds.labels
        self.pending = None

    def from_sqdist(self, D) -> float:
        return lmnn_energy_from_sqdist(D, self.targets, self.labels)

    def trial(self, pd: ProjectedDataset, row: int, col: int, delta: float) -> float:
        D = pd.trial_sq_distances(row, col, delta)
        self.pending = ((row, col, delta), D)
        return self.from_sqdist(D)


@dataclass(frozen=True)
class NcaEnergy:
    """Stochastic-neighbour classification energy, in [0, 1]."""

    name = "nca"

    def bind(self, ds: Dataset) -> _BoundNca:
        return _BoundNca(ds)

    def __call__(self, A, ds: Dataset) -> float:
        return nca_energy(A, ds)


@dataclass(frozen=True)
class LmnnEnergy:
    """Large-margin energy with ``k`` target neighbours fixed in input space."""

    k: int = 3
    name = "lmnn"

    def bind(self, ds: Dataset) -> _BoundLmnn:
        return _BoundLmnn(ds, self.k)

    def __call__(self, A, ds: Dataset) -> float:
        return lmnn_energy(A, ds, k=self.k)


class EnergyState:
    """A transform, its projection cache and its energy under one model.

    ``trial`` evaluates a single-entry edit without committing it; ``apply``
    commits it. Owned by a single Markov chain.
    """

    def __init__(self, model, A, ds: Dataset):
        self.model = model
        self.bound = model.bind(ds)
        self.pd = project(A, ds)
        self.energy = self.bound.from_sqdist(self.pd.sq_distances)

    @property
    def transform(self) -> np.ndarray:
        return self.pd.transform

    def copy(self) -> "EnergyState":
        new = object.__new__(EnergyState)
        new.model, new.energy = self.model, self.energy
        new.bound = copy.copy(self.bound)
        new.bound.pending = None
        new.pd = self.pd.copy()
        return new

    def trial(self, row: int, col: int, delta: float) -> float:
        return self.bound.trial(self.pd, row, col, delta)

    def apply(self, row: int, col: int, delta: float, energy: float | None = None) -> None:
        pending = self.bound.pending
        if energy is not None and pending is not None and pending[0] == (row, col, delta):
            # the trial already holds the edited distances: swap buffers
            self.bound.pending = (None, self.pd.commit_entry(row, col, delta, pending[1]))
            self.energy = energy
        else:
            self.pd.update_entry(row, col, delta)
            self.energy = self.bound.from_sqdist(self.pd.sq_distances)

    def replace(self, A) -> None:
        self.pd = project(A, self.pd.source)
        self.energy = self.bound.from_sqdist(self.pd.sq_distances)


def nca_energy_delta(state: EnergyState, row: int, col: int, delta: float):
    """Energy change of one entry edit, and the edited state (a copy)."""
    new_energy = state.trial(row, col, delta)
    new = state.copy()
    new.apply(row, col, delta, new_energy)
    return new_energy - state.energy, new
