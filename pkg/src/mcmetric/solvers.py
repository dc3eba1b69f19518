"""Metropolis Monte Carlo search over transforms, and a gradient baseline.

A sweep is N trial moves, N being the number of patterns. Each move
perturbs the transform, and the change is accepted with probability
``min(1, exp(-dE / T))``; at ``T = 0`` only non-increasing moves pass. The
temperature is lowered once per sweep under annealing.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, _as_transform, project, save_transform
from .objective import EnergyState, NcaEnergy, nca_energy, nca_gradient

CONVERGED = "converged"
MAX_SWEEPS = "max_sweeps"


@dataclass(frozen=True)
class Annealing:
    t0: float = 0.1
    alpha: float = 0.9

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("initial temperature must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def temperature(self, sweep: int) -> float:
        return self.t0 * self.alpha**sweep


@dataclass(frozen=True)
class Fixed:
    t: float = 0.0

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("temperature must be non-negative")

    def temperature(self, sweep: int) -> float:
        return self.t


def Quench() -> Fixed:
    """Zero temperature: a greedy descent."""
    return Fixed(0.0)


@dataclass(frozen=True)
class ProposalPolicy:
    """How a candidate transform is drawn from the current one.

    ``"single"`` shifts one uniformly chosen entry, ``"full"`` shifts every
    entry; shifts are uniform on ``[-step_scale, step_scale]``.
    """

    mode: str = "single"
    step_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("single", "full"):
            raise ValueError(f"unknown proposal mode {self.mode!r}")
        if not self.step_scale >= 0:
            raise ValueError("step_scale must be non-negative")


@dataclass(frozen=True)
class OptimizerConfig:
    schedule: Annealing | Fixed = field(default_factory=Annealing)
    proposal: ProposalPolicy = field(default_factory=ProposalPolicy)
    max_sweeps: int = 2000
    epsilon: float = 1e-5
    patience: int = 50
    seed: int = 0
    init: str = "uniform"
    resync_every: int = 100
    snapshot_every: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.init not in ("uniform", "identity"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.resync_every < 1 or self.snapshot_every < 0:
            raise ValueError("resync_every must be >= 1 and snapshot_every >= 0")


@dataclass(frozen=True)
class TraceRecord:
    sweep: int
    temperature: float
    energy: float
    accepted: int


@dataclass
class FitResult:
    best_transform: np.ndarray
    best_energy: float
    trace: list[TraceRecord]
    sweeps_run: int
    termination: str
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    runs: list["FitResult"] = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return np.array([rec.energy for rec in self.trace])


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any sequence of ints and strings."""
    digest = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def metropolis_acceptance(delta_e: float, temperature: float) -> float:
    """``min(1, exp(-delta_e / T))``; at ``T = 0``, 1 for downhill or flat moves else 0."""
    if delta_e <= 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(-delta_e / temperature)


def _accept(delta_e: float, temperature: float, u: float) -> bool:
    # u in [0, 1); strict comparison keeps T = 0 uphill moves rejected when u == 0
    return delta_e <= 0 or u < metropolis_acceptance(delta_e, temperature)


def propose(A, policy: ProposalPolicy, rng: np.random.Generator):
    """Candidate transform and the edit that produced it; ``A`` is untouched.

    The edit is ``(row, col, delta)`` for single-entry proposals and the
    full shift matrix otherwise.
    """
    A = _as_transform(A)
    s = policy.step_scale
    if policy.mode == "single":
        flat = int(rng.integers(A.size))
        row, col = divmod(flat, A.shape[1])
        delta = float(rng.uniform(-s, s))
        B = A.copy()
        B[row, col] += delta
        return B, (row, col, delta)
    shift = rng.uniform(-s, s, size=A.shape)
    return A + shift, shift


def initial_transform(ds: Dataset, init: str, rng: np.random.Generator) -> np.ndarray:
    d = ds.n_features
    if init == "identity":
        return np.eye(d)
    if init == "uniform":
        return rng.uniform(0.0, 1.0, size=(d, d))
    raise ValueError(f"unknown init {init!r}")


class MetropolisChain:
    """Current and best-so-far transform of one Markov chain."""

    def __init__(self, state: EnergyState, policy: ProposalPolicy, rng: np.random.Generator):
        self.state = state
        self.policy = policy
        self.rng = rng
        self.best_energy = state.energy
        self.best_transform = state.transform.copy()

    @property
    def energy(self) -> float:
        return self.state.energy

    def _note(self):
        if self.state.energy < self.best_energy:
            self.best_energy = self.state.energy
            self.best_transform = self.state.transform.copy()

    def sweep(self, temperature: float) -> int:
        """Attempt N moves at ``temperature``; returns how many were accepted."""
        n = self.state.pd.source.n_patterns
        r, d = self.state.transform.shape
        s = self.policy.step_scale
        rng = self.rng
        accepted = 0
        if self.policy.mode == "single":
            flat = rng.integers(r * d, size=n)
            deltas = rng.uniform(-s, s, size=n)
            us = rng.random(n)
            for m in range(n):
                row, col = divmod(int(flat[m]), d)
                delta = float(deltas[m])
                new_energy = self.state.trial(row, col, delta)
                if _accept(new_energy - self.state.energy, temperature, us[m]):
                    self.state.apply(row, col, delta, new_energy)
                    accepted += 1
                    self._note()
        else:
            shifts = rng.uniform(-s, s, size=(n, r, d))
            us = rng.random(n)
            for m in range(n):
                candidate = EnergyState(self.state.model, self.state.transform + shifts[m], self.state.pd.source)
                if _accept(candidate.energy - self.state.energy, temperature, us[m]):
                    self.state = candidate
                    accepted += 1
                    self._note()
        return accepted


def mc_sweep(chain: MetropolisChain, temperature: float) -> int:
    return chain.sweep(temperature)


def _resync(chain: MetropolisChain, tol: float = 1e-10) -> None:
    # replace the incrementally maintained distances only when drift is measurable
    pd = chain.state.pd
    scale = max(1.0, float(np.max(np.abs(pd.sq_distances), initial=0.0)))
    if pd.drift() > tol * scale:
        chain.state.replace(chain.state.transform.copy())


def fit_dmlfe(ds: Dataset, model=None, config: OptimizerConfig | None = None) -> FitResult:
    """Minimize the energy of a transform with Metropolis Monte Carlo.

    Stops once the best energy improved by less than ``epsilon`` over
    ``patience`` sweeps (or reached 0), or after ``max_sweeps``. Returns
    the lowest-energy transform visited, not the last one.
    """
    model = NcaEnergy() if model is None else model
    config = OptimizerConfig() if config is None else config
    rng = np.random.default_rng(config.seed)
    A0 = initial_transform(ds, config.init, rng)
    chain = MetropolisChain(EnergyState(model, A0, ds), config.proposal, rng)
    schedule = config.schedule

    trace = [TraceRecord(0, schedule.temperature(0), chain.energy, 0)]
    snapshots = [(0, chain.state.transform.copy())] if config.snapshot_every else []
    best_history = [chain.best_energy]
    termination = CONVERGED if chain.best_energy <= 0.0 else MAX_SWEEPS
    sweep = 0
    while termination != CONVERGED and sweep < config.max_sweeps:
        sweep += 1
        temperature = schedule.temperature(sweep)
        accepted = chain.sweep(temperature)
        if sweep % config.resync_every == 0:
            _resync(chain)
        trace.append(TraceRecord(sweep, temperature, chain.energy, accepted))
        if config.snapshot_every and sweep % config.snapshot_every == 0:
            snapshots.append((sweep, chain.state.transform.copy()))
        best_history.append(chain.best_energy)
        if chain.best_energy <= 0.0:
            termination = CONVERGED
        elif sweep >= config.patience and best_history[-1 - config.patience] - chain.best_energy < config.epsilon:
            termination = CONVERGED

    return FitResult(chain.best_transform, chain.best_energy, trace, sweep, termination, snapshots)


def multi_quench(ds: Dataset, model=None, config: OptimizerConfig | None = None, restarts: int = 20) -> FitResult:
    """Independent zero-temperature runs from random starts; keeps the lowest.

    Run ``i`` uses seed ``derive_seed(config.seed, "quench", i)``. All runs
    are kept in ``result.runs``.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    config = OptimizerConfig() if config is None else config
    runs = []
    for i in range(restarts):
        cfg = replace(config, schedule=Quench(), init="uniform", seed=derive_seed(config.seed, "quench", i))
        runs.append(fit_dmlfe(ds, model, cfg))
    best = min(range(restarts), key=lambda i: (runs[i].best_energy, i))
    chosen = runs[best]
    return FitResult(
        chosen.best_transform,
        chosen.best_energy,
        chosen.trace,
        chosen.sweeps_run,
        chosen.termination,
        chosen.snapshots,
        runs,
    )


@dataclass(frozen=True)
class GradientConfig:
    learning_rate: float = 10.0
    max_iters: int = 500
    tolerance: float = 1e-6
    patience: int = 10
    max_halvings: int = 40
    init: str = "identity"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.max_iters < 1 or self.patience < 1:
            raise ValueError("learning_rate > 0, max_iters >= 1 and patience >= 1 are required")


def fit_nca_gradient(ds: Dataset, config: GradientConfig | None = None) -> FitResult:
    """Steepest descent on the NCA energy with step halving on increase.

    Recorded energies never increase. Stops when the energy improved by less
    than ``tolerance`` over ``patience`` iterations, when no halving of the
    step helps, or after ``max_iters``.
    """
    config = GradientConfig() if config is None else config
    rng = np.random.default_rng(config.seed)
    A = initial_transform(ds, config.init, rng)
    energy = nca_energy(A, ds)
    trace = [TraceRecord(0, 0.0, energy, 0)]
    termination = MAX_SWEEPS
    it = 0
    while it < config.max_iters:
        grad = nca_gradient(A, ds)
        if energy <= 0.0 or not np.any(grad):
            termination = CONVERGED
            break
        step = config.learning_rate
        for _ in range(config.max_halvings):
            candidate = A - step * grad
            cand_energy = nca_energy(candidate, ds)
            if cand_energy <= energy:
                break
            step /= 2
        else:
            termination = CONVERGED
            break
        it += 1
        A, energy = candidate, cand_energy
        trace.append(TraceRecord(it, 0.0, energy, 1))
        if it >= config.patience and trace[-1 - config.patience].energy - energy < config.tolerance:
            termination = CONVERGED
            break
    return FitResult(A, energy, trace, it, termination)


def write_trace_csv(path, trace: list[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "temperature", "energy", "accepted"])
        for rec in trace:
            w.writerow([rec.sweep, repr(float(rec.temperature)), repr(float(rec.energy)), rec.accepted])


def read_trace_csv(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        return [
            TraceRecord(int(r["sweep"]), float(r["temperature"]), float(r["energy"]), int(r["accepted"]))
            for r in csv.DictReader(fh)
        ]


def write_snapshots(directory, ds: Dataset, snapshots, stem: str = "snapshot") -> list[Path]:
    """Projected 2-D coordinates per snapshot, plus the transform beside each."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for sweep, A in snapshots:
        Z = project(A, ds).projected
        path = directory / f"{stem}_{sweep:05d}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{k + 1}" for k in range(Z.shape[1])] + ["label"])
            for z, y in zip(Z, ds.labels):
                w.writerow([repr(float(v)) for v in z] + [int(y)])
        save_transform(directory / f"{stem}_{sweep:05d}_transform.txt", A)
        written.append(path)
    return written
