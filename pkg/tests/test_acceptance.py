"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
collected in the terminal summary.
"""

import time
from importlib import resources

import numpy as np
import pytest

import oracles
from mcmetric.cli import main
from mcmetric.core import Dataset, FeatureScaler
from mcmetric.datasets import BUILTINS, balance_scale, generate_synthetic
from mcmetric.evaluation import CvPlan, Dmlfe, ErrorMatrix, Euclidean, rank_methods, run_cv
from mcmetric.objective import EnergyState, NcaEnergy, nca_energy, nca_energy_delta, nca_gradient
from mcmetric.solvers import OptimizerConfig, Quench, _accept, fit_dmlfe, multi_quench
from mcmetric.stats import BONFERRONI_DUNN, NEMENYI, compare_to_control, critical_difference

R, A_ = "Rejected", "Accepted"
# control DMLFE; columns wilcoxon, nemenyi, bonferroni-dunn
DECISIONS = {
    "RF": (A_, A_, A_),
    "Euclidean": (R, R, R),
    "PCA": (R, R, R),
    "RCA": (R, R, R),
    "DCA": (R, R, R),
    "LFDA": (R, R, R),
    "DMLeig": (R, R, R),
    "DMLMJ": (R, A_, A_),
    "SCML": (R, A_, R),
    "LMNN": (R, A_, A_),
    "ITML": (R, R, R),
    "NCA": (R, R, R),
}
RANK_ROW = {
    "RF": 4.53, "Euclidean": 6.56, "PCA": 6.69, "RCA": 7.19, "DCA": 8.03, "LFDA": 11.22, "DMLeig": 7.25,
    "DMLMJ": 5.58, "SCML": 6.00, "LMNN": 5.06, "ITML": 10.44, "NCA": 7.67, "DMLFE": 3.33,
}


@pytest.fixture(scope="module")
def table3():
    return ErrorMatrix.read_csv(resources.files("mcmetric") / "fixtures" / "table3.csv")


def test_c1_iris(criterion):
    ds = BUILTINS["iris"]()
    plan = CvPlan(seed=0)
    euclid = run_cv(ds, Euclidean(), plan)
    start = time.perf_counter()
    learned = run_cv(ds, Dmlfe(), plan)
    elapsed = time.perf_counter() - start
    ok = learned.mean_error <= 6.0 and abs(euclid.mean_error - 3.87) <= 2.0 and elapsed < 180
    criterion(
        "C1 iris",
        ok,
        f"dmlfe {learned.mean_error:.2f}% (<= 6.0), euclidean {euclid.mean_error:.2f}% (3.87 +- 2.0), "
        f"dmlfe runtime {elapsed:.0f}s (< 180)",
    )


@pytest.mark.slow
def test_c2_balance_ordering(criterion):
    ds = balance_scale()
    parts, ok = [], True
    for seed in range(3):
        plan = CvPlan(seed=seed)
        e, d = run_cv(ds, Euclidean(), plan).mean_error, run_cv(ds, Dmlfe(), plan).mean_error
        ok &= d < e
        parts.append(f"seed {seed}: {d:.2f} vs {e:.2f}")
    criterion("C2 balance dmlfe < euclidean", ok, "; ".join(parts))


def test_c3_wine(criterion):
    err = run_cv(BUILTINS["wine"](), Dmlfe(), CvPlan(seed=0)).mean_error
    criterion("C3 wine", err <= 5.0, f"dmlfe {err:.2f}% (<= 5.0)")


def test_c4a_rank_row(criterion, table3):
    ranks = dict(zip(table3.methods, rank_methods(table3)))
    off = {m: round(float(ranks[m]) - v, 3) for m, v in RANK_ROW.items() if abs(ranks[m] - v) > 0.02}
    criterion(
        "C4a fixture average ranks within 0.02",
        not off,
        f"DMLFE {ranks['DMLFE']:.3f}, RF {ranks['RF']:.3f}, LFDA {ranks['LFDA']:.3f}; outside tolerance: {off or 'none'}",
    )


def test_c4b_critical_differences(criterion):
    nem, bd = critical_difference(NEMENYI, 13, 36), critical_difference(BONFERRONI_DUNN, 13, 36)
    ok = abs(nem - 3.04) <= 0.02 and abs(bd - 2.64) <= 0.02
    criterion("C4b critical differences", ok, f"nemenyi {nem:.4f} (3.04), bonferroni-dunn {bd:.4f} (2.64)")


def test_c4c_friedman(criterion, table3):
    p = compare_to_control(table3, "DMLFE").friedman.p_value
    criterion("C4c friedman p", p <= 1e-20, f"p = {p:.3g} (<= 1e-20)")


@pytest.mark.parametrize("column,label", [(0, "wilcoxon"), (1, "nemenyi"), (2, "bonferroni-dunn")])
def test_c4d_decision_pattern(criterion, table3, column, label):
    report = compare_to_control(table3, "DMLFE")
    source = {"wilcoxon": report.wilcoxon, "nemenyi": report.nemenyi, "bonferroni-dunn": report.bonferroni_dunn}[label]
    got = {m: o.decision for m, o in source.items()}
    wrong = {m: got[m] for m, row in DECISIONS.items() if got[m] != row[column]}
    criterion(f"C4d table of decisions, {label}", not wrong, f"mismatches {wrong or 'none'}")


def test_c5_gradient(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(4, 21)), int(rng.integers(1, 6))
        ds = Dataset(rng.normal(size=(n, d)), np.arange(n) % int(rng.integers(2, 4)))
        A = rng.normal(size=(int(rng.integers(1, d + 1)), d))
        G = nca_gradient(A, ds)
        ref = oracles.central_difference(lambda B: nca_energy(B, ds), A)
        scale = max(np.abs(ref).max(), 1e-12)
        worst = max(worst, np.abs(G - ref).max() / scale)
    criterion("C5 gradient vs central differences", worst < 1e-5, f"worst relative max-norm error {worst:.2e} (< 1e-5)")


def test_c6_incremental_energy(criterion):
    rng = np.random.default_rng(6)
    worst_edit, worst_chain = 0.0, 0.0
    for inst in range(3):
        n, d = 30, 4
        ds = Dataset(rng.normal(size=(n, d)), np.arange(n) % 3)
        state = EnergyState(NcaEnergy(), rng.uniform(0, 1, size=(d, d)), ds)
        for _ in range(1000):
            row, col, delta = int(rng.integers(d)), int(rng.integers(d)), float(rng.uniform(-1, 1))
            before = nca_energy(state.transform, ds)
            change, new = nca_energy_delta(state, row, col, delta)
            worst_edit = max(worst_edit, abs(change - (nca_energy(new.transform, ds) - before)))
            state.apply(row, col, delta, state.trial(row, col, delta))
        worst_chain = max(worst_chain, abs(state.energy - nca_energy(state.transform, ds)))
    ok = worst_edit <= 1e-9 and worst_chain <= 1e-7
    criterion(
        "C6 incremental energy",
        ok,
        f"worst per-edit error {worst_edit:.1e} (<= 1e-9), worst 1000-edit chain drift {worst_chain:.1e} (<= 1e-7)",
    )


def test_c7_quench_and_acceptance(criterion):
    traces = 0
    monotone = True
    for kind in ("two-gaussians", "three-class-rings", "xor"):
        ds = generate_synthetic(kind, 45, seed=7)
        for seed in range(3):
            res = fit_dmlfe(ds, None, OptimizerConfig(schedule=Quench(), seed=seed, max_sweeps=150))
            e = res.energies
            monotone &= bool(np.all(e[1:] <= e[:-1]))
            traces += 1
    rng = np.random.default_rng(7)
    u = rng.random(100_000)
    rate = float(np.mean([_accept(0.05, 0.1, x) for x in u]))
    target = float(np.exp(-0.5))
    ok = monotone and abs(rate - target) <= 0.01
    criterion(
        "C7 quench monotone and metropolis rate",
        ok,
        f"{traces} quench traces non-increasing: {monotone}; acceptance {rate:.4f} vs {target:.4f} (+- 0.01)",
    )


def test_c8_annealing_vs_quench(criterion):
    parts, ok = [], True
    for seed in range(3):
        raw = generate_synthetic("three-class-rings", 60, seed)
        ds = FeatureScaler.fit(raw).apply(raw)
        cfg = OptimizerConfig(seed=seed)
        anneal = fit_dmlfe(ds, None, cfg).best_energy
        median = float(np.median([r.best_energy for r in multi_quench(ds, None, cfg, 20).runs]))
        ok &= anneal <= median
        parts.append(f"seed {seed}: anneal {anneal:.6g} vs quench median {median:.6g}")
    criterion("C8 annealing <= median of 20 quenches", ok, "; ".join(parts))


CONFIG = """\
datasets = iris, two-gaussians, xor
methods = euclidean, dmlfe, dmlfe-quench, nca-gd
runs = 2
k_max = 10
max_sweeps = 40
restarts = 3
max_iters = 40
seed = 11
output = out
"""


def test_c9_determinism(criterion, tmp_path):
    outs = []
    for name in ("first", "second"):
        (tmp_path / name).mkdir()
        cfg = tmp_path / name / "exp.cfg"
        cfg.write_text(CONFIG)
        assert main(["run", "--config", str(cfg)]) == 0
        outs.append(tmp_path / name / "out")
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    other = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
    differ = [str(f) for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    ok = files == other and not differ and len(files) > 0
    criterion("C9 byte-identical reruns", ok, f"{len(files)} files compared, differing: {differ or 'none'}")
