"""Annealing against repeated quenching.

A quench (T = 0) only accepts moves that do not raise the energy, so each run
stops in whichever basin its random start falls into. Annealing starts warm
and cools geometrically, which lets early uphill moves escape poor basins.
The same comparison can be exported as CSV traces with ``mcmetric trace``.
"""

import numpy as np

from mcmetric.core import FeatureScaler
from mcmetric.datasets import generate_synthetic
from mcmetric.solvers import OptimizerConfig, fit_dmlfe, multi_quench

for seed in range(3):
    raw = generate_synthetic("three-class-rings", 60, seed)
    ds = FeatureScaler.fit(raw).apply(raw)
    cfg = OptimizerConfig(seed=seed)

    anneal = fit_dmlfe(ds, None, cfg)
    quench = multi_quench(ds, None, cfg, restarts=20)
    finals = np.array([r.best_energy for r in quench.runs])
    sweeps = sum(r.sweeps_run for r in quench.runs)

    print(f"seed {seed}")
    print(f"  annealing      {anneal.best_energy:.6f}  in {anneal.sweeps_run} sweeps")
    print(f"  20 quenches    best {finals.min():.6f}  median {np.median(finals):.6f}  worst {finals.max():.6f}"
          f"  in {sweeps} sweeps total")
