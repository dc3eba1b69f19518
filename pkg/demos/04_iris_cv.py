"""Five times two-fold cross-validation on iris.

Each fold is min-max scaled with training statistics only, a metric is learned
on the training half, and kNN error is measured on the other half for every k
up to 40. The reported error is the best k of the fold-averaged curve.
"""

import time

from mcmetric.datasets import BUILTINS
from mcmetric.evaluation import CvPlan, Dmlfe, Euclidean, NcaGradient, run_cv

ds = BUILTINS["iris"]()
plan = CvPlan(seed=0)
for name, method in [("euclidean", Euclidean()), ("nca-gd", NcaGradient()), ("dmlfe", Dmlfe())]:
    start = time.perf_counter()
    res = run_cv(ds, method, plan, name)
    print(f"{name:>10s}  error {res.mean_error:5.2f}%  best k {res.best_k:2d}  ({time.perf_counter() - start:.1f}s)")
