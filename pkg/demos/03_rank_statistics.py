"""Comparing many methods over many datasets.

The bundled fixture holds published kNN error rates of thirteen methods on 36
datasets. Ranks are computed per dataset, a Friedman test checks whether any
method differs at all, and the post-hoc tests compare each method with a
control through a critical difference of average ranks.
"""

from importlib import resources

from mcmetric.cli import format_report
from mcmetric.evaluation import ErrorMatrix
from mcmetric.stats import compare_to_control

em = ErrorMatrix.read_csv(resources.files("mcmetric") / "fixtures" / "table3.csv")
report = compare_to_control(em, "DMLFE")
print(format_report(report))

# Wilcoxon looks at paired differences, so it can separate two methods whose
# average ranks are close; the rank-based post-hoc tests cannot.
close = [m for m in report.methods if report.nemenyi[m].decision == "Accepted"]
print("indistinguishable from the control by Nemenyi:", ", ".join(close))
