"""Command-line entry point: ``mcmetric {run,trace,stats,gen}``.

``run`` reads a flat ``key = value`` config file (``#`` starts a comment)::

    datasets = iris, wine, path/to/data.csv
    methods = euclidean, dmlfe
    output = results
    seed = 0

Other keys: ``runs folds k_max k_selection normalization`` (cross-validation),
``schedule t0 alpha temperature proposal step_scale max_sweeps epsilon
patience init resync_every restarts model`` (Monte Carlo search),
``learning_rate max_iters tolerance`` (gradient baseline), ``label_column``,
``control`` and ``workers``. Relative paths are taken from the config
file's directory. ``MCMETRIC_WORKERS`` overrides the worker count.

Everything is validated, and every dataset loaded, before any output is
written.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .core import FeatureScaler, save_transform
from .datasets import SYNTHETIC_KINDS, ParseError, generate_synthetic, resolve_dataset, save_dense_csv
from .evaluation import (
    CvPlan,
    Dmlfe,
    DmlfeQuench,
    ErrorMatrix,
    Euclidean,
    NcaGradient,
    cv_jobs,
    evaluate_jobs,
    summarize_cv,
    write_results_csv,
    write_results_json,
)
from .objective import LmnnEnergy, NcaEnergy
from .solvers import (
    Annealing,
    Fixed,
    GradientConfig,
    OptimizerConfig,
    ProposalPolicy,
    Quench,
    fit_dmlfe,
    multi_quench,
    write_snapshots,
    write_trace_csv,
)
from .stats import compare_to_control, write_decisions_csv, write_ranks_csv

METHODS = ("euclidean", "dmlfe", "dmlfe-quench", "nca-gd")
WORKERS_ENV = "MCMETRIC_WORKERS"


class ConfigError(ValueError):
    pass


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


_INT_KEYS = {"seed", "runs", "folds", "k_max", "max_sweeps", "patience", "resync_every", "restarts", "max_iters", "workers"}
_FLOAT_KEYS = {"t0", "alpha", "temperature", "step_scale", "epsilon", "learning_rate", "tolerance"}
_STR_KEYS = {"output", "k_selection", "normalization", "schedule", "proposal", "init", "label_column", "control", "model"}
_LIST_KEYS = {"datasets", "methods"}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _LIST_KEYS


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _LIST_KEYS:
                values[key] = _split_list(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key!r}") from None
    return values


def _schedule(name: str, t0: float, alpha: float, temperature: float):
    if name == "annealing":
        return Annealing(t0, alpha)
    if name == "quench":
        return Quench()
    if name == "fixed":
        return Fixed(temperature)
    raise ConfigError(f"unknown schedule {name!r}; choose annealing, quench or fixed")


def _model(name: str):
    if name == "nca":
        return NcaEnergy()
    if name == "lmnn":
        return LmnnEnergy()
    raise ConfigError(f"unknown model {name!r}; choose nca or lmnn")


@dataclass
class ExperimentConfig:
    datasets: list[str]
    methods: list[str]
    output: Path
    plan: CvPlan = field(default_factory=CvPlan)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gradient: GradientConfig = field(default_factory=GradientConfig)
    restarts: int = 20
    model: str = "nca"
    label_column: str = "last"
    control: str | None = None
    workers: int | None = None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_values(parse_config_text(text, str(path)), path.parent)

    @classmethod
    def from_values(cls, v: dict, base: Path = Path(".")) -> "ExperimentConfig":
        for key in ("datasets", "methods"):
            if not v.get(key):
                raise ConfigError(f"config needs a non-empty {key!r} list")
        bad = [m for m in v["methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(v["methods"])) != len(v["methods"]) or len(set(v["datasets"])) != len(v["datasets"]):
            raise ConfigError("datasets and methods must not repeat")
        seed = v.get("seed", 0)
        try:
            plan = CvPlan(
                runs=v.get("runs", 5),
                folds=v.get("folds", 2),
                seed=seed,
                k_max=v.get("k_max", 40),
                k_selection=v.get("k_selection", "average"),
                normalization=v.get("normalization", "fold"),
            )
            optimizer = OptimizerConfig(
                schedule=_schedule(v.get("schedule", "annealing"), v.get("t0", 0.1), v.get("alpha", 0.9), v.get("temperature", 0.0)),
                proposal=ProposalPolicy(v.get("proposal", "single"), v.get("step_scale", 1.0)),
                max_sweeps=v.get("max_sweeps", 2000),
                epsilon=v.get("epsilon", 1e-5),
                patience=v.get("patience", 50),
                seed=seed,
                init=v.get("init", "uniform"),
                resync_every=v.get("resync_every", 100),
            )
            gradient = GradientConfig(
                learning_rate=v.get("learning_rate", 10.0),
                max_iters=v.get("max_iters", 500),
                tolerance=v.get("tolerance", 1e-6),
                seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _model(v.get("model", "nca"))
        if v.get("restarts", 20) < 1:
            raise ConfigError("restarts must be at least 1")
        if "workers" in v and v["workers"] < 1:
            raise ConfigError("workers must be at least 1")
        control = v.get("control")
        if control is not None and control not in v["methods"]:
            raise ConfigError(f"control {control!r} is not one of the methods")
        label_column = v.get("label_column", "last")
        if label_column != "last":
            try:
                int(label_column)
            except ValueError:
                raise ConfigError(f"label_column must be 'last' or an index, got {label_column!r}") from None
        datasets = [d if _is_named(d) else str(base / d) for d in v["datasets"]]
        return cls(
            datasets,
            list(v["methods"]),
            base / v.get("output", "results"),
            plan,
            optimizer,
            gradient,
            v.get("restarts", 20),
            v.get("model", "nca"),
            label_column,
            control,
            v.get("workers"),
        )

    def method(self, name: str):
        model = _model(self.model)
        if name == "euclidean":
            return Euclidean()
        if name == "dmlfe":
            return Dmlfe(self.optimizer, model=model)
        if name == "dmlfe-quench":
            return DmlfeQuench(self.optimizer, self.restarts, model=model)
        return NcaGradient(self.gradient)


def _is_named(spec: str) -> bool:
    from .datasets import BUILTINS

    return spec in BUILTINS or spec in SYNTHETIC_KINDS or Path(spec).is_absolute()


def worker_count(configured: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    if configured is not None:
        return configured
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def _load_datasets(specs, label_column):
    loaded = []
    for spec in specs:
        try:
            loaded.append(resolve_dataset(spec, label_column))
        except (FileNotFoundError, ParseError) as exc:
            raise ConfigError(str(exc)) from None
    names = [ds.name for ds in loaded]
    if len(set(names)) != len(names):
        raise ConfigError(f"dataset names must be distinct, got {names}")
    return loaded


def command_run(config: ExperimentConfig) -> int:
    datasets = _load_datasets(config.datasets, config.label_column)
    workers = worker_count(config.workers)

    # every job of every (dataset, method) pair goes through one pool
    pairs, jobs, spans = [], [], []
    for ds in datasets:
        for name in config.methods:
            batch = cv_jobs(ds, config.method(name), config.plan, name)
            spans.append((len(jobs), len(jobs) + len(batch)))
            jobs.extend(batch)
            pairs.append((ds, name))
    outcomes = evaluate_jobs(jobs, workers)

    results = []
    out = config.output
    out.mkdir(parents=True, exist_ok=True)
    for (ds, name), (lo, hi) in zip(pairs, spans):
        chunk = outcomes[lo:hi]
        results.append(summarize_cv([curve for curve, _ in chunk], config.plan, name, ds.name))
        tdir = out / "transforms" / ds.name / name
        tdir.mkdir(parents=True, exist_ok=True)
        for idx, (_, A) in enumerate(chunk):
            run, fold = divmod(idx, config.plan.folds)
            save_transform(tdir / f"run{run}_fold{fold}.txt", A)

    em = ErrorMatrix.from_results(results)
    write_results_csv(out / "results.csv", results)
    write_results_json(out / "results.json", results, em)
    em.to_csv(out / "error_matrix.csv")
    control = config.control or ("dmlfe" if "dmlfe" in em.methods else em.methods[0])
    _write_stats(out, em, control)
    for r in results:
        print(f"{r.dataset:>20s} {r.method:>14s}  error {r.mean_error:7.3f}%  k={r.best_k}")
    return 0


def _write_stats(out: Path, em: ErrorMatrix, control: str) -> None:
    if len(em.methods) < 2 or len(em.datasets) < 2:
        (out / "stats.txt").write_text("statistical tests need at least two methods and two datasets\n")
        return
    report = compare_to_control(em, control)
    write_ranks_csv(out / "ranks.csv", report)
    write_decisions_csv(out / "decisions.csv", report)
    (out / "stats.txt").write_text(format_report(report))


def format_report(report) -> str:
    lines = [f"control: {report.control}", "average ranks:"]
    for m, r in zip(report.all_methods, report.average_ranks):
        lines.append(f"  {m:>14s} {r:8.4f}")
    f = report.friedman
    lines.append(f"friedman chi2 = {f.statistic:.6g}, p = {f.p_value:.6g} ({f.decision})")
    lines.append(f"{'method':>14s} {'wilcoxon':>10s} {'nemenyi':>10s} {'bonf-dunn':>10s}")
    for m in report.methods:
        wil = report.wilcoxon[m]
        lines.append(
            f"{m:>14s} {'NA' if wil is None else wil.decision:>10s} "
            f"{report.nemenyi[m].decision:>10s} {report.bonferroni_dunn[m].decision:>10s}"
        )
    lines.append(f"critical differences: nemenyi {report.cd_nemenyi:.4f}, bonferroni-dunn {report.cd_bonferroni_dunn:.4f}")
    return "\n".join(lines) + "\n"


def command_trace(args) -> int:
    ds = resolve_dataset(args.data, args.label_column)
    if not args.no_scale:
        ds = FeatureScaler.fit(ds).apply(ds)
    model = _model(args.model)
    try:
        cfg = OptimizerConfig(
            schedule=Annealing(args.t0, args.alpha),
            proposal=ProposalPolicy(args.proposal, args.step_scale),
            max_sweeps=args.max_sweeps,
            epsilon=args.epsilon,
            patience=args.patience,
            seed=args.seed,
            init=args.init,
            snapshot_every=args.snapshot_every if ds.n_features == 2 else 0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.restarts < 0:
        raise ConfigError("restarts must be non-negative")

    anneal = fit_dmlfe(ds, model, cfg)
    quench = multi_quench(ds, model, cfg, args.restarts) if args.restarts else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "anneal.csv", anneal.trace)
    save_transform(out / "anneal_transform.txt", anneal.best_transform)
    if quench is not None:
        width = max(2, len(str(args.restarts - 1)))
        for i, run in enumerate(quench.runs):
            write_trace_csv(out / f"quench_{i:0{width}d}.csv", run.trace)
        save_transform(out / "quench_best_transform.txt", quench.best_transform)
    if anneal.snapshots:
        write_snapshots(out / "snapshots", ds, anneal.snapshots, "anneal")
    print(f"anneal: best energy {anneal.best_energy:.6g} after {anneal.sweeps_run} sweeps ({anneal.termination})")
    if quench is not None:
        finals = sorted(r.best_energy for r in quench.runs)
        print(f"quench: best {finals[0]:.6g}, median {finals[len(finals) // 2]:.6g} over {len(finals)} runs")
    return 0


def _fixture_path(name: str):
    return resources.files("mcmetric") / "fixtures" / f"{name}.csv"


def command_stats(args) -> int:
    source = _fixture_path("table3") if args.matrix == "table3" else args.matrix
    try:
        em = ErrorMatrix.read_csv(source)
    except OSError as exc:
        raise ConfigError(f"cannot read matrix {args.matrix}: {exc}") from None
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed matrix {args.matrix}: {exc}") from None
    if args.control not in em.methods:
        raise ConfigError(f"control {args.control!r} not among methods {em.methods}")
    report = compare_to_control(em, args.control)
    text = format_report(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_ranks_csv(out / "ranks.csv", report)
        write_decisions_csv(out / "decisions.csv", report)
        (out / "stats.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def command_gen(args) -> int:
    try:
        ds = generate_synthetic(args.kind, args.n, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dense_csv(out, ds)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcmetric", description="Metric learning by Metropolis Monte Carlo.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="cross-validated experiment from a config file")
    r.add_argument("--config", required=True)

    t = sub.add_parser("trace", help="energy traces of one annealing run and repeated quenches")
    t.add_argument("--data", required=True, help="builtin name, synthetic kind or file path")
    t.add_argument("--out", required=True)
    t.add_argument("--restarts", type=int, default=20)
    t.add_argument("--t0", type=float, default=0.1)
    t.add_argument("--alpha", type=float, default=0.9)
    t.add_argument("--max-sweeps", type=int, default=2000)
    t.add_argument("--epsilon", type=float, default=1e-5)
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--proposal", choices=("single", "full"), default="single")
    t.add_argument("--step-scale", type=float, default=1.0)
    t.add_argument("--init", choices=("uniform", "identity"), default="uniform")
    t.add_argument("--model", choices=("nca", "lmnn"), default="nca")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--snapshot-every", type=int, default=10, help="sweeps between 2-D snapshots")
    t.add_argument("--label-column", default="last")
    t.add_argument("--no-scale", action="store_true", help="skip min-max scaling")

    s = sub.add_parser("stats", help="rank statistics for an error matrix (rows datasets, columns methods)")
    s.add_argument("--matrix", required=True, help="CSV path, or 'table3' for the bundled fixture")
    s.add_argument("--control", required=True)
    s.add_argument("--out")

    g = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    g.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return command_run(ExperimentConfig.from_file(args.config))
        if args.command == "trace":
            return command_trace(args)
        if args.command == "stats":
            return command_stats(args)
        return command_gen(args)
    except (ConfigError, FileNotFoundError, ParseError) as exc:
        print(f"mcmetric: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
