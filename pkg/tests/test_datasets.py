import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcmetric.core import Dataset, project
from mcmetric.datasets import (
    BUILTINS,
    ParseError,
    balance_scale,
    generate_synthetic,
    load_dense_csv,
    load_sparse,
    resolve_dataset,
    save_dense_csv,
)
from mcmetric.objective import nca_energy
from mcmetric.solvers import OptimizerConfig, fit_dmlfe


class TestDenseCsv:
    def test_three_lines(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2,a\n3,4,b\n5,6,a\n")
        ds = load_dense_csv(p)
        assert ds.n_patterns == 3 and ds.n_features == 2
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.name == "d"

    def test_header_skipped(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f1,f2,class\n1,2,0\n3,4,1\n")
        ds = load_dense_csv(p)
        assert ds.patterns.tolist() == [[1, 2], [3, 4]]

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2,3,a\n1,2,3,b\n1,2,b\n")
        with pytest.raises(ParseError) as err:
            load_dense_csv(p)
        assert err.value.line == 3 and ":3:" in str(err.value)

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2,a\n3,x,b\n")
        with pytest.raises(ParseError) as err:
            load_dense_csv(p)
        assert err.value.line == 2

    def test_unreadable(self, tmp_path):
        with pytest.raises(ParseError):
            load_dense_csv(tmp_path / "missing.csv")

    def test_label_column_index(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,1,2\nb,3,4\n")
        ds = load_dense_csv(p, label_column=0)
        assert ds.patterns.tolist() == [[1, 2], [3, 4]] and ds.labels.tolist() == [0, 1]

    @given(arrays(np.float64, (5, 3), elements=st.floats(-1e6, 1e6)), st.lists(st.integers(0, 4), min_size=5, max_size=5))
    def test_round_trip(self, X, y):
        import tempfile
        from pathlib import Path

        ds = Dataset(X, y)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "r.csv"
            save_dense_csv(path, ds)
            back = load_dense_csv(path)
        assert np.array_equal(back.patterns, ds.patterns)
        # labels come back as dense ids in first-appearance order
        _, first = np.unique(ds.labels, return_index=True)
        order = ds.labels[np.sort(first)]
        assert np.array_equal(order[back.labels], ds.labels)


class TestSparse:
    def test_example(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("1 1:0.5 3:2.0\n")
        assert load_sparse(p).patterns.tolist() == [[0.5, 0.0, 2.0]]

    def test_signed_labels(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("+1 1:1\n-1 2:1\n+1 1:2\n")
        assert load_sparse(p).labels.tolist() == [0, 1, 0]

    def test_empty_feature_list(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("1 2:3\n2\n")
        ds = load_sparse(p)
        assert ds.patterns[1].tolist() == [0.0, 0.0] and ds.labels.tolist() == [0, 1]

    @pytest.mark.parametrize("line", ["1 3:1 2:1", "1 2:1 2:1", "1 x:1", "1 2=1", "1 0:4", "1 1:abc"])
    def test_malformed(self, tmp_path, line):
        p = tmp_path / "s.txt"
        p.write_text("1 1:1\n" + line + "\n")
        with pytest.raises(ParseError) as err:
            load_sparse(p)
        assert err.value.line == 2


class TestBuiltins:
    def test_balance_scale(self):
        ds = balance_scale()
        assert ds.patterns.shape == (625, 4)
        assert sorted(np.bincount(ds.labels).tolist()) == [49, 288, 288]

    def test_bundled(self):
        iris, wine = BUILTINS["iris"](), BUILTINS["wine"]()
        assert iris.patterns.shape == (150, 4) and np.bincount(iris.labels).tolist() == [50, 50, 50]
        assert wine.patterns.shape == (178, 13) and len(wine.classes) == 3

    def test_resolve(self, tmp_path):
        assert resolve_dataset("iris").name == "iris"
        assert resolve_dataset("xor").name == "xor"
        with pytest.raises(FileNotFoundError):
            resolve_dataset(str(tmp_path / "absent.csv"))
        p = tmp_path / "s.svm"
        p.write_text("1 1:1\n2 1:2\n")
        assert resolve_dataset(str(p)).n_patterns == 2


class TestSynthetic:
    def test_balanced(self):
        ds = generate_synthetic("two-gaussians", 40, seed=0)
        assert np.bincount(ds.labels).tolist() == [20, 20]

    @given(st.sampled_from(["two-gaussians", "three-class-rings", "xor"]), st.integers(4, 90), st.integers(0, 100))
    def test_deterministic_and_within_one(self, kind, n, seed):
        a, b = generate_synthetic(kind, n, seed), generate_synthetic(kind, n, seed)
        assert np.array_equal(a.patterns, b.patterns) and np.array_equal(a.labels, b.labels)
        counts = np.bincount(a.labels)
        assert a.n_patterns == n and counts.max() - counts.min() <= 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_synthetic("two-gaussians", 3)
        with pytest.raises(ValueError):
            generate_synthetic("spiral", 10)

    def test_rings_need_a_metric(self):
        ds = generate_synthetic("three-class-rings", 60, seed=0)
        D = project(np.eye(2), ds).sq_distances.copy()
        np.fill_diagonal(D, np.inf)
        assert np.mean(ds.labels[D.argmin(axis=1)] != ds.labels) > 0
        identity = nca_energy(np.eye(2), ds)
        learned = fit_dmlfe(ds, None, OptimizerConfig(seed=0, max_sweeps=100)).best_energy
        # reference run: 0.5395 under identity, 0.0263 after 100 sweeps
        assert learned < identity and learned < 0.05
