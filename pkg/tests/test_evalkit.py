import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookbench.data import Dataset
from cookbench.errors import ParameterError, ShapeError, UndefinedMetricError
from cookbench.evalkit import (
    REPORT_FIELDS,
    Cell,
    accuracy,
    auc_binary,
    auc_multiclass,
    build_report,
    compute_cp_pp,
    format_table,
    read_report_csv,
    report_from_cells,
    write_report_csv,
)
from cookbench.nn import Dense, ModelParams, ModelSpec


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 0], [0, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75
    with pytest.raises(ParameterError):
        accuracy([], [])
    with pytest.raises(ShapeError):
        accuracy([0, 1], [0])


def test_auc_examples():
    assert auc_binary([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc_binary([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert auc_binary([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc_binary([0.1, 0.2], [1, 1])


def test_auc_binary_matches_brute_force_on_100_fixtures():
    rng = np.random.default_rng(0)
    for k in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        # Coarse scores force plenty of ties.
        scores = rng.integers(0, 1 + k % 10 * 3, n) / 7.0 if k % 2 else rng.normal(size=n)
        assert auc_binary(scores, labels) == brute_auc(scores.tolist(), labels.tolist())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60))
def test_auc_binary_property(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(UndefinedMetricError):
            auc_binary(scores, labels)
    else:
        assert auc_binary(scores, labels) == brute_auc(scores, labels)


def test_auc_multiclass_examples():
    probs = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    assert auc_multiclass(probs, [0, 1, 2, 0, 1, 2]) == 1.0
    assert auc_multiclass(np.full((6, 3), 1 / 3), [0, 1, 2, 0, 1, 2]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc_multiclass(np.full((3, 3), 1 / 3), [2, 2, 2])


def test_auc_multiclass_six_sample_fixture():
    probs = np.array(
        [[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6], [0.4, 0.4, 0.2], [0.3, 0.3, 0.4], [0.5, 0.1, 0.4]]
    )
    labels = [0, 1, 2, 1, 2, 0]
    expect = np.mean([brute_auc(probs[:, c].tolist(), [int(y == c) for y in labels]) for c in range(3)])
    assert auc_multiclass(probs, labels) == expect


def test_auc_multiclass_matches_oracle_randomly():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n, c = int(rng.integers(4, 80)), int(rng.integers(2, 6))
        labels = rng.integers(0, c, n)
        probs = rng.dirichlet(np.ones(c), n).round(2)
        present = sorted(set(labels.tolist()))
        if len(present) < 2:
            continue
        expect = np.mean([brute_auc(probs[:, k].tolist(), (labels == k).astype(int).tolist()) for k in present])
        assert auc_multiclass(probs, labels) == expect


def test_binary_macro_ovr_equals_positive_class_auc():
    # With two classes the one-vs-rest average collapses to the usual AUC.
    rng = np.random.default_rng(2)
    p1 = rng.uniform(size=50)
    probs = np.stack([1 - p1, p1], axis=1)
    labels = rng.integers(0, 2, 50)
    assert auc_multiclass(probs, labels) == pytest.approx(auc_binary(p1, labels), abs=1e-15)


def test_cp_pp_table_value():
    # Worked example: raw 0.744, protected-on-raw 0.686, protected-on-cooked 0.745.
    cp, pp = compute_cp_pp(0.686, 0.744, 0.745)
    assert cp == pytest.approx(-5.8, abs=1e-9)
    assert pp == pytest.approx(-0.1, abs=1e-9)


def test_cp_pp_trivial():
    assert compute_cp_pp(0.42, 0.42, 0.42) == (0.0, 0.0)
    assert compute_cp_pp(0.0, 1.0, 1.0) == (-100.0, 0.0)
    with pytest.raises(ParameterError):
        compute_cp_pp(1.2, 0.5, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_cp_pp_invariants(a, b, c):
    cp, pp = compute_cp_pp(a, b, c)
    assert cp == 100.0 * (a - b)
    assert pp == -100.0 * abs(c - b)
    assert pp <= 0.0


def _cells(fr_dr=0.9, fp_dr=0.7, fp_dp=0.88, fr_dp=0.95):
    return {
        ("fr", "dr"): Cell(fr_dr, 0.95),
        ("fp", "dr"): Cell(fp_dr, 0.8),
        ("fp", "dp"): Cell(fp_dp, 0.93),
        ("fr", "dp"): Cell(fr_dp, 0.99),
    }


def test_report_from_cells_and_epsilon():
    r = report_from_cells(_cells(), method="antiadv", seed=3, epsilon=5.0)
    assert r.cp_acc == pytest.approx(-20.0) and r.pp_acc == pytest.approx(-2.0)
    assert r.cp_auc == pytest.approx(-15.0) and r.pp_auc == pytest.approx(-2.0)
    assert not r.exceeds_epsilon
    assert report_from_cells(_cells(fp_dp=0.8), epsilon=5.0).exceeds_epsilon


def test_report_nan_auc_propagates():
    cells = _cells()
    cells[("fp", "dr")] = Cell(0.7, float("nan"))
    r = report_from_cells(cells)
    assert math.isnan(r.cp_auc) and math.isnan(r.pp_auc)
    assert r.cp_acc == pytest.approx(-20.0)


def test_csv_round_trip(tmp_path):
    reports = [
        report_from_cells(_cells(), method="antiadv", direction="antiadv", target="pseudo", loss="logit", optimizer="adam", seed=0),
        report_from_cells(_cells(0.5, 0.5, 0.5, 0.5), method="noise", seed=1),
    ]
    text = write_report_csv(tmp_path / "r.csv", reports)
    assert text.splitlines()[0].split(",") == list(REPORT_FIELDS)
    assert (tmp_path / "r.csv").read_text() == text
    back = read_report_csv(tmp_path / "r.csv")
    assert [b.row() for b in back] == [r.row() for r in reports]
    table = format_table(reports)
    assert "antiadv" in table and "noise" in table and table.count("\n") == 5


def test_read_report_rejects_wrong_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ParameterError):
        read_report_csv(tmp_path / "bad.csv")


def test_build_report_on_fixed_models():
    # Two linear models on a 1-D problem: fr thresholds at 0.5, fp at 0.75.
    spec = ModelSpec((Dense(1, 2),), 2, (1,))
    w = np.array([[-1.0], [1.0]])
    fr = ModelParams([{"W": w, "b": np.array([0.5, -0.5])}])
    fp = ModelParams([{"W": w, "b": np.array([0.75, -0.75])}])
    y = np.array([0, 0, 1, 1])
    raw = Dataset(np.array([[0.1], [0.4], [0.6], [0.9]]), y, 2, "test")
    prot = Dataset(np.array([[0.05], [0.3], [0.8], [0.95]]), y, 2, "test")
    r = build_report((spec, fr), (spec, fp), raw, prot)
    assert r.cells[("fr", "dr")].acc == 1.0
    assert r.cells[("fp", "dr")].acc == 0.75  # 0.6 falls below fp's threshold
    assert r.cells[("fp", "dp")].acc == 1.0
    assert r.cp_acc == pytest.approx(-25.0) and r.pp_acc == 0.0
    assert r.cells[("fr", "dr")].auc == 1.0
    with pytest.raises(ShapeError):
        build_report((spec, fr), (spec, fp), raw, Dataset(prot.images[:3], y[:3], 2, "test"))
