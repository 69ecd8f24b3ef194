import math

import numpy as np
import pytest

from wsn_outliers.errors import DegenerateLabels, InvalidArgument
from wsn_outliers.evaluate import (ConfusionMatrix, PipelineSettings, SWEEP_COLUMNS,
                                   accuracy, emit_report, load_report, report_files,
                                   run_sweep, split)
from wsn_outliers.features import FeatureMatrix
from wsn_outliers.ingest import synthesize_trace

FAST = PipelineSettings(n_trees=6)


def test_confusion_from_labels():
    cm = ConfusionMatrix.from_labels([0, 0, 1, 1, 1], [0, 1, 1, 0, 1])
    assert (cm.tn, cm.fp, cm.fn, cm.tp) == (1, 1, 1, 2)
    assert accuracy(cm) == 0.6
    assert cm.precision() == pytest.approx(2 / 3) and cm.recall() == pytest.approx(2 / 3)


def test_confusion_edge_cases():
    with pytest.raises(InvalidArgument):
        accuracy(ConfusionMatrix(0, 0, 0, 0))
    with pytest.raises(InvalidArgument):
        ConfusionMatrix.from_labels([0, 1], [0])
    assert math.isnan(ConfusionMatrix(5, 0, 0, 0).precision())


def _matrix(n0, n1):
    n = n0 + n1
    return FeatureMatrix(np.ones(n, dtype=np.int64), np.arange(n), np.zeros((n, 5)),
                         np.array([0] * n0 + [1] * n1, dtype=np.int8),
                         ("f1", "f2", "f3", "f4", "fn"), "temperature",
                         np.zeros(n, dtype=np.int64), 0)


def test_split_is_stratified():
    train, test = split(_matrix(95, 5), 0.3, seed=1)
    assert test.class_counts() == (29, 2)  # round(28.5) = 29, round(1.5) = 2
    assert train.class_counts() == (66, 3)
    assert set(train.epoch.tolist()).isdisjoint(test.epoch.tolist())


def test_split_deterministic_and_rejects():
    a = split(_matrix(50, 10), 0.3, seed=4)[1].epoch
    assert np.array_equal(a, split(_matrix(50, 10), 0.3, seed=4)[1].epoch)
    with pytest.raises(DegenerateLabels):
        split(_matrix(10, 0))
    with pytest.raises(InvalidArgument):
        split(_matrix(10, 3), 1.5)


@pytest.fixture(scope="module")
def trace():
    return synthesize_trace(5, 150, seed=2)


@pytest.fixture(scope="module")
def sweep(trace):
    return run_sweep(trace, [5.0, 2.0], [0.2], seeds=[1, 0], settings=FAST)


def test_sweep_grid_order(sweep):
    keys = [c.key for c in sweep.cells]
    assert keys == [(s, 0.2, c, seed) for s in (2.0, 5.0) for c in ("rf", "knn", "nb")
                    for seed in (0, 1)]
    assert all(c.accuracy is not None and c.seconds is None for c in sweep.cells)
    assert sweep.importance is not None
    assert [n for n, _ in sweep.oob_curve] == [1, 2, 5, 6]


def test_sweep_repeatable_and_parallel(trace, sweep):
    again = run_sweep(trace, [2.0, 5.0], [0.2], seeds=[0, 1], settings=FAST, jobs=2)
    assert again == sweep


def test_sweep_records_failing_cell(trace):
    res = run_sweep(trace, [5.0], [0.0], classifiers=["rf"], settings=FAST)
    (cell,) = res.cells
    assert cell.cm is None and cell.error == "degenerate_labels"


def test_sweep_timing_opt_in(trace):
    res = run_sweep(trace, [5.0], [0.2], classifiers=["nb"],
                    settings=PipelineSettings(record_timing=True))
    assert res.cells[0].seconds > 0


def test_sweep_rejects_empty_grid(trace):
    with pytest.raises(InvalidArgument):
        run_sweep(trace, [], [0.1])


def test_report_round_trip(sweep, tmp_path):
    written = emit_report(sweep, tmp_path)
    assert sorted(p.name for p in written) == sorted(report_files(sweep))
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)
    assert load_report(tmp_path) == sweep
    cell = sweep.cells[0]
    rows = (tmp_path / f"confusion_{cell.name}.csv").read_text().splitlines()
    assert rows[1] == f"0,{cell.cm.tn},{cell.cm.fp},{cell.cm.tn + cell.cm.fp}"
    assert (tmp_path / "accuracy_vs_fraction_s5.svg").read_text().startswith("<svg")


def test_report_is_byte_stable(sweep, tmp_path):
    emit_report(sweep, tmp_path / "a")
    emit_report(load_report(tmp_path / "a"), tmp_path / "b")
    for name in report_files(sweep):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
