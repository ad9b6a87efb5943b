import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bevlayout.evaluation import (EvalReport, average_precision_cells, average_precision_instances, evaluate,
                                  evaluate_dynamic, evaluate_static, match_blobs, throughput_report)
from bevlayout.grid import GridMismatchError, GridSpec, LayoutGrid, connected_components
from bevlayout.model import ModelConfig, LayoutNet

SMALL = GridSpec(16.0, 16.0, 16, 16)
OTHER = GridSpec(32.0, 16.0, 16, 16)
scores16 = arrays(np.float64, (16, 16), elements=st.sampled_from(np.linspace(0, 1, 11)))
binary16 = arrays(bool, (16, 16))


def grid(a, spec=SMALL):
    a = np.asarray(a, np.float32)
    return LayoutGrid(a if a.ndim == 3 else a[:, :, None], spec)


def band(rows_hi, channels=1):
    a = np.zeros((16, 16, channels), np.float32)
    a[:rows_hi] = 1
    return grid(a)


# --- static ---------------------------------------------------------------------------

def test_static_examples():
    g = band(12, 2)
    miou, occl = evaluate_static([g], [g])
    np.testing.assert_array_equal(miou, [1.0, 1.0])
    assert occl is None
    miou, _ = evaluate_static([band(8)], [band(12)])
    assert miou[0] == pytest.approx(2 / 3)
    _, occl = evaluate_static([band(3, 2)], [g], visibles=[g])
    assert occl == 1.0


def test_static_occluded_region_uses_channel_union():
    gt = np.zeros((16, 16, 2), np.float32)
    gt[:8, :, 0] = 1
    gt[8:, :, 1] = 1
    visible = gt.copy()
    visible[:4] = 0  # first four rows occluded
    pred = np.zeros_like(gt)
    pred[:2, :, 1] = 1  # wrong class, but the union is what counts
    _, occl = evaluate_static([grid(pred)], [grid(gt)], [grid(visible)])
    assert occl == pytest.approx(0.5)


def test_static_errors():
    with pytest.raises(ValueError):
        evaluate_static([band(3)], [])
    with pytest.raises(GridMismatchError):
        evaluate_static([band(3)], [grid(np.zeros((16, 16)), OTHER)])
    with pytest.raises(ValueError):
        evaluate_static([band(3)], [band(3)], visibles=[])


# --- dynamic ----------------------------------------------------------------------------

def test_dynamic_examples(rng):
    gt = np.zeros((16, 16))
    gt[2:5, 3:6] = 1
    gt[10:12, 9:14] = 1
    miou, ap_c, ap_i = evaluate_dynamic([grid(gt)], [grid(gt)])
    assert (miou, ap_c, ap_i) == (1.0, 1.0, 1.0)
    miou, *_ = evaluate_dynamic([grid(np.zeros((16, 16)))], [grid(gt)])
    assert miou == 0.0
    with pytest.raises(ValueError):
        evaluate_dynamic([grid(gt)], [])


def test_map_cell_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        scores = np.round(rng.random((16, 16)), 1)
        truth = rng.random((16, 16)) < rng.uniform(0.05, 0.6)
        if not truth.any():
            truth[0, 0] = True
        assert average_precision_cells(scores, truth) == pytest.approx(oracles.average_precision(scores, truth),
                                                                         abs=1e-9)


def test_map_cell_without_positives_is_absent():
    assert average_precision_cells(np.ones(5), np.zeros(5)) is None


@given(scores16, binary16)
def test_map_cell_invariant_under_monotone_transform(scores, truth):
    truth[0, 0] = True
    a = average_precision_cells(scores, truth)
    b = average_precision_cells(np.exp(3 * scores) - 7, truth)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 1.0


@given(scores16, binary16)
def test_dynamic_metrics_flip_invariant_and_bounded(scores, truth):
    truth[3, 3] = True
    p, g = grid(scores), grid(truth)
    a = evaluate_dynamic([p], [g])
    b = evaluate_dynamic([p.flip_lateral()], [g.flip_lateral()])
    for x, y in zip(a, b):
        assert x == pytest.approx(y, abs=1e-12)
        assert 0.0 <= x <= 1.0


def test_map_instance_exact_blobs_no_extras():
    gt = np.zeros((16, 16))
    gt[1:3, 1:3] = 1
    gt[8:12, 6:8] = 1
    pred = gt * 0.7
    assert average_precision_instances([grid(pred)], [grid(gt)]) == 1.0
    extra = pred.copy()
    extra[14:16, 14:16] = 0.9  # a confident false positive ranks above the true blobs
    assert average_precision_instances([grid(extra)], [grid(gt)]) < 1.0
    assert average_precision_instances([grid(pred)], [grid(np.zeros((16, 16)))]) is None


def test_match_blobs_is_greedy_one_to_one():
    gt = np.zeros((16, 16))
    gt[0:4, 0:4] = 1
    pred = np.zeros((16, 16))
    pred[0:4, 0:3] = 1
    pred[6:8, 6:8] = 1
    pairs = match_blobs(connected_components(grid(pred)), connected_components(grid(gt)))
    assert len(pairs) == 1 and pairs[0][2] == pytest.approx(12 / 16)


# --- reports ---------------------------------------------------------------------------------

def test_report_round_trip_and_validation(tmp_path):
    g = band(6, 2)
    d = band(2)
    r = evaluate([g], [g], [g], [d], [d])
    assert r.road_miou == 1.0 and r.combined_occluded_miou == 1.0 and r.vehicle_map_instance == 1.0
    r.save(tmp_path / "report")
    assert EvalReport.from_text((tmp_path / "report.txt").read_text()) == r
    assert '"road_miou": 1.0' in (tmp_path / "report.json").read_text()
    with pytest.raises(ValueError):
        EvalReport(road_miou=1.2)
    with pytest.raises(ValueError):
        EvalReport(frames_per_second=0.0)


def test_throughput_positive():
    model = LayoutNet(ModelConfig(width_divisor=8))
    assert throughput_report(model, n_warmup=0, n_timed=1) > 0
    assert throughput_report(model, n_warmup=1, n_timed=2) > 0
    with pytest.raises(ValueError):
        throughput_report(model, n_timed=0)
