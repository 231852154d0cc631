import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy import stats

from trajgpt.gmm import GaussianMixtureParams as P
from trajgpt.metrics import (
    MetricsReport, Predictions, PredictionMode, acc_at_k, p_within, report_from_predictions,
    top_k_ids,
)
from trajgpt.preprocess import TimeScaling


def test_acc_hand_example():
    probs = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.2, 0.2, 0.6]])
    truth = np.array([2, 0, 1])
    assert acc_at_k(probs, truth, 1) == pytest.approx(1 / 3)
    assert acc_at_k(probs, truth, 2) == pytest.approx(2 / 3)
    assert acc_at_k(probs, truth, 3) == 1.0
    with pytest.raises(ValueError):
        acc_at_k(probs, truth, 4)


def test_ties_break_to_smaller_id():
    assert top_k_ids(np.array([[0.25, 0.25, 0.5, 0.0]]), 2).tolist() == [[2, 0]]


@given(st.integers(2, 12), st.integers(1, 40), st.integers(0, 2**31))
def test_acc_monotone_in_k_and_full_at_v(v, n, seed):
    r = np.random.default_rng(seed)
    probs = r.dirichlet(np.ones(v), size=n)
    truth = r.integers(0, v, n)
    accs = [acc_at_k(probs, truth, k) for k in range(1, v + 1)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    assert accs[-1] == 1.0


def test_scalar_p_within_hand_example():
    pred = [10.0, 20.0, -3.0]
    truth = [14.0, 31.0, 4.0]
    assert p_within(pred, truth, 5, PredictionMode.SCALAR) == pytest.approx(2 / 3)
    # negative predictions count as 0: |0 - 4| <= 5
    assert p_within([-3.0], [6.0], 5, PredictionMode.SCALAR) == 0.0


def test_distribution_p_within_matches_normal_cdf():
    p = P.of([[1.0]], [[30.0]], [[10.0]])
    got = p_within(p, [30.0], 5, PredictionMode.DISTRIBUTION)
    mass = stats.norm.sf(0, 30, 10)
    assert got == pytest.approx((stats.norm.cdf(35, 30, 10) - stats.norm.cdf(25, 30, 10)) / mass)
    # head units in hours, truth in minutes
    p_h = P.of([[1.0]], [[0.5]], [[1 / 6]])
    assert p_within(p_h, [30.0], 5, PredictionMode.DISTRIBUTION, 60.0) == pytest.approx(got)


@given(st.integers(0, 2**31))
def test_p_within_monotone_in_t(seed):
    r = np.random.default_rng(seed)
    n, k = 8, 3
    p = P.of(r.dirichlet(np.ones(k), n), r.normal(20, 20, (n, k)), r.uniform(1, 20, (n, k)))
    truth = r.uniform(0, 60, n)
    vals = [p_within(p, truth, t, PredictionMode.DISTRIBUTION) for t in (1, 5, 10, 20, 60)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    pred = r.uniform(0, 60, n)
    svals = [p_within(pred, truth, t, PredictionMode.SCALAR) for t in (1, 5, 10, 20, 60)]
    assert all(a <= b for a, b in zip(svals, svals[1:]))


def test_report_columns_and_csv(tmp_path):
    n = 6
    pred = Predictions(
        region_probs=np.full((n, 3), 1 / 3), region_truth=np.zeros(n, int),
        travel=np.full(n, 0.5), duration=np.full(n, 1 / 24),
        travel_truth_min=np.full(n, 30.0), duration_truth_min=np.full(n, 100.0),
    )
    rep = report_from_predictions(pred, TimeScaling())
    assert rep.arrival[5] == 1.0 and rep.departure[20] == 0.0
    # k beyond the class count is capped
    assert rep.acc[5] == 1.0 and rep.acc[1] == 1.0
    rep.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "metric,value,count" and len(lines) == 1 + 4 + 3 + 3
    assert isinstance(rep, MetricsReport)


def test_distribution_two_sigma_interval():
    # erf oracle: mass of +-1.96 sigma around the mean
    import math
    sd = 5 / 1.96
    p = P.of([[1.0]], [[100.0]], [[sd]])
    expect = math.erf(1.96 / math.sqrt(2))
    assert p_within(p, [100.0], 5, PredictionMode.DISTRIBUTION) == pytest.approx(expect, abs=1e-3)
    assert expect == pytest.approx(0.95, abs=1e-3)


def test_acc_rank_boundary_examples():
    assert acc_at_k(np.array([[0.1, 0.9], [0.8, 0.2]]), np.array([1, 0]), 1) == 1.0
    probs = np.array([[0.5, 0.3, 0.2]])
    assert acc_at_k(probs, np.array([1]), 1) == 0.0
    assert acc_at_k(probs, np.array([1]), 2) == 1.0
    assert p_within([7.0], [10.0], 5, PredictionMode.SCALAR) == 1.0
