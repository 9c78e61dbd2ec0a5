import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

import oracles
from fixtures import pair8, pair16, random_pair
from fdnet.metrics import (
    MetricSuite,
    e_measure,
    evaluate_dataset,
    gaussian_kernel,
    mae,
    nearest_foreground,
    s_measure,
    weighted_fbeta,
)

# straight-line oracle values (tests/oracles.py) for the fixtures in tests/fixtures.py
FROZEN = {
    "pair16": dict(mae=0.24624989167480607, s=0.7298680558276369, e=0.8349550696392213, wfm=0.46918752449514617),
    "pair8": dict(mae=0.517359375, s=0.25601128006754087, e=0.43151275346614115, wfm=0.27782298426597546),
}
FIXTURES = {"pair16": pair16, "pair8": pair8}


def balanced_mask(size=8):
    gt = np.zeros((size, size))
    gt[:, : size // 2] = 1
    return gt


# ---------------------------------------------------------------- MAE


def test_mae_boundaries():
    gt = balanced_mask()
    assert mae(gt, gt) == 0.0
    assert mae(np.zeros((4, 4)), np.ones((4, 4))) == 1.0
    assert mae(1 - gt, gt) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_mae_scalar_loop(seed):
    pred, gt = random_pair(np.random.default_rng(seed))
    assert mae(pred, gt) == pytest.approx(oracles.mae(pred, gt), abs=1e-15)


# ---------------------------------------------------------------- S-measure


def test_s_measure_boundaries():
    gt = balanced_mask()
    assert s_measure(gt, gt) == pytest.approx(1.0, abs=1e-12)
    assert s_measure(np.zeros((5, 5)), np.zeros((5, 5))) == 1.0
    assert s_measure(np.ones((5, 5)), np.ones((5, 5))) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_s_measure_straight_line_oracle(seed):
    pred, gt = random_pair(np.random.default_rng(seed), size=8 + seed % 5)
    assert s_measure(pred, gt) == pytest.approx(oracles.s_measure(pred, gt), abs=1e-9)


# ---------------------------------------------------------------- E-measure


def test_e_measure_boundaries():
    gt = balanced_mask()
    assert e_measure(gt, gt) == pytest.approx(1.0, abs=1e-12)
    assert e_measure(1 - gt, gt) < 0.5
    assert oracles.e_measure_adaptive(1 - gt, gt) < 0.5


def test_e_measure_zero_prediction_threshold_is_strict():
    gt = balanced_mask()
    # with a zero threshold ">=" would mark everything foreground
    assert e_measure(np.zeros_like(gt), np.zeros_like(gt)) == 1.0


def test_e_measure_modes():
    pred, gt = pair16()
    values = {m: e_measure(pred, gt, m) for m in ("adaptive", "mean", "max")}
    assert values["mean"] <= values["max"]
    assert all(0 <= v <= 1 for v in values.values())
    with pytest.raises(ValueError):
        e_measure(pred, gt, "median")


@pytest.mark.parametrize("seed", range(20))
def test_e_measure_straight_line_oracle(seed):
    pred, gt = random_pair(np.random.default_rng(seed))
    assert e_measure(pred, gt) == pytest.approx(oracles.e_measure_adaptive(pred, gt), abs=1e-9)


# ---------------------------------------------------------------- weighted F-measure


def interior_balanced_mask():
    """Half of a 24×24 map is foreground, all of it at least 3 pixels from the border."""
    gt = np.zeros((24, 24))
    gt[3:21, 4:20] = 1
    assert gt.mean() == 0.5
    return gt


def test_wfm_boundaries():
    gt = interior_balanced_mask()
    assert weighted_fbeta(gt, gt) == pytest.approx(1.0, abs=1e-12)
    assert weighted_fbeta(np.zeros_like(gt), gt) == 0.0
    assert weighted_fbeta(1 - gt, gt) == 0.0
    assert mae(1 - gt, gt) == 1.0


def test_wfm_zero_padding_near_border():
    """The 7×7 smoothing pads with zeros, so misses within 3 pixels of the edge are attenuated."""
    gt = balanced_mask()
    value = weighted_fbeta(np.zeros_like(gt), gt)
    assert 0.0 < value < 1.0
    assert value == pytest.approx(oracles.weighted_fbeta(np.zeros_like(gt), gt), abs=1e-12)


def test_wfm_empty_ground_truth_flagged():
    value, degenerate = weighted_fbeta(np.full((4, 4), 0.3), np.zeros((4, 4)), return_degenerate=True)
    assert value == 0.0 and degenerate


def test_gaussian_kernel_normalised_and_symmetric():
    k = gaussian_kernel()
    assert k.shape == (7, 7)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(k, k.T, atol=0)
    np.testing.assert_allclose(k, np.array(oracles.gaussian7()), atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_nearest_foreground_double_loop(seed):
    rng = np.random.default_rng(seed)
    gt = (rng.random((9, 7)) < 0.15).astype(float)
    gt[rng.integers(9), rng.integers(7)] = 1
    dist, idx = nearest_foreground(gt, chunk=5)
    ref_d, ref_i = oracles.distance_transform(gt)
    np.testing.assert_allclose(dist, ref_d, atol=1e-15)
    np.testing.assert_array_equal(idx, ref_i)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nearest_foreground_distance_agrees_with_scipy(seed):
    rng = np.random.default_rng(seed)
    gt = (rng.random((12, 10)) < 0.1).astype(float)
    gt[0, 0] = 1
    dist, _ = nearest_foreground(gt)
    np.testing.assert_allclose(dist, ndimage.distance_transform_edt(gt == 0), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_wfm_straight_line_oracle(seed):
    pred, gt = random_pair(np.random.default_rng(seed))
    assert weighted_fbeta(pred, gt) == pytest.approx(oracles.weighted_fbeta(pred, gt), abs=1e-9)


# ---------------------------------------------------------------- frozen fixtures


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_regression_constants(name):
    pred, gt = FIXTURES[name]()
    want = FROZEN[name]
    assert mae(pred, gt) == pytest.approx(want["mae"], abs=1e-12)
    assert s_measure(pred, gt) == pytest.approx(want["s"], abs=1e-12)
    assert e_measure(pred, gt) == pytest.approx(want["e"], abs=1e-12)
    assert weighted_fbeta(pred, gt) == pytest.approx(want["wfm"], abs=1e-9)


# ---------------------------------------------------------------- ranges


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 12))
def test_metrics_stay_in_unit_interval(seed, size):
    pred, gt = random_pair(np.random.default_rng(seed), size)
    for fn in (mae, s_measure, e_measure, weighted_fbeta):
        v = fn(pred, gt)
        assert 0.0 <= v <= 1.0 + 1e-12, fn.__name__


def test_metric_input_validation():
    with pytest.raises(ValueError):
        s_measure(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        e_measure(np.full((3, 3), 1.5), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        weighted_fbeta(np.zeros((3, 3)), np.full((3, 3), 0.5))


# ---------------------------------------------------------------- aggregation


def test_single_perfect_pair():
    gt = balanced_mask()
    means = evaluate_dataset([(gt, gt)]).as_dict()
    assert means == pytest.approx({"mae": 0.0, "s_measure": 1.0, "e_measure": 1.0, "wfm": 1.0}, abs=1e-12)


def test_two_images_average_to_midpoints():
    a, b = pair8(), pair16()
    ra, rb = evaluate_dataset([a]).means, evaluate_dataset([b]).means
    both = evaluate_dataset([("a", *a), ("b", *b)]).means
    np.testing.assert_allclose(both, (np.array(ra) + np.array(rb)) / 2, atol=1e-15)


def test_twenty_pairs_against_recomputation(tmp_path):
    rng = np.random.default_rng(77)
    pairs = [(f"img{i:02d}", *random_pair(rng)) for i in range(20)]
    report = evaluate_dataset(pairs)
    ref = np.array([[oracles.mae(p, g), oracles.s_measure(p, g), oracles.e_measure_adaptive(p, g),
                     oracles.weighted_fbeta(p, g)] for _, p, g in pairs]).mean(axis=0)
    np.testing.assert_allclose(report.means, ref, atol=1e-9)

    out = tmp_path / "scores.csv"
    report.to_csv(out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["id", "mae", "smeasure", "emeasure", "wfm"]
    assert [r[0] for r in rows[1:-1]] == sorted(p[0] for p in pairs)
    assert rows[-1][0] == "MEAN"


def test_suite_streaming_matches_batch():
    suite = MetricSuite()
    pairs = [pair8(), pair16()]
    for i, (p, g) in enumerate(pairs):
        suite.step(p, g, f"{i}")
    np.testing.assert_allclose(suite.get_results().means, evaluate_dataset(pairs).means, atol=1e-15)
    with pytest.raises(ValueError):
        MetricSuite().get_results()
