import numpy as np
import pytest
from hypothesis import given
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from hypothesis import strategies as st

from deformbox.metrics import (
    ShapeSetMetrics,
    compute_metrics,
    jsd,
    mmd_cov,
    normalize_points,
    occupancy_distribution,
    sinkhorn_emd_approx,
)
from oracles import jsd_bruteforce, mmd_cov_bruteforce


def _shapes(seed, count, points=40):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-0.5, 0.5, size=(points, 3)) * rng.uniform(0.3, 1.0, 3) for _ in range(count)]


def test_jsd_identity_is_zero():
    a = _shapes(0, 3)
    assert jsd(a, a) == 0.0


def test_jsd_disjoint_is_ln2():
    a = [np.full((5, 3), -0.4)]
    b = [np.full((5, 3), 0.4)]
    assert jsd(a, b, resolution=8) == pytest.approx(np.log(2), abs=1e-15)


def test_jsd_matches_histogram_oracle_on_8_grid():
    a, b = _shapes(1, 2), _shapes(2, 2)
    assert jsd(a, b, resolution=8) == pytest.approx(jsd_bruteforce(a, b, 8), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_jsd_symmetric_and_bounded(seed, res):
    a, b = _shapes(seed, 2, 10), _shapes(seed + 1, 3, 10)
    v = jsd(a, b, res)
    assert 0.0 <= v <= np.log(2) + 1e-12
    assert v == pytest.approx(jsd(b, a, res), abs=1e-12)


def test_jsd_argument_errors():
    with pytest.raises(ValueError):
        jsd([], _shapes(0, 1))
    with pytest.raises(ValueError):
        occupancy_distribution(_shapes(0, 1), resolution=1)


def test_mmd_cov_identity():
    a = _shapes(3, 5)
    mmd, cov = mmd_cov(a, a)
    assert mmd == 0.0 and cov == 1.0


def test_mmd_cov_matches_double_loop():
    gen, ref = _shapes(4, 5, 30), _shapes(5, 5, 30)
    mmd, cov = mmd_cov(gen, ref)
    mmd_o, cov_o = mmd_cov_bruteforce(gen, ref)
    assert mmd == pytest.approx(mmd_o, abs=1e-9)
    assert cov == cov_o


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_single_generated_covers_one(seed, nref):
    _, cov = mmd_cov(_shapes(seed, 1, 8), _shapes(seed + 1, nref, 8))
    assert cov == pytest.approx(1.0 / nref)


@pytest.mark.parametrize("seed", range(3))
def test_sinkhorn_close_to_exact_assignment(seed):
    rng = np.random.default_rng(seed)
    a = normalize_points(rng.normal(size=(150, 3)))
    b = normalize_points(rng.uniform(size=(150, 3)))
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    exact = cost[rows, cols].mean()
    # entropic smoothing at reg 0.01 on unit-scale shapes stays within a few percent
    assert sinkhorn_emd_approx(a, b) == pytest.approx(exact, rel=0.05)
    assert sinkhorn_emd_approx(a, a) < 2e-3


def test_normalize_points_unit_box():
    pts = normalize_points(np.array([[0.0, 0, 0], [2, 1, 4]]))
    assert np.ptp(pts, axis=0).max() == pytest.approx(1.0)
    np.testing.assert_allclose(pts.min(axis=0) + pts.max(axis=0), 0, atol=1e-15)


def test_compute_metrics_identity_and_validation():
    a = _shapes(6, 3, 30)
    m = compute_metrics(a, a, resolution=8)
    assert m.jsd == 0.0 and m.mmd_cd == 0.0 and m.cov_cd == 1.0 and m.cov_emd_approx == 1.0
    assert set(m.to_json()) == {"jsd", "mmd_cd", "cov_cd", "mmd_emd_approx", "cov_emd_approx"}
    with pytest.raises(ValueError):
        ShapeSetMetrics(0.1, 0.1, 1.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        ShapeSetMetrics(-0.1, 0.1, 0.5, 0.1, 0.1)


def test_metrics_deterministic():
    a, b = _shapes(7, 3, 30), _shapes(8, 3, 30)
    assert compute_metrics(a, b, resolution=8).to_json() == compute_metrics(a, b, resolution=8).to_json()
