import time

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import rel_entr

from calibration.tilting import (
    CalibrationError,
    CalibrationParams,
    TiltInfeasibleError,
    temperature_scale,
    tilt_mean_preserving,
)
from utils.response_distribution import ResponseDistribution


def dist(probs, start=1):
    return ResponseDistribution.from_array("Q", range(start, start + len(probs)), probs)


# =============================================================================
# temperature scaling
# =============================================================================

def test_scaling_identity():
    d = dist([0.7, 0.2, 0.1])
    np.testing.assert_allclose(temperature_scale(d, 1.0).p, d.p, atol=1e-15)


def test_scaling_square_root_example():
    np.testing.assert_allclose(temperature_scale(dist([0.7, 0.2, 0.1]), 2.0).p, [0.5229, 0.2795, 0.1976], atol=1e-3)


def test_scaling_flattens_to_uniform():
    np.testing.assert_allclose(temperature_scale(dist([0.7, 0.2, 0.1]), 1e6).p, np.full(3, 1 / 3), atol=1e-4)


def test_scaling_keeps_zeros():
    out = temperature_scale(dist([0.6, 0.0, 0.4]), 5.0)
    assert out.probs[1] == 0.0
    assert sum(out.probs) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("T", [0.0, -1.0, float("inf"), float("nan")])
def test_invalid_temperature(T):
    with pytest.raises(CalibrationError):
        temperature_scale(dist([0.5, 0.5]), T)
    with pytest.raises(CalibrationError):
        tilt_mean_preserving(dist([0.5, 0.5]), T)


def test_params_validation():
    with pytest.raises(CalibrationError):
        CalibrationParams(T=0.0)
    with pytest.raises(CalibrationError):
        CalibrationParams(T=1.0, beta=float("nan"))


# =============================================================================
# mean-preserving tilt
# =============================================================================

def _oracle_tilt(p, r, T):
    """독립 oracle: brentq로 β를 1e-12까지 풀어 tilt"""
    log_base = np.log(p) / T
    target = float(np.dot(r, p))

    def mean_gap(beta):
        w = np.exp(log_base + beta * r - np.max(log_base + beta * r))
        return float(np.dot(r, w / w.sum())) - target

    beta = brentq(mean_gap, -50.0, 50.0, xtol=1e-12)
    w = np.exp(log_base + beta * r - np.max(log_base + beta * r))
    return w / w.sum(), beta


def test_tilt_example_against_oracle():
    d = dist([0.7, 0.2, 0.1])
    q, beta = tilt_mean_preserving(d, 2.0)
    assert q.mean() == pytest.approx(1.4, abs=1e-9)
    expected, expected_beta = _oracle_tilt(d.p, d.values, 2.0)
    np.testing.assert_allclose(q.p, expected, atol=1e-9)
    assert beta == pytest.approx(expected_beta, abs=1e-8)
    assert beta < 0


def test_tilt_identity_and_uniform():
    d = dist([0.7, 0.2, 0.1])
    q, beta = tilt_mean_preserving(d, 1.0)
    assert q == d and beta == 0.0

    uniform = dist([0.25] * 4)
    q, beta = tilt_mean_preserving(uniform, 7.0)
    np.testing.assert_allclose(q.p, uniform.p, atol=1e-12)
    assert beta == pytest.approx(0.0, abs=1e-9)


def test_point_mass_is_unchanged():
    d = dist([0.0, 1.0, 0.0])
    q, beta = tilt_mean_preserving(d, 4.0)
    assert q == d and beta == 0.0


def test_zero_entries_stay_zero():
    d = dist([0.5, 0.0, 0.3, 0.2])
    q, _ = tilt_mean_preserving(d, 3.0)
    assert q.probs[1] == 0.0
    assert q.mean() == pytest.approx(d.mean(), abs=1e-9)


def test_numerical_point_mass_is_infeasible():
    # 1 + 1e-300 은 float로 1.0 -> 목표 평균이 support 끝점과 같음
    d = dist([1.0, 1e-300])
    with pytest.raises(TiltInfeasibleError):
        tilt_mean_preserving(d, 2.0)


def test_mean_preserved_on_random_distributions():
    rng = np.random.default_rng(20240611)
    started = time.perf_counter()
    for _ in range(10_000):
        k = int(rng.integers(2, 11))
        p = rng.dirichlet(np.ones(k))
        T = float(10 ** rng.uniform(-1, 2))
        d = dist(p)
        q, beta = tilt_mean_preserving(d, T)
        assert abs(q.mean() - d.mean()) <= 1e-9
        assert np.isfinite(beta)
    assert time.perf_counter() - started < 10.0


def test_tilt_is_kl_closest_mean_feasible_distribution():
    rng = np.random.default_rng(7)
    r = np.array([1.0, 2.0, 3.0])
    for _ in range(200):
        p = rng.dirichlet(np.full(3, 2.0))
        T = float(rng.choice([0.5, 2.0, 4.0]))
        d = dist(p)
        q, _ = tilt_mean_preserving(d, T)
        scaled = temperature_scale(d, T).p
        best = float(rel_entr(q.p, scaled).sum())

        m = d.mean()
        lo, hi = max(0.0, 2.0 - m), (3.0 - m) / 2.0
        a = np.linspace(lo, hi, 10_000)
        grid = np.stack([a, 3.0 - m - 2.0 * a, a + m - 2.0], axis=1).clip(min=0.0)
        kl = rel_entr(grid, scaled).sum(axis=1)
        assert np.all(np.abs(grid @ r - m) < 1e-9)
        assert kl.min() >= best - 1e-9


def test_dispersion_grows_with_temperature_for_log_concave_inputs():
    rng = np.random.default_rng(3)
    Ts = [1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0]
    checked = 0
    while checked < 200:
        p = rng.dirichlet(np.ones(3))
        if p[1] ** 2 < p[0] * p[2]:
            continue
        d = dist(p)
        variances = [tilt_mean_preserving(d, T)[0].variance() for T in Ts]
        assert all(b >= a - 1e-10 for a, b in zip(variances, variances[1:]))
        checked += 1


def test_dispersion_can_shrink_for_bimodal_inputs():
    # 양 끝에 몰린 분포는 평평해질수록 분산이 줄어듦 (0.9 -> 2/3)
    d = dist([0.45, 0.1, 0.45])
    assert d.variance() == pytest.approx(0.9)
    flat, _ = tilt_mean_preserving(d, 1e3)
    assert flat.variance() < d.variance()
    assert flat.variance() == pytest.approx(2 / 3, abs=1e-2)
