import math

import numpy as np
import pytest

from hierflow.errors import InvalidParameter, TruncationError
from hierflow.model import ModelConfig, beta_critical
from hierflow.observables import (c_bar, choose_q_path, expansions, gamma_series, gamma_star_path_sums,
                                  gamma_weights, kappa_exponent, kappa_from_fixed_point, sigma2,
                                  sigma2_double_integral, sigma2_from_star, sigma2_slope, star_data,
                                  t_star, t_star_solve, tau_exponent)
from hierflow.rgflow import SpectralCoeffs, critical_amplitude_sq, zero_mode_sum

# high-precision values (mpmath, 30 digits)
TAU_B2_025 = 0.49836459713761892142
CBAR_B2 = 0.15144910061468678345
SLOPE_B2 = 0.0073725525247492030656


def test_tau_values():
    assert tau_exponent(0.0, 2) == 0.0
    assert tau_exponent(0.25, 2) == pytest.approx(TAU_B2_025, rel=1e-14)
    assert tau_exponent(-0.25, 2) == tau_exponent(0.25, 2)
    with pytest.raises(InvalidParameter):
        tau_exponent(0.5, 2)


def test_c_bar_value_and_identity():
    bc = beta_critical(2)
    assert c_bar(2) == pytest.approx(8 * math.pi ** 2 / bc ** 2 * 14 / 9, rel=1e-15)
    assert c_bar(2) == pytest.approx(CBAR_B2, rel=1e-14)
    for b in range(2, 7):
        A2 = critical_amplitude_sq(b)
        alt = b * (b + 1) / (b - 1) * 8 * math.pi ** 2 * A2 / beta_critical(b) ** 2
        assert c_bar(b) == pytest.approx(alt, rel=1e-13)
        assert c_bar(b) > 0


def test_sigma2_slope_value():
    assert sigma2_slope(2) == pytest.approx(SLOPE_B2, rel=1e-14)
    assert abs(sigma2_slope(2) / 0.00716 - 1) < 0.1


def test_expansions():
    bc = beta_critical(2)
    e = expansions(2, bc)
    assert e.sigma2_linear == pytest.approx(1 / bc)
    e = expansions(2, 30.0)
    a = 0.3
    assert e.kappa_linear(a) == pytest.approx(4 * bc * a * a / 30 - 4 / bc * tau_exponent(a, 2) * (30 - bc))
    with pytest.raises(InvalidParameter):
        expansions(2, 20.0)


def test_gamma_weights(fixed_points):
    assert np.array_equal(gamma_weights(SpectralCoeffs.delta(), 2), [1.0])
    lam = fixed_points[1.05].lam
    g = gamma_weights(lam, 2)
    assert np.allclose(g[: lam.lam.size], lam.lam / zero_mode_sum(lam, 2), rtol=1e-13)


def test_gamma_sum_near_one(fixed_points):
    for bt in (1.02, 1.05, 1.1):
        g = gamma_weights(fixed_points[bt].lam, 2)
        total = g[0] + 2 * g[1:].sum()
        assert total - 1 <= 2 * math.sqrt(bt - 1)


def test_path_sums_trivial():
    P = gamma_star_path_sums(np.ones(1), 0.55, 0.2, 4)
    assert P[0, 8] == 1 and P[0].sum() == 1
    assert np.all(P[1:] == 0)


def test_path_sums_two_step_by_loop(fixed_points):
    theta, a = 0.525, 0.2
    g = gamma_weights(fixed_points[1.05].lam, 2)
    P = gamma_star_path_sums(g, theta, a, 2, q_path=10)
    gam = lambda q: g[abs(q)] if abs(q) < g.size else 0.0
    direct = sum(theta ** ((q + a) ** 2 - a * a) * gam(q) * gam(-q) for q in range(-10, 11) if q != 0)
    assert P[1, 10] == pytest.approx(direct, rel=1e-13)


def test_path_sums_leading_order(fixed_points):
    theta, a = 0.51, 0.2
    fp = fixed_points[1.02]
    g = gamma_weights(fp.lam, 2)
    P = gamma_star_path_sums(g, theta, a, 4, q_path=10)
    for j in (2, 3, 4):
        lead = (theta ** ((1 + 2 * a) * (j - 1)) + theta ** ((1 - 2 * a) * (j - 1))) * fp.lam.lam1 ** 2
        assert abs(P[j - 1, 10] / lead - 1) < 0.2


def test_path_sums_truncation_guard(fixed_points):
    g = gamma_weights(fixed_points[1.05].lam, 2)
    with pytest.raises(TruncationError, match="q_path"):
        gamma_star_path_sums(g, 0.525, 0.2, 3, q_path=2)


def test_series_at_zero_charge_sums_to_one(fixed_points):
    g = gamma_weights(fixed_points[1.05].lam, 2)
    s = gamma_series(g, 0.525, 0.0, choose_q_path(0.525, 0.0))
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    assert t_star_solve(s) == 1.0


@pytest.mark.parametrize("alpha", [0.0, 0.2, 0.4])
def test_series_geometric_decay(fixed_points, alpha):
    theta = 0.525
    g = gamma_weights(fixed_points[1.05].lam, 2)
    s = gamma_series(g, theta, alpha, choose_q_path(theta, alpha))
    j = np.arange(1, s.size + 1)
    m = j >= 5
    rate = -np.polyfit(j[m], np.log(s[m]), 1)[0]
    assert rate >= (1 - 2 * abs(alpha)) * math.log(1 / theta) - 0.05


def test_t_star_near_critical(fixed_points):
    fp = fixed_points[1.02]
    ce = kappa_from_fixed_point(0.2, fp)
    lin = tau_exponent(0.2, 2) * 0.02
    assert abs((ce.t_star - 1) / lin - 1) < 0.25
    assert ce.t_star > 1


def test_t_star_zero_charge_exact():
    assert t_star(0.0, 2, 0.55) == 1.0
    assert t_star(0.0, 2, 0.4) == 1.0


def test_kappa_subcritical_and_zero():
    bc = beta_critical(2)
    assert kappa_exponent(0.3, 2, 25.0).kappa == 4 * bc * 0.09 / 25
    assert kappa_exponent(0.0, 2, 35.0).kappa == 0.0
    cfg = ModelConfig.constant(2, 25.0, 3)
    assert kappa_exponent(0.3, cfg).kappa == 4 * bc * 0.09 / 25


def test_kappa_supercritical_below_closed_form(fixed_points):
    fp = fixed_points[1.1]
    for a in (0.1, 0.3, 0.45):
        assert kappa_from_fixed_point(a, fp).kappa < 4 * beta_critical(2) * a * a / fp.beta


def test_kappa_small_charge_law(fixed_points):
    fp = fixed_points[1.05]
    s2 = sigma2(2, fp.beta, fp=fp)
    k = kappa_from_fixed_point(0.02, fp).kappa
    assert abs(k / (4 * beta_critical(2) * s2 * 0.02 ** 2) - 1) < 0.05


def test_sigma2_subcritical_exact():
    assert sigma2(2, 20.0) == 0.05
    bc = beta_critical(2)
    assert sigma2(2, bc) == 1 / bc


def test_sigma2_double_integral(fixed_points):
    for bt in (1.02, 1.1):
        sd = star_data(fixed_points[bt])
        assert sigma2_double_integral(sd) == pytest.approx(sigma2_from_star(sd), rel=1e-6)


def test_sigma2_monotone_and_bounded():
    bc = beta_critical(2)
    betas = np.linspace(bc - 5, bc + 5, 41)
    s = np.array([sigma2(2, b) for b in betas])
    assert np.all(np.diff(s) <= 1e-15)
    assert np.all(s <= 1 / betas + 1e-15)
    sup = betas > bc + 1e-6
    assert np.all(s[sup] < 1 / betas[sup])


def test_kappa_rejects_bad_alpha():
    with pytest.raises(InvalidParameter):
        kappa_exponent(0.6, 2, 30.0)
