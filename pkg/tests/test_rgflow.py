import math

import numpy as np
import pytest

from hierflow.errors import InvalidParameter
from hierflow.model import MeasureSpec, ModelConfig, beta_critical
from hierflow.rgflow import (SpectralCoeffs, coeff_distance, dg_seed, exp_neg_potential, fixed_point,
                             fixed_point_identity_residual, fixed_point_residual, grid, init_coeffs,
                             near_critical_lam1, potential_from_coeffs, rg_step, run_flow, v_star,
                             weighted_norm, wrapped_gaussian, zero_mode_sum)


def test_trivial_sequence_is_fixed():
    lam, lg = rg_step(SpectralCoeffs.delta(), 0.4, 2)
    assert lam.is_trivial() and lg == 0.0


def test_one_step_matches_tuple_enumeration():
    # b = 2, theta = 0.5, lam = (1, 0.1): sums over pairs in {-1,0,1}^2
    lam = SpectralCoeffs(np.array([1.0, 0.1]))
    new, lg = rg_step(lam, 0.5, 2)
    assert new.lam[1] == pytest.approx(0.1 / 1.02, rel=1e-15)
    assert new.lam[2] == pytest.approx(0.000625 / 1.02, rel=1e-15)
    assert lg == pytest.approx(math.log(1.02), rel=1e-15)


def test_ratio_contraction_from_dg_start():
    cfg = ModelConfig.constant(2, 20.0, 1)
    lam0 = init_coeffs(cfg)
    lam1, _ = rg_step(lam0, cfg.theta, 2)
    assert lam1.ratio_sup() <= 2 * cfg.theta * lam0.ratio_sup() * (1 + 1e-12)


def test_init_coeffs_dg_and_sine_gordon():
    beta = 2 * math.pi ** 2 / math.log(2)  # theta_0 = 0.5
    lam = init_coeffs(ModelConfig.constant(2, beta, 0))
    assert np.allclose(lam.lam[:4], [1, 0.5, 0.0625, 0.5 ** 9])
    sg = init_coeffs(ModelConfig.constant(2, beta, 0, MeasureSpec.sine_gordon(0.0)))
    assert sg.is_trivial()
    hc = init_coeffs(ModelConfig.constant(2, 20.0, 0, MeasureSpec.hard_core(0.3)))
    assert hc.lam[0] == 1.0


def test_spectral_coeffs_validation():
    with pytest.raises(InvalidParameter):
        SpectralCoeffs(np.array([2.0, 0.1]))
    with pytest.raises(InvalidParameter):
        rg_step(SpectralCoeffs(np.array([1.0, 0.1])), 1.5, 2)


def test_subcritical_flow_contracts():
    tr = run_flow(ModelConfig.constant(2, 20.0, 40))
    c = tr.c
    assert c[-1] < 1e-3 * c[1]
    assert all(tr.step_ratio_bound_ok)


def test_zero_level_trace():
    tr = run_flow(ModelConfig.constant(2, 20.0, 0))
    assert tr.n == 0 and len(tr.levels) == 1
    assert tr.to_csv().splitlines()[0] == "k,lam1,rho,c_k,log_a0,lam1_sqrtk"


def test_log_zero_mode_recursion():
    cfg = ModelConfig.constant(2, 20.0, 5)
    tr = run_flow(cfg)
    lg = [rg_step(tr[k - 1], cfg.theta, 2)[1] for k in range(1, 6)]
    for k in range(1, 6):
        assert tr.log_a0[k] == pytest.approx(2 * tr.log_a0[k - 1] + lg[k - 1])


def test_potential_of_delta_vanishes():
    v, v1, v2 = potential_from_coeffs(SpectralCoeffs.delta(), 64)
    assert np.all(v.values == 0) and np.all(v1.values == 0) and np.all(v2.values == 0)


def test_potential_first_order():
    eps = 1e-6
    v, v1, _ = potential_from_coeffs(SpectralCoeffs(np.array([1.0, eps])), 256)
    z = grid(256)
    assert np.max(np.abs(v1.values - 4 * np.pi * eps * np.sin(2 * np.pi * z))) < 1e-9


def test_potential_derivatives_match_finite_differences():
    lam = SpectralCoeffs(np.array([1.0, 0.2, 0.03]))
    N = 512
    v, v1, v2 = potential_from_coeffs(lam, N)
    h = 1.0 / N
    d1 = (np.roll(v.values, -1) - np.roll(v.values, 1)) / (2 * h)
    d2 = (np.roll(v.values, -1) - 2 * v.values + np.roll(v.values, 1)) / h ** 2
    scale1, scale2 = np.max(np.abs(v1.values)), np.max(np.abs(v2.values))
    assert np.max(np.abs(d1 - v1.values)) < 1e-3 * scale1
    assert np.max(np.abs(d2 - v2.values)) < 1e-3 * scale2


def test_weighted_norm_and_distance():
    d = np.array([0.0, 1.0, 1.0])
    t = 2 * 2 ** 1.5 * math.sqrt(0.1)
    assert weighted_norm(d, 2, 0.55) == pytest.approx(1 + t)
    a = SpectralCoeffs(np.array([1.0, 0.1]))
    assert coeff_distance(a, a, 2, 0.55) == 0.0


def test_wrapped_gaussian_is_a_density():
    z = grid(2048)
    for var in (1e-3, 0.05, 2.0):
        assert np.mean(wrapped_gaussian(z, var)) == pytest.approx(1.0, rel=1e-12)


def test_fixed_point_trivial_below_threshold():
    fp = fixed_point(2, 0.5)
    assert fp.trivial and fp.lam.is_trivial()
    vs, v1 = v_star(fp, 64)
    assert np.all(vs.values == 0)


def test_fixed_point_near_critical_amplitude():
    fp = fixed_point(2, 0.501)
    pred = math.sqrt(14 / 27) * math.sqrt(0.002)
    assert near_critical_lam1(2, 0.501) == pytest.approx(pred)
    assert abs(fp.lam.lam1 / pred - 1) < 0.1
    assert fp.residual < 1e-10


def test_fixed_point_is_invariant():
    fp = fixed_point(2, 0.55)
    new, _ = rg_step(fp.lam, 0.55, 2)
    assert coeff_distance(new, fp.lam, 2, 0.55) < 1e-11
    assert fixed_point_residual(fp.lam, 2, 0.55) < 1e-11


def test_fixed_point_identity_at_055():
    fp = fixed_point(2, 0.55, q_max=16)
    vs, _ = v_star(fp, 512)
    assert fixed_point_identity_residual(vs, 2, fp.beta) < 1e-8


def test_vstar_zero_mode_and_shape():
    fp = fixed_point(2, 0.6)
    vs, _ = v_star(fp, 512)
    e = np.exp(-vs.values)
    # zero mode of exp(-v_star) equals G_0^(-1/(b-1))
    assert np.mean(e) == pytest.approx(zero_mode_sum(fp.lam, 2) ** -1.0, rel=1e-12)
    assert np.argmax(e) == 0 and np.argmin(e) == 256
    assert 0 < e.min() and e.max() < 2


def test_fixed_point_far_from_criticality_converges():
    fp = fixed_point(2, 0.84)
    assert fp.residual < 1e-10


def test_dg_seed():
    assert np.allclose(dg_seed(0.6).lam[:3], [1, 0.6, 0.6 ** 4])


def test_exp_neg_potential_off_grid():
    lam = SpectralCoeffs(np.array([1.0, 0.2]))
    assert exp_neg_potential(lam, 0.25) == pytest.approx(1.0)
    assert exp_neg_potential(lam, 0.0) == pytest.approx(1.4)


def test_critical_flow_amplitude_quick():
    tr = run_flow(ModelConfig.constant(2, beta_critical(2), 400))
    assert tr.lam1[400] * math.sqrt(400) == pytest.approx(math.sqrt(7 / 27), rel=0.02)
