import numpy as np
import pytest

from hierflow.chain import charge_correlation_exact, covariance_exact
from hierflow.errors import InvalidParameter
from hierflow.model import MeasureSpec, ModelConfig, build_profile, leaf_pair, massive_profile
from hierflow.oracle import (build_laplacian, decomposition_rhs, gibbs_brute, normalized_fourier,
                             potential_recursion_direct, verify_decomposition)
from hierflow.rgflow import PeriodicFunction, init_coeffs, potential_from_coeffs, rg_step

# exhaustive Gibbs sums at b=2, n=2, beta=10, |phi| <= 6, leaf pairs (0,0), (0,1), (0,2)
GIBBS_COV = [0.25296503197981285, 0.1844623985558963, 0.08247500109258911]
GIBBS_CHARGE = {0.1: [1.0, 0.973840040294366, 0.9353907160088952],
                0.3: [1.0, 0.8209263968458811, 0.5776006840988498]}


def test_laplacian_structure():
    prof = build_profile(np.ones(4), 2)
    L = build_laplacian(prof)
    assert np.array_equal(L, L.T)
    assert np.allclose(L.sum(axis=1), -prof.conductances[-1])


def test_laplacian_n1_by_hand():
    c1, c2 = 1 / 3, 1 / 3
    L = build_laplacian(build_profile(np.ones(2), 2))
    assert np.allclose(L, [[-c2 - c1, c1], [c1, -c2 - c1]])
    # inverse of -L is sigma_0^2 I + sigma_1^2 * ones
    assert np.allclose(np.linalg.inv(-L), np.eye(2) + np.ones((2, 2)))


@pytest.mark.parametrize("b,n", [(2, 3), (3, 2), (4, 2)])
def test_decomposition(b, n):
    assert verify_decomposition(np.ones(n + 1), b) < 1e-10
    assert verify_decomposition(massive_profile(b, n, 0.05), b) < 1e-10


def test_decomposition_rhs_n0():
    assert np.allclose(decomposition_rhs(np.array([2.5]), 2), [[2.5]])


def test_gibbs_matches_frozen_values(gibbs_config, tmp_path):
    g = gibbs_brute(gibbs_config, 6, alphas=(0.1, 0.3), cache_dir=str(tmp_path))
    assert g.sensitivity < 1e-10
    pairs = [leaf_pair(k, 2, 2) for k in range(3)]
    for k, p in enumerate(pairs):
        assert g.covariances[p] == pytest.approx(GIBBS_COV[k], abs=1e-14)
        for a in (0.1, 0.3):
            assert g.charges[(p[0], p[1], a)] == pytest.approx(GIBBS_CHARGE[a][k], abs=1e-14)
    assert np.max(np.abs(g.means)) < 1e-14
    # second call is served from the cache
    g2 = gibbs_brute(gibbs_config, 6, alphas=(0.1, 0.3), cache_dir=str(tmp_path))
    assert g2.covariances == g.covariances


def test_chain_matches_frozen_gibbs(gibbs_config):
    cov = covariance_exact(gibbs_config)
    assert np.allclose(cov, GIBBS_COV, atol=1e-12)
    for a, ref in GIBBS_CHARGE.items():
        assert np.allclose(charge_correlation_exact(gibbs_config, a), ref, atol=1e-12)


def test_pinned_field_at_low_temperature():
    cfg = ModelConfig.constant(2, 500.0, 1)
    g = gibbs_brute(cfg, 3, alphas=(0.3,))
    assert abs(g.covariances[(0, 1)]) < 1e-20
    assert g.charges[(0, 1, 0.3)] == pytest.approx(1.0, abs=1e-15)


def test_gibbs_rejects_continuous_measures():
    cfg = ModelConfig.constant(2, 10.0, 1, MeasureSpec.sine_gordon(1.0))
    with pytest.raises(InvalidParameter):
        gibbs_brute(cfg)


def test_direct_potential_step_matches_flow():
    cfg = ModelConfig.constant(2, 20.0, 1, grid_size=256)
    lam0 = init_coeffs(cfg)
    v0, _, _ = potential_from_coeffs(lam0, 256)
    v1 = potential_recursion_direct(v0, 1.0, 20.0, 2)
    lam1, _ = rg_step(lam0, cfg.theta, 2)
    q = normalized_fourier(v1, 6)
    assert np.allclose(q, lam1.padded(6), atol=1e-10)


def test_direct_potential_step_limits():
    N = 256
    flat = PeriodicFunction(np.zeros(N))
    out = potential_recursion_direct(flat, 1.0, 20.0, 2)
    assert np.ptp(out.values) < 1e-13
    z = np.arange(N) / N
    v = PeriodicFunction(0.1 * np.cos(2 * np.pi * z))
    out = potential_recursion_direct(v, 1e-3, 1e3, 2)   # sigma^2 / beta = 1e-6
    d = out.values - 2 * (v.values - v.values.min())
    assert np.ptp(d) < 1e-4
