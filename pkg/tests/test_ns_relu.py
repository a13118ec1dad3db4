import math

import numpy as np
import pytest

from pcanet import ns_relu, nn
from pcanet import spectral_ns as ns


@pytest.mark.parametrize("m", range(1, 9))
@pytest.mark.parametrize("M,L", [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 2.0)])
def test_product_net_bound_depth_and_size(m, M, L):
    p = ns_relu.build_product_net(m, M, L)
    assert ns_relu.lattice_error(p) <= ns_relu.drm_bound(m, M, L)
    assert p.net.depth() == m + 1
    assert p.net.size() <= p.size_constant * m


def test_product_net_at_three_levels():
    p = ns_relu.build_product_net(3, 1.0, 1.0)
    assert ns_relu.lattice_error(p) <= 0.125


def test_product_with_zero_factor_is_within_bound():
    p = ns_relu.build_product_net(4, 1.0, 2.0)
    y = np.linspace(-2, 2, 201)
    assert np.max(np.abs(p(np.zeros_like(y), y))) <= p.bound


def test_product_error_halves_per_level():
    errs = [ns_relu.lattice_error(ns_relu.build_product_net(m, 1.0, 1.0)) for m in range(1, 8)]
    assert all(b <= 0.5 * a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_construction_bound_implies_stated_bound():
    for m in range(1, 12):
        for M, L in ((1, 1), (1, 2), (2, 2)):
            if M + L <= 2 ** (m + 2):
                assert ns_relu.product_error_bound(m, M, L) <= ns_relu.drm_bound(m, M, L)


def test_closed_form_matches_network():
    p = ns_relu.build_product_net(5, 2.0, 1.0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-2, 2, 300), rng.uniform(-1, 1, 300)
    assert np.allclose(p(x, y), ns_relu.emulated_product(x, y, 5, 2.0, 1.0), atol=1e-12)


def test_product_net_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ns_relu.build_product_net(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ns_relu.build_product_net(2, -1.0, 1.0)


def test_linear_blocks_reproduce_transforms():
    K = 3
    b = ns_relu.LinearBlocks(K)
    n = b.n
    u = ns.random_divergence_free(K, 1, 1.0)
    z = u.to_real()
    grid = ns.synthesize(u.coeffs, n)
    assert np.allclose(b.synth_u() @ z, grid.reshape(-1), atol=1e-12)
    k1, k2, _ = ns._leray_tables(K)
    grads = np.stack([ns.synthesize(1j * kl * u.coeffs, n) for kl in (k1, k2)])
    assert np.allclose(b.synth_grad() @ z, grads.reshape(-1), atol=1e-12)
    w = np.random.default_rng(2).standard_normal((2, n, n))
    ref = ns.SpectralField(ns._leray(ns.analyze(w, K))).to_real()
    assert np.allclose(b.analysis() @ w.reshape(-1), ref, atol=1e-12)


def test_emulated_nonlinearity_error_and_oracle_substitution():
    K, mbar, eps = 4, 9.5, 0.05
    nl = ns_relu.build_nl_net(K, mbar, eps)
    exact = nl.with_product("exact")
    rng = np.random.default_rng(3)
    for s in range(5):
        u = ns.random_divergence_free(K, 2 * s, mbar * rng.uniform(0.2, 1.0))
        v = ns.random_divergence_free(K, 2 * s + 1, mbar * rng.uniform(0.2, 1.0))
        ref = ns.nonlinear_term(u, v)
        assert (nl(u, v) - ref).norm() <= eps
        assert np.max(np.abs(exact(u, v).coeffs - ref.coeffs)) <= 1e-12
        assert np.max(np.abs(exact.evaluate_dense(u, v).coeffs - ref.coeffs)) <= 1e-12


def test_materialized_network_matches_arithmetic_path():
    nl = ns_relu.EmulatedNonlinearity(2, 9.5, 0.1)
    u = ns.random_divergence_free(2, 0, 5.0)
    v = ns.random_divergence_free(2, 1, 5.0)
    assert np.max(np.abs(nl.evaluate_network(u, v).coeffs - nl(u, v).coeffs)) <= 1e-12
    assert nl.network().depth() == nl.depth() == nl.m + 3


def test_nonlinearity_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ns_relu.EmulatedNonlinearity(2, 9.5, 0.0)
    with pytest.raises(ValueError):
        ns_relu.EmulatedNonlinearity(2, 0.5, 0.1)


def test_accuracy_parameter_is_minimal():
    nl = ns_relu.EmulatedNonlinearity(4, 9.5, 0.01)
    budget = nl.per_point_budget
    assert ns_relu.product_error_bound(nl.m, nl.bound_u, nl.bound_grad) <= budget
    assert ns_relu.product_error_bound(nl.m - 1, nl.bound_u, nl.bound_grad) > budget


def test_factored_size_grows_like_modes_times_log():
    mbar, eps = 9.5, 0.01
    ratios = []
    for K in (4, 8, 16):
        nl = ns_relu.EmulatedNonlinearity(K, mbar, eps)
        ratios.append(nl.factored_size() / (K * K * math.log(mbar * K / eps)))
    assert max(ratios) / min(ratios) <= 4.0


def test_step_network_structure():
    cfg = ns.NsRunConfig(K=2, M=1, T=0.02)
    step = ns_relu.build_step_net(cfg)
    net = step.network()
    assert net.depth() == cfg.L * (step.nl.m + 3)
    u = ns.random_divergence_free(2, 4, 0.8)
    w, _ = ns.step(u, cfg, step.nl)
    assert np.max(np.abs(step(u).coeffs - w.coeffs)) <= 1e-12
    block = step.block_network()
    z = np.concatenate([u.to_real(), np.zeros_like(u.to_real())])
    out = nn.forward(block, z)
    d = u.to_real().size
    assert np.allclose(out[:d], u.to_real(), atol=1e-14)
    ref = ns._fixed_point_array(u.coeffs, np.zeros_like(u.coeffs), cfg.dt, cfg.nu, step.nl.bind(u.coeffs))
    assert np.allclose(out[d:], ns.SpectralField(ref).to_real(), atol=1e-13)


def test_unrolled_network_equals_arithmetic_run_and_size_tally():
    cfg = ns.NsRunConfig(K=2, M=1, T=0.03, nu=0.05)
    nl = ns_relu.EmulatedNonlinearity(cfg.K, cfg.m_bar, cfg.eps)
    net = ns_relu.unroll(ns_relu.build_step_net(cfg, nl))
    for s in range(2):
        u0 = ns.random_divergence_free(2, s, 0.9)
        ref, _ = ns.run(u0, cfg, nl)
        assert np.max(np.abs(net(u0).coeffs - ref.coeffs)) <= 1e-12
    assert net.size() == net.predicted_size() == nn.size(net.network())
    assert net.depth() == cfg.n_steps * cfg.L * (nl.m + 3)
    first_w = net.step.layers()[0][0]
    last = net.step.layers()[-1]
    io_terms = 2 * (first_w.nnz + last[0].nnz + np.count_nonzero(last[1]))
    assert net.size() <= cfg.n_steps * net.step_size() + (cfg.n_steps - 1) * io_terms


def test_structural_run_with_exact_products_matches_scheme():
    cfg = ns.NsRunConfig(K=2, M=1, T=0.03)
    nl = ns_relu.EmulatedNonlinearity(cfg.K, cfg.m_bar, cfg.eps, product="exact")
    u0 = ns.random_divergence_free(2, 7, 0.9)
    ref, _ = ns.run(u0, cfg)
    assert np.max(np.abs(ns_relu.structural_run(u0, cfg, nl).coeffs - ref.coeffs)) <= 1e-12


def test_config_mismatch_is_rejected():
    cfg = ns.NsRunConfig(K=2, M=1, T=0.02)
    with pytest.raises(ValueError):
        ns_relu.build_step_net(cfg, ns_relu.EmulatedNonlinearity(3, cfg.m_bar, cfg.eps))


def _shifted_taylor_green(K, shift, t=0.0, nu=0.0):
    k1, k2 = ns.wavenumbers(K)
    phase = np.exp(-1j * (k1 * shift[0] + k2 * shift[1]))
    return ns.SpectralField(ns.taylor_green(K, t, nu).coeffs * phase)


SHIFTS = [(0.0, 0.0), (0.7, -0.3), (1.9, 2.4)]


def _study(shift, Ks=(2, 4, 8), T=0.25, nu=0.1):
    cfgs = [ns.NsRunConfig(K=K, M=1, T=T, nu=nu) for K in Ks]
    return ns_relu.emulation_error_study(cfgs, lambda K: _shifted_taylor_green(K, shift),
                                         lambda c: _shifted_taylor_green(c.K, shift, c.T, c.nu))


@pytest.fixture(scope="module")
def study_rows():
    return {s: _study(s) for s in SHIFTS}


def test_emulated_error_decreases_under_refinement(study_rows):
    for rows in study_rows.values():
        errs = [r.emulated_error for r in rows]
        assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_emulated_error_respects_accumulated_budget(study_rows):
    # each step adds at most ~2 dt eps of emulation error on top of the exact scheme
    for rows in study_rows.values():
        for r in rows:
            cfg = ns.NsRunConfig(K=r.K, M=1, T=0.25, nu=0.1)
            assert r.emulated_error <= r.arithmetic_error + 2.0 * cfg.T * cfg.eps * math.e


@pytest.mark.xfail(strict=True, reason="Taylor-Green data make the exact scheme error ~1e-8, far below the "
                                       "eps-level emulation error, so the factor-2 comparison cannot hold")
def test_emulated_error_within_factor_two_of_exact_scheme(study_rows):
    for rows in study_rows.values():
        for r in rows:
            assert r.emulated_error <= 2.0 * r.arithmetic_error


def test_inviscid_emulated_run_keeps_norm_bound():
    cfg = ns.NsRunConfig(K=4, M=1, T=0.1, nu=0.0)
    nl = ns_relu.EmulatedNonlinearity(cfg.K, cfg.m_bar, cfg.eps)
    u, log = ns.run(ns.random_divergence_free(4, 3, 1.0), cfg, nl)
    s = log.summary()
    assert s["norm_bound_ok"] and max(log.norms) <= math.e * cfg.M
