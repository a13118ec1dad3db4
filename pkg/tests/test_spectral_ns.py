import itertools
import math

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from pcanet import spectral_ns as ns


def brute_force_nl(cu, cv, K):
    """P_K Leray( sum_{p+q=k} (u_p . i q) v_q ) by direct summation."""
    out = np.zeros_like(cu)
    rng = range(-K, K + 1)
    for p1, p2, q1, q2 in itertools.product(rng, rng, rng, rng):
        k1, k2 = p1 + q1, p2 + q2
        if abs(k1) > K or abs(k2) > K:
            continue
        up = cu[:, p1 + K, p2 + K]
        dot = 1j * (up[0] * q1 + up[1] * q2)
        out[:, k1 + K, k2 + K] += dot * cv[:, q1 + K, q2 + K]
    for k1, k2 in itertools.product(rng, rng):
        kk = k1 * k1 + k2 * k2
        if kk:
            w = out[:, k1 + K, k2 + K]
            out[:, k1 + K, k2 + K] = w - np.array([k1, k2]) * (k1 * w[0] + k2 * w[1]) / kk
    return out


def test_nonlinearity_matches_direct_convolution():
    K = 3
    u = ns.random_divergence_free(K, 1, 1.0)
    v = ns.random_divergence_free(K, 2, 1.0)
    got = ns.nonlinear_term(u, v).coeffs
    assert np.max(np.abs(got - brute_force_nl(u.coeffs, v.coeffs, K))) < 1e-14


def test_taylor_green_solves_navier_stokes_symbolically():
    x, y, t, nu = sympy.symbols("x y t nu")
    decay = sympy.exp(-2 * nu * t)
    u = sympy.Matrix([sympy.sin(x) * sympy.cos(y), -sympy.cos(x) * sympy.sin(y)]) * decay
    div = sympy.diff(u[0], x) + sympy.diff(u[1], y)
    adv = sympy.Matrix([u[0] * sympy.diff(c, x) + u[1] * sympy.diff(c, y) for c in u])
    lap = sympy.Matrix([sympy.diff(c, x, 2) + sympy.diff(c, y, 2) for c in u])
    heat = sympy.diff(u, t) - nu * lap
    curl_adv = sympy.diff(adv[1], x) - sympy.diff(adv[0], y)  # advection is a pure gradient
    assert sympy.simplify(div) == 0
    assert sympy.simplify(heat) == sympy.zeros(2, 1)
    assert sympy.simplify(curl_adv) == 0


def test_taylor_green_nonlinearity_vanishes_and_matches_grid_values():
    K = 4
    tg = ns.taylor_green(K)
    assert ns.nonlinear_term(tg, tg).norm() < 1e-14
    n = ns.dealiased_points(K)
    xx, yy = ns.grid_points(n)
    grid = ns.to_grid(tg, n)
    assert np.allclose(grid[0], np.sin(xx) * np.cos(yy), atol=1e-14)
    assert np.allclose(grid[1], -np.cos(xx) * np.sin(yy), atol=1e-14)


def test_synthesis_matches_direct_fourier_sum_and_inverts():
    K = 3
    u = ns.random_divergence_free(K, 5, 1.0)
    n = ns.dealiased_points(K)
    xs = 2 * math.pi * np.arange(n) / n
    e = np.exp(1j * np.outer(xs, np.arange(-K, K + 1)))
    direct = np.einsum("ia,cab,jb->cij", e, u.coeffs, e).real
    assert np.allclose(ns.synthesize(u.coeffs, n), direct, atol=1e-13)
    assert np.allclose(ns.analyze(direct, K), u.coeffs, atol=1e-14)


@given(st.integers(0, 10 ** 6))
def test_leray_projection_is_idempotent_and_divergence_free(seed):
    rng = np.random.default_rng(seed)
    K = 3
    c = rng.standard_normal((2, 7, 7)) + 1j * rng.standard_normal((2, 7, 7))
    p = ns.leray_project(ns.SpectralField(c))
    assert p.divergence_defect() < 1e-13
    assert np.allclose(ns.leray_project(p).coeffs, p.coeffs, atol=1e-14)


@given(st.integers(0, 10 ** 6))
def test_nonlinearity_is_skew(seed):
    K = 6
    u = ns.random_divergence_free(K, seed, 1.0)
    v = ns.random_divergence_free(K, seed + 1, 1.0)
    val = np.vdot(v.coeffs, ns.nonlinear_term(u, v).coeffs).real
    assert abs(val) <= 1e-12 * u.norm() * v.norm() ** 2


def test_random_fields_are_real_and_normalized():
    u = ns.random_divergence_free(5, 3, 0.7)
    assert u.norm() == pytest.approx(0.7)
    assert u.hermitian_defect() < 1e-15 and u.divergence_defect() < 1e-14
    assert abs(u.coeffs[:, 5, 5]).max() == 0.0


def test_real_interleaving_roundtrip():
    u = ns.random_divergence_free(3, 0, 1.0)
    assert np.array_equal(ns.SpectralField.from_real(u.to_real(), 3).coeffs, u.coeffs)
    assert np.linalg.norm(u.to_real()) == pytest.approx(u.norm())


def test_config_derived_values():
    cfg = ns.NsRunConfig(K=4, M=2, r=3, T=0.5, nu=0.1)
    mbar = 2 * (math.e * 2 + 2)
    dt_max = min(1.0, 4.0 ** -3, 1 / (16 * mbar))
    n_t = math.ceil(0.5 / dt_max)
    assert cfg.m_bar == pytest.approx(mbar)
    assert cfg.n_steps == n_t and cfg.dt == pytest.approx(0.5 / n_t)
    assert cfg.eps == pytest.approx(cfg.dt / (3 * 2 * 1.0))
    assert cfg.L == math.ceil(math.log2(3 * 2 * 1.0 / cfg.dt ** 2))
    assert cfg.cfl_satisfied
    assert ns.NsRunConfig.from_dict(cfg.to_dict()) == cfg


def test_config_errors():
    with pytest.raises(ValueError):
        ns.NsRunConfig(K=4, M=0.5)
    with pytest.raises(ValueError):
        ns.NsRunConfig(K=4, r=2.0)
    with pytest.raises(ValueError):
        ns.NsRunConfig(K=4, T=1.0, dt_override=0.3)


def test_norm_guard_rejects_large_initial_data():
    cfg = ns.NsRunConfig(K=3, M=1, T=0.1)
    with pytest.raises(ns.NormBoundError):
        ns.run(ns.random_divergence_free(3, 0, 1.5), cfg)


def test_contraction_and_norm_bounds_on_random_data():
    cfg = ns.NsRunConfig(K=4, M=1, T=0.2, nu=0.0)
    _, log = ns.run(ns.random_divergence_free(4, 8, 1.0), cfg)
    s = log.summary()
    assert s["contraction_ok"] and s["norm_bound_ok"] and s["energy_ok"] and s["iterate_bound_ok"]
    assert 0.0 < s["max_contraction_ratio"] <= 0.5 + 1e-10


def test_fixed_point_iteration_satisfies_the_midpoint_scheme():
    cfg = ns.NsRunConfig(K=4, M=1, T=0.05, nu=0.05)
    _, log = ns.run(ns.random_divergence_free(4, 2, 1.0), cfg, keep_trajectory=True)
    defects = ns.remainder_diagnostic(log)
    assert defects.max() < 1e-12


def test_taylor_green_is_second_order_in_time():
    errs = []
    for dt in (1 / 8, 1 / 16, 1 / 32):
        cfg = ns.NsRunConfig(K=4, M=1, T=0.5, nu=0.1, dt_override=dt)
        errs.append(ns.taylor_green_error(4, cfg)[0])
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_inviscid_taylor_green_is_steady():
    cfg = ns.NsRunConfig(K=4, M=1, T=0.25, nu=0.0)
    err, log = ns.taylor_green_error(4, cfg)
    assert err < 1e-13 and log.summary()["norm_bound_ok"]
