import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcanet import experiments as ex, pca, darcy
from pcanet.field import GridGeometry, InnerProductSpec, TORUS, BOX, L2


def test_exact_power_law_slope():
    j = np.arange(1, 40)
    fit = ex.decay_fit(j ** -2.0)
    assert fit.slope == pytest.approx(-2.0, abs=0.05)


def test_constant_sequence_has_zero_slope():
    assert ex.decay_fit(np.full(10, 3.0)).slope == pytest.approx(0.0, abs=1e-12)


def test_noisy_power_law_slope():
    rng = np.random.default_rng(0)
    j = np.arange(1, 64)
    fit = ex.decay_fit(j ** -2.0 * (1 + 0.1 * rng.standard_normal(j.size)))
    assert -2.2 <= fit.slope <= -1.8


@given(st.floats(-4.0, 4.0), st.floats(0.1, 100.0))
def test_fit_recovers_any_exponent(p, c):
    x = np.geomspace(1, 1000, 9)
    assert ex.fit_rate(x, c * x ** p).slope == pytest.approx(p, abs=0.05)


@pytest.mark.parametrize("bad", [[1.0, 0.0, 0.5], [1.0, -1.0, 2.0], [1.0, 0.5]])
def test_fit_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        ex.decay_fit(bad)


def test_rank_one_distribution_has_no_excess_risk():
    lam = np.array([1.0, 0.0, 0.0, 0.0])
    truth = pca.CovarianceSummary(np.diag(lam))
    for n in (1, 2, 10):
        x = ex.gaussian_samples(lam, n, np.random.default_rng(n))
        assert pca.excess_risk(pca.empirical_pca(x, d=1), truth) == pytest.approx(0.0, abs=1e-14)


def test_pca_rate_study_is_nonnegative_and_reproducible():
    a = ex.pca_rate_study(n_grid=(32, 64, 128, 256), trials=8)
    b = ex.pca_rate_study(n_grid=(32, 64, 128, 256), trials=8)
    assert a.checks["nonnegative"]
    assert a.to_dict() == b.to_dict()
    means = [r["mean"] for r in a.rows]
    assert means[-1] < means[0]


def test_single_mode_ensemble_has_no_tail():
    g = GridGeometry(1, 64, TORUS)
    x_axis = g.axes()[0]
    rng = np.random.default_rng(1)
    x = np.stack([rng.standard_normal() * np.cos(3 * x_axis) for _ in range(20)])
    basis = pca.empirical_pca(x, InnerProductSpec(L2, g), d=1)
    assert pca.tail_sum(basis, 1) <= 1e-12 * basis.eigenvalues[0]


def test_smoothness_study_one_dimension():
    rep = ex.smoothness_decay_study(1.0, 1)
    assert rep.passed and rep.fits["tail"].slope <= -1.7


def test_smoothness_study_rejects_underresolved_grid():
    with pytest.raises(ValueError):
        ex.smoothness_decay_study(1.0, 1, points=16, samples=64)
    with pytest.raises(ValueError):
        ex.smoothness_decay_study(0.0, 1)


def test_deterministic_darcy_coefficient_has_no_input_tail():
    g = GridGeometry(2, 17, BOX)
    prob = darcy.DarcyProblem(darcy.ExpansionSpec(g, 1.0, l_trunc=8, m_const=0.0))
    rep = ex.darcy_spectrum_study(prob, samples=8, d_grid=(1, 2, 3))
    assert rep.checks["input_exponent"]
    bx = pca.empirical_pca(darcy.sample_dataset(prob, 4, 0).a, prob.l2, d=1)
    assert pca.tail_sum(bx, 1) <= 1e-12 * bx.eigenvalues[0]


def test_ns_study_small(tmp_path):
    rep = ex.ns_convergence_study(K=4, T=0.25, dts=(1 / 8, 1 / 16, 1 / 32), Ks=(2, 4, 8), r=3.0)
    assert rep.checks["temporal_order"]
    assert rep.checks["norm_bound"]
    rep.write_csv(tmp_path / "r.csv")
    rep.write_json(tmp_path / "r.json")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.startswith("parameter,mean,stderr")
    assert "temporal" in json.loads((tmp_path / "r.json").read_text())["fits"]


def test_band_limited_initial_data_has_zero_projection_error():
    from pcanet import spectral_ns as ns
    K = 4
    u = ns.taylor_green(K, 0.0, 0.1)
    proj = ns.from_grid(ns.to_grid(u, 4 * K + 1), K)
    assert np.max(np.abs(np.asarray(getattr(proj, "coeffs", proj)) - u.coeffs)) <= 1e-13


def test_study_spec_validation():
    with pytest.raises(ValueError):
        ex.StudySpec("nope", (1,))
    with pytest.raises(ValueError):
        ex.StudySpec("pca-rate", ())
    rep = ex.run_study(ex.StudySpec("pca-rate", (16, 32, 64), params={"trials": 4}))
    assert [r["parameter"] for r in rep.rows] == [16, 32, 64]
