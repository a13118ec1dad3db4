import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcanet import model, pca, nn, darcy
from pcanet.field import GridGeometry, InnerProductSpec, TORUS, L2, H10, Field, random_trig_field


def _torus_samples(n, seed, points=32, decay=1.5):
    g = GridGeometry(1, points, TORUS)
    x = np.stack([random_trig_field(g, decay, [seed, k]).flat for k in range(n)])
    return g, InnerProductSpec(L2, g), x


def _identity_model(d=5, seed=0):
    g, spec, x = _torus_samples(64, seed)
    basis = pca.empirical_pca(x, spec, d)
    return g, spec, x, model.assemble((basis, basis), nn.identity_net(d))


def test_identity_trick_predicts_orthogonal_projection():
    g, spec, x, m = _identity_model()
    u = Field(g, x[3])
    out = model.predict(m, u)
    phi = m.output_basis.basis
    # projection coefficients are the L2 inner products with each basis function
    coeffs = np.array([np.sum(u.flat * p) * g.spacing for p in phi])
    assert np.allclose(out.flat, coeffs @ phi, atol=1e-12)
    again = model.predict(m, out)
    assert np.allclose(again.flat, out.flat, atol=1e-12)


def test_zero_network_predicts_zero_field():
    g, spec, x, m = _identity_model()
    z = model.assemble((m.input_basis, m.output_basis), nn.zero_init([5, 7, 5]))
    assert np.all(model.predict(z, x[0]).flat == 0.0)


def test_composition_matches_manual_stages():
    g, spec, x, _ = _identity_model()
    bx = pca.empirical_pca(x, spec, 4)
    by = pca.empirical_pca(x ** 2, spec, 3)
    net = nn.he_init([4, 9, 3], 1)
    m = model.assemble((bx, by), net)
    manual = pca.decode_many(by, nn.forward(net, pca.encode_many(bx, x[:6])))
    assert np.max(np.abs(model.predict_many(m, x[:6]) - manual)) <= 1e-14


def test_dimension_mismatch_is_rejected():
    g, spec, x, m = _identity_model()
    with pytest.raises(ValueError):
        model.assemble((m.input_basis, m.output_basis), nn.identity_net(4))


@given(st.integers(0, 10_000))
def test_decoder_is_one_lipschitz_from_latents(seed):
    g, spec, x, m = _identity_model(d=6)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 6)) * rng.uniform(0.01, 10)
    da, db = pca.decode_many(m.output_basis, np.stack([a, b]))
    dist = math.sqrt(float(np.sum((da - db) ** 2)) * g.spacing)
    assert dist <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-15


def test_identity_operator_decomposition():
    g, spec, x, m = _identity_model(seed=1)
    test = _torus_samples(40, 99)[2]
    rep = model.error_decomposition(m, test, test, oracle=lambda v: v, lipschitz=1.0, lipschitz_kind="exact")
    assert rep.total == pytest.approx(rep.enc_y, abs=1e-14)
    assert rep.total == pytest.approx(rep.enc_x, abs=1e-14)
    assert rep.psi <= 1e-14


@pytest.mark.parametrize("seed", range(20))
def test_decomposition_chains_on_random_linear_operators(seed):
    inst = model.linear_instance(seed)
    data = inst.data
    parts = model.split_indices(len(data), seed=seed)
    bx, by = model.fit_bases(data, 6, 5, parts["pca"])
    rng = np.random.default_rng(seed)
    net = nn.he_init([6, 12, 5], seed) if seed % 2 else model.linear_net(rng.standard_normal((5, 6)))
    m = model.assemble((bx, by), net)
    t = parts["test"]
    rep = model.error_decomposition(m, data.x[t], data.y[t], data.oracle, inst.lipschitz, "exact", check=False)
    assert rep.total <= rep.enc_y + rep.psi_star + 1e-10
    assert rep.psi_star <= inst.lipschitz * rep.enc_x + rep.psi + 1e-10


def test_decomposition_reports_oracle_failure():
    g, spec, x, m = _identity_model()

    def broken(_):
        raise RuntimeError("solver diverged")
    with pytest.raises(model.OracleError):
        model.error_decomposition(m, x[:4], x[:4], oracle=broken)


def test_lipschitz_estimate_never_exceeds_exact_norm():
    inst = model.linear_instance(3)
    d = inst.data
    est = model.empirical_lipschitz(d.oracle, d.x, d.x_spec, d.y_spec, pairs=300)
    assert 0 < est <= inst.lipschitz * (1 + 1e-12)


def _fourier_diagonal_instance(n=240, points=32, seed=0):
    """A u = real Fourier multiplier, so A is diagonal in the trig PCA basis."""
    g, spec, x = _torus_samples(n, seed, points)
    k = np.fft.fftfreq(points, 1.0 / points)
    mult = 1.0 / (1.0 + np.abs(k)) * np.cos(0.3 * k)

    def apply(v):
        return np.real(np.fft.ifft(np.fft.fft(np.atleast_2d(v), axis=1) * mult, axis=1))
    return model.PairedData(x, apply(x), spec, spec, g, g, apply)


def test_linear_truth_trained_within_three_times_optimal_linear():
    data = _fourier_diagonal_instance()
    parts = model.split_indices(len(data), seed=0)
    cfg = nn.TrainConfig(epochs=600, learning_rate=2e-3, batch_size=16, seed=0)
    m = model.train_pipeline(data, 6, 6, cfg, hidden=(32, 32), partitions=parts)
    t = parts["test"]
    trained = model.error_decomposition(m, data.x[t], data.y[t]).total
    # closed-form least squares between the same encoders is the best linear latent map
    xi = pca.encode_many(m.input_basis, data.x[parts["train"]])
    eta = pca.encode_many(m.output_basis, data.y[parts["train"]])
    a, b = model.least_squares_map(xi, eta)
    best = model.assemble((m.input_basis, m.output_basis), model.linear_net(a, b))
    optimal = model.error_decomposition(best, data.x[t], data.y[t]).total
    assert trained <= 3.0 * optimal


def test_insufficient_samples_raise():
    data = _fourier_diagonal_instance(n=24)
    with pytest.raises(ValueError, match="insufficient"):
        model.train_pipeline(data, 10, 3, nn.TrainConfig(epochs=1))


def test_split_is_disjoint_and_seeded():
    a = model.split_indices(100, seed=4)
    b = model.split_indices(100, seed=4)
    sets = [set(v.tolist()) for v in a.values()]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_lower_bound_for_perfect_finite_rank_model():
    rng = np.random.default_rng(0)
    basis_vecs = np.linalg.qr(rng.standard_normal((10, 3)))[0].T
    y = rng.standard_normal((50, 3)) @ basis_vecs
    by = pca.empirical_pca(y, d=3)
    m = model.assemble((by, by), nn.identity_net(3))
    rep = model.error_decomposition(m, y, y)
    assert pca.tail_sum(by, 3) == pytest.approx(0.0, abs=1e-12)
    gap = model.lower_bound_gap(m, by, rep.total)
    assert gap == pytest.approx(rep.total ** 2) and gap >= 0


def test_lower_bound_with_no_output_modes_is_minus_trace():
    lam = np.array([3.0, 1.0, 0.5])
    assert model.lower_bound_gap(0, lam, 2.0) == pytest.approx(4.0 - 4.5)


def test_report_serializes_to_rows():
    g, spec, x, m = _identity_model()
    rep = model.error_decomposition(m, x[:8], x[:8], alt_specs={"l2": spec})
    names = [k for k, _ in rep.rows()]
    assert {"total", "enc_x", "enc_y", "psi_star", "tail", "total_l2"} <= set(names)


@pytest.fixture(scope="module")
def darcy_runs():
    prob = darcy.default_problem(33, 16)
    data = model.darcy_pairs(darcy.sample_dataset(prob, 512, seed=0))
    parts = model.split_indices(len(data), seed=0)
    cfg = nn.TrainConfig(epochs=1000, learning_rate=1e-3, batch_size=32, seed=0)
    out = {}
    for d in (2, 4, 8):
        m = model.train_pipeline(data, d, d, cfg, partitions=parts)
        t = parts["test"]
        out[d] = (m, model.error_decomposition(m, data.x[t], data.y[t], tail_samples=data.y[parts["pca"]],
                                               alt_specs={"l2": prob.l2}))
    return data, parts, cfg, out


def test_darcy_error_improves_with_dimension(darcy_runs):
    _, _, _, runs = darcy_runs
    assert runs[8][1].total < runs[2][1].total
    for lo, hi in ((2, 4), (4, 8)):
        a, b = runs[lo][1], runs[hi][1]
        # squared-error stderr converted to an RMS tolerance
        tol = 2 * a.total_sq_stderr / (2 * a.total)
        assert b.total <= a.total + tol


def test_darcy_lower_bound_gap_within_slack(darcy_runs):
    _, _, _, runs = darcy_runs
    for d, (m, rep) in runs.items():
        assert rep.total ** 2 - rep.tail >= -model.lower_bound_slack(rep), d


def test_darcy_run_is_deterministic(darcy_runs):
    data, parts, cfg, runs = darcy_runs
    again = model.train_pipeline(data, 2, 2, cfg, partitions=parts)
    t = parts["test"]
    assert model.error_decomposition(again, data.x[t], data.y[t]).total == \
        pytest.approx(runs[2][1].total, abs=1e-12)
    assert again.provenance["partitions"]["test"] == parts["test"].tolist()
