import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcanet import _accel
from pcanet.field import (BOX, H10, HS, L2, TORUS, Field, GridGeometry, InnerProductSpec, from_function,
                          half_lattice, inner_product, norm, random_trig_field, trig_field_covariance, zeros,
                          check_vanishing_boundary)


def test_torus_l2_norm_of_one_is_domain_volume():
    g = GridGeometry(2, 16, TORUS)
    one = Field(g, np.ones(g.shape))
    assert norm(InnerProductSpec(L2, g), one) ** 2 == pytest.approx((2 * math.pi) ** 2, rel=1e-14)


def test_box_grid_is_interior():
    g = GridGeometry(1, 7, BOX)
    assert g.spacing == pytest.approx(1 / 8)
    assert np.allclose(g.axes()[0], np.arange(1, 8) / 8)


def test_h10_norm_matches_unit_coefficient_operator():
    # <u, -Lap_h u> from the 5-point stencil is an independent route to the same quadratic form
    g = GridGeometry(2, 15, BOX)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(g.shape)
    ones = np.ones(g.shape)
    ax, ay = _accel.harmonic_faces(ones)
    lap = _accel.stencil_apply(u, ax, ay, g.spacing)
    form = g.spacing ** 2 * float(np.sum(u * lap))
    assert norm(InnerProductSpec(H10, g), Field(g, u)) ** 2 == pytest.approx(form, rel=1e-12)


def test_h10_norm_of_sine_product_converges():
    # |grad sin(pi x) sin(pi y)|^2 integrates to pi^2 / 2
    vals = []
    for p in (15, 31, 63):
        g = GridGeometry(2, p, BOX)
        u = from_function(g, lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y))
        vals.append(abs(norm(InnerProductSpec(H10, g), u) ** 2 - math.pi ** 2 / 2))
    assert vals[0] / vals[1] > 3.5 and vals[1] / vals[2] > 3.5


def test_hs_norm_of_cosine():
    g = GridGeometry(1, 32, TORUS)
    u = from_function(g, lambda x: np.cos(x))
    assert norm(InnerProductSpec(HS, g, s=0.0), u) ** 2 == pytest.approx(math.pi, rel=1e-12)
    assert norm(InnerProductSpec(HS, g, s=1.0), u) ** 2 == pytest.approx(2 * math.pi, rel=1e-12)


def test_spec_domain_checks():
    with pytest.raises(ValueError):
        InnerProductSpec(H10, GridGeometry(1, 8, TORUS))
    with pytest.raises(ValueError):
        InnerProductSpec(HS, GridGeometry(1, 8, BOX))


def test_field_rejects_nonfinite_and_is_read_only():
    g = GridGeometry(1, 4, TORUS)
    with pytest.raises(ValueError):
        Field(g, np.array([0.0, np.nan, 0.0, 0.0]))
    f = zeros(g)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_vanishing_boundary_check():
    g = GridGeometry(1, 9, BOX)
    check_vanishing_boundary(from_function(g, lambda x: np.sin(math.pi * x)), tol=0.2)


@given(st.integers(0, 2 ** 31), st.sampled_from([L2, HS]))
def test_inner_product_is_symmetric_bilinear_positive(seed, kind):
    g = GridGeometry(1, 12, TORUS)
    spec = InnerProductSpec(kind, g, s=0.5 if kind == HS else 0.0)
    rng = np.random.default_rng(seed)
    u, v, w = (Field(g, rng.standard_normal(12)) for _ in range(3))
    a, b = rng.standard_normal(2)
    assert inner_product(spec, u, v) == pytest.approx(inner_product(spec, v, u), rel=1e-12, abs=1e-12)
    lhs = inner_product(spec, u * a + v * b, w)
    rhs = a * inner_product(spec, u, w) + b * inner_product(spec, v, w)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
    assert inner_product(spec, u, u) > 0


def test_metric_is_root_gram():
    g = GridGeometry(2, 6, BOX)
    spec = InnerProductSpec(H10, g)
    r = spec.root()
    assert np.allclose(spec.metric(), r.T @ r)


def test_half_lattice_covers_each_pair_once():
    hl = half_lattice(2, 2)
    assert len(hl) == (5 ** 2 - 1) // 2
    assert not any(tuple(-c for c in k) in hl for k in hl)


def test_random_trig_field_single_mode_and_decay_guard():
    g = GridGeometry(1, 16, TORUS)
    u = random_trig_field(g, math.inf, 3)
    assert np.allclose(np.abs(u.flat), np.abs(np.cos(g.axes()[0])))
    with pytest.raises(ValueError):
        random_trig_field(g, 0.5, 0)


def test_random_trig_field_covariance_matches_samples():
    g = GridGeometry(1, 16, TORUS)
    cov = trig_field_covariance(g, 1.5)
    x = np.stack([random_trig_field(g, 1.5, [9, k]).flat for k in range(3000)])
    emp = x.T @ x / x.shape[0]
    assert np.max(np.abs(emp - cov)) < 0.1 * np.max(np.abs(cov))
