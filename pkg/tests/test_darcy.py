import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy
from hypothesis import given, strategies as st

from pcanet import darcy
from pcanet.field import BOX, Field, GridGeometry, from_function

X, Y = sympy.symbols("x y")
A_EXPR = 1 + sympy.Rational(1, 2) * sympy.sin(sympy.pi * X) * sympy.cos(sympy.pi * Y)
W_EXPR = sympy.sin(sympy.pi * X) * sympy.sin(2 * sympy.pi * Y) * (1 + X)
F_EXPR = -(sympy.diff(A_EXPR * sympy.diff(W_EXPR, X), X) + sympy.diff(A_EXPR * sympy.diff(W_EXPR, Y), Y))
A_FN, W_FN, F_FN = (sympy.lambdify((X, Y), e, "numpy") for e in (A_EXPR, W_EXPR, F_EXPR))


def manufactured_error(points):
    g = GridGeometry(2, points, BOX)
    prob = darcy.DarcyProblem(darcy.ExpansionSpec(g, 1.0, l_trunc=0), from_function(g, F_FN))
    a = from_function(g, A_FN)
    w = darcy.solve_darcy(prob, a)
    exact = from_function(g, W_FN)
    err = math.sqrt(g.spacing ** 2 * float(np.sum((w.flat - exact.flat) ** 2)))
    return err, darcy.apriori_check(prob, a, w)


def test_manufactured_solution_converges_at_second_order():
    errs = [manufactured_error(p)[0] for p in (15, 31, 63, 127)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.5 <= r <= 4.5 for r in ratios), ratios


def _assembled_operator(a, h):
    """Independent sparse assembly of the harmonic-face 5-point operator."""
    p = a.shape[0]
    pad = np.pad(a, 1, mode="edge")
    idx = np.arange(p * p).reshape(p, p)
    rows, cols, vals = [], [], []
    for i in range(p):
        for j in range(p):
            diag = 0.0
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = pad[i + 1 + di, j + 1 + dj]
                face = 2 * a[i, j] * nb / (a[i, j] + nb)
                diag += face
                ii, jj = i + di, j + dj
                if 0 <= ii < p and 0 <= jj < p:
                    rows.append(idx[i, j]); cols.append(idx[ii, jj]); vals.append(-face / h ** 2)
            rows.append(idx[i, j]); cols.append(idx[i, j]); vals.append(diag / h ** 2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(p * p, p * p))


def test_solver_matches_sparse_direct_solve():
    prob = darcy.default_problem(17, 16)
    a = darcy.sample_coefficient(prob.spec, darcy.sample_z(prob.spec, 5, 0))
    w = darcy.solve_darcy(prob, a)
    mat = _assembled_operator(a.values[0], prob.geometry.spacing)
    ref = spla.spsolve(mat.tocsc(), prob.f.flat)
    assert np.max(np.abs(w.flat - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert np.allclose(darcy.apply_operator(prob, a, w).reshape(-1), mat @ w.flat, atol=1e-8)


def test_energy_identity_and_apriori_bound():
    _, rep = manufactured_error(31)
    assert rep.identity_residual <= 1e-8 and rep.ok


def test_cosine_modes_order():
    assert darcy.cosine_modes(6) == [(0, 1), (1, 0), (0, 2), (1, 1), (2, 0), (0, 3)]


def test_rho_is_orthonormal():
    gram = darcy.trapezoid_gram(darcy.cosine_modes(20))
    assert np.max(np.abs(gram - np.eye(20))) < 1e-12


def test_from_kappa_meets_the_smallness_condition_with_equality():
    spec = darcy.ExpansionSpec.from_kappa(GridGeometry(2, 9, BOX), 2.0, 16, 2.0, 0.5)
    assert spec.variation_sup == pytest.approx(0.5 / 1.5 * 2.0, rel=1e-12)
    lam, big = darcy.coercivity_bounds(spec)
    assert lam == pytest.approx(2.0 / 1.5)
    assert big == pytest.approx(2.0 + spec.variation_sup)
    with pytest.raises(ValueError):
        darcy.ExpansionSpec(GridGeometry(2, 9, BOX), 1.0, 16, 10.0, 2.0, 1.0)


def test_default_coercivity_bounds():
    assert darcy.coercivity_bounds(darcy.default_problem(9).spec) == pytest.approx((0.5, 1.5))


@given(st.integers(0, 10 ** 6))
def test_sampled_coefficients_are_coercive(seed):
    spec = darcy.default_problem(9, 32).spec
    lam, big = darcy.coercivity_bounds(spec)
    a = darcy.sample_coefficient(spec, darcy.sample_z(spec, seed, 0))
    assert lam <= a.flat.min() and a.flat.max() <= big


def test_parameter_and_coercivity_errors():
    prob = darcy.default_problem(9, 4)
    with pytest.raises(ValueError):
        darcy.sample_coefficient(prob.spec, np.full(4, 2.0))
    with pytest.raises(darcy.SolverError):
        darcy.solve_darcy(prob, -np.ones(prob.geometry.shape))


def test_samples_depend_only_on_seed_and_index():
    prob = darcy.default_problem(9, 8)
    ds = darcy.sample_dataset(prob, 3, 11)
    assert np.array_equal(ds.z[2], darcy.sample_z(prob.spec, 11, 2))
    again = darcy.sample_dataset(prob, 3, 11)
    assert np.array_equal(ds.w, again.w)
    op = darcy.solution_operator(prob)
    assert np.allclose(op(ds.a[:2]), ds.w[:2])


def test_dual_norm_of_zero_load():
    prob = darcy.default_problem(9, 4)
    assert darcy.dual_norm(prob, Field(prob.geometry, np.zeros(prob.geometry.shape))) == 0.0
