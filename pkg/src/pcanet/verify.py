"""Fast invariant suites run by ``pcanet verify``.

Each check returns ``(ok, detail)``; suites are lists of named checks.
"""
import math
import tempfile

import numpy as np

from . import pca, nn, darcy, ns_relu, io
from . import spectral_ns as ns
from .field import GridGeometry, InnerProductSpec, TORUS, L2, random_trig_field


def _pca_tail_identity():
    g = GridGeometry(1, 32, TORUS)
    spec = InnerProductSpec(L2, g)
    x = np.stack([random_trig_field(g, 1.5, [3, k]).flat for k in range(40)])
    basis = pca.empirical_pca(x, spec, d=5)
    err = pca.projection_error_mc(basis, x)
    tail = pca.tail_sum(basis, 5)
    return abs(err - tail) <= 1e-10 * max(1.0, tail), f"train error {err:.3e} vs tail {tail:.3e}"


def _pca_orthonormal():
    g = GridGeometry(1, 32, TORUS)
    spec = InnerProductSpec(L2, g)
    x = np.stack([random_trig_field(g, 1.5, [4, k]).flat for k in range(40)])
    basis = pca.empirical_pca(x, spec, d=6)
    gram = basis.coder @ basis.coder.T
    dev = float(np.max(np.abs(gram - np.eye(6))))
    return dev <= 1e-12, f"max |<phi_i, phi_j> - delta_ij| = {dev:.2e}"


def _excess_bound():
    rng = np.random.default_rng(11)
    worst = -math.inf
    for _ in range(10):
        a = rng.standard_normal((6, 6))
        truth = pca.CovarianceSummary(a @ a.T / 6)
        x = rng.multivariate_normal(np.zeros(6), truth.matrix, size=30)
        basis = pca.empirical_pca(x, d=2)
        lhs = pca.excess_risk(basis, truth)
        rhs = math.sqrt(4) * pca.hs_distance(truth, pca.empirical_covariance(x))
        worst = max(worst, lhs - rhs)
    return worst <= 0.0, f"max(excess - sqrt(2d) hs) = {worst:.3e}"


def _darcy_energy():
    prob = darcy.default_problem(17, 8)
    a = darcy.sample_coefficient(prob.spec, darcy.sample_z(prob.spec, 0, 0))
    w = darcy.solve_darcy(prob, a)
    rep = darcy.apriori_check(prob, a, w)
    return rep.ok, f"energy identity residual {rep.identity_residual:.2e}"


def _darcy_coercive():
    prob = darcy.default_problem(17, 16)
    lam, _ = darcy.coercivity_bounds(prob.spec)
    low = min(float(darcy.sample_coefficient(prob.spec, darcy.sample_z(prob.spec, 1, k)).flat.min())
              for k in range(50))
    return low >= lam, f"min a = {low:.4f} >= lambda = {lam:.4f}"


def _ns_skew():
    worst = 0.0
    for s in range(5):
        u = ns.random_divergence_free(8, 2 * s, 1.0)
        v = ns.random_divergence_free(8, 2 * s + 1, 1.0)
        val = abs(np.vdot(v.coeffs, ns.nonlinear_term(u, v).coeffs).real)
        worst = max(worst, val / (u.norm() * v.norm() ** 2))
    return worst <= 1e-12, f"max |<NL(u, v), v>| / |u||v|^2 = {worst:.2e}"


def _ns_taylor_green():
    cfg = ns.NsRunConfig(K=4, M=1, T=0.25, nu=0.1, dt_override=1 / 32)
    err, log = ns.taylor_green_error(4, cfg)
    return err <= 1e-4 and log.summary()["contraction_ok"], f"Taylor-Green error {err:.2e}"


def _nn_gradient():
    rng = np.random.default_rng(5)
    net = nn.he_init([3, 5, 2], 5)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    gw, _ = nn.backward_gradients(net, x, y)
    h = 1e-6
    w = [np.array(a) for a in net.weights]
    w[0][1, 2] += h
    up = nn.loss(nn.Mlp(w, list(net.biases)), x, y)
    w[0][1, 2] -= 2 * h
    dn = nn.loss(nn.Mlp(w, list(net.biases)), x, y)
    fd = (up - dn) / (2 * h)
    rel = abs(fd - gw[0][1, 2]) / max(abs(fd), 1e-12)
    return rel <= 1e-5, f"relative gradient error {rel:.2e}"


def _relu_product():
    bad = 0
    for m in range(1, 6):
        p = ns_relu.build_product_net(m, 1.0, 2.0)
        bad += ns_relu.lattice_error(p, 51) > p.bound
    return bad == 0, f"{bad} product-bound violations"


def _relu_structural():
    cfg = ns.NsRunConfig(K=2, M=1, T=0.02)
    nl = ns_relu.EmulatedNonlinearity(cfg.K, cfg.m_bar, cfg.eps)
    net = ns_relu.unroll(ns_relu.build_step_net(cfg, nl))
    u0 = ns.random_divergence_free(2, 0, 0.9)
    a, _ = ns.run(u0, cfg, nl)
    diff = float(np.max(np.abs(net(u0).coeffs - a.coeffs)))
    return diff <= 1e-12 and net.size() == net.predicted_size(), f"max coefficient difference {diff:.2e}"


def _io_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        x = np.random.default_rng(0).standard_normal((3, 5))
        io.write_dataset(tmp, io.DatasetManifest("synthetic", {}, 0, 3), {"x": x})
        _, arrays = io.read_dataset(tmp)
        return bool(np.array_equal(arrays["x"], x)), "dataset round trip"


SUITES = {
    "pca": [("tail identity", _pca_tail_identity), ("orthonormal basis", _pca_orthonormal),
            ("excess-risk bound", _excess_bound)],
    "darcy": [("energy identity", _darcy_energy), ("coercivity", _darcy_coercive)],
    "ns": [("skew symmetry", _ns_skew), ("Taylor-Green", _ns_taylor_green)],
    "nn": [("gradient check", _nn_gradient)],
    "relu": [("product bound", _relu_product), ("structural emulation", _relu_structural)],
    "io": [("round trip", _io_roundtrip)],
}


def run_suite(name):
    """Run one suite (or "all"); returns a list of (check, ok, detail)."""
    names = list(SUITES) if name == "all" else [name]
    out = []
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown suite {n!r}")
        for label, fn in SUITES[n]:
            try:
                ok, detail = fn()
            except Exception as exc:  # a crash counts as a failure with its message
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append((f"{n}: {label}", bool(ok), detail))
    return out
