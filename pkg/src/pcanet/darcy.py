"""Parametric Darcy coefficients and a finite-difference elliptic solver.

The coefficient is ``a(x; z) = abar(x) + sum_l gamma_l z_l rho_l(x)`` with
``gamma_l = M l^(-1-alpha)``, ``z_l in [-1, 1]`` and ``rho_l`` normalized
cosine products on the unit box.  The solver discretizes
``-div(a grad w) = f`` with zero Dirichlet data on interior nodes using a
5-point stencil and harmonic-mean face coefficients.
"""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from . import _accel
from .field import BOX, Field, GridGeometry, InnerProductSpec, H10, L2, norm


def cosine_modes(count):
    """The first ``count`` index pairs (k1, k2) != (0, 0), by k1+k2 then k1."""
    out = []
    total = 1
    while len(out) < count:
        for k1 in range(total + 1):
            out.append((k1, total - k1))
            if len(out) == count:
                break
        total += 1
    return out


def _c(k):
    return 1.0 if k == 0 else math.sqrt(2.0)


def rho_values(geometry, k1, k2):
    x, y = geometry.mesh()
    return _c(k1) * _c(k2) * np.cos(math.pi * k1 * x) * np.cos(math.pi * k2 * y)


def rho_sup(k1, k2):
    return _c(k1) * _c(k2)


def trapezoid_gram(modes, points=None):
    """L2(0,1)^2 Gram matrix of rho_l from the closed trapezoid rule.

    The closed rule on q+1 nodes integrates cos(pi j x) cos(pi k x) exactly
    when j + k < 2q, so this is an independent exact orthonormality check.
    """
    kmax = max(max(k) for k in modes)
    q = points or (2 * kmax + 2)
    t = np.linspace(0.0, 1.0, q + 1)
    w = np.full(q + 1, 1.0 / q)
    w[[0, -1]] *= 0.5
    x, y = np.meshgrid(t, t, indexing="ij")
    ww = np.outer(w, w)
    vals = np.stack([_c(a) * _c(b) * np.cos(math.pi * a * x) * np.cos(math.pi * b * y) for a, b in modes])
    flat = vals.reshape(len(modes), -1)
    return (flat * ww.reshape(-1)) @ flat.T


@dataclass(frozen=True)
class ExpansionSpec:
    """Truncated affine expansion with the smallness condition checked at build time."""

    geometry: GridGeometry
    abar: np.ndarray
    l_trunc: int = 64
    m_const: float = 1.0
    alpha: float = 2.0
    kappa: float = 1.0
    _rho: np.ndarray = dc_field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.geometry.domain != BOX or self.geometry.dim != 2:
            raise ValueError("Darcy problems live on the 2D unit box")
        abar = np.broadcast_to(np.asarray(self.abar, dtype=np.float64), self.geometry.shape).copy()
        abar.setflags(write=False)
        object.__setattr__(self, "abar", abar)
        if abar.min() <= 0:
            raise ValueError("mean field must be positive")
        if self.l_trunc < 0 or self.m_const < 0 or self.alpha <= 0 or self.kappa <= 0:
            raise ValueError("need l_trunc >= 0, m_const >= 0, alpha > 0, kappa > 0")
        budget = self.kappa / (1.0 + self.kappa) * self.abar_min
        if self.variation_sup > budget * (1.0 + 1e-12):
            raise ValueError(
                f"sum gamma_l |rho_l|_inf = {self.variation_sup:.6g} exceeds kappa/(1+kappa) abar_min = {budget:.6g}")
        rho = np.stack([rho_values(self.geometry, *k) for k in self.modes]).reshape(self.l_trunc, -1) \
            if self.l_trunc else np.zeros((0, self.geometry.size))
        rho.setflags(write=False)
        object.__setattr__(self, "_rho", rho)

    @classmethod
    def from_kappa(cls, geometry, abar=1.0, l_trunc=64, alpha=2.0, kappa=1.0):
        """Choose M so the smallness condition holds with equality."""
        probe = cls(geometry, abar, l_trunc, 0.0, alpha, kappa)
        unit = sum(l ** (-1.0 - alpha) * rho_sup(*k) for l, k in enumerate(probe.modes, start=1))
        m_const = kappa / (1.0 + kappa) * probe.abar_min / unit if unit else 0.0
        return cls(geometry, abar, l_trunc, m_const, alpha, kappa)

    @property
    def modes(self):
        return cosine_modes(self.l_trunc)

    @property
    def gammas(self):
        return self.m_const * np.arange(1, self.l_trunc + 1, dtype=np.float64) ** (-1.0 - self.alpha)

    @property
    def rho(self):
        return self._rho

    @property
    def abar_min(self):
        return float(np.min(self.abar))

    @property
    def variation_sup(self):
        return float(sum(g * rho_sup(*k) for g, k in zip(self.gammas, self.modes)))

    def to_dict(self):
        return {"geometry": self.geometry.to_dict(), "abar": float(self.abar.flat[0])
                if np.all(self.abar == self.abar.flat[0]) else self.abar.tolist(),
                "l_trunc": self.l_trunc, "m_const": self.m_const, "alpha": self.alpha,
                "kappa": self.kappa}


def coercivity_bounds(spec):
    """(lambda, Lambda) = (abar_min/(1+kappa), |abar|_inf + sum gamma_l |rho_l|_inf)."""
    return spec.abar_min / (1.0 + spec.kappa), float(np.max(np.abs(spec.abar))) + spec.variation_sup


def sample_coefficient(spec, z):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != spec.l_trunc:
        raise ValueError(f"z must have length {spec.l_trunc}")
    if np.any(np.abs(z) > 1.0):
        raise ValueError("parameters z_l must lie in [-1, 1]")
    vals = spec.abar.reshape(-1) + (spec.gammas * z) @ spec.rho
    return Field(spec.geometry, vals)


@dataclass(frozen=True)
class DarcyProblem:
    spec: ExpansionSpec
    f: Field = None
    rtol: float = 1e-10
    maxiter: int = 20000

    def __post_init__(self):
        if self.f is None:
            object.__setattr__(self, "f", Field(self.geometry, np.ones(self.geometry.shape)))
        if self.f.geometry != self.geometry:
            raise ValueError("right-hand side lives on a different grid")

    @property
    def geometry(self):
        return self.spec.geometry

    @property
    def h10(self):
        return InnerProductSpec(H10, self.geometry)

    @property
    def l2(self):
        return InnerProductSpec(L2, self.geometry)


def default_problem(points_per_dim=33, l_trunc=64, alpha=2.0, kappa=1.0, abar=1.0):
    g = GridGeometry(2, points_per_dim, BOX)
    return DarcyProblem(ExpansionSpec.from_kappa(g, abar, l_trunc, alpha, kappa))


class SolverError(RuntimeError):
    pass


def _coeff_array(problem, a):
    arr = a.values[0] if isinstance(a, Field) else np.asarray(a, dtype=np.float64).reshape(problem.geometry.shape)
    if arr.min() <= 0.0:
        raise SolverError(f"coefficient is not coercive (min a = {arr.min():.3g})")
    return arr


def apply_operator(problem, a, w):
    """(A_h w) for the harmonic-face 5-point stencil."""
    ax, ay = _accel.harmonic_faces(_coeff_array(problem, a))
    wv = w.values[0] if isinstance(w, Field) else np.asarray(w, dtype=np.float64).reshape(problem.geometry.shape)
    return _accel.stencil_apply(wv, ax, ay, problem.geometry.spacing)


def solve_darcy(problem, a, f=None, return_info=False):
    """Solve A_h w = f by conjugate gradients to relative residual ``problem.rtol``."""
    arr = _coeff_array(problem, a)
    rhs = (problem.f if f is None else f).values[0]
    ax, ay = _accel.harmonic_faces(arr)
    w, iters, rel = _accel.cg(rhs, ax, ay, problem.geometry.spacing, problem.rtol, problem.maxiter)
    if rel > problem.rtol:
        raise SolverError(f"CG did not converge: relative residual {rel:.3g} after {iters} iterations")
    out = Field(problem.geometry, w)
    if return_info:
        return out, {"iterations": iters, "relative_residual": rel}
    return out


@dataclass(frozen=True)
class AprioriReport:
    h10_norm: float
    energy: float
    load: float
    identity_residual: float
    coercivity_lhs: float
    ok: bool


def apriori_check(problem, a, w, f=None, tol=1e-8):
    """Energy identity sum a_f (dw)^2 = <f, w> and lambda |w|^2 <= <f, w>."""
    arr = _coeff_array(problem, a)
    rhs = problem.f if f is None else f
    ax, ay = _accel.harmonic_faces(arr)
    energy = _accel.face_energy(w.values[0], ax, ay)
    h = problem.geometry.spacing
    load = float(h * h * np.sum(rhs.values[0] * w.values[0]))
    scale = max(abs(energy), abs(load))
    resid = abs(energy - load) / scale if scale > 0 else 0.0
    lam, _ = coercivity_bounds(problem.spec)
    lam = min(lam, float(arr.min()))
    wn = norm(problem.h10, w)
    lhs = lam * wn * wn
    ok = resid <= tol and lhs <= load * (1.0 + tol) + 1e-300
    if resid > tol:
        raise SolverError(f"energy identity violated: relative residual {resid:.3g}")
    return AprioriReport(wn, energy, load, resid, lhs, ok)


def dual_norm(problem, f=None):
    """Discrete H^-1 norm of f: sqrt(<f, L^-1 f>) with L the unit-coefficient operator."""
    rhs = problem.f if f is None else f
    w0 = solve_darcy(problem, np.ones(problem.geometry.shape), rhs)
    h = problem.geometry.spacing
    return math.sqrt(max(float(h * h * np.sum(rhs.values[0] * w0.values[0])), 0.0))


def sample_z(spec, seed, k):
    """Parameter vector of sample k; depends only on (seed, k)."""
    rng = np.random.default_rng([int(seed), int(k)])
    return rng.uniform(-1.0, 1.0, size=spec.l_trunc)


@dataclass(frozen=True)
class DarcyDataset:
    z: np.ndarray
    a: np.ndarray
    w: np.ndarray
    problem: DarcyProblem
    seed: int

    def __len__(self):
        return self.z.shape[0]

    def inputs(self):
        return [Field(self.problem.geometry, r) for r in self.a]

    def outputs(self):
        return [Field(self.problem.geometry, r) for r in self.w]


def sample_dataset(problem, n, seed):
    if int(n) < 1:
        raise ValueError("need N >= 1")
    zs, as_, ws = [], [], []
    for k in range(int(n)):
        z = sample_z(problem.spec, seed, k)
        a = sample_coefficient(problem.spec, z)
        w = solve_darcy(problem, a)
        zs.append(z)
        as_.append(a.flat)
        ws.append(w.flat)
    return DarcyDataset(np.array(zs), np.array(as_), np.array(ws), problem, int(seed))


def solution_operator(problem):
    """Callable mapping coefficient arrays (B, P) to solution arrays (B, P)."""
    def op(a_batch):
        a_batch = np.atleast_2d(a_batch)
        return np.stack([solve_darcy(problem, a.reshape(problem.geometry.shape)).flat for a in a_batch])
    return op
