"""Pseudo-spectral 2D Navier-Stokes scheme with a fixed-point midpoint step.

Velocity fields on the torus are stored as truncated Fourier coefficients
``c[i, k1 + K, k2 + K]`` for ``|k|_inf <= K`` (component i in {0, 1}), with
``u_i(x) = sum_k c[i, k] exp(i k.x)``.  Norms are plain l2 norms of the
coefficient array; the L2 norm of the field is 2 pi times that.

One time step solves the midpoint equation

    (u^{m+1} - u^m)/dt = -NL(u^m, u^{m+1/2}) - nu |k|^2 u^{m+1/2}

by L iterations of the map

    F(w)_k = [u^m - dt NL(u^m, (u^m + w)/2) - dt nu |k|^2 u^m / 2] / (1 + dt nu |k|^2 / 2)

started from w = 0, where NL(u, v) = Leray(truncate(u . grad v)) is computed
on the dealiased (4K+1)^2 grid.
"""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np
import scipy.fft as sp_fft

DIM = 2
ROUNDOFF_FLOOR = 1e-14
CONTRACTION_SLACK = 1e-10


class NormBoundError(RuntimeError):
    """Raised when a step leaves the ball guaranteed by the a priori bounds."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class DivergenceError(NormBoundError):
    pass


def wavenumbers(K):
    """Integer wavenumber grids (k1, k2), each of shape (2K+1, 2K+1)."""
    k = np.arange(-K, K + 1)
    return np.meshgrid(k, k, indexing="ij")


def mode_count(K):
    return (2 * K + 1) ** DIM


def dealiased_points(K):
    return 4 * K + 1


class SpectralField:
    """Immutable truncated Fourier representation of a real 2D vector field."""

    __slots__ = ("K", "_c")

    def __init__(self, coeffs, K=None):
        c = np.array(coeffs, dtype=np.complex128)
        if c.ndim != 3 or c.shape[0] != DIM or c.shape[1] != c.shape[2] or c.shape[1] % 2 != 1:
            raise ValueError(f"coefficients must have shape (2, 2K+1, 2K+1), got {c.shape}")
        k = (c.shape[1] - 1) // 2
        if K is not None and int(K) != k:
            raise ValueError(f"coefficient array has cutoff {k}, expected {K}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        c.setflags(write=False)
        self.K = k
        self._c = c

    @property
    def coeffs(self):
        return self._c

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self._c) ** 2)))

    def l2_norm(self):
        return 2.0 * math.pi * self.norm()

    def hermitian_defect(self):
        c = self._c
        return float(np.max(np.abs(c - np.conj(c[:, ::-1, ::-1]))))

    def divergence_defect(self):
        k1, k2 = wavenumbers(self.K)
        return float(np.max(np.abs(k1 * self._c[0] + k2 * self._c[1])))

    def to_real(self):
        """Interleaved (re, im) real vector of length 4 (2K+1)^2."""
        return np.ascontiguousarray(self._c).reshape(-1).view(np.float64).copy()

    @classmethod
    def from_real(cls, vec, K):
        v = np.ascontiguousarray(vec, dtype=np.float64)
        return cls(v.view(np.complex128).reshape(DIM, 2 * K + 1, 2 * K + 1))

    def __add__(self, other):
        return SpectralField(self._c + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self._c - other.coeffs)

    def __mul__(self, s):
        return SpectralField(float(s) * self._c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(K={self.K}, norm={self.norm():.6g})"


def _coeffs(u):
    return u.coeffs if isinstance(u, SpectralField) else np.asarray(u, dtype=np.complex128)


def zeros(K):
    return SpectralField(np.zeros((DIM, 2 * K + 1, 2 * K + 1), dtype=np.complex128))


def to_grid(u, points=None):
    """Values of the real field on an equispaced grid with ``points`` >= 2K+1 per dim."""
    c = _coeffs(u)
    K = (c.shape[1] - 1) // 2
    n = 2 * K + 1 if points is None else int(points)
    if n < 2 * K + 1:
        raise ValueError("grid too coarse for the cutoff")
    big = np.zeros((c.shape[0], n, n), dtype=np.complex128)
    idx = np.arange(-K, K + 1) % n
    big[:, idx[:, None], idx[None, :]] = c
    return (n * n * np.fft.ifft2(big, axes=(1, 2))).real


def from_grid(values, K):
    """Coefficients with |k|_inf <= K of grid samples on an n x n periodic grid."""
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[-1]
    if n < 2 * K + 1:
        raise ValueError("grid too coarse for the cutoff")
    full = np.fft.fft2(v, axes=(-2, -1)) / (n * n)
    idx = np.arange(-K, K + 1) % n
    return full[..., idx[:, None], idx[None, :]]


def grid_points(n):
    x = 2.0 * math.pi * np.arange(n) / n
    return np.meshgrid(x, x, indexing="ij")


def from_function(fn, K, points=None):
    """Coefficients of a K-band field sampled from ``fn(x, y) -> (u1, u2)``."""
    n = 2 * K + 1 if points is None else int(points)
    x, y = grid_points(n)
    vals = np.stack([np.broadcast_to(v, x.shape) for v in fn(x, y)])
    return SpectralField(from_grid(vals, K))


def taylor_green(K, t=0.0, nu=0.0, amplitude=1.0):
    """u = A (sin x cos y, -cos x sin y) exp(-2 nu t), exact for K >= 1."""
    decay = amplitude * math.exp(-2.0 * nu * t)
    return from_function(lambda x, y: (decay * np.sin(x) * np.cos(y), -decay * np.cos(x) * np.sin(y)), K)


def _leray(c):
    K = (c.shape[-1] - 1) // 2
    k1, k2, inv = _leray_tables(K)
    dot = (k1 * c[0] + k2 * c[1]) * inv
    return np.stack([c[0] - k1 * dot, c[1] - k2 * dot])


_TABLES = {}


def _leray_tables(K):
    if K not in _TABLES:
        k1, k2 = wavenumbers(K)
        k2sum = (k1 * k1 + k2 * k2).astype(np.float64)
        inv = np.where(k2sum > 0, 1.0 / np.where(k2sum > 0, k2sum, 1.0), 0.0)
        _TABLES[K] = (k1.astype(np.float64), k2.astype(np.float64), inv)
    return _TABLES[K]


def leray_project(u):
    """Apply I - k k^T/|k|^2 at each k != 0; the k = 0 mode is unchanged."""
    return SpectralField(_leray(_coeffs(u)))


def random_divergence_free(K, seed, norm=1.0, decay=2.0):
    """Random real, mean-free, divergence-free field with |c_k| ~ |k|^-decay."""
    rng = np.random.default_rng(seed)
    k1, k2 = wavenumbers(K)
    amp = np.where((k1 == 0) & (k2 == 0), 0.0, (k1 * k1 + k2 * k2 + 1e-300) ** (-decay / 2.0))
    c = (rng.normal(size=(DIM,) + k1.shape) + 1j * rng.normal(size=(DIM,) + k1.shape)) * amp
    c = 0.5 * (c + np.conj(c[:, ::-1, ::-1]))
    c = leray_project(c).coeffs
    nrm = np.sqrt(np.sum(np.abs(c) ** 2))
    return SpectralField(c * (norm / nrm if nrm > 0 else 0.0))


def _pad(c, n):
    K = (c.shape[-1] - 1) // 2
    big = np.zeros(c.shape[:-2] + (n, n), dtype=np.complex128)
    idx = np.arange(-K, K + 1) % n
    big[..., idx[:, None], idx[None, :]] = c
    return big


def synthesize(c, n):
    """Re sum_k c_k exp(i k.x_j) on the n x n grid, for arrays (..., 2K+1, 2K+1).

    The coefficients are first symmetrized, (c_k + conj(c_-k))/2, which
    leaves the real part unchanged and lets a real inverse FFT do the work.
    """
    K = (c.shape[-1] - 1) // 2
    sym = 0.5 * (c + np.conj(c[..., ::-1, ::-1]))
    half = np.zeros(c.shape[:-2] + (n, n // 2 + 1), dtype=np.complex128)
    rows = np.arange(-K, K + 1) % n
    half[..., rows, :K + 1] = sym[..., :, K:]
    return (n * n) * sp_fft.irfft2(half, s=(n, n), axes=(-2, -1))


def analyze(w, K):
    """Coefficients with |k|_inf <= K of real samples w on an n x n grid."""
    n = w.shape[-1]
    half = sp_fft.rfft2(w, axes=(-2, -1)) / (n * n)
    rows = np.arange(-K, K + 1) % n
    out = np.empty(w.shape[:-2] + (2 * K + 1, 2 * K + 1), dtype=np.complex128)
    out[..., :, K:] = half[..., rows, :K + 1]
    # negative k2 from conjugate symmetry of a real signal
    out[..., :, :K] = np.conj(half[..., (-np.arange(-K, K + 1)) % n, :][..., :, K:0:-1])
    return out


class ExactNonlinearity:
    """NL(u, v) = Leray(P_K(u . grad v)) on the dealiased (4K+1)^2 grid."""

    kind = "exact"

    def __call__(self, u, v):
        return SpectralField(self.bind(_coeffs(u))(_coeffs(v)))

    def bind(self, u):
        """Precompute grid values of u; returns a map from v-coefficients to NL arrays."""
        cu = _coeffs(u)
        K = (cu.shape[1] - 1) // 2
        n = dealiased_points(K)
        return _Bound(synthesize(cu, n), K, n, self._combine)

    @staticmethod
    def _combine(ug, grads):
        # grads[l, i] = d_l v_i on the grid
        return ug[0] * grads[0] + ug[1] * grads[1]


class _Bound:
    def __init__(self, ug, K, n, combine):
        self.ug, self.K, self.n, self.combine = ug, K, n, combine
        k1, k2, _ = _leray_tables(K)
        self.ik = np.stack([1j * k1, 1j * k2])

    def __call__(self, v):
        cv = _coeffs(v)
        dv = self.ik[:, None] * cv[None, :]
        grads = synthesize(dv, self.n)
        return _leray(analyze(self.combine(self.ug, grads), self.K))


EXACT_NL = ExactNonlinearity()


def nonlinear_term(u, v, nl=EXACT_NL):
    cu, cv = _coeffs(u), _coeffs(v)
    if cu.shape != cv.shape:
        raise ValueError("cutoff mismatch between the two arguments")
    return nl(u, v)


def heat_factor(K, dt, nu):
    k1, k2 = wavenumbers(K)
    lap = (k1 * k1 + k2 * k2).astype(np.float64)
    return lap, 1.0 / (1.0 + 0.5 * dt * nu * lap)


def fixed_point_map(u_m, w, dt, nu, nl=EXACT_NL, bound=None):
    """F(w) = [u^m - dt NL(u^m, (u^m + w)/2) - dt nu |k|^2 u^m/2] / (1 + dt nu |k|^2/2)."""
    cu, cw = _coeffs(u_m), _coeffs(w)
    if cu.shape != cw.shape:
        raise ValueError("cutoff mismatch")
    return SpectralField(_fixed_point_array(cu, cw, dt, nu, bound if bound is not None else nl.bind(cu)))


def _fixed_point_array(cu, cw, dt, nu, bound):
    K = (cu.shape[1] - 1) // 2
    lap, inv = heat_factor(K, dt, nu)
    nlv = _coeffs(bound(0.5 * (cu + cw)))
    return inv * (cu - dt * nlv - 0.5 * dt * nu * lap * cu)


@dataclass(frozen=True)
class NsRunConfig:
    """Parameters of the time-stepping driver and the values derived from them.

    ``dt`` is the largest step with C K^(n/2+1) Mbar dt <= 1, dt <= K^-r,
    dt <= 1 and T/dt integral, unless ``dt_override`` is given (used by
    convergence studies that refine dt at fixed K).
    """

    K: int
    M: float = 1.0
    r: float = 3.0
    T: float = 1.0
    nu: float = 0.0
    c_cfl: float = 1.0
    dt_override: float = None
    l_override: int = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.M < 1.0:
            raise ValueError("M must be >= 1")
        if not self.r > DIM / 2.0 + 1.0:
            raise ValueError(f"r must exceed n/2 + 1 = {DIM / 2 + 1}")
        if self.T <= 0 or self.nu < 0 or self.c_cfl <= 0:
            raise ValueError("need T > 0, nu >= 0, C > 0")
        if self.dt_override is not None:
            steps = self.T / self.dt_override
            if self.dt_override <= 0 or self.dt_override > 1 or abs(steps - round(steps)) > 1e-9 * max(steps, 1):
                raise ValueError("dt_override must lie in (0, 1] and divide T")

    @property
    def m_bar(self):
        return 2.0 * (math.e * self.M + 2.0)

    @property
    def t_bar(self):
        return max(self.T, 1.0)

    @property
    def dt_max(self):
        return min(1.0, float(self.K) ** (-self.r),
                   1.0 / (self.c_cfl * float(self.K) ** (DIM / 2.0 + 1.0) * self.m_bar))

    @property
    def n_steps(self):
        if self.dt_override is not None:
            return int(round(self.T / self.dt_override))
        return max(1, math.ceil(self.T / self.dt_max - 1e-12))

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def eps(self):
        return self.dt / (3.0 * self.M * self.t_bar)

    @property
    def L(self):
        if self.l_override is not None:
            return int(self.l_override)
        return max(1, math.ceil(math.log2(3.0 * self.M * self.t_bar / self.dt ** 2)))

    @property
    def cfl_satisfied(self):
        return self.c_cfl * float(self.K) ** (DIM / 2.0 + 1.0) * self.m_bar * self.dt <= 1.0 + 1e-12

    def derived(self):
        return {"M_bar": self.m_bar, "T_bar": self.t_bar, "dt": self.dt, "n_T": self.n_steps,
                "eps": self.eps, "L": self.L, "cfl_satisfied": self.cfl_satisfied}

    def to_dict(self):
        return {"K": self.K, "M": self.M, "r": self.r, "T": self.T, "nu": self.nu,
                "c_cfl": self.c_cfl, "dt_override": self.dt_override, "l_override": self.l_override}

    @classmethod
    def from_dict(cls, d):
        keys = ("K", "M", "r", "T", "nu", "c_cfl", "dt_override", "l_override")
        kw = {k: d[k] for k in keys if k in d and d[k] is not None}
        kw["K"] = int(kw["K"])
        if "l_override" in kw:
            kw["l_override"] = int(kw["l_override"])
        return cls(**kw)


@dataclass
class IterateLog:
    distances: np.ndarray
    norms: np.ndarray
    ratios: np.ndarray
    contraction_ok: bool
    iterate_bound_ok: bool
    max_ratio: float


def _contraction_stats(dist, scale):
    floor = ROUNDOFF_FLOOR * max(scale, 1e-300)
    ok = True
    ratios = np.full(max(len(dist) - 1, 0), np.nan)
    for j in range(1, len(dist)):
        if dist[j] > (0.5 + CONTRACTION_SLACK) * dist[j - 1] + floor:
            ok = False
        if dist[j - 1] > 100.0 * floor:
            ratios[j - 1] = dist[j] / dist[j - 1]
    finite = ratios[np.isfinite(ratios)]
    return ratios, ok, float(finite.max()) if finite.size else 0.0


def step(u_m, config, nl=EXACT_NL):
    """L fixed-point iterations from w = 0; returns (w^L, IterateLog)."""
    cu = _coeffs(u_m)
    K = (cu.shape[1] - 1) // 2
    if K != config.K:
        raise ValueError(f"field cutoff {K} does not match config K={config.K}")
    dt, nu, L = config.dt, config.nu, config.L
    unorm = float(np.sqrt(np.sum(np.abs(cu) ** 2)))
    if unorm > config.m_bar * (1.0 + 1e-12):
        raise NormBoundError(f"|u^m| = {unorm:.6g} exceeds Mbar = {config.m_bar:.6g}")
    bound = nl.bind(cu)
    w = np.zeros_like(cu)
    dist = np.empty(L)
    norms = np.empty(L + 1)
    norms[0] = 0.0
    growth = math.exp(2.0 * dt * config.eps)
    bound_ok = True
    for ell in range(L):
        w_new = _fixed_point_array(cu, w, dt, nu, bound)
        dist[ell] = float(np.sqrt(np.sum(np.abs(w_new - w) ** 2)))
        w = w_new
        norms[ell + 1] = float(np.sqrt(np.sum(np.abs(w) ** 2)))
        if norms[ell + 1] > (1.0 + 2.0 ** (-(ell + 1))) * growth * unorm * (1.0 + 1e-12) + ROUNDOFF_FLOOR:
            bound_ok = False
        if norms[ell + 1] > config.m_bar:
            raise DivergenceError(
                f"fixed-point iterate {ell + 1} has norm {norms[ell + 1]:.6g} > Mbar = {config.m_bar:.6g}; "
                "the CFL constant is too small for this data")
    ratios, ok, max_ratio = _contraction_stats(dist, unorm)
    return SpectralField(w), IterateLog(dist, norms, ratios, ok, bound_ok, max_ratio)


@dataclass
class StepLog:
    config: NsRunConfig
    norms: list = dc_field(default_factory=list)
    bounds: list = dc_field(default_factory=list)
    distances: list = dc_field(default_factory=list)
    max_ratios: list = dc_field(default_factory=list)
    contraction_ok: list = dc_field(default_factory=list)
    iterate_bound_ok: list = dc_field(default_factory=list)
    energy_ok: list = dc_field(default_factory=list)
    trajectory: list = None

    @property
    def steps(self):
        return len(self.norms) - 1

    def summary(self):
        return {
            "steps": self.steps,
            "max_norm": max(self.norms) if self.norms else 0.0,
            "norm_bound_ok": all(n <= b * (1 + 1e-12) for n, b in zip(self.norms, self.bounds)),
            "max_contraction_ratio": max(self.max_ratios) if self.max_ratios else 0.0,
            "contraction_ok": all(self.contraction_ok),
            "iterate_bound_ok": all(self.iterate_bound_ok),
            "energy_ok": all(self.energy_ok),
            **self.config.derived(),
        }


def run(u0, config, nl=EXACT_NL, keep_trajectory=False):
    """n_T outer steps of the fixed-point scheme; returns (u^{n_T}, StepLog).

    Every step checks |u^m| <= exp(3 m dt eps) M and, for nu = 0, the energy
    bound |u^{m+1}| <= exp(2 dt eps) |u^m|.
    """
    u = u0 if isinstance(u0, SpectralField) else SpectralField(u0)
    n0 = u.norm()
    if n0 > config.M * (1.0 + 1e-12):
        raise NormBoundError(f"|u^0| = {n0:.6g} exceeds M = {config.M}")
    log = StepLog(config, trajectory=[u] if keep_trajectory else None)
    log.norms.append(n0)
    log.bounds.append(config.M)
    dt, eps = config.dt, config.eps
    for m in range(config.n_steps):
        new, it = step(u, config, nl)
        nrm = new.norm()
        bound = math.exp(3.0 * (m + 1) * dt * eps) * config.M
        log.norms.append(nrm)
        log.bounds.append(bound)
        log.distances.append(it.distances)
        log.max_ratios.append(it.max_ratio)
        log.contraction_ok.append(it.contraction_ok)
        log.iterate_bound_ok.append(it.iterate_bound_ok)
        log.energy_ok.append(config.nu > 0 or nrm <= math.exp(2.0 * dt * eps) * log.norms[-2] * (1 + 1e-12)
                             + ROUNDOFF_FLOOR)
        if keep_trajectory:
            log.trajectory.append(new)
        if nrm > bound * (1.0 + 1e-12) + ROUNDOFF_FLOOR:
            raise NormBoundError(f"step {m + 1}: |u| = {nrm:.6g} exceeds exp(3 m dt eps) M = {bound:.6g}", log)
        u = new
    return u, log


def midpoint_defect(u_m, u_next, dt, nu, nl=EXACT_NL):
    """Q = (u^{m+1} - u^m)/dt + NL(u^m, u^{m+1/2}) + nu |k|^2 u^{m+1/2}."""
    cu, cn = _coeffs(u_m), _coeffs(u_next)
    K = (cu.shape[1] - 1) // 2
    lap, _ = heat_factor(K, dt, nu)
    mid = 0.5 * (cu + cn)
    q = (cn - cu) / dt + _coeffs(nl(cu, mid)) + nu * lap * mid
    return SpectralField(q)


def remainder_diagnostic(log, nl=EXACT_NL):
    """Per-step l2 norms of the defect of a stored trajectory in the exact scheme."""
    if not log.trajectory or len(log.trajectory) < 2:
        raise ValueError("run with keep_trajectory=True to obtain the defect")
    cfg = log.config
    return np.array([midpoint_defect(a, b, cfg.dt, cfg.nu, nl).norm()
                     for a, b in zip(log.trajectory[:-1], log.trajectory[1:])])


def taylor_green_error(K, config, nl=EXACT_NL):
    """l2 coefficient error at T of the scheme started from Taylor-Green data."""
    u0 = taylor_green(K)
    uT, log = run(u0, config, nl)
    exact = taylor_green(K, config.T, config.nu)
    return (uT - exact).norm(), log
