"""Grids, discretized fields and weighted inner products.

Every inner product is realized through a real linear *feature map* R with
``<u, v> = R(u) . R(v)``.  This keeps the weighting explicit, lets PCA fold it
into a Gram matrix, and makes symmetry and positivity hold by construction.
"""
from dataclasses import dataclass, field as dc_field
import itertools
import math

import numpy as np

TORUS = "torus"
BOX = "box"


@dataclass(frozen=True)
class GridGeometry:
    """Uniform grid on the periodic torus [0, 2pi)^n or the unit box [0, 1]^n.

    Torus grids hold ``points_per_dim`` nodes ``x_j = j h`` with ``h = 2pi/p``
    (no duplicated endpoint).  Box grids hold interior nodes only,
    ``x_i = (i+1) h`` with ``h = 1/(p+1)``; boundary values are implicitly 0.
    """

    dim: int
    points_per_dim: int
    domain: str = TORUS

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.points_per_dim) < 2:
            raise ValueError("points_per_dim must be >= 2")
        if self.domain not in (TORUS, BOX):
            raise ValueError(f"unknown domain {self.domain!r}")

    @property
    def spacing(self):
        p = self.points_per_dim
        return 2.0 * math.pi / p if self.domain == TORUS else 1.0 / (p + 1)

    @property
    def shape(self):
        return (self.points_per_dim,) * self.dim

    @property
    def size(self):
        return self.points_per_dim ** self.dim

    def axes(self):
        p, h = self.points_per_dim, self.spacing
        if self.domain == TORUS:
            x = h * np.arange(p)
        else:
            x = h * np.arange(1, p + 1)
        return (x,) * self.dim

    def mesh(self):
        """Coordinate arrays of shape ``self.shape`` (matrix indexing)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def to_dict(self):
        return {"dim": self.dim, "points_per_dim": self.points_per_dim, "domain": self.domain}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["dim"]), int(d["points_per_dim"]), str(d["domain"]))


class Field:
    """Immutable grid function with ``channels`` components.

    ``values`` has shape ``(channels,) + geometry.shape``.
    """

    __slots__ = ("geometry", "_values")

    def __init__(self, geometry, values):
        v = np.array(values, dtype=np.float64)
        if v.shape == geometry.shape:
            v = v[None]
        if v.ndim == 1 and v.size % geometry.size == 0:
            v = v.reshape((-1,) + geometry.shape)
        if v.shape[1:] != geometry.shape:
            raise ValueError(f"values of shape {v.shape} do not fit grid {geometry.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self.geometry = geometry
        self._values = v

    @property
    def values(self):
        return self._values

    @property
    def channels(self):
        return self._values.shape[0]

    @property
    def flat(self):
        return self._values.reshape(-1)

    def __add__(self, other):
        _check_compatible(self, other)
        return Field(self.geometry, self._values + other._values)

    def __sub__(self, other):
        _check_compatible(self, other)
        return Field(self.geometry, self._values - other._values)

    def __mul__(self, c):
        return Field(self.geometry, float(c) * self._values)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field({self.geometry}, channels={self.channels})"


def _check_compatible(u, v):
    if u.geometry != v.geometry or u.channels != v.channels:
        raise ValueError("fields live on different geometries or channel counts")


def zeros(geometry, channels=1):
    return Field(geometry, np.zeros((channels,) + geometry.shape))


def from_function(geometry, fn):
    """Sample ``fn(*coords)`` on the grid; a tuple return gives several channels."""
    out = fn(*geometry.mesh())
    if isinstance(out, (tuple, list)):
        out = np.stack([np.broadcast_to(o, geometry.shape) for o in out])
    return Field(geometry, np.broadcast_to(out, geometry.shape) if np.ndim(out) == 0 else out)


L2 = "l2"
H10 = "h10"
HS = "hs"


@dataclass(frozen=True)
class InnerProductSpec:
    """Which inner product to use on fields of a given geometry.

    kinds: ``l2`` (midpoint quadrature), ``h10`` (forward-difference Dirichlet
    seminorm, box only) and ``hs`` (spectral Sobolev norm of order ``s``,
    torus only).
    """

    kind: str
    geometry: GridGeometry
    s: float = 0.0
    _cache: dict = dc_field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.kind not in (L2, H10, HS):
            raise ValueError(f"unknown inner product kind {self.kind!r}")
        if self.kind == H10 and self.geometry.domain != BOX:
            raise ValueError("the H10 seminorm needs a Dirichlet box geometry")
        if self.kind == HS and self.geometry.domain != TORUS:
            raise ValueError("the spectral Hs norm needs a periodic geometry")

    def to_dict(self):
        return {"kind": self.kind, "s": self.s, "geometry": self.geometry.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], GridGeometry.from_dict(d["geometry"]), float(d.get("s", 0.0)))

    def features(self, x):
        """Apply R to a batch of flattened fields, shape (B, c*P) -> (B, F)."""
        g = self.geometry
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        b = x2.shape[0]
        h, n = g.spacing, g.dim
        grid = x2.reshape((b, -1) + g.shape)
        if self.kind == L2:
            out = math.sqrt(h ** n) * x2
        elif self.kind == H10:
            pad = [(0, 0), (0, 0)] + [(1, 1)] * n
            ge = np.pad(grid, pad)
            parts = []
            for ax in range(n):
                sl = [slice(None), slice(None)] + [slice(1, -1)] * n
                sl[2 + ax] = slice(None)
                parts.append(np.diff(ge[tuple(sl)], axis=2 + ax).reshape(b, -1))
            out = math.sqrt(h ** (n - 2)) * np.concatenate(parts, axis=1)
        else:
            w = self._hs_weights()
            axes = tuple(range(2, 2 + n))
            coef = np.fft.fftn(grid, axes=axes) / g.size
            coef = coef * w
            out = np.concatenate([coef.real.reshape(b, -1), coef.imag.reshape(b, -1)], axis=1)
        return out[0] if single else out

    def _hs_weights(self):
        if "hs" not in self._cache:
            g = self.geometry
            k = np.fft.fftfreq(g.points_per_dim, 1.0 / g.points_per_dim)
            kk = np.meshgrid(*([k] * g.dim), indexing="ij")
            k2 = sum(ki * ki for ki in kk)
            self._cache["hs"] = np.sqrt((2.0 * math.pi) ** g.dim * (1.0 + k2) ** self.s)
        return self._cache["hs"]

    def root(self, channels=1):
        """Dense matrix of R for ``channels``-component fields."""
        key = ("root", channels)
        if key not in self._cache:
            self._cache[key] = self.features(np.eye(channels * self.geometry.size)).T.copy()
        return self._cache[key]

    def metric(self, channels=1):
        """Dense Gram matrix W = R^T R with <u, v> = u^T W v."""
        key = ("metric", channels)
        if key not in self._cache:
            r = self.root(channels)
            w = r.T @ r
            self._cache[key] = 0.5 * (w + w.T)
        return self._cache[key]


def _check_spec(spec, u):
    if u.geometry != spec.geometry:
        raise ValueError("field geometry does not match the inner product geometry")


def inner_product(spec, u, v):
    _check_spec(spec, u)
    _check_spec(spec, v)
    _check_compatible(u, v)
    return float(spec.features(u.flat) @ spec.features(v.flat))


def norm(spec, u):
    _check_spec(spec, u)
    r = spec.features(u.flat)
    return float(np.sqrt(r @ r))


def check_vanishing_boundary(u, tol=0.0):
    """Box fields store interior values only; this checks the box layout.

    Returns True for box geometries (boundary zero by construction).  A torus
    field has no boundary to vanish on and is rejected.
    """
    return u.geometry.domain == BOX


def half_lattice(kmax, dim):
    """Nonzero integer vectors with |k|_inf <= kmax, one of each pair +-k."""
    out = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=dim):
        if any(k) and k > tuple(-c for c in k):
            out.append(k)
    return out


def random_trig_field(geometry, decay_exponent, seed, kmax=None):
    """Random field with mode amplitudes |k|^(-decay_exponent) and random signs.

    On the torus: ``u = sum_k |k|^-b (s_k cos(k.x) + t_k sin(k.x))`` over the
    half lattice with |k|_inf <= kmax (default below Nyquist).  On the box:
    ``u = sum_k |k|^-b s_k prod_i sin(pi k_i x_i)`` over k_i >= 1.
    ``decay_exponent = inf`` keeps only the lowest mode, so the result is
    exactly ``+-cos(x_1)`` (torus) or ``+-prod sin(pi x_i)`` (box).
    """
    n = geometry.dim
    b = float(decay_exponent)
    if not b > n / 2.0:
        raise ValueError(f"decay exponent must exceed n/2 = {n / 2}")
    rng = np.random.default_rng(seed)
    x = geometry.mesh()
    p = geometry.points_per_dim
    vals = np.zeros(geometry.shape)
    if geometry.domain == TORUS:
        kmax = (p - 1) // 2 if kmax is None else int(kmax)
        if math.isinf(b):
            vals = rng.choice([-1.0, 1.0]) * np.cos(x[0])
            return Field(geometry, vals)
        for k in half_lattice(kmax, n):
            amp = float(np.dot(k, k)) ** (-b / 2.0)
            s, t = rng.choice([-1.0, 1.0], size=2)
            phase = sum(ki * xi for ki, xi in zip(k, x))
            vals += amp * (s * np.cos(phase) + t * np.sin(phase))
    else:
        kmax = p if kmax is None else int(kmax)
        if math.isinf(b):
            vals = rng.choice([-1.0, 1.0]) * np.prod([np.sin(math.pi * xi) for xi in x], axis=0)
            return Field(geometry, vals)
        for k in itertools.product(range(1, kmax + 1), repeat=n):
            amp = float(np.dot(k, k)) ** (-b / 2.0)
            s = rng.choice([-1.0, 1.0])
            vals += amp * s * np.prod([np.sin(math.pi * ki * xi) for ki, xi in zip(k, x)], axis=0)
    return Field(geometry, vals)


def trig_field_covariance(geometry, decay_exponent, kmax=None):
    """Exact covariance matrix (grid coordinates) of ``random_trig_field``."""
    n = geometry.dim
    b = float(decay_exponent)
    x = [xi.reshape(-1) for xi in geometry.mesh()]
    p = geometry.points_per_dim
    cols = []
    if geometry.domain == TORUS:
        kmax = (p - 1) // 2 if kmax is None else int(kmax)
        if math.isinf(b):
            cols.append(np.cos(x[0]))
        else:
            for k in half_lattice(kmax, n):
                amp = float(np.dot(k, k)) ** (-b / 2.0)
                phase = sum(ki * xi for ki, xi in zip(k, x))
                cols += [amp * np.cos(phase), amp * np.sin(phase)]
    else:
        kmax = p if kmax is None else int(kmax)
        ks = [(1,) * n] if math.isinf(b) else itertools.product(range(1, kmax + 1), repeat=n)
        for k in ks:
            amp = 1.0 if math.isinf(b) else float(np.dot(k, k)) ** (-b / 2.0)
            cols.append(amp * np.prod([np.sin(math.pi * ki * xi) for ki, xi in zip(k, x)], axis=0))
    a = np.stack(cols, axis=1)
    return a @ a.T
