"""Uncentered empirical PCA of field samples under a weighted inner product."""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np
import scipy.linalg

from .field import Field

CLAMP_RTOL = 1e-12


class EuclideanSpec:
    """Plain dot product on raw coordinate vectors (R = identity)."""

    kind = "euclidean"
    geometry = None
    s = 0.0

    def features(self, x):
        return np.asarray(x, dtype=np.float64)

    def root(self, channels=1, size=None):
        return np.eye(size)

    def metric(self, channels=1, size=None):
        return np.eye(size)

    def to_dict(self):
        return {"kind": "euclidean"}


EUCLIDEAN = EuclideanSpec()


def _as_matrix(samples):
    """Stack samples into (N, P); returns (matrix, geometry, channels)."""
    if isinstance(samples, np.ndarray):
        x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        geometry, channels = None, 1
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("need at least one sample")
        geometry, channels = samples[0].geometry, samples[0].channels
        for u in samples:
            if u.geometry != geometry or u.channels != channels:
                raise ValueError("samples must share geometry and channel count")
        x = np.stack([u.flat for u in samples])
    if x.shape[0] == 0:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    return x, geometry, channels


def _root(spec, channels, size):
    if spec is EUCLIDEAN:
        return np.eye(size)
    return spec.root(channels)


@dataclass(frozen=True)
class PcaBasis:
    """Top-d empirical eigenpairs plus the full empirical spectrum.

    ``basis`` holds the d eigenfunctions as rows of grid values; ``coder``
    holds their images R(phi_j) so that encoding is a single mat-vec.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    coder: np.ndarray
    sample_count: int
    spec: object
    geometry: object = None
    channels: int = 1
    centered: bool = False
    mean: np.ndarray = None
    warnings: tuple = dc_field(default_factory=tuple)

    @property
    def d(self):
        return self.basis.shape[0]

    def fields(self):
        if self.geometry is None:
            return [row.copy() for row in self.basis]
        return [Field(self.geometry, row) for row in self.basis]

    def projector(self):
        """Matrix of the W-orthogonal projection in grid coordinates."""
        return self.basis.T @ (self.coder @ _root(self.spec, self.channels, self.basis.shape[1]))


def empirical_pca(samples, spec=EUCLIDEAN, d=None, center=False):
    """Eigenpairs of Sigma_N = (1/N) sum u_k (x) u_k under ``spec``.

    ``samples`` is a list of Fields or an (N, P) array of coordinate vectors.
    When N is at most the feature dimension the N x N Gram matrix
    G_ij = <u_i, u_j>/N is diagonalized and phi_j = X^T v_j / sqrt(N lambda_j).
    Otherwise the covariance is diagonalized in feature coordinates, which
    has the same nonzero eigenpairs at lower cost.
    """
    x, geometry, channels = _as_matrix(samples)
    n_samples, npts = x.shape
    mean = None
    if center:
        mean = x.mean(axis=0)
        x = x - mean
    feats = spec.features(x)
    if feats.ndim == 1:
        feats = feats[None]
    nfeat = feats.shape[1]
    full_len = min(n_samples, npts)
    if n_samples <= nfeat:
        gram = feats @ feats.T / n_samples
        lam, vec = np.linalg.eigh(0.5 * (gram + gram.T))
        lam, vec = lam[::-1], vec[:, ::-1]
        lam = lam[:full_len]
        top = lam[0] if lam.size else 0.0
        lam = np.where(lam < CLAMP_RTOL * max(top, 0.0), 0.0, lam)
        rank = int(np.sum(lam > 0.0))
        basis_full = None
    else:
        root = _root(spec, channels, npts)
        cov = feats.T @ feats / n_samples
        lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
        lam, vec = lam[::-1][:full_len], vec[:, ::-1][:, :full_len]
        top = lam[0] if lam.size else 0.0
        lam = np.where(lam < CLAMP_RTOL * max(top, 0.0), 0.0, lam)
        rank = int(np.sum(lam > 0.0))
        basis_full = np.linalg.lstsq(root, vec[:, :rank], rcond=None)[0].T if rank else np.zeros((0, npts))
    warnings = []
    if d is None:
        d = rank
    d = int(d)
    if d < 0:
        raise ValueError("d must be non-negative")
    if d > full_len:
        warnings.append(f"requested d={d} exceeds min(N, grid dim)={full_len}; clamped")
        d = full_len
    if d > rank:
        warnings.append(f"requested d={d} exceeds numerical rank {rank}; clamped")
        d = rank
    if basis_full is None:
        v = vec[:, :d]
        basis = (x.T @ v / np.sqrt(n_samples * lam[:d])).T if d else np.zeros((0, npts))
    else:
        basis = basis_full[:d]
    if d:
        # one Cholesky pass in feature space removes roundoff drift
        basis = _reorthonormalize(basis, np.atleast_2d(spec.features(basis)))
        coder = np.atleast_2d(spec.features(basis))
    else:
        coder = np.zeros((0, nfeat))
    return PcaBasis(
        eigenvalues=np.asarray(lam, dtype=np.float64),
        basis=np.asarray(basis),
        coder=np.asarray(coder),
        sample_count=n_samples,
        spec=spec,
        geometry=geometry,
        channels=channels,
        centered=bool(center),
        mean=mean,
        warnings=tuple(warnings),
    )


def _reorthonormalize(basis, coder):
    gram = coder @ coder.T
    c = np.linalg.cholesky(0.5 * (gram + gram.T))
    return scipy.linalg.solve_triangular(c, basis, lower=True)


def _vec(u):
    return u.flat if isinstance(u, Field) else np.asarray(u, dtype=np.float64)


def _check_geometry(basis, u):
    if isinstance(u, Field):
        if basis.geometry is not None and (u.geometry != basis.geometry or u.channels != basis.channels):
            raise ValueError("field geometry does not match the basis")
    elif np.shape(u)[-1] != basis.basis.shape[1]:
        raise ValueError("vector length does not match the basis")


def encode(basis, u):
    """Latent coordinates xi_j = <u, phi_j>."""
    _check_geometry(basis, u)
    x = _vec(u)
    if basis.centered:
        x = x - basis.mean
    return basis.coder @ basis.spec.features(x)


def encode_many(basis, x):
    """Encode an (N, P) array of coordinate vectors, returning (N, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if basis.centered:
        x = x - basis.mean
    return np.atleast_2d(basis.spec.features(x)) @ basis.coder.T


def decode(basis, eta):
    """sum_j eta_j phi_j, as a Field when the basis carries a geometry."""
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (basis.d,):
        raise ValueError(f"latent vector must have length {basis.d}")
    v = eta @ basis.basis
    if basis.centered:
        v = v + basis.mean
    if basis.geometry is None:
        return v
    return Field(basis.geometry, v)


def decode_many(basis, eta):
    eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
    v = eta @ basis.basis
    if basis.centered:
        v = v + basis.mean
    return v


def tail_sum(basis_or_eigenvalues, d):
    """sum_{j > d} lambda_j over the stored spectrum."""
    lam = getattr(basis_or_eigenvalues, "eigenvalues", basis_or_eigenvalues)
    lam = np.asarray(lam, dtype=np.float64)
    d = max(int(d), 0)
    return float(np.sum(lam[d:])) if d < lam.size else 0.0


def _sq_norms(spec, x):
    f = np.atleast_2d(spec.features(x))
    return np.sum(f * f, axis=1)


def projection_error_mc(basis, fresh_samples):
    """Mean of ||u - D(E(u))||^2 over the given samples."""
    x, _, _ = _as_matrix(fresh_samples)
    if basis.centered:
        x = x - basis.mean
    resid = x - (np.atleast_2d(basis.spec.features(x)) @ basis.coder.T) @ basis.basis
    return float(np.mean(_sq_norms(basis.spec, resid)))


@dataclass(frozen=True)
class CovarianceSummary:
    """Covariance operator as a symmetric matrix C in grid coordinates.

    The operator is Sigma phi = C W phi with W the metric of ``spec``; its
    eigenvalues are those of R C R^T.
    """

    matrix: np.ndarray
    spec: object = EUCLIDEAN
    channels: int = 1
    empirical: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValueError("covariance must be symmetric")

    def root(self):
        return _root(self.spec, self.channels, self.matrix.shape[0])

    def feature_matrix(self):
        r = self.root()
        return r @ self.matrix @ r.T

    def eigenvalues(self):
        lam = np.linalg.eigvalsh(self.feature_matrix())[::-1]
        if lam.size and lam[-1] < -1e-10 * max(abs(lam[0]), 1.0):
            raise ValueError("covariance is not positive semi-definite")
        return np.clip(lam, 0.0, None)


def empirical_covariance(samples, spec=EUCLIDEAN):
    x, _, channels = _as_matrix(samples)
    return CovarianceSummary(x.T @ x / x.shape[0], spec, channels, empirical=True)


def excess_risk(basis, true_cov):
    """E||u - P u||^2 - sum_{j>d} lambda_j under the true covariance.

    Evaluated in trace form:  sum_{j<=d} lambda_j - sum_j <phi_j, Sigma phi_j>.
    """
    lam = true_cov.eigenvalues()
    a = true_cov.feature_matrix()
    c = basis.coder
    captured = float(np.trace(c @ a @ c.T)) if basis.d else 0.0
    best = float(np.sum(lam[: basis.d]))
    return max(best - captured, 0.0)


def hs_distance(a, b):
    """Hilbert-Schmidt norm of the difference of two covariance operators."""
    if a.matrix.shape != b.matrix.shape:
        raise ValueError("covariance shapes differ")
    diff = CovarianceSummary(a.matrix - b.matrix, a.spec, a.channels)
    return float(np.linalg.norm(diff.feature_matrix()))


def subgaussian_estimate(samples, p_max, spec=EUCLIDEAN):
    """max_{1<=p<=p_max} (mean ||u||^p)^(1/p) / sqrt(p)."""
    if int(p_max) < 1:
        raise ValueError("p_max must be >= 1")
    x, _, _ = _as_matrix(samples)
    norms = np.sqrt(_sq_norms(spec, x))
    scale = norms.max()
    if scale == 0.0:
        return 0.0
    best = 0.0
    for p in range(1, int(p_max) + 1):
        moment = scale * np.mean((norms / scale) ** p) ** (1.0 / p)
        best = max(best, moment / math.sqrt(p))
    return float(best)
