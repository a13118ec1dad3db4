"""PCA-Net: Psi = D_Y o psi o E_X, its training pipeline and error decomposition."""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from . import pca
from .field import Field, InnerProductSpec, L2, H10, random_trig_field, GridGeometry, TORUS
from .nn import Mlp, TrainConfig, forward, init_network, train, affine_wrap

SLACK_STDERRS = 3.0
DECOMPOSITION_TOL = 1e-10


class OracleError(RuntimeError):
    """The reference operator could not be evaluated on some input."""


@dataclass(frozen=True)
class PairedData:
    """Input/output sample pairs as (N, P) and (N, Q) coordinate arrays.

    ``oracle`` evaluates the ground-truth operator on a batch of inputs; it is
    needed only for the network error term of the decomposition.
    """

    x: np.ndarray
    y: np.ndarray
    x_spec: object = pca.EUCLIDEAN
    y_spec: object = pca.EUCLIDEAN
    x_geometry: object = None
    y_geometry: object = None
    oracle: object = None
    manifest: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and outputs must pair up")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PairedData(self.x[idx], self.y[idx], self.x_spec, self.y_spec, self.x_geometry,
                          self.y_geometry, self.oracle, self.manifest)


def darcy_pairs(dataset, output_norm=H10):
    """Pairs (a, w) from a Darcy dataset; the output norm is H1_0 or L2 on the box."""
    problem = dataset.problem
    from .darcy import solution_operator
    return PairedData(dataset.a, dataset.w, problem.l2, InnerProductSpec(output_norm, problem.geometry),
                      problem.geometry, problem.geometry, solution_operator(problem),
                      {"generator": "darcy", "seed": dataset.seed, "spec": problem.spec.to_dict()})


def split_indices(n, fractions=(0.25, 0.5, 0.25), seed=0):
    """Disjoint (pca, train, test) index arrays from a seeded permutation."""
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1 + 1e-12:
        raise ValueError("fractions must be three non-negative numbers summing to at most 1")
    order = np.random.default_rng([int(seed), 7919]).permutation(int(n))
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    c = min(int(n), b + int(round(fractions[2] * n)))
    parts = {"pca": np.sort(order[:a]), "train": np.sort(order[a:b]), "test": np.sort(order[b:c])}
    if min(len(v) for v in parts.values()) == 0:
        raise ValueError(f"too few samples ({n}) for the requested split")
    return parts


@dataclass(frozen=True)
class PcaNetModel:
    input_basis: pca.PcaBasis
    output_basis: pca.PcaBasis
    net: Mlp
    provenance: dict = dc_field(default_factory=dict)
    input_geometry: object = None
    output_geometry: object = None

    def __post_init__(self):
        if self.net.input_dim != self.input_basis.d:
            raise ValueError(f"network input {self.net.input_dim} != d_X = {self.input_basis.d}")
        if self.net.output_dim != self.output_basis.d:
            raise ValueError(f"network output {self.net.output_dim} != d_Y = {self.output_basis.d}")

    @property
    def d_x(self):
        return self.input_basis.d

    @property
    def d_y(self):
        return self.output_basis.d


def assemble(bases, mlp, provenance=None, input_geometry=None, output_geometry=None):
    bx, by = bases
    return PcaNetModel(bx, by, mlp, dict(provenance or {}), input_geometry or bx.geometry,
                       output_geometry or by.geometry)


def predict_many(model, x):
    xi = pca.encode_many(model.input_basis, x)
    return pca.decode_many(model.output_basis, forward(model.net, xi))


def predict(model, u):
    """Psi(u); returns a Field when u is a Field or the model knows its output grid."""
    vec = u.flat if isinstance(u, Field) else np.asarray(u, dtype=np.float64)
    out = predict_many(model, vec[None])[0]
    if model.output_geometry is not None:
        return Field(model.output_geometry, out)
    return out


def linear_net(a, b=None):
    """Depth-2 ReLU network computing x -> A x + b exactly."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    eye = np.eye(a.shape[1])
    bias = np.zeros(a.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return Mlp([np.vstack([eye, -eye]), np.hstack([a, -a])], [np.zeros(2 * a.shape[1]), bias])


def least_squares_map(xi, eta):
    """Affine least-squares fit eta ~ A xi + b; returns (A, b)."""
    design = np.hstack([xi, np.ones((xi.shape[0], 1))])
    coef = np.linalg.lstsq(design, eta, rcond=None)[0]
    return coef[:-1].T, coef[-1]


def _standardize(z):
    """Mean and one common scale (the largest coordinate std) per latent space.

    A shared scale keeps the relative size of the PCA coordinates, so the
    training loss stays proportional to the latent l2 error and trailing
    low-variance inputs are not blown up to unit size.
    """
    shift = z.mean(axis=0)
    top = float(z.std(axis=0).max(initial=0.0))
    return shift, np.full(z.shape[1], top if top > 0.0 else 1.0)


def fit_bases(data, d_x, d_y, pca_idx):
    bx = pca.empirical_pca(data.x[pca_idx], data.x_spec, d_x)
    by = pca.empirical_pca(data.y[pca_idx], data.y_spec, d_y)
    for name, b, want in (("d_X", bx, d_x), ("d_Y", by, d_y)):
        if b.d != want:
            raise ValueError(f"insufficient samples for {name} = {want}: {'; '.join(b.warnings)}")
    return bx, by


def train_pipeline(data, d_x, d_y, config=None, hidden=(64, 64), partitions=None, split_seed=0):
    """Fit PCA bases on the pca partition and psi on the train partition.

    Latents are centered and rescaled for training; the affine scalings are
    folded back into the first and last layers afterwards.
    """
    config = config or TrainConfig()
    parts = partitions or split_indices(len(data), seed=split_seed)
    bx, by = fit_bases(data, d_x, d_y, parts["pca"])
    xi = pca.encode_many(bx, data.x[parts["train"]])
    eta = pca.encode_many(by, data.y[parts["train"]])
    in_shift, in_scale = _standardize(xi)
    out_shift, out_scale = _standardize(eta)
    widths = [d_x] + list(hidden) + [d_y]
    net, trace = train(init_network(widths, config), (xi - in_shift) / in_scale,
                       (eta - out_shift) / out_scale, config)
    net = affine_wrap(net, in_shift, in_scale, out_scale, out_shift)
    prov = {"train_config": config.to_dict(), "hidden": list(hidden), "d_x": d_x, "d_y": d_y,
            "partitions": {k: v.tolist() for k, v in parts.items()}, "data": dict(data.manifest),
            "loss_initial": trace.initial, "loss_final": trace.final}
    return assemble((bx, by), net, prov, data.x_geometry, data.y_geometry)


@dataclass(frozen=True)
class ErrorReport:
    """Root-mean-square error terms on a held-out set, with standard errors of the squares."""

    total: float
    enc_x: float
    enc_y: float
    psi: float
    psi_star: float
    tail: float
    tail_stderr: float
    total_sq_stderr: float
    test_size: int
    lipschitz: float = None
    lipschitz_kind: str = "none"
    alt_total: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        for name in ("total", "enc_x", "enc_y", "psi", "psi_star", "tail"):
            v = getattr(self, name)
            if not (v >= 0.0) and not math.isnan(v):
                raise ValueError(f"{name} must be non-negative")

    def bound_star(self):
        return self.enc_y + self.psi_star

    def bound_lip(self):
        if self.lipschitz is None or math.isnan(self.psi):
            return float("nan")
        return self.enc_y + self.lipschitz * self.enc_x + self.psi

    def to_dict(self):
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}

    def rows(self):
        """Flat (metric, value) rows for CSV output."""
        d = self.to_dict()
        alt = d.pop("alt_total")
        out = [(k, v) for k, v in d.items()]
        out += [(f"total_{k}", v) for k, v in alt.items()]
        return out


def _rms(sq):
    return math.sqrt(max(float(np.mean(sq)), 0.0))


def _stderr(sq):
    sq = np.asarray(sq, dtype=np.float64)
    return float(np.std(sq, ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("nan")


def _sq(spec, x):
    f = np.atleast_2d(spec.features(x))
    return np.sum(f * f, axis=1)


def error_decomposition(model, x_test, y_test, oracle=None, lipschitz=None, lipschitz_kind="supplied",
                        tail_samples=None, alt_specs=None, check=True):
    """All error terms of the decomposition, estimated on the given test pairs.

    Asserts total <= enc_y + psi_star (+1e-10), and when a Lipschitz
    constant is supplied, psi_star <= lip * enc_x + psi (+1e-10).
    ``tail_samples`` are the outputs the output basis was fitted on; they
    give the eigenvalue tail and its standard error.
    """
    bx, by = model.input_basis, model.output_basis
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    y_test = np.atleast_2d(np.asarray(y_test, dtype=np.float64))
    xi = pca.encode_many(bx, x_test)
    eta_true = pca.encode_many(by, y_test)
    eta_hat = forward(model.net, xi)
    pred = pca.decode_many(by, eta_hat)
    total_sq = _sq(by.spec, y_test - pred)
    enc_y_sq = _sq(by.spec, y_test - pca.decode_many(by, eta_true))
    enc_x_sq = _sq(bx.spec, x_test - pca.decode_many(bx, xi))
    star_sq = np.sum((eta_true - eta_hat) ** 2, axis=1)
    psi = float("nan")
    if oracle is not None:
        try:
            img = np.atleast_2d(oracle(pca.decode_many(bx, xi)))
        except Exception as exc:  # surfaced with context
            raise OracleError(f"oracle failed on decoded inputs: {exc}") from exc
        psi = _rms(np.sum((pca.encode_many(by, img) - eta_hat) ** 2, axis=1))
    if tail_samples is not None:
        resid = _sq(by.spec, tail_samples - pca.decode_many(by, pca.encode_many(by, tail_samples)))
        tail, tail_se = float(np.mean(resid)), _stderr(resid)
    else:
        tail, tail_se = pca.tail_sum(by, by.d), float("nan")
    alt = {}
    for name, spec in (alt_specs or {}).items():
        alt[name] = _rms(_sq(spec, y_test - pred))
    rep = ErrorReport(_rms(total_sq), _rms(enc_x_sq), _rms(enc_y_sq), psi, _rms(star_sq), tail, tail_se,
                      _stderr(total_sq), x_test.shape[0], None if lipschitz is None else float(lipschitz),
                      lipschitz_kind if lipschitz is not None else "none", alt)
    if check:
        if rep.total > rep.bound_star() + DECOMPOSITION_TOL:
            raise AssertionError(f"total {rep.total} exceeds enc_y + psi_star = {rep.bound_star()}")
        if lipschitz is not None and not math.isnan(psi) and \
                rep.psi_star > lipschitz * rep.enc_x + psi + DECOMPOSITION_TOL:
            raise AssertionError("psi_star exceeds lip * enc_x + psi")
    return rep


def lower_bound_gap(model_or_dy, spectrum, measured):
    """E^2 - sum_{j > d_Y} lambda_j for a measured RMS error E."""
    d_y = model_or_dy.d_y if isinstance(model_or_dy, PcaNetModel) else int(model_or_dy)
    return float(measured) ** 2 - pca.tail_sum(spectrum, d_y)


def lower_bound_slack(report):
    return SLACK_STDERRS * report.tail_stderr


def empirical_lipschitz(oracle, x, x_spec, y_spec, pairs=200, seed=0):
    """Labeled estimate max ||G(u) - G(v)|| / ||u - v|| over random sample pairs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(seed)
    i = rng.integers(0, x.shape[0], size=pairs)
    j = rng.integers(0, x.shape[0], size=pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    gi, gj = np.atleast_2d(oracle(x[i])), np.atleast_2d(oracle(x[j]))
    num = np.sqrt(_sq(y_spec, gi - gj))
    den = np.sqrt(_sq(x_spec, x[i] - x[j]))
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


def linear_operator_norm(a, x_spec, y_spec, size):
    """Exact norm of x -> A x from (R^P, x_spec) to (R^Q, y_spec)."""
    rx = x_spec.root(1, size) if x_spec is pca.EUCLIDEAN else x_spec.root(1)
    ry = y_spec.root(1, a.shape[0]) if y_spec is pca.EUCLIDEAN else y_spec.root(1)
    m = ry @ a @ np.linalg.pinv(rx)
    return float(np.linalg.norm(m, 2))


@dataclass(frozen=True)
class LinearInstance:
    data: PairedData
    matrix: np.ndarray
    lipschitz: float


def linear_instance(seed, points=32, n=96, decay=1.5):
    """Random linear operator on periodic 1D fields with an exact Lipschitz constant."""
    g = GridGeometry(1, points, TORUS)
    spec = InnerProductSpec(L2, g)
    rng = np.random.default_rng([int(seed), 31])
    a = rng.standard_normal((g.size, g.size)) / math.sqrt(g.size)
    x = np.stack([random_trig_field(g, decay, [int(seed), k]).flat for k in range(n)])
    data = PairedData(x, x @ a.T, spec, spec, g, g, lambda b: np.atleast_2d(b) @ a.T,
                      {"generator": "linear", "seed": int(seed)})
    return LinearInstance(data, a, linear_operator_norm(a, spec, spec, g.size))
