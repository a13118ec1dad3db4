"""Rate fits and the convergence studies built on them.

Studies report measured exponents next to the theoretical targets and a
pass flag for the shape check; they never assert absolute constants.
"""
from dataclasses import dataclass, field as dc_field, asdict
import csv
import json
import math

import numpy as np
from scipy import stats

from . import pca
from . import spectral_ns as ns
from .field import GridGeometry, InnerProductSpec, L2, H10, TORUS, random_trig_field

STUDY_KINDS = ("pca-rate", "smoothness", "darcy-spectrum", "ns-convergence")


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (log x, log y) with a 95% half-width on the slope."""

    abscissae: tuple
    ordinates: tuple
    slope: float
    intercept: float
    residual: float
    halfwidth: float

    def to_dict(self):
        return asdict(self)


def fit_rate(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3 or x.size != y.size:
        raise ValueError("a rate fit needs at least 3 matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fits need positive data")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    resid = float(np.sqrt(np.mean((ly - res.intercept - res.slope * lx) ** 2)))
    half = float(stats.t.ppf(0.975, x.size - 2) * res.stderr) if x.size > 2 else float("inf")
    return RateFit(tuple(x.tolist()), tuple(y.tolist()), float(res.slope), float(res.intercept), resid, half)


def decay_fit(values, indices=None):
    """Slope of log values against log index (indices default to 1, 2, ...)."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.arange(1, values.size + 1) if indices is None else np.asarray(indices, dtype=np.float64)
    return fit_rate(idx, values)


@dataclass(frozen=True)
class StudySpec:
    kind: str
    grid: tuple
    seeds: tuple = (0,)
    output: str = None
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        if not self.grid:
            raise ValueError("study grid must be nonempty")


@dataclass
class StudyReport:
    """Rows of (parameter, mean, stderr) plus fitted slopes and shape checks."""

    kind: str
    rows: list
    fits: dict
    checks: dict
    params: dict = dc_field(default_factory=dict)
    extra: dict = dc_field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        return {"kind": self.kind, "rows": self.rows, "params": self.params, "checks": self.checks,
                "passed": self.passed, "fits": {k: v.to_dict() for k, v in self.fits.items()},
                "extra": self.extra}

    def write_csv(self, path):
        keys = ["parameter", "mean", "stderr"]
        extra = [k for k in (self.rows[0] if self.rows else {}) if k not in keys]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys + extra)
            w.writeheader()
            for row in self.rows:
                w.writerow(row)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=float)


def _row(param, values, **extra):
    v = np.asarray(values, dtype=np.float64)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"parameter": param, "mean": float(np.mean(v)), "stderr": se, **extra}


# ---------------------------------------------------------------------------
# empirical PCA Monte-Carlo rate
# ---------------------------------------------------------------------------

def geometric_spectrum(ratio=0.25, length=8):
    return ratio ** np.arange(length)


def gaussian_samples(eigenvalues, n, rng):
    """Centered Gaussian vectors with diagonal covariance diag(eigenvalues)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    return rng.standard_normal((int(n), lam.size)) * np.sqrt(lam)


def pca_rate_study(eigenvalues=None, d=2, n_grid=tuple(2 ** k for k in range(5, 13)), trials=32,
                   delta=0.1, seed=0, slope_window=(-0.7, -0.3)):
    """Mean excess risk of empirical PCA against N for a diagonal Gaussian law.

    The excess risk is evaluated exactly in trace form under the true
    covariance; the (1 - delta) quantile over trials is reported alongside.
    """
    lam = geometric_spectrum() if eigenvalues is None else np.asarray(eigenvalues, dtype=np.float64)
    truth = pca.CovarianceSummary(np.diag(lam))
    rows, means, quants = [], [], []
    for n in n_grid:
        vals = []
        for t in range(trials):
            rng = np.random.default_rng([int(seed), int(n), t])
            basis = pca.empirical_pca(gaussian_samples(lam, n, rng), d=d)
            vals.append(pca.excess_risk(basis, truth))
        q = float(np.quantile(vals, 1.0 - delta))
        rows.append(_row(int(n), vals, quantile=q))
        means.append(rows[-1]["mean"])
        quants.append(q)
    positive = all(m > 0 for m in means)
    fits = {"mean": fit_rate(n_grid, means)} if positive else {}
    checks = {"nonnegative": all(r["mean"] >= 0 for r in rows)}
    if positive:
        checks["slope_in_window"] = slope_window[0] <= fits["mean"].slope <= slope_window[1]
    return StudyReport("pca-rate", rows, fits, checks,
                       {"eigenvalues": lam.tolist(), "d": d, "trials": trials, "delta": delta, "seed": seed,
                        "slope_window": list(slope_window)})


# ---------------------------------------------------------------------------
# smoothness and PCA tail decay
# ---------------------------------------------------------------------------

def smoothness_decay_study(zeta, n, points=None, samples=256, seed=0, margin=0.25, slack=0.3):
    """PCA tail sums of random trigonometric fields with finite zeta-Sobolev moment.

    Mode amplitudes |k|^-b with b = zeta + n/2 + margin make E|u|_{H^zeta}^2
    finite; the fitted tail exponent is checked against -2 zeta / n + slack.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    points = points or (256 if n == 1 else 32)
    geom = GridGeometry(n, points, TORUS)
    b = zeta + n / 2.0 + margin
    modes = 2 * ((points - 1) // 2 * 2 + 1) ** n // 2
    hi = min(samples // 4, modes // 4)
    if hi < 8:
        raise ValueError(f"grid with {points} points per dimension cannot resolve a tail fit")
    x = np.stack([random_trig_field(geom, b, [int(seed), k]).flat for k in range(samples)])
    basis = pca.empirical_pca(x, InnerProductSpec(L2, geom), d=1)
    ds = np.unique(np.round(np.geomspace(2, hi, 12)).astype(int))
    tails = np.array([pca.tail_sum(basis, d) for d in ds])
    fit = fit_rate(ds, tails)
    target = -2.0 * zeta / n
    rows = [{"parameter": int(d), "mean": float(t), "stderr": 0.0} for d, t in zip(ds, tails)]
    return StudyReport("smoothness", rows, {"tail": fit}, {"exponent": fit.slope <= target + slack},
                       {"zeta": zeta, "n": n, "points": points, "samples": samples, "seed": seed,
                        "decay_exponent": b, "target": target, "slack": slack})


# ---------------------------------------------------------------------------
# Darcy input/output spectra
# ---------------------------------------------------------------------------

def darcy_spectrum_study(problem, samples=512, d_grid=(2, 3, 4, 6, 8, 12, 16), seed=0, dataset=None,
                         input_slack=0.3, output_slack=0.5):
    """Tail-sum exponents of the coefficient (L2) and solution (H1_0) PCA spectra."""
    from .darcy import sample_dataset
    ds = dataset if dataset is not None else sample_dataset(problem, samples, seed)
    alpha = problem.spec.alpha
    bx = pca.empirical_pca(ds.a, problem.l2, d=1)
    by = pca.empirical_pca(ds.w, InnerProductSpec(H10, problem.geometry), d=1)
    d_grid = [d for d in d_grid if d < problem.spec.l_trunc]
    tx = np.array([pca.tail_sum(bx, d) for d in d_grid])
    ty = np.array([pca.tail_sum(by, d) for d in d_grid])
    rows = [{"parameter": int(d), "mean": float(a), "stderr": 0.0, "output_tail": float(b)}
            for d, a, b in zip(d_grid, tx, ty)]
    fits, checks = {}, {}
    if np.all(tx > 0) and len(d_grid) >= 3:
        fits["input"] = fit_rate(d_grid, tx)
        checks["input_exponent"] = fits["input"].slope <= -(2 * alpha + 1) + input_slack
    else:
        checks["input_exponent"] = bool(np.all(tx <= 1e-12 * max(bx.eigenvalues[0], 1e-300)))
    if np.all(ty > 0) and len(d_grid) >= 3:
        fits["output"] = fit_rate(d_grid, ty)
        checks["output_exponent"] = fits["output"].slope <= -2 * alpha + output_slack
    else:
        checks["output_exponent"] = bool(np.all(ty <= 1e-12 * max(by.eigenvalues[0], 1e-300)))
    return StudyReport("darcy-spectrum", rows, fits, checks,
                       {"samples": len(ds), "seed": ds.seed, "alpha": alpha, "l_trunc": problem.spec.l_trunc,
                        "input_target": -(2 * alpha + 1), "output_target": -2 * alpha})


# ---------------------------------------------------------------------------
# spectral Navier-Stokes convergence
# ---------------------------------------------------------------------------

def temporal_rows(K=16, nu=0.1, T=1.0, dts=tuple(2.0 ** -k for k in range(4, 8)), nl=ns.EXACT_NL, M=1.0):
    errs = []
    for dt in dts:
        cfg = ns.NsRunConfig(K=K, M=M, T=T, nu=nu, dt_override=dt)
        errs.append(ns.taylor_green_error(K, cfg, nl)[0])
    return list(dts), errs


def refinement_rows(Ks=(4, 8, 16), nu=0.1, T=1.0, r=3.0, nl=ns.EXACT_NL, M=1.0):
    """Errors along the schedule (K, dt(K)) with dt(K) <= K^-r from the run configuration."""
    out = []
    for K in Ks:
        cfg = ns.NsRunConfig(K=K, M=M, r=r, T=T, nu=nu)
        err, log = ns.taylor_green_error(K, cfg, nl)
        out.append((K, cfg.dt, err, log.summary()))
    return out


def ns_convergence_study(K=16, nu=0.1, T=1.0, dts=tuple(2.0 ** -k for k in range(4, 8)), Ks=(4, 8, 16), r=3.0,
                         min_order=0.9, min_factor=2.0):
    """Temporal order at fixed K and error decrease along the (K, dt) schedule."""
    dts, errs = temporal_rows(K, nu, T, dts)
    fit = fit_rate(dts, errs)
    rows = [{"parameter": f"dt={dt:.6g}", "mean": float(e), "stderr": 0.0} for dt, e in zip(dts, errs)]
    refine = refinement_rows(Ks, nu, T, r) if Ks else []
    rows += [{"parameter": f"K={K},dt={dt:.6g}", "mean": float(e), "stderr": 0.0} for K, dt, e, _ in refine]
    checks = {"temporal_order": fit.slope >= min_order}
    if len(refine) >= 2:
        errs_k = [e for _, _, e, _ in refine]
        checks["refinement_decrease"] = all(b * min_factor <= a for a, b in zip(errs_k, errs_k[1:]))
        checks["norm_bound"] = all(s["norm_bound_ok"] for *_, s in refine)
    return StudyReport("ns-convergence", rows, {"temporal": fit}, checks,
                       {"K": K, "nu": nu, "T": T, "r": r, "Ks": list(Ks)},
                       {"refinement": [{"K": K, "dt": dt, "error": e, **s} for K, dt, e, s in refine]})


def run_study(spec):
    """Dispatch a StudySpec; the grid is interpreted per study kind."""
    p = dict(spec.params)
    seed = spec.seeds[0] if spec.seeds else 0
    if spec.kind == "pca-rate":
        return pca_rate_study(n_grid=tuple(int(g) for g in spec.grid), seed=seed, **p)
    if spec.kind == "smoothness":
        return smoothness_decay_study(*spec.grid, seed=seed, **p)
    if spec.kind == "darcy-spectrum":
        from .darcy import default_problem
        prob = default_problem(p.pop("points", 33), p.pop("l_trunc", 32), p.pop("alpha", 2.0))
        return darcy_spectrum_study(prob, d_grid=tuple(int(g) for g in spec.grid), seed=seed, **p)
    return ns_convergence_study(dts=tuple(float(g) for g in spec.grid), **p)
