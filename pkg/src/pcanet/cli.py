"""Command-line entry point: ``python -m pcanet <command> [flags]``.

Configuration precedence is flags > ``--config`` JSON file > defaults.  The
config file may hold flat keys or a section per command name.  Every command
logs the resolved configuration, and commands that write a run directory
also store it there as ``resolved_config.json``.
"""
import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("pcanet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "gen-darcy": {"n": 512, "seed": 0, "points": 33, "l_trunc": 16, "alpha": 2.0, "kappa": 1.0,
                  "fractions": "0.25,0.5,0.25", "out": "runs/darcy"},
    "gen-ns": {"n": 64, "seed": 0, "ns": "K=8,nu=0.01,T=0.1,M=1,r=3", "fractions": "0.25,0.5,0.25",
               "out": "runs/ns"},
    "pca": {"data": None, "which": "output", "d": 8, "out": None},
    "train": {"data": None, "dx": 8, "dy": 8, "epochs": 500, "lr": 1e-3, "batch": 32, "hidden": "64,64",
              "seed": 0, "out": None},
    "eval": {"model": None, "data": None, "lip_pairs": 40, "out": None},
    "ns-solve": {"ns": "K=8,nu=0.1,T=1,M=1,r=3", "init": "taylor-green", "seed": 0, "out": None},
    "emulate-ns": {"ns": "K=4,nu=0,T=0.05,M=1,r=3", "seed": 0, "network": False, "out": None},
    "study": {"kind": None, "grid": "default", "seed": 0, "param": None, "out": None},
    "verify": {"suite": "all"},
}

DEFAULT_GRIDS = {
    "pca-rate": [2 ** k for k in range(5, 13)],
    "smoothness": [1, 1],
    "darcy-spectrum": [2, 3, 4, 6, 8, 12, 16],
    "ns-convergence": [2.0 ** -k for k in range(4, 8)],
}


class UsageError(ValueError):
    pass


def parse_ns(text):
    """``K=..,nu=..,T=..,M=..,r=..`` into an NsRunConfig."""
    from .spectral_ns import NsRunConfig
    allowed = {"K", "nu", "T", "M", "r", "c_cfl", "dt", "L"}
    out = {}
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        key, sep, val = part.partition("=")
        if not sep or key not in allowed:
            raise UsageError(f"bad --ns entry {part!r}; expected keys {sorted(allowed)}")
        try:
            out[key] = float(val)
        except ValueError as exc:
            raise UsageError(f"--ns value for {key} is not a number: {val!r}") from exc
    if "K" not in out:
        raise UsageError("--ns needs K")
    if "dt" in out:
        out["dt_override"] = out.pop("dt")
    if "L" in out:
        out["l_override"] = out.pop("L")
    try:
        return NsRunConfig.from_dict(out)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _numbers(text, cast=float):
    try:
        return [cast(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _build_parser():
    p = argparse.ArgumentParser(prog="pcanet", description="PCA-Net operator learning toolkit")
    p.add_argument("--config", help="JSON file with defaults (flags override it)")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-darcy", help="sample Darcy coefficient/solution pairs")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--points", type=int)
    s.add_argument("--l-trunc", dest="l_trunc", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--kappa", type=float)
    s.add_argument("--fractions")
    s.add_argument("--out")

    s = sub.add_parser("gen-ns", help="sample Navier-Stokes initial/final state pairs")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--ns")
    s.add_argument("--fractions")
    s.add_argument("--out")

    s = sub.add_parser("pca", help="empirical PCA of a stored dataset")
    s.add_argument("--data")
    s.add_argument("--which", choices=("input", "output"))
    s.add_argument("--d", type=int)
    s.add_argument("--out")

    s = sub.add_parser("train", help="fit a PCA-Net on a stored dataset")
    s.add_argument("--data")
    s.add_argument("--dx", type=int)
    s.add_argument("--dy", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--hidden")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = sub.add_parser("eval", help="error decomposition of a trained model on its test partition")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--lip-pairs", dest="lip_pairs", type=int)
    s.add_argument("--out")

    s = sub.add_parser("ns-solve", help="run the spectral scheme")
    s.add_argument("--ns")
    s.add_argument("--init", choices=("taylor-green", "random"))
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = sub.add_parser("emulate-ns", help="run the scheme with the ReLU-emulated nonlinearity")
    s.add_argument("--ns")
    s.add_argument("--seed", type=int)
    s.add_argument("--network", action="store_const", const=True, default=None,
                   help="also materialize and evaluate the unrolled network")
    s.add_argument("--out")

    s = sub.add_parser("study", help="rate and convergence studies")
    s.add_argument("kind", choices=sorted(DEFAULT_GRIDS))
    s.add_argument("--grid")
    s.add_argument("--seed", type=int)
    s.add_argument("--param", action="append", help="study parameter key=value (repeatable)")
    s.add_argument("--out")

    s = sub.add_parser("verify", help="run invariant suites")
    s.add_argument("--suite", choices=("all", "pca", "darcy", "ns", "nn", "relu", "io"))
    return p


def resolve(command, args, config_path=None):
    cfg = dict(DEFAULTS[command])
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        section = raw.get(command, raw) if isinstance(raw.get(command), dict) else raw
        cfg.update({k: v for k, v in section.items() if k in cfg})
    cfg.update({k: v for k, v in vars(args).items() if k in cfg and v is not None})
    return cfg


def _out_dir(cfg):
    if cfg.get("out") is None:
        return None
    path = Path(cfg["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo(cfg, path, command):
    log.info("resolved config for %s: %s", command, json.dumps(cfg, sort_keys=True, default=str))
    if path is not None:
        (path / "resolved_config.json").write_text(json.dumps({"command": command, **cfg}, indent=2,
                                                              sort_keys=True, default=str))


def _fractions(cfg):
    fr = _numbers(cfg["fractions"])
    if len(fr) != 3:
        raise UsageError("--fractions needs three numbers")
    return fr


def cmd_gen_darcy(cfg):
    from . import darcy, io, model
    path = Path(cfg["out"])
    prob = darcy.default_problem(int(cfg["points"]), int(cfg["l_trunc"]), float(cfg["alpha"]), float(cfg["kappa"]))
    ds = darcy.sample_dataset(prob, int(cfg["n"]), int(cfg["seed"]))
    parts = model.split_indices(len(ds), _fractions(cfg), int(cfg["seed"]))
    man = io.DatasetManifest("darcy", {"points": int(cfg["points"]), **prob.spec.to_dict()}, int(cfg["seed"]),
                             len(ds), prob.geometry.to_dict(), 1, {k: v.tolist() for k, v in parts.items()},
                             provenance={"code_version": io.code_version()})
    man = io.write_dataset(path, man, {"z": ds.z, "x": ds.a, "y": ds.w})
    _echo(cfg, path, "gen-darcy")
    print(json.dumps({"path": str(path), "checksum": man.checksum, "samples": len(ds)}))
    return EXIT_OK


def _ns_sample(cfg, seed, k):
    from . import spectral_ns as ns
    return ns.random_divergence_free(cfg.K, [int(seed), int(k)], 0.9 * cfg.M)


def cmd_gen_ns(cfg):
    from . import spectral_ns as ns, io, model
    path = Path(cfg["out"])
    rc = parse_ns(cfg["ns"])
    xs, ys = [], []
    for k in range(int(cfg["n"])):
        u0 = _ns_sample(rc, cfg["seed"], k)
        uT, _ = ns.run(u0, rc)
        xs.append(u0.to_real())
        ys.append(uT.to_real())
    parts = model.split_indices(len(xs), _fractions(cfg), int(cfg["seed"]))
    man = io.DatasetManifest("ns", rc.to_dict(), int(cfg["seed"]), len(xs), None, 1,
                             {k: v.tolist() for k, v in parts.items()},
                             provenance={"code_version": io.code_version(), "derived": rc.derived()})
    man = io.write_dataset(path, man, {"x": np.array(xs), "y": np.array(ys)})
    _echo(cfg, path, "gen-ns")
    print(json.dumps({"path": str(path), "checksum": man.checksum, "samples": len(xs)}))
    return EXIT_OK


def load_pairs(path):
    """PairedData (with oracle) and partitions from a stored dataset directory."""
    from . import io, model, darcy
    from . import spectral_ns as ns
    from .field import GridGeometry, InnerProductSpec, L2, H10
    man, arrays = io.read_dataset(path)
    parts = {k: np.asarray(v, dtype=np.int64) for k, v in man.partitions.items()}
    if man.generator == "darcy":
        p = man.params
        prob = darcy.default_problem(p["points"], p["l_trunc"], p["alpha"], p["kappa"])
        geom = GridGeometry.from_dict(man.geometry)
        data = model.PairedData(arrays["x"], arrays["y"], InnerProductSpec(L2, geom), InnerProductSpec(H10, geom),
                                geom, geom, darcy.solution_operator(prob), man.to_dict())
    elif man.generator == "ns":
        rc = ns.NsRunConfig.from_dict(man.params)

        def oracle(batch):
            return np.stack([ns.run(ns.SpectralField.from_real(v, rc.K), rc)[0].to_real()
                             for v in np.atleast_2d(batch)])
        data = model.PairedData(arrays["x"], arrays["y"], oracle=oracle, manifest=man.to_dict())
    else:
        data = model.PairedData(arrays["x"], arrays["y"], manifest=man.to_dict())
    return data, parts


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def cmd_pca(cfg):
    from . import pca, io
    _require(cfg, "data")
    data, parts = load_pairs(cfg["data"])
    x = data.x if cfg["which"] == "input" else data.y
    spec = data.x_spec if cfg["which"] == "input" else data.y_spec
    basis = pca.empirical_pca(x[parts["pca"]], spec, int(cfg["d"]))
    for w in basis.warnings:
        log.warning(w)
    out = _out_dir(cfg)
    if out is not None:
        io.save_checkpoint(out, basis, {"data": cfg["data"], "which": cfg["which"]})
    _echo(cfg, out, "pca")
    print(json.dumps({"d": basis.d, "eigenvalues": basis.eigenvalues[:max(basis.d, 1)].tolist(),
                      "tail": pca.tail_sum(basis, basis.d)}))
    return EXIT_OK


def cmd_train(cfg):
    from . import io, model
    from .nn import TrainConfig
    _require(cfg, "data")
    data, parts = load_pairs(cfg["data"])
    tc = TrainConfig(learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch"]), epochs=int(cfg["epochs"]),
                     seed=int(cfg["seed"]))
    m = model.train_pipeline(data, int(cfg["dx"]), int(cfg["dy"]), tc, tuple(_numbers(cfg["hidden"], int)), parts)
    out = _out_dir(cfg)
    if out is not None:
        io.save_checkpoint(out, m, {"data": cfg["data"]})
    _echo(cfg, out, "train")
    print(json.dumps({"loss_initial": m.provenance["loss_initial"], "loss_final": m.provenance["loss_final"]}))
    return EXIT_OK


def cmd_eval(cfg):
    from . import io, model
    _require(cfg, "model", "data")
    m = io.load_checkpoint(cfg["model"])
    data, parts = load_pairs(cfg["data"])
    te = parts["test"]
    lip, kind = None, "none"
    if data.oracle is not None and int(cfg["lip_pairs"]) > 0:
        try:
            lip = model.empirical_lipschitz(data.oracle, data.x[te], data.x_spec, data.y_spec,
                                            int(cfg["lip_pairs"]))
            kind = "empirical estimate"
        except Exception as exc:
            log.warning("Lipschitz estimate unavailable: %s", exc)
    try:
        rep = model.error_decomposition(m, data.x[te], data.y[te], data.oracle, lip, kind,
                                        tail_samples=data.y[parts["pca"]])
    except model.OracleError as exc:
        log.warning("%s; reporting without the network error term", exc)
        rep = model.error_decomposition(m, data.x[te], data.y[te], None, None, tail_samples=data.y[parts["pca"]])
    out = _out_dir(cfg)
    if out is not None:
        (out / "error_report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
        with open(out / "error_report.csv", "w") as fh:
            fh.write("metric,value\n")
            for k, v in rep.rows():
                fh.write(f"{k},{v}\n")
    _echo(cfg, out, "eval")
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ns_solve(cfg):
    from . import spectral_ns as ns
    rc = parse_ns(cfg["ns"])
    if cfg["init"] == "taylor-green":
        u0 = ns.taylor_green(rc.K) * min(1.0, rc.M / ns.taylor_green(rc.K).norm())
    else:
        u0 = _ns_sample(rc, cfg["seed"], 0)
    uT, slog = ns.run(u0, rc)
    summary = slog.summary()
    if cfg["init"] == "taylor-green":
        scale = u0.norm() / ns.taylor_green(rc.K).norm()
        summary["taylor_green_error"] = (uT - ns.taylor_green(rc.K, rc.T, rc.nu) * scale).norm()
    out = _out_dir(cfg)
    if out is not None:
        (out / "step_log.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    _echo(cfg, out, "ns-solve")
    print(json.dumps(summary, sort_keys=True, default=float))
    return EXIT_OK


def cmd_emulate_ns(cfg):
    from . import spectral_ns as ns, ns_relu, io
    rc = parse_ns(cfg["ns"])
    u0 = _ns_sample(rc, cfg["seed"], 0)
    nl = ns_relu.EmulatedNonlinearity(rc.K, rc.m_bar, rc.eps)
    ue, _ = ns.run(u0, rc, nl)
    ua, _ = ns.run(u0, rc, ns.EXACT_NL)
    summary = {"m": nl.m, "nl_depth": nl.depth(), "nl_factored_size": nl.factored_size(),
               "emulated_vs_exact": (ue - ua).norm(), **rc.derived()}
    out = _out_dir(cfg)
    if cfg["network"]:
        net = ns_relu.unroll(ns_relu.build_step_net(rc, nl))
        un = net(u0)
        summary.update(network_size=net.size(), network_depth=net.depth(),
                       network_vs_arithmetic=float(np.max(np.abs(un.coeffs - ue.coeffs))))
        if out is not None:
            io.save_checkpoint(out / "network", net, {"ns": cfg["ns"]})
    if out is not None:
        (out / "emulation.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    _echo(cfg, out, "emulate-ns")
    print(json.dumps(summary, sort_keys=True, default=float))
    return EXIT_OK


def _params(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        vals = _numbers(val)
        vals = [int(v) if float(v).is_integer() and "." not in val and "e" not in val else v for v in vals]
        out[key] = tuple(vals) if "," in val else vals[0]
    return out


def cmd_study(cfg):
    from . import experiments
    kind = cfg["kind"]
    grid = DEFAULT_GRIDS[kind] if cfg["grid"] == "default" else _numbers(cfg["grid"])
    params = cfg["param"] if isinstance(cfg["param"], dict) else _params(cfg["param"])
    spec = experiments.StudySpec(kind, tuple(grid), (int(cfg["seed"]),), cfg["out"], params)
    try:
        rep = experiments.run_study(spec)
    except TypeError as exc:
        raise UsageError(f"bad study parameter: {exc}") from exc
    out = _out_dir(cfg)
    if out is not None:
        rep.write_csv(out / f"{kind}.csv")
        rep.write_json(out / f"{kind}.json")
    _echo(cfg, out, "study")
    print(json.dumps({"kind": kind, "rows": len(rep.rows), "checks": rep.checks,
                      "fits": {k: v.slope for k, v in rep.fits.items()}}, sort_keys=True))
    return EXIT_OK


def cmd_verify(cfg):
    from .verify import run_suite
    results = run_suite(cfg["suite"])
    _echo(cfg, None, "verify")
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


COMMANDS = {"gen-darcy": cmd_gen_darcy, "gen-ns": cmd_gen_ns, "pca": cmd_pca, "train": cmd_train,
            "eval": cmd_eval, "ns-solve": cmd_ns_solve, "emulate-ns": cmd_emulate_ns, "study": cmd_study,
            "verify": cmd_verify}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args, args.config)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pcanet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
