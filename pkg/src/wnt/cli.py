"""Command-line front door.

Precedence: command-line flags > config file (``--config``, INI key=value,
optional ``[subcommand]`` sections) > defaults.  WNT_SEED overrides --seed.
Exit status: 0 success, 2 validation error, 3 solver failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import SolverError, ValidationError, WNTError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

# name -> (type, default, valid-range text, help)
_COMMON = {
    "out": (str, None, "directory path", "output directory"),
    "config": (str, None, "file path", "INI-style key=value config file"),
    "seed": (int, 0, "integer >= 0 (env WNT_SEED overrides)", "random seed"),
    "log_level": (str, "WARNING", "DEBUG|INFO|WARNING|ERROR", "logging level"),
}
_POTENTIAL = {
    "potential": (str, "devlim", "devlim|devlim-mean|zero|bump|<csv path>", "forcing potential"),
    "amp": (float, -0.5, "real", "bump amplitude (potential=bump)"),
    "width": (float, 0.3, "> 0", "bump spatial width (potential=bump)"),
    "nt": (int, 256, ">= 16", "time cells of the potential lattice"),
    "nx": (int, 256, ">= 16", "spatial nodes of the potential lattice"),
    "L": (float, 4.0, "> 0", "half-width of the spatial box"),
}
COMMANDS = {
    "profile": ("Tabulate the lens profile r, ell, ell'", {
        "nodes": (int, 512, ">= 64", "number of grid nodes"),
        "tol": (float, 1e-8, "(0, 1e-4]", "ODE tolerance"),
    }),
    "devlim": ("Evaluate devlim at (t, x) or sample it on the lattice", {
        "t": (float, 1.0, "(0, 2)", "time"),
        "x": (float, 0.0, "real", "position"),
        "mode": (str, "rms", "rms|mean", "lattice sampling mode (with --out)"),
        "nt": (int, 256, ">= 16", "time cells (with --out)"),
        "nx": (int, 256, ">= 16", "spatial nodes (with --out)"),
        "L": (float, 4.0, "> 0", "box half-width (with --out)"),
    }),
    "hlim": ("Evaluate the limit shape hlim", {
        "t": (float, 2.0, "(0, 2]", "time"),
        "x": (float, 0.0, "real", "position"),
        "grid_nt": (int, 64, ">= 2", "surface rows (with --out)"),
        "grid_nx": (int, 64, ">= 2", "surface columns (with --out)"),
        "delta": (float, 0.5, "(0, 0.5]", "surface region [delta,2] x [-1/delta,1/delta] clipped to 4"),
        "oracle_n": (int, 0, "0 or >= 32", "also run the DP oracle on an n x n lattice"),
    }),
    "geodesic": ("Construct the geodesic from (0,0) to (t, x)", {
        "t": (float, 1.0, "(0, 2]", "target time"),
        "x": (float, 0.0, "real", "target position"),
        "samples": (int, 201, ">= 2", "path samples written with --out"),
    }),
    "fk": ("Monte Carlo Feynman-Kac estimate", {
        **_POTENTIAL,
        "lam": (float, 8.0, "> 0", "lambda"),
        "t": (float, 2.0, "(s, 2]", "bridge start time"),
        "x": (float, 0.0, "real", "bridge start position"),
        "s": (float, 0.0, "[0, t)", "bridge end time"),
        "y": (float, 0.0, "real", "bridge end position"),
        "paths": (int, 20000, ">= 2", "number of paths"),
        "steps": (int, 512, ">= 2", "time steps per path"),
    }),
    "duhamel": ("Duhamel partial sum with the Eq. e.Inbd tail bound", {
        **_POTENTIAL,
        "potential": (str, "bump", "devlim|devlim-mean|zero|bump|<csv path>", "forcing potential"),
        "lam": (float, 1.0, "> 0", "lambda"),
        "t": (float, 1.0, "(0, 2]", "time"),
        "x": (float, 0.0, "real", "position"),
        "nmax": (int, 3, "[0, 4]", "highest series order"),
        "samples": (int, 20000, ">= 2", "Monte Carlo samples per order"),
    }),
    "solve": ("Forward HJ solve for h_lambda", {
        **_POTENTIAL,
        "lam": (float, 8.0, ">= 1", "lambda"),
        "t0": (float, 0.01, "(0, 0.05]", "initial heat-kernel layer time"),
        "cfl": (float, 0.4, "(0, 1]", "CFL number"),
    }),
    "minimize": ("Solve the constrained minimisation at finite lambda", {
        "lam": (float, 4.0, ">= 1 with e^-lam < p_lam(2,0)", "lambda"),
        "nt": (int, 256, ">= 16", "time cells"),
        "nx": (int, 256, ">= 16", "spatial nodes"),
        "L": (float, 4.0, "> 0", "box half-width"),
        "t0": (float, 0.01, "(0, 0.05]", "initial layer time"),
        "omega": (float, 0.3, "(0, 1]", "damping"),
        "max_iter": (int, 200, ">= 1", "iteration cap"),
        "tol": (float, 1e-3, "> 0", "convergence tolerance"),
        "warm_start": (str, "devlim", "devlim|zero", "initial potential"),
    }),
    "converge": ("Convergence table over lambda (Theorem t.main)", {
        "lambdas": (str, "2,4,8", "comma-separated increasing reals >= 2", "lambda values"),
        "delta": (float, 0.5, "(0, 0.5]", "region parameter"),
        "nt": (int, 256, ">= 16", "time cells"),
        "nx": (int, 256, ">= 16", "spatial nodes"),
        "tol": (float, 1e-3, "> 0", "minimiser tolerance"),
        "max_iter": (int, 200, ">= 1", "minimiser iteration cap"),
        "omega": (float, 0.3, "(0, 1]", "damping"),
        "region_n": (int, 64, ">= 2", "region grid size per axis"),
        "slack": (float, 0.05, ">= 0", "lower-bound slack"),
        "workers": (int, 1, ">= 1", "concurrent lambda solves"),
        "timing": (int, 0, "0|1", "record wall times in report.json (breaks byte-determinism)"),
    }),
    "holder": ("Empirical Hoelder / time-monotonicity scans of a field", {
        "bundle": (str, None, "minimize output directory", "read the field from a result bundle"),
        "lam": (float, 8.0, ">= 1", "lambda for the free field (no --bundle)"),
        "delta": (float, 0.05, "(0, 0.5]", "Hoelder delta"),
        "slices": (str, "0.5,1,1.5,2", "comma-separated times in [delta, 2]", "time slices"),
        "u_max": (float, 0.1, "> 0", "time-monotonicity window"),
    }),
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="wnt", description="Weak-noise lower-tail toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for cmd, (desc, spec) in COMMANDS.items():
        p = sub.add_parser(cmd, help=desc, description=desc)
        for name, (typ, default, rng, text) in {**spec, **_COMMON}.items():
            dname = name
            p.add_argument(_flag(name), dest=dname, type=typ, default=None,
                           help=f"{text} (default: {default}; range: {rng})")
    return parser


def _read_config(path, command):
    cp = configparser.ConfigParser()
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[DEFAULT]\n" + text
    cp.read_string(text)
    merged = dict(cp.defaults())
    if cp.has_section(command):
        merged.update({k: v for k, v in cp.items(command)})
    return {k.replace("-", "_"): v for k, v in merged.items()}


def resolve_config(command, ns):
    """Effective parameters: flags > config file > defaults; WNT_SEED > all."""
    spec = {**COMMANDS[command][1], **_COMMON}
    file_vals = _read_config(ns.config, command) if ns.config else {}
    unknown = set(file_vals) - set(spec)
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg = {}
    for name, (typ, default, _, _) in spec.items():
        val = getattr(ns, name)
        if val is None and name in file_vals:
            try:
                val = typ(file_vals[name])
            except ValueError as exc:
                raise ValidationError(f"config key {name}: {exc}") from exc
        cfg[name] = default if val is None else val
    env = os.environ.get("WNT_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError as exc:
            raise ValidationError(f"WNT_SEED must be an integer, got {env!r}") from exc
    if cfg["seed"] < 0:
        raise ValidationError("seed must be >= 0")
    return cfg


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad number list {text!r}") from exc


def _out_dir(cfg):
    if not cfg["out"]:
        return None
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _echo(cfg, command):
    return {"command": command, **{k: v for k, v in sorted(cfg.items()) if k not in ("config", "log_level")}}


def _write_echo(d, cfg, command):
    if d is not None:
        (d / "effective_config.json").write_text(json.dumps(_echo(cfg, command), indent=2, sort_keys=True) + "\n")


def _profile(cfg):
    from .limit_shape import build_lens_profile

    return build_lens_profile(n_nodes=cfg.get("nodes", 512), tol=cfg.get("tol", 1e-8))


def _potential(cfg, profile=None):
    from .fields import Potential, sample_devlim

    name, nt, nx, L = cfg["potential"], cfg["nt"], cfg["nx"], cfg["L"]
    if name in ("devlim", "devlim-mean"):
        from .limit_shape import build_lens_profile

        return sample_devlim(profile or build_lens_profile(), nt, nx, L, mode="mean" if name == "devlim-mean" else "rms")
    if name == "zero":
        return Potential.zeros(nt, nx, L)
    if name == "bump":
        amp, w = cfg["amp"], cfg["width"]
        if not w > 0:
            raise ValidationError("width must be positive")
        return Potential.from_function(lambda T, X: amp * smooth_time_window(T) * np.exp(-X**2 / (2 * w * w)), nt, nx, L)
    path = Path(name)
    if not path.exists():
        raise ValidationError(f"unknown potential {name!r} (not a keyword and no such file)")
    return Potential.from_csv(path)


def smooth_time_window(T, ta=0.2, tb=1.8):
    """C-infinity bump in time supported on [ta, tb] with maximum 1."""
    s = np.clip((np.asarray(T, dtype=float) - ta) / (tb - ta), 0.0, 1.0)
    inside = (s > 0) & (s < 1)
    return np.where(inside, np.exp(4.0 - 1.0 / np.where(inside, s * (1 - s), 1.0)), 0.0)


# -- command implementations -------------------------------------------------------

def cmd_profile(cfg):
    prof = _profile(cfg)
    d = _out_dir(cfg)
    if d:
        prof.to_csv(d / "profile.csv")
    print(f"profile: {len(prof.grid_t)} nodes, r(1)={float(prof.r(1.0)):.12g}, max ODE residual={prof.max_residual:.3g}")


def cmd_devlim(cfg):
    from .limit_shape import build_lens_profile, devlim_at

    prof = build_lens_profile()
    d = _out_dir(cfg)
    if d:
        from .fields import sample_devlim

        if cfg["mode"] not in ("rms", "mean"):
            raise ValidationError("mode must be rms or mean")
        sample_devlim(prof, cfg["nt"], cfg["nx"], cfg["L"], mode=cfg["mode"]).to_csv(d / "devlim.csv")
    print(f"devlim({cfg['t']:g}, {cfg['x']:g}) = {devlim_at(prof, cfg['t'], cfg['x']):.10g}")


def cmd_hlim(cfg):
    from .geodesics import dp_oracle, hlim_at, hlim_surface, write_hlim_csv
    from .harness import region_grid
    from .limit_shape import build_lens_profile

    prof = build_lens_profile()
    value = hlim_at(prof, cfg["t"], cfg["x"])
    d = _out_dir(cfg)
    if d:
        ts, xs = region_grid(cfg["delta"], 4.0, cfg["grid_nt"], cfg["grid_nx"])
        write_hlim_csv(d / "hlim.csv", ts, xs, hlim_surface(prof, ts, xs))
    msg = f"hlim({cfg['t']:g}, {cfg['x']:g}) = {value:.6f}"
    if cfg["oracle_n"]:
        n = cfg["oracle_n"]
        msg += f"; dp_oracle[{n}x{n}] = {dp_oracle(prof, cfg['t'], cfg['x'], nt=n, nx=n):.6f}"
    print(msg)


def cmd_geodesic(cfg):
    from .geodesics import geodesic_to
    from .limit_shape import build_lens_profile

    prof = build_lens_profile()
    geo = geodesic_to(prof, cfg["t"], cfg["x"])
    info = {"kind": geo.kind, "target": list(geo.target), "a": geo.a,
            "t_exit": geo.t_exit if math.isfinite(geo.t_exit) else None, "sign": geo.sign}
    d = _out_dir(cfg)
    if d:
        if cfg["samples"] < 2:
            raise ValidationError("samples must be >= 2")
        u = np.linspace(0.0, cfg["t"], cfg["samples"])
        with (d / "geodesic.csv").open("w") as fh:
            fh.write("u,gamma\n")
            for a, b in zip(u, geo.path(prof, u)):
                fh.write(f"{a:.17g},{b:.17g}\n")
        (d / "geodesic.json").write_text(json.dumps({**info, "config": _echo(cfg, "geodesic")}, indent=2, sort_keys=True) + "\n")
    extra = f"a={geo.a:.6g}" if geo.kind == "interior" else f"t_exit={geo.t_exit:.10g}, sign={geo.sign:+d}"
    print(f"geodesic to ({cfg['t']:g}, {cfg['x']:g}): {geo.kind}, {extra}")


def cmd_fk(cfg):
    from .feynman_kac import fk_estimate

    dev = _potential(cfg)
    est = fk_estimate(dev, cfg["lam"], cfg["t"], cfg["x"], cfg["s"], cfg["y"],
                      n_paths=cfg["paths"], n_steps=cfg["steps"], seed=cfg["seed"])
    d = _out_dir(cfg)
    if d:
        payload = json.loads(est.to_json())
        payload["config"] = _echo(cfg, "fk")
        (d / "fk.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"fk: mean={est.mean:.8g} se={est.std_error:.3g} log_mean={est.log_mean:.6f} ess={est.ess:.4g}")


def cmd_duhamel(cfg):
    from .pde_solver import duhamel_partial_sum

    dev = _potential(cfg)
    res = duhamel_partial_sum(dev, cfg["t"], cfg["x"], n_max=cfg["nmax"], mc_samples=cfg["samples"],
                              seed=cfg["seed"], lam=cfg["lam"])
    d = _out_dir(cfg)
    payload = {"value": res.value, "tail_bound": res.tail_bound if math.isfinite(res.tail_bound) else None,
               "terms": list(res.terms), "std_errors": list(res.std_errors), "std_error": res.std_error,
               "diverged": res.diverged, "config": _echo(cfg, "duhamel")}
    if d:
        (d / "duhamel.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"duhamel: value={res.value:.8g} se={res.std_error:.3g} tail_bound={res.tail_bound:.3g}")


def cmd_solve(cfg):
    from .pde_solver import solve_forward_h

    dev = _potential(cfg)
    f = solve_forward_h(dev, cfg["lam"], t0=cfg["t0"], cfl=cfg["cfl"])
    d = _out_dir(cfg)
    if d:
        f.to_csv(d / "h.csv")
        f.to_binary(d / "field.bin")
    print(f"solve: h(2,0)={f.at_origin():.6f} lambda={cfg['lam']:g}")


def cmd_minimize(cfg):
    from .optimizer import MinimizerOptions, solve_minimizer

    opts = MinimizerOptions(nt=cfg["nt"], nx=cfg["nx"], L=cfg["L"], t0=cfg["t0"], omega=cfg["omega"],
                            max_iter=cfg["max_iter"], tol=cfg["tol"], warm_start=cfg["warm_start"])
    res = solve_minimizer(cfg["lam"], opts)
    d = _out_dir(cfg)
    if d:
        res.save(d, seed=cfg["seed"])
    print(f"minimize: lambda={cfg['lam']:g} objective={res.objective:.6f} mu={res.mu:.6f} "
          f"residual={res.constraint_residual:.2e} iterations={res.iterations}")


def cmd_converge(cfg):
    from .harness import HarnessOptions, convergence_table
    from .optimizer import MinimizerOptions

    lambdas = _floats(cfg["lambdas"])
    mopts = MinimizerOptions(nt=cfg["nt"], nx=cfg["nx"], omega=cfg["omega"], max_iter=cfg["max_iter"], tol=cfg["tol"])
    hopts = HarnessOptions(region_nt=cfg["region_n"], region_nx=cfg["region_n"], lower_bound_slack=cfg["slack"],
                           workers=cfg["workers"], record_timing=bool(cfg["timing"]))
    rep = convergence_table(lambdas, cfg["delta"], cfg["seed"], mopts, hopts)
    rep.config_echo["cli"] = {k: v for k, v in _echo(cfg, "converge").items() if k not in ("workers", "out")}
    d = _out_dir(cfg)
    if d:
        rep.write(d / "report.json")
    sups = ", ".join("nan" if s is None else f"{s:.4f}" for s in rep.sup_error)
    print(f"converge: sup_error=[{sups}] complete={rep.complete} decreasing={rep.checks['sup_error_strictly_decreasing']}")
    if not rep.complete:
        raise SolverError("one or more lambda solves failed; partial report written")


def cmd_holder(cfg):
    from .harness import holder_exponent_scan, time_monotonicity_check
    from .optimizer import MinimizerResult

    if cfg["bundle"]:
        field_ = MinimizerResult.load(cfg["bundle"]).field
    else:
        from .fields import Potential
        from .pde_solver import solve_forward_h

        field_ = solve_forward_h(Potential.zeros(), cfg["lam"])
    slices = _floats(cfg["slices"])
    hmax = holder_exponent_scan(field_, cfg["delta"], slices)
    tmin = time_monotonicity_check(field_, cfg["delta"], cfg["u_max"])
    d = _out_dir(cfg)
    if d:
        (d / "holder.json").write_text(json.dumps(
            {"holder_max": hmax, "exponent": 2 / 13 - cfg["delta"], "time_min": tmin, "config": _echo(cfg, "holder")},
            indent=2, sort_keys=True) + "\n")
    print(f"holder: max ratio={hmax:.6g} (exponent 2/13-{cfg['delta']:g}), time_min={tmin:.6g}")


HANDLERS = {
    "profile": cmd_profile, "devlim": cmd_devlim, "hlim": cmd_hlim, "geodesic": cmd_geodesic,
    "fk": cmd_fk, "duhamel": cmd_duhamel, "solve": cmd_solve, "minimize": cmd_minimize,
    "converge": cmd_converge, "holder": cmd_holder,
}


def run(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK
        parser.print_usage(sys.stderr)
        print(f"wnt: unknown or missing subcommand; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = resolve_config(ns.command, ns)
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        d = _out_dir(cfg)
        HANDLERS[ns.command](cfg)
        _write_echo(d, cfg, ns.command)
        return EXIT_OK
    except ValidationError as exc:
        print(f"wnt: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"wnt: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"wnt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WNTError as exc:
        print(f"wnt: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
