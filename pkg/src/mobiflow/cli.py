"""Command-line front end: ``mobiflow <subcommand> [--config cfg.json] [--set path=value] ...``.

Every run writes a JSON report with ``schema_version``, the echoed configuration,
its SHA-256 hash, the result and (under a separate key) wall-clock timings.  Exit
codes: 0 success, 2 a violated invariant or failed check, 1 any other error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import analysis as an
from . import diffusion as dif
from . import grid as gr
from .errors import ConfigInvalid, InvariantViolated, MobiflowError
from .geodesic import SolverConfig, solve_geodesic
from .mobility import Energy, Mobility, action_density, check_gmc, load_spec

log = logging.getLogger("mobiflow")

SCHEMA_VERSION = "1"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POLY = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"type": "string"},
        "mobility": {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}},
        "energy": {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}},
        "dimension": {"type": "integer", "minimum": 1},
        "domain": {
            "type": "object",
            "properties": {
                "lengths": {"type": "array", "items": _POS, "minItems": 1, "maxItems": 2},
                "cells": {"type": "array", "items": {"type": "integer", "minimum": 4}, "minItems": 1, "maxItems": 2},
            },
            "required": ["lengths", "cells"],
        },
        "solver": {
            "type": "object",
            "properties": {
                "n_s": {"type": "integer", "minimum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "tau": _POS,
                "sigma": _POS,
                "tol_constraint": _POS,
                "tol_action": _POS,
                "theta": {"type": "number", "minimum": 0, "maximum": 1},
                "check_every": {"type": "integer", "minimum": 1},
                "step_ratio": _POS,
                "strict": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "experiment": {
            "type": "object",
            "properties": {
                "samples": {"type": "integer", "minimum": 10},
                "dt": _POS,
                "t_end": _POS,
                "every": {"type": "integer", "minimum": 1},
                "checkpoints": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
                "s_grid": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
                "t_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "eps_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.25},
                             "minItems": 2},
                "lambda": _NUM,
                "points_per_eps": {"type": "integer", "minimum": 20},
                "potential": _POLY,
                "kernel": _POLY,
                "distance_tol": _POS,
                "tol": _POS,
            },
        },
    },
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Apply ``path=value`` overrides; ``path`` is dotted, ``value`` parsed as JSON when possible."""
    cfg = copy.deepcopy(config)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not of the form path=value", "/")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigInvalid(f"override {item!r} has an empty path", "/")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"override path {path!r} crosses a non-object", "/" + "/".join(keys))
        node[keys[-1]] = _parse_value(raw)
    return cfg


def validate_config(config):
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(config), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        pointer = "/" + "/".join(str(p) for p in e.absolute_path)
        raise ConfigInvalid(e.message, pointer)
    dom = config.get("domain")
    if dom and len(dom["lengths"]) != len(dom["cells"]):
        raise ConfigInvalid("length differs from /domain/lengths", "/domain/cells")


def load_config(path, overrides=()):
    cfg = {}
    if path:
        if not os.path.exists(path):
            raise ConfigInvalid(f"config file {path!r} not found", "")
        with open(path) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{path}: {exc}", "") from exc
    cfg = apply_overrides(cfg, overrides)
    validate_config(cfg)
    return cfg


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _models(cfg, dimension=None):
    spec = {
        "mobility": cfg.get("mobility", {"kind": "power_law", "alpha": 1.0}),
        "energy": cfg.get("energy", {"kind": "entropy"}),
        "dimension": dimension or cfg.get("dimension", 1),
    }
    try:
        return load_spec(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"bad mobility or energy spec ({exc})", "/mobility") from exc


def _solver(cfg, threads):
    return SolverConfig(**cfg.get("solver", {}), workers=threads)


def _exp(cfg):
    return cfg.get("experiment", {})


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent=2):
    """JSON with every float written to 17 significant digits (non-finite as strings)."""
    obj = _to_plain(obj)

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            if not math.isfinite(o):
                return json.dumps(str(o))
            text = format(o, ".17g")
            return text if any(c in text for c in ".en") else text + ".0"
        if isinstance(o, (int, str)):
            return json.dumps(o)
        if isinstance(o, list):
            if not o:
                return "[]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = (pad + json.dumps(k) + ": " + enc(v, level + 1) for k, v in o.items())
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def write_tidy_csv(path, rows):
    """Rows ``(s_or_t_or_eps, quantity, value)``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s_or_t_or_eps", "quantity", "value"])
        for x, q, v in rows:
            wr.writerow([format(float(x), ".17g"), q, format(float(v), ".17g")])


def _read(path, what):
    if not path:
        raise ConfigInvalid(f"--{what} is required", f"/{what}")
    if not os.path.exists(path):
        raise ConfigInvalid(f"--{what}: file {path!r} not found", f"/{what}")
    return gr.read_density_csv(path)


def _poly(coefs):
    p = np.polynomial.Polynomial(coefs)
    return p, p.deriv(1), p.deriv(2)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gmc_check(args, cfg):
    _, energy, d = _models(cfg)
    verdict = check_gmc(energy, samples=_exp(cfg).get("samples", 10_000), dimension=d)
    return verdict.to_dict(), True


def cmd_distance(args, cfg, save=None):
    rho0, dom = _read(args.rho0, "rho0")
    rho1, _ = _read(args.rho1, "rho1")
    mob, _, _ = _models(cfg, dom.dim)
    res = solve_geodesic(rho0, rho1, mob, _solver(cfg, args.threads), dom)
    save = save or getattr(args, "save_geodesic", None)
    if save:
        gr.save_field(save, res.field)
        write_tidy_csv(os.path.join(save, "action_profile.csv"),
                       [((k + 0.5) / len(res.action_profile.per_slab), "action", v)
                        for k, v in enumerate(res.action_profile.per_slab)])
    return res.to_dict(), True


def cmd_geodesic(args, cfg):
    out_dir = args.save_geodesic or (os.path.splitext(args.out)[0] + "_geodesic" if args.out else "geodesic")
    return cmd_distance(args, cfg, save=out_dir)


def cmd_diffuse(args, cfg):
    rho0, dom = _read(args.rho0, "rho0")
    _, energy, _ = _models(cfg, dom.dim)
    exp = _exp(cfg)
    dt = args.dt or exp.get("dt")
    t_end = args.tend or exp.get("t_end")
    if not dt or not t_end:
        raise ConfigInvalid("diffuse needs --dt and --tend (or experiment.dt / experiment.t_end)", "/experiment")
    traj = dif.run_diffusion(rho0, energy, dom, dt, t_end=t_end)
    every = int(exp.get("every", max(1, len(traj) // 20)))
    if args.traj:
        os.makedirs(args.traj, exist_ok=True)
        for k, st in enumerate(traj):
            if k % every == 0 or k == len(traj) - 1:
                gr.write_density_csv(os.path.join(args.traj, f"rho_{k:06d}.csv"), st.rho, dom)
        write_tidy_csv(os.path.join(args.traj, "series.csv"),
                       [(st.t, q, v) for st in traj for q, v in (("energy", st.energy), ("dissipation", st.dissipation),
                                                                 ("mass", st.mass))])
    dissipated = float(sum(0.5 * (a.dissipation + b.dissipation) * (b.t - a.t) for a, b in zip(traj, traj[1:])))
    report = {
        "t": [st.t for st in traj],
        "energy": [st.energy for st in traj],
        "dissipation": [st.dissipation for st in traj],
        "mass_drift": float(max(abs(st.mass - traj[0].mass) for st in traj)),
        "min": float(min(np.min(st.rho) for st in traj)),
        "max": float(max(np.max(st.rho) for st in traj)),
        "dissipated": dissipated,
        "energy_identity_residual": dif.energy_identity_residual(traj),
    }
    return report, True


def cmd_hessian(args, cfg):
    rho, dom = _read(args.rho, "rho")
    psi, _ = _read(args.psi, "psi")
    mob, energy, _ = _models(cfg, dom.dim)
    exp = _exp(cfg)
    if args.functional == "internal":
        rep = an.internal_hessian(rho, psi, energy, dom.h)
    elif args.functional == "potential":
        V, _, _ = _poly(exp.get("potential", [0.0, 1.0, 0.125]))
        if dom.dim == 1:
            Vc = V(dom.centers())
        else:
            X = dom.mesh()
            Vc = V(X[0]) + V(X[1])
        rep = an.potential_hessian(rho, psi, Vc, mob, dom.h)
    else:
        if dom.dim != 1:
            raise ConfigInvalid("interaction second derivative is one-dimensional", "/domain/cells")
        _, W1, W2 = _poly(exp.get("kernel", [0.0, 0.0, -0.5]))
        rep = an.interaction_hessian(rho, psi, (W1, W2), mob, dom.h)
    return rep.to_dict(), True


def cmd_counterexample(args, cfg):
    exp = _exp(cfg)
    eps = args.eps_list or exp.get("eps_list", [0.1, 0.05, 0.025, 0.0125])
    mob = Mobility.from_dict(cfg["mobility"]) if "mobility" in cfg else None
    V = None
    if "potential" in exp:
        V = _poly(exp["potential"])[0]
    rep = an.counterexample_scaling(eps, mobility=mob, V=V, lam=exp.get("lambda", -10.0),
                                    points_per_eps=exp.get("points_per_eps", 40))
    if args.tidy:
        write_tidy_csv(args.tidy, rep.tidy())
    return rep.to_dict(), rep.passed


def cmd_convexity_scan(args, cfg):
    rho0, dom = _read(args.rho0, "rho0")
    rho1, _ = _read(args.rho1, "rho1")
    _, energy, _ = _models(cfg, dom.dim)
    rep = an.convexity_scan(rho0, rho1, energy, dom, _solver(cfg, args.threads))
    if args.tidy:
        write_tidy_csv(args.tidy, [(s, "energy", v) for s, v in zip(rep["s"], rep["values"])])
    ok = rep["max_violation"] <= 0.02 * rep["energy_range"] + 1e-12
    return rep | {"passed": ok}, ok


def cmd_evi_check(args, cfg):
    rho0, dom = _read(args.rho0, "rho0")
    if not args.nu:
        raise ConfigInvalid("--nu is required", "/nu")
    _, energy, _ = _models(cfg, dom.dim)
    exp = _exp(cfg)
    dt = exp.get("dt", 1e-4)
    cps = exp.get("checkpoints", [0.0, 0.01, 0.02, 0.03])
    traj = dif.run_diffusion(rho0, energy, dom, dt, t_end=max(cps))
    by_t = {round(st.t / dt): st for st in traj}
    try:
        states = [by_t[round(t / dt)] for t in cps]
    except KeyError as exc:
        raise ConfigInvalid("checkpoints must be multiples of dt", "/experiment/checkpoints") from exc
    reports = []
    for path in args.nu:
        nu, _ = _read(path, "nu")
        reports.append(an.evi_check(states, nu, energy, dom, _solver(cfg, args.threads),
                                    exp.get("distance_tol", 0.02)))
    ok = all(r["passed"] for r in reports)
    if args.tidy:
        write_tidy_csv(args.tidy, [(t, f"D[{k}]", D) for k, r in enumerate(reports) for t, D in zip(r["t"], r["D"])])
    return {"references": reports, "passed": ok}, ok


def cmd_action_derivative(args, cfg):
    ra, dom = _read(args.rho_a, "rho-a")
    rb, _ = _read(args.rho_b, "rho-b")
    _, energy, _ = _models(cfg, dom.dim)
    exp = _exp(cfg)
    rep = an.action_derivative_check(ra, rb, energy, dom, exp.get("s_grid", [0.25, 0.5, 0.75]),
                                     exp.get("t_grid", [0.0, 0.01, 0.05]), dt=exp.get("dt"),
                                     tol=exp.get("tol", 1e-6))
    if args.tidy:
        write_tidy_csv(args.tidy, [(r["t"], f"{q}[s={r['s']:g}]", r[q]) for r in rep["rows"]
                                   for q in ("lhs", "rhs", "gap")])
    return rep, True


def _selftest_cases():
    r = Mobility.power_law(1.0)
    yield "action_density 0/0", lambda: float(action_density(r, 0.0, np.zeros(1))) == 0.0
    yield "action_density m=r", lambda: float(action_density(r, 2.0, np.array([4.0]))) == 8.0
    yield "gmc alpha=1 gamma=0.5 d=2", lambda: check_gmc(Energy.pressure_power(r, 0.5, 1.0, 2), dimension=2).holds
    yield "gmc constant mobility", lambda: check_gmc(Energy.power(Mobility.constant(1.0), 2.0), dimension=3).holds
    dom = gr.Domain.interval(16)
    rho = 1 + 0.5 * np.cos(np.pi * dom.centers())
    yield "distance to itself", lambda: solve_geodesic(rho, rho, r, SolverConfig(n_s=4), dom).distance == 0.0
    yield "mass conservation", lambda: abs(dif.step_diffusion(
        dif.flow_state(rho, 0.0, Energy.entropy(r), dom), 1e-3, Energy.entropy(r)).mass - dom.mass(rho)) < 1e-12
    yield "zero tangent", lambda: an.action_derivative_check(rho, rho, Energy.entropy(r), dom, [0.5], [0.0])[
        "rows"][0]["A"] == 0.0


def cmd_selftest(args, cfg):
    results = {}
    for name, fn in _selftest_cases():
        try:
            results[name] = bool(fn())
        except Exception as exc:  # report, do not abort the suite
            results[name] = False
            log.error("selftest %s raised %r", name, exc)
    ok = all(results.values())
    return {"cases": results, "passed": ok}, ok


COMMANDS = {
    "gmc-check": cmd_gmc_check,
    "distance": cmd_distance,
    "geodesic": cmd_geodesic,
    "diffuse": cmd_diffuse,
    "hessian": cmd_hessian,
    "counterexample": cmd_counterexample,
    "convexity-scan": cmd_convexity_scan,
    "evi-check": cmd_evi_check,
    "action-derivative": cmd_action_derivative,
    "selftest": cmd_selftest,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mobiflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mobiflow {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a configuration entry (dotted path, JSON value)")
    common.add_argument("--out", help="write the JSON report here (default: stdout)")
    common.add_argument("--threads", type=int, default=None,
                        help="thread count for numerical kernels (default: $MOBIFLOW_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")
    specs = {
        "gmc-check": [],
        "distance": ["rho0", "rho1", "save_geodesic"],
        "geodesic": ["rho0", "rho1", "save_geodesic"],
        "diffuse": ["rho0", "tend", "dt", "traj", "report"],
        "hessian": ["functional", "rho", "psi"],
        "counterexample": ["eps_list", "tidy"],
        "convexity-scan": ["rho0", "rho1", "tidy"],
        "evi-check": ["rho0", "nu", "tidy"],
        "action-derivative": ["rho_a", "rho_b", "tidy"],
        "selftest": [],
    }
    for name, opts in specs.items():
        sp = sub.add_parser(name, parents=[common])
        for o in opts:
            flag = "--" + o.replace("_", "-")
            if o == "functional":
                sp.add_argument(flag, choices=["internal", "potential", "interaction"], required=True)
            elif o in ("tend", "dt"):
                sp.add_argument(flag, type=float)
            elif o == "eps_list":
                sp.add_argument(flag, type=float, nargs="+")
            elif o == "nu":
                sp.add_argument(flag, nargs="+")
            else:
                sp.add_argument(flag)
    return p


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("MOBIFLOW_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigInvalid(f"MOBIFLOW_THREADS={env!r} is not an integer", "/threads")
    return os.cpu_count() or 1


def run(argv=None):
    """Parse ``argv``, execute the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.set)
        args.threads = _threads(args.threads)
        if getattr(args, "report", None) and not args.out:
            args.out = args.report
        with threadpool_limits(args.threads), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result, ok = COMMANDS[args.command](args, cfg)
        report = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command,
            "config": cfg,
            "config_sha256": config_hash(cfg),
            "result": result,
            "warnings": sorted({str(w.message) for w in caught}),
            "timings": {"wall_seconds": time.perf_counter() - t0},
        }
        text = dumps(report)
        if args.out:
            os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0 if ok else 2
    except ConfigInvalid as exc:
        print(f"mobiflow: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolated, AssertionError) as exc:
        print(f"mobiflow: invariant violated: {exc}", file=sys.stderr)
        return 2
    except (MobiflowError, ValueError, ArithmeticError, OSError) as exc:
        print(f"mobiflow: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
