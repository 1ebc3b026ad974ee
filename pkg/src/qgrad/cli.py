"""Command-line entry points: ``run``, ``sweep``, ``cover`` and ``bounds``.

Experiments are described by an INI file with sections ``[problem]``,
``[quantizer]``, ``[schedule]``, ``[stopping]`` and ``[run]``; any key can be
overridden with ``--set section.key=value``. Each run writes a CSV trace and a
JSON sidecar holding the fully resolved configuration, which ``--replay``
accepts in place of an INI file.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds as bnd
from ._kernels import BACKEND
from .optimizer import Domain, StoppingRule, make_schedule, run
from .problems import (ScalarBenchmarkOracle, generate_flow, generate_task, generate_tcp,
                       load_instance, oracle_for, random_quadratic)
from .quantization import Kind, construct_set, covering_cosine, is_proper_quantization, load_set

log = logging.getLogger("qgrad")

SEED_ENV = "QGRAD_SEED"

# section -> key -> (type, default)
SCHEMA = {
    "problem": {
        "family": (str, "tcp"),
        "instance": (str, ""),
        # tcp
        "sources": (int, 20),
        "links": (int, 100),
        "density": (float, 0.5),
        "u_scale": (float, 1000.0),
        "capacity": (float, 1.0),
        "rate_lo": (float, 0.0),
        "rate_hi": (float, 1.0),
        # task
        "machines": (int, 4),
        "tasks": (int, 2),
        "coef_lo": (float, 1.0),
        "coef_hi": (float, 5.0),
        "demand": (str, "3,3"),
        "cap": (float, 3.0),
        # netflow
        "nodes": (int, 6),
        "extra_edges": (int, 4),
        # quadratic
        "dims": (int, 5),
        "cond": (float, 10.0),
        "domain": (str, "unconstrained"),
        # scalar
        "variant": (str, "smooth"),
    },
    "quantizer": {
        "kind": (str, "sign"),
        "n": (int, 8),
        "file": (str, ""),
    },
    "schedule": {
        "kind": (str, "constant"),
        "gamma": (float, 0.1),
        "gamma0": (float, 1.0),
        "p": (float, 0.6),
    },
    "stopping": {
        "rule": (str, "none"),
        "eps": (float, 0.1),
        "alpha": (float, 1.0),
    },
    "run": {
        "max_iter": (int, 10_000),
        "seed": (int, 0),
        "x0": (str, "zeros"),
        "record_x": (bool, False),
        "alpha": (float, 1.0),
        "out": (str, "qgrad_out"),
    },
}


class ConfigError(ValueError):
    pass


def _coerce(typ, value):
    if isinstance(value, str):
        if typ is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"not a boolean: {value!r}")
        try:
            return typ(value.strip())
        except ValueError as exc:
            raise ConfigError(f"cannot read {value!r} as {typ.__name__}") from exc
    if typ is float and isinstance(value, int):
        return float(value)
    if typ is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, typ):
        raise ConfigError(f"expected {typ.__name__}, got {value!r}")
    return value


def default_config() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def apply_setting(cfg: dict, section: str, key: str, value) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    cfg[section][key] = _coerce(SCHEMA[section][key][0], value)


def load_ini(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = default_config()
    for sec in cp.sections():
        for key, value in cp.items(sec):
            apply_setting(cfg, sec, key, value)
    return cfg


def load_sidecar(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"sidecar not found: {path}") from exc
    cfg = default_config()
    for sec, items in data["config"].items():
        for key, value in items.items():
            apply_setting(cfg, sec, key, value)
    return cfg


def _floats(text: str):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# building objects from a config


def build_problem(cfg: dict):
    p = cfg["problem"]
    seed = cfg["run"]["seed"]
    if p["instance"]:
        if not Path(p["instance"]).is_file():
            raise ConfigError(f"instance file not found: {p['instance']}")
        return oracle_for(load_instance(p["instance"]))
    fam = p["family"]
    if fam == "tcp":
        net = generate_tcp(seed, p["sources"], p["links"], p["density"], p["u_scale"],
                           p["capacity"], (p["rate_lo"], p["rate_hi"]))
        return oracle_for(net)
    if fam == "task":
        demand = _floats(p["demand"])
        if len(demand) == 1:
            demand = demand * p["tasks"]
        return oracle_for(generate_task(seed, p["machines"], p["tasks"],
                                        (p["coef_lo"], p["coef_hi"]), demand, p["cap"]))
    if fam == "netflow":
        return oracle_for(generate_flow(seed, p["nodes"], p["extra_edges"]))
    if fam == "quadratic":
        dom = {"unconstrained": Domain.unconstrained(), "orthant": Domain.orthant()}.get(p["domain"])
        if dom is None:
            raise ConfigError(f"quadratic domain must be unconstrained or orthant, got {p['domain']!r}")
        return random_quadratic(seed, p["dims"], p["cond"], dom)
    if fam == "scalar":
        return ScalarBenchmarkOracle(p["variant"])
    raise ConfigError(f"unknown problem family {fam!r}")


def build_quantizer(cfg: dict, dims: int):
    q = cfg["quantizer"]
    if q["file"]:
        if not Path(q["file"]).is_file():
            raise ConfigError(f"quantizer file not found: {q['file']}")
        D = load_set(q["file"])
    else:
        kind = Kind(q["kind"])
        if kind is Kind.CIRCULAR:
            D = construct_set(kind, n=q["n"])
        elif kind is Kind.SIGN:
            D = construct_set(kind, dims, lazy=True)
        else:
            D = construct_set(kind, dims)
    if D.dims != dims:
        raise ConfigError(f"quantizer has dimension {D.dims} but the problem has {dims}")
    return D


def build_schedule(cfg: dict):
    s = cfg["schedule"]
    if s["kind"] == "constant":
        return make_schedule("constant", s["gamma"])
    if s["kind"] == "power":
        return make_schedule("power", gamma0=s["gamma0"], p=s["p"])
    raise ConfigError(f"unknown schedule kind {s['kind']!r}")


def build_stopping(cfg: dict):
    s = cfg["stopping"]
    rule = s["rule"]
    if rule == "none":
        return []
    if rule == "grad_norm":
        return [StoppingRule.grad_norm(s["eps"])]
    if rule == "l_alpha":
        return [StoppingRule.l_alpha(s["eps"], s["alpha"])]
    if rule == "gap":
        return [StoppingRule.gap(s["eps"])]
    raise ConfigError(f"unknown stopping rule {rule!r}")


def build_x0(cfg: dict, dims: int):
    text = cfg["run"]["x0"].strip()
    if text in ("", "zeros"):
        return np.zeros(dims)
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * dims
    if len(vals) != dims:
        raise ConfigError(f"x0 has {len(vals)} entries, problem has {dims}")
    return np.array(vals)


def resolve(cfg: dict):
    """Validate a config and build every object a run needs."""
    cfg = copy.deepcopy(cfg)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        apply_setting(cfg, "run", "seed", env)
    if cfg["run"]["max_iter"] < 0:
        raise ConfigError("max_iter must be >= 0")
    oracle = build_problem(cfg)
    D = build_quantizer(cfg, oracle.dims)
    schedule = build_schedule(cfg)
    rules = build_stopping(cfg)
    x0 = build_x0(cfg, oracle.dims)
    return cfg, oracle, D, schedule, rules, x0


# ---------------------------------------------------------------------------
# commands


def _execute(cfg, oracle, D, schedule, rules, x0):
    r = cfg["run"]
    return run(oracle, D, schedule, rules, r["max_iter"], x0=x0, record_x=r["record_x"],
               alpha=r["alpha"])


def _finite(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def _sidecar(cfg, trace):
    return {
        "config": cfg,
        "bits_per_iteration": trace.bits_per_iteration,
        "hit_iteration": trace.hit_iteration,
        "stop_reason": trace.stop_reason,
        "backend": BACKEND,
        "final": {
            "iterations": trace.iterations,
            "f": _finite(float(trace.f[-1])),
            "grad_norm": _finite(float(trace.grad_norm[-1])),
            "l_alpha": _finite(float(trace.l_alpha[-1])) if trace.has_l_alpha else None,
            "floor": _finite(trace.floor()),
            "bits": int(trace.bits[-1]),
            "x": trace.x_final.tolist(),
        },
    }


def _write_outputs(out_dir: Path, stem: str, cfg, trace):
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out_dir / f"{stem}.csv")
    if trace.x is not None:
        np.savetxt(out_dir / f"{stem}_x.csv", trace.x, delimiter=",", fmt="%.17g")
    with open(out_dir / f"{stem}.json", "w") as fh:
        json.dump(_sidecar(cfg, trace), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config_from_args(args) -> dict:
    if getattr(args, "replay", None):
        cfg = load_sidecar(args.replay)
    elif getattr(args, "config", None):
        cfg = load_ini(args.config)
    else:
        cfg = default_config()
    shortcuts = {
        "problem": ("problem", "family"), "quantizer": ("quantizer", "kind"),
        "n": ("quantizer", "n"), "set_file": ("quantizer", "file"),
        "gamma": ("schedule", "gamma"), "max_iter": ("run", "max_iter"),
        "seed": ("run", "seed"), "out": ("run", "out"), "eps": ("stopping", "eps"),
        "rule": ("stopping", "rule"),
    }
    for attr, (sec, key) in shortcuts.items():
        v = getattr(args, attr, None)
        if v is not None:
            apply_setting(cfg, sec, key, v)
    if getattr(args, "record_x", False):
        cfg["run"]["record_x"] = True
    for item in getattr(args, "set", None) or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        apply_setting(cfg, sec.strip(), key.strip(), value)
    return cfg


def cmd_run(args) -> int:
    cfg, oracle, D, schedule, rules, x0 = resolve(_config_from_args(args))
    trace = _execute(cfg, oracle, D, schedule, rules, x0)
    out = Path(cfg["run"]["out"])
    _write_outputs(out, "trace", cfg, trace)
    print(f"hit_iteration={trace.hit_iteration} stop_reason={trace.stop_reason} "
          f"iterations={trace.iterations} floor={trace.floor():.6g} "
          f"bits_per_iteration={trace.bits_per_iteration}")
    print(f"wrote {out / 'trace.csv'} and {out / 'trace.json'}")
    return 0


def _gamma_tag(g: float) -> str:
    return format(g, ".10g").replace(".", "p").replace("-", "m")


def _sweep_member(payload):
    cfg, gamma, x0 = payload
    cfg = copy.deepcopy(cfg)
    cfg["schedule"]["kind"] = "constant"
    cfg["schedule"]["gamma"] = gamma
    # the seed override was already folded in by resolve()
    saved = os.environ.pop(SEED_ENV, None)
    try:
        cfg, oracle, D, schedule, rules, _ = resolve(cfg)
    finally:
        if saved is not None:
            os.environ[SEED_ENV] = saved
    return cfg, _execute(cfg, oracle, D, schedule, rules, x0)


def sweep(cfg: dict, gammas, continuation: bool = False, jobs: int = 1):
    """Run one constant-step member per gamma on a shared instance.

    With ``continuation`` the members run from the largest gamma down, each
    starting where the previous one stopped. Returns ``[(gamma, cfg, trace)]``
    in the order of ``gammas``.
    """
    if not gammas:
        raise ConfigError("gamma list is empty")
    for g in gammas:
        if not g > 0:
            raise ConfigError(f"every gamma must be > 0, got {g}")
    cfg, oracle, _, _, _, x0 = resolve(cfg)
    results = {}
    if continuation:
        start = x0
        for g in sorted(set(gammas), reverse=True):
            c, tr = _sweep_member((cfg, g, start))
            results[g] = (c, tr)
            start = tr.x_final
    elif jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            uniq = sorted(set(gammas))
            for g, res in zip(uniq, ex.map(_sweep_member, [(cfg, g, x0) for g in uniq])):
                results[g] = res
    else:
        for g in gammas:
            if g not in results:
                results[g] = _sweep_member((cfg, g, x0))
    return [(g, results[g][0], results[g][1]) for g in gammas]


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    gammas = _floats(args.gammas)
    members = sweep(cfg, gammas, args.continuation, args.jobs)
    out = Path(members[0][1]["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = ["gamma,floor,final_f,bits"]
    for g, c, tr in members:
        _write_outputs(out, f"gamma_{_gamma_tag(g)}", c, tr)
        lines.append(f"{g:.17g},{tr.floor():.17g},{tr.f[-1]:.17g},{int(tr.bits[-1])}")
        print(f"gamma={g:g} floor={tr.floor():.6g} final_f={tr.f[-1]:.6g} bits={int(tr.bits[-1])}")
    with open(out / "summary.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_cover(args) -> int:
    if args.file:
        if not Path(args.file).is_file():
            raise ConfigError(f"set file not found: {args.file}")
        D = load_set(args.file)
    else:
        if args.kind is None:
            raise ConfigError("give --kind or --file")
        kind = Kind(args.kind)
        if kind is Kind.CIRCULAR:
            D = construct_set(kind, n=args.n)
        else:
            if args.dims is None:
                raise ConfigError(f"--dims is required for kind {kind.value}")
            D = construct_set(kind, args.dims)
    ca = covering_cosine(D, seed=args.seed)
    cert = is_proper_quantization(D)
    theta = math.degrees(ca.theta_star) if ca.theta_star is not None else None
    report = {
        "kind": D.kind.value, "dims": D.dims, "size": D.size, "cos_star": ca.cos_star,
        "theta_deg": theta, "proper": bool(ca.proper), "proper_lp": bool(cert.proper),
        "method": ca.method.value, "witness": np.asarray(ca.witness).tolist(),
    }
    if not cert.proper and cert.witness is not None:
        report["separating_direction"] = np.asarray(cert.witness).tolist()
    if args.json:
        print(json.dumps(report, indent=1, sort_keys=True))
    else:
        _print_aligned(report)
    return 0


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.10g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if v is None:
        return "none"
    return str(v)


def _print_aligned(pairs):
    items = list(pairs.items()) if isinstance(pairs, dict) else list(pairs)
    width = max(len(k) for k, _ in items)
    for k, v in items:
        print(f"{k.ljust(width)} = {_fmt(v)}")


def cmd_bounds(args) -> int:
    c = bnd.ProblemConstants(
        L=args.lipschitz, eps=args.eps, cos_theta=args.cos_theta, N=args.dims,
        alpha=args.alpha, B=args.grad_bound, mu=args.mu, gap=args.gap, K=args.K,
        grad0_norm=args.grad0)
    if args.mode == "type1":
        rep = bnd.type1_plan(c, args.gamma, constrained=args.constrained)
        out = rep.items()
        payload = rep.to_dict()
    elif args.mode == "rate":
        if args.iters is None:
            raise ConfigError("--iters is required for rate")
        rep = bnd.optimal_rate_plan(args.iters, c, use_K=args.gap_bound_variant)
        out = rep.items()
        payload = rep.to_dict()
    elif args.mode == "strong":
        rep = bnd.strongly_convex_plan(c, args.gamma)
        out = rep.items()
        payload = rep.to_dict()
    else:
        if args.gamma is None:
            raise ConfigError("--gamma is required for margins")
        m = bnd.descent_margins(c, args.gamma)
        out = [(k, v) for k, v in m.items() if v is not None]
        payload = {k: (list(v) if isinstance(v, tuple) else v) for k, v in m.items()}
        payload["formula_id"] = bnd.FormulaId.DESCENT_MARGIN.value
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        _print_aligned(out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_experiment_args(p):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--replay", help="JSON sidecar from an earlier run")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--problem", help="tcp, task, netflow, quadratic or scalar")
    p.add_argument("--quantizer", help="sign, minimal, circular, normal_basis")
    p.add_argument("--n", type=int, help="circular set size")
    p.add_argument("--set-file", dest="set_file", help="custom direction file")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rule", help="none, grad_norm, l_alpha or gap")
    p.add_argument("--eps", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--record-x", dest="record_x", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgrad", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one run, CSV trace plus JSON sidecar")
    _add_experiment_args(p)
    p.add_argument("--gamma", type=float, help="constant step size")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per step size plus summary.csv")
    _add_experiment_args(p)
    p.add_argument("--gammas", default="0.005,0.01,0.05,0.1,0.5,1",
                   help="comma-separated constant step sizes")
    p.add_argument("--continuation", action="store_true",
                   help="warm-start each step size from the previous (larger) one")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cover", help="covering cosine and proper test for a set")
    p.add_argument("--kind")
    p.add_argument("--dims", type=int)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cover)

    p = sub.add_parser("bounds", help="step-size rules and iteration bounds")
    p.add_argument("mode", choices=["type1", "rate", "strong", "margins"])
    p.add_argument("--lipschitz", type=float, required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--cos-theta", dest="cos_theta", type=float, default=1.0)
    p.add_argument("--gap", type=float)
    p.add_argument("--K", type=float, help="upper bound on the initial gap")
    p.add_argument("--grad0", type=float, help="initial gradient norm")
    p.add_argument("--gamma", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--B", dest="grad_bound", type=float)
    p.add_argument("--dims", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--constrained", action="store_true",
                   help="sign method on the nonnegative orthant")
    p.add_argument("--gap-bound-variant", dest="gap_bound_variant", action="store_true",
                   help="rate plan from the gap bound K")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bounds)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
