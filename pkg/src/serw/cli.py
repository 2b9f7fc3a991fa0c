"""Command-line front end: ``serw {tau,nu,msd,sweep,fit,rate-check}``.

Each run reads an optional JSON config, applies flag overrides
(``--delta``, ``--seed``, ``--out``), writes its files into the output
directory together with the effective ``config.json``, and prints a summary
(JSON with ``--json``).

Exit codes: 0 success, 2 config or schema error, 3 analytic non-convergence
(or a sub-diffusive model where a diffusion constant was asked for),
4 numerical failure.
"""

import argparse
import csv
import json
import math
from pathlib import Path
import sys

import jsonschema
import numpy as np

from ._validation import ConfigError, DomainError, NumericalError
from .montecarlo import EnsembleConfig, nu_estimate, run_ensemble, subdiffusion_probe
from .scaling import FAMILIES, SweepResult, plot_data, select_family, sweep_nu
from .special import rate_integral, upper_incomplete_gamma
from .tau import DEFAULT_MAX_TERMS, DEFAULT_TOL, TauLaw, diffusion_constant
from .walk import PERTURBATIONS, ModelSpec

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_NUMERICAL = 0, 2, 3, 4

_TAIL = {
    "type": "object",
    "properties": {
        "family": {"enum": ["half_cauchy", "pareto", "log_squared", "exponential", "point_mass"]},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "j": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "rate": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["family"],
    "additionalProperties": False,
}

_MODEL = {
    "type": "object",
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "perturbation": {"enum": list(PERTURBATIONS)},
        "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "tail": _TAIL,
        "scale_rule": {
            "type": "object",
            "properties": {"exponent": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
        "reinforced": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_GRID = {
    "oneOf": [
        {"type": "array", "items": _POS_NUM, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": _POS_NUM, "stop": _POS_NUM, "num": {"type": "integer", "minimum": 1}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}
_SERIES = {"tol": _POS_NUM, "max_terms": {"type": "integer", "minimum": 1}}
_COMMON = {"model": _MODEL, "out": {"type": "string"}}


def _schema(**props):
    return {"type": "object", "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "tau": _schema(n_max=_POS_NUM | {"type": "integer"}, **_SERIES),
    "nu": _schema(**_SERIES),
    "msd": _schema(
        n_steps={"type": "integer", "minimum": 1},
        n_walkers={"type": "integer", "minimum": 1},
        checkpoints={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        master_seed={"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        window={"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        probe={"type": "boolean"},
    ),
    "sweep": _schema(delta_grid=_GRID, **_SERIES),
    "fit": _schema(
        delta_grid=_GRID,
        sweep_csv={"type": "string"},
        points={"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 2}},
        nu0={"type": "number", "minimum": 0},
        families={"type": "array", "items": {"enum": [f.value for f in FAMILIES]}, "minItems": 1},
        **_SERIES,
    ),
    "rate-check": _schema(
        k_grid={"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        dimensions={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        gamma_points={
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
    ),
}

DEFAULTS = {
    "tau": {"n_max": 100, "tol": DEFAULT_TOL, "max_terms": DEFAULT_MAX_TERMS},
    "nu": {"tol": DEFAULT_TOL, "max_terms": DEFAULT_MAX_TERMS},
    "msd": {"n_steps": 10_000, "n_walkers": 10_000, "master_seed": 0, "window": 0.5, "probe": False},
    "sweep": {"delta_grid": {"start": 1e-2, "stop": 1e-8, "num": 9}, "tol": DEFAULT_TOL,
              "max_terms": DEFAULT_MAX_TERMS},
    "fit": {"tol": DEFAULT_TOL, "max_terms": DEFAULT_MAX_TERMS},
    "rate-check": {"k_grid": [1.0, 1e-2, 1e-4, 1e-6, 1e-8], "dimensions": [1, 2],
                   "gamma_points": [[1.0, 1.0], [-0.2, 0.2], [-0.02, 0.02], [0.5, 2.0]]},
}


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _grid(spec):
    if isinstance(spec, dict):
        return np.logspace(math.log10(spec["start"]), math.log10(spec["stop"]), spec["num"])
    return np.asarray(spec, dtype=float)


def _model(cfg):
    return ModelSpec.from_dict(cfg.get("model", {}))


def effective_config(command, file_cfg, args):
    """Merge defaults, file values and flag overrides, then validate."""
    cfg = {**DEFAULTS[command], **(file_cfg or {})}
    if args.delta is not None:
        model = dict(cfg.get("model", {}))
        model["delta"] = args.delta
        if args.delta > 0 and model.get("perturbation", "none") == "none":
            model["perturbation"] = "deterministic"
        elif args.delta == 0:
            model = {k: v for k, v in model.items() if k not in ("tail", "scale_rule")}
            model["perturbation"] = "none"
        cfg["model"] = model
    if args.seed is not None:
        if command != "msd":
            raise ConfigError("--seed only applies to msd")
        cfg["master_seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config: {exc.message}") from None
    return cfg


# -- commands -------------------------------------------------------------------

def cmd_tau(cfg, out):
    law = TauLaw(_model(cfg))
    n_max = int(cfg["n_max"])
    surv = law.survival_table(n_max)
    pmf = law.pmf_table(n_max)
    _write_csv(out / "tau.csv", ["n", "survival", "pmf"],
               ((n, float(s), float(p)) for n, s, p in zip(range(1, n_max + 1), surv, pmf)))
    s = law.summary(cfg["tol"], cfg["max_terms"])
    summary = {
        "model": law.model.to_dict(),
        "mean": s.mean.to_dict(),
        "p_odd": s.p_odd.to_dict(),
        "p_even": s.p_even.to_dict(),
        "pmf_sum": float(s.pmf_sum),
        "tail_mass": float(s.tail_mass),
        "terms_used": int(s.terms_used),
    }
    _write_json(out / "summary.json", summary)
    converged = all(v.status == "converged" for v in (s.mean, s.p_odd, s.p_even))
    return summary, converged


def cmd_nu(cfg, out):
    law = TauLaw(_model(cfg))
    nu = diffusion_constant(law, cfg["tol"], cfg["max_terms"])
    s = law.summary(cfg["tol"], cfg["max_terms"])
    summary = {
        "model": law.model.to_dict(),
        "nu": nu.to_dict(),
        "mean": s.mean.to_dict(),
        "p_odd": s.p_odd.to_dict(),
        "p_even": s.p_even.to_dict(),
    }
    _write_json(out / "nu.json", summary)
    return summary, nu.status == "converged"


def _progress(done, total):
    print(f"\rblocks {done}/{total}", end="" if done < total else "\n", file=sys.stderr, flush=True)


def cmd_msd(cfg, out, progress=False):
    ens = EnsembleConfig(_model(cfg), cfg["n_steps"], cfg["n_walkers"],
                         cfg.get("checkpoints"), cfg["master_seed"])
    res = run_ensemble(ens, progress=_progress if progress else None)
    header = ["checkpoint", "msd_mean", "msd_se", "n_walkers"]
    rows = [list(r) for r in res.msd.rows()]
    if cfg["probe"]:
        probe = {n: (v, e) for n, v, e in subdiffusion_probe(ens, result=res)}
        header += ["rescaled", "rescaled_se"]
        rows = [r + list(probe.get(r[0], (math.nan, math.nan))) for r in rows]
    _write_csv(out / "msd.csv", header, rows)
    last = int(np.flatnonzero(res.tau_counts)[-1]) if res.tau_counts.any() else 0
    _write_csv(out / "tau_hist.csv", ["n", "count"],
               ((n, int(res.tau_counts[n])) for n in range(1, last + 1)))
    summary = {"config": ens.to_dict(), "tau_overflow": res.tau_overflow}
    try:
        summary["nu_hat"] = nu_estimate(res.msd, cfg["window"]).to_dict()
    except (ConfigError, DomainError) as exc:
        summary["nu_hat"] = None
        summary["nu_hat_error"] = str(exc)
    _write_json(out / "msd.json", summary)
    return summary, True


def _sweep(cfg):
    return sweep_nu(_model(cfg), _grid(cfg["delta_grid"]), cfg["tol"], cfg["max_terms"])


def _write_sweep(out, sw):
    _write_csv(out / "sweep.csv", ["delta", "nu", "truncation_bound", "status", "terms_used"], sw.rows())
    _write_json(out / "sweep.json", sw.to_dict())


def cmd_sweep(cfg, out):
    sw = _sweep(cfg)
    _write_sweep(out, sw)
    summary = sw.to_dict()
    summary["nonconverged"] = sw.nonconverged
    return summary, not sw.nonconverged


def _read_points(path):
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"delta", "nu"} <= set(rows[0]):
        raise ConfigError(f"{path}: expected columns delta, nu")
    return np.array([[float(r["delta"]), float(r["nu"])] for r in rows])


def cmd_fit(cfg, out):
    sources = [k for k in ("sweep_csv", "points", "delta_grid") if k in cfg]
    if len(sources) != 1:
        raise ConfigError("fit needs exactly one of sweep_csv, points or delta_grid")
    ok = True
    if "sweep_csv" in cfg:
        pts = _read_points(cfg["sweep_csv"])
    elif "points" in cfg:
        pts = np.asarray(cfg["points"], dtype=float)[:, :2]
    else:
        pts = _sweep(cfg)
        _write_sweep(out, pts)
        ok = not pts.nonconverged
    nu0 = cfg.get("nu0")
    if nu0 is None and not isinstance(pts, SweepResult) and "model" in cfg:
        if _model(cfg).dimension == 1:
            nu0 = 0.0
    best, fits = select_family(pts, nu0, cfg.get("families", [f.value for f in FAMILIES]))
    summary = {
        "selected": best.family.value,
        "fits": {f.value: (v.to_dict() if not isinstance(v, str) else {"error": v}) for f, v in fits.items()},
    }
    _write_json(out / "fit.json", summary)
    _write_json(out / "plot_data.json", plot_data(pts, fits))
    return summary, ok


def cmd_rate_check(cfg, out):
    rows = []
    for d in cfg["dimensions"]:
        for k in cfg["k_grid"]:
            try:
                v = rate_integral(k, d)
            except DomainError:
                v = math.nan
            ratio = v / abs(math.log(k)) if d == 1 and 0 < k != 1 else math.nan
            rows.append((d, float(k), v, ratio))
    _write_csv(out / "rate_integral.csv", ["d", "k", "value", "value_over_abs_log_k"], rows)
    grows = [(float(s), float(x), upper_incomplete_gamma(s, x)) for s, x in cfg["gamma_points"]]
    _write_csv(out / "incomplete_gamma.csv", ["s", "x", "value"], grows)
    summary = {
        "rate_integral": [dict(zip(("d", "k", "value", "value_over_abs_log_k"), r)) for r in rows],
        "incomplete_gamma": [dict(zip(("s", "x", "value"), r)) for r in grows],
    }
    return summary, True


COMMANDS = {
    "tau": cmd_tau,
    "nu": cmd_nu,
    "msd": cmd_msd,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "rate-check": cmd_rate_check,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="serw", description="Reinforced random walk diffusion laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", type=Path, help="JSON run configuration")
        p.add_argument("--delta", type=float, help="override model.delta")
        p.add_argument("--seed", type=int, help="override master_seed (msd)")
        p.add_argument("--out", "-o", help="output directory (default: current directory)")
        p.add_argument("--json", action="store_true", help="print the summary as JSON")
        if name == "msd":
            p.add_argument("--progress", action="store_true", help="report progress on stderr")
    return ap


def _summary_text(summary, prefix=""):
    lines = []
    for k, v in summary.items():
        if isinstance(v, dict):
            lines.append(f"{prefix}{k}:")
            lines.extend(_summary_text(v, prefix + "  "))
        else:
            lines.append(f"{prefix}{k}: {v}")
    return lines


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        file_cfg = None
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        cfg = effective_config(args.command, file_cfg, args)
        out = Path(cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", {"command": args.command, **cfg})
        fn = COMMANDS[args.command]
        if args.command == "msd":
            summary, ok = fn(cfg, out, progress=args.progress)
        else:
            summary, ok = fn(cfg, out)
    except (ConfigError, DomainError) as exc:
        print(f"serw: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"serw: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print("\n".join(_summary_text(summary)))
    return EXIT_OK if ok else EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
