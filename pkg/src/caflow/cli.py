"""Command-line runner.

Exit codes: 0 ok, 2 config error, 3 budget error, 4 a check failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .catalog import catalog_entries, get_measure, lookup
from .dp import DEFAULT_BUDGET, BudgetExceeded
from .flow import (
    entropy_F_estimate,
    flow_grid,
    verify_theorem1,
    verify_theorem2,
)
from .measures import MeasureModel, measure_from_config, shift_entropy
from .partitions import Linear, Pointwise, VelocitySpec, velocity_from_config
from .perturbation import ClassifyParams, classify
from .rules import LocalRule, read_rule

log = logging.getLogger("caflow")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CHECK = 0, 2, 3, 4

RESULT_COLUMNS = [
    "experiment_id", "rule_label", "measure_label", "p", "n", "delta", "v_minus", "v_plus",
    "count_T", "count_T_filtered", "class_log_measure", "g_window_log_measure", "integrand",
    "M_value", "stderr", "mode_flags", "samples", "seed",
]
CURVE_COLUMNS = ["experiment_id", "p", "delta", "n", "M_value", "stderr", "mode_flags",
                 "clamp_count", "samples", "seed"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment_id: str
    rule: LocalRule
    measure: MeasureModel
    p: list
    n: list
    delta: list
    velocity: VelocitySpec
    samples: int
    seed: int
    out: Path
    mode: str = "exact-first"
    budget: int = DEFAULT_BUDGET
    entropy_samples: int = 8
    mc_samples: int = 4096
    workers: int = 1
    theorems: list = field(default_factory=lambda: ["t1", "t2i"])
    classify: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


def _int_list(raw, name) -> list[int]:
    if raw is None:
        raise ConfigError(f"'{name}' grid is required")
    vals = raw if isinstance(raw, (list, tuple)) else [raw]
    try:
        out = [int(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{name}' must be integers") from exc
    if not out:
        raise ConfigError(f"'{name}' grid is empty")
    return out


def _rule_from(cfg, base: Path) -> LocalRule:
    if isinstance(cfg, str):
        try:
            return lookup(cfg).rule()
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    if isinstance(cfg, Mapping) and "file" in cfg:
        path = Path(cfg["file"])
        return read_rule(path if path.is_absolute() else base / path)
    if isinstance(cfg, Mapping) and "catalog" in cfg:
        return _rule_from(str(cfg["catalog"]), base)
    raise ConfigError("rule must be a catalog name or {file: path}")


def _measure_from(cfg, rule: LocalRule) -> MeasureModel:
    if cfg is None:
        names = lookup(rule.label).measures if rule.label in catalog_entries() else ()
        if not names:
            raise ConfigError("measure is required")
        cfg = names[0]
    if isinstance(cfg, str):
        try:
            m = get_measure(cfg)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        m = measure_from_config(cfg)
    if m.k != rule.k:
        raise ConfigError(f"measure alphabet {m.k} does not match rule alphabet {rule.k}")
    return m


def load_config(path: Path, seed: Optional[int] = None, budget: Optional[int] = None,
                out: Optional[Path] = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    return config_from_mapping(raw, Path(path).parent, seed, budget, out)


def config_from_mapping(raw: Mapping[str, Any], base: Path = Path("."), seed=None, budget=None,
                        out=None) -> ExperimentConfig:
    try:
        rule = _rule_from(raw.get("rule"), base)
        measure = _measure_from(raw.get("measure"), rule)
        if seed is None:
            seed = raw.get("seed")
        if seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        velocity = velocity_from_config(raw.get("velocity", {"type": "linear", "v_minus": rule.radius,
                                                             "v_plus": rule.radius}))
        deltas = [float(v) for v in (raw.get("delta") or [0.25])]
        mode = str(raw.get("mode", "exact-first"))
        if mode not in ("exact-first", "exact-only", "mc-only"):
            raise ConfigError(f"unknown mode {mode!r}")
        out_dir = Path(out if out is not None else raw.get("out", "results"))
        if not out_dir.is_absolute() and out is None:
            out_dir = base / out_dir
        cfg = ExperimentConfig(
            experiment_id=str(raw.get("experiment_id", rule.label)),
            rule=rule,
            measure=measure,
            p=_int_list(raw.get("p", [0, 1, 2, 3]), "p"),
            n=_int_list(raw.get("n"), "n"),
            delta=deltas,
            velocity=velocity,
            samples=int(raw.get("samples", 8)),
            seed=int(seed),
            out=out_dir,
            mode=mode,
            budget=int(budget if budget is not None else raw.get("budget", DEFAULT_BUDGET)),
            entropy_samples=int(raw.get("entropy_samples", raw.get("samples", 8))),
            mc_samples=int(raw.get("mc_samples", 4096)),
            workers=int(raw.get("workers", 1)),
            theorems=[str(t).lower() for t in raw.get("theorems", ["t1", "t2i"])],
            classify=dict(raw.get("classify") or {}),
            base_dir=base,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if any(b <= a for a, b in zip(cfg.n, cfg.n[1:])) or min(cfg.n) < 1:
        raise ConfigError("n grid must be positive and increasing")
    if not cfg.delta or any(not 0 < d < 1 for d in cfg.delta):
        raise ConfigError("delta grid must be non-empty with values in (0, 1)")
    if any(b >= a for a, b in zip(cfg.delta, cfg.delta[1:])):
        raise ConfigError("delta grid must be decreasing")
    if min(cfg.p) < 0 or cfg.samples < 1 or cfg.budget < 1:
        raise ConfigError("p, samples and budget must be non-negative / positive")
    bad = [t for t in cfg.theorems if t not in ("t1", "t2i", "t2ii", "t2iii")]
    if bad:
        raise ConfigError(f"unknown theorem selectors {bad}")
    return cfg


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows, reproducible: bool) -> None:
    buf = io.StringIO()
    if not reproducible:
        buf.write(f"# generated {_stamp()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue())


def _write_json(path: Path, payload: dict, reproducible: bool) -> None:
    if not reproducible:
        payload = {"generated": _stamp(), **payload}
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flow_kwargs(cfg: ExperimentConfig) -> dict:
    return {"budget": cfg.budget, "mode": cfg.mode, "mc_samples": cfg.mc_samples}


def _mode_flags(est) -> str:
    flags = [est.mode]
    if est.lower_bound:
        flags.append("count_lower_bound")
    if est.clamp_count:
        flags.append(f"clamped{est.clamp_count}")
    return "|".join(flags)


def run_experiment(cfg: ExperimentConfig, reproducible: bool = False) -> dict:
    out = _prepare_out(cfg.out)
    flow = flow_grid(cfg.rule, cfg.measure, cfg.p, cfg.n, cfg.delta, cfg.velocity, cfg.samples,
                     cfg.seed, cfg.workers, **_flow_kwargs(cfg))
    vm, vp = cfg.velocity.describe()
    rows, curve_rows = [], []
    for (p, d), curve in flow.curves.items():
        for est in curve:
            flags = _mode_flags(est)
            for pt in est.points:
                rows.append({
                    "experiment_id": cfg.experiment_id, "rule_label": cfg.rule.label,
                    "measure_label": cfg.measure.label, "p": p, "n": est.n, "delta": d,
                    "v_minus": vm if not isinstance(cfg.velocity, Pointwise) else pt.G[0],
                    "v_plus": vp if not isinstance(cfg.velocity, Pointwise) else pt.G[1],
                    "count_T": pt.count_T, "count_T_filtered": pt.count_T_filtered,
                    "class_log_measure": pt.class_log_measure,
                    "g_window_log_measure": pt.g_window_log_measure,
                    "integrand": pt.integrand, "M_value": est.M_value, "stderr": est.stderr,
                    "mode_flags": flags, "samples": est.samples, "seed": est.seed,
                })
            curve_rows.append({
                "experiment_id": cfg.experiment_id, "p": p, "delta": d, "n": est.n,
                "M_value": est.M_value, "stderr": est.stderr, "mode_flags": flags,
                "clamp_count": est.clamp_count, "samples": est.samples, "seed": est.seed,
            })
    _write_csv(out / "results.csv", RESULT_COLUMNS, rows, reproducible)
    _write_csv(out / "curves.csv", CURVE_COLUMNS, curve_rows, reproducible)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    hF = entropy_F_estimate(cfg.rule, cfg.measure, max(cfg.p), cfg.n, cfg.entropy_samples, rng,
                            cfg.budget)
    summary = {
        "experiment_id": cfg.experiment_id,
        "rule": cfg.rule.label,
        "measure": cfg.measure.label,
        "seed": cfg.seed,
        "velocity": list(cfg.velocity.describe()),
        "grids": {"p": cfg.p, "n": cfg.n, "delta": cfg.delta},
        "M_tail": flow.M_value,
        "M_tail_stderr": flow.stderr,
        "M_tail_p": flow.p_star,
        "M_extrapolated": flow.M_extrapolated,
        "M_extrapolated_p": flow.p_star_extrapolated,
        "fits": {f"p={p},delta={d}": vars(f) for (p, d), f in flow.fits.items() if f},
        "mode": flow.mode,
        "clamp_count": flow.clamp_count,
        "h_shift": shift_entropy(cfg.measure),
        "h_F": {"value": hF.value, "stderr": hF.stderr, "extrapolated": hF.extrapolated,
                "p": hF.p, "sequence": list(hF.sequence), "method": hF.method},
        "theorems": [],
    }
    failed = False
    for i, sel in enumerate(cfg.theorems):
        rep = _verify(cfg, sel, np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, i])))
        summary["theorems"].append(rep.to_dict())
        failed |= not rep.passed
    summary["theorems_passed"] = not failed
    _write_json(out / "theorems.json", summary, reproducible)
    return summary


def _verify(cfg: ExperimentConfig, theorem: str, rng):
    if theorem == "t1":
        return verify_theorem1(cfg.rule, cfg.measure, cfg.n, max(cfg.p), cfg.entropy_samples, rng,
                               budget=cfg.budget)
    velocity = cfg.velocity
    if theorem != "t2iii" and isinstance(velocity, Pointwise):
        velocity = Linear(cfg.rule.radius, cfg.rule.radius)
    return verify_theorem2(cfg.rule, cfg.measure, velocity, cfg.p, cfg.n, cfg.delta, cfg.samples,
                           rng, theorem[2:], entropy_samples=cfg.entropy_samples,
                           workers=cfg.workers, **_flow_kwargs(cfg))


# ------------------------------------------------------------ commands


def cmd_catalog(args) -> int:
    rows = []
    for e in catalog_entries().values():
        rows.append({"name": e.name, "k": e.k, "r": e.radius, "tags": list(e.tags),
                     "measures": list(e.measures), "note": e.note})
    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        for r in rows:
            tags = ",".join(r["tags"]) or "-"
            print(f"{r['name']:<14} k={r['k']} r={r['r']} {tags:<16} {','.join(r['measures'])}")
    return EXIT_OK


def _cfg(args) -> ExperimentConfig:
    return load_config(Path(args.config), args.seed, args.budget,
                       Path(args.out) if args.out else None)


def cmd_run(args) -> int:
    cfg = _cfg(args)
    summary = run_experiment(cfg, args.reproducible)
    print(f"M tail {summary['M_tail']:.6g} (p={summary['M_tail_p']}), "
          f"extrapolated {summary['M_extrapolated']}, results in {cfg.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _cfg(args)
    out = _prepare_out(cfg.out)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    rep = _verify(cfg, args.theorem, rng)
    _write_json(out / f"theorem_{args.theorem}.json", rep.to_dict(), args.reproducible)
    status = "PASS" if rep.passed else "FAIL"
    print(f"{rep.theorem}: lhs={rep.lhs:.6g} {rep.relation} rhs={rep.rhs:.6g} "
          f"(margin {rep.margin:.3g}, tol {rep.tolerance:.3g}) {status}")
    for w in rep.warnings:
        print(f"  warning: {w}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_classify(args) -> int:
    cfg = _cfg(args)
    out = _prepare_out(cfg.out)
    c = cfg.classify
    params = ClassifyParams(
        n=c.get("n"),
        horizons=tuple(int(v) for v in c.get("horizons", (2, 4, 8, 16))),
        points=int(c.get("points", 8)),
        samples=int(c.get("samples", 2000)),
        budget=cfg.budget,
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    rep = classify(cfg.rule, cfg.measure, params, rng, cfg.seed)
    _write_json(out / "classification.json", rep.to_dict(), args.reproducible)
    print(f"{cfg.rule.label} / {cfg.measure.label}: {rep.label}")
    return EXIT_OK


def cmd_oracle_suite(args) -> int:
    from .oracle import differential_suite

    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    rep = differential_suite(args.instances, rng, mc_samples=args.mc_samples)
    rep.seed_entropy = seed
    payload = rep.to_dict()
    if args.out:
        out = _prepare_out(Path(args.out))
        _write_json(out / "oracle_suite.json", payload, args.reproducible)
    print(f"{rep.instances} instances, {len(rep.exact_mismatches)} exact mismatches, "
          f"MC within 4 sigma on {rep.mc_fraction:.1%}")
    for line in rep.exact_mismatches[:20]:
        print("  " + line)
    return EXIT_OK if rep.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--reproducible", action="store_true",
                        help="omit timestamps so repeated runs are byte-identical")
    common.add_argument("--budget", type=int, default=None, help="DP state budget")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="caflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("catalog", parents=[common], help="list built-in rules and measures")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_catalog)
    p = sub.add_parser("run", parents=[common], help="run a flow experiment")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", parents=[common], help="check one entropy theorem")
    p.add_argument("config")
    p.add_argument("--theorem", required=True, choices=["t1", "t2i", "t2ii", "t2iii"])
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("oracle-suite", parents=[common], help="oracle vs DP vs Monte Carlo")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--mc-samples", type=int, default=4000)
    p.set_defaults(func=cmd_oracle_suite)
    p = sub.add_parser("classify", parents=[common], help="stability evidence labels")
    p.add_argument("config")
    p.set_defaults(func=cmd_classify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        # inputs that pass parsing but cannot be evaluated, e.g. an empty window
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
