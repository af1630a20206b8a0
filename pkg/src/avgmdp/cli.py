"""Command-line entry point: ``python -m avgmdp <command> ...``.

Exit codes: 0 on success, 1 on validation errors, 2 when a solver does not
converge. Output is JSON on stdout (or ``--out``); diagnostics go to stderr
as a single line.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import AvgMdpError, SolverError, ValidationError
from .leveling import level, leveled_optimal_pairs
from .lowerbound import (
    RegularizerTriple,
    default_levels,
    policywise_oracle,
    regularized_lower_bound,
    simple_bound,
    vanilla_lower_bound,
)
from .measures import decompose_unichain, is_invariant
from .model import load_model, measure_from_dict, measure_to_dict, model_to_dict
from .solver import solve_optimal
from .structure import diameter_report, gain_gap, worst_diameter

COMMANDS = ("solve", "level", "decompose", "lower-bound", "run", "verify", "bound-check")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _clean(x):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return x


def _labels(model, pairs):
    names = model.pair_labels()
    return [names[int(p)] for p in pairs]


def _nonneg(name, value):
    if value is None:
        return None
    if not (math.isfinite(value) and value >= 0):
        raise ValidationError(f"--{name} must be a finite nonnegative number, got {value}")
    return value


def cmd_solve(args) -> dict:
    model = load_model(args.model)
    report = diameter_report(model)
    if report["witness"] is not None:
        return {"model": model.name, "communicating": False, "diameter": report["diameter"], "witness": report["witness"]}
    sol = solve_optimal(model)
    labels = model.pair_labels()
    return {
        "model": model.name,
        "communicating": True,
        "optimal_gain": sol.opt_gain,
        "bias": {model.state_labels[s]: float(sol.opt_bias[s]) for s in range(model.n_states)},
        "gaps": {labels[p]: float(sol.gaps[p]) for p in range(model.n_pairs)},
        "bias_optimal_policy": _labels(model, sol.choice),
        "weakly_optimal_pairs": _labels(model, sol.weakly_optimal_pairs),
        "optimal_pairs": _labels(model, sol.optimal_pairs),
        "components": [_labels(model, c) for c in sol.components],
        "diameter": report["diameter"],
        "worst_diameter": worst_diameter(model),
        "gain_gap": gain_gap(model),
    }


def cmd_level(args) -> dict:
    if args.epsilon is None:
        raise ValidationError("level needs --epsilon")
    model = load_model(args.model)
    sol = solve_optimal(model, cross_check=False)
    lv = level(model, args.epsilon, sol)
    pairs, comps = leveled_optimal_pairs(model, args.epsilon, sol)
    labels = model.pair_labels()
    return {
        "model": model.name,
        "epsilon": args.epsilon,
        "leveled_reward": {labels[p]: float(lv.leveled_reward[p]) for p in range(model.n_pairs)},
        "bumped_pairs": _labels(model, lv.bumped_pairs),
        "leveled_optimal_pairs": _labels(model, pairs),
        "leveled_components": [_labels(model, c) for c in comps],
        "leveled_model": model_to_dict(lv.model),
    }


def _read_measure(model, spec: str) -> np.ndarray:
    path = Path(spec)
    text = path.read_text() if path.exists() else spec
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--measure is neither a JSON file nor inline JSON ({exc})") from exc
    if isinstance(data, list):
        mu = np.asarray(data, dtype=float)
        if mu.shape != (model.n_pairs,):
            raise ValidationError(f"measure needs {model.n_pairs} entries")
        return mu
    if not isinstance(data, dict):
        raise ValidationError("measure must be a JSON map {\"s,a\": weight} or a list")
    return measure_from_dict(model, data)


def cmd_decompose(args) -> dict:
    if args.measure is None:
        raise ValidationError("decompose needs --measure")
    model = load_model(args.model)
    mu = _read_measure(model, args.measure)
    if not is_invariant(mu, model):
        raise ValidationError("measure is not invariant")
    terms = decompose_unichain(mu, model)
    return {
        "model": model.name,
        "terms": [
            {"coefficient": t.coefficient, "policy": measure_to_dict(model, t.policy.probs),
             "measure": measure_to_dict(model, t.measure), "pairs": _labels(model, t.pairs)}
            for t in terms
        ],
    }


def _solution_json(model, lb) -> dict:
    return {
        "value": lb.value,
        "measure": measure_to_dict(model, lb.measure),
        "cuts": [measure_to_dict(model, c.kl_per_pair) for c in lb.cuts],
        "converged": lb.converged,
        "iterations": lb.iterations,
        "eps_unif_used": lb.eps_unif,
        "clamped": lb.clamped,
        "information": lb.information,
        "upper_value": lb.upper_value,
    }


def cmd_lower_bound(args) -> dict:
    model = load_model(args.model)
    explicit = any(v is not None for v in (args.eflat, args.eunif, args.ereg))
    if explicit and args.levels is None:
        reg = RegularizerTriple(args.eflat or 0.0, args.eunif or 0.0, args.ereg or 0.0)
        lb = regularized_lower_bound(model, reg)
        out = {"model": model.name, "regularizer": vars_triple(reg)}
        out.update(_solution_json(model, lb))
        return out
    n = 6 if args.levels is None else args.levels
    if n < 1:
        raise ValidationError("--levels must be at least 1")
    rep = vanilla_lower_bound(model, default_levels(n))
    out = {"model": model.name, "levels": [vars_triple(r) for r in rep.levels], "values": rep.values,
           "extrapolated": rep.extrapolated, "monotone": rep.monotone}
    out.update(_solution_json(model, rep.solutions[-1]))
    return out


def vars_triple(reg: RegularizerTriple) -> dict:
    return {"eps_flat": reg.eps_flat, "eps_unif": reg.eps_unif, "eps_reg": reg.eps_reg}


def _master_seed() -> int:
    raw = os.environ.get("AVGMDP_SEED", "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"AVGMDP_SEED must be an integer, got {raw!r}") from exc


def cmd_run(args) -> dict:
    from .sim import ExperimentConfig, run_experiment

    if args.config is None:
        raise ValidationError("run needs --config")
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    seeds = raw.get("seeds")
    base = _master_seed()
    if seeds is None:
        raw["seeds"] = [base]
    elif isinstance(seeds, int):
        raw["seeds"] = list(range(base, base + seeds))
    if args.out is not None:
        raw["out_dir"] = args.out
        args.out = None  # the directory receives the traces; the summary goes to stdout
    cfg = ExperimentConfig.from_dict(raw, base_dir=path.parent)
    if args.jobs < 1:
        raise ValidationError("--jobs must be at least 1")
    return run_experiment(cfg, jobs=args.jobs)


def cmd_verify(args) -> dict:
    from .suites import run_suites

    if not 0 < args.scale <= 1:
        raise ValidationError("--scale must be in (0, 1]")
    results = run_suites(args.suite or None, args.scale)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  draws={r.draws} checks={r.checks} "
              f"failures={len(r.failures)}", file=sys.stderr)
    return {"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}


def cmd_bound_check(args) -> dict:
    model = load_model(args.model)
    sol = solve_optimal(model, cross_check=False)
    rep = vanilla_lower_bound(model, sol=sol)
    sb = simple_bound(model)
    out = {"model": model.name, "simple_bound": sb, "lower_bound": rep.value, "extrapolated": rep.extrapolated}
    try:
        oracle = policywise_oracle(model, args.grid, sol)
    except AvgMdpError as exc:
        out.update({"oracle": None, "oracle_error": str(exc)})
        oracle = None
    else:
        out["oracle"] = oracle
    checks = {"nonnegative": rep.value >= -1e-9, "below_simple_bound": rep.value <= sb}
    if oracle is not None:
        checks["below_oracle"] = rep.value <= oracle * 1.05 + 1e-9
        checks["oracle_below_simple_bound"] = oracle <= sb or not math.isfinite(oracle)
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


HANDLERS = {
    "solve": cmd_solve,
    "level": cmd_level,
    "decompose": cmd_decompose,
    "lower-bound": cmd_lower_bound,
    "run": cmd_run,
    "verify": cmd_verify,
    "bound-check": cmd_bound_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="write the JSON output (run: the trace directory) here")
    common.add_argument("--pretty", action="store_true", help="indented JSON")
    with_model = _Parser(add_help=False)
    with_model.add_argument("--model", required=True, help="model JSON file")

    parser = _Parser(prog="avgmdp", description="Average-reward MDP analysis and learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common, with_model], help="gain, bias, gaps, pair classes, diameters")
    p = sub.add_parser("level", parents=[common, with_model], help="leveled rewards at --epsilon")
    p.add_argument("--epsilon", type=float)
    p = sub.add_parser("decompose", parents=[common, with_model], help="unichain terms of an invariant measure")
    p.add_argument("--measure", help="JSON file or inline JSON {\"s,a\": weight}")
    p = sub.add_parser("lower-bound", parents=[common, with_model], help="regularized or vanilla lower bound")
    p.add_argument("--eflat", type=float)
    p.add_argument("--eunif", type=float)
    p.add_argument("--ereg", type=float)
    p.add_argument("--levels", type=int, help="number of default regularization levels")
    p = sub.add_parser("run", parents=[common], help="multi-seed learner experiment")
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("verify", parents=[common], help="randomized property suites")
    p.add_argument("--suite", action="append", choices=["invariant_measures", "deviation_bounds",
                                                         "leveling_robustness", "sandwich"])
    p.add_argument("--scale", type=float, default=1.0, help="fraction of the default draw counts")
    p = sub.add_parser("bound-check", parents=[common, with_model], help="simple bound and sandwich report")
    p.add_argument("--grid", type=float, default=0.05, help="policy grid resolution")
    return parser


def _validate(args) -> None:
    if getattr(args, "epsilon", None) is not None and not (math.isfinite(args.epsilon) and args.epsilon > 0):
        raise ValidationError(f"--epsilon must be positive, got {args.epsilon}")
    for name in ("eflat", "eunif", "ereg"):
        _nonneg(name, getattr(args, name, None))
    grid = getattr(args, "grid", None)
    if grid is not None and not 0 < grid <= 1:
        raise ValidationError("--grid must be in (0, 1]")


def dispatch(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        result = HANDLERS[args.command](args)
        text = json.dumps(_clean(result), indent=2 if args.pretty else None, sort_keys=True)
        if args.out is not None:
            Path(args.out).write_text(text + "\n")
        else:
            stdout.write(text + "\n")
        if args.command == "verify" and not result["passed"]:
            return 1
        return 0
    except SolverError as exc:
        print(f"avgmdp: solver error: {exc}", file=sys.stderr)
        return 2
    except (AvgMdpError, OSError) as exc:
        print(f"avgmdp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
