"""Command-line entry point binding every module.

Subcommands: value, bounds, choose, ingest, analyze, fit, generate, simulate.
Record-shaped data travels as CSV, configs and results as JSON (stdout when
--out is omitted on JSON-producing commands). Diagnostics go to stderr. Every
run emits a manifest with sha256 digests of its inputs and outputs: written
to `<out stem>.manifest.json` next to the output, or as one JSON line on
stderr when the result went to stdout. Report-shaped outputs (value, bounds,
analyze, fit) also render a `<out stem>.png` figure unless --no-plot.

Exit codes: 0 success; 1 validation, domain, or data-integrity problems
(including bad flags); 2 capacity cap exceeded; 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timedelta
from pathlib import Path

from . import __version__
from .attention import attention_from_obj, full_attention
from .choice import argmax_choice, general_coupon_prob, mixture_prob, spec_from_obj
from .coupon_core import coupon_set_from_obj, enumerate_awareness_subsets
from .data_pipeline import (
    build_dataset,
    read_coupons_csv,
    read_orders_csv,
    redemption_ratio_curve,
    write_curve_csv,
)
from .errors import (
    CapacityError,
    DomainError,
    IntegrityError,
    NumericError,
    ValidationError,
)
from .estimation import FitConfig, fit, fit_result_to_obj, read_dataset, write_dataset
from .simulator import (
    generate_dataset,
    scenario_from_obj,
    sim_config_from_obj,
    sim_result_to_obj,
    simulate_promotion,
)
from .value_engine import (
    McConfig,
    SelectionRateModel,
    TravelerProfile,
    default_chain,
    delta_value,
    value_bounds,
    value_hat,
    value_hat_many,
)

AXES = {"ratio": "fare_value_ratio", "quantity": "coupon_quantity"}


class _Parser(argparse.ArgumentParser):
    # spec'd exit code for bad flags is 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _mc(args) -> McConfig:
    mc_seed = args.mc_seed if args.mc_seed is not None else _seed(args)
    return McConfig(samples=args.samples, seed=mc_seed)


def _emit_json(obj, out):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _manifest(args, inputs, outputs):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func",) and not k.startswith("_")}
    obj = {
        "subcommand": args.subcommand,
        "version": __version__,
        "seed": _seed(args),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if args.out is None:
        sys.stderr.write(json.dumps(obj, sort_keys=True) + "\n")
    else:
        stem = Path(args.out).with_suffix("")
        Path(f"{stem}.manifest.json").write_text(
            json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _require_out(args):
    if args.out is None:
        raise ValidationError(f"{args.subcommand} writes CSV; --out is required")


def _figure_path(args):
    if args.out is None or args.no_plot:
        return None
    return Path(args.out).with_suffix("").as_posix() + ".png"


def _group_label(g) -> str:
    return f"v={g.v:g},T={g.T}"


# ----------------------------------------------------------- subcommands

def _run_value(args):
    _require_out(args)
    C = coupon_set_from_obj(_load_json(args.set))
    profile = TravelerProfile(args.lambda_hat, args.mu, args.sigma)
    table = value_hat(C, profile, _mc(args))
    rows = sorted(((S.horizon, S.key_str(), val)
                   for S, val in table.entries.items()))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("state", "horizon", "value"))
        for horizon, key, val in rows:
            writer.writerow((key, horizon, repr(val)))
    outputs = [args.out]
    fig = _figure_path(args)
    if fig:
        from .report import save_value_figure
        chain = [table.value(S) for S in default_chain(C, C.horizon)]
        save_value_figure(fig, [(k, h, v) for h, k, v in rows], chain)
        outputs.append(fig)
    _manifest(args, [args.set], outputs)


def _run_bounds(args):
    _require_out(args)
    C = coupon_set_from_obj(_load_json(args.set))
    # the envelope takes its rates from sel; profile only supplies fares
    profile = TravelerProfile(args.lambda0, args.mu, args.sigma)
    sel = SelectionRateModel(args.lambda0, args.kappa)
    lower, upper = value_bounds(C, profile, sel, _mc(args))
    rows = sorted(((S.horizon, S.key_str(), lower.value(S), upper.value(S))
                   for S in lower.entries))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("state", "horizon", "lower", "upper"))
        for horizon, key, lo, up in rows:
            writer.writerow((key, horizon, repr(lo), repr(up)))
    outputs = [args.out]
    fig = _figure_path(args)
    if fig:
        from .report import save_bounds_figure
        chain = default_chain(C, C.horizon)
        steps = list(range(len(chain)))
        horizon = max(C.horizon, 1)
        deltas = {
            _group_label(g): (delta_value(lower, C, g, horizon),
                              delta_value(upper, C, g, horizon))
            for g in C.non_default
        }
        save_bounds_figure(fig, steps, [lower.value(S) for S in chain],
                           [upper.value(S) for S in chain], deltas)
        outputs.append(fig)
    _manifest(args, [args.set], outputs)


def _run_choose(args):
    spec = spec_from_obj(_load_json(args.spec))
    C = coupon_set_from_obj(_load_json(args.set))
    profile = TravelerProfile(args.lambda_hat, args.mu, args.sigma)
    mc = _mc(args)
    inputs = [args.spec, args.set]
    if spec.unaware:
        if args.attention is None:
            raise ValidationError("an unaware spec needs --attention flags")
        S_a = attention_from_obj(_load_json(args.attention))
        inputs.append(args.attention)
        roots = enumerate_awareness_subsets(
            C, group_level=spec.awareness_mode == "group_level")
        table = value_hat_many(roots, profile, mc)
        dist = mixture_prob(spec, C, S_a, args.fare, table)
    else:
        table = value_hat(C, profile, mc)
        dist = general_coupon_prob(spec, C, args.fare, table)
    probs = {("default" if g.is_default else _group_label(g)): p
             for g, p in dist.items()}
    best = argmax_choice(dist)
    obj = {"probabilities": probs,
           "argmax": "default" if best.is_default else _group_label(best)}
    _emit_json(obj, args.out)
    outputs = [args.out] if args.out else []
    _manifest(args, inputs, outputs)


def _parse_date(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"bad date {text!r}: {exc}") from exc


def _run_ingest(args):
    _require_out(args)
    orders = read_orders_csv(args.orders)
    coupons = read_coupons_csv(args.coupons)
    records, report = build_dataset(
        orders, coupons,
        window_start=_parse_date(args.window_from),
        window_end=_parse_date(args.window_to),
        day_unit=timedelta(hours=args.day_hours),
    )
    write_dataset(args.out, records)
    for warning in report.warnings:
        sys.stderr.write(f"warning: {warning}\n")
    sys.stderr.write(json.dumps(report.to_obj() | {"records": len(records)},
                                sort_keys=True) + "\n")
    _manifest(args, [args.orders, args.coupons], [args.out])


def _run_analyze(args):
    _require_out(args)
    records = read_dataset(args.data)
    axis = AXES[args.axis]

    def split(text):
        return tuple(float(q) for q in text.split(",")) if text else None

    rows = redemption_ratio_curve(
        records, axis,
        single_coupon=args.single_coupon,
        require_activated=args.require_activated,
        require_value_le_fare=args.require_value_le_fare,
        experience_quantiles=split(args.experience_quantiles),
        experience_segment=args.experience_segment,
        frequency_quantiles=split(args.frequency_quantiles),
        frequency_segment=args.frequency_segment,
    )
    write_curve_csv(args.out, axis, rows)
    outputs = [args.out]
    fig = _figure_path(args)
    if fig and rows:
        from .report import save_curve_figure
        save_curve_figure(fig, axis, rows)
        outputs.append(fig)
    _manifest(args, [args.data], outputs)


def _run_fit(args):
    records = read_dataset(args.data)
    template = spec_from_obj(_load_json(args.template))
    config = FitConfig(learning_rate=args.lr, batch_size=args.batch,
                       epochs=args.epochs, seed=_seed(args),
                       weighting=args.weighting,
                       awareness_cap=args.awareness_cap)
    free = tuple(args.free.split(",")) if args.free else None
    result = fit(records, template, config, free=free, mc=_mc(args),
                 threads=args.threads)
    _emit_json(fit_result_to_obj(result), args.out)
    outputs = [args.out] if args.out else []
    fig = _figure_path(args)
    if fig and result.history:
        from .report import save_history_figure
        save_history_figure(fig, result.history, result.best_epoch)
        outputs.append(fig)
    _manifest(args, [args.data, args.template], outputs)


def _run_generate(args):
    _require_out(args)
    bundle = _load_json(args.spec)
    if not isinstance(bundle, dict):
        raise ValidationError("generator spec must be a JSON object")
    try:
        spec = spec_from_obj(bundle["spec"])
        profiles = [TravelerProfile(float(lam), float(mu), float(sig))
                    for lam, mu, sig in bundle["profiles"]]
        scenario = scenario_from_obj(bundle["scenario"])
    except KeyError as exc:
        raise ValidationError(f"generator spec is missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad generator spec: {exc}") from exc
    mc = McConfig(samples=int(bundle.get("mc_samples", 10_000)),
                  seed=int(bundle.get("mc_seed", 0)))
    records = generate_dataset(spec, profiles, scenario, args.n, _seed(args), mc)
    write_dataset(args.out, records)
    _manifest(args, [args.spec], [args.out])


def _run_simulate(args):
    config = sim_config_from_obj(_load_json(args.config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.attention_full:
        config = replace(config,
                         initial_attention=full_attention(config.coupon_set))
    result = simulate_promotion(config)
    _emit_json(sim_result_to_obj(result), args.out)
    _manifest(args, [args.config], [args.out] if args.out else [])


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="couponmdp",
                     description="coupon portfolio values, redemption models, "
                                 "and promotion simulation")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default 0; simulate: overrides config)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default=None, help="output path")
        p.add_argument("--no-plot", action="store_true",
                       help="skip the companion PNG figure")

    def fare_flags(p):
        p.add_argument("--mu", type=float, required=True, help="log-fare mean")
        p.add_argument("--sigma", type=float, required=True, help="log-fare sd")

    def profile_flags(p):
        p.add_argument("--lambda", dest="lambda_hat", type=float, required=True,
                       help="daily trip rate")
        fare_flags(p)

    def mc_flags(p):
        p.add_argument("--samples", type=int, default=10_000,
                       help="Monte Carlo fare draws per state")
        p.add_argument("--mc-seed", type=int, default=None,
                       help="table-build seed (default: --seed)")

    p = sub.add_parser("value", help="portfolio value table for a coupon set")
    p.add_argument("--set", required=True, help="coupon set JSON")
    profile_flags(p)
    mc_flags(p)
    common(p)
    p.set_defaults(func=_run_value)

    p = sub.add_parser("bounds", help="optimal-value envelope for a coupon set")
    p.add_argument("--set", required=True)
    fare_flags(p)
    p.add_argument("--lambda0", type=float, required=True,
                   help="wallet-blind selection rate")
    p.add_argument("--kappa", type=float, required=True,
                   help="log-odds slope of the trip rate in the coupon gain")
    mc_flags(p)
    common(p)
    p.set_defaults(func=_run_bounds)

    p = sub.add_parser("choose", help="choice probabilities for one trip")
    p.add_argument("--spec", required=True, help="choice model JSON")
    p.add_argument("--set", required=True)
    p.add_argument("--attention", default=None, help="activation flags JSON")
    p.add_argument("--fare", type=float, required=True)
    profile_flags(p)
    mc_flags(p)
    common(p)
    p.set_defaults(func=_run_choose)

    p = sub.add_parser("ingest", help="reconstruct estimation records from logs")
    p.add_argument("--orders", required=True)
    p.add_argument("--coupons", required=True)
    p.add_argument("--from", dest="window_from", required=True,
                   help="window start (ISO date)")
    p.add_argument("--to", dest="window_to", required=True,
                   help="window end (ISO date, exclusive)")
    p.add_argument("--day-hours", type=int, default=24,
                   help="hours per aging step")
    common(p)
    p.set_defaults(func=_run_ingest)

    p = sub.add_parser("analyze", help="redemption-ratio curves")
    p.add_argument("--data", required=True, help="estimation CSV")
    p.add_argument("--axis", choices=sorted(AXES), required=True)
    p.add_argument("--single-coupon", action="store_true")
    p.add_argument("--require-activated", action="store_true")
    p.add_argument("--require-value-le-fare", action="store_true")
    p.add_argument("--experience-quantiles", default=None,
                   help="comma-separated quantiles in (0,1)")
    p.add_argument("--experience-segment", type=int, default=None)
    p.add_argument("--frequency-quantiles", default=None)
    p.add_argument("--frequency-segment", type=int, default=None)
    common(p)
    p.set_defaults(func=_run_analyze)

    p = sub.add_parser("fit", help="maximum-likelihood fit of a choice model")
    p.add_argument("--data", required=True)
    p.add_argument("--template", required=True,
                   help="starting choice model JSON")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--weighting", default="uniform",
                   choices=("uniform", "face_value_rebalanced"))
    p.add_argument("--free", default=None,
                   help="comma-separated parameter names to optimize")
    p.add_argument("--awareness-cap", type=int, default=64)
    mc_flags(p)
    common(p)
    p.set_defaults(func=_run_fit)

    p = sub.add_parser("generate", help="synthetic estimation records")
    p.add_argument("--spec", required=True,
                   help="JSON bundle: spec, profiles, scenario")
    p.add_argument("--n", type=int, required=True)
    common(p)
    p.set_defaults(func=_run_generate)

    p = sub.add_parser("simulate", help="promotional-effect simulation")
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--attention-full", action="store_true",
                   help="start with every activation flag on")
    common(p)
    p.set_defaults(func=_run_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    except (ValidationError, DomainError, IntegrityError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except CapacityError as exc:
        sys.stderr.write(f"capacity error: {exc}\n")
        return 2
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
