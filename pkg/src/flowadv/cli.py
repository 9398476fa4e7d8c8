"""Command-line interface.

Subcommands: synth, ingest, split, train, attack, transfer, defend, report.
The study commands take a plan file (JSON) plus flag overrides.  Exit codes:
0 success, 1 plan/config error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .attack import AttackConfig, compute_stats, craft_batch, perturbation_report
from .data import (
    BENIGN,
    MALICIOUS,
    LabeledDataset,
    family_params,
    fit_scaler,
    load_csv,
    partition,
    save_csv,
    synth_generate,
    write_split,
)
from .errors import ConfigError, DataError, FlowAdvError, SchemaError
from .experiments import (
    ExperimentPlan,
    build_family,
    load_plan,
    run_botnet_campaign,
    run_defense_eval,
    run_transfer_study,
    stage_seed,
)
from .models import evaluate, load_model, preset, save_model, train
from .reporting import emit_report
from .schema import FeatureBounds, default_schema, load_schema

EXIT_OK = 0
EXIT_PLAN = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def _schema_from(args):
    return load_schema(args.schema) if getattr(args, "schema", None) else default_schema()


def _resolve_plan(args) -> ExperimentPlan:
    plan = load_plan(args.plan) if args.plan else ExperimentPlan()
    overrides = {}
    for key in ("seed", "flows_per_side", "n_attack_instances", "output_dir",
                "transfer_family", "method", "c", "t_max"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "families", None):
        overrides["families"] = tuple(args.families.split(","))
    if getattr(args, "reset_per_mask", False):
        overrides["cumulative"] = False
    return replace(plan, **overrides) if overrides else plan


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synth(args) -> int:
    schema = _schema_from(args)
    params = family_params(args.family, args.n_benign, args.n_malicious)
    ds = synth_generate(params, args.seed, schema)
    save_csv(ds, args.out)
    print(f"wrote {len(ds)} rows ({args.family}) to {args.out}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    schema = _schema_from(args)
    ds = load_csv(args.csv, schema)
    save_csv(ds, args.out)
    report = ds.report
    print(
        f"kept {report.rows_kept}/{report.rows_read} rows "
        f"(missing {report.dropped_missing}, rejected {report.rejected_unparseable}, "
        f"ratio fixes {report.ratio_rewrites})"
    )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.__dict__, fh, indent=2, sort_keys=True)
    return EXIT_OK


def _cmd_split(args) -> int:
    schema = _schema_from(args)
    ds = load_csv(args.csv, schema)
    bundle = partition(ds, args.seed)
    write_split(bundle, args.outdir)
    sizes = {k: len(v) for k, v in bundle.parts().items()}
    print(f"split written to {args.outdir}: {sizes}")
    return EXIT_OK


def _cmd_train(args) -> int:
    schema = _schema_from(args)
    train_ds = load_csv(args.train_csv, schema)
    scaler = fit_scaler(train_ds)
    scaled = LabeledDataset(scaler.transform(train_ds.x), train_ds.y, schema,
                            train_ds.source)
    os.makedirs(args.outdir, exist_ok=True)
    summary = {}
    for kind in args.kinds.split(","):
        model = train(kind, preset(args.side, kind), scaled,
                      stage_seed(args.seed, f"cli/train/{args.side}/{kind}"),
                      side=args.side, scaler=scaler)
        path = os.path.join(args.outdir, f"{args.side}_{kind}.npz")
        save_model(model, path)
        summary[kind] = {"path": path}
        if args.test_csv:
            test_ds = load_csv(args.test_csv, schema)
            _, m = evaluate(model, test_ds)
            summary[kind]["metrics"] = {
                "recall": m.recall, "precision": m.precision, "f1": m.f1
            }
            print(f"{kind}: recall={m.recall:.4f} precision={m.precision:.4f} "
                  f"f1={m.f1:.4f}")
    with open(os.path.join(args.outdir, "train_manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"seed": args.seed, "side": args.side, "models": summary},
                  fh, indent=2, sort_keys=True)
    return EXIT_OK


def _cmd_attack(args) -> int:
    schema = _schema_from(args)
    reference = load_csv(args.data, schema)
    surrogate = load_model(args.surrogate)
    stats = compute_stats(reference.only(BENIGN), reference.only(MALICIOUS))
    bounds = FeatureBounds.from_data(schema, reference.x)
    instances = load_csv(args.instances, schema) if args.instances else reference
    pool = instances.only(MALICIOUS).x
    if args.limit:
        pool = pool[: args.limit]
    config = AttackConfig(method=args.method, c=args.c, t_max=args.t_max,
                          cumulative=not args.reset_per_mask, seed=args.seed)
    results, timing = craft_batch(pool, surrogate, schema, bounds, stats, config)

    os.makedirs(args.outdir, exist_ok=True)
    adv = np.array([r.adversarial for r in results])
    adv_ds = LabeledDataset(adv, np.full(len(results), MALICIOUS), schema, "adversarial")
    save_csv(adv_ds, os.path.join(args.outdir, "adversarial.csv"))
    report = perturbation_report((pool, adv), schema)
    summary = {
        "n": len(results),
        "evasion_rate": float(np.mean([r.evaded for r in results])) if results else 0.0,
        "mean_iterations": float(np.mean([r.iterations for r in results])) if results else 0.0,
        "config": {"method": config.method, "c": config.c, "t_max": config.t_max,
                   "cumulative": config.cumulative, "seed": config.seed},
        "timing": timing.to_dict(),
        "perturbation": report.to_dict(),
    }
    with open(os.path.join(args.outdir, "attack_summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"crafted {summary['n']} instances, evasion rate "
          f"{summary['evasion_rate']:.3f}; outputs in {args.outdir}")
    return EXIT_OK


def _cmd_transfer(args) -> int:
    plan = _resolve_plan(args)
    artifacts = {
        family: build_family(plan, family,
                             include_same_hyper=(family == plan.transfer_family))
        for family in plan.families
    }
    transfer = run_transfer_study(plan, artifacts[plan.transfer_family])
    campaign = run_botnet_campaign(plan, artifacts)
    emit_report(transfer, plan.output_dir)
    emit_report(campaign, plan.output_dir)
    avg = transfer["matrices"]["defender_diff_hyper"]["average"]
    print(f"transfer study + campaign written to {plan.output_dir} "
          f"(defender matrix average {avg:.3f})")
    return EXIT_OK


def _cmd_defend(args) -> int:
    plan = _resolve_plan(args)
    results = run_defense_eval(plan)
    emit_report(results, plan.output_dir)
    avg = results["averages"]
    print(f"defense evaluation written to {plan.output_dir} "
          f"(detector {avg['detector']:.3f}, protected {avg['protected']:.3f})")
    return EXIT_OK


def _cmd_report(args) -> int:
    if not os.path.exists(args.results):
        raise DataError(f"no such results file: {args.results}")
    with open(args.results, "r", encoding="utf-8") as fh:
        results = json.load(fh)
    paths = emit_report(results, args.outdir)
    print(f"re-rendered {len(paths)} artifacts into {args.outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--plan", help="plan JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--families", help="comma-separated family list")
    p.add_argument("--transfer-family", dest="transfer_family", default=None)
    p.add_argument("--flows-per-side", dest="flows_per_side", type=int, default=None)
    p.add_argument("--n-instances", dest="n_attack_instances", type=int, default=None)
    p.add_argument("--method", choices=("mean_diff", "mean_ratio"), default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--t-max", dest="t_max", type=int, default=None)
    p.add_argument("--reset-per-mask", action="store_true")
    p.add_argument("--output-dir", dest="output_dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowadv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic flow CSV")
    p.add_argument("--family", default="neris")
    p.add_argument("--n-benign", type=int, default=2000)
    p.add_argument("--n-malicious", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="load, clean, and rewrite a flow CSV")
    p.add_argument("csv")
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="attacker/defender stratified partition")
    p.add_argument("csv")
    p.add_argument("--schema")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train one side's models from a CSV")
    p.add_argument("--train-csv", required=True)
    p.add_argument("--test-csv")
    p.add_argument("--schema")
    p.add_argument("--side", choices=("attacker", "defender"), required=True)
    p.add_argument("--kinds", default="mlp,rf,knn")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="craft adversarial flows with a surrogate")
    p.add_argument("--data", required=True,
                   help="labeled CSV supplying sniffed stats and bounds")
    p.add_argument("--instances", help="CSV of flows to perturb (default: --data)")
    p.add_argument("--surrogate", required=True, help="saved surrogate model (.npz)")
    p.add_argument("--schema")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--method", choices=("mean_diff", "mean_ratio"),
                   default="mean_diff")
    p.add_argument("--c", type=float, default=0.1)
    p.add_argument("--t-max", dest="t_max", type=int, default=100)
    p.add_argument("--reset-per-mask", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("transfer", help="run the transferability study + campaign")
    _add_plan_flags(p)
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("defend", help="run the defense evaluation")
    _add_plan_flags(p)
    p.set_defaults(func=_cmd_defend)

    p = sub.add_parser("report", help="re-render reports from a results JSON")
    p.add_argument("--results", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FlowAdvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
