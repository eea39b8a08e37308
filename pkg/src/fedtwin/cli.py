"""Command-line entry points for the pipeline stages.

    fedtwin synth      --n 1000 --seed 7 --out cohort.cdf.jsonl
    fedtwin harmonize  --cdf cohort.cdf.jsonl --schema configs/profile_schema.json --out bundles.jsonl
    fedtwin flatten    --bundles bundles.jsonl --spec configs/projection_cvd.json --out table.csv
    fedtwin train      --config configs/experiment_synth.json --out-dir runs/demo
    fedtwin report     --run-dir runs/demo
    fedtwin rules test configs/rule_suites
    fedtwin serve      --package runs/demo/package.json --port 8000

Exit status is nonzero whenever a stage reports failures, so every subcommand
is usable as a CI gate.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def _cmd_synth(args) -> int:
    from .cdf import save_cdf
    from .synth import SynthParams, synth_cohort

    params_obj = {}
    if args.params:
        with open(args.params, "r", encoding="utf-8") as fh:
            params_obj = json.load(fh)
    params_obj["n"] = args.n
    params = SynthParams.from_json_obj(params_obj)
    dataset = synth_cohort(params, seed=args.seed)
    save_cdf(dataset, args.out)
    print(f"wrote {len(dataset)} participants to {args.out}")
    return 0


def _cmd_harmonize(args) -> int:
    from .cdf import load_cdf
    from .pairing import standard_rule_catalog
    from .profiles import ProfileSchema, build_bundle, save_bundles, validate

    dataset = load_cdf(args.cdf)
    schema = ProfileSchema.load(args.schema)
    catalog = standard_rule_catalog()
    bundles = []
    violation_count = 0
    for participant in dataset:
        bundle = build_bundle(participant, catalog, schema)
        violations = validate(bundle, schema)
        for v in violations:
            print(f"violation: {v.resource_id} {v.path} [{v.rule}] {v.message}", file=sys.stderr)
        violation_count += len(violations)
        bundles.append(bundle)
    save_bundles(bundles, args.out)
    print(f"wrote {len(bundles)} bundles to {args.out} ({violation_count} violations)")
    return 0 if violation_count == 0 else 1


def _cmd_flatten(args) -> int:
    from .profiles import load_bundles
    from .projection import ProjectionSpec, flatten, save_rejects, save_table

    bundles = load_bundles(args.bundles)
    spec = ProjectionSpec.load(args.spec)
    table, rejects = flatten(bundles, spec)
    save_table(table, args.out)
    rejects_path = args.rejects or (str(args.out) + ".rejects.json")
    save_rejects(rejects, rejects_path)
    print(f"wrote {len(table)} rows to {args.out} ({len(rejects)} rejected, see {rejects_path})")
    return 0


def _cmd_train(args) -> int:
    from .experiment import ExperimentConfig, export_run_package, pipeline_table, run_experiment
    from .projection import ProjectionSpec

    cfg = ExperimentConfig.load(args.config)
    out_dir = Path(args.out_dir) if args.out_dir else Path("runs") / cfg.name
    result = run_experiment(cfg, CONFIG_DIR, out_dir=out_dir, log=print)
    summary = result.summary()
    print(f"global without aggregation: {summary['global']['without_aggregation']['mean']:.4f}")
    print(f"global fedavg (final):      {summary['global']['fedavg']['mean']:.4f}")
    if cfg.dataset_kind == "synth":
        table = pipeline_table(cfg, CONFIG_DIR)
        spec = ProjectionSpec.load(cfg.projection_spec or CONFIG_DIR / "projection_cvd.json")
        package = export_run_package(result, table, spec)
        package_path = out_dir / "package.json"
        package_path.write_bytes(package)
        print(f"exported model package to {package_path}")
    print(f"artifacts under {out_dir}")
    return 0


def _cmd_federate(args) -> int:
    from .experiment import SessionConfig, run_federated_session

    session = SessionConfig.load(args.session)
    weights, history, bounds = run_federated_session(session, CONFIG_DIR, log=print)
    if args.out:
        payload = {"weights": weights.to_json_obj(), "bounds": bounds.to_json_obj()}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        print(f"wrote final weights and bounds to {args.out}")
    print(f"session complete: {len(history)} rounds over {session.transport} transport")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        print(f"no summary.json under {run_dir}", file=sys.stderr)
        return 1
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    width = max(len(k) for k in list(summary) + ["evaluation"])
    print(f"{'evaluation':<{width}}  {'without aggregation':<24}  fedavg (final round)")
    for scope, arms in summary.items():
        cells = []
        for arm in ("without_aggregation", "fedavg"):
            s = arms[arm]
            cells.append(f"{s['mean']:.3f} ({s['ci_low']:.3f}-{s['ci_high']:.3f})")
        print(f"{scope:<{width}}  {cells[0]:<24}  {cells[1]}")
    return 0


def _cmd_rules(args) -> int:
    from .pairing import load_suite_dir, load_suite_file, run_rule_tests, standard_rule_catalog

    if args.rules_command != "test":
        print("usage: fedtwin rules test <suite-dir>", file=sys.stderr)
        return 2
    path = Path(args.suite)
    suite = load_suite_file(path) if path.is_file() else load_suite_dir(path)
    report = run_rule_tests(standard_rule_catalog(), suite)
    for line in report.lines():
        print(line)
    counts = report.counts
    print(
        f"{counts.get('pass', 0)} passed, {counts.get('fail', 0)} failed, "
        f"{counts.get('error', 0)} errors"
    )
    return 0 if report.passed else 1


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.package, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtwin", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort in CDF form")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="JSON file overriding synthesis parameters")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("harmonize", help="CDF -> validated resource bundles")
    p.add_argument("--cdf", required=True)
    p.add_argument("--schema", default=str(CONFIG_DIR / "profile_schema.json"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_harmonize)

    p = sub.add_parser("flatten", help="bundles -> model-ready flat table")
    p.add_argument("--bundles", required=True)
    p.add_argument("--spec", default=str(CONFIG_DIR / "projection_cvd.json"))
    p.add_argument("--out", required=True)
    p.add_argument("--rejects", help="rejects report path (default: <out>.rejects.json)")
    p.set_defaults(func=_cmd_flatten)

    p = sub.add_parser("train", help="run the federated vs isolated experiment")
    p.add_argument("--config", default=str(CONFIG_DIR / "experiment_synth.json"))
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("federate", help="run one federated session from a session config")
    p.add_argument("--session", required=True, help="session JSON (stations, rounds, transport)")
    p.add_argument("--out", help="write final weights + bounds JSON here")
    p.set_defaults(func=_cmd_federate)

    p = sub.add_parser("report", help="print the summary table of a finished run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("rules", help="pairing-rule golden tests")
    p.add_argument("rules_command", choices=["test"])
    p.add_argument("suite", help="suite directory or single JSON file")
    p.set_defaults(func=_cmd_rules)

    p = sub.add_parser("serve", help="serve a model package over HTTP")
    p.add_argument("--package", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
