"""Command-line entry point: dataset collection, training, suites, analysis.

Exit codes: 0 success, 2 configuration error, 3 missing or corrupt artifact,
4 statistics-threshold violation under ``analyze --check``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import adapter as adapter_mod
from . import evaluation, gbdt, loop
from .errors import ConfigError
from .kinematics import default_camera, default_robot, load_camera, load_robot
from .mock_servers import MockVideoServer, MockVlmServer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_CHECK = 4


def _load_configs(args):
    model = load_robot(args.robot) if args.robot else default_robot()
    if args.camera:
        camera = load_camera(args.camera)
    else:
        camera = default_camera()
    return model, camera


def cmd_collect(args) -> int:
    model, camera = _load_configs(args)
    dataset = adapter_mod.collect_dataset(model, camera, n=args.n, seed=args.seed,
                                          visibility_dropout=args.visibility_dropout)
    adapter_mod.save_dataset_csv(args.out, dataset)
    print(f"wrote {len(dataset.samples)} samples to {args.out}")
    return EXIT_OK


def cmd_train_adapter(args) -> int:
    if not Path(args.data).exists():
        print(f"error: dataset not found: {args.data}", file=sys.stderr)
        return EXIT_ARTIFACT
    try:
        dataset = adapter_mod.load_dataset_csv(args.data)
    except (ValueError, IndexError) as exc:
        print(f"error: unreadable dataset {args.data}: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    config = gbdt.GBDTConfig(max_iter=args.max_iter, seed=args.seed)
    model = adapter_mod.fit_adapter(dataset, config, seed=args.seed)
    adapter_mod.save_adapter(args.out, model)
    report_path = str(args.out) + ".report.json"
    with open(report_path, "w") as fh:
        json.dump(model.training_report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for k, mae in enumerate(model.training_report["holdout_mae"]):
        print(f"output {k:2d}: holdout MAE {mae:.4f}")
    print(f"wrote adapter to {args.out} (report: {report_path})")
    return EXIT_OK


def cmd_run_suite(args) -> int:
    if not Path(args.suite).exists():
        print(f"error: suite config not found: {args.suite}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.suite) as fh:
            suite = loop.suite_from_dict(json.load(fh))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: invalid suite config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.adapter:
        suite = loop.SuiteConfig(**{**suite.__dict__, "adapter_path": args.adapter})
    if suite.adapter_path and not Path(suite.adapter_path).exists():
        print(f"error: adapter not found: {suite.adapter_path}", file=sys.stderr)
        return EXIT_ARTIFACT
    results = loop.run_suite(suite, out_dir=args.out, workers=args.workers)
    n_success = sum(r.success for r in results)
    first = sum(r.first_attempt_success for r in results)
    print(f"{n_success}/{len(results)} episodes succeeded "
          f"({first} on the first attempt); traces in {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    anova = {}
    summaries = {}
    curves = {}
    method_table = None

    if args.fixtures is not None:
        try:
            if args.fixtures == "":
                tables = evaluation.load_bundled_tables()
            else:
                base = Path(args.fixtures)
                tables = {
                    "methods": evaluation.load_trial_table(base / "table1_methods.csv"),
                    "platforms": evaluation.load_trial_table(base / "table2_platforms.csv"),
                    "iterative": evaluation.load_trial_table(base / "table3_iterative.csv"),
                }
        except (OSError, ValueError) as exc:
            print(f"error: unreadable fixtures: {exc}", file=sys.stderr)
            return EXIT_ARTIFACT
        anova, summaries, curves = evaluation.analyze_fixtures(tables)
        method_table = tables["methods"]

    if args.traces:
        trace_dir = Path(args.traces)
        paths = sorted(trace_dir.glob("*.jsonl"))
        if not paths:
            print(f"error: no trace files in {args.traces}", file=sys.stderr)
            return EXIT_ARTIFACT
        try:
            episodes = [loop.read_trace(p) for p in paths]
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: corrupt trace: {exc}", file=sys.stderr)
            return EXIT_ARTIFACT
        results = [(e.success, e.attempts_used if e.success else None)
                   for e in episodes]
        summaries["suite"] = evaluation.summary_stats(results)
        curves["suite"] = evaluation.survival_curve(results)

    if not summaries and not anova:
        print("error: nothing to analyze (use --fixtures and/or --traces)",
              file=sys.stderr)
        return EXIT_CONFIG

    written = evaluation.emit_report(args.out, anova, summaries, curves, method_table)
    for path in written:
        print(f"wrote {path}")

    for name, result in sorted(anova.items()):
        print(f"anova[{name}]: F({result.df_between},{result.df_within}) = "
              f"{result.f_statistic:.4f}, p = {result.p_value:.6f}")
    for name, s in sorted(summaries.items()):
        mean = "-" if s.mean_iterations is None else f"{s.mean_iterations:.2f}"
        print(f"summary[{name}]: success {s.success_rate:.2f}, "
              f"first-attempt {s.first_attempt_rate:.2f}, mean iterations {mean}")

    if args.check:
        if not anova:
            print("error: --check needs --fixtures", file=sys.stderr)
            return EXIT_CONFIG
        checks = evaluation.check_paper_statistics(anova, summaries)
        failed = False
        for label, ok, detail in checks:
            print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
            failed = failed or not ok
        if failed:
            return EXIT_CHECK
    return EXIT_OK


def cmd_mock_video(args) -> int:
    server = MockVideoServer(port=args.port)
    print(f"mock video generator listening on {server.url}")
    server.serve_forever()
    return EXIT_OK


def cmd_mock_vlm(args) -> int:
    server = MockVlmServer(port=args.port, reply_text=args.reply)
    print(f"mock reasoner listening on {server.url}")
    server.serve_forever()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physagent",
        description="Desk-scale closed-loop manipulation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect an adapter training dataset")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--robot", default=None)
    p.add_argument("--camera", default=None)
    p.add_argument("--visibility-dropout", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-adapter", help="fit the keypoint-to-command adapter")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_train_adapter)

    p = sub.add_parser("run-suite", help="run closed-loop episodes over a task suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--adapter", default=None,
                   help="adapter model path (default: oracle decoder)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run_suite)

    p = sub.add_parser("analyze", help="statistics over traces and/or fixtures")
    p.add_argument("--traces", default=None)
    p.add_argument("--fixtures", nargs="?", const="", default=None,
                   help="fixtures dir (bare flag uses the bundled tables)")
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true",
                   help="exit 4 unless the published statistics reproduce")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mock-video", help="serve the video-generator wire schema")
    p.add_argument("--port", type=int, default=8731)
    p.set_defaults(func=cmd_mock_video)

    p = sub.add_parser("mock-vlm", help="serve the reasoner wire schema")
    p.add_argument("--port", type=int, default=8732)
    p.add_argument("--reply", default="CONTINUE: mock approval")
    p.set_defaults(func=cmd_mock_vlm)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
