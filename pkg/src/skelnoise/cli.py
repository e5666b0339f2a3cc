"""Command-line entry points for dataset tooling and the training pipeline.

Dataset tools (synth, inject, derive) operate on dataset directories.
Pipeline stages (cross-train, select, fuse, evaluate, ablation) take an
experiment config JSON and reuse on-disk artifacts, so rerunning a later
stage does not retrain earlier ones. `pipeline` runs everything; `report`
renders plots and a combined table from finished runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from skelnoise.data import (
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from skelnoise.harness import (
    ExperimentConfig,
    RunReport,
    emit_plots,
    evaluate,
    run_ablation_suite,
    run_pipeline,
)
from skelnoise.noise import inject_symmetric_noise
from skelnoise.skeleton import Modality, center_on_root, default_topology, derive


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config JSON")


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        class_count=args.classes,
        samples_per_class=args.per_class,
        frame_count=args.frames,
        joint_count=args.joints,
        subject_count=args.subjects,
        camera_count=args.cameras,
        noise_scale=args.noise_scale,
    )
    seqs = generate_synthetic_dataset(spec, args.seed)
    out = save_dataset(seqs, args.out, class_count=spec.class_count)
    print(f"wrote {len(seqs)} samples to {out}")
    return 0


def _cmd_inject(args: argparse.Namespace) -> int:
    seqs, class_count = load_dataset(args.data)
    noisy = inject_symmetric_noise(seqs, args.ratio, args.seed, class_count)
    out = save_dataset(noisy.samples, args.out, class_count=class_count)
    manifest_path = Path(args.out) / "noise_manifest.json"
    noisy.manifest.save(manifest_path)
    print(
        f"corrupted {int(noisy.corrupted_mask.sum())}/{len(noisy)} labels "
        f"(ratio {args.ratio}); manifest at {manifest_path}"
    )
    return 0


def _cmd_derive(args: argparse.Namespace) -> int:
    seqs, class_count = load_dataset(args.data)
    topology = default_topology(seqs[0].joint_count)
    modality = Modality(args.modality)
    derived = []
    for seq in seqs:
        src = center_on_root(seq, topology) if args.center else seq
        derived.append(seq.with_frames(derive(src, modality, topology).data))
    out = save_dataset(derived, args.out, class_count=class_count)
    print(f"wrote {len(derived)} {modality.value} tensors to {out}")
    return 0


def _cmd_cross_train(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    stop = "cross_train_motion" if args.modality == "all" else f"cross_train_{args.modality}"
    report = run_pipeline(config, stop_after=stop)
    for name, stage in report.stages.items():
        if name.startswith("cross_train"):
            print(f"{name}: chose {stage['chosen']}, peer accuracies {stage['peer_accuracies']}")
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    report = run_pipeline(config, stop_after="select")
    stage = report.stages["select"]
    print(
        f"clean set: {stage['union_size']} samples at p={stage['fraction']} "
        f"(precision {stage['precision']}, recall {stage['recall']})"
    )
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    report = run_pipeline(config, stop_after="fuse")
    weights = report.stages["fuse"]["epoch_mean_weights"]
    if weights:
        final = ", ".join(f"{w:.3f}" for w in weights[-1])
        print(f"gate fine-tuned for {report.stages['fuse']['epochs']} epochs; "
              f"final mean weights ({final})")
    else:
        print("gate fine-tuning ran for 0 epochs")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    if args.fusion:
        from skelnoise.fusion import load_fusion

        if not args.data:
            print("--fusion requires --data", file=sys.stderr)
            return 2
        model = load_fusion(args.fusion)
        seqs, _ = load_dataset(args.data)
        metrics = evaluate(model, seqs)
        payload = metrics.to_json()
    else:
        config = ExperimentConfig.load(args.config)
        report = run_pipeline(config)
        payload = report.stages["evaluate"]["fused"]
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    report = run_pipeline(config)
    fused = report.stages["evaluate"]["fused"]
    print(f"pipeline complete: fused top-1 {fused['top1']:.4f} "
          f"(report {Path(config.output_dir) / 'report.json'})")
    return 0


def _cmd_ablation(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    suite = run_ablation_suite(config)
    width = max(len(row["arm"]) for row in suite["rows"])
    print(f"noise ratio {suite['noise_ratio']}, seed {suite['seed']}")
    for row in suite["rows"]:
        print(f"  {row['arm']:<{width}}  top-1 {row['top1']:.4f}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    reports = []
    for run_dir in args.runs:
        path = Path(run_dir) / "report.json"
        if not path.exists():
            print(f"skipping {run_dir}: no report.json", file=sys.stderr)
            continue
        reports.append(RunReport.load(path))
    written = emit_plots(reports, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelnoise",
        description="Noise-robust multi-stream skeleton action recognition toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic skeleton dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--joints", type=int, default=9)
    p.add_argument("--subjects", type=int, default=9)
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--noise-scale", type=float, default=0.05)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("inject", help="corrupt labels with symmetric noise")
    p.add_argument("--data", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("derive", help="write one derived modality of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--modality", choices=[m.value for m in Modality], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-center", dest="center", action="store_false")
    p.set_defaults(func=_cmd_derive, center=True)

    p = sub.add_parser("cross-train", help="co-teaching stage of a configured run")
    _add_config_arg(p)
    p.add_argument(
        "--modality", choices=["joint", "bone", "motion", "all"], default="all"
    )
    p.set_defaults(func=_cmd_cross_train)

    p = sub.add_parser("select", help="global clean-set selection stage")
    _add_config_arg(p)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("fuse", help="gate fine-tuning stage")
    _add_config_arg(p)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("evaluate", help="evaluate a run or a saved fusion bundle")
    p.add_argument("--config", help="experiment config JSON (runs the pipeline)")
    p.add_argument("--fusion", help="fusion bundle directory to evaluate standalone")
    p.add_argument("--data", help="dataset for --fusion evaluation")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage and write the report")
    _add_config_arg(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("ablation", help="four-arm comparison at shared seeds")
    _add_config_arg(p)
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("report", help="plots and tables from finished runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not (args.config or args.fusion):
        parser.error("evaluate needs --config or --fusion")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
