"""Command-line entry point for bgcut."""

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import structlog
from threadpoolctl import threadpool_limits

from bgcut import __version__
from bgcut.config import RunConfig, get_settings, load_run_config
from bgcut.errors import BgCutError, ConfigError
from bgcut.logging import run_context, setup_logging

logger = structlog.get_logger()

INFER_SUMMARY = "infer_summary.json"


@contextmanager
def limit_threads(threads: int) -> Iterator[None]:
    """Cap BLAS and OpenCV worker threads for the duration of a command."""
    import cv2

    previous = cv2.getNumThreads()
    cv2.setNumThreads(threads)
    try:
        with threadpool_limits(limits=threads):
            yield
    finally:
        cv2.setNumThreads(previous)


def _size(value: str) -> tuple[int, int]:
    try:
        h, w = value.lower().split("x")
        return int(h), int(w)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected HxW, got {value!r}") from e


def _widths(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected integers like 1,3,5, got {value!r}") from e


def _config(args: argparse.Namespace, **overrides: dict) -> RunConfig:
    return load_run_config(getattr(args, "config", None), **overrides)


def _write_json(path: Optional[Path], text: str) -> None:
    if path is None:
        sys.stdout.write(text + "\n")
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n")


def cmd_dataset_gen(args: argparse.Namespace) -> None:
    from bgcut.training.dataset import generate_dataset, scene_specs

    config = _config(args)
    manifests = generate_dataset(scene_specs(config.dataset), args.out)
    logger.info(
        "Dataset generated",
        out=str(args.out),
        **{split: len(m.clips) for split, m in manifests.items()},
    )


def _train_split(config: RunConfig, dataset: Optional[Path]) -> list:
    from bgcut.training.dataset import load_split, manifest_path

    root = dataset or config.paths.dataset_dir
    return load_split(manifest_path(root, "train"))


def cmd_train(args: argparse.Namespace) -> None:
    from bgcut.backbone.checkpoint import load_checkpoint, save_checkpoint
    from bgcut.pipeline.models import SEGMENTER_GROUP, SegmentationModels
    from bgcut.training.metadata import write_run_metadata
    from bgcut.training.stage1 import train_stage1
    from bgcut.training.stage2 import train_stage2

    train_overrides = {"iterations": args.iterations} if args.iterations else {}
    config = _config(args, train=train_overrides)
    clips = _train_split(config, args.dataset)

    if args.stage == "stage1":
        result = train_stage1(clips, config)
        out = args.out or config.paths.stage1_checkpoint
        save_checkpoint(result.model, out, group=SEGMENTER_GROUP)
        extra = {"final_loss": result.losses[-1] if result.losses else None}
    else:
        source = args.init or (
            config.paths.pruned_checkpoint
            if config.paths.pruned_checkpoint.exists()
            else config.paths.stage1_checkpoint
        )
        stage1 = load_checkpoint(source)
        trained = train_stage2(clips, stage1, config)
        models = SegmentationModels(
            attenuation=trained.attenuation,
            segmenter=trained.segmenter,
            refinement=trained.refinement,
            n=config.refinement.n,
        )
        out = args.out or config.paths.stage2_checkpoint
        models.save(out)
        extra = {
            "initialised_from": str(source),
            "final_loss": trained.losses[-1] if trained.losses else None,
        }
    write_run_metadata(config.paths.run_dir, config, args.stage, {"checkpoint": str(out), **extra})


def cmd_prune(args: argparse.Namespace) -> None:
    from bgcut.backbone.checkpoint import load_checkpoint, save_checkpoint
    from bgcut.backbone.pruning import prune_to_target
    from bgcut.errors import PruneError
    from bgcut.pipeline.models import SEGMENTER_GROUP
    from bgcut.training.metadata import write_run_metadata
    from bgcut.training.stage1 import stage1_finetuner

    config = _config(args)
    clips = _train_split(config, args.dataset)
    model = load_checkpoint(args.init or config.paths.stage1_checkpoint)
    report_path = config.paths.run_dir / "prune_report.json"
    try:
        pruned, report = prune_to_target(model, config.prune, stage1_finetuner(clips, config))
    except PruneError as e:
        if e.report is not None:
            _write_json(report_path, e.report.model_dump_json(indent=2))
        raise
    out = args.out or config.paths.pruned_checkpoint
    save_checkpoint(pruned, out, group=SEGMENTER_GROUP)
    _write_json(report_path, report.model_dump_json(indent=2))
    write_run_metadata(
        config.paths.run_dir,
        config,
        "prune",
        {"checkpoint": str(out), "retained_fraction": report.retained_fraction},
    )


def cmd_infer(args: argparse.Namespace) -> None:
    from bgcut.pipeline.io import load_background_samples, write_masks
    from bgcut.pipeline.models import SegmentationModels
    from bgcut.pipeline.segment import segment_clips
    from bgcut.training.dataset import load_split

    models = SegmentationModels.load(args.checkpoint)
    clips = load_split(args.manifest, verify=not args.no_verify)
    bg = None
    if args.bg is not None:
        bg = load_background_samples(args.bg, size=clips[0].size if clips else None)
    results = segment_clips(clips, models, bg_frames=bg)

    summary = {}
    for result in results:
        write_masks(args.out / result.clip_id, result.masks)
        summary[result.clip_id] = {
            "frames": len(result.masks),
            "counters": result.counters.as_dict(),
            "latency": {k: v.model_dump() for k, v in result.latency.items()},
        }
    _write_json(args.out / INFER_SUMMARY, json.dumps(summary, indent=2))
    logger.info("Inference finished", clips=len(results), out=str(args.out))


def cmd_eval(args: argparse.Namespace) -> None:
    from bgcut.pipeline.evaluation import evaluate, write_band_curve, write_report
    from bgcut.pipeline.io import read_masks
    from bgcut.training.dataset import load_split
    from bgcut.utils.timing import LatencyStats

    config = _config(args)
    widths = args.band_widths or config.eval.band_widths
    clips = load_split(args.manifest, verify=not args.no_verify)
    predictions = [read_masks(args.pred_dir / clip.clip_id) for clip in clips]

    counters: dict[str, int] = {}
    latency: dict[str, LatencyStats] = {}
    summary_path = args.pred_dir / INFER_SUMMARY
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        samples: dict[str, list[dict]] = {}
        for clip in summary.values():
            for stage, count in clip["counters"].items():
                counters[stage] = counters.get(stage, 0) + count
            for stage, stats in clip["latency"].items():
                samples.setdefault(stage, []).append(stats)
        # clip-weighted means; p95 is the worst clip's
        for stage, stats in samples.items():
            total = sum(s["samples"] for s in stats)
            latency[stage] = LatencyStats(
                mean_ms=sum(s["mean_ms"] * s["samples"] for s in stats) / max(total, 1),
                p95_ms=max(s["p95_ms"] for s in stats),
                samples=total,
            )

    report = evaluate(
        predictions,
        [clip.masks or [] for clip in clips],
        [clip.clip_id for clip in clips],
        band_widths=widths,
        counters=counters,
        latency=latency,
    )
    out = args.out or args.pred_dir / "eval_report.json"
    write_report(out, report)
    write_band_curve(args.curve or out.with_name("band_curve.csv"), report.band_curve)
    sys.stdout.write(report.model_dump_json(indent=2) + "\n")


def cmd_bench(args: argparse.Namespace) -> None:
    from bgcut.pipeline.bench import bench
    from bgcut.pipeline.models import SegmentationModels

    config = _config(args)
    models = SegmentationModels.load(args.checkpoint)
    report = bench(
        models,
        size=args.size or config.bench.size,
        iterations=config.bench.iterations if args.iterations is None else args.iterations,
        warmup=config.bench.warmup if args.warmup is None else args.warmup,
    )
    _write_json(args.out, report.model_dump_json(indent=2))


def cmd_composite(args: argparse.Namespace) -> None:
    from bgcut.pipeline.composite import CompositeSpec, composite_clip
    from bgcut.pipeline.io import read_frames, read_masks
    from bgcut.utils.images import read_image, write_image

    config = _config(args)
    feather = config.composite.feather if args.feather is None else args.feather
    spec = CompositeSpec(background=read_image(args.background), feather=feather)
    outputs = composite_clip(read_frames(args.clip), read_masks(args.masks), spec)
    for t, frame in enumerate(outputs):
        write_image(args.out / f"{t:04d}.png", frame)
    logger.info("Composited clip", frames=len(outputs), out=str(args.out), feather=feather)


def cmd_ablate(args: argparse.Namespace) -> None:
    from bgcut.training.ablation import VARIANTS, run_ablation
    from bgcut.training.dataset import load_split, manifest_path

    train_overrides = {"iterations": args.iterations} if args.iterations else {}
    config = _config(args, train=train_overrides)
    root = args.dataset or config.paths.dataset_dir
    report = run_ablation(
        load_split(manifest_path(root, "train")),
        load_split(manifest_path(root, "test")),
        config,
        variants=args.variants or VARIANTS,
        seeds=args.seeds,
    )
    _write_json(args.out, report.model_dump_json(indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgcut", description="Portrait video background cut: train, prune, segment, evaluate"
    )
    parser.add_argument("--version", action="version", version=f"bgcut {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides BGCUT_LOG_LEVEL")
    parser.add_argument("--log-format", choices=("console", "json"), default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    dataset = commands.add_parser("dataset", help="Synthetic dataset tools")
    dataset_commands = dataset.add_subparsers(dest="dataset_command", required=True)
    gen = dataset_commands.add_parser("gen", help="Render a synthetic dataset")
    gen.add_argument("config", type=Path, help="Run config whose [dataset] section is used")
    gen.add_argument("out", type=Path)
    gen.set_defaults(handler=cmd_dataset_gen)

    train = commands.add_parser("train", help="Train stage 1 or stage 2")
    train.add_argument("stage", choices=("stage1", "stage2"))
    train.add_argument("config", type=Path)
    train.add_argument("--dataset", type=Path, help="Dataset root (overrides paths.dataset_dir)")
    train.add_argument("--iterations", type=int, help="Overrides train.iterations")
    train.add_argument("--init", type=Path, help="Stage-2 initial segmenter checkpoint")
    train.add_argument("--out", type=Path, help="Checkpoint path")
    train.set_defaults(handler=cmd_train)

    prune = commands.add_parser("prune", help="Gradually prune a stage-1 segmenter")
    prune.add_argument("config", type=Path)
    prune.add_argument("--dataset", type=Path)
    prune.add_argument("--init", type=Path, help="Segmenter checkpoint to prune")
    prune.add_argument("--out", type=Path, help="Pruned checkpoint path")
    prune.set_defaults(handler=cmd_prune)

    infer = commands.add_parser("infer", help="Segment every clip of a manifest")
    infer.add_argument("manifest", type=Path)
    infer.add_argument("checkpoint", type=Path)
    infer.add_argument("--bg", type=Path, help="Directory of background PNG samples")
    infer.add_argument("--out", type=Path, required=True)
    infer.add_argument("--no-verify", action="store_true", help="Skip checksum verification")
    infer.set_defaults(handler=cmd_infer)

    evaluate = commands.add_parser("eval", help="Score predicted masks against ground truth")
    evaluate.add_argument("pred_dir", type=Path)
    evaluate.add_argument("manifest", type=Path)
    evaluate.add_argument("--config", type=Path)
    evaluate.add_argument("--band-widths", type=_widths, help="e.g. 1,3,5,10,20")
    evaluate.add_argument("--out", type=Path, help="Report JSON path")
    evaluate.add_argument("--curve", type=Path, help="Band curve CSV path")
    evaluate.add_argument("--no-verify", action="store_true")
    evaluate.set_defaults(handler=cmd_eval)

    bench = commands.add_parser("bench", help="Per-stage latency")
    bench.add_argument("checkpoint", type=Path)
    bench.add_argument("--config", type=Path)
    bench.add_argument("--size", type=_size, help="HxW")
    bench.add_argument("--iterations", type=int)
    bench.add_argument("--warmup", type=int)
    bench.add_argument("--out", type=Path)
    bench.set_defaults(handler=cmd_bench)

    comp = commands.add_parser("composite", help="Blend a clip over a new background")
    comp.add_argument("clip", type=Path, help="Directory of frame PNGs")
    comp.add_argument("masks", type=Path, help="Directory of mask PNGs")
    comp.add_argument("background", type=Path, help="Replacement background image")
    comp.add_argument("--out", type=Path, required=True)
    comp.add_argument("--feather", type=int)
    comp.add_argument("--config", type=Path)
    comp.set_defaults(handler=cmd_composite)

    ablate = commands.add_parser("ablate", help="Train and evaluate the ablation variants")
    ablate.add_argument("config", type=Path)
    ablate.add_argument("--dataset", type=Path)
    ablate.add_argument("--variants", nargs="+")
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ablate.add_argument("--iterations", type=int)
    ablate.add_argument("--out", type=Path)
    ablate.set_defaults(handler=cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ValueError as e:
        sys.stderr.write(f"invalid BGCUT_* environment: {e}\n")
        return ConfigError.exit_code
    try:
        setup_logging(
            args.log_level or settings.log_level, args.log_format or settings.log_format
        )
    except ConfigError as e:
        sys.stderr.write(f"{e}\n")
        return e.exit_code
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        with run_context(command=args.command), limit_threads(settings.threads):
            handler(args)
    except BgCutError as e:
        logger.error(
            "Command failed",
            command=args.command,
            error=str(e),
            error_type=type(e).__name__,
            exit_code=e.exit_code,
        )
        return e.exit_code
    except Exception as e:
        logger.error("Fatal error", command=args.command, error=str(e), exc_info=True)
        return 1
    finally:
        if settings.metrics_file is not None:
            from bgcut.metrics import write_metrics

            write_metrics(settings.metrics_file)
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
