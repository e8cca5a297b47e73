"""
Command-line entry point of the highway perception kit

    hpk synth|autolabel|train|infer|eval|bench|render --config <path> [--seed N] [--out <dir>]
"""
import argparse
import dataclasses
import logging
import os
import sys
from typing import List, Optional

from config import DATA_DIR, DESK_CONFIG, HPK_LOG_LEVEL
from exceptions import EXIT_OK, HPKError, exit_code_for
from pipeline.run_config import RunConfig, load_run_config

logger = logging.getLogger(__name__)

DETECTIONS_NAME = 'detections.jsonl'
BENCH_NAME = 'bench.json'


def _banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(
            config, seed=args.seed, train=dataclasses.replace(config.train, seed=args.seed)
        )
    return config


def _load_records(manifest: str):
    from pipeline.dataset import load_dataset
    records = load_dataset(manifest)
    print(f"Loaded {len(records)} frames from {manifest}")
    return records


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.labeling import run_synth
    return [run_synth(config, args.out, show_progress=not args.quiet)]


def cmd_autolabel(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.labeling import BOUNDARIES_NAME, run_autolabel
    out_dir = args.out if args.out != DATA_DIR else args.scene
    result = run_autolabel(config, args.scene, out_dir, corrections_path=args.corrections)
    for boundary_id, error in sorted(result.rms_error.items()):
        print(f"  boundary {boundary_id:+d}: RMS lateral error {error:.3f} m")
    written = [os.path.join(out_dir, BOUNDARIES_NAME)]
    if result.manifest:
        written.append(result.manifest)
    return written


def cmd_train(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.train import run_train
    records = _load_records(args.manifest)
    path, history = run_train(config, records, args.out, resume=args.resume, show_progress=not args.quiet)
    if history.epoch_losses:
        print(f"Final epoch loss: {history.epoch_losses[-1]:.4f}")
    return [path]


def cmd_infer(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.infer import run_infer
    records = _load_records(args.manifest)
    path = os.path.join(args.out, DETECTIONS_NAME)
    run_infer(config, args.checkpoint, records, path, show_progress=not args.quiet)
    return [path]


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.evaluate import run_eval
    from pipeline.infer import read_detections
    records = _load_records(args.manifest)
    result = run_eval(config, records, read_detections(args.detections))
    for report in (result.vehicles, result.radar, result.lanes, result.ego_lane_report()):
        metrics = report.summary().metrics(report.mode)
        print(
            f"  {report.name:<10} precision {metrics['precision']:.3f}  "
            f"recall {metrics['recall']:.3f}  f1 {metrics['f1']:.3f}"
        )
    return result.write(args.out)


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.bench import run_bench
    records = _load_records(args.manifest)
    path = os.path.join(args.out, BENCH_NAME)
    report = run_bench(config, records, args.checkpoint, args.repeat, out_path=path, show_progress=not args.quiet)
    for timing in report.stages.values():
        stats = timing.to_dict()
        if stats['n']:
            print(f"  {timing.name:<8} mean {stats['mean_ms']:8.2f} ms  p95 {stats['p95_ms']:8.2f} ms")
    print(f"  merge cost exponent: {report.merge_exponent:.2f}")
    return [path]


def cmd_render(args: argparse.Namespace, config: RunConfig) -> List[str]:
    from pipeline.infer import read_detections
    from pipeline.visualize import run_render
    records = _load_records(args.manifest)
    detections = read_detections(args.detections) if args.detections else None
    return run_render(config, records, args.out, detections, show_progress=not args.quiet)


COMMANDS = {
    'synth': (cmd_synth, "Generate synthetic scenes and a manifest"),
    'autolabel': (cmd_autolabel, "Fit lane boundaries of a scene from its point cloud"),
    'train': (cmd_train, "Train the detector on a manifest"),
    'infer': (cmd_infer, "Run the detector and write JSON-lines detections"),
    'eval': (cmd_eval, "Score detections against a manifest"),
    'bench': (cmd_bench, "Time every pipeline stage"),
    'render': (cmd_render, "Draw label, detection and lane evaluation overlays"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='hpk', description="Highway vehicle and lane perception pipeline")
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--config', default=DESK_CONFIG, help="Run configuration JSON")
        sub.add_argument('--seed', type=int, default=None, help="Override the configured seeds")
        sub.add_argument('--out', default=DATA_DIR, help="Output directory")
        sub.add_argument('--quiet', action='store_true', help="Hide progress bars")
        if name == 'autolabel':
            sub.add_argument('--scene', required=True, help="Scene directory")
            sub.add_argument('--corrections', default=None, help="JSON knot corrections")
        if name in ('train', 'infer', 'eval', 'bench', 'render'):
            sub.add_argument('--manifest', default=os.path.join(DATA_DIR, 'manifest.jsonl'), help="Dataset manifest")
        if name == 'train':
            sub.add_argument('--resume', default=None, help="Checkpoint to continue from")
        if name == 'infer':
            sub.add_argument('--checkpoint', required=True, help="Trained weights")
        if name == 'bench':
            sub.add_argument('--checkpoint', default=None, help="Trained weights (initial weights when omitted)")
            sub.add_argument('--repeat', type=int, default=1, help="Passes over the frames")
        if name == 'eval':
            sub.add_argument('--detections', required=True, help="Detections JSON-lines file")
        if name == 'render':
            sub.add_argument('--detections', default=None, help="Detections JSON-lines file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and exit with its status code"""
    logging.basicConfig(level=HPK_LOG_LEVEL.upper(), format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args = build_parser().parse_args(argv)
    command, title = COMMANDS[args.command]

    _banner(f"hpk {args.command}: {title}")
    try:
        config = _load_config(args)
        written = command(args, config)
    except (HPKError, FileNotFoundError) as e:
        print(f"\nError: {e}")
        sys.exit(exit_code_for(e))

    print("\n" + "=" * 60)
    print(f"hpk {args.command} completed!")
    for path in written[:10]:
        print(f"  {path}")
    if len(written) > 10:
        print(f"  ... and {len(written) - 10} more")
    print("=" * 60)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
