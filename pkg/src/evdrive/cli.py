"""Command line entry point exposing the pipeline end to end.

Machine-readable output (key=value lines, tables) goes to stdout;
diagnostics and warnings go to stderr.  Exit codes: 0 success, 1
processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from . import metrics as metrics_mod
from .frames import normalize_aps, normalize_dvs, accumulate_dvs, write_pgm
from .recording import (
    Recording,
    RecordingError,
    format_stream_stats,
    stream_stats,
    write_recording,
)
from .scene import generate_scene, parse_scenario
from .simulator import SensorParams
from .sync import SyncPolicy, merge_streams, window_records

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evdrive",
        description="Event+frame driving pipeline: simulate, inspect, prepare, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="render a scenario into a recording container")
    sim.add_argument("--scenario", required=True, help="scenario config file")
    sim.add_argument("--out", required=True, help="output .ddrc container path")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--theta", type=float, default=0.2, help="DVS threshold (log units)")

    info = sub.add_parser("info", help="print per-stream statistics of a container")
    info.add_argument("container", help="recording container path")

    prep = sub.add_parser("prep", help="build train/test dataset files from containers")
    prep.add_argument("containers", nargs="+", help="input recording containers")
    prep.add_argument("--out", required=True, help="output path prefix")
    prep.add_argument("--seed", type=int, default=0, help="rebalancing seed")
    prep.add_argument("--window-ms", type=int, default=50)
    prep.add_argument("--label-mode", choices=("zoh", "linear"), default="zoh")

    export = sub.add_parser("export-frames", help="write windowed frames as PGM images")
    export.add_argument("container", help="recording container path")
    export.add_argument("--out", required=True, help="output directory")
    export.add_argument("--window-ms", type=int, default=50)
    export.add_argument("--label-mode", choices=("zoh", "linear"), default="zoh")
    export.add_argument("--limit", type=int, default=0, help="stop after N windows (0 = all)")

    ev = sub.add_parser("eval", help="score prediction CSVs against ground truth")
    ev.add_argument("--pred", action="append", required=True, help="prediction CSV (repeatable)")
    ev.add_argument("--gt", action="append", required=True, help="ground-truth CSV (repeatable)")
    ev.add_argument("--tag", action="append", default=None, help="dataset tag per pair")
    ev.add_argument(
        "--mode",
        action="append",
        default=None,
        choices=("dvs+aps", "dvs", "aps"),
        help="input modality per pair",
    )
    return parser


def _cmd_simulate(args) -> int:
    scenario = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
    if args.seed is not None:
        scenario = type(scenario)(**{**scenario.__dict__, "seed": args.seed})
    sensor = SensorParams(threshold_theta=args.theta)
    scene = generate_scene(scenario, sensor)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        written = write_recording(scene.meta, scene.packets(), fh)
    print(f"container={out}")
    print(f"bytes={written}")
    print(f"events={len(scene.events)}")
    print(f"aps_frames={len(scene.aps_frames)}")
    print(f"vehicle_packets={len(scene.vehicle_packets)}")
    return 0


def _cmd_info(args) -> int:
    rec = Recording(args.container)
    stats = stream_stats(rec.packets())
    meta = rec.meta
    print(f"id={meta.id}")
    print(f"scenario={meta.scenario}")
    print(f"width={meta.width}")
    print(f"height={meta.height}")
    print(f"created_ms={meta.created_ms}")
    sys.stdout.write(format_stream_stats(stats))
    return 0


def _cmd_prep(args) -> int:
    policy = SyncPolicy(label_mode=args.label_mode, window_ms=args.window_ms)
    out_prefix = Path(args.out)
    if out_prefix.parent:
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
    summary = dataset_mod.run_prep(args.containers, out_prefix, policy, args.seed)
    for key in sorted(summary):
        print(f"{key}={summary[key]}")
    return 0


def _cmd_export_frames(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = Recording(args.container)
    policy = SyncPolicy(label_mode=args.label_mode, window_ms=args.window_ms)
    counters: dict[str, int] = {}
    width, height = rec.meta.width, rec.meta.height
    n = 0
    for record in window_records(merge_streams(rec), policy, counters):
        dvs = normalize_dvs(accumulate_dvs(record.events, width, height))
        aps = normalize_aps(record.aps)
        write_pgm(dvs, out_dir / f"dvs_{n:06d}.pgm")
        write_pgm(aps, out_dir / f"aps_{n:06d}.pgm")
        n += 1
        if args.limit and n >= args.limit:
            break
    print(f"windows={n}")
    for key in sorted(counters):
        print(f"{key}={counters[key]}")
    return 0


def _cmd_eval(args) -> int:
    preds, gts = args.pred, args.gt
    if len(preds) != len(gts):
        raise metrics_mod.MetricsError(
            f"need matching --pred/--gt pairs, got {len(preds)} vs {len(gts)}"
        )
    tags = args.tag or ["all"] * len(preds)
    modes = args.mode or ["dvs+aps"] * len(preds)
    if len(tags) == 1 and len(preds) > 1:
        tags = tags * len(preds)
    if len(modes) == 1 and len(preds) > 1:
        modes = modes * len(preds)
    if len(tags) != len(preds) or len(modes) != len(preds):
        raise metrics_mod.MetricsError("--tag/--mode counts must match the pair count")

    cells: dict[str, dict[str, list[tuple[float, float]]]] = {}
    for i, (pred_path, gt_path, tag, mode) in enumerate(zip(preds, gts, tags, modes)):
        ts_p, pred = metrics_mod.read_prediction_csv(pred_path)
        ts_g, gt = metrics_mod.read_prediction_csv(gt_path)
        if ts_p != ts_g:
            raise metrics_mod.MetricsError(
                f"pair {i}: timestamp columns of {pred_path} and {gt_path} differ"
            )
        r = metrics_mod.rmse(pred, gt)
        e = metrics_mod.eva(pred, gt)
        print(f"pair{i}.tag={tag}")
        print(f"pair{i}.mode={mode}")
        print(f"pair{i}.rmse_deg={r:.9g}")
        print(f"pair{i}.eva={e:.9g}")
        cells.setdefault(tag, {}).setdefault(mode, []).append((r, e))
    sys.stdout.write(metrics_mod.format_metrics_table(cells))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "info": _cmd_info,
    "prep": _cmd_prep,
    "export-frames": _cmd_export_frames,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        RecordingError,
        dataset_mod.DatasetError,
        metrics_mod.MetricsError,
        ValueError,
        OSError,
    ) as exc:
        print(f"evdrive {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
