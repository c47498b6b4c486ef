"""Command-line entry point: ``lcrowd <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from lcrowd.errors import ConfigError, LCrowdError

log = logging.getLogger("lcrowd")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _workers(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("worker count must be >= 1")
    return v


def _dt(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v <= 0.5:
        raise argparse.ArgumentTypeError("dt must lie in (0, 0.5]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcrowd", description="Procedural labeled crowd data "
                                "and behavior classification.")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    g = sub.add_parser("generate", help="run a dataset sweep")
    g.add_argument("--config", required=True, metavar="PATH", help="sweep configuration (JSON)")
    g.add_argument("--out", metavar="DIR", help="output root (overrides output_root)")
    g.add_argument("--workers", type=_workers, default=1, metavar="N")
    g.add_argument("--seed", type=_u64, metavar="U64", help="override base_seed")
    g.add_argument("--no-frames", action="store_true", help="skip rendering")

    s = sub.add_parser("simulate", help="run a single scenario")
    s.add_argument("--config", required=True, metavar="PATH", help="scenario (JSON)")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--seed", type=_u64, metavar="U64", help="override the scenario seed")
    s.add_argument("--dt", type=_dt, metavar="SEC", help="override the scenario timestep")
    s.add_argument("--no-frames", action="store_true", help="skip rendering")

    a = sub.add_parser("annotate", help="recompute annotations from stored trajectories")
    a.add_argument("video_dir", metavar="VIDEO_DIR")
    a.add_argument("--out", metavar="PATH", help="annotation file (default VIDEO_DIR/annotations.json)")

    c = sub.add_parser("classify", help="classify a trajectory file")
    c.add_argument("trajectories", metavar="TRAJECTORIES")
    c.add_argument("--table", required=True, metavar="PATH")
    c.add_argument("--out", metavar="PATH", help="FitResult file (default fit_result.json next to input)")
    c.add_argument("--dt", type=_dt, default=0.1, metavar="SEC")

    e = sub.add_parser("eval", help="confusion matrix over a generated dataset")
    e.add_argument("dataset", metavar="DATASET_DIR", help="directory holding manifest.json")
    e.add_argument("--table", required=True, metavar="PATH")
    e.add_argument("--out", metavar="PATH", help="result file (default DATASET_DIR/confusion.json)")
    e.add_argument("--workers", type=_workers, default=1, metavar="N")

    t = sub.add_parser("table", help="build a class table")
    t.add_argument("--out", required=True, metavar="PATH")
    t.add_argument("--seed", type=_u64, default=0, metavar="U64")
    t.add_argument("--samples", type=int, default=100, metavar="N", help="entries per class")
    t.add_argument("--margin", type=float, default=0.1, help="top-two score margin")
    return p


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from None


def cmd_generate(args) -> int:
    from lcrowd.dataset import SweepSpec, run_sweep

    sweep = SweepSpec.load(args.config)
    if args.out:
        sweep.output_root = args.out
    if args.seed is not None:
        sweep.base_seed = args.seed
    if args.no_frames:
        sweep.write_frames = False
    sweep.scenarios()  # validate every scenario before writing anything
    total = len(sweep.scenarios())

    def progress(rec, costs):
        msg = f"[{rec.directory}] {rec.status}"
        if costs:
            msg += f" median {costs['median_ms']:.2f} ms/frame"
        if rec.error:
            msg += f" ({rec.error})"
        print(msg, flush=True)

    records = run_sweep(sweep, workers=args.workers, progress=progress)
    failed = sum(r.status != "ok" for r in records)
    manifest = Path(sweep.output_root) / "manifest.json"
    print(f"{total - failed}/{total} scenarios ok; manifest: {manifest}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_simulate(args) -> int:
    from lcrowd.dataset import ScenarioSpec, run_scenario

    data = _read_json(args.config)
    if not isinstance(data, dict):
        raise ConfigError("scenario configuration must be an object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.dt is not None:
        data["dt"] = args.dt
    spec = ScenarioSpec.from_dict(data)
    res = run_scenario(spec, args.out, write_frames=not args.no_frames)
    print(f"{spec.duration} frames, median {res['costs']['median_ms']:.2f} ms/frame; "
          f"output: {args.out}")
    return EXIT_OK


def cmd_annotate(args) -> int:
    from lcrowd.dataset import reannotate

    d = Path(args.video_dir)
    if not (d / "scene.json").is_file():
        raise ConfigError(f"not a video directory (no scene.json): {d}")
    text = reannotate(d)
    out = Path(args.out) if args.out else d / "annotations.json"
    out.write_text(text)
    print(out)
    return EXIT_OK


def cmd_classify(args) -> int:
    from lcrowd.behavior import ClassTable
    from lcrowd.classify import classify_video, dump_json, load_observed

    table = ClassTable.load(args.table)
    video = load_observed(args.trajectories, args.dt)
    res = classify_video(video, table)
    out = Path(args.out) if args.out else Path(args.trajectories).with_name("fit_result.json")
    dump_json(res.to_dict(), out)
    print(f"{res.predicted_class.label} {res.nearest_distance:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from lcrowd.behavior import ClassTable
    from lcrowd.classify import dump_json, evaluate, load_observed
    from lcrowd.dataset import ScenarioSpec

    root = Path(args.dataset)
    table = ClassTable.load(args.table)
    manifest = _read_json(root / "manifest.json")
    labeled = []
    for rec in manifest.get("records", []):
        if rec.get("status") != "ok":
            continue
        spec = ScenarioSpec.from_dict(rec["scenario"])
        video = load_observed(root / rec["files"]["trajectories"], spec.dt)
        labeled.append((video, spec.behavior_class))
    if not labeled:
        raise ConfigError(f"{root}: manifest lists no completed videos")
    cm = evaluate(labeled, table, workers=args.workers)
    out = Path(args.out) if args.out else root / "confusion.json"
    dump_json(cm.to_dict(), out)
    for cls, acc in cm.to_dict()["per_class_accuracy"].items():
        print(f"{cls:10s} {acc:.3f}")
    print(f"overall    {cm.overall_accuracy:.3f}")
    return EXIT_OK


def cmd_table(args) -> int:
    from lcrowd.behavior import build_class_table

    if args.samples < 1:
        raise ConfigError("--samples must be >= 1")
    table = build_class_table(args.samples, args.margin, np.random.default_rng(args.seed))
    table.save(args.out)
    print(f"{len(table)} entries -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "annotate": cmd_annotate,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "table": cmd_table,
}


def main(argv=None) -> int:
    level = os.environ.get("LCROWD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LCrowdError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
