"""Operator CLI: serve, track, eval, sweep, synth, protocol-check.

Configuration precedence is CLI flags > TOML config file (--config) >
built-in defaults; every run writes a manifest recording the merged
configuration and checksums of its outputs. SKYTRACK_SEED is the seed
fallback when --seed is not given.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import __version__, protocol
from .backend import OracleNoise
from .core import BBox, SkytrackError
from .datasets import (
    FORMAT_VERSION,
    SynthSpec,
    TaskSpec,
    load_sard_annotations,
    load_sequence,
    parse_predicate,
    synth_sequence,
)
from .evaluation import SweepNotApplicable, miou, run_detection_eval, run_sweep
from .orchestrator import (
    MissionConfig,
    ReinitPolicy,
    SequenceOracleClient,
    TcpBackendClient,
    run_mission,
)
from .protocol import LinkModel, SemanticQuery
from .server import BackendServer, BindFailure, OracleService, ProxyService, TruthSource
from .trackers import TrackerKind


def _default_seed() -> int:
    return int(os.environ.get("SKYTRACK_SEED", "0"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, outputs):
    config = {
        k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")
    }
    manifest = {
        "tool": "skytrack",
        "version": __version__,
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "outputs": {str(p.name): _sha256(p) for p in outputs if p.exists()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _noise_from_args(args) -> OracleNoise:
    return OracleNoise(
        miss_rate=args.miss_rate,
        spurious_rate=args.spurious_rate,
        jitter_sigma=args.jitter_sigma,
        verify_flip_rate=args.flip_rate,
        seed=args.seed,
    )


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--miss-rate", type=float, default=0.0, help="stage-1 false-negative rate")
    p.add_argument("--spurious-rate", type=float, default=0.0, help="expected false positives per frame")
    p.add_argument("--jitter-sigma", type=float, default=0.0, help="box corner noise, px")
    p.add_argument("--flip-rate", type=float, default=0.0, help="stage-2 wrong-verdict rate")


def _add_link_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bandwidth", type=float, default=5_000_000.0, help="link bits/second")
    p.add_argument("--latency", type=float, default=0.05, help="one-way link latency, s")


def _overlay(frame, record, gt_box) -> Image.Image:
    img = Image.fromarray(np.asarray(frame.pixels), mode="L").convert("RGB")
    draw = ImageDraw.Draw(img)
    if gt_box is not None:
        draw.rectangle([gt_box.x, gt_box.y, gt_box.x2, gt_box.y2], outline=(0, 255, 0))
    if record.box is not None:
        b = record.box
        draw.rectangle([b.x, b.y, b.x2, b.y2], outline=(255, 64, 64))
    label = record.phase.value
    if record.confidence is not None:
        label += f" {record.confidence:.2f}"
    draw.text((4, 4), label, fill=(255, 255, 0))
    return img


def cmd_track(args) -> int:
    sequence = load_sequence(args.sequence)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    config = MissionConfig(
        tracker=TrackerKind(args.tracker),
        policy=ReinitPolicy(t_c=args.t_c, enabled=not args.no_reinit),
        link=LinkModel(bandwidth=args.bandwidth, latency=args.latency),
        noise=_noise_from_args(args),
        margin=args.margin,
        step_cost=args.step_cost,
    )
    client = None
    if args.backend:
        host, _, port = args.backend.rpartition(":")
        client = TcpBackendClient(host or "127.0.0.1", int(port))
    log = run_mission(sequence, config, client=client)
    result = miou(log, sequence)

    log_path = out_dir / "mission_log.json"
    log.write_json(log_path)
    outputs = [log_path]
    if args.overlays:
        overlay_dir = out_dir / "overlays"
        overlay_dir.mkdir(exist_ok=True)
        for record in log.records:
            img = _overlay(
                sequence.frame(record.index), record, sequence.ground_truth[record.index]
            )
            img.save(overlay_dir / f"{record.index:08d}.png")

    summary = result.to_json()
    summary.pop("per_frame_iou")
    summary["backend_calls"] = log.backend_calls
    summary["reacquisitions"] = log.reacquisitions
    summary["log_digest"] = log.digest()
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs.append(summary_path)
    _write_manifest(out_dir, "track", args, outputs)

    print(f"frames        {log.frames_total}")
    print(f"mIoU          {result.miou:.3f}")
    print(f"FPS           {result.fps:.3f}")
    print(f"FPS_Edge      {'-' if result.fps_edge is None else f'{result.fps_edge:.3f}'}")
    print(f"t_b           {'-' if result.mean_t_b is None else f'{result.mean_t_b:.3f} s'}")
    print(f"backend calls {log.backend_calls}")
    print(f"log digest    {log.digest()}")
    return 0


def cmd_synth(args) -> int:
    occlusions = []
    for window in args.occlude or []:
        first, _, last = window.partition(":")
        occlusions.append((int(first), int(last or first)))
    x, y, w, h = (float(v) for v in args.start_box.split(","))
    vx, vy = (float(v) for v in args.velocity.split(","))
    spec = SynthSpec(
        name=Path(args.out).name,
        width=args.width,
        height=args.height,
        n_frames=args.frames,
        fps=args.fps,
        start_box=BBox(x, y, w, h),
        velocity=(vx, vy),
        occlusions=tuple(occlusions),
        seed=args.seed,
        superset_class=args.superset,
        predicate=parse_predicate(args.predicate),
        description=args.description,
    )
    sequence = synth_sequence(spec, args.out)
    _write_manifest(Path(args.out), "synth", args, [Path(args.out) / "groundtruth.txt"])
    print(f"wrote {len(sequence)} frames to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_sard_annotations(args.annotations, strict=not args.lenient)
    tasks = []
    for entry in json.loads(Path(args.tasks).read_text()):
        predicate = entry.get("predicate", {})
        tasks.append(
            TaskSpec(
                task_id=entry["task"],
                query=SemanticQuery(
                    superset_class=entry.get("superset_class", "person"),
                    predicate=predicate,
                    description=entry.get("description", ""),
                ),
                gt_predicate=predicate,
            )
        )
    result = run_detection_eval(tasks, dataset, noise=_noise_from_args(args), margin=args.margin)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "detection_report.csv"
    json_path = out_dir / "detection_report.json"
    result.write_csv(csv_path)
    json_path.write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, "eval", args, [csv_path, json_path])
    print(f"mAP {result.map:.4f} over {len(tasks)} tasks -> {csv_path}")
    return 0


def cmd_sweep(args) -> int:
    sequences = [load_sequence(d) for d in args.sequences]
    config = MissionConfig(
        tracker=TrackerKind(args.tracker),
        link=LinkModel(bandwidth=args.bandwidth, latency=args.latency),
        noise=_noise_from_args(args),
        step_cost=args.step_cost,
    )
    result = run_sweep(sequences, TrackerKind(args.tracker), config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    json_path = out_dir / "sweep.json"
    result.write_csv(csv_path)
    json_path.write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, "sweep", args, [csv_path, json_path])
    print(f"t_c_opt {result.t_c_opt:.2f} -> {csv_path}")
    return 0


def cmd_serve(args) -> int:
    if args.mode == "oracle":
        if not args.annotations:
            raise SkytrackError("oracle mode requires --annotations")
        service = OracleService(
            TruthSource(args.annotations), noise=_noise_from_args(args), margin=args.margin
        )
    else:
        if not args.upstream:
            raise SkytrackError("proxy mode requires --upstream host:port")
        host, _, port = args.upstream.rpartition(":")
        service = ProxyService(host or "127.0.0.1", int(port))
    server = BackendServer(args.port, service, host=args.host)
    print(f"serving {args.mode} back-end on {args.host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_protocol_check(args) -> int:
    fixtures = sorted(Path(args.fixtures).glob("*.bin"))
    failures = 0
    for path in fixtures:
        raw = path.read_bytes()
        try:
            msg = protocol.decode(raw)
            again = protocol.encode(msg)
        except protocol.ProtocolError as exc:
            print(f"FAIL {path.name}: {exc}")
            failures += 1
            continue
        if again != raw:
            print(f"FAIL {path.name}: re-encoding differs")
            failures += 1
        else:
            print(f"ok   {path.name}")
    print(f"{len(fixtures) - failures}/{len(fixtures)} golden fixtures pass")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skytrack", description=__doc__)
    parser.add_argument("--config", type=Path, help="TOML config file with per-command sections")
    parser.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run a tracking mission over a sequence")
    p.add_argument("sequence", help="sequence directory")
    p.add_argument("--out", default="track_out", help="output directory")
    p.add_argument("--tracker", default="mosse", choices=[k.value for k in TrackerKind])
    p.add_argument("--t-c", type=float, default=0.7, help="re-initialization threshold")
    p.add_argument("--no-reinit", action="store_true")
    p.add_argument("--margin", type=float, default=50.0)
    p.add_argument("--backend", help="host:port of an external back-end (default: in-process oracle)")
    p.add_argument("--overlays", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--step-cost", type=float, default=None,
                   help="fixed virtual seconds per tracker step (deterministic logs)")
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_link_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("synth", help="generate a synthetic sequence fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--start-box", default="60,80,40,40", help="x,y,w,h")
    p.add_argument("--velocity", default="0,0", help="vx,vy px/frame")
    p.add_argument("--occlude", action="append", help="first:last occluded frames (inclusive)")
    p.add_argument("--superset", default="person")
    p.add_argument("--predicate", default="none", help="key=value,... or 'none'")
    p.add_argument("--description", default="the synthetic target")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run the detection evaluation over annotated images")
    p.add_argument("--annotations", required=True, help="SARD-style JSON file")
    p.add_argument("--tasks", required=True, help="JSON list of detection tasks")
    p.add_argument("--out", default="eval_out")
    p.add_argument("--margin", type=float, default=50.0)
    p.add_argument("--lenient", action="store_true", help="warn instead of reject on injury-rule violations")
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_noise_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="t_c sensitivity sweep over sequences")
    p.add_argument("sequences", nargs="+", help="sequence directories")
    p.add_argument("--tracker", default="mosse", choices=[k.value for k in TrackerKind])
    p.add_argument("--out", default="sweep_out")
    p.add_argument("--step-cost", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_link_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the back-end service")
    p.add_argument("--port", type=int, default=7070)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mode", choices=["oracle", "proxy"], default="oracle")
    p.add_argument("--annotations", help="sequence dir or SARD JSON (oracle mode)")
    p.add_argument("--upstream", help="host:port to forward to (proxy mode)")
    p.add_argument("--margin", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_noise_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("protocol-check", help="verify golden protocol fixtures")
    p.add_argument("--fixtures", default="fixtures/protocol")
    p.set_defaults(func=cmd_protocol_check)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    # Pre-scan for --config so file values become defaults; flags still win.
    if "--config" not in argv:
        return argv
    try:
        import tomllib
    except ImportError:  # 3.10 and older
        import tomli as tomllib

    idx = argv.index("--config")
    path = Path(argv[idx + 1])
    data = tomllib.loads(path.read_text())
    command = next((a for a in argv if not a.startswith("-") and a != str(path)), None)
    section = data.get(command, {}) if command else {}
    for action in parser._subparsers._group_actions[0].choices.get(command, argparse.ArgumentParser())._actions:
        key = action.dest.replace("_", "-")
        if action.dest in section:
            action.default = section[action.dest]
        elif key in section:
            action.default = section[key]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (SkytrackError, BindFailure, SweepNotApplicable) as exc:
        if "--json" in argv:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
