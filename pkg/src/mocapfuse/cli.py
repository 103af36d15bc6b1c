"""Command-line entry point: synth, init, track and eval subcommands.

Outputs are written atomically (temp file in the output directory, then
rename).  Exit codes: 0 success, 1 runtime failure (one machine-readable
``error: ...`` line on stderr), 2 usage error.  Log level via the
MOCAPFUSE_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import metrics as metrics_mod
from . import pcm as pcm_mod
from . import pipeline as pipeline_mod
from . import skeleton as sk
from . import synth as synth_mod
from .calib import load_rig
from .smooth import FilterSpec
from .tracker import LatticeConfig


def _atomic(path):
    return path + ".tmp"


def _commit(path):
    os.replace(_atomic(path), path)


class _AtomicWriter:
    """Write-to-temp-then-rename for a set of files in one output dir."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.pending = []

    def path(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        final = os.path.join(self.out_dir, name)
        self.pending.append(final)
        return _atomic(final)

    def commit(self):
        for final in self.pending:
            _commit(final)
        self.pending = []


def _build_config(args) -> pipeline_mod.PipelineConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    lat = dict(base.get("lattice", {}))
    if args.lattice_s is not None:
        lat["s"] = args.lattice_s
    if args.lattice_k is not None:
        lat["k"] = args.lattice_k
    if args.rotation is not None:
        lat["rotation_enabled"] = args.rotation == "on"
    filt = dict(base.get("filter", {}))
    filt.setdefault("cutoff_hz", 5.0)
    filt.setdefault("sample_rate_hz", 60.0)
    if args.cutoff_hz is not None:
        filt["cutoff_hz"] = args.cutoff_hz
    if args.filter_mode is not None:
        filt["mode"] = args.filter_mode
    return pipeline_mod.PipelineConfig(
        lattice=LatticeConfig(**lat),
        filter=FilterSpec(**filt),
        init=pipeline_mod.InitSettings(**base.get("init", {})),
    )


def cmd_synth(args):
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if args.seed is not None:
            payload["seed"] = args.seed
        spec = synth_mod.spec_from_json(payload)
    else:
        preset = synth_mod.PRESETS[args.preset]
        spec = synth_mod.SceneSpec(motion=preset(), seed=args.seed or 0)
    synth_mod.generate(spec, args.frames, args.out)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_init(args):
    rig = load_rig(args.calib)
    provider = pcm_mod.DirectoryProvider(args.pcm_dir)
    config = _build_config(args)
    template = (sk.load_skeleton(args.skeleton) if args.skeleton
                else sk.human_skeleton())
    model, pose0, _, first_frame = pipeline_mod.initialize(
        provider, rig, template, config)
    writer = _AtomicWriter(args.out)
    sk.save_skeleton(model, writer.path("skeleton.json"))
    with open(writer.path("init_state.json"), "w", encoding="utf-8") as fh:
        json.dump({"pose0": [float(v) for v in pose0],
                   "first_track_frame": first_frame}, fh, indent=2)
        fh.write("\n")
    writer.commit()
    print(f"initialized: lengths in {args.out}/skeleton.json, "
          f"tracking starts at frame {first_frame}")
    return 0


def cmd_track(args):
    rig = load_rig(args.calib)
    provider = pcm_mod.DirectoryProvider(args.pcm_dir)
    config = _build_config(args)
    model = sk.load_skeleton(args.skeleton)
    init_state = args.init_state or os.path.join(
        os.path.dirname(args.skeleton), "init_state.json")
    with open(init_state, "r", encoding="utf-8") as fh:
        state = json.load(fh)
    first = state["first_track_frame"] if args.start_frame is None \
        else args.start_frame
    last = args.end_frame
    if last is None:
        last = first
        while True:
            try:
                provider.get(rig.cameras[0].id, last, 0.0)
            except pcm_mod.FrameMissing:
                break
            last += 1
    seq = pipeline_mod.track(provider, rig, model, state["pose0"], config,
                             range(first, last))
    writer = _AtomicWriter(args.out)
    pipeline_mod.write_positions_csv(seq, writer.path("positions.csv"))
    pipeline_mod.write_pose_csv(seq, writer.path("pose.csv"))
    pipeline_mod.write_run_metadata(writer.path("run.json"), config, model,
                                    extra={"frames": [first, last]})
    pipeline_mod.write_diagnostics_csv(seq, rig, writer.path("diagnostics.csv"))
    writer.commit()
    print(f"tracked frames [{first}, {last}) into {args.out}")
    return 0


def cmd_eval(args):
    indices_p, pred = pipeline_mod.read_positions_csv(args.pred, stage="stage2")
    indices_g, gt = synth_mod.read_ground_truth_csv(args.gt)
    keep = [i for i, idx in enumerate(indices_g) if idx in set(indices_p)]
    gt = [gt[i] for i in keep]
    if len(pred) != len(gt):
        raise ValueError("prediction and ground truth frames do not align")
    writer = _AtomicWriter(args.out)
    metrics_mod.write_summary(pred, gt, writer.path("summary.json"))
    seq_like = _SeriesAdapter(args.pred, indices_p, pred)
    metrics_mod.emit_series(seq_like, gt, writer.path("series.csv"))
    writer.commit()
    with open(os.path.join(args.out, "summary.json"), "r",
              encoding="utf-8") as fh:
        print(fh.read().strip())
    return 0


class _SeriesAdapter:
    """Minimal MotionSequence look-alike built from a positions CSV."""

    class _Frame:
        def __init__(self, index, positions, weights):
            self.index = index
            self.positions_stage2 = positions
            self.weights = weights
            self.rotations = {}

        def total_score(self):
            return float(sum(self.weights.values()))

    def __init__(self, csv_path, indices, pred_frames):
        import csv as _csv
        weights = {}
        with open(csv_path, "r", newline="", encoding="utf-8") as fh:
            for row in _csv.DictReader(fh):
                if row["stage"] != "stage2":
                    continue
                weights.setdefault(int(row["frame"]), {})[row["label"]] = \
                    float(row["weight"])
        self.frames = [self._Frame(idx, pos, weights.get(idx, {}))
                       for idx, pos in zip(indices, pred_frames)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mocapfuse",
        description="Multi-camera motion reconstruction from confidence maps")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, pcm=True):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--calib", help="camera calibration JSON")
        if pcm:
            p.add_argument("--pcm-dir", help="PCM directory (cam*/rot*/frame*.pcm)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--lattice-s", type=float, help="lattice spacing, mm")
        p.add_argument("--lattice-k", type=int, help="lattice half-extent")
        p.add_argument("--cutoff-hz", type=float, help="smoothing cutoff, Hz")
        p.add_argument("--rotation", choices=["on", "off"],
                       help="tilt-driven rotated sampling")
        p.add_argument("--filter-mode", choices=["causal", "offline"],
                       help="smoothing mode")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="scene spec JSON")
    p.add_argument("--preset", default="walk",
                   choices=sorted(synth_mod.PRESETS),
                   help="motion preset when no spec file is given")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="noise RNG seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", help="identify link lengths and initial pose")
    common(p)
    p.add_argument("--skeleton", help="skeleton template JSON (default: "
                                      "built-in human model)")
    p.set_defaults(func=cmd_init, required_paths=["calib", "pcm_dir"])

    p = sub.add_parser("track", help="run the tracking pipeline")
    common(p)
    p.add_argument("--skeleton", help="initialized skeleton JSON")
    p.add_argument("--init-state", help="init_state.json from the init step")
    p.add_argument("--start-frame", type=int)
    p.add_argument("--end-frame", type=int)
    p.set_defaults(func=cmd_track,
                   required_paths=["calib", "pcm_dir", "skeleton"])

    p = sub.add_parser("eval", help="score a tracked run against ground truth")
    p.add_argument("--pred", required=True, help="positions.csv from track")
    p.add_argument("--gt", required=True, help="ground_truth.csv from synth")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MOCAPFUSE_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in getattr(args, "required_paths", []):
        if getattr(args, name, None) is None:
            parser.error(f"the --{name.replace('_', '-')} flag is required "
                         f"for '{args.command}'")
    try:
        return args.func(args)
    except Exception as exc:  # surface module errors with exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
