"""Command-line driver: ingest, synth, track, train, predict, evaluate, sweep.

Exit codes: 0 success, 1 runtime failure, 2 configuration/validation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .evaluation import (DEFAULT_COMBOS, EvalError, PerFrame, WholeSequence, run_protocol,
                         split_folds, sweep, sweep_csv)
from .features import FeatureConfig, FeatureError, FeatureKind, whole_sequence_sample, per_frame_windows
from .pose_core import (Detection, InteractionLabel, InteractionSequence, PoseError, discover_dataset,
                        load_entry, parse_keypoints, format_sbu_skeleton, synthetic_dataset,
                        sequence_path, parse_sbu_skeleton)
from .svm import SvcConfig, SvmError, load_model, save_model, train_multiclass
from .tracker import NotEnoughPersons, TrackerConfig, TrackingError, poses_from_tracks, run_tracker

log = logging.getLogger("interrec")

# fixed offsets from the run seed
SPLIT_OFFSET = 0
SVC_OFFSET = 1
SHUFFLE_OFFSET = 2
SYNTH_OFFSET = 3


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    dataset: str | None = None
    protocol: str = "whole-sequence"
    window: int = 9
    anchors: int = 13
    stride: int = 1
    features: str = "XY"
    c: float = 8.0
    gamma: float = 0.0625
    tol: float = 1e-3
    max_passes: int = 1000
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    formats: str = "json,csv"
    tracker: dict = field(default_factory=dict)

    def feature_kinds(self) -> frozenset[FeatureKind]:
        return FeatureKind.parse_list(self.features)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.feature_kinds(), self.window, self.anchors, self.stride)

    def protocol_obj(self):
        return PerFrame(self.window) if self.protocol == "per-frame" else WholeSequence(self.anchors)

    def svc_config(self) -> SvcConfig:
        return SvcConfig(c=self.c, gamma=self.gamma, tol=self.tol, max_passes=self.max_passes,
                         seed=self.seed + SVC_OFFSET)

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(**self.tracker)

    @property
    def format_set(self) -> set[str]:
        return {f.strip().lower() for f in self.formats.split(",") if f.strip()}

    def validate(self, need_dataset: bool = False) -> None:
        problems = []
        if need_dataset:
            if not self.dataset:
                problems.append("dataset: required")
            elif not Path(self.dataset).is_dir():
                problems.append(f"dataset: {self.dataset} is not a directory")
        if self.protocol not in ("per-frame", "whole-sequence"):
            problems.append("protocol: must be per-frame or whole-sequence")
        checks = [
            ("window", self.window >= 1, "must be >= 1"),
            ("anchors", self.anchors >= 2, "must be >= 2"),
            ("stride", self.stride >= 1, "must be >= 1"),
            ("c", self.c > 0, "must be > 0"),
            ("gamma", self.gamma > 0, "must be > 0"),
            ("tol", self.tol > 0, "must be > 0"),
            ("max_passes", self.max_passes >= 1, "must be >= 1"),
            ("jobs", self.jobs >= 1, "must be >= 1"),
        ]
        problems += [f"{name}: {msg} (got {getattr(self, name)!r})" for name, ok, msg in checks if not ok]
        try:
            self.feature_kinds()
        except FeatureError as e:
            problems.append(f"features: {e}")
        if not self.format_set <= {"json", "csv"}:
            problems.append(f"formats: unsupported {sorted(self.format_set - {'json', 'csv'})}")
        allowed = {f.name for f in fields(TrackerConfig)}
        unknown = set(self.tracker) - allowed
        if unknown:
            problems.append(f"tracker: unknown keys {sorted(unknown)}")
        else:
            try:
                self.tracker_config()
            except (TrackingError, TypeError) as e:
                problems.append(f"tracker: {e}")
        if problems:
            raise ConfigError(problems)


def _num(kind):
    def conv(text):
        try:
            return kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
    return conv


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    data: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError([f"config: cannot read {args.config} ({e})"]) from None
        if not isinstance(data, dict):
            raise ConfigError(["config: top level must be a mapping"])
    names = {f.name for f in fields(RunConfig)}
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - names
    if unknown:
        raise ConfigError([f"config: unknown keys {sorted(unknown)}"])
    cfg = RunConfig(**data)
    for name in names - {"tracker"}:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    tr = dict(cfg.tracker)
    for key in ("gate", "confirm_hits", "max_misses"):
        v = getattr(args, key, None)
        if v is not None:
            tr[key] = v
    cfg.tracker = tr
    return cfg


# --------------------------------------------------------------------------
# output helpers

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_dataset(cfg: RunConfig) -> tuple[list[InteractionSequence], list[str]]:
    seqs, problems = [], []
    for entry in discover_dataset(cfg.dataset):
        try:
            seqs.append(load_entry(entry))
        except (OSError, PoseError) as e:
            problems.append(f"{entry.video_id}: {e}")
    if not seqs:
        raise EvalError(f"no sequences found under {cfg.dataset}")
    return seqs, problems


def _run_summary(cfg: RunConfig, problems: list[str], skipped: list[str]) -> str:
    lines = [f"interrec {__version__}", f"dataset: {cfg.dataset}", f"seed: {cfg.seed}",
             f"unreadable files: {len(problems)}"]
    lines += [f"  {p}" for p in problems]
    lines.append(f"skipped sequences: {len(skipped)}")
    lines += [f"  {s}" for s in skipped]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands

def cmd_ingest(cfg: RunConfig, args) -> int:
    entries = discover_dataset(cfg.dataset)
    if not entries:
        print("no sequences found", file=sys.stderr)
        return 2
    manifest, warn = [], []
    for e in entries:
        try:
            seq = load_entry(e)
        except (OSError, PoseError) as err:
            warn.append(f"{e.path}: {err}")
            continue
        manifest.append({"video_id": e.video_id, "set_id": e.set_id, "label": e.label.name,
                         "frames": len(seq), "path": str(e.path.relative_to(cfg.dataset))})
    out = Path(cfg.out)
    write_atomic(out / "manifest.json", _dump({"entries": manifest, "warnings": warn}))
    if "csv" in cfg.format_set:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["video_id", "set_id", "label", "frames", "path"])
        for m in manifest:
            w.writerow([m["video_id"], m["set_id"], m["label"], m["frames"], m["path"]])
        write_atomic(out / "manifest.csv", buf.getvalue())
    for msg in warn:
        print(f"warning: {msg}", file=sys.stderr)
    print(f"{len(manifest)} sequences, {len(warn)} warnings")
    return 1 if not manifest else 0


def cmd_synth(cfg: RunConfig, args) -> int:
    seqs = synthetic_dataset(args.per_class, cfg.seed + SYNTH_OFFSET,
                             min_len=args.min_length, max_len=args.max_length)
    root = Path(cfg.out)
    for s in seqs:
        write_atomic(sequence_path(root, s), format_sbu_skeleton(s))
    print(f"{len(seqs)} sequences written to {root}")
    return 0


def _read_detections(path: str, min_score: float):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise PoseError("$.frames: required list missing")
    frames = []
    for i, fr in enumerate(doc["frames"]):
        width = fr.get("width", doc.get("width"))
        height = fr.get("height", doc.get("height"))
        if width is None or height is None:
            raise PoseError(f"$.frames[{i}]: width/height missing")
        cents = []
        for d in fr.get("detections", []):
            det = Detection(int(fr["index"]), tuple(float(v) for v in d[:4]),
                            float(d[4]) if len(d) > 4 else 1.0)
            if det.score >= min_score:
                cents.append(det.centroid(width, height))
        frames.append((int(fr["index"]), cents))
    return frames


def cmd_track(cfg: RunConfig, args) -> int:
    frames = _read_detections(args.detections, args.min_score)
    try:
        result = run_tracker(frames, cfg.tracker_config())
    except NotEnoughPersons as e:
        print(f"not enough persons: {e}", file=sys.stderr)
        return 1
    out = Path(cfg.out)
    doc = {
        "person1": result.person1,
        "person2": result.person2,
        "frames": [{"index": fi, "tracks": [[tid, cx, cy, st] for tid, cx, cy, st in rows]}
                   for fi, rows in result.frames],
    }
    write_atomic(out / "tracks.json", _dump(doc))
    if args.keypoints:
        with open(args.keypoints, encoding="utf-8") as fh:
            kp = parse_keypoints(fh.read(), args.min_confidence)
        poses = poses_from_tracks(result, kp)
        if not poses:
            print("no frame had poses for both persons", file=sys.stderr)
            return 1
        label = InteractionLabel.parse(args.label) if args.label else InteractionLabel.APPROACHING
        seq = InteractionSequence.from_arrays(1, "tracked", label, [p[0] for p in poses],
                                              np.stack([p[1] for p in poses]))
        write_atomic(out / "skeleton.txt", format_sbu_skeleton(seq))
    print(f"person1=track {result.person1}, person2=track {result.person2}")
    return 0


def _samples(cfg: RunConfig, seqs):
    fc = cfg.feature_config()
    if cfg.protocol == "per-frame":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return [s for q in seqs for s in per_frame_windows(q, fc)]
    return [whole_sequence_sample(q, fc) for q in seqs if len(q) >= 2]


def cmd_train(cfg: RunConfig, args) -> int:
    seqs, problems = _load_dataset(cfg)
    samples = _samples(cfg, seqs)
    X = np.stack([s.vector for s in samples])
    model = train_multiclass(X, [s.label for s in samples], cfg.svc_config())
    buf = io.StringIO()
    save_model(model, buf)
    meta = {"protocol": cfg.protocol, "window": cfg.window, "anchors": cfg.anchors,
            "stride": cfg.stride, "features": sorted(k.name for k in cfg.feature_kinds())}
    out = Path(cfg.out)
    write_atomic(out / "model.json", buf.getvalue())
    write_atomic(out / "model_meta.json", _dump(meta))
    print(f"trained {len(model.binaries)} binary models on {len(samples)} samples")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    model_dir = Path(args.model)
    with open(model_dir / "model.json", encoding="utf-8") as fh:
        model = load_model(fh)
    meta = json.loads((model_dir / "model_meta.json").read_text(encoding="utf-8"))
    cfg.protocol, cfg.window, cfg.anchors = meta["protocol"], meta["window"], meta["anchors"]
    cfg.stride, cfg.features = meta["stride"], ",".join(meta["features"])
    with open(args.skeleton, encoding="utf-8") as fh:
        seq = parse_sbu_skeleton(fh, video_id=args.skeleton)
    samples = _samples(cfg, [seq])
    if not samples:
        print("sequence too short for the model's protocol", file=sys.stderr)
        return 1
    preds = model.predict_many(np.stack([s.vector for s in samples]))
    for s, p in zip(samples, preds):
        print(f"{s.span[0]}-{s.span[1]}\t{p.name}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    seqs, problems = _load_dataset(cfg)
    split = split_folds(sorted({s.set_id for s in seqs}), cfg.seed + SPLIT_OFFSET)
    shuffle = cfg.seed + SHUFFLE_OFFSET if args.shuffle_labels else None
    report = run_protocol(seqs, cfg.protocol_obj(), cfg.feature_config(), cfg.svc_config(), split,
                          shuffle_seed=shuffle, jobs=cfg.jobs)
    out = Path(cfg.out)
    if "json" in cfg.format_set:
        write_atomic(out / "report.json", report.to_json())
    if "csv" in cfg.format_set:
        write_atomic(out / "confusion.csv", report.confusion_csv())
        write_atomic(out / "accuracy.csv", report.summary_csv())
    write_atomic(out / "run_summary.txt", _run_summary(cfg, problems, report.skipped))
    print(f"{report.protocol}: macro accuracy {report.macro_accuracy:.4f}, "
          f"overall {report.overall_accuracy:.4f}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    seqs, problems = _load_dataset(cfg)
    split = split_folds(sorted({s.set_id for s in seqs}), cfg.seed + SPLIT_OFFSET)
    rows = sweep(seqs, DEFAULT_COMBOS, (PerFrame(cfg.window), WholeSequence(cfg.anchors)),
                 cfg.svc_config(), split, stride=cfg.stride, jobs=cfg.jobs)
    out = Path(cfg.out)
    write_atomic(out / "sweep.csv", sweep_csv(rows))
    if "json" in cfg.format_set:
        write_atomic(out / "sweep.json", _dump([
            {"features": r.features, "per_frame": r.per_frame.to_dict(),
             "whole_sequence": r.whole_sequence.to_dict()} for r in rows]))
    skipped = rows[0].per_frame.skipped if rows else []
    write_atomic(out / "run_summary.txt", _run_summary(cfg, problems, skipped))
    for r in rows:
        print(f"{r.features:<24} {r.per_frame.macro_accuracy:.4f} {r.whole_sequence.macro_accuracy:.4f}")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of run settings; flags override it")
    common.add_argument("--dataset", help="dataset root (<root>/s<set>/<class>/<video>/skeleton.txt)")
    common.add_argument("--protocol", choices=["per-frame", "whole-sequence"])
    common.add_argument("--window", type=_num(int), help="frames per per-frame window")
    common.add_argument("--anchors", type=_num(int), help="anchor frames per whole sequence")
    common.add_argument("--stride", type=_num(int))
    common.add_argument("--features", help="comma list of XY,DRJ,DOJ,JA,AD,VEL or ALL")
    common.add_argument("--c", type=_num(float))
    common.add_argument("--gamma", type=_num(float))
    common.add_argument("--tol", type=_num(float))
    common.add_argument("--max-passes", dest="max_passes", type=_num(int))
    common.add_argument("--seed", type=_num(int))
    common.add_argument("--jobs", type=_num(int))
    common.add_argument("--out", help="output directory")
    common.add_argument("--formats", help="comma list of json,csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="interrec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate a dataset and write a manifest")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--per-class", type=_num(int), default=10)
    s.add_argument("--min-length", type=_num(int), default=30)
    s.add_argument("--max-length", type=_num(int), default=60)
    t = sub.add_parser("track", parents=[common], help="track persons through a detections file")
    t.add_argument("--detections", required=True)
    t.add_argument("--keypoints", help="keypoint document to attach poses to the tracked persons")
    t.add_argument("--label", help="label to record in the emitted skeleton file")
    t.add_argument("--min-score", type=_num(float), default=0.5)
    t.add_argument("--min-confidence", type=_num(float), default=0.1)
    t.add_argument("--gate", type=_num(float))
    t.add_argument("--confirm-hits", dest="confirm_hits", type=_num(int))
    t.add_argument("--max-misses", dest="max_misses", type=_num(int))
    sub.add_parser("train", parents=[common], help="train a model on a whole dataset")
    pr = sub.add_parser("predict", parents=[common], help="classify one skeleton file")
    pr.add_argument("--model", required=True, help="directory written by train")
    pr.add_argument("--skeleton", required=True)
    e = sub.add_parser("evaluate", parents=[common], help="5-fold set-level cross-validation")
    e.add_argument("--shuffle-labels", action="store_true", help="chance-level control run")
    sub.add_parser("sweep", parents=[common], help="feature-combination table for both protocols")
    return p


COMMANDS = {
    "ingest": (cmd_ingest, True),
    "synth": (cmd_synth, False),
    "track": (cmd_track, False),
    "train": (cmd_train, True),
    "predict": (cmd_predict, False),
    "evaluate": (cmd_evaluate, True),
    "sweep": (cmd_sweep, True),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, need_dataset = COMMANDS[args.command]
    try:
        cfg = load_run_config(args)
        cfg.validate(need_dataset=need_dataset)
        if args.command == "synth" and args.per_class < 1:
            raise ConfigError(["per_class: must be >= 1"])
    except (ConfigError, TypeError) as e:
        problems = e.problems if isinstance(e, ConfigError) else [str(e)]
        for msg in problems:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    try:
        return func(cfg, args)
    except (PoseError, EvalError, SvmError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
