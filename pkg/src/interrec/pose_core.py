"""Pose domain types, dataset ingestion and a synthetic sequence generator.

Coordinates everywhere downstream are normalized image fractions in [0, 1];
x grows to the right and y grows downward, as in image space.
"""
from __future__ import annotations

import io
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

log = logging.getLogger(__name__)

N_JOINTS = 12


class PoseError(ValueError):
    """Malformed pose input (bad file, bad schema, bad argument)."""


class ParseError(PoseError):
    pass


class OutOfFrameWarning(UserWarning):
    pass


class JointId(IntEnum):
    HEAD = 0
    NECK = 1
    RSHOULDER = 2
    RELBOW = 3
    RWRIST = 4
    LSHOULDER = 5
    LELBOW = 6
    LWRIST = 7
    RHIP = 8
    RKNEE = 9
    LHIP = 10
    LKNEE = 11


class InteractionLabel(IntEnum):
    APPROACHING = 0
    DEPARTING = 1
    PUNCHING = 2
    KICKING = 3
    HUGGING = 4
    PUSHING = 5
    SHAKING_HANDS = 6
    EXCHANGING_OBJECT = 7

    @property
    def display(self) -> str:
        return self.name.replace("_", " ").title().replace(" ", "")

    @classmethod
    def parse(cls, text: str) -> "InteractionLabel":
        key = re.sub(r"[^a-z]", "", text.lower())
        for lab in cls:
            if key == lab.name.replace("_", "").lower():
                return lab
        raise PoseError(f"unknown interaction label {text!r}")


# SBU joint order: Head, Neck, Torso, LShoulder, LElbow, LHand, RShoulder,
# RElbow, RHand, LHip, LKnee, LFoot, RHip, RKnee, RFoot.
SBU_JOINTS = 15
SBU_INDEX = (0, 1, 6, 7, 8, 3, 4, 5, 12, 13, 9, 10)  # JointId ordinal -> SBU slot
SBU_FIELDS = 1 + 2 * SBU_JOINTS * 3

# class directory name -> label, following the SBU numbering
SBU_CLASS_DIRS = {
    "01": InteractionLabel.APPROACHING,
    "02": InteractionLabel.DEPARTING,
    "03": InteractionLabel.KICKING,
    "04": InteractionLabel.PUNCHING,
    "05": InteractionLabel.PUSHING,
    "06": InteractionLabel.HUGGING,
    "07": InteractionLabel.SHAKING_HANDS,
    "08": InteractionLabel.EXCHANGING_OBJECT,
}
LABEL_CLASS_DIRS = {lab: d for d, lab in SBU_CLASS_DIRS.items()}
SKELETON_FILENAMES = ("skeleton.txt", "skeleton_pos.txt")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PersonPose:
    """12 joints as a read-only (12, 2) array of normalized (x, y)."""

    joints: np.ndarray

    def __post_init__(self):
        j = _frozen(self.joints)
        if j.shape != (N_JOINTS, 2):
            raise PoseError(f"expected ({N_JOINTS}, 2) joints, got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise PoseError("joint coordinates must be finite")
        if j.min() < 0.0 or j.max() > 1.0:
            raise PoseError("joint coordinates must lie in [0, 1]")
        object.__setattr__(self, "joints", j)

    def __getitem__(self, joint: int) -> np.ndarray:
        return self.joints[int(joint)]

    def __eq__(self, other):
        return isinstance(other, PersonPose) and np.array_equal(self.joints, other.joints)

    def __hash__(self):
        return hash(self.joints.tobytes())


@dataclass(frozen=True)
class PoseFrame:
    frame_index: int
    person1: PersonPose
    person2: PersonPose

    def __post_init__(self):
        if self.frame_index < 0:
            raise PoseError("frame_index must be non-negative")

    def swapped(self) -> "PoseFrame":
        return PoseFrame(self.frame_index, self.person2, self.person1)

    def as_array(self) -> np.ndarray:
        """(2, 12, 2) array: person, joint, coordinate."""
        return np.stack([self.person1.joints, self.person2.joints])

    @classmethod
    def from_array(cls, frame_index: int, arr: np.ndarray) -> "PoseFrame":
        return cls(int(frame_index), PersonPose(arr[0]), PersonPose(arr[1]))


@dataclass(frozen=True)
class InteractionSequence:
    set_id: int
    video_id: str
    label: InteractionLabel
    frames: tuple[PoseFrame, ...] = field(default_factory=tuple)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise PoseError("no frames")
        idx = [f.frame_index for f in frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise PoseError("frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "label", InteractionLabel(self.label))

    def __len__(self) -> int:
        return len(self.frames)

    def poses(self) -> np.ndarray:
        """(T, 2, 12, 2) stacked joint array."""
        return np.stack([f.as_array() for f in self.frames])

    def frame_indices(self) -> np.ndarray:
        return np.array([f.frame_index for f in self.frames], dtype=int)

    @classmethod
    def from_arrays(cls, set_id: int, video_id: str, label: InteractionLabel,
                    frame_indices: Sequence[int], poses: np.ndarray) -> "InteractionSequence":
        frames = tuple(PoseFrame.from_array(i, p) for i, p in zip(frame_indices, poses))
        return cls(set_id, video_id, label, frames)


@dataclass(frozen=True)
class Detection:
    frame_index: int
    bbox: tuple[float, float, float, float]
    score: float = 1.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise PoseError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise PoseError(f"score {self.score} outside [0, 1]")

    def centroid(self, width: float, height: float) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return normalize_joint((x0 + x1) / 2, (y0 + y1) / 2, width, height)


def normalize_joint(x_px: float, y_px: float, width: float, height: float) -> tuple[float, float]:
    """Divide pixel coordinates by the frame size, clamping into [0, 1].

    Points outside the frame are clamped and an ``OutOfFrameWarning`` is emitted.
    """
    if not (width > 0 and height > 0):
        raise PoseError(f"frame dimensions must be positive, got {width}x{height}")
    x, y = x_px / width, y_px / height
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        warnings.warn(f"point ({x_px}, {y_px}) outside {width}x{height} frame; clamped",
                      OutOfFrameWarning, stacklevel=2)
        x, y = min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)
    return x, y


# --------------------------------------------------------------------------
# SBU skeleton text files

def parse_sbu_skeleton(stream: TextIO | str, set_id: int = 1, video_id: str = "",
                       label: InteractionLabel = InteractionLabel.APPROACHING) -> InteractionSequence:
    """Parse an SBU ``skeleton.txt`` stream into an InteractionSequence.

    Label and set are not stored in the file; callers pass them from the
    directory layout.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: list[tuple[int, np.ndarray]] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if tokens and tokens[-1] == "":
            tokens.pop()
        if len(tokens) != SBU_FIELDS:
            raise ParseError(f"line {lineno}: expected {SBU_FIELDS} fields, got {len(tokens)}")
        try:
            values = [float(t) for t in tokens]
        except ValueError as e:
            raise ParseError(f"line {lineno}: non-numeric token ({e})") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(f"line {lineno}: non-finite value")
        if values[0] != int(values[0]) or values[0] < 0:
            raise ParseError(f"line {lineno}: bad frame index {tokens[0]!r}")
        xyz = np.array(values[1:]).reshape(2, SBU_JOINTS, 3)
        rows.append((int(values[0]), xyz[:, SBU_INDEX, :2]))
    if not rows:
        raise ParseError("no frames")
    rows.sort(key=lambda r: r[0])
    idx = [r[0] for r in rows]
    if len(set(idx)) != len(idx):
        raise ParseError("duplicate frame index")
    poses = _normalize_sbu(np.stack([r[1] for r in rows]))
    return InteractionSequence.from_arrays(set_id, video_id, label, idx, poses)


def _normalize_sbu(poses: np.ndarray) -> np.ndarray:
    # values already in image fractions pass through; otherwise scale by extent
    if poses.max() > 1.05:
        extent = poses.reshape(-1, 2).max(axis=0)
        extent[extent <= 0] = 1.0
        poses = poses / extent
    if poses.min() < 0.0 or poses.max() > 1.0:
        warnings.warn("skeleton coordinates outside [0, 1]; clamped", OutOfFrameWarning, stacklevel=3)
        poses = np.clip(poses, 0.0, 1.0)
    return poses


def format_sbu_skeleton(seq: InteractionSequence) -> str:
    """Serialize to SBU text. Dropped joints (Torso, feet) and z are written as 0."""
    lines = []
    for f in seq.frames:
        full = np.zeros((2, SBU_JOINTS, 3))
        full[:, SBU_INDEX, :2] = f.as_array()
        lines.append(",".join([str(f.frame_index)] + [repr(float(v)) for v in full.ravel()]))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# keypoint documents (pose-estimator output)

@dataclass(frozen=True)
class KeypointPerson:
    joints: np.ndarray              # (12, 2) normalized
    confidence: np.ndarray          # (12,)
    bbox: tuple[float, float, float, float] | None = None  # pixels

    @property
    def mean_confidence(self) -> float:
        return float(self.confidence.mean())

    def centroid(self, width: float, height: float) -> np.ndarray:
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            return np.array(normalize_joint((x0 + x1) / 2, (y0 + y1) / 2, width, height))
        return self.joints.mean(axis=0)


@dataclass(frozen=True)
class KeypointFrame:
    index: int
    width: float
    height: float
    people: tuple[KeypointPerson, ...]


def _require(obj, key, path, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}.{key}: required field missing")
    val = obj[key]
    if not isinstance(val, kind) or isinstance(val, bool):
        raise ParseError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}")
    return val


def parse_keypoints(doc: dict | str, min_confidence: float = 0.1) -> list[KeypointFrame]:
    """Validate and normalize a keypoint document.

    ``doc`` is either the decoded JSON object or its text. People whose mean
    keypoint confidence is below ``min_confidence`` are dropped.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ParseError(f"$: invalid JSON ({e})") from None
    frames = _require(doc, "frames", "$", list)
    out = []
    num = (int, float)
    for fi, fr in enumerate(frames):
        p = f"$.frames[{fi}]"
        index = _require(fr, "index", p, int)
        width = _require(fr, "width", p, num)
        height = _require(fr, "height", p, num)
        if width <= 0 or height <= 0:
            raise ParseError(f"{p}: width and height must be positive")
        people = []
        for pi, person in enumerate(_require(fr, "people", p, list)):
            pp = f"{p}.people[{pi}]"
            kps = _require(person, "keypoints", pp, list)
            if len(kps) != N_JOINTS:
                raise ParseError(f"{pp}.keypoints: expected {N_JOINTS} entries, got {len(kps)}")
            arr = np.empty((N_JOINTS, 3))
            for ki, kp in enumerate(kps):
                if (not isinstance(kp, list) or len(kp) != 3
                        or not all(isinstance(v, num) and not isinstance(v, bool) for v in kp)):
                    raise ParseError(f"{pp}.keypoints[{ki}]: expected [x_px, y_px, confidence]")
                arr[ki] = kp
            bbox = person.get("bbox")
            if bbox is not None:
                if not (isinstance(bbox, list) and len(bbox) == 4):
                    raise ParseError(f"{pp}.bbox: expected [x_min, y_min, x_max, y_max]")
                bbox = tuple(float(v) for v in bbox)
            conf = arr[:, 2]
            if conf.mean() < min_confidence:
                continue
            joints = np.array([normalize_joint(x, y, width, height) for x, y in arr[:, :2]])
            people.append(KeypointPerson(_frozen(joints), _frozen(conf), bbox))
        out.append(KeypointFrame(index, float(width), float(height), tuple(people)))
    return out


# --------------------------------------------------------------------------
# dataset directory layout: <root>/s<set>/<class_dir>/<video>/skeleton.txt

def class_dir_label(name: str) -> InteractionLabel:
    if name in SBU_CLASS_DIRS:
        return SBU_CLASS_DIRS[name]
    m = re.fullmatch(r"(\d{2})[_-].*", name)
    if m and m.group(1) in SBU_CLASS_DIRS:
        return SBU_CLASS_DIRS[m.group(1)]
    return InteractionLabel.parse(name)


@dataclass
class DatasetEntry:
    path: Path
    set_id: int
    label: InteractionLabel
    video_id: str


def discover_dataset(root: Path | str) -> list[DatasetEntry]:
    """Find skeleton files under the dataset layout, sorted by path.

    Set directories named ``s<digits>`` get that integer as set id; any other
    naming (e.g. SBU's ``s01s02``) is numbered 1..N in sorted order.
    """
    root = Path(root)
    set_dirs = sorted(d for d in root.iterdir() if d.is_dir() and d.name.startswith("s"))
    plain = all(re.fullmatch(r"s\d+", d.name) for d in set_dirs)
    entries = []
    for n, sdir in enumerate(set_dirs, start=1):
        set_id = int(sdir.name[1:]) if plain else n
        for cdir in sorted(d for d in sdir.iterdir() if d.is_dir()):
            try:
                label = class_dir_label(cdir.name)
            except PoseError:
                log.warning("skipping unknown class directory %s", cdir)
                continue
            for vdir in sorted(d for d in cdir.iterdir() if d.is_dir()):
                for fname in SKELETON_FILENAMES:
                    if (vdir / fname).is_file():
                        vid = f"{sdir.name}/{cdir.name}/{vdir.name}"
                        entries.append(DatasetEntry(vdir / fname, set_id, label, vid))
                        break
    return entries


def load_entry(entry: DatasetEntry) -> InteractionSequence:
    with open(entry.path, encoding="utf-8") as fh:
        return parse_sbu_skeleton(fh, entry.set_id, entry.video_id, entry.label)


def load_dataset(root: Path | str) -> tuple[list[InteractionSequence], list[str]]:
    """Load every sequence under ``root``; unreadable files become warnings."""
    seqs, problems = [], []
    for entry in discover_dataset(root):
        try:
            seqs.append(load_entry(entry))
        except (OSError, PoseError) as e:
            problems.append(f"{entry.path}: {e}")
    return seqs, problems


def sequence_path(root: Path | str, seq: InteractionSequence) -> Path:
    video = seq.video_id.rsplit("/", 1)[-1] or "000"
    return Path(root) / f"s{seq.set_id:02d}" / LABEL_CLASS_DIRS[seq.label] / video / "skeleton.txt"


def write_sequence(root: Path | str, seq: InteractionSequence) -> Path:
    """Write ``seq`` into the dataset layout and return the file path."""
    path = sequence_path(root, seq)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_sbu_skeleton(seq), encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# synthetic sequences

# standing figure facing +x, relative to the neck; y grows downward
_BASE_FIGURE = np.array([
    [0.000, -0.070],   # head
    [0.000, 0.000],    # neck
    [0.015, 0.015],    # rshoulder
    [0.020, 0.090],    # relbow
    [0.020, 0.165],    # rwrist
    [-0.015, 0.015],   # lshoulder
    [-0.020, 0.090],   # lelbow
    [-0.020, 0.165],   # lwrist
    [0.010, 0.200],    # rhip
    [0.012, 0.320],    # rknee
    [-0.010, 0.200],   # lhip
    [-0.012, 0.320],   # lknee
])
_NECK_Y = 0.35


def _ramp(t: np.ndarray, start: float, end: float) -> np.ndarray:
    """0 before ``start``, rising smoothly to 1 at ``end`` (fractions of the clip)."""
    s = np.clip((t - start) / (end - start), 0.0, 1.0)
    return s * s * (3 - 2 * s)


def _bump(t: np.ndarray, start: float, end: float) -> np.ndarray:
    """0 -> 1 -> 0 over [start, end]."""
    return np.sin(np.pi * np.clip((t - start) / (end - start), 0.0, 1.0))


def _figure(neck_x, neck_y, facing):
    fig = _BASE_FIGURE.copy()
    fig[:, 0] *= facing
    fig[:, 0] += neck_x
    fig[:, 1] += neck_y
    return fig


def _reach(fig, shoulder, elbow, wrist, target, amount):
    """Move an arm toward ``target`` by ``amount`` in [0, 1]."""
    sh = fig[shoulder]
    fig[wrist] += amount * (target - fig[wrist])
    fig[elbow] += amount * ((sh + target) / 2 - fig[elbow])


def _template(label: InteractionLabel, t: np.ndarray, rng: np.random.Generator):
    """Neck positions and per-frame figures for both people."""
    T = len(t)
    gap0 = rng.uniform(0.20, 0.24)
    cx = rng.uniform(0.45, 0.55)
    ny = _NECK_Y + rng.uniform(-0.02, 0.02)
    gap = np.full(T, gap0)
    if label is InteractionLabel.APPROACHING:
        gap = gap0 + 0.25 - 0.35 * t
    elif label is InteractionLabel.DEPARTING:
        gap = gap0 - 0.10 + 0.35 * t
    elif label is InteractionLabel.HUGGING:
        gap = gap0 - 0.12 * _ramp(t, 0.0, 0.5)
    elif label is InteractionLabel.PUSHING:
        gap = gap0 + 0.12 * _ramp(t, 0.45, 0.8)
    x1 = cx - gap / 2
    x2 = cx + gap / 2
    out = np.empty((T, 2, N_JOINTS, 2))
    J = JointId
    for k in range(T):
        p1 = _figure(x1[k], ny, +1.0)
        p2 = _figure(x2[k], ny, -1.0)
        tk = t[k:k + 1]
        if label is InteractionLabel.PUNCHING:
            a = float(_bump(tk, 0.3, 0.6)[0])
            _reach(p1, J.RSHOULDER, J.RELBOW, J.RWRIST, p2[J.HEAD], a)
            p2[:, 0] += 0.03 * float(_ramp(tk, 0.45, 0.7)[0])
        elif label is InteractionLabel.KICKING:
            a = float(_bump(tk, 0.3, 0.65)[0])
            target = (p2[J.RHIP] + p2[J.LHIP]) / 2
            p1[J.RKNEE] += a * (target + np.array([-0.03, 0.0]) - p1[J.RKNEE])
        elif label is InteractionLabel.HUGGING:
            a = float(_ramp(tk, 0.35, 0.6)[0])
            for fig, other in ((p1, p2), (p2, p1)):
                back = other[J.NECK] + np.array([0.0, 0.06])
                _reach(fig, J.RSHOULDER, J.RELBOW, J.RWRIST, back, a)
                _reach(fig, J.LSHOULDER, J.LELBOW, J.LWRIST, back, a)
        elif label is InteractionLabel.PUSHING:
            a = float(_bump(tk, 0.25, 0.7)[0])
            chest = p2[J.NECK] + np.array([0.0, 0.05])
            _reach(p1, J.RSHOULDER, J.RELBOW, J.RWRIST, chest, a)
            _reach(p1, J.LSHOULDER, J.LELBOW, J.LWRIST, chest, a)
        elif label is InteractionLabel.SHAKING_HANDS:
            a = float(_bump(tk, 0.15, 0.95)[0])
            mid = (p1[J.NECK] + p2[J.NECK]) / 2 + np.array([0.0, 0.13])
            _reach(p1, J.RSHOULDER, J.RELBOW, J.RWRIST, mid, a)
            _reach(p2, J.RSHOULDER, J.RELBOW, J.RWRIST, mid, a)
        elif label is InteractionLabel.EXCHANGING_OBJECT:
            a1 = float(_bump(tk, 0.1, 0.55)[0])
            a2 = float(_bump(tk, 0.45, 0.9)[0])
            mid = (p1[J.NECK] + p2[J.NECK]) / 2 + np.array([0.0, 0.09])
            _reach(p1, J.LSHOULDER, J.LELBOW, J.LWRIST, mid, a1)
            _reach(p2, J.LSHOULDER, J.LELBOW, J.LWRIST, mid, a2)
        out[k, 0], out[k, 1] = p1, p2
    return out


def generate_synthetic(label: InteractionLabel, length: int, seed: int,
                       set_id: int = 1, video_id: str | None = None) -> InteractionSequence:
    """Two stick figures acting out ``label`` over ``length`` frames.

    Pure function of (label, length, seed); joints carry N(0, 0.005) jitter.
    """
    if length < 2:
        raise PoseError("synthetic sequences need at least 2 frames")
    label = InteractionLabel(label)
    rng = np.random.default_rng([int(seed), int(label)])
    t = np.linspace(0.0, 1.0, length)
    poses = _template(label, t, rng)
    poses += rng.normal(0.0, 0.005, size=poses.shape)
    poses = np.clip(poses, 0.0, 1.0)
    vid = video_id if video_id is not None else f"synth-{label.name.lower()}-{seed}"
    return InteractionSequence.from_arrays(set_id, vid, label, range(length), poses)


def synthetic_dataset(per_class: int, seed: int, min_len: int = 30, max_len: int = 60,
                      n_sets: int = 21, labels: Iterable[InteractionLabel] = InteractionLabel
                      ) -> list[InteractionSequence]:
    """``per_class`` sequences of every label, spread round-robin over ``n_sets`` sets."""
    rng = np.random.default_rng(seed)
    seqs = []
    g = 0
    for lab in labels:
        for i in range(per_class):
            length = int(rng.integers(min_len, max_len + 1))
            sub_seed = int(rng.integers(0, 2**31 - 1))
            set_id = g % n_sets + 1
            vid = f"s{set_id:02d}/{LABEL_CLASS_DIRS[lab]}/{i + 1:03d}"
            seqs.append(generate_synthetic(lab, length, sub_seed, set_id=set_id, video_id=vid))
            g += 1
    return seqs
