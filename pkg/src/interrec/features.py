"""Joint-based interaction features and fixed-length sample assembly.

All per-frame functions accept a :class:`PoseFrame` or a ``(2, 12, 2)`` array
(person, joint, xy). The ``*_batch`` variants take ``(T, 2, 12, 2)``.
"""
from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .pose_core import InteractionLabel, InteractionSequence, JointId, PoseError, PoseFrame

HEAD = int(JointId.HEAD)

SKELETON_EDGES: tuple[tuple[JointId, JointId], ...] = (
    (JointId.HEAD, JointId.NECK),
    (JointId.NECK, JointId.RSHOULDER),
    (JointId.RSHOULDER, JointId.RELBOW),
    (JointId.RELBOW, JointId.RWRIST),
    (JointId.NECK, JointId.LSHOULDER),
    (JointId.LSHOULDER, JointId.LELBOW),
    (JointId.LELBOW, JointId.LWRIST),
    (JointId.NECK, JointId.RHIP),
    (JointId.RHIP, JointId.RKNEE),
    (JointId.NECK, JointId.LHIP),
    (JointId.LHIP, JointId.LKNEE),
)
_E1 = np.array([a for a, _ in SKELETON_EDGES])
_E2 = np.array([b for _, b in SKELETON_EDGES])


class FeatureError(PoseError):
    pass


class ShortSequenceWarning(UserWarning):
    pass


class FeatureKind(enum.Enum):
    XY = "XY"
    DRJ = "DRJ"
    DOJ = "DOJ"
    JA = "JA"
    AD = "AD"
    VEL = "VEL"

    @property
    def dim(self) -> int:
        return _DIMS[self]

    @classmethod
    def parse_list(cls, text: str | Iterable[str]) -> frozenset["FeatureKind"]:
        items = text.split(",") if isinstance(text, str) else list(text)
        names = [s.strip().upper() for s in items if s.strip()]
        if names == ["ALL"]:
            return frozenset(cls)
        try:
            kinds = frozenset(cls[n] for n in names)
        except KeyError as e:
            raise FeatureError(f"unknown feature kind {e.args[0]!r}") from None
        if not kinds:
            raise FeatureError("at least one feature kind is required")
        return kinds


_DIMS = {FeatureKind.XY: 48, FeatureKind.DRJ: 12, FeatureKind.DOJ: 24,
         FeatureKind.JA: 22, FeatureKind.AD: 24, FeatureKind.VEL: 48}
KIND_ORDER = tuple(FeatureKind)


def kinds_label(kinds: Iterable[FeatureKind]) -> str:
    ks = ordered_kinds(kinds)
    if len(ks) == len(KIND_ORDER):
        return "All features"
    return " + ".join(k.name for k in ks)


def ordered_kinds(kinds: Iterable[FeatureKind]) -> list[FeatureKind]:
    ks = set(kinds)
    return [k for k in KIND_ORDER if k in ks]


def frame_dim(kinds: Iterable[FeatureKind]) -> int:
    return sum(k.dim for k in set(kinds))


@dataclass(frozen=True)
class FeatureConfig:
    kinds: frozenset[FeatureKind] = frozenset({FeatureKind.XY})
    window: int = 9
    anchors: int = 13
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kinds", frozenset(self.kinds))
        if not self.kinds:
            raise FeatureError("kinds must be non-empty")
        if self.window < 1:
            raise FeatureError("window must be >= 1")
        if self.anchors < 2:
            raise FeatureError("anchors must be >= 2")
        if self.stride < 1:
            raise FeatureError("stride must be >= 1")


@dataclass(frozen=True)
class WindowSample:
    vector: np.ndarray
    label: InteractionLabel
    video_id: str
    span: tuple[int, int]     # first and last frame index covered
    set_id: int = 0


def _arr(frame) -> np.ndarray:
    a = frame.as_array() if isinstance(frame, PoseFrame) else np.asarray(frame, dtype=float)
    if a.shape != (2, 12, 2):
        raise FeatureError(f"expected a (2, 12, 2) pose array, got {a.shape}")
    return a


# --------------------------------------------------------------------------
# batch kernels over (T, 2, 12, 2)

def xy_batch(P: np.ndarray) -> np.ndarray:
    return P.reshape(len(P), 48)


def drj_batch(P: np.ndarray) -> np.ndarray:
    d = P[:, 0] - P[:, 1]
    return np.hypot(d[..., 0], d[..., 1])


def doj_batch(P: np.ndarray) -> np.ndarray:
    a = P[:, 0, HEAD][:, None, :] - P[:, 1]
    b = P[:, 1, HEAD][:, None, :] - P[:, 0]
    return np.concatenate([np.hypot(a[..., 0], a[..., 1]), np.hypot(b[..., 0], b[..., 1])], axis=1)


def ja_batch(P: np.ndarray) -> np.ndarray:
    d = P[:, :, _E1] - P[:, :, _E2]                    # (T, 2, 11, 2)
    ang = np.arctan2(d[..., 1], d[..., 0])
    ang = np.where(ang == -np.pi, np.pi, ang)           # keep range (-pi, pi]
    return ang.reshape(len(P), 22)


def ad_batch(P: np.ndarray) -> np.ndarray:
    return np.abs(P[:, 0] - P[:, 1]).reshape(len(P), 24)


def vel_batch(P: np.ndarray) -> np.ndarray:
    """Row k holds P[k] - P[k-1]; row 0 is zero."""
    out = np.zeros((len(P), 48))
    if len(P) > 1:
        out[1:] = (P[1:] - P[:-1]).reshape(len(P) - 1, 48)
    return out


_BATCH = {
    FeatureKind.XY: xy_batch,
    FeatureKind.DRJ: drj_batch,
    FeatureKind.DOJ: doj_batch,
    FeatureKind.JA: ja_batch,
    FeatureKind.AD: ad_batch,
    FeatureKind.VEL: vel_batch,
}


def frame_features(P: np.ndarray, kinds: Iterable[FeatureKind]) -> np.ndarray:
    """Per-frame feature rows ``(T, frame_dim)`` for consecutive poses ``P``.

    VEL rows difference each pose against the previous row of ``P``.
    """
    P = np.asarray(P, dtype=float)
    return np.concatenate([_BATCH[k](P) for k in ordered_kinds(kinds)], axis=1)


# --------------------------------------------------------------------------
# single-frame API

def xy_features(frame) -> np.ndarray:
    return xy_batch(_arr(frame)[None])[0]


def drj(frame) -> np.ndarray:
    """Euclidean distance between the same joint of the two people."""
    return drj_batch(_arr(frame)[None])[0]


def doj(frame) -> np.ndarray:
    """Head of person 1 to every joint of person 2, then head of person 2 to person 1."""
    return doj_batch(_arr(frame)[None])[0]


def ja(frame) -> np.ndarray:
    """Edge angles, person 1's 11 edges then person 2's; coincident joints give 0."""
    return ja_batch(_arr(frame)[None])[0]


def ad(frame) -> np.ndarray:
    return ad_batch(_arr(frame)[None])[0]


def vel(frame_t1, frame_t2) -> np.ndarray:
    """Joint displacement from the earlier frame to the later one (xy layout)."""
    if isinstance(frame_t1, PoseFrame) and isinstance(frame_t2, PoseFrame):
        if frame_t1.frame_index >= frame_t2.frame_index:
            raise FeatureError("vel needs frame_t1 strictly earlier than frame_t2")
    return (_arr(frame_t2) - _arr(frame_t1)).reshape(48)


# --------------------------------------------------------------------------
# sample assembly

def anchor_frames(T: int, A: int) -> list[int]:
    """``A`` equally spaced positions in ``0..T-1``, rounding halves up."""
    if T < 2 or A < 2:
        raise FeatureError(f"anchor_frames needs T >= 2 and A >= 2 (got T={T}, A={A})")
    # floor(k (T-1)/(A-1) + 1/2) in exact integer arithmetic
    return [(2 * k * (T - 1) + (A - 1)) // (2 * (A - 1)) for k in range(A)]


def per_frame_windows(seq: InteractionSequence, config: FeatureConfig) -> list[WindowSample]:
    W = config.window
    T = len(seq)
    if T < W:
        warnings.warn(f"{seq.video_id}: {T} frames < window {W}; skipped", ShortSequenceWarning,
                      stacklevel=2)
        return []
    P = seq.poses()
    idx = seq.frame_indices()
    out = []
    for s in range(0, T - W + 1, config.stride):
        # recompute within the window so the first frame's VEL block is zero
        vec = frame_features(P[s:s + W], config.kinds).ravel()
        out.append(WindowSample(vec, seq.label, seq.video_id, (int(idx[s]), int(idx[s + W - 1])),
                                seq.set_id))
    return out


def whole_sequence_sample(seq: InteractionSequence, config: FeatureConfig) -> WindowSample:
    T = len(seq)
    if T < 2:
        raise FeatureError(f"{seq.video_id}: whole-sequence samples need at least 2 frames")
    pos = anchor_frames(T, config.anchors)
    P = seq.poses()[pos]
    vec = frame_features(P, config.kinds).ravel()
    idx = seq.frame_indices()
    return WindowSample(vec, seq.label, seq.video_id, (int(idx[0]), int(idx[-1])), seq.set_id)


def sample_dim(config: FeatureConfig, whole_sequence: bool) -> int:
    n = config.anchors if whole_sequence else config.window
    return n * frame_dim(config.kinds)


# --------------------------------------------------------------------------
# CSV export

def _kind_slot_names(kind: FeatureKind) -> list[str]:
    joints = [j.name.lower() for j in JointId]
    persons = ("p1", "p2")
    if kind in (FeatureKind.XY, FeatureKind.VEL):
        return [f"{kind.name}_{p}_{j}_{c}" for p in persons for j in joints for c in "xy"]
    if kind is FeatureKind.DRJ:
        return [f"DRJ_{j}" for j in joints]
    if kind is FeatureKind.DOJ:
        return ([f"DOJ_p1head_p2{j}" for j in joints] + [f"DOJ_p2head_p1{j}" for j in joints])
    if kind is FeatureKind.JA:
        return [f"JA_{p}_{a.name.lower()}-{b.name.lower()}" for p in persons for a, b in SKELETON_EDGES]
    return [f"AD_{j}_{c}" for j in joints for c in "xy"]


def feature_names(kinds: Iterable[FeatureKind], n_frames: int) -> list[str]:
    per = [n for k in ordered_kinds(kinds) for n in _kind_slot_names(k)]
    return [f"{n}_f{t}" for t in range(n_frames) for n in per]


def write_samples_csv(fh, samples: Sequence[WindowSample], kinds: Iterable[FeatureKind]) -> None:
    n_frames = len(samples[0].vector) // frame_dim(kinds) if samples else 0
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(feature_names(kinds, n_frames) + ["label"])
    for s in samples:
        w.writerow([repr(float(v)) for v in s.vector] + [s.label.name])
