"""Multi-person tracking: constant-velocity Kalman filters + Hungarian assignment.

Tracks follow bounding-box centroids in normalized image coordinates. The
state is ``(cx, cy, vx, vy)`` with one frame as the time step.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pose_core import KeypointFrame, PoseError

_F = np.array([[1.0, 0.0, 1.0, 0.0],
               [0.0, 1.0, 0.0, 1.0],
               [0.0, 0.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 1.0]])
_H = np.eye(2, 4)


class TrackingError(PoseError):
    pass


class NotEnoughPersons(TrackingError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    process_noise_pos: float = 1e-4
    process_noise_vel: float = 1e-4
    measurement_noise: float = 1e-4
    gate: float = 0.2
    confirm_hits: int = 3
    max_misses: int = 10
    init_velocity_var: float = 1e-2

    def __post_init__(self):
        for name in ("process_noise_pos", "process_noise_vel", "measurement_noise",
                     "gate", "init_velocity_var"):
            if not getattr(self, name) > 0:
                raise TrackingError(f"{name} must be > 0")
        if self.confirm_hits < 1:
            raise TrackingError("confirm_hits must be >= 1")
        if self.max_misses < 1:
            raise TrackingError("max_misses must be >= 1")

    @property
    def Q(self) -> np.ndarray:
        q = [self.process_noise_pos] * 2 + [self.process_noise_vel] * 2
        return np.diag(q)

    @property
    def R(self) -> np.ndarray:
        return np.eye(2) * self.measurement_noise


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray        # (cx, cy, vx, vy)
    covariance: np.ndarray  # 4x4

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @classmethod
    def initiate(cls, cx: float, cy: float, config: TrackerConfig) -> "KalmanState":
        r, v = config.measurement_noise, config.init_velocity_var
        return cls(np.array([cx, cy, 0.0, 0.0]), np.diag([r, r, v, v]))


def kf_predict(state: KalmanState, config: TrackerConfig) -> KalmanState:
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + config.Q
    return KalmanState(mean, (cov + cov.T) / 2)


def kf_update(state: KalmanState, measurement: Sequence[float], config: TrackerConfig) -> KalmanState:
    z = np.asarray(measurement, dtype=float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise TrackingError(f"measurement must be two finite numbers, got {measurement!r}")
    P = state.covariance
    S = _H @ P @ _H.T + config.R
    K = np.linalg.solve(S, _H @ P).T          # P H^T S^-1, S symmetric
    mean = state.mean + K @ (z - _H @ state.mean)
    cov = (np.eye(4) - K @ _H) @ P
    return KalmanState(mean, (cov + cov.T) / 2)


# --------------------------------------------------------------------------
# assignment

def _solve_square(cost: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Shortest-augmenting-path Hungarian method on an n x n matrix.

    Returns (row -> col assignment, row potentials u, col potentials v) with
    cost[i][j] - u[i] - v[j] >= 0 everywhere and == 0 on the assignment.
    """
    n = len(cost)
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)     # p[j]: row (1-based) matched to column j; column 0 is virtual
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            delta, j1 = INF, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols_free: set[int]) -> bool:
    match: dict[int, int] = {}

    def try_row(r, seen):
        for c in adj[r]:
            if c in cols_free and c not in seen:
                seen.add(c)
                if c not in match or try_row(match[c], seen):
                    match[c] = r
                    return True
        return False

    return all(try_row(r, set()) for r in rows)


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment for an n x m cost matrix.

    Returns ``min(n, m)`` ``(row, col)`` pairs sorted by row. Among optimal
    assignments the lexicographically smallest pair sequence is returned.
    """
    C = np.asarray(cost, dtype=float)
    if C.size == 0:
        return []
    if C.ndim != 2:
        raise TrackingError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise TrackingError("cost entries must be finite")
    n, m = C.shape
    size = max(n, m)
    # zero-cost padding rows/columns stand for "unassigned"
    sq = np.zeros((size, size))
    sq[:n, :m] = C
    assign, u, v = _solve_square(sq.tolist())

    scale = max(1.0, float(np.abs(C).max()))
    reduced = sq - np.asarray(u)[:, None] - np.asarray(v)[None, :]
    tight = reduced <= 1e-9 * scale * size
    # every optimal assignment uses only tight edges for optimal potentials, so
    # the lexicographic tie-break is a greedy search over tight-edge matchings
    adj = [[j for j in range(size) if tight[i, j]] for i in range(size)]
    free_cols = set(range(size))
    chosen: list[tuple[int, int]] = []
    for i in range(size):
        rest = list(range(i + 1, size))
        for j in adj[i]:   # real columns come first (ascending), padding last
            if j not in free_cols:
                continue
            free_cols.discard(j)
            if _has_perfect_matching(adj, rest, free_cols):
                if i < n and j < m:
                    chosen.append((i, j))
                break
            free_cols.add(j)
        else:  # numerical corner: fall back to the solver's own matching
            return sorted((r, c) for r, c in enumerate(assign) if r < n and c < m)
    return chosen


def assignment_cost(cost, pairs) -> float:
    C = np.asarray(cost, dtype=float)
    return math.fsum(C[r, c] for r, c in pairs)


# --------------------------------------------------------------------------
# tracks

class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass
class Track:
    id: int
    state: KalmanState
    birth_x: float
    hits: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    total_hits: int = 1

    @property
    def position(self) -> np.ndarray:
        return self.state.position


def associate(tracks: Sequence[Track], detections: Sequence[Sequence[float]], config: TrackerConfig):
    """Gate-filtered Hungarian matching of predicted tracks to detection centroids.

    Returns ``(matches, unmatched_tracks, unmatched_detections)`` where matches
    are ``(track_index, detection_index)`` pairs.
    """
    if not tracks or not detections:
        return [], list(range(len(tracks))), list(range(len(detections)))
    T = np.array([t.position for t in tracks])
    D = np.asarray(detections, dtype=float)
    cost = np.linalg.norm(T[:, None, :] - D[None, :, :], axis=2)
    matches = [(r, c) for r, c in hungarian(cost) if cost[r, c] <= config.gate]
    mt = {r for r, _ in matches}
    md = {c for _, c in matches}
    return (matches,
            [i for i in range(len(tracks)) if i not in mt],
            [j for j in range(len(detections)) if j not in md])


@dataclass
class Tracker:
    """Sequential multi-target tracker; call :meth:`step` once per frame."""

    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 1
    last_frame: int | None = None

    def step(self, frame_index: int, detections: Sequence[Sequence[float]]) -> list[Track]:
        """Advance one frame with normalized detection centroids; return confirmed tracks."""
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise TrackingError(f"frame index {frame_index} does not increase past {self.last_frame}")
        self.last_frame = frame_index
        cfg = self.config
        for t in self.tracks:
            t.state = kf_predict(t.state, cfg)
        matches, lost, fresh = associate(self.tracks, detections, cfg)
        for ti, di in matches:
            t = self.tracks[ti]
            t.state = kf_update(t.state, detections[di], cfg)
            t.hits += 1
            t.total_hits += 1
            t.misses = 0
        for ti in lost:
            t = self.tracks[ti]
            t.hits = 0
            t.misses += 1
        for di in fresh:
            cx, cy = detections[di]
            self.tracks.append(Track(self.next_id, KalmanState.initiate(cx, cy, cfg), float(cx)))
            self.next_id += 1
        for t in self.tracks:
            if t.misses >= cfg.max_misses:
                t.status = TrackStatus.DELETED
            elif t.status is TrackStatus.TENTATIVE and t.hits >= cfg.confirm_hits:
                t.status = TrackStatus.CONFIRMED
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.DELETED]
        return self.confirmed()

    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]


def person_identities(confirmed: Sequence[Track]) -> tuple[int, int]:
    """Pick the two most-hit confirmed tracks; person1 is the one born leftmost."""
    if len(confirmed) < 2:
        raise NotEnoughPersons(f"need 2 confirmed tracks, have {len(confirmed)}")
    top = sorted(confirmed, key=lambda t: (-t.total_hits, t.id))[:2]
    a, b = sorted(top, key=lambda t: (t.birth_x, t.id))
    return a.id, b.id


# --------------------------------------------------------------------------
# batch driver

@dataclass
class TrackLog:
    """Per-frame confirmed tracks as (track_id, cx, cy, status) rows."""

    frames: list[tuple[int, list[tuple[int, float, float, str]]]] = field(default_factory=list)
    person1: int | None = None
    person2: int | None = None

    def positions(self, track_id: int) -> dict[int, np.ndarray]:
        return {fi: np.array([cx, cy]) for fi, rows in self.frames
                for tid, cx, cy, _ in rows if tid == track_id}


def run_tracker(frames: Sequence[tuple[int, Sequence[Sequence[float]]]],
                config: TrackerConfig | None = None) -> TrackLog:
    """Track a whole stream of ``(frame_index, centroids)`` and resolve identities.

    Identities are chosen from every track that was ever confirmed, so a
    person who leaves late in the clip still counts.
    """
    tracker = Tracker(config or TrackerConfig())
    out = TrackLog()
    seen: dict[int, Track] = {}
    for fi, dets in frames:
        conf = tracker.step(fi, list(dets))
        for t in conf:
            seen[t.id] = t
        out.frames.append((fi, [(t.id, float(t.position[0]), float(t.position[1]), t.status.value)
                                for t in conf]))
    out.person1, out.person2 = person_identities(list(seen.values()))
    return out


def poses_from_tracks(log: TrackLog, keypoints: Sequence[KeypointFrame]) -> list[tuple[int, np.ndarray]]:
    """Attach estimator poses to the two identities by nearest centroid.

    Frames where either identity has no track position or fewer than two
    people were estimated are skipped. Returns ``(frame_index, (2, 12, 2))``.
    """
    p1 = log.positions(log.person1)
    p2 = log.positions(log.person2)
    out = []
    for kf in keypoints:
        if kf.index not in p1 or kf.index not in p2 or len(kf.people) < 2:
            continue
        centers = np.array([p.centroid(kf.width, kf.height) for p in kf.people])
        targets = np.stack([p1[kf.index], p2[kf.index]])
        cost = np.linalg.norm(targets[:, None, :] - centers[None, :, :], axis=2)
        pairs = dict(hungarian(cost))
        out.append((kf.index, np.stack([kf.people[pairs[0]].joints, kf.people[pairs[1]].joints])))
    return out
