"""Set-level cross-validation for the per-frame and whole-sequence protocols."""
from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .features import (FeatureConfig, FeatureKind, ShortSequenceWarning, WindowSample, kinds_label,
                       ordered_kinds, per_frame_windows, whole_sequence_sample)
from .pose_core import InteractionLabel, InteractionSequence
from .svm import SvcConfig, train_multiclass

N_CLASSES = len(InteractionLabel)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PerFrame:
    window: int = 9
    name = "per-frame"

    def __post_init__(self):
        if self.window < 1:
            raise EvalError("window must be >= 1")


@dataclass(frozen=True)
class WholeSequence:
    anchors: int = 13
    name = "whole-sequence"

    def __post_init__(self):
        if self.anchors < 2:
            raise EvalError("anchors must be >= 2")


EvalProtocol = PerFrame | WholeSequence


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple[int, ...], ...]
    seed: int

    def fold_of(self, set_id: int) -> int:
        for k, f in enumerate(self.folds):
            if set_id in f:
                return k
        raise EvalError(f"set {set_id} is not in any fold")


def split_folds(set_ids: Iterable[int] = range(1, 22), seed: int = 0, n_folds: int = 5) -> FoldSplit:
    """Shuffle set ids with ``seed`` and cut them into contiguous folds.

    Sizes differ by at most one, larger folds first (21 sets -> 5, 4, 4, 4, 4).
    """
    ids = [int(s) for s in set_ids]
    if len(set(ids)) != len(ids):
        raise EvalError("duplicate set ids")
    if len(ids) < n_folds:
        raise EvalError(f"need at least {n_folds} set ids, got {len(ids)}")
    perm = np.random.default_rng(seed).permutation(sorted(ids))
    base, extra = divmod(len(ids), n_folds)
    folds, start = [], 0
    for k in range(n_folds):
        size = base + (1 if k < extra else 0)
        folds.append(tuple(int(s) for s in perm[start:start + size]))
        start += size
    return FoldSplit(tuple(folds), seed)


def confusion(truths: Sequence[int], predictions: Sequence[int]) -> np.ndarray:
    """8x8 counts, rows = truth, columns = prediction."""
    if len(truths) != len(predictions):
        raise EvalError("truths and predictions differ in length")
    m = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    for t, p in zip(truths, predictions):
        m[int(t), int(p)] += 1
    return m


def accuracies(cm: np.ndarray) -> tuple[list[float | None], float, float]:
    """Per-class accuracy (None for classes without samples), macro and overall."""
    rows = cm.sum(axis=1)
    per = [float(cm[k, k] / rows[k]) if rows[k] else None for k in range(N_CLASSES)]
    present = [a for a in per if a is not None]
    macro = float(np.mean(present)) if present else 0.0
    total = cm.sum()
    overall = float(np.trace(cm) / total) if total else 0.0
    return per, macro, overall


@dataclass
class FoldResult:
    fold: int
    test_sets: list[int]
    n_train: int
    n_test: int
    macro_accuracy: float
    overall_accuracy: float


@dataclass
class EvalReport:
    protocol: str
    frames: int
    features: list[str]
    per_class_accuracy: list[float | None]
    macro_accuracy: float
    overall_accuracy: float
    confusion: np.ndarray
    per_fold: list[FoldResult] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        d["classes"] = [lab.name for lab in InteractionLabel]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [lab.name for lab in InteractionLabel]
        w.writerow(["truth\\predicted"] + names)
        for name, row in zip(names, self.confusion.tolist()):
            w.writerow([name] + row)
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "accuracy"])
        for lab, acc in zip(InteractionLabel, self.per_class_accuracy):
            w.writerow([lab.name, "" if acc is None else repr(acc)])
        w.writerow(["macro", repr(self.macro_accuracy)])
        w.writerow(["overall", repr(self.overall_accuracy)])
        return buf.getvalue()


def build_samples(dataset: Sequence[InteractionSequence], protocol: EvalProtocol,
                  features: FeatureConfig) -> tuple[list[WindowSample], list[str]]:
    """Samples for every sequence plus the ids of sequences that were skipped."""
    samples: list[WindowSample] = []
    skipped: list[str] = []
    if isinstance(protocol, PerFrame):
        cfg = FeatureConfig(features.kinds, protocol.window, features.anchors, features.stride)
        for seq in dataset:
            if len(seq) < cfg.window:
                skipped.append(f"{seq.video_id} ({len(seq)} frames < window {cfg.window})")
                continue
            samples.extend(per_frame_windows(seq, cfg))
    else:
        cfg = FeatureConfig(features.kinds, features.window, protocol.anchors, features.stride)
        for seq in dataset:
            if len(seq) < 2:
                skipped.append(f"{seq.video_id} (single frame)")
                continue
            samples.append(whole_sequence_sample(seq, cfg))
    return samples, skipped


def _fit_predict(X_train, y_train, X_test, svc: SvcConfig) -> list[int]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train_multiclass(X_train, [InteractionLabel(int(v)) for v in y_train], svc)
    return [int(p) for p in model.predict_many(X_test)]


def run_protocol(dataset: Sequence[InteractionSequence], protocol: EvalProtocol,
                 features: FeatureConfig, svc: SvcConfig, split: FoldSplit,
                 shuffle_seed: int | None = None, jobs: int = 1) -> EvalReport:
    """Cross-validate over ``split``; counts are pooled over folds before scoring.

    With ``shuffle_seed`` set, training labels are permuted inside every fold
    (a chance-level control); test labels are left intact.
    """
    if not dataset:
        raise EvalError("empty dataset")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortSequenceWarning)
        samples, skipped = build_samples(dataset, protocol, features)
    if not samples:
        raise EvalError("no samples could be built from the dataset")
    X = np.stack([s.vector for s in samples])
    y = np.array([int(s.label) for s in samples])
    fold_of = np.array([split.fold_of(s.set_id) for s in samples])

    tasks = []
    for k in range(len(split.folds)):
        test = fold_of == k
        train = ~test
        if not test.any():
            raise EvalError(f"fold {k} (sets {list(split.folds[k])}) has no test samples")
        if not train.any():
            raise EvalError(f"fold {k} leaves no training samples")
        train_sets = {samples[i].set_id for i in np.flatnonzero(train)}
        if train_sets & set(split.folds[k]):
            raise EvalError(f"fold {k}: test sets leaked into training data")
        y_train = y[train]
        if shuffle_seed is not None:
            y_train = np.random.default_rng([shuffle_seed, k]).permutation(y_train)
        tasks.append((X[train], y_train, X[test], svc))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            preds = list(ex.map(_fit_predict, *zip(*tasks)))
    else:
        preds = [_fit_predict(*t) for t in tasks]

    total = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    per_fold = []
    for k, p in enumerate(preds):
        truth = y[fold_of == k]
        cm = confusion(truth, p)
        total += cm
        _, macro, overall = accuracies(cm)
        per_fold.append(FoldResult(k, sorted(split.folds[k]), len(tasks[k][1]), len(truth), macro, overall))
    per, macro, overall = accuracies(total)
    frames = protocol.window if isinstance(protocol, PerFrame) else protocol.anchors
    echo = {
        "svc": asdict(svc),
        "stride": features.stride,
        "folds": [list(f) for f in split.folds],
        "split_seed": split.seed,
        "shuffle_seed": shuffle_seed,
        "n_sequences": len(dataset),
        "n_samples": len(samples),
    }
    return EvalReport(protocol.name, frames, [k.name for k in ordered_kinds(features.kinds)],
                      per, macro, overall, total, per_fold, skipped, echo)


F = FeatureKind
DEFAULT_COMBOS: tuple[frozenset[FeatureKind], ...] = tuple(frozenset(c) for c in (
    {F.XY}, {F.DRJ}, {F.DOJ}, {F.JA}, {F.AD}, {F.VEL},
    {F.XY, F.DRJ}, {F.XY, F.DRJ, F.DOJ}, {F.XY, F.AD}, {F.XY, F.DRJ, F.DOJ, F.AD},
    {F.XY, F.DRJ, F.DOJ, F.VEL}, set(F),
))


@dataclass
class SweepRow:
    features: str
    per_frame: EvalReport
    whole_sequence: EvalReport


def sweep(dataset: Sequence[InteractionSequence], combos: Sequence[Iterable[FeatureKind]] = DEFAULT_COMBOS,
          protocols: tuple[PerFrame, WholeSequence] = (PerFrame(9), WholeSequence(13)),
          svc: SvcConfig = SvcConfig(), split: FoldSplit | None = None, stride: int = 1,
          jobs: int = 1) -> list[SweepRow]:
    """Evaluate each feature combination under both protocols, in the given order."""
    if not combos:
        raise EvalError("no feature combinations to sweep")
    split = split or split_folds(seed=0)
    pf, ws = protocols
    rows = []
    for kinds in combos:
        fc = FeatureConfig(frozenset(kinds), pf.window, ws.anchors, stride)
        rows.append(SweepRow(kinds_label(kinds),
                             run_protocol(dataset, pf, fc, svc, split, jobs=jobs),
                             run_protocol(dataset, ws, fc, svc, split, jobs=jobs)))
    return rows


def sweep_csv(rows: Sequence[SweepRow], metric: str = "macro_accuracy") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["features", "accuracy_per_frame", "accuracy_whole_sequence",
                "overall_per_frame", "overall_whole_sequence"])
    for r in rows:
        w.writerow([r.features, repr(getattr(r.per_frame, metric)), repr(getattr(r.whole_sequence, metric)),
                    repr(r.per_frame.overall_accuracy), repr(r.whole_sequence.overall_accuracy)])
    return buf.getvalue()
