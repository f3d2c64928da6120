"""Soft-margin C-SVC with an RBF kernel, trained by SMO, plus one-vs-one voting.

The binary solver minimizes the dual

    f(alpha) = 1/2 alpha^T Q alpha - e^T alpha,   Q_ij = y_i y_j K(x_i, x_j)
    s.t. 0 <= alpha_i <= C,  y^T alpha = 0

choosing at each step the maximal violating pair and solving the
two-variable subproblem in closed form.
"""
from __future__ import annotations

import itertools
import json
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .pose_core import InteractionLabel

FORMAT = "interrec.svc"
FORMAT_VERSION = 1
ALPHA_EPS = 1e-8


class SvmError(ValueError):
    pass


class DegenerateTraining(SvmError):
    pass


class NonConvergenceWarning(UserWarning):
    pass


class OmittedPairWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SvcConfig:
    c: float = 8.0
    gamma: float = 0.0625
    tol: float = 1e-3
    max_passes: int = 1000     # iteration cap is max_passes * n_samples
    seed: int = 0
    cache_mb: float = 512.0
    standardize: bool = False

    def __post_init__(self):
        if not self.c > 0:
            raise SvmError("c must be > 0")
        if not self.gamma > 0:
            raise SvmError("gamma must be > 0")
        if not self.tol > 0:
            raise SvmError("tol must be > 0")
        if self.max_passes < 1:
            raise SvmError("max_passes must be >= 1")


def rbf(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise SvmError(f"length mismatch: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


class _KernelRows:
    """Kernel column access: a full matrix when it fits the budget, else an LRU of rows."""

    def __init__(self, X: np.ndarray, gamma: float, cache_mb: float, full: np.ndarray | None = None):
        self.X = X
        self.gamma = gamma
        n = len(X)
        self.diag = np.ones(n)
        if full is None and n * n * 8 <= cache_mb * 2**20:
            full = rbf_matrix(X, X, gamma)
        self.full = full
        self.capacity = max(2, int(cache_mb * 2**20 // max(8 * n, 1)))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self._rows.get(i)
        if r is None:
            r = rbf_matrix(self.X[i:i + 1], self.X, self.gamma)[0]
            self._rows[i] = r
            if len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
        else:
            self._rows.move_to_end(i)
        return r


@dataclass
class BinaryModel:
    support_vectors: np.ndarray   # (n_sv, d)
    coef: np.ndarray              # alpha_i * y_i
    bias: float
    class_pair: tuple[int, int]   # (+1 class, -1 class) as label ordinals
    gamma: float
    converged: bool = True
    iterations: int = 0

    def decision(self, X: np.ndarray) -> np.ndarray:
        if len(self.coef) == 0:
            return np.full(len(X), self.bias)
        return rbf_matrix(X, self.support_vectors, self.gamma) @ self.coef + self.bias


@dataclass
class SmoResult:
    """Full dual solution, kept for diagnostics and tests."""

    alpha: np.ndarray
    grad: np.ndarray
    rho: float
    iterations: int
    converged: bool


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise SvmError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise SvmError("features must be finite (NaN/inf found)")
    if not np.all((y == 1) | (y == -1)):
        raise SvmError("binary labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateTraining("binary training needs samples of both signs")
    return X, y


def smo_solve(X, y, config: SvcConfig, kernel: np.ndarray | None = None) -> SmoResult:
    """Run SMO on (X, y); ``kernel`` may supply a precomputed Gram matrix."""
    X, y = _check_xy(X, y)
    n = len(y)
    C = config.c
    K = _KernelRows(X, config.gamma, config.cache_mb, kernel)
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = config.max_passes * n
    it = 0
    converged = False
    pos = y > 0
    while it < max_iter:
        # I_up: alpha can move so that y*alpha grows; I_low: the opposite
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        yG = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        j = int(np.argmin(np.where(low, yG, np.inf)))
        if yG[i] - yG[j] <= config.tol:
            converged = True
            break
        Ki, Kj = K.row(i), K.row(j)
        ai_old, aj_old = alpha[i], alpha[j]
        quad = K.diag[i] + K.diag[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = 1e-12
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        # G += Q[:, i] dai + Q[:, j] daj with Q[:, k] = y * y_k * K[:, k]
        G += y * (y[i] * (ai - ai_old) * Ki + y[j] * (aj - aj_old) * Kj)
        it += 1
    rho = _rho(alpha, G, y, C)
    return SmoResult(alpha, G, rho, it, converged)


def _rho(alpha, G, y, C) -> float:
    yG = y * G
    at_ub = alpha >= C
    at_lb = alpha <= 0
    free = ~(at_ub | at_lb)
    if free.any():
        return float(yG[free].mean())
    # bounds on rho from the KKT conditions of bounded variables
    upper_side = (at_ub & (y < 0)) | (at_lb & (y > 0))
    lower_side = (at_ub & (y > 0)) | (at_lb & (y < 0))
    ub = yG[upper_side].min() if upper_side.any() else np.inf
    lb = yG[lower_side].max() if lower_side.any() else -np.inf
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return float((ub + lb) / 2)


def dual_objective(alpha, X, y, gamma: float) -> float:
    """Maximization form: sum(alpha) - 1/2 alpha^T Q alpha."""
    a = np.asarray(alpha, dtype=float) * np.asarray(y, dtype=float)
    K = rbf_matrix(X, X, gamma)
    return float(np.sum(alpha) - 0.5 * a @ K @ a)


def train_binary(X, y, config: SvcConfig, class_pair: tuple[int, int] = (1, -1),
                 kernel: np.ndarray | None = None) -> BinaryModel:
    X = np.asarray(X, dtype=float)
    res = smo_solve(X, y, config, kernel)
    if not res.converged:
        warnings.warn(f"SMO hit the iteration cap ({res.iterations}) before reaching tol",
                      NonConvergenceWarning, stacklevel=2)
    keep = res.alpha >= ALPHA_EPS
    y = np.asarray(y, dtype=float)
    return BinaryModel(X[keep].copy(), (res.alpha * y)[keep], -res.rho, tuple(class_pair),
                       config.gamma, res.converged, res.iterations)


def decision_value(model: BinaryModel, x) -> float:
    x = np.asarray(x, dtype=float)
    d = model.support_vectors.shape[1] if len(model.coef) else len(x)
    if x.shape != (d,):
        raise SvmError(f"expected a {d}-vector, got shape {x.shape}")
    return float(model.decision(x[None])[0])


# --------------------------------------------------------------------------
# multiclass

@dataclass
class MulticlassModel:
    binaries: list[BinaryModel]
    classes: list[InteractionLabel]
    feature_dim: int
    config: SvcConfig
    scale_mean: np.ndarray | None = None
    scale_std: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def _prep(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise SvmError(f"expected {self.feature_dim} features, got {X.shape[1]}")
        if self.scale_mean is not None:
            X = (X - self.scale_mean) / self.scale_std
        return X

    def votes(self, X) -> np.ndarray:
        """(n, n_labels) vote counts indexed by label ordinal."""
        X = self._prep(X)
        v = np.zeros((len(X), len(InteractionLabel)), dtype=int)
        for b in self.binaries:
            pos = b.decision(X) >= 0
            v[pos, b.class_pair[0]] += 1
            v[~pos, b.class_pair[1]] += 1
        return v

    def predict_many(self, X) -> list[InteractionLabel]:
        # argmax returns the first maximum, i.e. the smallest ordinal on ties
        return [InteractionLabel(int(k)) for k in np.argmax(self.votes(X), axis=1)]


def train_multiclass(X, labels: Sequence[InteractionLabel], config: SvcConfig,
                     classes: Sequence[InteractionLabel] | None = None) -> MulticlassModel:
    """One binary C-SVC per label pair, each trained on that pair's samples only."""
    X = np.asarray(X, dtype=float)
    lab = np.array([int(l) for l in labels])
    if X.ndim != 2 or len(X) != len(lab):
        raise SvmError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise SvmError("features must be finite (NaN/inf found)")
    if classes is None:
        classes = sorted({InteractionLabel(l) for l in lab})
    classes = sorted(InteractionLabel(c) for c in classes)
    if len(classes) < 2:
        raise DegenerateTraining("need at least two distinct labels")
    mean = std = None
    if config.standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        X = (X - mean) / std
    gram = None
    if len(X) ** 2 * 8 <= config.cache_mb * 2**20:
        gram = rbf_matrix(X, X, config.gamma)
    binaries, notes = [], []
    for a, b in itertools.combinations(classes, 2):
        idx = np.flatnonzero((lab == a) | (lab == b))
        ya = (lab[idx] == a).sum()
        if ya == 0 or ya == len(idx):
            msg = f"pair {a.name}/{b.name} omitted: one side has no samples"
            warnings.warn(msg, OmittedPairWarning, stacklevel=2)
            notes.append(msg)
            continue
        y = np.where(lab[idx] == a, 1.0, -1.0)
        sub = gram[np.ix_(idx, idx)] if gram is not None else None
        binaries.append(train_binary(X[idx], y, config, (int(a), int(b)), kernel=sub))
    if not binaries:
        raise DegenerateTraining("every class pair was omitted")
    return MulticlassModel(binaries, list(classes), X.shape[1], config, mean, std, notes)


def predict(model: MulticlassModel, x) -> InteractionLabel:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise SvmError("predict takes a single feature vector")
    return model.predict_many(x[None])[0]


# --------------------------------------------------------------------------
# persistence

def model_to_dict(model: MulticlassModel) -> dict:
    def arr(a):
        return None if a is None else np.asarray(a, dtype=float).tolist()

    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "classes": [c.name for c in model.classes],
        "feature_dim": model.feature_dim,
        "scale_mean": arr(model.scale_mean),
        "scale_std": arr(model.scale_std),
        "binaries": [
            {
                "class_pair": [InteractionLabel(b.class_pair[0]).name, InteractionLabel(b.class_pair[1]).name],
                "bias": float(b.bias),
                "gamma": float(b.gamma),
                "converged": b.converged,
                "iterations": b.iterations,
                "coef": arr(b.coef),
                "support_vectors": arr(b.support_vectors),
            }
            for b in model.binaries
        ],
    }


def model_from_dict(d: dict) -> MulticlassModel:
    if d.get("format") != FORMAT:
        raise SvmError(f"not a {FORMAT} model file")
    if d.get("version") != FORMAT_VERSION:
        raise SvmError(f"unsupported model version {d.get('version')!r}")
    dim = int(d["feature_dim"])
    bins = []
    for b in d["binaries"]:
        sv = np.array(b["support_vectors"], dtype=float).reshape(-1, dim)
        pair = tuple(int(InteractionLabel[n]) for n in b["class_pair"])
        bins.append(BinaryModel(sv, np.array(b["coef"], dtype=float), float(b["bias"]), pair,
                                float(b["gamma"]), bool(b["converged"]), int(b["iterations"])))

    def arr(a):
        return None if a is None else np.array(a, dtype=float)

    return MulticlassModel(bins, [InteractionLabel[n] for n in d["classes"]], dim,
                           SvcConfig(**d["config"]), arr(d.get("scale_mean")), arr(d.get("scale_std")))


def save_model(model: MulticlassModel, fh) -> None:
    json.dump(model_to_dict(model), fh, indent=1)
    fh.write("\n")


def load_model(fh) -> MulticlassModel:
    return model_from_dict(json.load(fh))
