"""Fusion: feature concatenation + softmax, alpha-weighted probabilities,
one-vs-one SVM re-fusion and the image/voice mutual-verification table."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor import ShapeError, argmax_decision, as_tensor, sigmoid, softmax

SOURCES = ("image", "speech", "skeleton", "fused")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    source: str = "fused"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        object.__setattr__(self, "values", as_tensor(self.values, "feature").reshape(-1))

    def __len__(self):
        return len(self.values)


def _values(v):
    return v.values if isinstance(v, FeatureVector) else as_tensor(v, "feature").reshape(-1)


def concat_features(q, w) -> FeatureVector:
    return FeatureVector(np.concatenate([_values(q), _values(w)]), "fused")


def softmax_classify(s, weights):
    """Logits ``c_k . s`` for each class row of ``weights``; returns ``(probs, index)``.

    ``index`` is 0-based; class label ``f`` in 1..n is ``index + 1``.
    """
    x = _values(s)
    c = as_tensor(weights, "weights")
    if c.ndim != 2 or c.shape[1] != len(x):
        raise ShapeError(f"class weights must be (n_classes, {len(x)}); got {c.shape}")
    probs = softmax(c @ x)
    return probs, argmax_decision(probs)


def _check_prob(p, name):
    p = as_tensor(p, name)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} is not a probability vector")
    return p


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def alpha_fuse(p_rgb, p_skel, cfg: FusionConfig) -> np.ndarray:
    """``alpha * p_rgb + (1 - alpha) * p_skel``; rows of 2-D inputs fuse independently."""
    a = np.asarray(p_rgb, dtype=np.float64)
    b = np.asarray(p_skel, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"probability shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        _check_prob(a, "p_rgb")
        _check_prob(b, "p_skel")
    return cfg.alpha * a + (1.0 - cfg.alpha) * b


# -- one-vs-one SVM ---------------------------------------------------------------

@dataclass(frozen=True)
class SvmConfig:
    epochs: int = 2000
    learning_rate: float = 0.01
    l2_lambda: float = 0.001
    calibration_steps: int = 100
    seed: int = 0

    def hash(self) -> str:
        text = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SvmFusionModel:
    n_classes: int
    pairs: tuple  # ((i, j), ...) with i < j
    weights: np.ndarray  # (P, d)
    biases: np.ndarray  # (P,)
    calibration: np.ndarray  # (P, 2) rows of (A, B): p = 1 / (1 + exp(A f + B))
    config: SvmConfig = SvmConfig()

    @property
    def n_features(self):
        return self.weights.shape[1]

    def decision_values(self, x):
        return np.asarray(x) @ self.weights.T + self.biases

    def to_json(self) -> dict:
        return {
            "kind": "ovo_svm",
            "n_classes": self.n_classes,
            "pairs": [list(p) for p in self.pairs],
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "calibration": self.calibration.tolist(),
            "seed": self.config.seed,
            "config": self.config.__dict__,
            "config_hash": self.config.hash(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["n_classes"], tuple(tuple(p) for p in obj["pairs"]),
                   np.asarray(obj["weights"], dtype=np.float64),
                   np.asarray(obj["biases"], dtype=np.float64),
                   np.asarray(obj["calibration"], dtype=np.float64),
                   SvmConfig(**obj["config"]))


def train_linear_svm(x, y, epochs=2000, learning_rate=0.01, l2_lambda=0.001):
    """Full-batch subgradient descent on ``l2 * |w|^2 + mean(hinge(y (w.x + b)))``.

    ``y`` holds +1/-1 labels. Returns ``(w, b)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        active = y * (x @ w + b) < 1.0
        gw = 2.0 * l2_lambda * w - (y[active] @ x[active]) / n
        gb = -y[active].sum() / n
        w = w - learning_rate * gw
        b = b - learning_rate * gb
    return w, b


def platt_calibrate(dec, y, max_iter=100):
    """Fit ``(A, B)`` so that ``P(y=+1 | f) = 1 / (1 + exp(A f + B))``.

    Newton's method with backtracking on the regularized-target log-likelihood.
    """
    dec = np.asarray(dec, dtype=np.float64)
    pos = np.asarray(y) > 0
    n1, n0 = int(pos.sum()), int((~pos).sum())
    t = np.where(pos, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))
    a, b = 0.0, np.log((n0 + 1.0) / (n1 + 1.0))

    def objective(a, b):
        z = dec * a + b
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                     (t - 1.0) * z + np.log1p(np.exp(-np.abs(z))))))

    fval = objective(a, b)
    for _ in range(max_iter):
        z = dec * a + b
        p = sigmoid(-z)  # model probability of y = +1
        d2 = p * (1.0 - p)
        h11 = np.sum(dec * dec * d2) + 1e-12
        h22 = np.sum(d2) + 1e-12
        h21 = np.sum(dec * d2)
        d1 = t - p
        g1, g2 = np.sum(dec * d1), np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break
    return a, b


def _as_matrix(features):
    rows = [_values(f) for f in features]
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ShapeError("all feature vectors must have the same length")
    return np.stack(rows)


def svm_fuse_train(features, labels, k: int, config: SvmConfig = SvmConfig()) -> SvmFusionModel:
    """One linear SVM per class pair plus a sigmoid calibration per pair."""
    x = _as_matrix(features)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=k)
    if len(counts) > k:
        raise ValueError(f"labels exceed class count {k}")
    short = [c for c in range(k) if counts[c] < 2]
    if short:
        raise ValueError(f"classes {short} have fewer than 2 samples")
    pairs = tuple(combinations(range(k), 2))
    ws, bs, cal = [], [], []
    for i, j in pairs:
        mask = (labels == i) | (labels == j)
        y = np.where(labels[mask] == i, 1.0, -1.0)
        w, b = train_linear_svm(x[mask], y, config.epochs, config.learning_rate, config.l2_lambda)
        ws.append(w)
        bs.append(b)
        cal.append(platt_calibrate(x[mask] @ w + b, y, config.calibration_steps))
    return SvmFusionModel(k, pairs, np.array(ws), np.array(bs), np.array(cal), config)


def pairwise_probabilities(model: SvmFusionModel, x) -> np.ndarray:
    """Calibrated ``P(class i | pair (i, j))`` for every pair, shape ``(..., P)``."""
    f = model.decision_values(x)
    return sigmoid(-(model.calibration[:, 0] * f + model.calibration[:, 1]))


def couple_pairwise(pair_probs, pairs, k) -> np.ndarray:
    """Normalized vote sum: class i collects p_ij from each of its pairs."""
    p = np.asarray(pair_probs, dtype=np.float64)
    scores = np.zeros(p.shape[:-1] + (k,))
    for m, (i, j) in enumerate(pairs):
        scores[..., i] += p[..., m]
        scores[..., j] += 1.0 - p[..., m]
    return scores / scores.sum(axis=-1, keepdims=True)


def svm_fuse_predict(model: SvmFusionModel, feature) -> np.ndarray:
    x = _values(feature)
    if len(x) != model.n_features:
        raise ShapeError(f"feature length {len(x)} != trained length {model.n_features}")
    return couple_pairwise(pairwise_probabilities(model, x), model.pairs, model.n_classes)


# -- mutual verification ------------------------------------------------------------

class Outcome(enum.Enum):
    YIELD = "Yield"
    NO_YIELD = "NoYield"
    HUMAN_REVIEW = "HumanReview"
    NO_PEDESTRIAN = "NoPedestrian"


@dataclass(frozen=True)
class FusionDecision:
    outcome: Outcome
    image_detected: bool
    voice_detected: bool


_TABLE = {
    (True, True): Outcome.YIELD,
    (True, False): Outcome.NO_YIELD,
    (False, True): Outcome.HUMAN_REVIEW,
    (False, False): Outcome.NO_PEDESTRIAN,
}


def decision_fusion(image_detected: bool, voice_detected: bool) -> FusionDecision:
    """Cross-check the image and voice detectors for a special pedestrian.

    Both detect -> yield. Image only -> the pedestrian is not on special duty,
    no need to yield. Voice only -> refer to a human. Neither -> nobody to
    avoid.
    """
    key = (bool(image_detected), bool(voice_detected))
    return FusionDecision(_TABLE[key], *key)


def detect(prob: float, threshold: float = 0.5) -> bool:
    return bool(prob >= threshold)


def write_fusion_csv(path, rows):
    """Rows of ``(video_id, probs, FusionDecision | str)``."""
    rows = list(rows)
    k = len(rows[0][1]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id"] + [f"p{c}" for c in range(k)] + ["decision"])
        for vid, probs, dec in rows:
            label = dec.outcome.value if isinstance(dec, FusionDecision) else str(dec)
            w.writerow([vid] + [repr(float(p)) for p in probs] + [label])


def read_fusion_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(r[0], [float(v) for v in r[1:-1]], r[-1]) for r in reader]
