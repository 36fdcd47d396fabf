"""Skeleton pipeline: spine-relative features, overlapped windows and a two-level LSTM."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import (
    LstmParams,
    ShapeError,
    SgdConfig,
    as_tensor,
    dense_backward,
    dense_forward,
    lstm_sequence_backward,
    lstm_sequence_forward,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    tensor_from_json,
    tensor_to_json,
)

# Kinect v1 joint order: 0 hip centre, 1 spine, 2 shoulder centre, 3 head, ...
DEFAULT_JOINTS = 20
DEFAULT_SPINE = 1
DEFAULT_HEAD = 3


@dataclass(frozen=True)
class SkeletonSequence:
    frames: np.ndarray  # (T, J, 3)
    spine_index: int = DEFAULT_SPINE
    head_index: int = DEFAULT_HEAD

    def __post_init__(self):
        f = as_tensor(self.frames, "joint coordinates")
        if f.ndim != 3 or f.shape[2] != 3 or f.shape[0] < 1:
            raise ShapeError(f"frames must be (T>=1, J, 3); got {f.shape}")
        j = f.shape[1]
        for name, idx in (("spine_index", self.spine_index), ("head_index", self.head_index)):
            if not 0 <= idx < j:
                raise ValueError(f"{name}={idx} out of range for {j} joints")
        object.__setattr__(self, "frames", f)

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SkeletonFeatures:
    """Per-frame ``[spine-relative coords (3J), pairwise distances (J(J-1)/2)]``."""

    data: np.ndarray  # (T, D)
    scale: float
    n_joints: int

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def feature_width(n_joints, relative=True, distances=True):
    return 3 * n_joints * relative + n_joints * (n_joints - 1) // 2 * distances


def preprocess_skeleton(seq: SkeletonSequence, relative=True, distances=True) -> SkeletonFeatures:
    """Spine-relative coordinates and pairwise joint distances, both divided by
    the median spine-to-head distance of the sequence."""
    f = seq.frames
    root = f[:, seq.spine_index:seq.spine_index + 1]
    rel = f - root
    scale = float(np.median(np.linalg.norm(rel[:, seq.head_index], axis=1)))
    if not scale > 0:
        raise ValueError("degenerate skeleton: spine-to-head distance is zero")
    parts = []
    if relative:
        parts.append(rel.reshape(len(f), -1) / scale)
    if distances:
        a, b = np.triu_indices(seq.n_joints, k=1)
        parts.append(np.linalg.norm(f[:, a] - f[:, b], axis=2) / scale)
    if not parts:
        raise ValueError("at least one feature part must be enabled")
    return SkeletonFeatures(np.concatenate(parts, axis=1), scale, seq.n_joints)


@dataclass(frozen=True)
class WindowingConfig:
    window_len: int = 256
    overlap: int = 128

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be positive")
        if not 0 <= self.overlap < self.window_len:
            raise ValueError("overlap must lie in [0, window_len)")

    @property
    def hop(self) -> int:
        return self.window_len - self.overlap


def window_count(n_frames, cfg: WindowingConfig) -> int:
    if n_frames <= cfg.window_len:
        return 1
    return 1 + -(-(n_frames - cfg.window_len) // cfg.hop)


def window_sequence(features, cfg: WindowingConfig = WindowingConfig()) -> np.ndarray:
    """``(n_windows, window_len, D)``; short tails are padded with the last frame."""
    data = features.data if isinstance(features, SkeletonFeatures) else np.asarray(features)
    t = data.shape[0]
    if t < 1:
        raise ShapeError("need at least one frame")
    n = window_count(t, cfg)
    idx = np.arange(n)[:, None] * cfg.hop + np.arange(cfg.window_len)[None, :]
    return data[np.minimum(idx, t - 1)]


# -- model ---------------------------------------------------------------------

@dataclass
class SkeletonNet:
    """LSTM -> LSTM -> final hidden state -> fc (lowest, relu) -> fc -> softmax.

    Inputs are standardized with the stored ``feature_mean``/``feature_std``.
    """

    lstm1: LstmParams
    lstm2: LstmParams
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None

    def __post_init__(self):
        d = self.lstm1.input_size
        if self.feature_mean is None:
            self.feature_mean = np.zeros(d)
        if self.feature_std is None:
            self.feature_std = np.ones(d)
        if self.lstm2.input_size != self.lstm1.hidden_size:
            raise ShapeError("second LSTM input must equal first LSTM hidden size")

    @property
    def input_size(self):
        return self.lstm1.input_size

    @property
    def n_classes(self):
        return self.fc2_w.shape[0]

    @classmethod
    def zeros(cls, input_size, hidden_sizes=(32, 32), fc_size=32, n_classes=7):
        h1, h2 = hidden_sizes
        return cls(LstmParams.zeros(input_size, h1), LstmParams.zeros(h1, h2),
                   np.zeros((fc_size, h2)), np.zeros(fc_size),
                   np.zeros((n_classes, fc_size)), np.zeros(n_classes))

    @classmethod
    def init(cls, input_size, hidden_sizes=(32, 32), fc_size=32, n_classes=7, seed=0):
        rng = np.random.default_rng(seed)
        h1, h2 = hidden_sizes
        return cls(LstmParams.init(input_size, h1, rng), LstmParams.init(h1, h2, rng),
                   rng.normal(0, np.sqrt(2.0 / h2), (fc_size, h2)), np.zeros(fc_size),
                   rng.normal(0, np.sqrt(1.0 / fc_size), (n_classes, fc_size)),
                   np.zeros(n_classes))

    def arrays(self) -> dict:
        out = {f"lstm1_{k}": v for k, v in self.lstm1.arrays().items()}
        out.update({f"lstm2_{k}": v for k, v in self.lstm2.arrays().items()})
        out.update(fc1_w=self.fc1_w, fc1_b=self.fc1_b, fc2_w=self.fc2_w, fc2_b=self.fc2_b)
        return out

    @classmethod
    def from_arrays(cls, a, feature_mean=None, feature_std=None):
        return cls(LstmParams(a["lstm1_w_x"], a["lstm1_w_h"], a["lstm1_b"]),
                   LstmParams(a["lstm2_w_x"], a["lstm2_w_h"], a["lstm2_b"]),
                   a["fc1_w"], a["fc1_b"], a["fc2_w"], a["fc2_b"], feature_mean, feature_std)

    def to_json(self) -> dict:
        arrays = dict(self.arrays(), feature_mean=self.feature_mean, feature_std=self.feature_std)
        return {"kind": "skeleton_lstm", "params": {k: tensor_to_json(v) for k, v in arrays.items()}}

    @classmethod
    def from_json(cls, obj):
        a = {k: tensor_from_json(v) for k, v in obj["params"].items()}
        return cls.from_arrays(a, a.pop("feature_mean"), a.pop("feature_std"))

    def _forward(self, windows):
        w = np.asarray(windows, dtype=np.float64)
        if w.ndim != 3 or w.shape[2] != self.input_size:
            raise ShapeError(
                f"window feature width {w.shape[-1]} != model input size {self.input_size}")
        x = (w - self.feature_mean) / self.feature_std
        hs1, cache1 = lstm_sequence_forward(self.lstm1, x)
        hs2, cache2 = lstm_sequence_forward(self.lstm2, hs1)
        last = hs2[:, -1]
        fc1 = dense_forward(self.fc1_w, self.fc1_b, last, "relu")
        logits = dense_forward(self.fc2_w, self.fc2_b, fc1)
        return logits, fc1, (cache1, cache2, hs2, last)

    def loss_and_grads(self, windows, labels):
        logits, fc1, (cache1, cache2, hs2, last) = self._forward(windows)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        g = {}
        dfc1, g["fc2_w"], g["fc2_b"] = dense_backward(self.fc2_w, self.fc2_b, fc1, dlogits)
        dlast, g["fc1_w"], g["fc1_b"] = dense_backward(self.fc1_w, self.fc1_b, last, dfc1, "relu")
        dhs2 = np.zeros_like(hs2)
        dhs2[:, -1] = dlast
        dhs1, g2 = lstm_sequence_backward(self.lstm2, cache2, dhs2)
        _, g1 = lstm_sequence_backward(self.lstm1, cache1, dhs1)
        g.update({f"lstm1_{k}": v for k, v in g1.items()})
        g.update({f"lstm2_{k}": v for k, v in g2.items()})
        return loss, g


def skeleton_classify(windows, model: SkeletonNet):
    """Return ``(probs, lowest_fc)``, each averaged over the sequence's windows."""
    logits, fc1, _ = model._forward(windows)
    return softmax(logits).mean(axis=0), fc1.mean(axis=0)


def skeleton_probs_many(window_sets, model: SkeletonNet, chunk=512) -> np.ndarray:
    """Mean window probabilities for each sequence, ``(n_sequences, K)``.

    All windows run through the network together; the per-sequence result
    equals :func:`skeleton_classify` on that sequence alone.
    """
    counts = [len(w) for w in window_sets]
    allw = np.concatenate(window_sets, axis=0)
    probs = np.concatenate([softmax(model._forward(allw[k:k + chunk])[0])
                            for k in range(0, len(allw), chunk)])
    bounds = np.cumsum([0] + counts)
    return np.stack([probs[a:b].mean(axis=0) for a, b in zip(bounds[:-1], bounds[1:])])


def train_skeleton_net(window_sets, labels, hidden_sizes=(32, 32), fc_size=32, n_classes=7,
                       epochs=30, batch_size=8, learning_rate=0.1, l2_lambda=1e-4, seed=0,
                       clip_norm=5.0) -> SkeletonNet:
    """Minibatch SGD; each epoch draws one window per training sequence.

    ``window_sets`` is a list of ``(n_windows, L, D)`` arrays.
    """
    d = window_sets[0].shape[2]
    model = SkeletonNet.init(d, hidden_sizes, fc_size, n_classes, seed)
    allw = np.concatenate(window_sets, axis=0).reshape(-1, d)
    model.feature_mean = allw.mean(axis=0)
    model.feature_std = np.maximum(allw.std(axis=0), 1e-6)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng([seed, 2])
    wcfg = SgdConfig(learning_rate, l2_lambda, seed)
    bcfg = SgdConfig(learning_rate, 0.0, seed)
    for _ in range(epochs):
        order = rng.permutation(len(window_sets))
        picks = [int(rng.integers(0, len(window_sets[i]))) for i in order]
        for k in range(0, len(order), batch_size):
            idx = order[k:k + batch_size]
            batch = np.stack([window_sets[i][p] for i, p in zip(idx, picks[k:k + batch_size])])
            _, grads = model.loss_and_grads(batch, labels[idx])
            norm = np.sqrt(sum(float(np.sum(v * v)) for v in grads.values()))
            if norm > clip_norm:
                grads = {n: v * (clip_norm / norm) for n, v in grads.items()}
            params = model.arrays()
            w = [n for n in params if not n.endswith("_b")]
            b = [n for n in params if n.endswith("_b")]
            new = sgd_step({n: params[n] for n in w}, {n: grads[n] for n in w}, wcfg)
            new.update(sgd_step({n: params[n] for n in b}, {n: grads[n] for n in b}, bcfg))
            model = SkeletonNet.from_arrays(new, model.feature_mean, model.feature_std)
    return model


# -- files -----------------------------------------------------------------------

def write_skeleton_json(path, seq: SkeletonSequence):
    obj = {"joints": seq.n_joints, "spine_index": seq.spine_index,
           "head_index": seq.head_index, "frames": seq.frames.tolist()}
    Path(path).write_text(json.dumps(obj))


def read_skeleton_json(path) -> SkeletonSequence:
    obj = json.loads(Path(path).read_text())
    frames = np.asarray(obj["frames"], dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1] != obj["joints"]:
        raise ShapeError(f"{path}: frames do not match joints={obj['joints']}")
    return SkeletonSequence(frames, obj["spine_index"], obj.get("head_index", DEFAULT_HEAD))


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".header.json")


def write_skeleton_csv(path, seq: SkeletonSequence, fmt="%.6f"):
    """T rows x 3J columns (x0,y0,z0,x1,...) plus a ``<stem>.header.json`` sidecar."""
    j = seq.n_joints
    header = ",".join(f"{a}{k}" for k in range(j) for a in "xyz")
    np.savetxt(path, seq.frames.reshape(len(seq.frames), -1), fmt=fmt, delimiter=",",
               header=header, comments="")
    _sidecar(path).write_text(json.dumps(
        {"joints": j, "spine_index": seq.spine_index, "head_index": seq.head_index}))


def read_skeleton_csv(path) -> SkeletonSequence:
    meta = json.loads(_sidecar(path).read_text())
    with open(path, newline="") as fh:
        first = next(csv.reader(fh))
    if len(first) != 3 * meta["joints"]:
        raise ShapeError(f"{path}: {len(first)} columns, expected {3 * meta['joints']}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    frames = data.reshape(len(data), meta["joints"], 3)
    return SkeletonSequence(frames, meta["spine_index"], meta.get("head_index", DEFAULT_HEAD))
