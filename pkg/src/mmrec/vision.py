"""RGB pipeline: factorized convolution blocks and a toy 3D ConvNet over 16-frame clips."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from math import isqrt
from pathlib import Path

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    SgdConfig,
    activation_backward,
    as_tensor,
    conv_core,
    conv_core_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    tensor_from_json,
    tensor_to_json,
)

CLIP_LEN = 16


# -- factorized blocks ---------------------------------------------------------

FIVE_AS_TWO_THREES = "five_as_two_threes"
ASYMMETRIC_PAIR = "asymmetric_pair"


@dataclass(frozen=True)
class FactorizedBlock:
    """Two stacked 2-D convolutions standing in for one larger kernel."""

    mode: str
    specs: tuple
    n: int = 5

    def __post_init__(self):
        if len(self.specs) != 2:
            raise ValueError("a factorized block holds exactly two convolutions")
        shapes = [s.kernel.shape[2:] for s in self.specs]
        if self.mode == FIVE_AS_TWO_THREES:
            if shapes != [(3, 3), (3, 3)]:
                raise ShapeError(f"five_as_two_threes needs two 3x3 kernels, got {shapes}")
            object.__setattr__(self, "n", 5)
        elif self.mode == ASYMMETRIC_PAIR:
            if shapes != [(1, self.n), (self.n, 1)]:
                raise ShapeError(
                    f"asymmetric pair needs 1x{self.n} then {self.n}x1 kernels, got {shapes}")
        else:
            raise ValueError(f"unknown factorization mode {self.mode!r}")
        for s in self.specs:
            if s.padding != "valid" or s.stride != (1, 1):
                raise ValueError("factorized convolutions use valid padding and stride 1")

    @classmethod
    def five_as_two_threes(cls, first: ConvSpec, second: ConvSpec):
        return cls(FIVE_AS_TWO_THREES, (first, second))

    @classmethod
    def asymmetric_pair(cls, row: ConvSpec, col: ConvSpec):
        return cls(ASYMMETRIC_PAIR, (row, col), n=row.kernel.shape[-1])


def factorized_forward(block: FactorizedBlock, input) -> np.ndarray:
    x = as_tensor(input)
    if x.ndim != 3:
        raise ShapeError(f"expected (C, H, W) input, got rank {x.ndim}")
    small = [(ax, n) for ax, n in enumerate(x.shape[1:]) if n < block.n]
    if small:
        ax, n = small[0]
        raise ShapeError(f"spatial dim {ax} has size {n}; block needs at least {block.n}")
    for spec in block.specs:
        x = conv_forward(x, spec)
    return x


def multiply_count(kernel_h: int, kernel_w: int, factorized: bool, mode: str | None = None) -> int:
    """Multiplies per output element (per channel pair) for a conv kernel.

    With ``factorized`` the default is two 3x3 convolutions for a 5x5 kernel
    and a 1xw + hx1 pair otherwise; ``mode`` forces one or the other.
    """
    if kernel_h < 1 or kernel_w < 1:
        raise ValueError("kernel dims must be >= 1")
    if not factorized:
        return kernel_h * kernel_w
    if mode is None:
        mode = FIVE_AS_TWO_THREES if (kernel_h, kernel_w) == (5, 5) else ASYMMETRIC_PAIR
    if mode == FIVE_AS_TWO_THREES:
        if (kernel_h, kernel_w) != (5, 5):
            raise ValueError("two-3x3 factorization only replaces a 5x5 kernel")
        return 9 + 9
    if mode == ASYMMETRIC_PAIR:
        return kernel_h + kernel_w
    raise ValueError(f"unknown factorization mode {mode!r}")


# -- clips ---------------------------------------------------------------------

@dataclass(frozen=True)
class RgbClip:
    """``(16, C, H, W)`` frames with values clamped to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = as_tensor(self.data, "clip")
        if d.ndim != 4 or d.shape[0] != CLIP_LEN:
            raise ShapeError(f"clip must be ({CLIP_LEN}, C, H, W); got {d.shape}")
        object.__setattr__(self, "data", np.clip(d, 0.0, 1.0))


def video_to_clips(video) -> list[RgbClip]:
    """All 16-frame windows of a ``(T, C, H, W)`` video at stride 1."""
    v = as_tensor(video, "video")
    if v.ndim != 4:
        raise ShapeError(f"video must be (T, C, H, W); got {v.shape}")
    t = v.shape[0]
    if t < CLIP_LEN:
        raise ShapeError(f"video has {t} frames; at least {CLIP_LEN} are needed")
    return [RgbClip(v[k:k + CLIP_LEN]) for k in range(t - CLIP_LEN + 1)]


# -- toy 3D ConvNet -----------------------------------------------------------

@dataclass(frozen=True)
class C3DConfig:
    in_channels: int = 3
    height: int = 8
    width: int = 8
    conv_channels: tuple = (8, 16)
    fc_sizes: tuple = (64, 32)
    n_classes: int = 7
    aux_weight: float = 0.3


@dataclass(frozen=True)
class ClipFeatures:
    fc6: np.ndarray
    fc7: np.ndarray
    fc8: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class AuxClassifierOutput:
    probs: np.ndarray


_KEYS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc6_w", "fc6_b",
         "fc7_w", "fc7_b", "fc8_w", "fc8_b", "aux_w", "aux_b")


@dataclass
class C3DNet:
    """Two 3x3x3 conv blocks, global mean pool, fc6/fc7/fc8 and a softmax head.

    An auxiliary softmax head reads the pooled output of the first conv block.
    """

    config: C3DConfig
    params: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, config=C3DConfig()):
        c1, c2 = config.conv_channels
        f6, f7 = config.fc_sizes
        k = config.n_classes
        shapes = {
            "conv1_w": (c1, config.in_channels, 3, 3, 3), "conv1_b": (c1,),
            "conv2_w": (c2, c1, 3, 3, 3), "conv2_b": (c2,),
            "fc6_w": (f6, c2), "fc6_b": (f6,),
            "fc7_w": (f7, f6), "fc7_b": (f7,),
            "fc8_w": (k, f7), "fc8_b": (k,),
            "aux_w": (k, c1), "aux_b": (k,),
        }
        return cls(config, {name: np.zeros(s) for name, s in shapes.items()})

    @classmethod
    def init(cls, config=C3DConfig(), seed=0):
        net = cls.zeros(config)
        rng = np.random.default_rng(seed)
        for name in _KEYS:
            p = net.params[name]
            if name.endswith("_w"):
                fan_in = int(np.prod(p.shape[1:]))
                net.params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), p.shape)
        return net

    def to_json(self) -> dict:
        cfg = {k: list(v) if isinstance(v, tuple) else v for k, v in self.config.__dict__.items()}
        return {"kind": "c3d", "config": cfg,
                "params": {k: tensor_to_json(self.params[k]) for k in _KEYS}}

    @classmethod
    def from_json(cls, obj):
        cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in obj["config"].items()}
        return cls(C3DConfig(**cfg), {k: tensor_from_json(v) for k, v in obj["params"].items()})

    # forward pieces shared by the single-clip and whole-video paths
    def _conv_stack(self, x):
        """``x``: ``(N, C, T, H, W)`` -> (pre1, a1, pre2, a2)."""
        p = self.params
        z1 = conv_core(x, p["conv1_w"], (1, 1, 1)) + p["conv1_b"][:, None, None, None]
        a1 = np.maximum(z1, 0.0)
        z2 = conv_core(a1, p["conv2_w"], (1, 1, 1)) + p["conv2_b"][:, None, None, None]
        a2 = np.maximum(z2, 0.0)
        return z1, a1, z2, a2

    def _head(self, pooled):
        p = self.params
        fc6 = dense_forward(p["fc6_w"], p["fc6_b"], pooled, "relu")
        fc7 = dense_forward(p["fc7_w"], p["fc7_b"], fc6, "relu")
        fc8 = dense_forward(p["fc8_w"], p["fc8_b"], fc7, "identity")
        return fc6, fc7, fc8

    def _check_clips(self, clips):
        c = self.config
        if clips.shape[1:] != (CLIP_LEN, c.in_channels, c.height, c.width):
            raise ShapeError(
                f"clip shape {clips.shape[1:]} does not match network input "
                f"{(CLIP_LEN, c.in_channels, c.height, c.width)}")

    def loss_and_grads(self, clips, labels, l2_lambda=0.0):
        """Main + weighted auxiliary cross-entropy (+ L2 on weights) and gradients.

        ``clips``: ``(N, 16, C, H, W)``. The L2 term is reported in the loss; its
        gradient is left to :func:`mmrec.tensor.sgd_step`.
        """
        clips = np.asarray(clips, dtype=np.float64)
        self._check_clips(clips)
        p = self.params
        x = clips.transpose(0, 2, 1, 3, 4)
        z1, a1, z2, a2 = self._conv_stack(x)
        pooled = a2.mean(axis=(2, 3, 4))
        pooled1 = a1.mean(axis=(2, 3, 4))
        fc6, fc7, fc8 = self._head(pooled)
        aux_logits = dense_forward(p["aux_w"], p["aux_b"], pooled1)
        main_loss, d8 = softmax_cross_entropy(fc8, labels)
        aux_loss, daux = softmax_cross_entropy(aux_logits, labels)
        w_aux = self.config.aux_weight
        loss = main_loss + w_aux * aux_loss
        if l2_lambda:
            loss += l2_lambda * sum(float(np.sum(p[k] ** 2)) for k in _KEYS if k.endswith("_w"))

        g = {}
        d7, g["fc8_w"], g["fc8_b"] = dense_backward(p["fc8_w"], p["fc8_b"], fc7, d8)
        d6, g["fc7_w"], g["fc7_b"] = dense_backward(p["fc7_w"], p["fc7_b"], fc6, d7, "relu")
        dpool, g["fc6_w"], g["fc6_b"] = dense_backward(p["fc6_w"], p["fc6_b"], pooled, d6, "relu")
        daux = w_aux * daux
        dpool1, g["aux_w"], g["aux_b"] = dense_backward(p["aux_w"], p["aux_b"], pooled1, daux)

        da2 = np.broadcast_to(dpool[:, :, None, None, None] / np.prod(a2.shape[2:]), a2.shape)
        dz2 = activation_backward("relu", z2, a2, da2)
        g["conv2_b"] = dz2.sum(axis=(0, 2, 3, 4))
        da1, g["conv2_w"] = conv_core_backward(a1, p["conv2_w"], (1, 1, 1), "valid", dz2)
        da1 = da1 + dpool1[:, :, None, None, None] / np.prod(a1.shape[2:])
        dz1 = activation_backward("relu", z1, a1, da1)
        g["conv1_b"] = dz1.sum(axis=(0, 2, 3, 4))
        _, g["conv1_w"] = conv_core_backward(x, p["conv1_w"], (1, 1, 1), "valid", dz1)
        return loss, g

    def video_probs(self, video):
        """Per-clip probabilities for every stride-1 clip of ``video``, ``(T-15, K)``.

        Runs the conv stack once over the whole video; each clip's pooled
        feature is the mean over its own 12-step slice of the conv output,
        which is exactly what the single-clip forward computes.
        """
        v = np.clip(as_tensor(video, "video"), 0.0, 1.0)
        if v.ndim != 4 or v.shape[0] < CLIP_LEN:
            raise ShapeError(f"video must be (T>={CLIP_LEN}, C, H, W); got {v.shape}")
        self._check_clips(v[None, :CLIP_LEN])
        _, _, _, a2 = self._conv_stack(v.transpose(1, 0, 2, 3)[None])
        per_t = a2[0].mean(axis=(2, 3))  # (C2, T-4)
        span = CLIP_LEN - 4
        win = np.lib.stride_tricks.sliding_window_view(per_t, span, axis=1)
        pooled = win.mean(axis=2).T  # (T-15, C2)
        return softmax(self._head(pooled)[2])


def rgb_clip_features(clip: RgbClip, net: C3DNet) -> ClipFeatures:
    x = clip.data[None]
    net._check_clips(x)
    _, _, _, a2 = net._conv_stack(x.transpose(0, 2, 1, 3, 4))
    fc6, fc7, fc8 = net._head(a2.mean(axis=(2, 3, 4)))
    return ClipFeatures(fc6[0], fc7[0], fc8[0], softmax(fc8[0]))


def aux_classifier(clip: RgbClip, net: C3DNet) -> AuxClassifierOutput:
    x = clip.data[None]
    net._check_clips(x)
    _, a1, _, _ = net._conv_stack(x.transpose(0, 2, 1, 3, 4))
    logits = dense_forward(net.params["aux_w"], net.params["aux_b"], a1.mean(axis=(2, 3, 4)))
    return AuxClassifierOutput(softmax(logits[0]))


def video_probabilities(video, net: C3DNet) -> np.ndarray:
    """Per-video class probabilities: mean over all stride-1 clips."""
    return net.video_probs(video).mean(axis=0)


def train_c3d(videos, labels, config=C3DConfig(), epochs=30, batch_size=8,
              learning_rate=0.05, l2_lambda=1e-4, seed=0, clip_norm=5.0) -> C3DNet:
    """Minibatch SGD; each epoch draws one random clip per training video."""
    net = C3DNet.init(config, seed)
    rng = np.random.default_rng([seed, 1])
    labels = np.asarray(labels, dtype=np.int64)
    wcfg = SgdConfig(learning_rate, l2_lambda, seed)
    bcfg = SgdConfig(learning_rate, 0.0, seed)
    for _ in range(epochs):
        order = rng.permutation(len(videos))
        starts = [int(rng.integers(0, videos[i].shape[0] - CLIP_LEN + 1)) for i in order]
        for k in range(0, len(order), batch_size):
            idx = order[k:k + batch_size]
            clips = np.stack([np.clip(videos[i][s:s + CLIP_LEN], 0.0, 1.0)
                              for i, s in zip(idx, starts[k:k + batch_size])])
            _, grads = net.loss_and_grads(clips, labels[idx])
            grads = _clip_grads(grads, clip_norm)
            w = [n for n in _KEYS if n.endswith("_w")]
            b = [n for n in _KEYS if n.endswith("_b")]
            net.params.update(sgd_step({n: net.params[n] for n in w}, {n: grads[n] for n in w}, wcfg))
            net.params.update(sgd_step({n: net.params[n] for n in b}, {n: grads[n] for n in b}, bcfg))
    return net


def _clip_grads(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        return {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads


# -- video files ----------------------------------------------------------------

VIDEO_MAGIC = b"RGBV"
_HEADER = struct.Struct("<4sIII")


def write_video_bin(path, video):
    """Packed little-endian float32 video with a 16-byte header (magic, T, C, H*W).

    Frames must be square (H == W).
    """
    v = np.asarray(video, dtype=np.float32)
    t, c, h, w = v.shape
    if h != w:
        raise ShapeError("packed video format stores square frames only")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VIDEO_MAGIC, t, c, h * w))
        fh.write(np.ascontiguousarray(v).astype("<f4").tobytes())


def read_video_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, t, c, hw = _HEADER.unpack_from(raw)
    if magic != VIDEO_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    side = isqrt(hw)
    if side * side != hw:
        raise ValueError(f"{path}: H*W={hw} is not a square frame size")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != t * c * hw:
        raise ValueError(f"{path}: expected {t * c * hw} floats, found {body.size}")
    return body.reshape(t, c, side, side).astype(np.float64)


def write_video_json(path, video):
    Path(path).write_text(json.dumps(tensor_to_json(video)))


def read_video_json(path) -> np.ndarray:
    v = tensor_from_json(json.loads(Path(path).read_text()))
    if v.ndim != 4:
        raise ShapeError(f"{path}: video tensor must be (T, C, H, W)")
    return v


def load_video_dir(directory) -> dict:
    """All ``*.json`` and ``*.bin`` videos in a directory, keyed by file stem."""
    out = {}
    for f in sorted(Path(directory).iterdir()):
        if f.suffix == ".json":
            out[f.stem] = read_video_json(f)
        elif f.suffix == ".bin":
            out[f.stem] = read_video_bin(f)
    return out
