"""Audio front end: framing, DFT energy spectrum, mel filterbank and a binary voice head."""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .tensor import (
    ShapeError,
    SgdConfig,
    as_tensor,
    dense_backward,
    dense_forward,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    tensor_from_json,
    tensor_to_json,
)

ENERGY_FLOOR = 1e-10
SPECIAL, NOT_SPECIAL = 0, 1


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        s = as_tensor(self.samples, "samples").reshape(-1)
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int = 400
    hop: int = 160
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValueError("need 0 < hop <= frame_len")
        if self.window not in ("none", "hann"):
            raise ValueError(f"window must be 'none' or 'hann'; got {self.window!r}")


def hz_to_mel(g):
    g = np.asarray(g, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + g / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    out = 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=16)
def _dft_basis(n):
    # (r * i) mod n keeps the phase argument small and exact
    k = (np.arange(n)[:, None] * np.arange(n)[None, :]) % n
    ang = 2.0 * np.pi * k / n
    cos, sin = np.cos(ang), np.sin(ang)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def dft_energy(frame) -> np.ndarray:
    """``|U(r)|^2`` for ``U(r) = sum_i x(i) exp(-2j pi r i / n)``, r = 0..n-1.

    Direct O(n^2) evaluation. Accepts a single frame or a ``(F, n)`` stack.
    """
    x = as_tensor(frame, "frame")
    n = x.shape[-1] if x.ndim else 0
    if n < 1:
        raise ShapeError("frame must contain at least one sample")
    cos, sin = _dft_basis(n)
    re = x @ cos.T
    im = x @ sin.T
    return re * re + im * im


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters over the ``n_bins`` DFT bins of a frame.

    Filters are spaced evenly in mel between ``f_min`` and ``f_max``; bins
    above the Nyquist frequency get zero weight.
    """

    weights: np.ndarray  # (n_filters, n_bins)
    centers_hz: np.ndarray
    sample_rate: int
    f_min: float
    f_max: float

    @property
    def n_filters(self):
        return self.weights.shape[0]

    @property
    def n_bins(self):
        return self.weights.shape[1]

    @classmethod
    def build(cls, n_filters=26, n_bins=400, sample_rate=16000, f_min=0.0, f_max=None):
        f_max = sample_rate / 2 if f_max is None else f_max
        if not 0 <= f_min < f_max <= sample_rate / 2:
            raise ValueError("need 0 <= f_min < f_max <= sample_rate / 2")
        edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
        freqs = np.arange(n_bins) * sample_rate / n_bins
        freqs[freqs > sample_rate / 2] = -1.0  # mirror bins never fall inside a filter
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        w = np.clip(np.minimum(up, down), 0.0, None)
        sums = w.sum(axis=1)
        if np.any(sums <= 0):
            bad = int(np.argmax(sums <= 0))
            raise ValueError(
                f"mel filter {bad} covers no DFT bin; use more bins or fewer filters")
        centers = edges[1:-1]
        if np.any(np.diff(centers) <= 0):
            raise ValueError("filter centres must be strictly increasing")
        return cls(w, centers, sample_rate, float(f_min), float(f_max))


def mel_energies(spectrum, bank: MelFilterbank) -> np.ndarray:
    """``log(max(sum_bins weight * energy, 1e-10))`` per filter (batched over rows)."""
    s = as_tensor(spectrum, "spectrum")
    if s.shape[-1] != bank.n_bins:
        raise ShapeError(f"spectrum has {s.shape[-1]} bins, filterbank expects {bank.n_bins}")
    return np.log(np.maximum(s @ bank.weights.T, ENERGY_FLOOR))


def frame_signal(signal: AudioSignal, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    x = signal.samples
    if len(x) < spec.frame_len:
        raise ShapeError(f"signal has {len(x)} samples, shorter than one frame ({spec.frame_len})")
    n = 1 + (len(x) - spec.frame_len) // spec.hop
    idx = np.arange(n)[:, None] * spec.hop + np.arange(spec.frame_len)[None, :]
    frames = x[idx]
    if spec.window == "hann":
        frames = frames * np.hanning(spec.frame_len)
    return frames


def log_mel_features(signal: AudioSignal, spec: FrameSpec, bank: MelFilterbank) -> np.ndarray:
    """Frames x filters matrix of log mel energies."""
    return mel_energies(dft_energy(frame_signal(signal, spec)), bank)


# -- voice head -------------------------------------------------------------------

@dataclass
class AudioHead:
    """Dense + softmax over {special, not_special} on standardized mean log-mel."""

    weights: np.ndarray  # (2, n_filters)
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def zeros(cls, n_filters=26):
        return cls(np.zeros((2, n_filters)), np.zeros(2), np.zeros(n_filters), np.ones(n_filters))

    def probs(self, pooled):
        x = (np.asarray(pooled) - self.mean) / self.scale
        return softmax(dense_forward(self.weights, self.bias, x))

    def to_json(self):
        return {"kind": "audio_head", **{k: tensor_to_json(getattr(self, k))
                                         for k in ("weights", "bias", "mean", "scale")}}

    @classmethod
    def from_json(cls, obj):
        return cls(*(tensor_from_json(obj[k]) for k in ("weights", "bias", "mean", "scale")))


def pooled_features(signal, spec=FrameSpec(), bank=None):
    bank = bank or MelFilterbank.build(n_bins=spec.frame_len, sample_rate=signal.sample_rate)
    return log_mel_features(signal, spec, bank).mean(axis=0)


def train_audio_head(pooled, special, epochs=200, learning_rate=0.5, l2_lambda=1e-4, seed=0):
    """Full-batch gradient descent; ``special`` holds booleans per signal."""
    x = np.asarray(pooled, dtype=np.float64)
    labels = np.where(np.asarray(special, dtype=bool), SPECIAL, NOT_SPECIAL)
    head = AudioHead.zeros(x.shape[1])
    head.mean = x.mean(axis=0)
    head.scale = np.maximum(x.std(axis=0), 1e-6)
    xs = (x - head.mean) / head.scale
    wcfg = SgdConfig(learning_rate, l2_lambda, seed)
    bcfg = SgdConfig(learning_rate, 0.0, seed)
    for _ in range(epochs):
        logits = dense_forward(head.weights, head.bias, xs)
        _, d = softmax_cross_entropy(logits, labels)
        _, dw, db = dense_backward(head.weights, head.bias, xs, d)
        head.weights = sgd_step([head.weights], [dw], wcfg)[0]
        head.bias = sgd_step([head.bias], [db], bcfg)[0]
    return head


def audio_recognize(signal: AudioSignal, spec: FrameSpec, bank: MelFilterbank,
                    head: AudioHead, threshold=0.5):
    """Return ``(probs over [special, not_special], detected)``; detected iff p_special >= threshold."""
    pooled = log_mel_features(signal, spec, bank).mean(axis=0)
    p = head.probs(pooled)
    return p, bool(p[SPECIAL] >= threshold)


# -- files --------------------------------------------------------------------------

def write_wav(path, signal: AudioSignal):
    pcm = np.round(np.clip(signal.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(signal.sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioSignal:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return AudioSignal(np.frombuffer(raw, dtype="<i2") / 32767.0, rate)


def read_audio_json(path) -> AudioSignal:
    obj = json.loads(Path(path).read_text())
    return AudioSignal(np.asarray(obj["samples"], dtype=np.float64), obj.get("sample_rate", 16000))


def write_audio_json(path, signal: AudioSignal):
    Path(path).write_text(json.dumps(
        {"sample_rate": signal.sample_rate, "samples": signal.samples.tolist()}))


def write_features_csv(path, features):
    """One row per frame, one column per mel filter."""
    f = np.atleast_2d(features)
    header = ",".join(f"mel{k}" for k in range(f.shape[1]))
    np.savetxt(path, f, delimiter=",", header=header, comments="", fmt="%.10g")
