"""Synthetic action dataset: 7 classes, ~300-frame videos, splits S1-S4.

Class identity is split across modalities on purpose. RGB shows a colour and
motion signature only for ``rgb_classes``; every other class renders with one
shared appearance. The skeleton carries a joint-motion signature only for
``skeleton_classes``. A fused model can therefore beat either modality alone.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio import AudioSignal, read_wav, write_wav
from ..skeleton import SkeletonSequence, read_skeleton_csv, write_skeleton_csv
from ..vision import read_video_bin, write_video_bin

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_videos: int = 386
    n_classes: int = 7
    seed: int = 0
    frames_mean: float = 300.0
    frames_std: float = 30.0
    frames_min: int = 64
    frames_max: int = 400
    n_splits: int = 4
    image_size: int = 8
    channels: int = 3
    n_joints: int = 20
    rgb_classes: tuple = (4, 5, 6)
    skeleton_classes: tuple = (0, 1, 2, 3)
    special_classes: tuple = (6,)
    audio: bool = True
    audio_seconds: float = 0.5
    sample_rate: int = 16000
    noise: float = 0.05

    def __post_init__(self):
        if self.n_videos < self.n_classes * self.n_splits:
            raise ValueError("need at least one video per class per split")
        if self.frames_min < 16 or self.frames_max < self.frames_min:
            raise ValueError("frame bounds must satisfy 16 <= frames_min <= frames_max")
        for name in ("rgb_classes", "skeleton_classes", "special_classes"):
            if any(not 0 <= c < self.n_classes for c in getattr(self, name)):
                raise ValueError(f"{name} has a class outside 0..{self.n_classes - 1}")
        if self.n_joints != 20:
            raise ValueError("the synthetic skeleton uses the 20-joint Kinect layout")

    @property
    def split_names(self):
        return [f"S{k + 1}" for k in range(self.n_splits)]

    def to_json(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()})


# -- analytic bounds ----------------------------------------------------------------

def observation_groups(n_classes, visible):
    """Classes a modality cannot tell apart share one group."""
    groups = [[c] for c in range(n_classes) if c in visible]
    blind = [c for c in range(n_classes) if c not in visible]
    return groups + ([blind] if blind else [])


def accuracy_bound(n_classes, visible) -> float:
    """Best achievable accuracy (uniform classes) when ``visible`` classes are
    perfectly identifiable and the rest look alike."""
    return len(observation_groups(n_classes, set(visible))) / n_classes


# -- generator ----------------------------------------------------------------------

# Kinect v1 20-joint template in metres: x right, y up, z towards camera
_TEMPLATE = np.array([
    [0.00, 0.00, 0.0], [0.00, 0.25, 0.0], [0.00, 0.50, 0.0], [0.00, 0.68, 0.0],
    [-0.18, 0.47, 0.0], [-0.30, 0.25, 0.0], [-0.35, 0.03, 0.0], [-0.37, -0.05, 0.0],
    [0.18, 0.47, 0.0], [0.30, 0.25, 0.0], [0.35, 0.03, 0.0], [0.37, -0.05, 0.0],
    [-0.10, -0.05, 0.0], [-0.12, -0.45, 0.0], [-0.12, -0.85, 0.0], [-0.12, -0.92, 0.08],
    [0.10, -0.05, 0.0], [0.12, -0.45, 0.0], [0.12, -0.85, 0.0], [0.12, -0.92, 0.08],
])
_GROUPS = [(9, 10, 11), (5, 6, 7), (13, 14, 15, 17, 18, 19), (2, 3, 4, 8)]


def _palette(m, count):
    phase = 2 * np.pi * (m / count + np.array([0.0, 1 / 3, 2 / 3]))
    return 0.5 + 0.45 * np.cos(phase)


def _render_rgb(spec, label, frames, rng):
    visible = sorted(spec.rgb_classes)
    if label in visible:
        m = visible.index(label)
        color = _palette(m, len(visible))
        omega = 0.08 + 0.06 * m
    else:
        color = np.full(3, 0.5)
        omega = 0.04
    if spec.channels != 3:
        color = np.resize(color, spec.channels)
    s = spec.image_size
    t = np.arange(frames)[:, None, None]
    phase = rng.uniform(0, 2 * np.pi)
    c = (s - 1) / 2
    cx = c + 0.25 * s * np.cos(omega * t + phase)
    cy = c + 0.25 * s * np.sin(omega * t + phase)
    yy, xx = np.mgrid[0:s, 0:s]
    blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * (0.15 * s) ** 2))  # (T, s, s)
    video = 0.1 + color[None, :, None, None] * blob[:, None]
    video = video + rng.normal(0, spec.noise, video.shape)
    return np.clip(video, 0.0, 1.0)


def _render_skeleton(spec, label, frames, rng):
    visible = sorted(spec.skeleton_classes)
    t = np.arange(frames)[:, None]
    pose = np.broadcast_to(_TEMPLATE, (frames, 20, 3)).copy()
    phase = rng.uniform(0, 2 * np.pi)
    if label in visible:
        m = visible.index(label)
        joints = list(_GROUPS[m % len(_GROUPS)])
        freq = (0.05 + 0.03 * (m // len(_GROUPS))) * rng.uniform(0.9, 1.1)
        wave_ = 0.15 * np.sin(2 * np.pi * freq * t + phase)
        pose[:, joints, 1] += 0.10 + wave_
        pose[:, joints, 2] += 0.5 * wave_
    else:
        sway = 0.02 * np.sin(2 * np.pi * 0.02 * t + phase)
        pose[:, :12, 0] += sway
    scale = rng.uniform(0.9, 1.1)
    shift = rng.normal(0, [0.5, 0.1, 0.5])
    pose = pose * scale + shift + rng.normal(0, 0.01, pose.shape)
    return SkeletonSequence(pose, spine_index=1, head_index=3)


def _render_audio(spec, special, rng):
    n = int(round(spec.audio_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    x = rng.normal(0, spec.noise, n)
    if special:
        x = x + 0.5 * np.sin(2 * np.pi * 440.0 * t + rng.uniform(0, 2 * np.pi))
    elif rng.random() < 0.5:
        x = x + 0.3 * np.sin(2 * np.pi * rng.uniform(800, 3000) * t)
    return AudioSignal(np.clip(x, -1.0, 1.0), spec.sample_rate)


def assign_labels_and_splits(spec: SyntheticDatasetSpec):
    """Balanced labels; each class is dealt round-robin over the splits."""
    rng = np.random.default_rng([spec.seed, 0])
    labels = rng.permutation(np.arange(spec.n_videos) % spec.n_classes)
    splits = np.empty(spec.n_videos, dtype=np.int64)
    for c in range(spec.n_classes):
        idx = np.flatnonzero(labels == c)
        splits[idx] = np.arange(len(idx)) % spec.n_splits
    return labels, splits


def generate_dataset(spec: SyntheticDatasetSpec, out_dir) -> Path:
    out = Path(out_dir)
    try:
        for sub in ("rgb", "skeleton", "audio"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from e
    labels, splits = assign_labels_and_splits(spec)
    entries = []
    for v in range(spec.n_videos):
        rng = np.random.default_rng([spec.seed, 1, v])
        label = int(labels[v])
        frames = int(np.clip(round(rng.normal(spec.frames_mean, spec.frames_std)),
                             spec.frames_min, spec.frames_max))
        vid = f"v{v:04d}"
        special = label in spec.special_classes
        entry = {"id": vid, "label": label, "split": spec.split_names[splits[v]],
                 "frames": frames, "special": special,
                 "rgb": f"rgb/{vid}.bin", "skeleton": f"skeleton/{vid}.csv"}
        write_video_bin(out / entry["rgb"], _render_rgb(spec, label, frames, rng))
        write_skeleton_csv(out / entry["skeleton"], _render_skeleton(spec, label, frames, rng))
        if spec.audio:
            entry["audio"] = f"audio/{vid}.wav"
            write_wav(out / entry["audio"], _render_audio(spec, special, rng))
        entries.append(entry)
    manifest = {"format": 1, "spec": spec.to_json(), "videos": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {data_dir}")
    manifest = json.loads(path.read_text())
    ids = [v["id"] for v in manifest["videos"]]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest lists a video twice")
    return manifest


def _file(data_dir, entry, key):
    if key not in entry:
        raise FileNotFoundError(f"video {entry['id']} has no {key} modality")
    path = Path(data_dir) / entry[key]
    if not path.exists():
        raise FileNotFoundError(f"missing {key} file {path}")
    return path


def load_rgb(data_dir, entry):
    return read_video_bin(_file(data_dir, entry, "rgb"))


def load_skeleton(data_dir, entry):
    return read_skeleton_csv(_file(data_dir, entry, "skeleton"))


def load_audio(data_dir, entry):
    return read_wav(_file(data_dir, entry, "audio"))


def brute_force_bound(n_classes, visible) -> float:
    """Enumerate every deterministic observation -> label rule and return the best
    accuracy. Independent check on :func:`accuracy_bound`."""
    groups = observation_groups(n_classes, set(visible))
    best = 0.0
    for rule in itertools.product(range(n_classes), repeat=len(groups)):
        correct = sum(1 for g, guess in zip(groups, rule) for c in g if c == guess)
        best = max(best, correct / n_classes)
    return best
