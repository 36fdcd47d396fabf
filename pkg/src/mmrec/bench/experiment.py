"""Train, evaluate and sweep on a generated dataset.

On-disk layout under a models directory::

    config.txt               the ExperimentConfig as key=value
    <fold>/rgb.json          one model set per held-out split
    <fold>/skeleton.json
    <fold>/svm.json
    <fold>/audio.json        only when audio is enabled and present
    eval/probs.json          cached per-video probabilities (read by the sweep)
    eval/result.json         per-method accuracies
    eval/decisions.csv       image/voice decision per held-out video
    eval/sweep.json          alpha curve, once sweep-alpha has run
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio import FrameSpec, MelFilterbank, AudioHead, pooled_features, train_audio_head, SPECIAL
from ..fusion import (FusionConfig, SvmConfig, SvmFusionModel, alpha_fuse, decision_fusion, detect,
                      svm_fuse_predict, svm_fuse_train, write_fusion_csv)
from ..skeleton import (SkeletonNet, WindowingConfig, preprocess_skeleton, skeleton_probs_many,
                        train_skeleton_net, window_sequence)
from ..vision import C3DConfig, C3DNet, train_c3d
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import SyntheticDatasetSpec, load_audio, load_manifest, load_rgb, load_skeleton
from .report import METHODS, ExperimentResult

DEFAULT_GRID = tuple(k / 10 for k in range(11))


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list; every value must lie in [0, 1]."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"bad grid {text!r}")
            n = int(round((stop - start) / step))
            values = [round(start + k * step, 12) for k in range(n + 1)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    check_grid(values)
    return values


def check_grid(values):
    bad = [a for a in values if not 0.0 <= a <= 1.0]
    if bad:
        raise ConfigError(f"grid values outside [0, 1]: {bad}")


def accuracy(probs, labels) -> float:
    pred = np.argmax(np.asarray(probs), axis=-1)
    return 100.0 * float(np.mean(pred == np.asarray(labels)))


# -- data loading -------------------------------------------------------------------

def _windows(seq, cfg: ExperimentConfig):
    feats = preprocess_skeleton(seq)
    return window_sequence(feats.data, WindowingConfig(cfg.window_len, cfg.overlap))


@dataclass
class _Loaded:
    entries: list
    videos: list
    windows: list
    pooled: list | None

    @property
    def labels(self):
        return np.array([e["label"] for e in self.entries], dtype=np.int64)


def _load(data_dir, entries, cfg, audio):
    bank = MelFilterbank.build() if audio else None
    return _Loaded(
        entries,
        [load_rgb(data_dir, e) for e in entries],
        [_windows(load_skeleton(data_dir, e), cfg) for e in entries],
        [pooled_features(load_audio(data_dir, e), FrameSpec(), bank) for e in entries] if audio else None,
    )


def _audio_enabled(cfg, manifest):
    return cfg.audio and all("audio" in v for v in manifest["videos"])


def _partition(manifest, fold):
    splits = {v["split"] for v in manifest["videos"]}
    if fold not in splits:
        raise ConfigError(f"fold {fold} is not a split of this dataset ({sorted(splits)})")
    train = [v for v in manifest["videos"] if v["split"] != fold]
    test = [v for v in manifest["videos"] if v["split"] == fold]
    return train, test


# -- models -------------------------------------------------------------------------

@dataclass
class FoldModels:
    rgb: C3DNet
    skeleton: SkeletonNet
    svm: SvmFusionModel
    audio: AudioHead | None

    def modality_probs(self, data: _Loaded):
        p_rgb = np.stack([self.rgb.video_probs(v).mean(axis=0) for v in data.videos])
        p_skel = skeleton_probs_many(data.windows, self.skeleton)
        return p_rgb, p_skel

    def save(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "rgb.json", self.rgb.to_json())
        _dump(out / "skeleton.json", self.skeleton.to_json())
        _dump(out / "svm.json", self.svm.to_json())
        if self.audio is not None:
            _dump(out / "audio.json", self.audio.to_json())

    @classmethod
    def load(cls, src: Path):
        if not (src / "rgb.json").exists():
            raise FileNotFoundError(f"no trained models in {src}")
        audio = src / "audio.json"
        return cls(C3DNet.from_json(_read(src / "rgb.json")),
                   SkeletonNet.from_json(_read(src / "skeleton.json")),
                   SvmFusionModel.from_json(_read(src / "svm.json")),
                   AudioHead.from_json(_read(audio)) if audio.exists() else None)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def _read(path):
    return json.loads(Path(path).read_text())


def train_fold(data_dir, manifest, fold, cfg: ExperimentConfig) -> FoldModels:
    spec = SyntheticDatasetSpec.from_json(manifest["spec"])
    audio = _audio_enabled(cfg, manifest)
    train, _ = _partition(manifest, fold)
    data = _load(data_dir, train, cfg, audio)
    y = data.labels
    c3d = C3DConfig(in_channels=spec.channels, height=spec.image_size, width=spec.image_size,
                    n_classes=spec.n_classes)
    rgb = train_c3d(data.videos, y, c3d, epochs=cfg.epochs, batch_size=cfg.batch_size,
                    learning_rate=cfg.rgb_learning_rate, l2_lambda=cfg.l2_lambda, seed=cfg.seed)
    skel = train_skeleton_net(data.windows, y, (cfg.hidden_size, cfg.hidden_size), cfg.fc_size,
                              spec.n_classes, epochs=cfg.epochs, batch_size=cfg.batch_size,
                              learning_rate=cfg.skeleton_learning_rate, l2_lambda=cfg.l2_lambda,
                              seed=cfg.seed)
    models = FoldModels(rgb, skel, None, None)
    p_rgb, p_skel = models.modality_probs(data)
    svm_cfg = SvmConfig(cfg.svm_epochs, cfg.svm_learning_rate, cfg.svm_lambda, seed=cfg.seed)
    models.svm = svm_fuse_train(np.hstack([p_rgb, p_skel]), y, spec.n_classes, svm_cfg)
    if audio:
        special = [e["special"] for e in train]
        models.audio = train_audio_head(data.pooled, special, epochs=cfg.audio_epochs, seed=cfg.seed)
    return models


def train_models(data_dir, models_dir, cfg: ExperimentConfig = ExperimentConfig()) -> Path:
    manifest = load_manifest(data_dir)
    out = Path(models_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fold in cfg.fold_list:
        _partition(manifest, fold)  # fail fast on a bad fold name
    for fold in cfg.fold_list:
        train_fold(data_dir, manifest, fold, cfg).save(out / fold)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _models_config(models_dir) -> ExperimentConfig:
    path = Path(models_dir) / "config.txt"
    if not path.exists():
        raise FileNotFoundError(f"{models_dir} holds no trained models (config.txt missing)")
    return load_config(path)


# -- evaluation ---------------------------------------------------------------------

def evaluate(data_dir, models_dir) -> dict:
    """Score every held-out video once per fold and cache the probabilities."""
    cfg = _models_config(models_dir)
    manifest = load_manifest(data_dir)
    spec = SyntheticDatasetSpec.from_json(manifest["spec"])
    rows = []
    for fold in cfg.fold_list:
        models = FoldModels.load(Path(models_dir) / fold)
        _, test = _partition(manifest, fold)
        audio = models.audio is not None and _audio_enabled(cfg, manifest)
        data = _load(data_dir, test, cfg, audio)
        p_rgb, p_skel = models.modality_probs(data)
        for k, e in enumerate(test):
            p_svm = svm_fuse_predict(models.svm, np.concatenate([p_rgb[k], p_skel[k]]))
            rows.append({"id": e["id"], "label": e["label"], "split": e["split"],
                         "special": e["special"], "p_rgb": p_rgb[k].tolist(),
                         "p_skeleton": p_skel[k].tolist(), "p_svm": p_svm.tolist(),
                         "p_audio": models.audio.probs(data.pooled[k]).tolist() if audio else None})
    rows.sort(key=lambda r: r["id"])
    cache = {"config_hash": cfg.hash(), "seed": cfg.seed, "alpha": cfg.alpha,
             "threshold": cfg.threshold, "special_classes": list(spec.special_classes),
             "videos": rows}
    out = Path(models_dir) / "eval"
    out.mkdir(exist_ok=True)
    (out / "sweep.json").unlink(missing_ok=True)  # a fresh evaluation invalidates any old curve
    _dump(out / "probs.json", cache)
    _dump(out / "result.json", {"config_hash": cfg.hash(), "seed": cfg.seed,
                                "accuracies": list(method_accuracies(cache).items())})
    write_fusion_csv(out / "decisions.csv", decisions(cache))
    return cache


def _arrays(cache):
    v = cache["videos"]
    if not v:
        raise ValueError("evaluation produced no held-out videos")
    return (np.array([r["p_rgb"] for r in v]), np.array([r["p_skeleton"] for r in v]),
            np.array([r["p_svm"] for r in v]), np.array([r["label"] for r in v]))


def method_accuracies(cache) -> dict:
    p_rgb, p_skel, p_svm, y = _arrays(cache)
    fused = alpha_fuse(p_rgb, p_skel, FusionConfig(cache["alpha"]))
    return dict(zip(METHODS, (accuracy(p_rgb, y), accuracy(p_skel, y),
                              accuracy(fused, y), accuracy(p_svm, y))))


def decisions(cache):
    """Image side: alpha-fused mass on the special classes. Voice side: audio head."""
    p_rgb, p_skel, _, _ = _arrays(cache)
    fused = alpha_fuse(p_rgb, p_skel, FusionConfig(cache["alpha"]))
    special = cache["special_classes"]
    out = []
    for r, p in zip(cache["videos"], fused):
        image = detect(float(p[special].sum()), cache["threshold"])
        voice = r["p_audio"] is not None and detect(r["p_audio"][SPECIAL], cache["threshold"])
        out.append((r["id"], p, decision_fusion(image, voice)))
    return out


def sweep_alpha(cache, grid=DEFAULT_GRID) -> dict:
    """Alpha-fused accuracy per grid point from cached probabilities; no retraining."""
    check_grid(grid)
    p_rgb, p_skel, _, y = _arrays(cache)
    return {float(a): accuracy(alpha_fuse(p_rgb, p_skel, FusionConfig(a)), y) for a in grid}


def load_cache(models_dir) -> dict:
    path = Path(models_dir) / "eval" / "probs.json"
    if not path.exists():
        raise FileNotFoundError(f"no cached evaluation in {models_dir}; run eval first")
    return _read(path)


def sweep_models(models_dir, grid=DEFAULT_GRID) -> dict:
    curve = sweep_alpha(load_cache(models_dir), grid)
    _dump(Path(models_dir) / "eval" / "sweep.json",
          {"curve": [[a, v] for a, v in curve.items()]})
    return curve


def load_result(models_dir) -> ExperimentResult:
    ev = Path(models_dir) / "eval"
    if not (ev / "result.json").exists():
        raise FileNotFoundError(f"no evaluation result in {models_dir}; run eval first")
    res = _read(ev / "result.json")
    curve = {}
    if (ev / "sweep.json").exists():
        curve = {a: v for a, v in _read(ev / "sweep.json")["curve"]}
    return ExperimentResult(dict(res["accuracies"]), curve, res["config_hash"], res["seed"])


def run_experiment(data_dir, models_dir, cfg: ExperimentConfig = ExperimentConfig(),
                   grid=DEFAULT_GRID) -> ExperimentResult:
    check_grid(grid)
    train_models(data_dir, models_dir, cfg)
    evaluate(data_dir, models_dir)
    if grid:
        sweep_models(models_dir, grid)
    return load_result(models_dir)

