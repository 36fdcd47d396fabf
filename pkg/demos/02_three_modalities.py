# %% [markdown]
# One synthetic video, seen three ways: an RGB clip through the toy 3D
# ConvNet, the skeleton through the two-layer LSTM, and the soundtrack
# through log-mel energies. None of the nets are trained here; the point is
# the shapes.

# %%
import tempfile
from pathlib import Path


from mmrec.audio import FrameSpec, MelFilterbank, log_mel_features, read_wav
from mmrec.bench import SyntheticDatasetSpec, generate_dataset, load_manifest
from mmrec.skeleton import (SkeletonNet, WindowingConfig, preprocess_skeleton, read_skeleton_csv,
                            skeleton_classify, window_sequence)
from mmrec.vision import C3DConfig, C3DNet, read_video_bin, rgb_clip_features, video_to_clips

tmp = Path(tempfile.mkdtemp())
spec = SyntheticDatasetSpec(n_videos=28, frames_mean=60, frames_std=5, frames_min=40, frames_max=80)
data = generate_dataset(spec, tmp / "data")
entry = load_manifest(data)["videos"][0]
entry

# %%
video = read_video_bin(data / entry["rgb"])     # (T, C, H, W)
clips = video_to_clips(video)
print(video.shape, "->", len(clips), "clips of 16 frames")   # T - 15 clips

net = C3DNet.init(C3DConfig(), seed=0)
feats = rgb_clip_features(clips[0], net)
feats.fc6.shape, feats.fc7.shape, feats.probs.round(3)

# %%
# skeleton: spine-relative joints plus all pairwise distances, scale-normalized
seq = read_skeleton_csv(data / entry["skeleton"])
sk = preprocess_skeleton(seq)
print("features per frame:", sk.data.shape[1])     # 3*20 + 190 = 250
windows = window_sequence(sk.data, WindowingConfig(window_len=32, overlap=16))
model = SkeletonNet.init(windows.shape[2], seed=0)
probs, lowest_fc = skeleton_classify(windows, model)
windows.shape, probs.round(3), lowest_fc.shape

# %%
sig = read_wav(data / entry["audio"])
mel = log_mel_features(sig, FrameSpec(), MelFilterbank.build())
print(f"{len(sig.samples)} samples -> {mel.shape[0]} frames x {mel.shape[1]} mel bands")
