# %% [markdown]
# Late fusion on made-up probability vectors, then the pairwise SVM, then
# the image/voice cross-check.

# %%
import numpy as np

from mmrec.fusion import (FusionConfig, SvmConfig, alpha_fuse, decision_fusion, detect,
                          svm_fuse_predict, svm_fuse_train)

p_rgb = np.array([0.05, 0.05, 0.05, 0.05, 0.6, 0.1, 0.1])    # RGB is sure about class 4
p_skel = np.array([0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2])       # skeleton has no opinion here

for a in (0.0, 0.3, 0.5, 1.0):
    fused = alpha_fuse(p_rgb, p_skel, FusionConfig(a))
    print(f"alpha={a}: argmax {fused.argmax()}  p={fused.round(3)}")

# %%
# One-vs-one SVM over concatenated [p_rgb, p_skel] features.
# Seven classes give 21 pairwise machines; coupling turns them back into one distribution.
rng = np.random.default_rng(1)
labels = np.repeat(np.arange(7), 10)
x = np.eye(7)[labels] * 2 + rng.normal(scale=0.3, size=(70, 7))
feats = np.hstack([x, rng.random((70, 7))])
model = svm_fuse_train(feats, labels, 7, SvmConfig(epochs=500))
len(model.pairs), svm_fuse_predict(model, feats[3]).round(3)

# %%
for image_p, voice_p in [(0.9, 0.8), (0.9, 0.1), (0.2, 0.7), (0.1, 0.1)]:
    d = decision_fusion(detect(image_p), detect(voice_p))
    print(f"image {image_p}  voice {voice_p}  ->  {d.outcome.value}")
