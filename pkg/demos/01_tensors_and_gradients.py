# %% [markdown]
# Tensors are plain float64 numpy arrays. This walk-through pokes at the
# convolution kernel and the finite-difference gradient checker.

# %%
import numpy as np

from mmrec.tensor import ConvSpec, conv_backward, conv_forward, grad_check, softmax

rng = np.random.default_rng(0)

# %%
# one channel in, one channel out, a 3x3 box filter
x = np.arange(25, dtype=float).reshape(1, 5, 5)
box = ConvSpec(np.ones((1, 1, 3, 3)), bias=[0.0])
conv_forward(x, box)          # (1, 3, 3): each entry sums a 3x3 window

# "same" padding keeps the spatial size; stride 2 halves it (rounding up)
conv_forward(x, ConvSpec(np.ones((1, 1, 3, 3)), [0.0], padding="same")).shape   # (1, 5, 5)
conv_forward(x, ConvSpec(np.ones((1, 1, 3, 3)), [0.0], stride=2, padding="same")).shape

# %%
# 3-d kernels work the same way: (C_out, C_in, kT, kH, kW) over a (C, T, H, W) clip
clip = rng.random((3, 16, 8, 8))
k3 = ConvSpec(rng.normal(size=(4, 3, 3, 3, 3)), np.zeros(4), activation="relu")
print("3d conv output:", conv_forward(clip, k3).shape)

# %%
# gradient check: loss = sum(conv(x) * u), compare backward against central differences
u = rng.normal(size=(2, 4, 4))
w = rng.normal(size=(2, 1, 2, 2))
xin = x / 25.0


def loss(wv):
    spec = ConvSpec(wv, [0.1, -0.1], activation="tanh")
    return float(np.sum(conv_forward(xin, spec) * u)), conv_backward(xin, spec, u)[1]


print("max relative error:", grad_check(loss, w))

# %%
softmax(np.array([1.0, 2.0, 3.0]))    # rows sum to one
softmax(np.array([1000.0, 1001.0]))   # large logits stay finite
