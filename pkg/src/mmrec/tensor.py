"""Dense float64 kernels and the training math built on them.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every function
here is pure: inputs are never mutated and identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def as_tensor(x, name="input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def tensor_to_json(x) -> dict:
    arr = np.asarray(x, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def tensor_from_json(obj: Mapping) -> np.ndarray:
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"data length {data.size} does not match shape {shape}")
    return data.reshape(shape)


# -- activations -------------------------------------------------------------

def sigmoid(z):
    # tanh form stays accurate for large |z| without overflow warnings
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def activate(kind: str, z):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind: str, z, a, grad):
    """Chain ``grad`` (w.r.t. the activation output ``a``) back to ``z``."""
    if kind == "identity":
        return grad
    if kind == "relu":
        return grad * (z > 0)
    if kind == "tanh":
        return grad * (1.0 - a * a)
    if kind == "sigmoid":
        return grad * a * (1.0 - a)
    raise ValueError(f"unknown activation {kind!r}")


# -- convolution -------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    """Convolution layer parameters.

    ``kernel`` has shape ``(C_out, C_in, k_1, ..., k_d)`` for ``d`` spatial
    dims, ``bias`` has shape ``(C_out,)``. Inputs to :func:`conv_forward` are
    laid out as ``(C_in, n_1, ..., n_d)``. Cross-correlation, no kernel flip.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple = 1
    padding: str = "valid"
    activation: str = "identity"

    def __post_init__(self):
        kernel = as_tensor(self.kernel, "kernel")
        if kernel.ndim < 3:
            raise ShapeError(
                f"kernel must have shape (C_out, C_in, k_1..k_d); got rank {kernel.ndim}")
        bias = as_tensor(self.bias, "bias").reshape(-1)
        if bias.shape[0] != kernel.shape[0]:
            raise ShapeError(
                f"bias length {bias.shape[0]} != kernel output channels {kernel.shape[0]}")
        d = kernel.ndim - 2
        stride = self.stride
        if np.isscalar(stride):
            stride = (int(stride),) * d
        stride = tuple(int(s) for s in stride)
        if len(stride) != d or any(s < 1 for s in stride):
            raise ValueError(f"stride must be {d} integers >= 1; got {self.stride}")
        if self.padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same'; got {self.padding!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "stride", stride)

    @property
    def spatial_rank(self) -> int:
        return self.kernel.ndim - 2


def _pads(sizes, ksizes, strides, padding):
    pads, outs = [], []
    for n, k, s in zip(sizes, ksizes, strides):
        if padding == "valid":
            outs.append((n - k) // s + 1)
            pads.append((0, 0))
        else:
            out = -(-n // s)
            total = max((out - 1) * s + k - n, 0)
            outs.append(out)
            pads.append((total // 2, total - total // 2))
    return pads, outs


def _patches(x, ksizes, strides, pads):
    """Strided windows of a batched input ``(N, C, *sp)`` -> ``(N, C, *out, *k)``."""
    d = len(ksizes)
    if any(p != (0, 0) for p in pads):
        x = np.pad(x, [(0, 0), (0, 0)] + list(pads))
    win = np.lib.stride_tricks.sliding_window_view(x, ksizes, axis=tuple(range(2, 2 + d)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in strides)
    return win[sl]


def conv_core(x, kernel, stride, padding="valid"):
    """Batched pre-activation cross-correlation without bias.

    ``x`` is ``(N, C_in, *spatial)``; returns ``(N, C_out, *out)``.
    """
    d = kernel.ndim - 2
    pads, _ = _pads(x.shape[2:], kernel.shape[2:], stride, padding)
    p = _patches(x, kernel.shape[2:], stride, pads)
    axes_p = [1] + list(range(2 + d, 2 + 2 * d))
    axes_k = list(range(1, 2 + d))
    out = np.tensordot(p, kernel, axes=(axes_p, axes_k))  # (N, *out, C_out)
    return np.moveaxis(out, -1, 1)


def conv_core_backward(x, kernel, stride, padding, grad):
    """Gradients of :func:`conv_core` w.r.t. ``x`` and ``kernel``."""
    d = kernel.ndim - 2
    ks = kernel.shape[2:]
    pads, outs = _pads(x.shape[2:], ks, stride, padding)
    p = _patches(x, ks, stride, pads)
    gaxes = [0] + list(range(2, 2 + d))
    dk = np.tensordot(grad, p, axes=(gaxes, [0] + list(range(2, 2 + d))))
    # dk: (C_out, C_in, *k)
    dp = np.tensordot(grad, kernel, axes=([1], [0]))  # (N, *out, C_in, *k)
    dp = np.moveaxis(dp, 1 + d, 1)  # (N, C_in, *out, *k)
    padded = [n + a + b for n, (a, b) in zip(x.shape[2:], pads)]
    dxp = np.zeros(x.shape[:2] + tuple(padded))
    for off in itertools.product(*(range(k) for k in ks)):
        sl = tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, outs))
        dxp[(slice(None), slice(None)) + sl] += dp[(Ellipsis,) + off]
    crop = tuple(slice(a, a + n) for (a, _), n in zip(pads, x.shape[2:]))
    return dxp[(slice(None), slice(None)) + crop], dk


def _check_conv_input(x, spec: ConvSpec):
    x = as_tensor(x)
    d = spec.spatial_rank
    if x.ndim != d + 1:
        raise ShapeError(
            f"input must have shape (C_in, n_1..n_{d}) (rank {d + 1}); got rank {x.ndim}")
    if x.shape[0] != spec.kernel.shape[1]:
        raise ShapeError(
            f"input channel dim is {x.shape[0]} but kernel expects {spec.kernel.shape[1]}")
    if spec.padding == "valid":
        for axis, (n, k) in enumerate(zip(x.shape[1:], spec.kernel.shape[2:])):
            if n < k:
                raise ShapeError(
                    f"spatial dim {axis} has size {n}, smaller than kernel extent {k}")
    return x


def conv_forward(input, spec: ConvSpec) -> np.ndarray:
    """``out[r, i] = act(sum_s kernel[r, s] * patch(i)[s] + bias[r])``.

    ``input`` is ``(C_in, n_1, ..., n_d)``; output is ``(C_out, m_1, ..., m_d)``.
    """
    x = _check_conv_input(input, spec)
    z = conv_core(x[None], spec.kernel, spec.stride, spec.padding)[0]
    z = z + spec.bias.reshape((-1,) + (1,) * spec.spatial_rank)
    return activate(spec.activation, z)


def conv_backward(input, spec: ConvSpec, grad_output):
    """Return ``(d_input, d_kernel, d_bias)`` for :func:`conv_forward`."""
    x = _check_conv_input(input, spec)
    z = conv_core(x[None], spec.kernel, spec.stride, spec.padding)[0]
    z = z + spec.bias.reshape((-1,) + (1,) * spec.spatial_rank)
    a = activate(spec.activation, z)
    gz = activation_backward(spec.activation, z, a, np.asarray(grad_output, dtype=np.float64))
    dx, dk = conv_core_backward(x[None], spec.kernel, spec.stride, spec.padding, gz[None])
    return dx[0], dk, gz.reshape(gz.shape[0], -1).sum(axis=1)


# -- classification math -----------------------------------------------------

def softmax(logits) -> np.ndarray:
    """Softmax over the last axis, max-subtracted for stability."""
    z = as_tensor(logits, "logits")
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax needs at least one logit")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def argmax_decision(probs) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("argmax_decision expects a non-empty rank-1 vector")
    return int(np.argmax(p))


def l2_penalty(weights) -> float:
    w = as_tensor(weights, "weights")
    return float(np.sum(w * w))


def cross_entropy(probs, label: int) -> float:
    return float(-np.log(max(float(np.asarray(probs)[label]), 1e-300)))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits.

    ``logits`` is ``(N, K)``, ``labels`` ``(N,)`` integer classes.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# -- dense -------------------------------------------------------------------

def dense_forward(weights, bias, x, activation="identity") -> np.ndarray:
    """``act(W x + b)``; ``x`` may carry a leading batch axis."""
    w = as_tensor(weights, "weights")
    x = as_tensor(x, "x")
    b = as_tensor(bias, "bias")
    if w.ndim != 2 or w.shape[1] != x.shape[-1]:
        raise ShapeError(f"weight columns {w.shape[-1]} != input length {x.shape[-1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)")
    return activate(activation, x @ w.T + b)


def dense_backward(weights, bias, x, grad_output, activation="identity"):
    """Return ``(d_x, d_weights, d_bias)``; batch axis summed out of param grads."""
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = x @ w.T + bias
    a = activate(activation, z)
    gz = activation_backward(activation, z, a, np.asarray(grad_output, dtype=np.float64))
    if x.ndim == 1:
        return gz @ w, np.outer(gz, x), gz
    return gz @ w, gz.T @ x, gz.sum(axis=0)


# -- LSTM --------------------------------------------------------------------

@dataclass(frozen=True)
class LstmParams:
    """Gate weights stacked in the order input, forget, output, candidate.

    ``w_x``: ``(4H, I)``, ``w_h``: ``(4H, H)``, ``b``: ``(4H,)``.
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4, i = np.shape(self.w_x)
        if h4 % 4 or np.shape(self.w_h) != (h4, h4 // 4) or np.shape(self.b) != (h4,):
            raise ShapeError(
                f"inconsistent LSTM shapes w_x={np.shape(self.w_x)} "
                f"w_h={np.shape(self.w_h)} b={np.shape(self.b)}")

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    def gate(self, name):
        """(w_x, w_h, b) slices for gate ``name`` in {'i','f','o','g'}."""
        k = "ifog".index(name)
        h = self.hidden_size
        sl = slice(k * h, (k + 1) * h)
        return self.w_x[sl], self.w_h[sl], self.b[sl]

    @classmethod
    def zeros(cls, input_size, hidden_size):
        h4 = 4 * hidden_size
        return cls(np.zeros((h4, input_size)), np.zeros((h4, hidden_size)), np.zeros(h4))

    @classmethod
    def init(cls, input_size, hidden_size, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden_size)
        h4 = 4 * hidden_size
        w_x = rng.uniform(-bound, bound, (h4, input_size))
        w_h = rng.uniform(-bound, bound, (h4, hidden_size))
        b = rng.uniform(-bound, bound, h4)
        b[hidden_size:2 * hidden_size] = 1.0
        return cls(w_x, w_h, b)

    def arrays(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}


def _lstm_gates(z, c_prev, h):
    i = sigmoid(z[..., :h])
    f = sigmoid(z[..., h:2 * h])
    o = sigmoid(z[..., 2 * h:3 * h])
    g = np.tanh(z[..., 3 * h:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return i, f, o, g, c, tc


def lstm_step(params: LstmParams, x, h_prev, c_prev):
    """One LSTM update; returns ``(h, c)``. Leading batch axes are allowed."""
    x = as_tensor(x, "x")
    h_prev = as_tensor(h_prev, "h_prev")
    c_prev = as_tensor(c_prev, "c_prev")
    hs = params.hidden_size
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"x length {x.shape[-1]} != input_size {params.input_size}")
    if h_prev.shape[-1] != hs or c_prev.shape[-1] != hs:
        raise ShapeError(f"state length must equal hidden_size {hs}")
    z = x @ params.w_x.T + h_prev @ params.w_h.T + params.b
    _, _, o, _, c, tc = _lstm_gates(z, c_prev, hs)
    return o * tc, c


def lstm_sequence_forward(params: LstmParams, xs, h0=None, c0=None):
    """Run over ``xs`` of shape ``(B, T, I)``; returns ``(hs (B,T,H), cache)``."""
    xs = np.asarray(xs, dtype=np.float64)
    bsz, steps, _ = xs.shape
    hsz = params.hidden_size
    zx = np.ascontiguousarray((xs @ params.w_x.T + params.b).transpose(1, 0, 2))  # (T, B, 4H)
    acts = np.empty((steps, bsz, 4 * hsz))  # activated i, f, o, g
    tcs = np.empty((steps, bsz, hsz))
    cs = np.empty((steps + 1, bsz, hsz))
    hs = np.empty((steps + 1, bsz, hsz))
    hs[0] = 0.0 if h0 is None else h0
    cs[0] = 0.0 if c0 is None else c0
    w_hT = params.w_h.T
    h3 = 3 * hsz
    for t in range(steps):
        z = zx[t]
        z += hs[t] @ w_hT
        a = acts[t]
        # sigmoid(z) = (1 + tanh(z/2)) / 2, written in place
        np.multiply(z[:, :h3], 0.5, out=a[:, :h3])
        np.tanh(a[:, :h3], out=a[:, :h3])
        a[:, :h3] += 1.0
        a[:, :h3] *= 0.5
        np.tanh(z[:, h3:], out=a[:, h3:])
        np.multiply(a[:, hsz:2 * hsz], cs[t], out=cs[t + 1])
        cs[t + 1] += a[:, :hsz] * a[:, h3:]
        np.tanh(cs[t + 1], out=tcs[t])
        np.multiply(a[:, 2 * hsz:h3], tcs[t], out=hs[t + 1])
    return np.ascontiguousarray(hs[1:].transpose(1, 0, 2)), (xs, acts, tcs, cs, hs)


def lstm_sequence_backward(params: LstmParams, cache, dhs):
    """BPTT through :func:`lstm_sequence_forward`.

    ``dhs`` is ``(B, T, H)``; returns ``(dxs, grads)`` with grads keyed like
    :meth:`LstmParams.arrays`.
    """
    xs, acts, tcs, cs, hs = cache
    bsz, steps, _ = xs.shape
    hsz = params.hidden_size
    i, f, o, g = (acts[..., k * hsz:(k + 1) * hsz] for k in range(4))
    deriv = np.concatenate([i * (1 - i), f * (1 - f), o * (1 - o), 1 - g * g], axis=2)
    deriv = deriv.reshape(steps, bsz, 4, hsz)
    # dz[t] = dc_t * via_c[t] + dh_t * via_h[t], gate blocks along axis 2
    via_c = deriv * np.stack([g, cs[:-1], np.zeros_like(g), i], axis=2)
    via_h = deriv[:, :, 2] * tcs
    dc_from_h = o * (1.0 - tcs * tcs)
    dhs_t = np.asarray(dhs, dtype=np.float64).transpose(1, 0, 2)
    dz_all = np.empty((steps, bsz, 4, hsz))
    dh = np.zeros((bsz, hsz))
    dc = np.zeros((bsz, hsz))
    w_h = params.w_h
    for t in range(steps - 1, -1, -1):
        dh += dhs_t[t]
        dc += dh * dc_from_h[t]
        dz = dz_all[t]
        np.multiply(dc[:, None, :], via_c[t], out=dz)
        dz[:, 2] += dh * via_h[t]
        dc *= f[t]
        dh = dz.reshape(bsz, 4 * hsz) @ w_h
    flat_dz = dz_all.reshape(steps * bsz, 4 * hsz)
    xs_t = xs.transpose(1, 0, 2).reshape(steps * bsz, -1)
    grads = {
        "w_x": flat_dz.T @ xs_t,
        "w_h": flat_dz.T @ hs[:-1].reshape(steps * bsz, hsz),
        "b": flat_dz.sum(axis=0),
    }
    dxs = (flat_dz @ params.w_x).reshape(steps, bsz, -1).transpose(1, 0, 2)
    return dxs, grads


def lstm_step_backward(params: LstmParams, x, h_prev, c_prev, dh, dc=None):
    """Gradients of one :func:`lstm_step` given upstream ``dh`` (and ``dc``).

    Returns ``(dx, dh_prev, dc_prev, grads)`` for unbatched vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    hsz = params.hidden_size
    z = x @ params.w_x.T + h_prev @ params.w_h.T + params.b
    i, f, o, g, c, tc = _lstm_gates(z, c_prev, hsz)
    dc = np.zeros(hsz) if dc is None else np.asarray(dc, dtype=np.float64)
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dh * tc * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ])
    grads = {"w_x": np.outer(dz, x), "w_h": np.outer(dz, h_prev), "b": dz}
    return dz @ params.w_x, dz @ params.w_h, dc * f, grads


# -- optimisation ------------------------------------------------------------

@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    l2_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


def sgd_step(params, grads, cfg: SgdConfig):
    """``p - lr * (g + 2 * l2_lambda * p)`` for every parameter.

    Accepts matching dicts or sequences of arrays and returns new arrays of the
    same container type.
    """
    lr, lam = cfg.learning_rate, cfg.l2_lambda

    def upd(p, g):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        return p - lr * (g + 2.0 * lam * p)

    if isinstance(params, Mapping):
        if set(params) != set(grads):
            raise ShapeError("params and grads have different keys")
        return {k: upd(params[k], grads[k]) for k in params}
    if len(params) != len(grads):
        raise ShapeError("params and grads have different lengths")
    return [upd(p, g) for p, g in zip(params, grads)]


def grad_check(loss_fn: Callable, params, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grad)`` with ``grad`` shaped like
    ``params``.
    """
    if not 1e-8 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-8, 1e-3]")
    p = np.array(params, dtype=np.float64)
    loss, analytic = loss_fn(p.copy())
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    analytic = np.asarray(analytic, dtype=np.float64).reshape(p.shape)
    numeric = np.empty_like(p)
    flat, nflat = p.reshape(-1), numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + epsilon
        lp = loss_fn(p.copy())[0]
        flat[k] = orig - epsilon
        lm = loss_fn(p.copy())[0]
        flat[k] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NonFiniteError("loss is not finite under perturbation")
        nflat[k] = (lp - lm) / (2.0 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-7)
    return float(np.max(np.abs(analytic - numeric) / denom)) if p.size else 0.0


def flatten_params(arrays: Sequence[np.ndarray]):
    """Pack arrays into one vector; returns ``(vector, unpack)``."""
    shapes = [np.shape(a) for a in arrays]
    vec = np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)

    def unpack(v):
        out, k = [], 0
        for s in shapes:
            n = int(np.prod(s, dtype=np.int64))
            out.append(np.asarray(v[k:k + n]).reshape(s))
            k += n
        return out

    return vec, unpack
