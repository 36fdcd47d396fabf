import numpy as np
import pytest

from mmrec.tensor import ConvSpec, ShapeError, conv_forward, flatten_params, grad_check
from mmrec.vision import (
    C3DConfig,
    C3DNet,
    FactorizedBlock,
    RgbClip,
    aux_classifier,
    factorized_forward,
    load_video_dir,
    multiply_count,
    read_video_bin,
    read_video_json,
    rgb_clip_features,
    train_c3d,
    video_probabilities,
    video_to_clips,
    write_video_bin,
    write_video_json,
)

from conftest import naive_conv
from golden import load_golden


def _ones_block():
    k = ConvSpec(np.ones((1, 1, 3, 3)), [0.0])
    return FactorizedBlock.five_as_two_threes(k, k)


def _impulse_support(out):
    return np.argwhere(out[0] != 0)


@pytest.mark.parametrize("size", [5, 6, 7, 9, 12])
def test_five_as_two_threes_receptive_field(size):
    # an impulse at each position lands on exactly the outputs whose 5x5 window covers it
    block = _ones_block()
    big = ConvSpec(np.ones((1, 1, 5, 5)), [0.0])
    for pos in [(size // 2, size // 2), (0, 0), (size - 1, 2)]:
        x = np.zeros((1, size, size))
        x[(0,) + pos] = 1.0
        got = factorized_forward(block, x)
        ref = conv_forward(x, big)
        assert got.shape == ref.shape == (1, size - 4, size - 4)
        np.testing.assert_array_equal(_impulse_support(got), _impulse_support(ref))


def test_impulse_support_is_5x5():
    x = np.zeros((1, 13, 13))
    x[0, 6, 6] = 1.0
    out = factorized_forward(_ones_block(), x)
    rows, cols = np.nonzero(out[0])
    assert rows.max() - rows.min() + 1 == 5 and cols.max() - cols.min() + 1 == 5
    assert len(rows) == 25


@pytest.mark.parametrize("n", [3, 5, 7])
def test_asymmetric_pair_matches_separable_kernel(rng, n):
    u, v = rng.normal(size=n), rng.normal(size=n)
    row = ConvSpec(v.reshape(1, 1, 1, n), [0.0])
    col = ConvSpec(u.reshape(1, 1, n, 1), [0.0])
    block = FactorizedBlock.asymmetric_pair(row, col)
    x = rng.normal(size=(1, n + 4, n + 3))
    full = naive_conv(x, np.outer(u, v).reshape(1, 1, n, n), [0.0], 1, "valid")
    np.testing.assert_allclose(factorized_forward(block, x), full, atol=1e-10, rtol=0)


def test_center_kernels_pass_input_through(rng):
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    block = FactorizedBlock.five_as_two_threes(ConvSpec(k, [0.0]), ConvSpec(k, [0.0]))
    x = rng.normal(size=(1, 8, 9))
    np.testing.assert_array_equal(factorized_forward(block, x), x[:, 2:-2, 2:-2])


def test_factorized_errors():
    with pytest.raises(ShapeError, match="spatial dim"):
        factorized_forward(_ones_block(), np.zeros((1, 4, 9)))
    k3 = ConvSpec(np.ones((1, 1, 3, 3)), [0.0])
    k5 = ConvSpec(np.ones((1, 1, 5, 5)), [0.0])
    with pytest.raises(ShapeError):
        FactorizedBlock.five_as_two_threes(k3, k5)
    with pytest.raises(ShapeError):
        FactorizedBlock.asymmetric_pair(ConvSpec(np.ones((1, 1, 1, 3)), [0.0]), k3)


def test_multiply_count():
    assert multiply_count(5, 5, False) == 25
    assert multiply_count(5, 5, True) == 18 < 25
    assert multiply_count(7, 7, True) == 14 and multiply_count(7, 7, False) == 49
    assert multiply_count(5, 5, True, mode="asymmetric_pair") == 10
    with pytest.raises(ValueError):
        multiply_count(0, 3, False)


def test_video_to_clips():
    assert len(video_to_clips(np.zeros((16, 1, 2, 2)))) == 1
    clips = video_to_clips(np.arange(300.0).reshape(300, 1, 1, 1) / 300)
    assert len(clips) == 285
    assert clips[3].data[0, 0, 0, 0] == 3 / 300
    with pytest.raises(ShapeError, match="15 frames"):
        video_to_clips(np.zeros((15, 1, 2, 2)))


@pytest.mark.parametrize("t", [16, 17, 40, 123])
def test_clip_count_property(t):
    assert len(video_to_clips(np.zeros((t, 1, 1, 1)))) == t - 15


def test_clip_clamps_values():
    clip = RgbClip(np.linspace(-1, 2, 16 * 4).reshape(16, 1, 2, 2))
    assert clip.data.min() == 0.0 and clip.data.max() == 1.0
    with pytest.raises(ShapeError):
        RgbClip(np.zeros((15, 1, 2, 2)))


def test_zero_net_gives_uniform():
    net = C3DNet.zeros()
    feats = rgb_clip_features(RgbClip(np.zeros((16, 3, 8, 8))), net)
    np.testing.assert_allclose(feats.probs, np.full(7, 1 / 7), rtol=1e-15)
    assert feats.fc6.shape == (64,) and feats.fc7.shape == (32,) and feats.fc8.shape == (7,)
    np.testing.assert_allclose(aux_classifier(RgbClip(np.zeros((16, 3, 8, 8))), net).probs, 1 / 7)


def test_feature_sizes_follow_config(rng):
    cfg = C3DConfig(in_channels=1, height=6, width=5, conv_channels=(2, 3), fc_sizes=(10, 4))
    feats = rgb_clip_features(RgbClip(rng.random((16, 1, 6, 5))), C3DNet.init(cfg, 1))
    assert feats.fc6.shape == (10,) and feats.fc7.shape == (4,)
    assert abs(feats.probs.sum() - 1) < 1e-12 and np.all(feats.probs > 0)
    with pytest.raises(ShapeError):
        rgb_clip_features(RgbClip(rng.random((16, 1, 6, 6))), C3DNet.init(cfg, 1))


def test_video_probs_match_per_clip_path(rng):
    net = C3DNet.init(C3DConfig(), seed=3)
    video = rng.random((40, 3, 8, 8))
    fast = net.video_probs(video)
    slow = np.stack([rgb_clip_features(c, net).probs for c in video_to_clips(video)])
    np.testing.assert_allclose(fast, slow, atol=1e-12)
    np.testing.assert_allclose(video_probabilities(video, net), slow.mean(axis=0), atol=1e-12)


def test_golden_clip_features():
    g = load_golden("rgb_clip.json")
    net = C3DNet.init(C3DConfig(), seed=g["seed"])
    clip = RgbClip(np.random.default_rng(g["seed"]).random((16, 3, 8, 8)))
    np.testing.assert_allclose(rgb_clip_features(clip, net).probs, g["probs"], rtol=1e-12)


def test_c3d_gradients(rng):
    cfg = C3DConfig(in_channels=2, height=5, width=5, conv_channels=(2, 3), fc_sizes=(5, 4),
                    n_classes=3)
    net = C3DNet.init(cfg, seed=4)
    clips = rng.random((2, 16, 2, 5, 5))
    labels = np.array([0, 2])
    names = sorted(net.params)
    vec, unpack = flatten_params([net.params[n] for n in names])

    def loss_fn(v):
        trial = C3DNet(cfg, dict(zip(names, unpack(v))))
        loss, grads = trial.loss_and_grads(clips, labels)
        return loss, np.concatenate([grads[n].ravel() for n in names])

    assert grad_check(loss_fn, vec, 1e-6) < 1e-5


def test_training_is_deterministic_and_learns(rng):
    # two colour-coded classes
    videos, labels = [], []
    for k in range(12):
        c = k % 2
        v = np.full((20, 3, 8, 8), 0.2)
        v[:, c] += 0.6
        videos.append(v + 0.02 * rng.normal(size=v.shape))
        labels.append(c)
    cfg = C3DConfig(n_classes=2)
    a = train_c3d(videos, labels, cfg, epochs=15, seed=9, learning_rate=0.1)
    b = train_c3d(videos, labels, cfg, epochs=15, seed=9, learning_rate=0.1)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    pred = [int(np.argmax(video_probabilities(v, a))) for v in videos]
    assert pred == labels


def test_video_file_formats(tmp_path, rng):
    v = rng.random((17, 3, 4, 4)).astype(np.float32).astype(np.float64)
    write_video_bin(tmp_path / "a.bin", v)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"RGBV" and len(raw) == 16 + v.size * 4
    np.testing.assert_array_equal(read_video_bin(tmp_path / "a.bin"), v)
    write_video_json(tmp_path / "b.json", v)
    np.testing.assert_array_equal(read_video_json(tmp_path / "b.json"), v)
    assert sorted(load_video_dir(tmp_path)) == ["a", "b"]
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        read_video_bin(tmp_path / "bad.bin")
    with pytest.raises(ShapeError):
        write_video_bin(tmp_path / "c.bin", np.zeros((16, 1, 2, 3)))


def test_net_json_roundtrip():
    net = C3DNet.init(C3DConfig(), seed=2)
    back = C3DNet.from_json(net.to_json())
    assert back.config == net.config
    for k in net.params:
        np.testing.assert_array_equal(back.params[k], net.params[k])
