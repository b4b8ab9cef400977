import numpy as np
import pytest

from drivewatch.image import ImageBuffer
from drivewatch.segnet import (
    LayerSpec,
    NetworkError,
    NetworkSpec,
    NonFiniteActivation,
    WeightStore,
    asym_conv5,
    build_default_net,
    conv2d,
    forward,
    max_pool2,
    run_layers,
    upsample2,
)


def naive_conv2d(x, w, b, dilation=1, stride=1):
    """Direct six-loop cross-correlation with zero padding."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    out_h = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    out_w = (wd + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for oc in range(c_out):
        for oy in range(out_h):
            for ox in range(out_w):
                acc = 0.0
                for ic in range(c_in):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky * dilation - ph
                            ix = ox * stride + kx * dilation - pw
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += x[ic, iy, ix] * w[oc, ic, ky, kx]
                out[oc, oy, ox] = acc + b[oc]
    return out


# ---------------------------------------------------------------------------
# conv2d

def test_conv1x1_identity():
    rng = np.random.RandomState(0)
    x = rng.randn(4, 6, 7)
    w = np.eye(4).reshape(4, 4, 1, 1)
    out = conv2d(x, w, np.zeros(4))
    assert np.allclose(out, x, atol=1e-12)


def test_delta_kernel_identity():
    rng = np.random.RandomState(1)
    x = rng.randn(2, 8, 9)
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = conv2d(x, w, np.zeros(2))
    assert np.allclose(out, x, atol=1e-12)


def test_conv_matches_naive_oracle_with_dilation():
    rng = np.random.RandomState(2)
    x = rng.randn(5, 10, 12)
    w = rng.randn(3, 5, 3, 3)
    b = rng.randn(3)
    got = conv2d(x, w, b, dilation=2)
    assert np.max(np.abs(got - naive_conv2d(x, w, b, dilation=2))) < 1e-6


def test_conv_matches_naive_oracle_with_stride():
    rng = np.random.RandomState(3)
    x = rng.randn(3, 9, 11)
    w = rng.randn(4, 3, 3, 3)
    b = rng.randn(4)
    got = conv2d(x, w, b, stride=2)
    assert np.max(np.abs(got - naive_conv2d(x, w, b, stride=2))) < 1e-6


def test_conv_linearity_with_zero_bias():
    rng = np.random.RandomState(4)
    x = rng.randn(2, 6, 6)
    y = rng.randn(2, 6, 6)
    w = rng.randn(3, 2, 3, 3)
    zero = np.zeros(3)
    alpha, beta = 1.7, -0.4
    lhs = conv2d(alpha * x + beta * y, w, zero)
    rhs = alpha * conv2d(x, w, zero) + beta * conv2d(y, w, zero)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_conv_shape_mismatch():
    with pytest.raises(NetworkError):
        conv2d(np.zeros((3, 4, 4)), np.zeros((2, 5, 3, 3)), np.zeros(2))


# ---------------------------------------------------------------------------
# asym_conv5

def test_asym_delta_factors_identity():
    rng = np.random.RandomState(5)
    x = rng.randn(1, 7, 7)
    wv = np.zeros((1, 1, 5, 1))
    wv[0, 0, 2, 0] = 1.0
    wh = np.zeros((1, 1, 1, 5))
    wh[0, 0, 0, 2] = 1.0
    out = asym_conv5(x, wv, wh, np.zeros(1), np.zeros(1))
    assert np.allclose(out, x, atol=1e-12)


def test_asym_equals_full_rank1_kernel():
    rng = np.random.RandomState(6)
    x = rng.randn(1, 12, 14)
    u = rng.randn(5)
    v = rng.randn(5)
    full = np.outer(u, v).reshape(1, 1, 5, 5)
    wv = u.reshape(1, 1, 5, 1)
    wh = v.reshape(1, 1, 1, 5)
    got = asym_conv5(x, wv, wh, np.zeros(1), np.zeros(1))
    want = conv2d(x, full, np.zeros(1))
    assert np.max(np.abs(got - want)) < 1e-6


def test_asym_parameter_count_per_channel_pair():
    wv = np.zeros((1, 1, 5, 1))
    wh = np.zeros((1, 1, 1, 5))
    assert wv[0, 0].size + wh[0, 0].size == 10
    assert np.zeros((5, 5)).size == 25


# ---------------------------------------------------------------------------
# pooling and up-sampling

def test_maxpool_constant():
    x = np.full((3, 8, 10), 2.5)
    out = max_pool2(x)
    assert out.shape == (3, 4, 5)
    assert np.all(out == 2.5)


def test_maxpool_single_block():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert max_pool2(x)[0, 0, 0] == 4.0


def test_maxpool_matches_window_scan_oracle():
    rng = np.random.RandomState(7)
    x = rng.randn(2, 6, 8)
    out = max_pool2(x)
    for c in range(2):
        for i in range(3):
            for j in range(4):
                want = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
                assert out[c, i, j] == want


def test_maxpool_pads_odd_edges():
    x = np.arange(9, dtype=float).reshape(1, 3, 3)
    out = max_pool2(x)
    assert out.shape == (1, 2, 2)
    assert out[0, 1, 1] == 8.0


def test_upsample_single_pixel():
    out = upsample2(np.array([[[3.0]]]))
    assert out.shape == (1, 2, 2)
    assert np.all(out == 3.0)


def test_upsample_after_pool_on_constant_is_identity():
    x = np.full((2, 6, 6), -1.25)
    assert np.array_equal(upsample2(max_pool2(x)), x)


def test_upsample_index_oracle():
    rng = np.random.RandomState(8)
    x = rng.randn(2, 5, 4)
    out = upsample2(x)
    for c in range(2):
        for i in range(10):
            for j in range(8):
                assert out[c, i, j] == x[c, i // 2, j // 2]


# ---------------------------------------------------------------------------
# network structure

def test_default_net_has_17_weighted_layers():
    net = build_default_net(3)
    assert len(net.weighted_layers) == 17


def test_forward_output_matches_input_size():
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=0)
    img = ImageBuffer(np.random.RandomState(9).randint(
        0, 256, size=(64, 64, 3), dtype=np.uint8))
    cmap = forward(net, weights, img)
    assert cmap.shape == (64, 64)


@pytest.mark.parametrize("size", [(32, 48), (64, 64), (80, 32)])
def test_shape_invariant_for_divisible_by_16(size):
    h, w = size
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=1)
    img = ImageBuffer(np.random.RandomState(10).randint(
        0, 256, size=(h, w, 3), dtype=np.uint8))
    assert forward(net, weights, img).shape == (h, w)


def receptive_field_x(layers):
    """Recurrence oracle: per-axis receptive field through the encoder."""
    rf, jump = 1, 1
    for layer in layers:
        if layer.kind == "maxpool":
            rf += jump
            jump *= 2
        elif layer.kind == "upsample":
            break  # encoder ends at the decoder's first up-sample
        elif layer.kind == "asym_conv":
            rf += (layer.kernel - 1) * jump  # the 1x5 factor acts along x
        else:
            rf += (layer.kernel - 1) * layer.dilation * jump
            jump *= layer.stride
    return rf


def test_dilations_enlarge_encoder_receptive_field():
    net = build_default_net(3)
    undilated = []
    for layer in net.layers:
        if layer.kind == "dilated_conv":
            undilated.append(LayerSpec("conv", layer.in_ch, layer.out_ch,
                                       kernel=layer.kernel, dilation=1))
        else:
            undilated.append(layer)
    assert receptive_field_x(net.layers) > receptive_field_x(undilated)


def test_channel_chain_validation():
    with pytest.raises(NetworkError):
        NetworkSpec((LayerSpec("conv", 3, 8), LayerSpec("conv", 16, 8)), 2)


def test_layer_kind_invariants():
    with pytest.raises(NetworkError):
        LayerSpec("asym_conv", 4, 4, kernel=3)
    with pytest.raises(NetworkError):
        LayerSpec("dilated_conv", 4, 4, dilation=1)
    with pytest.raises(NetworkError):
        LayerSpec("conv1x1", 4, 4, kernel=3)


def test_pooling_upsampling_balance_validation():
    with pytest.raises(NetworkError):
        NetworkSpec((LayerSpec("conv", 3, 4), LayerSpec("maxpool")), 2)


# ---------------------------------------------------------------------------
# forward semantics

def zeroed_weights(net):
    store = WeightStore.random(net, seed=0)
    for named in store.arrays.values():
        for arr in named.values():
            arr[:] = 0.0
    return store


def test_constant_class0_advantage_gives_all_background():
    net = build_default_net(3)
    weights = zeroed_weights(net)
    weights.arrays[16]["b"][:] = [1.0, 0.0, 0.0]
    img = ImageBuffer(np.random.RandomState(11).randint(
        0, 256, size=(32, 32, 3), dtype=np.uint8))
    cmap = forward(net, weights, img)
    assert np.all(cmap == 0)


def test_argmax_tie_breaks_toward_lower_class():
    net = build_default_net(3)
    weights = zeroed_weights(net)
    weights.arrays[16]["b"][:] = [0.5, 0.5, 0.5]
    img = ImageBuffer.full(16, 16, (100, 100, 100))
    assert np.all(forward(net, weights, img) == 0)


def test_forward_deterministic():
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=3)
    img = ImageBuffer(np.random.RandomState(12).randint(
        0, 256, size=(48, 48, 3), dtype=np.uint8))
    a = forward(net, weights, img)
    b = forward(net, weights, img)
    assert np.array_equal(a, b)


def test_weight_spec_mismatch_reported():
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=4)
    del weights.arrays[5]
    img = ImageBuffer.full(16, 16, (0, 0, 0))
    with pytest.raises(NetworkError):
        forward(net, weights, img)


def test_non_finite_activation_reported():
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=5)
    weights.arrays[0]["b"][0] = np.nan
    img = ImageBuffer.full(16, 16, (10, 10, 10))
    with pytest.raises(NonFiniteActivation):
        forward(net, weights, img)


def test_run_layers_outputs_finite_for_finite_inputs():
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=6)
    x = np.random.RandomState(13).randn(3, 32, 32)
    assert np.all(np.isfinite(run_layers(net, weights, x)))


# ---------------------------------------------------------------------------
# weight container

def test_weight_store_round_trip(tmp_path):
    net = build_default_net(3)
    weights = WeightStore.random(net, seed=7)
    path = tmp_path / "toy.nsw"
    weights.save(path)
    loaded = WeightStore.load(path)
    assert sorted(loaded.arrays) == sorted(weights.arrays)
    for idx, named in weights.arrays.items():
        for name, arr in named.items():
            # float32 container quantizes; compare at that precision
            assert np.array_equal(loaded.arrays[idx][name],
                                  arr.astype(np.float32).astype(np.float64))


def test_weight_store_checksum_detects_corruption(tmp_path):
    net = build_default_net(3)
    path = tmp_path / "toy.nsw"
    WeightStore.random(net, seed=8).save(path)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(NetworkError):
        WeightStore.load(path)
