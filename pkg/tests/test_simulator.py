from fractions import Fraction

import numpy as np
import pytest

from lutfab import lutgen, simulator
from lutfab.model_io import LayerSpec, NetworkManifest

import netgen
import reference


def _elements(image):
    for row in image:
        for el in row:
            yield el


_identity_thresholds = netgen.identity_thresholds
_residual_net = netgen.residual_net


def test_pointwise_windows_are_pixels():
    layer = LayerSpec(kind="conv_pointwise", in_channels=3, out_channels=1,
                      weights=np.ones((1, 3, 1, 1), dtype=np.int8))
    img = np.arange(2 * 2 * 3).reshape(2, 2, 3)
    wins = list(simulator.conv_generator(layer, img.shape, _elements(img)))
    assert np.array_equal(np.stack(wins), img.reshape(4, 3))


def test_window_layout_is_channel_major():
    layer = LayerSpec(kind="conv_standard", in_channels=2, out_channels=1,
                      kernel=(3, 3), pad=(1, 1, 1, 1),
                      weights=np.ones((1, 2, 3, 3), dtype=np.int8))
    img = np.arange(3 * 3 * 2).reshape(3, 3, 2)
    wins = list(simulator.conv_generator(layer, img.shape, _elements(img)))
    assert len(wins) == 9
    center = wins[4]                            # covers the image exactly
    want = np.concatenate([img[:, :, 0].ravel(), img[:, :, 1].ravel()])
    assert np.array_equal(center, want)


def test_strided_window_count():
    layer = LayerSpec(kind="conv_standard", in_channels=1, out_channels=1,
                      kernel=(3, 3), stride=(2, 2), pad=(1, 1, 1, 1),
                      weights=np.ones((1, 1, 3, 3), dtype=np.int8))
    img = np.zeros((224, 224, 1), dtype=np.int64)
    count = sum(1 for _ in simulator.conv_generator(layer, img.shape, _elements(img)))
    assert count == 112 * 112


def test_stream_length_is_enforced():
    layer = LayerSpec(kind="conv_pointwise", in_channels=1, out_channels=1,
                      weights=np.ones((1, 1, 1, 1), dtype=np.int8))
    short = iter([np.array([1])] * 3)
    with pytest.raises(simulator.StreamLengthError):
        list(simulator.conv_generator(layer, (2, 2, 1), short))
    long = iter([np.array([1])] * 5)
    with pytest.raises(simulator.StreamLengthError):
        list(simulator.conv_generator(layer, (2, 2, 1), long))


def test_mac_kernel_pair_example():
    layer = LayerSpec(kind="conv_pointwise", in_channels=1, out_channels=2,
                      weights=np.array([[[[1]]], [[[-3]]]], dtype=np.int8))
    bank = lutgen.build_lut_bank(layer.flat_weights())
    got = list(simulator.mac_kernel(layer, bank, np.array([[15], [0], [7]])))
    assert np.array_equal(np.stack(got), [[15, -45], [0, 0], [7, -21]])


def test_mac_kernel_rejects_bad_window_width():
    layer = LayerSpec(kind="conv_pointwise", in_channels=2, out_channels=1,
                      weights=np.ones((1, 2, 1, 1), dtype=np.int8))
    bank = lutgen.build_lut_bank(layer.flat_weights())
    with pytest.raises(ValueError):
        list(simulator.mac_kernel(layer, bank, np.zeros((1, 3), dtype=np.int64)))


def test_identity_network_passes_input_through():
    layer = LayerSpec(kind="conv_pointwise", in_channels=1, out_channels=1,
                      weights=np.array([[[[1]]]], dtype=np.int8),
                      thresholds=_identity_thresholds(1))
    net = NetworkManifest(name="id", input_shape=(4, 4, 1), layers=[layer])
    img = np.arange(16).reshape(4, 4, 1) % 16
    assert np.array_equal(simulator.run_network(net, img), img)


def test_run_network_rejects_bad_images(tiny_net):
    with pytest.raises(ValueError):
        simulator.run_network(tiny_net, np.zeros((2, 2, 1), dtype=np.int64))
    h, w, c = tiny_net.input_shape
    img = np.zeros((h, w, c), dtype=np.int64)
    img[0, 0, 0] = 16                           # outside the 4-bit stream
    with pytest.raises(ValueError):
        simulator.run_network(tiny_net, img)


def test_random_nets_match_reference_quick():
    rng = np.random.default_rng(100)
    for _ in range(10):
        net = netgen.random_net(rng)
        img = rng.integers(0, 16, size=net.input_shape)
        got = simulator.run_network(net, img)
        assert np.array_equal(got, reference.run_reference(net, img))


def test_fold_does_not_change_results():
    rng = np.random.default_rng(101)
    net = netgen.random_net(rng)
    img = rng.integers(0, 16, size=net.input_shape)
    base = simulator.run_network(net, img)
    for layer in net.layers:
        if layer.is_conv:
            layer.fold = (layer.out_channels, 1)
    assert np.array_equal(simulator.run_network(net, img), base)


def test_residual_net_matches_reference():
    net = _residual_net()
    img = np.random.default_rng(8).integers(0, 16, size=net.input_shape)
    got = simulator.run_network(net, img)
    assert np.array_equal(got, reference.run_reference(net, img))


def test_skip_from_image_source():
    layers = [
        LayerSpec(kind="conv_pointwise", in_channels=2, out_channels=2,
                  weights=np.eye(2, dtype=np.int8).reshape(2, 2, 1, 1),
                  thresholds=_identity_thresholds(2), name="mix"),
        LayerSpec(kind="add", in_channels=2, out_channels=2, skip_from=-1,
                  rescale0=np.full(2, 1 << 16, dtype=np.int64),
                  rescale1=np.full(2, 1 << 16, dtype=np.int64), name="join"),
    ]
    net = NetworkManifest(name="skipin", input_shape=(5, 5, 2), layers=layers)
    img = np.random.default_rng(9).integers(0, 16, size=net.input_shape)
    got = simulator.run_network(net, img)
    assert np.array_equal(got, reference.run_reference(net, img))
    piped = simulator.run_network_pipelined(net, img, fifo_capacities=128)
    assert np.array_equal(piped, got)


def test_gap_sums_whole_plane():
    layers = [
        LayerSpec(kind="global_avg_pool", in_channels=3, out_channels=3, name="gap"),
    ]
    net = NetworkManifest(name="g", input_shape=(4, 4, 3), layers=layers)
    img = np.random.default_rng(10).integers(0, 16, size=net.input_shape)
    got = simulator.run_network(net, img)
    assert got.shape == (1, 1, 3)
    assert np.array_equal(got[0, 0], img.sum(axis=(0, 1)))


def test_threshold_only_stage():
    th = np.tile(np.arange(2, 32, 2, dtype=np.int64), (3, 1))
    layers = [
        LayerSpec(kind="threshold_only", in_channels=3, out_channels=3,
                  thresholds=th, name="req"),
    ]
    net = NetworkManifest(name="t", input_shape=(4, 4, 3), layers=layers)
    img = np.random.default_rng(11).integers(0, 16, size=net.input_shape)
    got = simulator.run_network(net, img)
    assert np.array_equal(got, reference.thresholds_reference(img, th))


def test_pipelined_matches_sequential_tiny(tiny_net, tiny_image):
    want = simulator.run_network(tiny_net, tiny_image)
    for caps in (2, 3, 64):
        got = simulator.run_network_pipelined(tiny_net, tiny_image,
                                              fifo_capacities=caps)
        assert np.array_equal(got, want)


def test_pipelined_with_jitter(tiny_net, tiny_image):
    want = simulator.run_network(tiny_net, tiny_image)
    got = simulator.run_network_pipelined(
        tiny_net, tiny_image, fifo_capacities=2, jitter=(0, 0.2, 0.001),
    )
    assert np.array_equal(got, want)


def test_pipelined_rejects_capacity_below_two(tiny_net, tiny_image):
    with pytest.raises(ValueError):
        simulator.run_network_pipelined(tiny_net, tiny_image, fifo_capacities=1)


def test_min_capacities_cover_all_edges():
    net = _residual_net()
    mins = simulator.min_fifo_capacities(net)
    assert set(mins) == set(simulator._edge_list(net))
    assert mins[(0, 3)] > 2                     # the skip edge needs real depth
    assert all(c >= 2 for c in mins.values())


def test_pipelined_at_exact_min_capacities():
    net = _residual_net()
    img = np.random.default_rng(12).integers(0, 16, size=net.input_shape)
    want = simulator.run_network(net, img)
    got = simulator.run_network_pipelined(
        net, img, fifo_capacities=simulator.min_fifo_capacities(net),
    )
    assert np.array_equal(got, want)


def test_undersized_skip_fifo_deadlocks():
    net = _residual_net()
    img = np.random.default_rng(13).integers(0, 16, size=net.input_shape)
    caps = simulator.min_fifo_capacities(net)
    caps[(0, 3)] = 2                            # starve the skip connection
    with pytest.raises(simulator.DeadlockError) as info:
        simulator.run_network_pipelined(net, img, fifo_capacities=caps,
                                        stall_timeout=0.3)
    assert "stem->join" in str(info.value)


def test_pipelined_random_nets_spot_check():
    rng = np.random.default_rng(14)
    for _ in range(5):
        net = netgen.random_net(rng)
        img = rng.integers(0, 16, size=net.input_shape)
        want = simulator.run_network(net, img)
        cap = int(rng.integers(2, 7))
        got = simulator.run_network_pipelined(net, img, fifo_capacities=cap)
        assert np.array_equal(got, want)


def test_cycle_model_unrolled_example():
    layer = LayerSpec(kind="conv_standard", in_channels=3, out_channels=16,
                      kernel=(3, 3), stride=(2, 2), pad=(1, 1, 1, 1),
                      fold=(16, 27),
                      weights=np.ones((16, 3, 3, 3), dtype=np.int8), name="c0")
    net = NetworkManifest(name="one", input_shape=(224, 224, 3), layers=[layer],
                          clock_hz=333_000_000)
    flat = simulator.cycle_model(net, pipeline_depth=0)
    assert flat.per_layer_cycles == [112 * 112]
    assert flat.fps_estimate == Fraction(333_000_000, 12544)
    assert round(float(flat.fps_estimate)) == 26547
    assert flat.ops_per_image == 2 * 112 * 112 * 16 * 27
    deep = simulator.cycle_model(net)
    assert deep.per_layer_cycles == [12544 + simulator.DEFAULT_PIPELINE_DEPTH]


def test_cycle_model_fold_scaling():
    def one(fold):
        layer = LayerSpec(kind="conv_pointwise", in_channels=8, out_channels=8,
                          fold=fold, weights=np.ones((8, 8, 1, 1), dtype=np.int8))
        net = NetworkManifest(name="f", input_shape=(6, 6, 8), layers=[layer])
        return simulator.cycle_model(net, pipeline_depth=0).per_layer_cycles[0]

    assert one((8, 8)) == 36
    assert one((4, 8)) == 72
    assert one((8, 4)) == 72
    assert one((1, 1)) == 36 * 64


def test_cycle_model_bottleneck_and_fps(mnv2_net):
    report = simulator.cycle_model(mnv2_net)
    assert len(report.per_layer_cycles) == len(mnv2_net.layers)
    worst = max(report.per_layer_cycles)
    assert report.per_layer_cycles[report.bottleneck_layer] == worst
    assert report.fps_estimate == Fraction(mnv2_net.clock_hz, worst)
