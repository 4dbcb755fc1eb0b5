"""Seed-reproducible test models written in the model-directory format.

Two fixtures:
  * tiny: three conv layers (standard / depthwise / pointwise) on an
    8x8x4 input, all 4-bit, thresholds derived by folding random
    positive-gain affine chains;
  * mobilenetv2: the full inverted-residual topology (53 conv layers,
    10 residual adds, global average pool, classifier head) with random
    range-valid weights. The first and last convolutions are 8-bit, the
    rest 4-bit LUT-mapped; the first 15 conv layers are fully parallel and
    the remainder fold to pe=8.

Weights are random, not trained, so outputs are meaningful only for
bit-exactness and resource/throughput accounting.
"""

from pathlib import Path

import numpy as np

from .model_io import LayerSpec, NetworkManifest, save_network
from .quantization import (
    AffineSpec,
    QuantParams,
    accumulator_range,
    fold_to_thresholds,
)

# inverted residual settings: (expansion, out_channels, repeats, stride)
MOBILENETV2_BLOCKS = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]
FULLY_PARALLEL_CONVS = 15


def _rand_weights(rng, cout, cin_per, kh, kw, bits) -> np.ndarray:
    lim = 1 << (bits - 1)
    return rng.integers(-lim, lim, size=(cout, cin_per, kh, kw), dtype=np.int64).astype(np.int8)


def _folded_thresholds(rng, channels, window, out_bits=4, weight_bits=4, in_bits=4):
    """Thresholds built the honest way: fold a random positive-gain affine
    chain over the layer's full accumulator range."""
    lo, hi = accumulator_range(window, weight_bits, in_bits)
    gain = rng.uniform(6.0, 14.0, channels) / hi
    bias = rng.uniform(-1.0, 1.0, channels)
    out = QuantParams(1.0, 0, out_bits, signed=False)
    unit = fold_to_thresholds(AffineSpec(gain, bias), out, (lo, hi))
    return unit.thresholds


def _sampled_thresholds(rng, channels, window, out_bits, weight_bits, in_bits):
    """Random ascending thresholds centered on the layer's accumulator
    distribution (folding over huge ranges would be needlessly slow for the
    larger fixture; any ascending table is a valid unit)."""
    lo, hi = accumulator_range(window, weight_bits, in_bits)
    w_mean, a_mean = -0.5, ((1 << in_bits) - 1) / 2
    w_sq = (1 << weight_bits) ** 2 / 12 + w_mean**2
    a_sq = (1 << in_bits) ** 2 / 12 + a_mean**2
    var = window * (w_sq * a_sq - (w_mean * a_mean) ** 2)
    mu = window * w_mean * a_mean
    levels = (1 << out_bits) - 1
    t = rng.normal(mu, np.sqrt(var), size=(channels, levels))
    t = np.clip(np.rint(t), lo, hi).astype(np.int64)
    t.sort(axis=1)
    return t


def tiny_network(seed: int = 0) -> NetworkManifest:
    rng = np.random.default_rng(seed)
    layers = [
        LayerSpec(
            kind="conv_standard",
            in_channels=4,
            out_channels=8,
            kernel=(3, 3),
            stride=(1, 1),
            pad=(1, 1, 1, 1),
            fold=(8, 36),
            weights=_rand_weights(rng, 8, 4, 3, 3, 4),
            thresholds=_folded_thresholds(rng, 8, 36),
            name="conv0",
        ),
        LayerSpec(
            kind="conv_depthwise",
            in_channels=8,
            out_channels=8,
            kernel=(3, 3),
            stride=(2, 2),
            pad=(1, 1, 1, 1),
            fold=(8, 9),
            weights=_rand_weights(rng, 8, 1, 3, 3, 4),
            thresholds=_folded_thresholds(rng, 8, 9),
            name="conv1_dw",
        ),
        LayerSpec(
            kind="conv_pointwise",
            in_channels=8,
            out_channels=16,
            fold=(16, 8),
            weights=_rand_weights(rng, 16, 8, 1, 1, 4),
            name="conv2_pw",
        ),
    ]
    return NetworkManifest(
        name="tiny", input_shape=(8, 8, 4), layers=layers, input_bits=4
    )


def _conv(rng, kind, cin, cout, conv_index, *, kernel=(1, 1), stride=(1, 1),
          pad=(0, 0, 0, 0), weight_bits=4, act_bits=4, in_bits=4,
          thresholds=True, name=""):
    cin_per = 1 if kind == "conv_depthwise" else cin
    kh, kw = kernel
    window = cin_per * kh * kw if kind != "conv_depthwise" else kh * kw
    if conv_index < FULLY_PARALLEL_CONVS:
        fold = (cout, window)
    elif kind == "conv_depthwise":
        fold = (8, window)
    else:
        fold = (8, 8)
    layer = LayerSpec(
        kind=kind,
        in_channels=cin,
        out_channels=cout,
        kernel=kernel,
        stride=stride,
        pad=pad,
        weight_bits=weight_bits,
        act_bits=act_bits,
        fold=fold,
        weights=_rand_weights(rng, cout, cin_per, kh, kw, weight_bits),
        name=name,
    )
    if thresholds:
        layer.thresholds = _sampled_thresholds(
            rng, cout, window, act_bits, weight_bits, in_bits
        )
    return layer


def mobilenetv2_network(seed: int = 0) -> NetworkManifest:
    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []
    conv_index = 0

    def add_conv(layer):
        nonlocal conv_index
        layers.append(layer)
        conv_index += 1

    add_conv(_conv(rng, "conv_standard", 3, 32, conv_index, kernel=(3, 3),
                   stride=(2, 2), pad=(1, 1, 1, 1), weight_bits=8, in_bits=8,
                   name="conv0"))
    cin = 32
    for b, (t, c, n, s) in enumerate(MOBILENETV2_BLOCKS):
        for r in range(n):
            stride = s if r == 0 else 1
            block_input = len(layers) - 1
            mid = cin * t
            if t != 1:
                add_conv(_conv(rng, "conv_pointwise", cin, mid, conv_index,
                               name=f"b{b}r{r}_expand"))
            add_conv(_conv(rng, "conv_depthwise", mid, mid, conv_index,
                           kernel=(3, 3), stride=(stride, stride),
                           pad=(1, 1, 1, 1), name=f"b{b}r{r}_dw"))
            add_conv(_conv(rng, "conv_pointwise", mid, c, conv_index,
                           name=f"b{b}r{r}_project"))
            if stride == 1 and cin == c:
                layers.append(LayerSpec(
                    kind="add",
                    in_channels=c,
                    out_channels=c,
                    skip_from=block_input,
                    rescale0=rng.integers(32768, 98304, c, dtype=np.int64),
                    rescale1=rng.integers(32768, 98304, c, dtype=np.int64),
                    name=f"b{b}r{r}_add",
                ))
            cin = c
    add_conv(_conv(rng, "conv_pointwise", 320, 1280, conv_index,
                   name="conv_head"))
    gap = LayerSpec(
        kind="global_avg_pool",
        in_channels=1280,
        out_channels=1280,
        act_bits=8,
        name="gap",
    )
    gap.thresholds = np.sort(
        rng.integers(0, 7 * 7 * 15 + 1, size=(1280, 255), dtype=np.int64), axis=1
    )
    layers.append(gap)
    add_conv(_conv(rng, "conv_pointwise", 1280, 1000, conv_index,
                   weight_bits=8, act_bits=8, in_bits=8, thresholds=False,
                   name="classifier"))
    return NetworkManifest(
        name="mobilenetv2",
        input_shape=(224, 224, 3),
        layers=layers,
        input_bits=8,
        clock_hz=333_000_000,
    )


FIXTURE_BUILDERS = {
    "tiny": tiny_network,
    "mobilenetv2": mobilenetv2_network,
}


def make_fixture(kind: str, seed: int, out_dir) -> Path:
    """Write a fixture model directory; same kind+seed gives identical bytes."""
    if kind not in FIXTURE_BUILDERS:
        raise ValueError(
            f"unknown fixture {kind!r}; available: {', '.join(sorted(FIXTURE_BUILDERS))}"
        )
    net = FIXTURE_BUILDERS[kind](seed)
    out = Path(out_dir)
    save_network(net, out)
    return out


def random_image(net: NetworkManifest, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    hi = 1 << net.input_bits
    return rng.integers(0, hi, size=net.input_shape, dtype=np.int64)
