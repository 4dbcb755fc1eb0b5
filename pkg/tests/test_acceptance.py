"""Acceptance gate: one test per shipping criterion, each ending in a single
printed pass line. Tolerances are stated inline; everything not marked
approximate is exact integer/rational equality.
"""

import io
import re
import time
from fractions import Fraction

import numpy as np

from lutfab import analyzer, fixtures, lutgen, model_io, quantization, simulator
from lutfab.model_io import LayerSpec

import netgen
import reference

GOLDEN_INITS = (
    0xCCCCCCCCAAAAAAAA,
    0x39C6FF005A5AF0F0,
    0x07FE0000F83E0000,
    0xFFFE0000FFFE0000,
)


def _passed(n, msg):
    print(f"[criterion {n:02d}] PASS - {msg}")


def test_criterion_01_golden_inits_exact_and_fast():
    best = min(
        _timed(lambda: lutgen.gen_lut_inits(1, -3))[0] for _ in range(5)
    )
    assert lutgen.gen_lut_inits(1, -3) == GOLDEN_INITS
    assert best < 1e-3, f"generation took {best * 1e3:.3f} ms"
    _passed(1, f"four INIT words exact, generated in {best * 1e6:.0f} us")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return time.perf_counter() - t0, out


def test_criterion_02_exhaustive_products_via_luts():
    t0 = time.perf_counter()
    checked = 0
    for w0 in range(-8, 8):
        for w1 in range(-8, 8):
            m = lutgen.make_multiplier(w0, w1)
            for a in range(16):
                assert lutgen.lut_multiply(m, 0, a) == w0 * a
                assert lutgen.lut_multiply(m, 1, a) == w1 * a
                checked += 2
    elapsed = time.perf_counter() - t0
    assert checked == 8192
    assert elapsed < 1.0, f"exhaustive sweep took {elapsed:.2f} s"
    _passed(2, f"all 8192 products decoded from LUT reads in {elapsed:.3f} s")


def test_criterion_03_lut_cost_formula():
    assert lutgen.lut_count(4) == Fraction(2)
    assert lutgen.lut_count(8) == Fraction(64)
    _passed(3, "lut_count(4) == 2 and lut_count(8) == 64, exact rationals")


def test_criterion_04_layer_estimate_vs_measured():
    layer = LayerSpec(
        kind="conv_pointwise", in_channels=32, out_channels=32, fold=(32, 32),
        weights=np.ones((32, 32, 1, 1), dtype=np.int8),
    )
    est = lutgen.estimate_layer_resources(layer)
    assert est.lut_mult == 2048
    measured = 1829                      # post-synthesis figure for this layer
    rel = abs(est.lut_mult - measured) / est.lut_mult
    assert rel <= 0.15, f"estimate off by {rel:.1%}"
    _passed(4, f"1024-weight layer estimates 2048 multiplier LUTs, "
               f"{rel:.1%} from the measured 1829")


def test_criterion_05_roofline_exactness():
    assert analyzer.PACKING_FACTORS == {16: 1, 8: 2, 4: 4}
    peak = analyzer.peak_performance(4, 9024, 333_000_000)
    assert peak == Fraction(24_039_936_000_000)
    for name in ("u280", "u280_64th"):
        dev = analyzer.get_device(name)
        for p in (
            analyzer.peak_performance(4, dev.scaled_dsps, dev.clock_hz),
            analyzer.lut_peak_performance(dev.scaled_luts, 2, dev.clock_hz),
        ):
            ridge = analyzer.ridge_intensity(p, dev.bandwidth())
            assert analyzer.attainable(ridge, dev, p) == p
            below = analyzer.attainable(ridge * Fraction(99, 100), dev, p)
            assert below == p * Fraction(99, 100)
    _passed(5, "INT4 peak exact at 24.039936 TOPS; ridge points meet both "
               "roofs exactly on every device/design pair")


def test_criterion_06_simulator_matches_dense_reference():
    rng = np.random.default_rng(0xC6)
    t0 = time.perf_counter()
    for i in range(100):
        net = netgen.random_net(rng, name=f"net{i}")
        assert model_io.validate_graph(net) == [], f"net {i} invalid"
        img = rng.integers(0, 16, size=net.input_shape)
        got = simulator.run_network(net, img)
        want = reference.run_reference(net, img)
        assert np.array_equal(got, want), f"net {i} diverged"
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"oracle sweep took {elapsed:.1f} s"
    _passed(6, f"100 random networks bit-identical to the dense reference "
               f"in {elapsed:.1f} s")


def test_criterion_07_threshold_folding_exact_everywhere():
    rng = np.random.default_rng(0xC7)
    for trial in range(1000):
        window = int(rng.integers(1, 13))
        channels = int(rng.integers(1, 4))
        lo, hi = quantization.accumulator_range(window)
        gain = rng.uniform(0.02, 4.0, size=channels)
        bias = rng.uniform(-200.0, 200.0, size=channels)
        scale = float(rng.uniform(0.05, 8.0))
        out = quantization.QuantParams(scale=scale, zero_point=0,
                                       bits=4, signed=False)
        unit = quantization.fold_to_thresholds(
            quantization.AffineSpec(gain=gain, bias=bias), out, (lo, hi)
        )
        acc = np.arange(lo, hi + 1, dtype=np.int64)
        for c in range(channels):
            got = quantization.apply_thresholds(acc, unit, channel=c)
            want = np.clip(
                np.rint((gain[c] * acc + bias[c]) / scale), 0, 15
            ).astype(np.int64)
            assert np.array_equal(got, want), f"trial {trial} channel {c}"
    _passed(7, "1000 random foldings exact at every accumulator value")


def test_criterion_08_pipelined_equals_sequential(
    tiny_net, tiny_image, mnv2_net, mnv2_image, mnv2_seq_output
):
    rng = np.random.default_rng(0xC8)
    tiny_want = simulator.run_network(tiny_net, tiny_image)
    tiny_mins = simulator.min_fifo_capacities(tiny_net)
    for run in range(12):
        style = run % 3
        if style == 0:
            caps = int(rng.integers(2, 129))
        else:
            caps = {e: m + int(rng.integers(0, 65)) for e, m in tiny_mins.items()}
        jitter = None
        if style == 2:
            jitter = (int(rng.integers(1 << 20)), 0.05, 0.0005)
        got = simulator.run_network_pipelined(
            tiny_net, tiny_image, fifo_capacities=caps, jitter=jitter,
        )
        assert np.array_equal(got, tiny_want), f"tiny run {run}"
    mnv2_mins = simulator.min_fifo_capacities(mnv2_net)
    for run in range(10):
        caps = {e: m + int(rng.integers(0, 65)) for e, m in mnv2_mins.items()}
        got = simulator.run_network_pipelined(
            mnv2_net, mnv2_image, fifo_capacities=caps,
        )
        assert np.array_equal(got, mnv2_seq_output), f"mnv2 run {run}"
    _passed(8, "pipelined output bit-identical over 12 tiny configs "
               "(capacities + thread jitter) and 10 full-network configs")


def test_criterion_09_full_network_op_count():
    t0 = time.perf_counter()
    net = fixtures.mobilenetv2_network(seed=0)
    report = simulator.cycle_model(net)
    elapsed = time.perf_counter() - t0
    target = 0.6015e9
    rel = abs(report.ops_per_image - target) / target
    assert rel <= 0.05, f"ops/image off by {rel:.1%}"
    assert elapsed < 10.0, f"build + cycle model took {elapsed:.1f} s"
    _passed(9, f"ops/image {report.ops_per_image:,} is {rel:.2%} from "
               f"0.6015 GOP, computed in {elapsed:.2f} s")


def test_criterion_10_quantize_round_trip_bound():
    rng = np.random.default_rng(0xCA)
    configs = [
        (0.013, 4, False), (0.5, 4, True), (1.0, 8, False),
        (7.25, 8, True), (0.31, 4, False),
    ]
    for scale, bits, signed in configs:
        p = quantization.QuantParams(scale=scale, zero_point=0,
                                     bits=bits, signed=signed)
        x = rng.uniform(scale * p.y_min, scale * p.y_max, size=10_000)
        err = np.abs(quantization.dequantize(quantization.quantize(x, p), p) - x)
        assert np.all(err <= scale / 2), \
            f"bound broken at scale {scale}: max err {err.max()}"
    _passed(10, "round-trip error <= scale/2 on 10,000 samples for each of "
                "5 parameter sets")


def test_criterion_11_netlist_structure_and_determinism(tiny_net):
    def emit(net):
        sink = io.StringIO()
        lutgen.emit_netlist(net, sink)
        return sink.getvalue()

    rng = np.random.default_rng(0xCB)
    odd = netgen.random_net(rng, name="oddnet")
    while not any(l.is_conv and l.weight_count % 2 for l in odd.layers):
        odd = netgen.random_net(rng, name="oddnet")
    for net in (tiny_net, odd):
        text = emit(net)
        assert text == emit(net), "emission is not deterministic"
        inst = re.findall(
            r"LUT6_2 #\(\.INIT\(64'h([0-9A-F]{16})\)\) "
            r"mul_(\d+)_(\d+)_(\d+)_b(\d)\b",
            text,
        )
        names = [m[1:] for m in inst]
        assert len(set(names)) == len(names), "instance names collide"
        per_layer = {}
        for _, idx, _, _, _ in inst:
            per_layer[int(idx)] = per_layer.get(int(idx), 0) + 1
        for i, layer in enumerate(net.layers):
            if layer.is_conv:
                assert per_layer.get(i, 0) == -(-layer.weight_count // 2) * 4, \
                    f"layer {i} of {net.name}"
    _passed(11, "netlists byte-stable; every 4-bit conv layer instantiates "
                "exactly ceil(weights/2) x 4 LUT6_2 primitives")
