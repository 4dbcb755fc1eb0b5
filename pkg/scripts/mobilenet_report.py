#!/usr/bin/env python3
"""Full-network report for the bundled MobileNetV2-shaped fixture: op
counts, per-layer cycle bounds, resource totals, and (optionally) a
bit-exact inference run.

Example:
    python3 scripts/mobilenet_report.py --simulate --device u280_64th
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from lutfab import analyzer, fixtures, lutgen, simulator


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--device", default="u280_64th")
    ap.add_argument("--pipeline-depth", type=int,
                    default=simulator.DEFAULT_PIPELINE_DEPTH)
    ap.add_argument("--simulate", action="store_true",
                    help="run one image sequentially and pipelined")
    ap.add_argument("--top", type=int, default=5,
                    help="how many bottleneck layers to list")
    args = ap.parse_args()

    net = fixtures.mobilenetv2_network(seed=args.seed)
    report = simulator.cycle_model(net, pipeline_depth=args.pipeline_depth)
    shapes = net.layer_input_shapes()
    bits = net.layer_input_bits()

    print(f"network {net.name}: {len(net.layers)} layers, "
          f"{net.total_weights():,} weights, {net.total_macs():,} MACs")
    print(f"ops/image {report.ops_per_image:,} "
          f"({report.ops_per_image / 1e9:.4f} GOP)")
    print(f"fps bound {float(report.fps_estimate):,.1f} at "
          f"{net.clock_hz / 1e6:.0f} MHz")

    ranked = sorted(enumerate(report.per_layer_cycles),
                    key=lambda kv: -kv[1])[: args.top]
    print("\nslowest layers (cycles/image):")
    for i, cyc in ranked:
        print(f"  {i:3d} {net.layers[i].name:<16} {cyc:>12,}")

    total = lutgen.ResourceEstimate()
    for i, layer in enumerate(net.layers):
        total = total + lutgen.estimate_layer_resources(layer, shapes[i], bits[i])
    dev = analyzer.get_device(args.device)
    print(f"\nresources: {total.lut_mult:,} multiplier LUTs, "
          f"{total.lut_other:,} adder LUTs, {total.dsp:,} DSPs "
          f"(device budget {float(dev.scaled_luts):,.0f} LUTs, "
          f"{float(dev.scaled_dsps):,.0f} DSPs)")
    intensity = analyzer.network_intensity(net)
    peak = analyzer.peak_performance(4, dev.scaled_dsps, dev.clock_hz)
    bound = "compute" if analyzer.is_compute_bound(intensity, dev, peak) else "memory"
    print(f"intensity {float(intensity):,.0f} ops/byte -> {bound}-bound "
          f"on {dev.name}")

    if args.simulate:
        image = fixtures.random_image(net, seed=1)
        t0 = time.perf_counter()
        seq = simulator.run_network(net, image)
        t1 = time.perf_counter()
        pipe = simulator.run_network_pipelined(net, image)
        t2 = time.perf_counter()
        match = "bit-identical" if np.array_equal(seq, pipe) else "DIVERGED"
        print(f"\nsequential {t1 - t0:.2f} s, pipelined {t2 - t1:.2f} s, "
              f"outputs {match}; top-1 index {int(np.argmax(seq))}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
