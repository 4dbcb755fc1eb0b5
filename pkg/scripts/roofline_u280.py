#!/usr/bin/env python3
"""Print and export the roofline for DSP-packed and LUT-fabric designs.

Example:
    python3 scripts/roofline_u280.py --device u280_64th --out roofline.csv
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from lutfab import analyzer, lutgen


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--device", default="u280")
    ap.add_argument("--devices", default=None, help="device database path")
    ap.add_argument("--luts-per-mac", type=float, default=None,
                    help="LUT cost per 4-bit MAC (default: the model value)")
    ap.add_argument("--system", default=None, help="memory system (default: fastest)")
    ap.add_argument("--out", default=None, help="CSV output path")
    args = ap.parse_args()

    dev = analyzer.get_device(args.device, args.devices)
    lpm = args.luts_per_mac if args.luts_per_mac else lutgen.lut_count(4)
    designs = [
        ("dsp_int8", analyzer.peak_performance(2, dev.scaled_dsps, dev.clock_hz)),
        ("dsp_int4", analyzer.peak_performance(4, dev.scaled_dsps, dev.clock_hz)),
        ("lut_int4", analyzer.lut_peak_performance(dev.scaled_luts, lpm, dev.clock_hz)),
    ]
    bw = dev.bandwidth(args.system)
    print(f"device {dev.name}: {float(dev.scaled_luts):,.0f} LUTs, "
          f"{float(dev.scaled_dsps):,.0f} DSPs, {dev.clock_hz / 1e6:.0f} MHz, "
          f"{float(bw) / 1e9:.2f} GB/s")
    for name, peak in designs:
        ridge = analyzer.ridge_intensity(peak, bw)
        print(f"  {name:<10} peak {float(peak) / 1e12:8.4f} TOPS   "
              f"ridge {float(ridge):8.2f} ops/byte")
    if args.out:
        with open(args.out, "w") as f:
            analyzer.emit_roofline_csv(dev, designs, f, system=args.system)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
