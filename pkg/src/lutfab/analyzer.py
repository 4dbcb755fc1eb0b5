"""Roofline and peak-performance models for DSP-packed and LUT-fabric
accelerator designs.

All roof arithmetic is exact (fractions.Fraction); floats appear only at
the CSV formatting boundary. A MAC counts as 2 ops throughout.
"""

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .model_io import LayerSpec, NetworkManifest

DEVICE_DB_ENV = "LUTFAB_DEVICES"

# ops per DSP per cycle by operand width: one 16-bit MAC, two 8-bit, four
# 4-bit multiplies packed per block
PACKING_FACTORS = {16: 1, 8: 2, 4: 4}


def packing_factor(bits: int) -> int:
    if bits not in PACKING_FACTORS:
        raise ValueError(f"no DSP packing factor for {bits}-bit operands")
    return PACKING_FACTORS[bits]


@dataclass(frozen=True)
class DeviceModel:
    """FPGA resource/bandwidth/clock budget, optionally scaled down to a
    fraction of the part (resource_fraction N models 1/N of the device)."""

    name: str
    luts: int
    dsps: int
    clock_hz: int
    bw_bytes_per_s: dict
    resource_fraction: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.luts <= 0 or self.dsps <= 0 or self.clock_hz <= 0:
            raise ValueError("device counts must be positive")
        if self.resource_fraction < 1:
            raise ValueError("resource_fraction must be >= 1")
        if not self.bw_bytes_per_s:
            raise ValueError("device needs at least one memory system")

    @property
    def scaled_luts(self) -> Fraction:
        return Fraction(self.luts, self.resource_fraction)

    @property
    def scaled_dsps(self) -> Fraction:
        return Fraction(self.dsps, self.resource_fraction)

    def bandwidth(self, system: str | None = None) -> Fraction:
        """Scaled bytes/s of one memory system (default: the fastest)."""
        if system is None:
            raw = max(self.bw_bytes_per_s.values())
        elif system in self.bw_bytes_per_s:
            raw = self.bw_bytes_per_s[system]
        else:
            raise KeyError(f"device {self.name} has no memory system {system!r}")
        return Fraction(raw, self.resource_fraction)


@dataclass(frozen=True)
class RooflineReport:
    peak_ops_per_s: Fraction
    bw_roof: Fraction               # slope, bytes/s
    ridge_intensity: Fraction       # ops/byte where the roofs meet
    samples: list                   # (intensity, attainable) pairs


def peak_performance(p: int, pes, f) -> Fraction:
    """Compute roof of a DSP design: p × PEs × 2 × f ops/s, exact."""
    if p not in PACKING_FACTORS.values():
        raise ValueError(f"packing factor {p} not one of {sorted(PACKING_FACTORS.values())}")
    if pes <= 0 or f <= 0:
        raise ValueError("PE count and clock must be positive")
    return Fraction(p) * Fraction(pes) * 2 * Fraction(f)


def lut_peak_performance(available_luts, luts_per_mac, f) -> Fraction:
    """Compute roof of a LUT-fabric design: every luts_per_mac LUTs form one
    MAC unit running at f, so the roof is (luts / luts_per_mac) × 2 × f."""
    lpm = Fraction(luts_per_mac)
    if lpm <= 0:
        raise ValueError("luts_per_mac must be positive")
    return Fraction(available_luts) / lpm * 2 * Fraction(f)


def attainable(intensity, dev: DeviceModel, peak, system: str | None = None) -> Fraction:
    """min(peak, bandwidth × intensity) ops/s."""
    i = Fraction(intensity)
    if i < 0:
        raise ValueError("arithmetic intensity cannot be negative")
    return min(Fraction(peak), dev.bandwidth(system) * i)


def is_compute_bound(intensity, dev: DeviceModel, peak, system: str | None = None) -> bool:
    return dev.bandwidth(system) * Fraction(intensity) >= Fraction(peak)


def ridge_intensity(peak, bw) -> Fraction:
    return Fraction(peak) / Fraction(bw)


def layer_intensity(layer: LayerSpec, in_shape, in_bits: int) -> Fraction:
    """Ops per byte if this one layer's input and output streams both moved
    off-chip at their stream bit-widths."""
    macs = layer.macs(in_shape)
    h, w, c = in_shape
    oh, ow, oc = layer.out_shape(in_shape)
    in_bytes = Fraction(h * w * c * in_bits, 8)
    out_bytes = Fraction(oh * ow * oc * layer.act_bits, 8)
    return Fraction(2 * macs) / (in_bytes + out_bytes)


def network_intensity(net: NetworkManifest) -> Fraction:
    """Whole-network ops/byte under the dataflow model: weights live
    on-chip, so off-chip traffic is the input image plus the final output
    stream only."""
    h, w, c = net.input_shape
    oh, ow, oc = net.output_shape()
    out_bits = net.layers[-1].act_bits
    in_bytes = Fraction(h * w * c * net.input_bits, 8)
    out_bytes = Fraction(oh * ow * oc * out_bits, 8)
    return Fraction(2 * net.total_macs()) / (in_bytes + out_bytes)


def build_roofline(dev: DeviceModel, peak, system: str | None = None, points: int = 25) -> RooflineReport:
    """Sample attainable performance over a log-spaced intensity sweep
    (powers of two from 1/16 up), always including the exact ridge point."""
    bw = dev.bandwidth(system)
    ridge = ridge_intensity(peak, bw)
    sweep = [Fraction(2) ** k for k in range(-4, points - 4)]
    if ridge not in sweep:
        sweep = sorted(sweep + [ridge])
    samples = [(i, attainable(i, dev, peak, system)) for i in sweep]
    return RooflineReport(Fraction(peak), bw, ridge, samples)


def emit_roofline_csv(dev: DeviceModel, designs, out, system: str | None = None, points: int = 25) -> None:
    """Write intensity vs attainable columns for each (name, peak) design.

    Deterministic: fixed sweep, fixed decimal formatting.
    """
    designs = list(designs)
    if not designs:
        raise ValueError("need at least one design to plot")
    reports = [build_roofline(dev, peak, system, points) for _, peak in designs]
    grid = sorted({i for r in reports for i, _ in r.samples})
    out.write("intensity_ops_per_byte," + ",".join(
        f"{name}_ops_per_s" for name, _ in designs
    ) + "\n")
    for i in grid:
        row = [f"{float(i):.6g}"]
        for _, peak in designs:
            row.append(f"{float(attainable(i, dev, peak, system)):.6g}")
        out.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# Device database
# ---------------------------------------------------------------------------

def _device_from_entry(name: str, entry: dict) -> DeviceModel:
    return DeviceModel(
        name=name,
        luts=int(entry["luts"]),
        dsps=int(entry["dsps"]),
        clock_hz=int(entry["clock_hz"]),
        bw_bytes_per_s={k: int(v) for k, v in entry["bw_bytes_per_s"].items()},
        resource_fraction=int(entry.get("resource_fraction", 1)),
        metadata=dict(entry.get("metadata", {})),
    )


def load_devices(path=None) -> dict:
    """Device database: ``path`` argument, else $LUTFAB_DEVICES, else the
    bundled defaults."""
    if path is None:
        path = os.environ.get(DEVICE_DB_ENV)
    if path is None:
        text = resources.files("lutfab").joinpath("devices.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return {name: _device_from_entry(name, entry) for name, entry in doc.items()}


def get_device(name: str, path=None) -> DeviceModel:
    devices = load_devices(path)
    if name not in devices:
        raise KeyError(
            f"unknown device {name!r}; available: {', '.join(sorted(devices))}"
        )
    return devices[name]
