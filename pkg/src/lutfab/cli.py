"""Command-line front end.

Subcommands:
  compile       emit the structural netlist and INIT manifest for a model
  simulate      run bit-exact inference (sequential or pipelined)
  analyze       roofline, resource, and cycle reports
  emit-fixture  write a seed-reproducible test model directory

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
Every command drops a machine-readable run_summary.json in --out; outputs
contain no timestamps so reruns are byte-identical.
"""

import argparse
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analyzer, fixtures, lutgen, simulator
from .model_io import ModelFormatError, load_network

SUMMARY_NAME = "run_summary.json"


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _write_summary(out_dir: Path, command: str, payload: dict) -> None:
    doc = {"command": command, "status": "ok", **payload}
    (out_dir / SUMMARY_NAME).write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n"
    )


def _load(args):
    net = load_network(args.model)
    return net


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------

def cmd_compile(args) -> None:
    net = _load(args)
    out = _out_dir(args)
    sink = io.StringIO()
    lutgen.emit_netlist(net, sink)
    (out / "netlist.v").write_text(sink.getvalue())
    layers_doc = []
    for i, layer in enumerate(net.layers):
        if not layer.is_conv:
            continue
        bank = lutgen.build_lut_bank(
            layer.flat_weights(), layer.kind == "conv_depthwise"
        )
        layers_doc.append({
            "index": i,
            "name": layer.name,
            "kind": layer.kind,
            "groups": bank.group_count,
            "lut6_2": bank.group_count * lutgen.LUTS_PER_GROUP,
            "instances": [
                {"co": co, "ci": ci, "inits": [f"0x{v:016X}" for v in inits]}
                for co, ci, inits in bank.instances()
            ],
        })
    (out / "inits.json").write_text(
        json.dumps({"network": net.name, "layers": layers_doc}, indent=1, sort_keys=True) + "\n"
    )
    _write_summary(out, "compile", {
        "model": str(args.model),
        "outputs": ["netlist.v", "inits.json"],
        "lut6_2_total": sum(d["lut6_2"] for d in layers_doc),
    })
    print(f"wrote netlist.v and inits.json under {out}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _load_image(net, args) -> np.ndarray:
    if args.input:
        raw = Path(args.input).read_bytes()
        n = int(np.prod(net.input_shape))
        if len(raw) != n:
            raise ModelFormatError(
                f"input file holds {len(raw)} bytes, expected {n} "
                f"for shape {net.input_shape}"
            )
        img = np.frombuffer(raw, dtype=np.uint8).reshape(net.input_shape)
        return img.astype(np.int64)
    return fixtures.random_image(net, args.image_seed)


def cmd_simulate(args) -> None:
    net = _load(args)
    out = _out_dir(args)
    image = _load_image(net, args)
    if args.pipelined:
        result = simulator.run_network_pipelined(
            net, image, fifo_capacities=args.fifo_capacity,
            stall_timeout=args.stall_timeout,
        )
    else:
        result = simulator.run_network(net, image)
    (out / "output.bin").write_bytes(result.astype("<i4").tobytes())
    top1 = int(np.argmax(result.reshape(-1)))
    report = simulator.cycle_model(net)
    lines = [
        f"top1_index {top1}",
        f"mode {'pipelined' if args.pipelined else 'sequential'}",
        f"ops_per_image {report.ops_per_image}",
        f"bottleneck_layer {report.bottleneck_layer} "
        f"({net.layers[report.bottleneck_layer].name})",
        f"bottleneck_cycles {report.per_layer_cycles[report.bottleneck_layer]}",
        f"fps_estimate {float(report.fps_estimate):.2f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _write_summary(out, "simulate", {
        "model": str(args.model),
        "outputs": ["output.bin", "summary.txt"],
        "top1_index": top1,
        "pipelined": bool(args.pipelined),
        "ops_per_image": report.ops_per_image,
    })


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _resource_rows(net):
    shapes = net.layer_input_shapes()
    bits = net.layer_input_bits()
    rows, total = [], lutgen.ResourceEstimate()
    for i, layer in enumerate(net.layers):
        est = lutgen.estimate_layer_resources(layer, shapes[i], bits[i])
        total = total + est
        rows.append((i, layer.name, layer.kind, est))
    return rows, total


def cmd_analyze(args) -> None:
    net = _load(args)
    out = _out_dir(args)
    dev = analyzer.get_device(args.device, args.devices)
    lpm = Fraction(args.luts_per_mac) if args.luts_per_mac else lutgen.lut_count(4)
    designs = [
        ("dsp_int8", analyzer.peak_performance(2, dev.scaled_dsps, dev.clock_hz)),
        ("dsp_int4", analyzer.peak_performance(4, dev.scaled_dsps, dev.clock_hz)),
        ("lut_int4", analyzer.lut_peak_performance(dev.scaled_luts, lpm, dev.clock_hz)),
    ]
    with (out / "roofline.csv").open("w") as f:
        analyzer.emit_roofline_csv(dev, designs, f)
    rows, total = _resource_rows(net)
    with (out / "resources.csv").open("w") as f:
        f.write("layer,name,kind,lut_mult,lut_other,dsp,bram\n")
        for i, name, kind, est in rows:
            f.write(f"{i},{name},{kind},{est.lut_mult},{est.lut_other},{est.dsp},{est.bram}\n")
        f.write(f"total,,,{total.lut_mult},{total.lut_other},{total.dsp},{total.bram}\n")
    report = simulator.cycle_model(net, pipeline_depth=args.pipeline_depth)
    intensity = analyzer.network_intensity(net)
    payload = {
        "model": str(args.model),
        "device": dev.name,
        "outputs": ["roofline.csv", "resources.csv"],
        "peaks_ops_per_s": {name: float(peak) for name, peak in designs},
        "network_intensity_ops_per_byte": float(intensity),
        "compute_bound": {
            name: analyzer.is_compute_bound(intensity, dev, peak)
            for name, peak in designs
        },
        "lut_mult_total": total.lut_mult,
        "dsp_total": total.dsp,
        "ops_per_image": report.ops_per_image,
        "fps_estimate": float(report.fps_estimate),
    }
    if "datasheet_int8_tops" in dev.metadata:
        payload["datasheet_int8_tops"] = dev.metadata["datasheet_int8_tops"]
        payload["formula_int8_tops"] = float(designs[0][1]) / 1e12
    _write_summary(out, "analyze", payload)
    for name, peak in designs:
        print(f"{name}: peak {float(peak) / 1e12:.4f} TOPS, "
              f"ridge {float(analyzer.ridge_intensity(peak, dev.bandwidth())):.2f} ops/byte")
    print(f"network intensity {float(intensity):.1f} ops/byte; "
          f"fps estimate {float(report.fps_estimate):.1f}")


# ---------------------------------------------------------------------------
# emit-fixture
# ---------------------------------------------------------------------------

def cmd_emit_fixture(args) -> None:
    out = _out_dir(args)
    fixtures.make_fixture(args.kind, args.seed, out)
    _write_summary(out, "emit-fixture", {
        "kind": args.kind,
        "seed": args.seed,
        "outputs": ["manifest.json", "blobs/"],
    })
    print(f"wrote {args.kind} fixture (seed {args.seed}) under {out}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="lutfab", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="emit netlist and INIT manifest")
    c.add_argument("--model", required=True, help="model directory")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", help="bit-exact inference")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--input", help="raw image bytes (unsigned, channel-last)")
    s.add_argument("--image-seed", type=int, default=0,
                   help="seed for a random image when --input is omitted")
    s.add_argument("--pipelined", action="store_true",
                   help="run layers concurrently over bounded FIFOs")
    s.add_argument("--fifo-capacity", type=int, default=64)
    s.add_argument("--stall-timeout", type=float, default=5.0)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="roofline / resource / cycle reports")
    a.add_argument("--model", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--device", default="u280")
    a.add_argument("--devices", help="device database path "
                   f"(default ${analyzer.DEVICE_DB_ENV} or bundled)")
    a.add_argument("--luts-per-mac", type=str, default="",
                   help="override LUTs per MAC for the LUT roof (e.g. 2 or 289/50)")
    a.add_argument("--pipeline-depth", type=int,
                   default=simulator.DEFAULT_PIPELINE_DEPTH)
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("emit-fixture", help="write a test model directory")
    e.add_argument("--kind", required=True, choices=sorted(fixtures.FIXTURE_BUILDERS))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_emit_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:        # --help / --version paths
        return 0 if e.code in (0, None) else 1
    try:
        args.func(args)
    except (ModelFormatError, KeyError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except Exception as e:          # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
