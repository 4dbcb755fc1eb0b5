"""On-disk quantized-model format: a directory holding ``manifest.json``
plus raw little-endian blobs, and the typed layer graph parsed from it.

Blob conventions (all little-endian):
  * weights: one signed byte per value, laid out [out_ch][in_ch][k_h][k_w]
    row-major (depthwise layers store in_ch = 1, their own channel only);
  * thresholds: per-channel ascending runs of 2^act_bits - 1 signed 32-bit
    integers over the accumulator domain.

``act_bits`` is the bit-width a layer's OUTPUT stream; the width feeding a
layer is the previous layer's act_bits (or the manifest ``input_bits`` for
the first). A conv layer is LUT-mapped when its weights and its input
stream are both 4-bit; anything 8-bit takes the DSP-modeled path.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"

CONV_KINDS = ("conv_standard", "conv_depthwise", "conv_pointwise")
LAYER_KINDS = CONV_KINDS + ("add", "global_avg_pool", "threshold_only")


class ModelFormatError(ValueError):
    """Malformed manifest, blob, or graph invariant violation."""


@dataclass(eq=False)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    pad: tuple[int, int, int, int] = (0, 0, 0, 0)
    weight_bits: int = 4
    act_bits: int = 4
    fold: tuple[int, int] = (1, 1)
    weights: np.ndarray | None = None        # (cout, cin_per, kh, kw) int8
    thresholds: np.ndarray | None = None     # (cout, 2^act_bits - 1) int64
    skip_from: int | None = None             # add: index of the skip producer
    rescale0: np.ndarray | None = None       # add: main-path coeff, 16 frac bits
    rescale1: np.ndarray | None = None       # add: skip-path coeff
    name: str = ""

    @property
    def is_conv(self) -> bool:
        return self.kind in CONV_KINDS

    @property
    def window_size(self) -> int:
        """Flattened input extent per output value (Algorithm-style CIN)."""
        kh, kw = self.kernel
        if self.kind == "conv_depthwise":
            return kh * kw
        return self.in_channels * kh * kw

    @property
    def weight_count(self) -> int:
        return self.out_channels * self.window_size if self.is_conv else 0

    def flat_weights(self) -> np.ndarray:
        """Weights as (out_channels, window_size), matching window order."""
        return self.weights.reshape(self.out_channels, self.window_size)

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if self.kind in ("add", "threshold_only"):
            return (h, w, self.out_channels)
        if self.kind == "global_avg_pool":
            return (1, 1, self.out_channels)
        kh, kw = self.kernel
        sh, sw = self.stride
        pt, pb, pl, pr = self.pad
        oh = (h + pt + pb - kh) // sh + 1
        ow = (w + pl + pr - kw) // sw + 1
        return (oh, ow, self.out_channels)

    def macs(self, in_shape) -> int:
        if not self.is_conv:
            return 0
        oh, ow, _ = self.out_shape(in_shape)
        return oh * ow * self.out_channels * self.window_size


@dataclass(eq=False)
class NetworkManifest:
    name: str
    input_shape: tuple[int, int, int]
    layers: list[LayerSpec]
    clock_hz: int = 300_000_000
    input_bits: int = 4

    def layer_input_shapes(self) -> list[tuple[int, int, int]]:
        shapes, cur = [], self.input_shape
        for layer in self.layers:
            shapes.append(cur)
            cur = layer.out_shape(cur)
        return shapes

    def output_shape(self) -> tuple[int, int, int]:
        cur = self.input_shape
        for layer in self.layers:
            cur = layer.out_shape(cur)
        return cur

    def layer_input_bits(self) -> list[int]:
        bits, cur = [], self.input_bits
        for layer in self.layers:
            bits.append(cur)
            cur = layer.act_bits
        return bits

    def total_weights(self) -> int:
        return sum(l.weight_count for l in self.layers)

    def total_macs(self) -> int:
        total = 0
        for shape, layer in zip(self.layer_input_shapes(), self.layers):
            total += layer.macs(shape)
        return total


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_layer(i: int, layer: LayerSpec, in_shape, in_bits, is_last, out):
    def bad(msg):
        out.append(f"layer {i} ({layer.kind}): {msg}")

    if layer.kind not in LAYER_KINDS:
        bad(f"unknown kind {layer.kind!r}")
        return
    if layer.weight_bits not in (4, 8) or layer.act_bits not in (4, 8):
        bad("weight_bits and act_bits must be 4 or 8")
    h, w, c = in_shape
    if c != layer.in_channels:
        bad(f"expects {layer.in_channels} input channels, producer gives {c}")
    if layer.kind == "conv_pointwise":
        if layer.kernel != (1, 1) or layer.stride != (1, 1) or any(layer.pad):
            bad("pointwise means kernel 1x1, stride 1, no padding")
    if layer.kind == "conv_depthwise" and layer.in_channels != layer.out_channels:
        bad("depthwise requires in_channels == out_channels")
    if layer.is_conv:
        pe, simd = layer.fold
        if pe < 1 or layer.out_channels % pe:
            bad(f"fold.pe {pe} does not divide out_channels {layer.out_channels}")
        if simd < 1 or layer.window_size % simd:
            bad(f"fold.simd {simd} does not divide window {layer.window_size}")
        oh, ow, _ = layer.out_shape(in_shape)
        if oh <= 0 or ow <= 0:
            bad(f"output shape ({oh}, {ow}) is empty")
        if layer.weights is None:
            bad("conv layer missing weights")
        else:
            lim = 1 << (layer.weight_bits - 1)
            if layer.weights.min() < -lim or layer.weights.max() > lim - 1:
                bad(f"weight values exceed signed {layer.weight_bits}-bit range")
            cin_per = 1 if layer.kind == "conv_depthwise" else layer.in_channels
            want = (layer.out_channels, cin_per, *layer.kernel)
            if layer.weights.shape != want:
                bad(f"weights shaped {layer.weights.shape}, expected {want}")
        if layer.weight_bits == 4 and in_bits != 4:
            bad("LUT-mapped 4-bit conv fed by an 8-bit stream")
        if layer.thresholds is None and not is_last:
            bad("non-final conv layer needs thresholds to bound its outputs")
    if layer.kind == "add":
        if layer.skip_from is None:
            bad("add layer missing skip_from")
        elif not -1 <= layer.skip_from <= i - 2:
            bad(f"skip_from {layer.skip_from} is not an earlier producer")
        if layer.rescale0 is None or layer.rescale1 is None:
            bad("add layer missing rescale coefficients")
        elif (
            len(layer.rescale0) != layer.out_channels
            or len(layer.rescale1) != layer.out_channels
        ):
            bad("rescale coefficient count != out_channels")
        if layer.in_channels != layer.out_channels:
            bad("add cannot change channel count")
    if layer.kind == "global_avg_pool":
        if layer.in_channels != layer.out_channels:
            bad("global_avg_pool cannot change channel count")
        if layer.thresholds is None and not is_last:
            bad("non-final global_avg_pool needs thresholds")
    if layer.kind == "threshold_only" and layer.thresholds is None:
        bad("threshold_only layer missing thresholds")
    if layer.thresholds is not None:
        want_levels = (1 << layer.act_bits) - 1
        if layer.thresholds.shape != (layer.out_channels, want_levels):
            bad(
                f"thresholds shaped {layer.thresholds.shape}, expected "
                f"({layer.out_channels}, {want_levels})"
            )
        elif np.any(np.diff(layer.thresholds, axis=1) < 0):
            bad("thresholds not ascending")


def validate_graph(net: NetworkManifest) -> list[str]:
    """Every violated invariant as one diagnostic string; [] when clean."""
    out: list[str] = []
    if not net.layers:
        return ["network has no layers"]
    if net.input_bits not in (4, 8):
        out.append("input_bits must be 4 or 8")
    shapes = net.layer_input_shapes()
    bits = net.layer_input_bits()
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        _check_layer(i, layer, shapes[i], bits[i], i == last, out)
        if layer.kind == "add" and layer.skip_from is not None:
            j = layer.skip_from
            if -1 <= j <= i - 2:
                skip_shape = (
                    net.input_shape if j == -1 else net.layers[j].out_shape(shapes[j])
                )
                if skip_shape != shapes[i]:
                    out.append(
                        f"layer {i} (add): skip shape {skip_shape} != main {shapes[i]}"
                    )
                skip_bits = net.input_bits if j == -1 else net.layers[j].act_bits
                if skip_bits != bits[i]:
                    out.append(
                        f"layer {i} (add): skip stream {skip_bits}-bit, main {bits[i]}-bit"
                    )
    return out


# ---------------------------------------------------------------------------
# Load / save
# ---------------------------------------------------------------------------

def _require(cond, msg):
    if not cond:
        raise ModelFormatError(msg)


def _read_blob(root: Path, rel: str, nbytes: int, what: str) -> bytes:
    path = root / rel
    _require(path.is_file(), f"{what} blob missing: {rel}")
    data = path.read_bytes()
    _require(
        len(data) == nbytes,
        f"{what} blob {rel} holds {len(data)} bytes, expected {nbytes}",
    )
    return data


def _tuple_field(entry, key, n, where):
    v = entry.get(key)
    _require(
        isinstance(v, list) and len(v) == n and all(isinstance(x, int) for x in v),
        f"{where}: {key} must be a list of {n} integers",
    )
    return tuple(v)


def load_network(path) -> NetworkManifest:
    """Parse and fully validate a model directory."""
    root = Path(path)
    mpath = root / MANIFEST_NAME
    _require(mpath.is_file(), f"no {MANIFEST_NAME} under {root}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"manifest is not valid JSON: {e}") from e
    _require(isinstance(doc, dict), "manifest root must be an object")
    for key in ("name", "input_shape", "layers"):
        _require(key in doc, f"manifest missing {key!r}")
    input_shape = _tuple_field(doc, "input_shape", 3, "manifest")
    layers = []
    _require(isinstance(doc["layers"], list) and doc["layers"], "layers must be a nonempty list")
    for i, entry in enumerate(doc["layers"]):
        where = f"layer {i}"
        _require(isinstance(entry, dict), f"{where}: not an object")
        kind = entry.get("kind")
        _require(kind in LAYER_KINDS, f"{where}: unknown kind {kind!r}")
        spec = LayerSpec(
            kind=kind,
            in_channels=int(entry["in_channels"]),
            out_channels=int(entry["out_channels"]),
            kernel=_tuple_field(entry, "kernel", 2, where) if "kernel" in entry else (1, 1),
            stride=_tuple_field(entry, "stride", 2, where) if "stride" in entry else (1, 1),
            pad=_tuple_field(entry, "pad", 4, where) if "pad" in entry else (0, 0, 0, 0),
            weight_bits=int(entry.get("weight_bits", 4)),
            act_bits=int(entry.get("act_bits", 4)),
            fold=_tuple_field(entry, "fold", 2, where) if "fold" in entry else (1, 1),
            skip_from=entry.get("skip_from"),
            name=entry.get("name", f"l{i}_{kind}"),
        )
        if spec.is_conv:
            _require("weights" in entry, f"{where}: conv layer missing weights blob")
            cin_per = 1 if kind == "conv_depthwise" else spec.in_channels
            shape = (spec.out_channels, cin_per, *spec.kernel)
            n = int(np.prod(shape))
            raw = _read_blob(root, entry["weights"], n, f"{where} weights")
            spec.weights = np.frombuffer(raw, dtype=np.int8).reshape(shape).copy()
            lim = 1 << (spec.weight_bits - 1)
            _require(
                int(spec.weights.min()) >= -lim and int(spec.weights.max()) <= lim - 1,
                f"{where}: weight outside signed {spec.weight_bits}-bit range",
            )
        if entry.get("thresholds"):
            levels = (1 << spec.act_bits) - 1
            n = spec.out_channels * levels * 4
            raw = _read_blob(root, entry["thresholds"], n, f"{where} thresholds")
            t = np.frombuffer(raw, dtype="<i4").reshape(spec.out_channels, levels)
            spec.thresholds = t.astype(np.int64)
            _require(
                not np.any(np.diff(spec.thresholds, axis=1) < 0),
                f"{where}: thresholds not ascending",
            )
        if kind == "add":
            for key in ("rescale0", "rescale1"):
                v = entry.get(key)
                _require(
                    isinstance(v, list) and all(isinstance(x, int) for x in v),
                    f"{where}: {key} must be a list of integers",
                )
                setattr(spec, key, np.asarray(v, dtype=np.int64))
        layers.append(spec)
    net = NetworkManifest(
        name=str(doc["name"]),
        input_shape=input_shape,
        layers=layers,
        clock_hz=int(doc.get("clock_hz", 300_000_000)),
        input_bits=int(doc.get("input_bits", 4)),
    )
    problems = validate_graph(net)
    if problems:
        raise ModelFormatError("; ".join(problems))
    return net


def save_network(net: NetworkManifest, path) -> None:
    """Write a model directory that load_network reads back identically."""
    root = Path(path)
    (root / "blobs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(net.layers):
        entry = {
            "name": layer.name,
            "kind": layer.kind,
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "kernel": list(layer.kernel),
            "stride": list(layer.stride),
            "pad": list(layer.pad),
            "weight_bits": layer.weight_bits,
            "act_bits": layer.act_bits,
            "fold": list(layer.fold),
        }
        if layer.weights is not None:
            rel = f"blobs/l{i:02d}_weights.bin"
            (root / rel).write_bytes(layer.weights.astype(np.int8).tobytes())
            entry["weights"] = rel
        if layer.thresholds is not None:
            rel = f"blobs/l{i:02d}_thresholds.bin"
            (root / rel).write_bytes(layer.thresholds.astype("<i4").tobytes())
            entry["thresholds"] = rel
        if layer.skip_from is not None:
            entry["skip_from"] = layer.skip_from
        if layer.rescale0 is not None:
            entry["rescale0"] = [int(v) for v in layer.rescale0]
            entry["rescale1"] = [int(v) for v in layer.rescale1]
        entries.append(entry)
    doc = {
        "name": net.name,
        "input_shape": list(net.input_shape),
        "input_bits": net.input_bits,
        "clock_hz": net.clock_hz,
        "layers": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def manifest_equal(a: NetworkManifest, b: NetworkManifest) -> bool:
    """Field-by-field equality, arrays compared by value."""
    if (a.name, a.input_shape, a.clock_hz, a.input_bits) != (
        b.name,
        b.input_shape,
        b.clock_hz,
        b.input_bits,
    ) or len(a.layers) != len(b.layers):
        return False
    scalar = (
        "kind in_channels out_channels kernel stride pad weight_bits "
        "act_bits fold skip_from name".split()
    )
    for la, lb in zip(a.layers, b.layers):
        if any(getattr(la, f) != getattr(lb, f) for f in scalar):
            return False
        for f in ("weights", "thresholds", "rescale0", "rescale1"):
            va, vb = getattr(la, f), getattr(lb, f)
            if (va is None) != (vb is None):
                return False
            if va is not None and not np.array_equal(va, vb):
                return False
    return True
