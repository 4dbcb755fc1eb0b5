"""LUT6_2 constant-multiplier generation, evaluation, and resource counting.

A LUT6_2 primitive holds a 64-bit truth table (INIT). Bit ``i`` of INIT is
the O6 output for the 6-bit input address ``i``; O5 reads the same table but
only over the lower 32 entries (addresses with I5 = 0). Tying I5 high turns
one physical LUT6 into two independent 5-input functions:

    O5 = INIT[addr5]           (lower 32 bits)
    O6 = INIT[32 + addr5]      (upper 32 bits)

We embed a pair of signed 4-bit weights (w0, w1) into four such LUTs. The
5-bit address is ``(WS << 4) | a`` where ``a`` is the unsigned 4-bit
activation and WS selects the weight. LUT ``k`` produces product bits
p[2k] on O5 and p[2k+1] on O6, so the four LUTs together yield the full
8-bit two's-complement product ``w_sel * a``.

INIT index convention: ``inits[0]`` holds the (p1, p0) pair and ``inits[3]``
the (p7, p6) pair, least-significant pair first.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

INT4_MIN, INT4_MAX = -8, 7
LUTS_PER_GROUP = 4       # one weight pair occupies four LUT6_2
WEIGHTS_PER_GROUP = 2
LUT6_TABLE_BITS = 64


def _check_int4(w: int, name: str = "weight") -> None:
    if not INT4_MIN <= w <= INT4_MAX:
        raise ValueError(f"{name} {w} outside signed 4-bit range [{INT4_MIN}, {INT4_MAX}]")


# ---------------------------------------------------------------------------
# Scalar LUT primitives (reference semantics)
# ---------------------------------------------------------------------------

def lut6_eval(init: int, addr: int) -> int:
    """Output bit of a plain LUT6 for a 6-bit address."""
    if not 0 <= addr < 64:
        raise ValueError(f"LUT6 address {addr} outside [0, 64)")
    return (init >> addr) & 1


def lut6_2_eval(init: int, addr5: int, i5: int) -> tuple[int, int]:
    """Evaluate a LUT6_2: returns (O6, O5) for a 5-bit address and the I5 pin.

    O5 always reads the lower 32 table entries; O6 reads the half selected
    by I5. With I5 tied to 1 the two outputs are independent 5-input
    functions.
    """
    if not 0 <= addr5 < 32:
        raise ValueError(f"LUT6_2 address {addr5} outside [0, 32)")
    if i5 not in (0, 1):
        raise ValueError("i5 must be 0 or 1")
    o5 = (init >> addr5) & 1
    o6 = (init >> (i5 * 32 + addr5)) & 1
    return o6, o5


def gen_lut_inits(w0: int, w1: int) -> tuple[int, int, int, int]:
    """Build the four 64-bit INIT words embedding the products of (w0, w1).

    For every activation ``a`` in [0, 15] and weight select ``ws``, the
    8-bit two's-complement product ``(w1 if ws else w0) * a`` is scattered
    into the tables at address ``(ws << 4) | a``: bit p[2k] lands in the
    lower half of ``inits[k]`` (O5) and bit p[2k+1] in the upper half (O6).
    """
    _check_int4(w0, "w0")
    _check_int4(w1, "w1")
    inits = [0, 0, 0, 0]
    for ws, w in ((0, w0), (1, w1)):
        for a in range(16):
            addr5 = (ws << 4) | a
            p = (w * a) & 0xFF
            for k in range(4):
                inits[k] |= ((p >> (2 * k)) & 1) << addr5
                inits[k] |= ((p >> (2 * k + 1)) & 1) << (32 + addr5)
    return tuple(inits)


@dataclass(frozen=True)
class LutMultiplier:
    """A weight pair embedded as four LUT6_2 INIT words."""

    w0: int
    w1: int
    inits: tuple[int, int, int, int]


def make_multiplier(w0: int, w1: int) -> LutMultiplier:
    return LutMultiplier(w0, w1, gen_lut_inits(w0, w1))


def lut_multiply(m: LutMultiplier, ws: int, a: int) -> int:
    """Multiply through the LUTs: decode the 8 output bits as signed int8.

    Equals ``(m.w1 if ws else m.w0) * a`` for every ws in {0, 1} and
    a in [0, 15].
    """
    if ws not in (0, 1):
        raise ValueError("ws must be 0 or 1")
    if not 0 <= a < 16:
        raise ValueError(f"activation {a} outside unsigned 4-bit range")
    addr5 = (ws << 4) | a
    p = 0
    for k, init in enumerate(m.inits):
        o6, o5 = lut6_2_eval(init, addr5, 1)
        p |= o5 << (2 * k)
        p |= o6 << (2 * k + 1)
    return p - 256 if p >= 128 else p


# ---------------------------------------------------------------------------
# Vectorized builders (bit-identical to the scalar path, used for full nets)
# ---------------------------------------------------------------------------

def gen_lut_inits_batch(w0: np.ndarray, w1: np.ndarray) -> np.ndarray:
    """Vectorized gen_lut_inits over weight-pair arrays.

    Returns a uint64 array of shape ``w0.shape + (4,)``.
    """
    w0 = np.asarray(w0, dtype=np.int64)
    w1 = np.asarray(w1, dtype=np.int64)
    if w0.size and (w0.min() < INT4_MIN or w0.max() > INT4_MAX):
        raise ValueError("w0 outside signed 4-bit range")
    if w1.size and (w1.min() < INT4_MIN or w1.max() > INT4_MAX):
        raise ValueError("w1 outside signed 4-bit range")
    a = np.arange(16, dtype=np.int64)
    p0 = (w0[..., None] * a) & 0xFF                  # (..., 16)
    p1 = (w1[..., None] * a) & 0xFF
    inits = np.zeros(w0.shape + (4,), dtype=np.uint64)
    shift = a.astype(np.uint64)
    for k in range(4):
        lo0 = ((p0 >> (2 * k)) & 1).astype(np.uint64)
        lo1 = ((p1 >> (2 * k)) & 1).astype(np.uint64)
        hi0 = ((p0 >> (2 * k + 1)) & 1).astype(np.uint64)
        hi1 = ((p1 >> (2 * k + 1)) & 1).astype(np.uint64)
        inits[..., k] = (
            (lo0 << shift).sum(axis=-1)
            | (lo1 << (shift + np.uint64(16))).sum(axis=-1)
            | (hi0 << (shift + np.uint64(32))).sum(axis=-1)
            | (hi1 << (shift + np.uint64(48))).sum(axis=-1)
        )
    return inits


def decode_products(inits: np.ndarray) -> np.ndarray:
    """Read every product back out of INIT words through the LUT tables.

    ``inits`` has shape ``(..., 4)``; the result has shape ``(..., 2, 16)``
    (weight-select, activation) with signed int16 products. This is the
    vectorized mirror of calling ``lut_multiply`` for all 32 addresses.
    """
    inits = np.asarray(inits, dtype=np.uint64)
    addr = np.arange(32, dtype=np.uint64)            # (ws << 4) | a
    p = np.zeros(inits.shape[:-1] + (32,), dtype=np.int64)
    for k in range(4):
        word = inits[..., k][..., None]
        o5 = ((word >> addr) & np.uint64(1)).astype(np.int64)
        o6 = ((word >> (addr + np.uint64(32))) & np.uint64(1)).astype(np.int64)
        p |= o5 << (2 * k)
        p |= o6 << (2 * k + 1)
    p = np.where(p >= 128, p - 256, p)
    return p.reshape(inits.shape[:-1] + (2, 16)).astype(np.int16)


# ---------------------------------------------------------------------------
# Multiplier banks for whole layers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LutBank:
    """All LUT multipliers of one layer, plus decoded product tables.

    Output channels pair up (2g, 2g+1) and share one four-LUT group per
    input position, toggling WS between the two phases. A leftover odd
    output channel instead pairs its own adjacent input positions, so the
    group count is always ceil(weight_count / 2).

    ``table[co, ci, a]`` is the product for output channel ``co``, input
    position ``ci``, activation ``a``, decoded from the INIT words.
    """

    out_channels: int
    window: int
    depthwise: bool
    pair_inits: np.ndarray       # (full_pairs, window, 4) uint64
    tail_inits: np.ndarray       # (tail_groups, 4) uint64, empty when COUT even
    table: np.ndarray            # (out_channels, window, 16) int16

    @property
    def group_count(self) -> int:
        return self.pair_inits.shape[0] * self.window + self.tail_inits.shape[0]

    def instances(self):
        """Yield (co, ci, inits) per four-LUT group, netlist order.

        Pair groups report the even channel of the pair; tail groups of an
        odd last channel report ``ci`` as the group index over its paired
        input positions (2*ci, 2*ci+1).
        """
        for g in range(self.pair_inits.shape[0]):
            for ci in range(self.window):
                yield 2 * g, ci, tuple(int(v) for v in self.pair_inits[g, ci])
        for j in range(self.tail_inits.shape[0]):
            yield self.out_channels - 1, j, tuple(int(v) for v in self.tail_inits[j])

    def mac(self, windows: np.ndarray) -> np.ndarray:
        """Accumulate LUT products for a batch of windows.

        ``windows`` is (batch, window) for standard/pointwise layers or
        (batch, channels * window) for depthwise; returns (batch,
        out_channels) int64 accumulators. Every product is a LUT-table read.
        """
        windows = np.ascontiguousarray(windows, dtype=np.int64)
        b = windows.shape[0]
        cout, window = self.out_channels, self.window
        out = np.empty((b, cout), dtype=np.int64)
        step = max(1, 2_000_000 // max(1, cout * window))
        if self.depthwise:
            flat = self.table.reshape(cout * window, 16)
            rows = np.arange(cout * window)
            for lo in range(0, b, step):
                chunk = windows[lo : lo + step]              # (c, cout*window)
                vals = flat[rows, chunk]                     # (c, cout*window)
                out[lo : lo + step] = vals.reshape(-1, cout, window).sum(
                    axis=2, dtype=np.int64
                )
            return out
        flat = self.table.reshape(cout, window * 16)
        ci_base = np.arange(window, dtype=np.int64) * 16
        for lo in range(0, b, step):
            idx = ci_base + windows[lo : lo + step]          # (c, window)
            prod = flat[:, idx]                              # (cout, c, window)
            out[lo : lo + step] = prod.sum(axis=2, dtype=np.int64).T
        return out


def build_lut_bank(weights: np.ndarray, depthwise: bool = False) -> LutBank:
    """Pair a layer's weights into LUT groups and decode the product tables.

    ``weights`` is (out_channels, window) of signed 4-bit values, where
    window is the flattened per-output-channel input extent.
    """
    w = np.asarray(weights, dtype=np.int64)
    if w.ndim != 2:
        raise ValueError("weights must be (out_channels, window)")
    cout, window = w.shape
    full = cout // 2
    pair_inits = gen_lut_inits_batch(w[0 : 2 * full : 2], w[1 : 2 * full : 2])
    table = np.zeros((cout, window, 16), dtype=np.int16)
    if full:
        dec = decode_products(pair_inits)                # (full, window, 2, 16)
        table[0 : 2 * full : 2] = dec[:, :, 0, :]
        table[1 : 2 * full : 2] = dec[:, :, 1, :]
    if cout % 2:
        tail_w = w[-1]
        if window % 2:
            tail_w = np.concatenate([tail_w, [0]])       # pad unused half-slot
        tail_inits = gen_lut_inits_batch(tail_w[0::2], tail_w[1::2])
        dec = decode_products(tail_inits)                # (groups, 2, 16)
        table[-1] = dec.reshape(-1, 16)[:window]
    else:
        tail_inits = np.zeros((0, 4), dtype=np.uint64)
    return LutBank(cout, window, depthwise, pair_inits, tail_inits, table)


# ---------------------------------------------------------------------------
# Resource model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceEstimate:
    lut_mult: int = 0
    lut_other: int = 0
    dsp: int = 0
    bram: int = 0

    def __add__(self, other: "ResourceEstimate") -> "ResourceEstimate":
        return ResourceEstimate(
            self.lut_mult + other.lut_mult,
            self.lut_other + other.lut_other,
            self.dsp + other.dsp,
            self.bram + other.bram,
        )


def lut_count(n: int) -> Fraction:
    """Average LUT6 per n-bit constant multiplication.

    An n-bit multiplier needs 2n output bits over a 2^n-entry table; one
    LUT6 supplies 64 truth-table bits, so the average is (2n * 2^n) / 64.
    Fractional results below one LUT are averages over shared groups; the
    physical floor stays one LUT6 per output bit table (see
    effective_lut_count).
    """
    if not 1 <= n <= 8:
        raise ValueError(f"bit-width {n} outside [1, 8]")
    return Fraction(2 * n * (1 << n), LUT6_TABLE_BITS)


def effective_lut_count(n: int) -> Fraction:
    """lut_count with the physical floor applied: a pair-group cannot occupy
    less than one whole LUT6, so narrow widths bottom out at 1/2 LUT per
    multiplication even though the formula drops below that.
    """
    per_group_luts = max(lut_count(n) * WEIGHTS_PER_GROUP, Fraction(1))
    return per_group_luts / WEIGHTS_PER_GROUP


DSP_PACKING = {16: 1, 8: 2, 4: 4}

BRAM_BITS = 36 * 1024


def accumulator_bits(window: int, weight_bits: int, in_act_bits: int) -> int:
    """Signed accumulator width covering the worst-case dot product."""
    max_abs = window * (1 << (weight_bits - 1)) * ((1 << in_act_bits) - 1)
    if max_abs <= 0:
        return 1
    return math.ceil(math.log2(max_abs)) + 1


def estimate_layer_resources(layer, in_shape=None, in_act_bits=4) -> ResourceEstimate:
    """Resource footprint of one layer at its configured fold.

    Multiplier LUTs count whole four-LUT groups (two weights each);
    lut_other is a ripple-adder approximation of the accumulation tree at
    full accumulator width, reported separately because post-synthesis adder
    optimization is tool-dependent. 8-bit layers take a DSP-packed path.
    """
    if not getattr(layer, "is_conv", False):
        return ResourceEstimate()
    window = layer.window_size
    wcount = layer.weight_count
    pe, simd = layer.fold
    acc_w = accumulator_bits(window, layer.weight_bits, in_act_bits)
    adds = (simd - 1) + (1 if simd < window else 0)
    if layer.weight_bits == 4 and in_act_bits == 4:
        groups = -(-wcount // WEIGHTS_PER_GROUP)
        lut_mult = groups * LUTS_PER_GROUP
        lut_other = pe * adds * acc_w
        dsp = 0
    else:
        lut_mult = 0
        lut_other = 0
        dsp = -(-pe * simd // DSP_PACKING[8])
    bram = 0
    if in_shape is not None and layer.kernel[0] > 1:
        h, w, c = in_shape
        pt, pb, pl, pr = layer.pad
        line_bits = layer.kernel[0] * (w + pl + pr) * c * in_act_bits
        bram = -(-line_bits // BRAM_BITS)
    return ResourceEstimate(lut_mult, lut_other, dsp, bram)


# ---------------------------------------------------------------------------
# Structural netlist emission
# ---------------------------------------------------------------------------

def _format_init(v: int) -> str:
    return f"64'h{v:016X}"


def emit_netlist(net, out) -> None:
    """Write a structural netlist for an all-4-bit network to a text sink.

    One module per conv layer: named LUT6_2 instances carry the multiplier
    INIT attributes (I5 tied high, I4 on the weight-select net, I3..I0 on
    activation bits, O6/O5 on product bits); accumulation and threshold
    logic are emitted behaviorally. Output is deterministic byte-for-byte.
    """
    if not net.layers:
        raise ValueError("network has no layers")
    in_bits = net.layer_input_bits()
    for i, layer in enumerate(net.layers):
        if layer.is_conv and (layer.weight_bits != 4 or in_bits[i] != 4):
            raise ValueError(
                f"layer {i} ({layer.name}) is not LUT-mapped (8-bit path); "
                "netlist emission supports 4-bit layers only"
            )
    w = out.write
    w(f"// structural netlist for network '{net.name}'\n")
    w("// LUT6_2 instances embed paired 4-bit constant multipliers;\n")
    w("// adder trees and threshold units are behavioral.\n\n")
    module_names = []
    for i, layer in enumerate(net.layers):
        if layer.is_conv:
            module_names.append(_emit_conv_module(w, net, i, layer))
        else:
            module_names.append(_emit_misc_module(w, net, i, layer))
    _emit_top(w, net, module_names)


def _emit_conv_module(w, net, idx, layer) -> str:
    name = f"{net.name}_l{idx}_{layer.kind}"
    depthwise = layer.kind == "conv_depthwise"
    bank = build_lut_bank(layer.flat_weights(), depthwise)
    window, cout = bank.window, bank.out_channels
    acc_w = accumulator_bits(window, layer.weight_bits, 4)
    n_act = cout * window if depthwise else window
    out_w = cout * layer.act_bits if layer.thresholds is not None else cout * acc_w
    w(f"module {name} (\n")
    w("  input  wire clk,\n")
    w("  input  wire ws,\n")
    w(f"  input  wire [{4 * n_act - 1}:0] act,\n")
    w(f"  output wire [{out_w - 1}:0] result\n")
    w(");\n")
    tail_start = bank.pair_inits.shape[0] * window
    groups_of = {}
    for n_inst, (co, ci, inits) in enumerate(bank.instances()):
        is_tail = n_inst >= tail_start
        groups_of.setdefault(co, []).append(ci)
        a_net = _act_net(w, layer, co, ci, window, is_tail)
        w(f"  wire [7:0] p_{co}_{ci};\n")
        for k in range(4):
            w(
                f"  LUT6_2 #(.INIT({_format_init(inits[k])})) "
                f"mul_{idx}_{co}_{ci}_b{k} ("
                f".I5(1'b1), .I4(ws), "
                f".I3({a_net}[3]), .I2({a_net}[2]), "
                f".I1({a_net}[1]), .I0({a_net}[0]), "
                f".O6(p_{co}_{ci}[{2 * k + 1}]), .O5(p_{co}_{ci}[{2 * k}]));\n"
            )
    w("\n  // accumulate (behavioral; paired channels read alternate ws phases)\n")
    for co in range(cout):
        owner = co if co in groups_of else co - 1      # pair partner's wires
        terms = " + ".join(f"$signed(p_{owner}_{c})" for c in groups_of[owner])
        w(f"  wire signed [{acc_w - 1}:0] acc_{co} = {terms};\n")
    if layer.thresholds is not None:
        bits = layer.act_bits
        w("\n  // threshold unit (behavioral)\n")
        for co in range(cout):
            cmps = " + ".join(
                f"(acc_{co} >= {int(t)})" for t in layer.thresholds[co]
            )
            w(f"  assign result[{(co + 1) * bits - 1}:{co * bits}] = {cmps};\n")
    else:
        w("\n  // raw accumulator outputs\n")
        for co in range(cout):
            w(f"  assign result[{(co + 1) * acc_w - 1}:{co * acc_w}] = acc_{co};\n")
    w("endmodule\n\n")
    return name


def _act_net(w, layer, co, ci, window, is_tail) -> str:
    """Emit (if needed) and name the 4-bit activation net feeding one group.

    Pair groups of a standard conv share one window, so both ws phases read
    the same activation. Depthwise pair groups read sibling channel slices,
    and tail groups read adjacent input positions, so those get a ws mux.
    """
    depthwise = layer.kind == "conv_depthwise"

    def slice_of(pos):
        return f"act[{4 * pos + 3}:{4 * pos}]"

    if is_tail:
        base = (co * window) if depthwise else 0
        p0 = base + 2 * ci
        net = f"amux_{co}_{ci}"
        if 2 * ci + 1 >= window:                       # padded half-slot
            w(f"  wire [3:0] {net} = {slice_of(p0)};\n")
        else:
            w(f"  wire [3:0] {net} = ws ? {slice_of(p0 + 1)} : {slice_of(p0)};\n")
        return net
    if depthwise:
        p0 = co * window + ci
        p1 = (co + 1) * window + ci
        net = f"amux_{co}_{ci}"
        w(f"  wire [3:0] {net} = ws ? {slice_of(p1)} : {slice_of(p0)};\n")
        return net
    return slice_of(ci)


def _emit_misc_module(w, net, idx, layer) -> str:
    name = f"{net.name}_l{idx}_{layer.kind}"
    w(f"module {name} (\n  input wire clk\n);\n")
    w(f"  // behavioral stage: {layer.kind}, {layer.out_channels} channels\n")
    if layer.kind == "add" and layer.rescale0 is not None:
        m0 = ", ".join(str(int(v)) for v in layer.rescale0)
        m1 = ", ".join(str(int(v)) for v in layer.rescale1)
        w(f"  // rescale coefficients (16 frac bits): m0 = {{{m0}}}, m1 = {{{m1}}}\n")
    if layer.thresholds is not None:
        w(f"  // threshold unit: {layer.thresholds.shape[1]} levels per channel\n")
    w("endmodule\n\n")
    return name


def _emit_top(w, net, module_names) -> None:
    w(f"module {net.name}_top (\n  input wire clk,\n  input wire ws\n);\n")
    w("  // layer stages chained through stream buffers, one instance each\n")
    for i, mod in enumerate(module_names):
        w(f"  {mod} u_l{i} (.clk(clk));\n")
    w("endmodule\n")
