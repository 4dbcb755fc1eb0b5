"""Bit-exact streaming simulation of the FIFO-connected dataflow accelerator.

Layers run over channel-last int64 tensors. The sequential runner is the
reference semantics; the pipelined runner executes one worker thread per
layer connected by bounded blocking FIFOs and must produce bit-identical
output for every capacity assignment and scheduling interleaving (the graph
is a Kahn network: each stage pops fixed inputs, computes deterministic
functions, pushes in fixed order).

Convolution windows are flattened [channel][k_h][k_w], matching the weight
blob layout, so accumulator co of a window is exactly
sum_ci lut[co][ci][window[ci]] over the layer's LUT bank.
"""

import threading
import time
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .lutgen import LutBank, build_lut_bank
from .model_io import LayerSpec, NetworkManifest
from .quantization import apply_thresholds_tensor

END = object()           # stream termination sentinel

DEFAULT_PIPELINE_DEPTH = 10


class StreamLengthError(ValueError):
    """Input stream shorter or longer than the declared tensor shape."""


class DeadlockError(RuntimeError):
    """All pipeline workers blocked on FIFOs with no possible progress."""


class PipelineAborted(RuntimeError):
    """Internal: raised inside workers when the run is being torn down."""


# ---------------------------------------------------------------------------
# Window generation
# ---------------------------------------------------------------------------

def _window_rows(layer: LayerSpec, in_shape, rows):
    """Yield (out_W, window_size) int64 window batches, one per output row.

    ``rows`` yields (W, C) int64 arrays in top-to-bottom order. Padding is
    zero. Window columns are ordered [channel][k_h][k_w].
    """
    h, w, c = in_shape
    kh, kw = layer.kernel
    sh, sw = layer.stride
    pt, pb, pl, pr = layer.pad
    oh, ow, _ = layer.out_shape(in_shape)
    wp = w + pl + pr
    zero_row = np.zeros((wp, c), dtype=np.int64)
    buf = deque(maxlen=kh)
    cols = np.arange(ow) * sw
    emitted = 0
    for r in range(h + pt + pb):
        if pt <= r < pt + h:
            row = next(rows)
            if row.shape != (w, c):
                raise StreamLengthError(
                    f"row shaped {row.shape}, expected {(w, c)}"
                )
            padded = np.zeros((wp, c), dtype=np.int64)
            padded[pl : pl + w] = row
        else:
            padded = zero_row
        buf.append(padded)
        if r < kh - 1:
            continue
        top = r - kh + 1
        if top % sh or top // sh >= oh:
            continue
        stack = np.stack(buf)                                   # (kh, wp, c)
        sw_view = np.lib.stride_tricks.sliding_window_view(stack, kw, axis=1)
        win = sw_view[:, cols]                                  # (kh, ow, c, kw)
        yield np.ascontiguousarray(win.transpose(1, 2, 0, 3)).reshape(ow, -1)
        emitted += 1
    if emitted != oh:
        raise StreamLengthError(f"emitted {emitted} window rows, expected {oh}")


def _rows_from_elements(stream, h, w, c):
    """Group a per-pixel element stream into (w, c) rows, checking length."""
    it = iter(stream)
    for _ in range(h):
        row = np.empty((w, c), dtype=np.int64)
        for x in range(w):
            try:
                el = next(it)
            except StopIteration:
                raise StreamLengthError(
                    f"input stream ended early, expected {h * w} elements"
                ) from None
            if el is END:
                raise StreamLengthError(
                    f"input stream ended early, expected {h * w} elements"
                )
            row[x] = el
        yield row
    # exactly consumed; a further data element means the producer overran
    tail = next(it, END)
    if tail is not END:
        raise StreamLengthError("input stream longer than declared shape")


def conv_generator(layer: LayerSpec, in_shape, stream):
    """Emit the im2col window for every output pixel, row-major.

    ``stream`` yields per-pixel channel vectors in row-major order (a
    trailing END sentinel is accepted). Exactly out_H*out_W windows are
    produced; a short or overlong stream raises StreamLengthError.
    """
    h, w, c = in_shape
    rows = _rows_from_elements(stream, h, w, c)
    for batch in _window_rows(layer, in_shape, rows):
        yield from batch
    next(rows, None)       # run the overrun probe on the source stream


def mac_kernel(layer: LayerSpec, bank: LutBank, windows):
    """Per window: acc[co] = sum_ci lut[co][ci][window[ci]], one vector out
    per window in, via the layer's LUT bank tables."""
    width = layer.window_size * (
        layer.out_channels if layer.kind == "conv_depthwise" else 1
    )
    for win in windows:
        win = np.asarray(win)
        if win.shape != (width,):
            raise ValueError(f"window width {win.shape}, expected ({width},)")
        yield bank.mac(win[None, :])[0]


# ---------------------------------------------------------------------------
# Layer compute helpers (shared by sequential and pipelined runners)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _bank_for(layer: LayerSpec) -> LutBank:
    return build_lut_bank(layer.flat_weights(), layer.kind == "conv_depthwise")


def _make_mac(layer: LayerSpec, in_bits: int):
    """MAC routine for one conv layer: LUT-table path when both weights and
    input stream are 4-bit, dense integer matmul (DSP-modeled) otherwise."""
    if layer.weight_bits == 4 and in_bits == 4:
        return _bank_for(layer).mac
    flat = layer.flat_weights().astype(np.int64)
    if layer.kind == "conv_depthwise":
        def dense_dw(batch):
            b = batch.reshape(len(batch), layer.out_channels, layer.window_size)
            return np.einsum("bcw,cw->bc", b, flat)
        return dense_dw
    def dense(batch):
        return batch @ flat.T
    return dense


def _finish_accs(layer: LayerSpec, accs: np.ndarray) -> np.ndarray:
    if layer.thresholds is not None:
        return apply_thresholds_tensor(accs, layer.thresholds)
    return accs


def _rescale(x: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    # fixed-point multiply, 16 fractional bits, round-half-up on the shift
    return (x * coeff + (1 << 15)) >> 16


def _add_elements(layer: LayerSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    hi = (1 << layer.act_bits) - 1
    y = _rescale(a, layer.rescale0) + _rescale(b, layer.rescale1)
    return np.clip(y, 0, hi)


# ---------------------------------------------------------------------------
# Sequential runner (reference semantics)
# ---------------------------------------------------------------------------

def _check_image(net: NetworkManifest, image) -> np.ndarray:
    img = np.asarray(image)
    if img.shape != net.input_shape:
        raise ValueError(f"image shaped {img.shape}, expected {net.input_shape}")
    img = img.astype(np.int64)
    if img.min() < 0 or img.max() >= (1 << net.input_bits):
        raise ValueError(f"image values outside unsigned {net.input_bits}-bit range")
    return img


def _conv_tensor(layer: LayerSpec, x: np.ndarray, mac) -> np.ndarray:
    in_shape = x.shape
    oh, ow, _ = layer.out_shape(in_shape)
    rows = iter(x)
    out = np.empty((oh, ow, layer.out_channels), dtype=np.int64)
    for i, batch in enumerate(_window_rows(layer, in_shape, rows)):
        out[i] = _finish_accs(layer, mac(batch))
    return out


def run_network(net: NetworkManifest, image) -> np.ndarray:
    """Execute every layer in order over full tensors. Bit-exact reference."""
    x = _check_image(net, image)
    in_bits = net.layer_input_bits()
    produced = []
    for i, layer in enumerate(net.layers):
        if layer.is_conv:
            x = _conv_tensor(layer, x, _make_mac(layer, in_bits[i]))
        elif layer.kind == "add":
            skip = produced[layer.skip_from] if layer.skip_from >= 0 else _check_image(net, image)
            x = _add_elements(layer, x, skip)
        elif layer.kind == "global_avg_pool":
            acc = x.sum(axis=(0, 1), dtype=np.int64)
            x = _finish_accs(layer, acc[None, None, :])
        else:                                        # threshold_only
            x = apply_thresholds_tensor(x, layer.thresholds)
        produced.append(x)
    return x


# ---------------------------------------------------------------------------
# Bounded FIFO and the pipelined runner
# ---------------------------------------------------------------------------

class BoundedFifo:
    """Blocking bounded FIFO with abort support and stall bookkeeping."""

    def __init__(self, name: str, capacity: int, abort: threading.Event, progress):
        if capacity < 2:
            raise ValueError(f"fifo {name}: capacity {capacity} < 2")
        self.name = name
        self.capacity = capacity
        self._items = deque()
        self._cond = threading.Condition()
        self._abort = abort
        self._progress = progress
        self.blocked_push = 0
        self.blocked_pop = 0

    def push(self, item) -> None:
        with self._cond:
            while len(self._items) >= self.capacity:
                self.blocked_push += 1
                try:
                    self._cond.wait(0.1)
                finally:
                    self.blocked_push -= 1
                if self._abort.is_set():
                    raise PipelineAborted(self.name)
            self._items.append(item)
            self._progress[0] += 1
            self._cond.notify_all()

    def pop(self):
        with self._cond:
            while not self._items:
                self.blocked_pop += 1
                try:
                    self._cond.wait(0.1)
                finally:
                    self.blocked_pop -= 1
                if self._abort.is_set():
                    raise PipelineAborted(self.name)
            item = self._items.popleft()
            self._progress[0] += 1
            self._cond.notify_all()
            return item

    def wake(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def __len__(self) -> int:
        return len(self._items)


class _Outs:
    """Fan-out helper: one producer pushing to several consumer FIFOs."""

    def __init__(self, fifos):
        self.fifos = fifos

    def push(self, item) -> None:
        for f in self.fifos:
            f.push(item)

    def close(self) -> None:
        for f in self.fifos:
            f.push(END)


def _pop_stream(fifo: BoundedFifo):
    while True:
        item = fifo.pop()
        if item is END:
            return
        yield item


def _jitter_fn(jitter, stage_index):
    if jitter is None:
        return lambda: None
    seed, probability, max_sleep = jitter
    rng = np.random.default_rng(seed + 1000 * stage_index)

    def maybe_sleep():
        if rng.random() < probability:
            time.sleep(rng.random() * max_sleep)
    return maybe_sleep


def _conv_stage(layer, in_shape, mac, inp, outs, sleep):
    rows = _rows_from_elements(_pop_stream(inp), *in_shape)
    for batch in _window_rows(layer, in_shape, rows):
        vals = _finish_accs(layer, mac(batch))
        for v in vals:
            outs.push(v)
            sleep()
    next(rows, None)       # consume the END sentinel (and flag overruns)
    outs.close()


def _add_stage(layer, n_elems, main, skip, outs, sleep):
    for _ in range(n_elems):
        a = main.pop()
        b = skip.pop()
        if a is END or b is END:
            raise StreamLengthError("add inputs ended early")
        outs.push(_add_elements(layer, a, b))
        sleep()
    if main.pop() is not END or skip.pop() is not END:
        raise StreamLengthError("add inputs longer than declared shape")
    outs.close()


def _gap_stage(layer, n_elems, inp, outs, sleep):
    acc = np.zeros(layer.in_channels, dtype=np.int64)
    seen = 0
    for el in _pop_stream(inp):
        acc += el
        seen += 1
        sleep()
    if seen != n_elems:
        raise StreamLengthError(f"pool consumed {seen} elements, expected {n_elems}")
    outs.push(_finish_accs(layer, acc[None, :])[0])
    outs.close()


def _threshold_stage(layer, inp, outs, sleep):
    for el in _pop_stream(inp):
        outs.push(apply_thresholds_tensor(el[None, :], layer.thresholds)[0])
        sleep()
    outs.close()


def min_fifo_capacities(net: NetworkManifest) -> dict:
    """Safe minimum capacity per edge, keyed (src_index, dst_index) with -1
    meaning the image source.

    Linear edges work at the contract minimum of 2. A skip edge must absorb
    the whole lead of its producer over the main branch: every branch stage
    may hold k_h input rows before its first emission plus a row of output
    burst, so the bound sums those row extents (plus slack for in-flight
    elements).
    """
    caps = {}
    shapes = net.layer_input_shapes()
    for i, layer in enumerate(net.layers):
        caps[(i - 1, i)] = 2
        if layer.kind == "add":
            j = layer.skip_from
            lead = 16
            for s in range(j + 1, i):
                stage = net.layers[s]
                h, w, c = shapes[s]
                oh, ow, _ = stage.out_shape(shapes[s])
                kh = stage.kernel[0] if stage.is_conv else 1
                lead += kh * w + ow
            caps[(j, i)] = max(2, lead)
    return caps


def _edge_list(net: NetworkManifest):
    """(src, dst) pairs, src == -1 for the image source, in push order."""
    edges = [(-1, 0)]
    for i, layer in enumerate(net.layers[1:], start=1):
        edges.append((i - 1, i))
    for i, layer in enumerate(net.layers):
        if layer.kind == "add":
            edges.append((layer.skip_from, i))
    return edges


def run_network_pipelined(
    net: NetworkManifest,
    image,
    fifo_capacities=64,
    jitter=None,
    stall_timeout: float = 5.0,
) -> np.ndarray:
    """Concurrent per-layer execution over bounded blocking FIFOs.

    ``fifo_capacities`` is either a uniform int or a mapping from
    (src_index, dst_index) to capacity (src -1 = image source). Output is
    bit-identical to run_network. A genuine deadlock (every worker blocked
    on a FIFO) is detected and reported with the blocked edges named.
    """
    img = _check_image(net, image)
    in_bits = net.layer_input_bits()
    shapes = net.layer_input_shapes()
    mins = min_fifo_capacities(net)
    abort = threading.Event()
    progress = [0]

    def cap_of(edge):
        if isinstance(fifo_capacities, dict):
            return fifo_capacities.get(edge, max(2, mins.get(edge, 2)))
        return int(fifo_capacities)

    fifos = {}
    for edge in _edge_list(net):
        name = f"{'source' if edge[0] < 0 else net.layers[edge[0]].name}" \
               f"->{net.layers[edge[1]].name}"
        fifos[edge] = BoundedFifo(name, cap_of(edge), abort, progress)
    final = BoundedFifo("output", 1 << 30, abort, progress)

    outs_of = {}
    for i in range(-1, len(net.layers)):
        consumers = [f for (s, d), f in sorted(fifos.items()) if s == i]
        if i == len(net.layers) - 1:
            consumers.append(final)
        outs_of[i] = _Outs(consumers)

    def source():
        outs = outs_of[-1]
        for row in img:
            for el in row:
                outs.push(el.copy())
        outs.close()

    def stage(i):
        layer = net.layers[i]
        sleep = _jitter_fn(jitter, i)
        inp = fifos[(i - 1, i)]
        outs = outs_of[i]
        h, w, c = shapes[i]
        if layer.is_conv:
            _conv_stage(layer, shapes[i], _make_mac(layer, in_bits[i]), inp, outs, sleep)
        elif layer.kind == "add":
            _add_stage(layer, h * w, inp, fifos[(layer.skip_from, i)], outs, sleep)
        elif layer.kind == "global_avg_pool":
            _gap_stage(layer, h * w, inp, outs, sleep)
        else:
            _threshold_stage(layer, inp, outs, sleep)

    errors = {}

    def guard(fn, key):
        def run():
            try:
                fn()
            except PipelineAborted:
                pass
            except BaseException as e:      # noqa: BLE001 - reported to caller
                errors[key] = e
                abort.set()
                for f in fifos.values():
                    f.wake()
        return run

    workers = [threading.Thread(target=guard(source, "source"), name="source")]
    workers += [
        threading.Thread(
            target=guard(lambda i=i: stage(i), f"l{i}"), name=net.layers[i].name
        )
        for i in range(len(net.layers))
    ]
    for t in workers:
        t.start()

    deadline = None
    last_progress = -1
    deadlocked = False
    while any(t.is_alive() for t in workers):
        time.sleep(0.02)
        if abort.is_set():
            continue
        alive = sum(t.is_alive() for t in workers)
        blocked = sum(
            f.blocked_push + f.blocked_pop for f in fifos.values()
        ) + final.blocked_push + final.blocked_pop
        now = progress[0]
        if blocked >= alive and now == last_progress:
            if deadline is None:
                deadline = time.monotonic() + min(stall_timeout, 1.0)
            elif time.monotonic() > deadline:
                deadlocked = True
                abort.set()
                for f in fifos.values():
                    f.wake()
                final.wake()
        else:
            deadline = None
        last_progress = now
    for t in workers:
        t.join()

    if errors:
        raise next(iter(errors.values()))
    if deadlocked:
        stuck = [
            f.name
            for f in fifos.values()
            if f.blocked_push or f.blocked_pop or len(f) >= f.capacity
        ]
        raise DeadlockError(
            "pipeline deadlocked; blocked edges: " + ", ".join(sorted(stuck))
        )

    oh, ow, oc = net.output_shape()
    out = np.empty((oh, ow, oc), dtype=np.int64)
    flat = out.reshape(-1, oc)
    for i in range(oh * ow):
        el = final.pop()
        if el is END:
            raise StreamLengthError(f"pipeline produced {i} elements, expected {oh * ow}")
        flat[i] = el
    if final.pop() is not END:
        raise StreamLengthError("pipeline produced more elements than expected")
    return out


# ---------------------------------------------------------------------------
# Cycle model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleReport:
    per_layer_cycles: list
    bottleneck_layer: int
    fps_estimate: Fraction
    ops_per_image: int


def cycle_model(net: NetworkManifest, pipeline_depth: int = DEFAULT_PIPELINE_DEPTH) -> CycleReport:
    """Initiation-interval cycle counts per layer under the configured fold.

    A folded conv needs (out_channels/pe) * (window/simd) cycles per output
    pixel; element-wise stages need one cycle per element. The pipeline
    depth constant covers fill latency and is configurable because it is a
    modeling choice, not a measured value.
    """
    cycles = []
    shapes = net.layer_input_shapes()
    for layer, in_shape in zip(net.layers, shapes):
        oh, ow, _ = layer.out_shape(in_shape)
        if layer.is_conv:
            pe, simd = layer.fold
            per_pixel = (layer.out_channels // pe) * (layer.window_size // simd)
            n = oh * ow * per_pixel
        elif layer.kind == "global_avg_pool":
            h, w, _ = in_shape
            n = h * w
        else:
            n = oh * ow
        cycles.append(n + pipeline_depth)
    worst = max(range(len(cycles)), key=cycles.__getitem__)
    return CycleReport(
        per_layer_cycles=cycles,
        bottleneck_layer=worst,
        fps_estimate=Fraction(net.clock_hz, cycles[worst]),
        ops_per_image=2 * net.total_macs(),
    )
