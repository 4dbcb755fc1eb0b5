"""Integer quantization: affine quantize/dequantize, calibration, and the
folding of per-channel scale/bias chains into integer multi-threshold units.

All rounding is round-half-to-even, applied uniformly. Activations are
unsigned with zero-point 0; weights are signed symmetric. Thresholds are
built by brute force over the finite accumulator range, which sidesteps
every rounding-boundary corner case.
"""

from dataclasses import dataclass, field

import numpy as np

EPS_SCALE = 1e-12    # floor for calibrated scales; all-zero samples hit this


def _as_channel_vector(v) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError("per-channel parameter must be scalar or 1-D")
    return arr


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters (scale, zero-point, clamp bounds)."""

    scale: np.ndarray          # (channels,) positive, broadcastable scalar ok
    zero_point: int
    bits: int
    signed: bool
    y_min: int = field(init=False)
    y_max: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "scale", _as_channel_vector(self.scale))
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive for every channel")
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bit-width {self.bits} outside [1, 16]")
        if self.signed:
            lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        else:
            lo, hi = 0, (1 << self.bits) - 1
        object.__setattr__(self, "y_min", lo)
        object.__setattr__(self, "y_max", hi)
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero_point {self.zero_point} outside [{lo}, {hi}]")

    def channel_scale(self, channel=None) -> np.ndarray:
        if self.scale.shape[0] == 1:
            return self.scale[0]
        if channel is None:
            return self.scale
        return self.scale[channel]


def quantize(x, p: QuantParams, channel=None):
    """clamp(round(x / s + z), y_min, y_max), round-half-to-even.

    Scalar in, int out; array in, int64 array out.
    """
    s = p.channel_scale(channel)
    y = np.rint(np.asarray(x, dtype=np.float64) / s + p.zero_point)
    y = np.clip(y, p.y_min, p.y_max).astype(np.int64)
    return int(y) if np.isscalar(x) or np.ndim(x) == 0 else y


def dequantize(y, p: QuantParams, channel=None):
    """s * (y - z). Rejects codes outside the clamp bounds."""
    arr = np.asarray(y)
    if arr.min(initial=p.y_min) < p.y_min or arr.max(initial=p.y_max) > p.y_max:
        raise ValueError(f"code outside [{p.y_min}, {p.y_max}]")
    s = p.channel_scale(channel)
    x = s * (arr.astype(np.float64) - p.zero_point)
    return float(x) if np.ndim(y) == 0 else x


def calibrate(samples, bits: int, signed: bool) -> QuantParams:
    """Pick a symmetric scale covering the sample range: z = 0 and
    s = max(|samples|) / y_max (signed) or max(samples) / y_max (unsigned),
    floored at EPS_SCALE so all-zero samples still yield a valid scale.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("calibration needs at least one sample")
    y_max = ((1 << (bits - 1)) - 1) if signed else ((1 << bits) - 1)
    top = np.abs(arr).max() if signed else max(arr.max(), 0.0)
    return QuantParams(max(top / y_max, EPS_SCALE), 0, bits, signed)


# ---------------------------------------------------------------------------
# Scale/bias folding into multi-threshold units
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineSpec:
    """Per-channel gain/bias left over after graph streamlining (folded
    scales and batch-norm coefficients)."""

    gain: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gain", _as_channel_vector(self.gain))
        object.__setattr__(self, "bias", _as_channel_vector(self.bias))
        if not (np.all(np.isfinite(self.gain)) and np.all(np.isfinite(self.bias))):
            raise ValueError("affine coefficients must be finite")
        if np.any(self.gain == 0):
            raise ValueError("gain must be nonzero for every channel")


@dataclass(frozen=True)
class ThresholdUnit:
    """Per-channel ascending integer thresholds; output is the count of
    thresholds at or below the accumulator, an unsigned out_bits value."""

    thresholds: np.ndarray     # (channels, 2^out_bits - 1) int64
    out_bits: int

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.int64)
        if t.ndim != 2:
            raise ValueError("thresholds must be (channels, levels)")
        if t.shape[1] != (1 << self.out_bits) - 1:
            raise ValueError(
                f"expected {(1 << self.out_bits) - 1} levels, got {t.shape[1]}"
            )
        if np.any(np.diff(t, axis=1) < 0):
            raise ValueError("thresholds must be non-decreasing per channel")
        object.__setattr__(self, "thresholds", t)

    @property
    def channels(self) -> int:
        return self.thresholds.shape[0]


def accumulator_range(window: int, weight_bits: int = 4, act_bits: int = 4):
    """Conservative signed bounds on a dot product of ``window`` terms."""
    w_lo, w_hi = -(1 << (weight_bits - 1)), (1 << (weight_bits - 1)) - 1
    a_hi = (1 << act_bits) - 1
    return window * w_lo * a_hi, window * w_hi * a_hi


def fold_to_thresholds(affine: AffineSpec, out: QuantParams, acc_range) -> ThresholdUnit:
    """Fold ``clamp(round((a*acc + b)/s + z))`` into integer thresholds.

    Brute force: evaluate the affine+quantize chain at every accumulator
    value in [lo, hi] and record, per output level, the first acc that
    reaches it. Levels never reached inside the range get threshold hi+1 so
    they never count. Positive gain only; a sign flip would reverse the
    comparison direction and is rejected.
    """
    if out.signed:
        raise ValueError("threshold outputs are unsigned activations")
    if np.any(affine.gain <= 0):
        raise ValueError("threshold folding requires positive gain per channel")
    lo, hi = int(acc_range[0]), int(acc_range[1])
    if hi < lo:
        raise ValueError("empty accumulator range")
    channels = max(affine.gain.shape[0], affine.bias.shape[0], out.scale.shape[0])
    a = np.broadcast_to(affine.gain, (channels,))[:, None]
    b = np.broadcast_to(affine.bias, (channels,))[:, None]
    s = np.broadcast_to(out.scale, (channels,))[:, None]
    acc = np.arange(lo, hi + 1, dtype=np.float64)[None, :]
    q = np.rint((a * acc + b) / s + out.zero_point)
    q = np.clip(q, 0, out.y_max).astype(np.int64)     # (channels, span) ascending
    levels = np.arange(1, out.y_max + 1, dtype=np.int64)
    first = np.empty((channels, out.y_max), dtype=np.int64)
    for c in range(channels):
        idx = np.searchsorted(q[c], levels, side="left")
        first[c] = np.where(idx < q.shape[1], lo + idx, hi + 1)
    return ThresholdUnit(first, out.bits)


def apply_thresholds(acc, unit: ThresholdUnit, channel: int):
    """Count of channel thresholds ≤ acc; monotone non-decreasing in acc."""
    t = unit.thresholds[channel]
    n = np.searchsorted(t, acc, side="right")
    return int(n) if np.ndim(acc) == 0 else n.astype(np.int64)


def apply_thresholds_tensor(acc: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Vectorized threshold application over a channel-last tensor.

    ``acc`` has shape (..., channels); ``thresholds`` is (channels, levels)
    ascending. Returns int64 counts of thresholds ≤ acc, per channel.
    """
    acc = np.asarray(acc, dtype=np.int64)
    channels = thresholds.shape[0]
    if acc.shape[-1] != channels:
        raise ValueError("channel count mismatch with threshold table")
    flat = acc.reshape(-1, channels)
    out = np.empty_like(flat)
    for c in range(channels):
        out[:, c] = np.searchsorted(thresholds[c], flat[:, c], side="right")
    return out.reshape(acc.shape)
