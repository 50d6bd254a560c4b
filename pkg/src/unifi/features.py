"""Physical feature extraction from CSI windows.

Three descriptors, each computed on the static/dynamic decomposition of the
channel (static = temporal mean over the window, dynamic = residual):

* subcarrier correlation - mean absolute Pearson correlation between the
  amplitude series of subcarrier pairs, averaged over antennas. Coherent
  motion drives all subcarriers together; an empty channel decorrelates them.
* DSER - dynamic-to-static energy ratio, log10 of residual power over static
  power. A direct motion-strength readout.
* PLCR - path-length change rate. The dominant Doppler line of the complex
  residual, found by a windowed zero-padded FFT with parabolic peak
  refinement, converted to meters/second via the carrier wavelength.
  Sign convention: a shortening path gives a negative rate.

Features are evaluated on three windows (short/long for correlation and
DSER, a dedicated short window for PLCR) on a fixed hop grid, producing one
:class:`FeatureFrame` per hop. Frames whose window has not filled yet carry
NaN sentinels. Extraction is pure: identical traces give identical output.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .csi import CsiTrace, RadioConfig, as_trace
from .errors import ConfigError, DataError, DegenerateStaticError, ParseError, WindowError

log = logging.getLogger(__name__)

# Subcarrier amplitude series with variance below this are treated as flat;
# correlation pairs involving them count as zero.
DEGENERATE_VARIANCE = 1e-12

# Residual-to-static power ratio under which the PLCR estimator declares
# "no motion" and returns 0 (calibrated against the noise-only regime).
DEFAULT_PLCR_FLOOR_RATIO = 3e-4

DSER_CLAMP = 10.0


@dataclass(frozen=True)
class WindowConfig:
    """Window lengths and hop of the sliding feature grid, in seconds."""

    short_s: float = 0.5
    long_s: float = 2.0
    plcr_s: float = 0.1
    hop_s: float = 0.1
    plcr_floor_ratio: float = DEFAULT_PLCR_FLOOR_RATIO

    def __post_init__(self) -> None:
        if not (0 < self.plcr_s < self.short_s < self.long_s):
            raise ConfigError(
                f"windows must satisfy 0 < plcr_s < short_s < long_s, got "
                f"{self.plcr_s}/{self.short_s}/{self.long_s}"
            )
        if not self.hop_s > 0:
            raise ConfigError(f"hop_s must be positive, got {self.hop_s}")
        if self.plcr_floor_ratio < 0:
            raise ConfigError("plcr_floor_ratio must be non-negative")


@dataclass(frozen=True)
class FeatureFrame:
    """One timestep of the five-slot feature vector.

    Slot order everywhere: (corr short, dser short, plcr, corr long,
    dser long). NaN marks a window that had not filled yet.
    """

    ts: float
    corr_short: float
    dser_short: float
    plcr: float
    corr_long: float
    dser_long: float

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.corr_short, self.dser_short, self.plcr, self.corr_long, self.dser_long],
            dtype=np.float64,
        )

    @property
    def is_sentinel(self) -> bool:
        return bool(np.isnan(self.to_array()).any())


def subcarrier_correlation(frames) -> float:
    """Mean |Pearson correlation| over off-diagonal subcarrier pairs.

    Amplitude series are mean-removed and variance-normalized per subcarrier;
    the result is averaged across receive antennas and lies in [0, 1].
    """
    trace = as_trace(frames)
    if len(trace) < 2:
        raise WindowError(f"subcarrier correlation needs >= 2 frames, got {len(trace)}")
    amp = np.abs(trace.h)  # (T, S, R)
    t, s, r = amp.shape
    if s < 2:
        raise WindowError("subcarrier correlation needs >= 2 subcarriers")
    total = 0.0
    for a in range(r):
        x = amp[:, :, a]
        centered = x - x.mean(axis=0)
        var = np.mean(centered**2, axis=0)
        ok = var > DEGENERATE_VARIANCE
        denom = np.sqrt(np.where(ok, var, 1.0))
        z = np.where(ok, centered / denom, 0.0)
        corr = (z.T @ z) / t  # (S, S); exact 1 on the diagonal for ok series
        mask = np.outer(ok, ok)
        np.fill_diagonal(mask, False)
        n_pairs = s * (s - 1)
        total += float(np.abs(corr)[mask].sum()) / n_pairs
    return total / r


def _static_dynamic_split(trace: CsiTrace) -> tuple[np.ndarray, np.ndarray]:
    static = trace.h.mean(axis=0)  # (S, R)
    resid = trace.h - static[None]
    return static, resid


def dser(frames) -> float:
    """log10 of residual power over static power, clamped to +/-10.

    The static estimate is the per-(subcarrier, antenna) temporal mean over
    the window; the ratio is averaged in log domain across cells.
    """
    trace = as_trace(frames)
    if len(trace) < 2:
        raise WindowError(f"dser needs >= 2 frames, got {len(trace)}")
    static, resid = _static_dynamic_split(trace)
    p_static = np.abs(static) ** 2  # (S, R)
    p_dyn = np.mean(np.abs(resid) ** 2, axis=0)  # (S, R)
    if float(p_static.mean()) < 1e-18:
        raise DegenerateStaticError("static CSI power is effectively zero")
    with np.errstate(divide="ignore"):
        cell = np.log10(np.where(p_dyn > 0, p_dyn, 0.0)) - np.log10(np.maximum(p_static, 1e-300))
    cell = np.clip(cell, -DSER_CLAMP, DSER_CLAMP)
    return float(np.clip(cell.mean(), -DSER_CLAMP, DSER_CLAMP))


def plcr(frames, wavelength: float, floor_ratio: float = DEFAULT_PLCR_FLOOR_RATIO) -> float:
    """Dominant path-length change rate of the window, in meters/second.

    Averages the residual's zero-padded power spectrum over subcarriers and
    antennas, picks the strongest line, refines it by parabolic
    interpolation, and converts frequency to path rate (rate = -f * lambda).
    Windows whose residual power sits below ``floor_ratio`` times the static
    power report 0 (no motion).
    """
    trace = as_trace(frames)
    n = len(trace)
    if n < 3:
        raise WindowError(f"plcr needs >= 3 frames, got {n}")
    if wavelength <= 0:
        raise ConfigError(f"wavelength must be positive, got {wavelength}")
    dt = float(np.median(np.diff(trace.ts)))
    if dt <= 0:
        raise WindowError("plcr needs strictly increasing timestamps")
    static, resid = _static_dynamic_split(trace)
    p_resid = float(np.mean(np.abs(resid) ** 2))
    p_static = float(np.mean(np.abs(static) ** 2))
    if p_resid <= floor_ratio * p_static or p_resid == 0.0:
        return 0.0
    window = np.hanning(n)
    n_fft = 1 << max(6, int(math.ceil(math.log2(8 * n))))
    flat = resid.reshape(n, -1) * window[:, None]
    spec = np.fft.fft(flat, n=n_fft, axis=0)
    power = np.mean(np.abs(spec) ** 2, axis=1)
    peak = int(np.argmax(power))
    # Parabolic refinement on the power of the three bins around the peak.
    alpha = power[(peak - 1) % n_fft]
    beta = power[peak]
    gamma = power[(peak + 1) % n_fft]
    denom = alpha - 2 * beta + gamma
    delta = 0.0 if denom == 0 else 0.5 * (alpha - gamma) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    freqs = np.fft.fftfreq(n_fft, d=dt)
    bin_width = 1.0 / (n_fft * dt)
    f_peak = float(freqs[peak]) + delta * bin_width
    # Fold frequencies beyond Nyquist back to the signed convention.
    nyquist = 0.5 / dt
    if f_peak > nyquist:
        f_peak -= 2 * nyquist
    return -f_peak * wavelength


class FeatureSequence(Sequence[FeatureFrame]):
    """Feature frames stored as contiguous arrays (ts (K,), values (K, 5))."""

    def __init__(self, ts: np.ndarray, values: np.ndarray):
        ts = np.asarray(ts, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if ts.ndim != 1 or values.ndim != 2 or values.shape != (ts.shape[0], 5):
            raise DataError(f"inconsistent feature arrays: ts {ts.shape}, values {values.shape}")
        ts.flags.writeable = False
        values.flags.writeable = False
        self.ts = ts
        self.values = values

    def __len__(self) -> int:
        return self.ts.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return FeatureSequence(self.ts[idx], self.values[idx])
        v = self.values[idx]
        return FeatureFrame(float(self.ts[idx]), *map(float, v))

    def __iter__(self) -> Iterator[FeatureFrame]:
        for i in range(len(self)):
            yield self[i]

    @property
    def sentinel_mask(self) -> np.ndarray:
        return np.isnan(self.values).any(axis=1)

    @classmethod
    def from_frames(cls, frames: Iterable[FeatureFrame]) -> "FeatureSequence":
        frames = list(frames)
        if not frames:
            return cls(np.empty(0), np.empty((0, 5)))
        return cls(np.array([f.ts for f in frames]), np.stack([f.to_array() for f in frames]))


def extract_sequence(trace, win: WindowConfig, cfg: RadioConfig) -> FeatureSequence:
    """Sliding-window feature extraction over a whole trace.

    One frame per hop, timestamped at the window's right edge. A window of
    span W is considered complete only once the right edge lies strictly
    beyond the trace start plus W, so a trace of D seconds yields
    D/hop frames of which the first ceil(W/hop) carry sentinels. Per-window
    failures are logged and produce sentinels; extraction never aborts
    mid-trace.
    """
    trace = as_trace(trace)
    n = len(trace)
    if n == 0:
        return FeatureSequence(np.empty(0), np.empty((0, 5)))
    f_s = cfg.sample_rate
    hop_n = max(1, round(win.hop_s * f_s))
    spans = {
        "short": max(2, round(win.short_s * f_s)),
        "long": max(2, round(win.long_s * f_s)),
        "plcr": max(3, round(win.plcr_s * f_s)),
    }
    wavelength = cfg.wavelength
    k_max = n // hop_n
    ts_out = np.empty(k_max)
    values = np.full((k_max, 5), np.nan)
    for k in range(1, k_max + 1):
        end = k * hop_n
        ts_out[k - 1] = trace.ts[end - 1]
        row = values[k - 1]
        for name, span in spans.items():
            if end <= span:  # window not complete yet
                continue
            sub = trace[end - span : end]
            try:
                if name == "plcr":
                    row[2] = plcr(sub, wavelength, floor_ratio=win.plcr_floor_ratio)
                elif name == "short":
                    row[0] = subcarrier_correlation(sub)
                    row[1] = dser(sub)
                else:
                    row[3] = subcarrier_correlation(sub)
                    row[4] = dser(sub)
            except DataError as exc:
                log.warning("feature window ending at %.3f s failed (%s); emitting sentinel", ts_out[k - 1], exc)
    return FeatureSequence(ts_out, values)


# --------------------------------------------------------------------------
# Feature file format
# --------------------------------------------------------------------------

_RECORD_KEYS = ("ts", "corr_s", "dser_s", "plcr", "corr_l", "dser_l")


def write_feature_file(seq: FeatureSequence, dest) -> None:
    """Line-delimited records with NaN sentinels encoded as null."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for i in range(len(seq)):
            vals = [float(seq.ts[i])] + [float(v) for v in seq.values[i]]
            rec = {k: (None if (k != "ts" and math.isnan(v)) else v) for k, v in zip(_RECORD_KEYS, vals)}
            fh.write(json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n")
    finally:
        if own:
            fh.close()


def parse_feature_file(source) -> FeatureSequence:
    from .csi import _open_for_read  # shared line-oriented reader plumbing

    fh, path, own = _open_for_read(source)
    try:
        ts_list: list[float] = []
        rows: list[list[float]] = []
        for line_no, line in enumerate(fh, start=1):
            if line.strip() == "":
                raise ParseError("blank line inside feature file", line=line_no, path=path)
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=line_no, path=path) from None
            if not isinstance(rec, dict) or set(rec) != set(_RECORD_KEYS):
                raise ParseError(f"feature records need exactly the keys {list(_RECORD_KEYS)}", line=line_no, path=path)
            ts = rec["ts"]
            if not isinstance(ts, (int, float)) or isinstance(ts, bool) or not math.isfinite(ts):
                raise ParseError(f"'ts' must be a finite number, got {ts!r}", line=line_no, path=path)
            row = []
            for key in _RECORD_KEYS[1:]:
                v = rec[key]
                if v is None:
                    row.append(math.nan)
                elif isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v):
                    row.append(float(v))
                else:
                    raise ParseError(f"{key!r} must be a finite number or null, got {v!r}", line=line_no, path=path)
            if ts_list and ts < ts_list[-1]:
                raise ParseError(f"timestamp {ts} goes backwards", line=line_no, path=path)
            ts_list.append(float(ts))
            rows.append(row)
        if not rows:
            return FeatureSequence(np.empty(0), np.empty((0, 5)))
        return FeatureSequence(np.array(ts_list), np.array(rows))
    finally:
        if own:
            fh.close()
