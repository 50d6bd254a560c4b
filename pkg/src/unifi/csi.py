"""Synthetic CSI generation and trace-file ingestion.

The channel model has a per-subcarrier static gain plus one dynamic term from
the dominant reflection off the target:

    H(f, t) = H_s(f) + A * exp(-j * 2*pi * d(t) / lambda_f) + noise

where d(t) is the total reflected path length Tx -> target -> Rx and lambda_f
the per-subcarrier wavelength. A moving target rotates the dynamic phasor at
the Doppler rate -d'(t) / lambda, which is what the feature extractor reads
back out. Optional realism terms (breathing micro-motion, slow common gain
drift, body shadowing) default to off; the ``realistic()`` preset enables the
calibrated values used for forward-model cross-checks.

Trace files are line-delimited JSON: one header record declaring the matrix
shape, then one record per frame with subcarrier-major [re, im] pairs. The
writer emits exactly this format and the parser accepts nothing looser.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateGeometryError, FormatError, ParseError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

# Relative scales used when amplitudes are not given explicitly; values come
# from the feature-calibration fixture (tests/test_calibration.py).
DEFAULT_DYN_AMPLITUDE_REL = 0.3
DEFAULT_NOISE_REL = 0.004


@dataclass(frozen=True)
class RadioConfig:
    """Radio and synthesis parameters.

    ``dyn_amplitude`` and ``noise_std`` may be None, in which case they are
    resolved at synthesis time as ``dyn_amplitude_rel`` / ``noise_rel`` times
    the mean static gain magnitude.
    """

    carrier_freq: float = 5.32e9
    n_subcarriers: int = 30
    n_rx_antennas: int = 3
    subcarrier_spacing: float = 1.25e6
    tx_pos: tuple[float, float] = (-1.8, -1.3)
    rx_pos: tuple[float, float] = (1.8, -1.3)
    sample_rate: float = 100.0
    static_gain_seed: int = 7
    dyn_amplitude: float | None = None
    noise_std: float | None = None
    dyn_amplitude_rel: float = DEFAULT_DYN_AMPLITUDE_REL
    noise_rel: float = DEFAULT_NOISE_REL
    noise_seed: int | None = None
    # Realism knobs, all off by default so the bare channel model holds exactly.
    breathing_amplitude_m: float = 0.0
    breathing_rate_hz: float = 0.25
    heartbeat_amplitude_m: float = 0.0
    heartbeat_rate_hz: float = 1.15
    gain_drift_std: float = 0.0
    gain_drift_tau_s: float = 1.0
    body_shadow_depth: float = 0.0

    def __post_init__(self) -> None:
        if not self.carrier_freq > 0:
            raise ConfigError(f"carrier_freq must be positive, got {self.carrier_freq}")
        if not (50.0 <= self.sample_rate <= 2000.0):
            raise ConfigError(f"sample_rate must lie in [50, 2000] Hz, got {self.sample_rate}")
        if self.n_subcarriers < 1 or self.n_rx_antennas < 1:
            raise ConfigError("need at least one subcarrier and one receive antenna")
        if self.subcarrier_spacing < 0:
            raise ConfigError("subcarrier_spacing must be non-negative")
        if tuple(self.tx_pos) == tuple(self.rx_pos):
            raise ConfigError("tx_pos and rx_pos must differ")
        for name in ("dyn_amplitude", "noise_std"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative, got {v}")
        if self.dyn_amplitude_rel < 0 or self.noise_rel < 0:
            raise ConfigError("relative amplitudes must be non-negative")

    @property
    def wavelength(self) -> float:
        """Carrier wavelength in meters."""
        return SPEED_OF_LIGHT / self.carrier_freq

    def subcarrier_wavelengths(self) -> np.ndarray:
        freqs = self.carrier_freq + np.arange(self.n_subcarriers) * self.subcarrier_spacing
        return SPEED_OF_LIGHT / freqs

    @classmethod
    def realistic(cls, **overrides) -> "RadioConfig":
        """Calibrated preset whose extracted features land in the empirical ranges.

        Adds micro-motion of a present body (breathing and heartbeat), slow
        common receiver gain drift, and mild body shadowing on top of the
        bare model; tests/test_calibration.py pins these numbers.
        """
        base = dict(
            dyn_amplitude_rel=0.15,
            noise_rel=0.002,
            breathing_amplitude_m=1.8e-4,
            breathing_rate_hz=0.27,
            heartbeat_amplitude_m=1.2e-4,
            heartbeat_rate_hz=1.15,
            gain_drift_std=1.2e-3,
            gain_drift_tau_s=1.1,
            body_shadow_depth=0.12,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class CsiFrame:
    """One timestamped CSI matrix (subcarriers x receive antennas)."""

    ts: float
    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.complex128)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise DataError(f"CSI matrix must be 2-D (subcarriers x antennas), got shape {h.shape}")
        if not np.all(np.isfinite(h.view(np.float64))):
            raise DataError("CSI matrix contains non-finite entries")
        h.flags.writeable = False
        object.__setattr__(self, "h", h)


class CsiTrace(Sequence[CsiFrame]):
    """A sequence of CSI frames stored as contiguous arrays.

    Behaves like an immutable sequence of :class:`CsiFrame` while keeping
    ``ts`` (T,) and ``h`` (T, n_sub, n_rx) available for vectorized work.
    """

    def __init__(self, ts: np.ndarray, h: np.ndarray):
        ts = np.asarray(ts, dtype=np.float64)
        h = np.asarray(h, dtype=np.complex128)
        if ts.ndim != 1 or h.ndim != 3 or h.shape[0] != ts.shape[0]:
            raise DataError(f"inconsistent trace arrays: ts {ts.shape}, h {h.shape}")
        if ts.size and np.any(np.diff(ts) < 0):
            raise FormatError("trace timestamps must be monotone non-decreasing")
        if not np.all(np.isfinite(ts)) or not np.all(np.isfinite(h.view(np.float64))):
            raise DataError("trace contains non-finite values")
        ts.flags.writeable = False
        h.flags.writeable = False
        self.ts = ts
        self.h = h

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[1]

    @property
    def n_rx_antennas(self) -> int:
        return self.h.shape[2]

    def __len__(self) -> int:
        return self.ts.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return CsiTrace(self.ts[idx], self.h[idx])
        return CsiFrame(ts=float(self.ts[idx]), h=self.h[idx])

    def __iter__(self) -> Iterator[CsiFrame]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_frames(cls, frames: Iterable[CsiFrame]) -> "CsiTrace":
        frames = list(frames)
        if not frames:
            return cls(np.empty(0), np.empty((0, 1, 1), dtype=np.complex128))
        shape = frames[0].h.shape
        for i, f in enumerate(frames):
            if f.h.shape != shape:
                raise FormatError(f"frame {i} changes matrix shape {shape} -> {f.h.shape}")
        return cls(np.array([f.ts for f in frames]), np.stack([f.h for f in frames]))


def as_trace(frames) -> CsiTrace:
    """Accept either a CsiTrace or any iterable of CsiFrame."""
    if isinstance(frames, CsiTrace):
        return frames
    return CsiTrace.from_frames(frames)


# --------------------------------------------------------------------------
# Path geometry
# --------------------------------------------------------------------------


def path_length(tx, rx, target) -> np.ndarray | float:
    """Total reflected path length |tx - target| + |target - rx| in meters.

    Broadcasts over leading axes of ``target`` so whole trajectories can be
    evaluated in one call.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    d = np.linalg.norm(target - tx, axis=-1) + np.linalg.norm(target - rx, axis=-1)
    if np.ndim(d) == 0:
        return float(d)
    return d


def range_rate(tx, rx, target, velocity) -> np.ndarray | float:
    """Time derivative of the reflected path length for a moving target.

    Equals v . (u_tx->target + u_rx->target) with unit vectors from each
    endpoint to the target. Positive when the path is lengthening.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    dt_tx = target - tx
    dt_rx = target - rx
    n_tx = np.linalg.norm(dt_tx, axis=-1, keepdims=True)
    n_rx = np.linalg.norm(dt_rx, axis=-1, keepdims=True)
    if np.any(n_tx < 1e-12) or np.any(n_rx < 1e-12):
        raise DegenerateGeometryError("target coincides with an antenna position")
    rate = np.sum(velocity * (dt_tx / n_tx + dt_rx / n_rx), axis=-1)
    if np.ndim(rate) == 0:
        return float(rate)
    return rate


# --------------------------------------------------------------------------
# Synthesis
# --------------------------------------------------------------------------


def static_gains(cfg: RadioConfig) -> np.ndarray:
    """Per-(subcarrier, antenna) static complex gains, fixed by the seed."""
    rng = np.random.default_rng(cfg.static_gain_seed)
    shape = (cfg.n_subcarriers, cfg.n_rx_antennas)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def resolve_amplitudes(cfg: RadioConfig, h_s: np.ndarray) -> tuple[float, float]:
    """Concrete (dyn_amplitude, noise_std) for a given static-gain draw."""
    mean_mag = float(np.mean(np.abs(h_s)))
    amp = cfg.dyn_amplitude if cfg.dyn_amplitude is not None else cfg.dyn_amplitude_rel * mean_mag
    noise = cfg.noise_std if cfg.noise_std is not None else cfg.noise_rel * mean_mag
    return amp, noise


def synthesize_csi(
    positions: np.ndarray,
    cfg: RadioConfig,
    occupied: np.ndarray | bool = True,
    speed: np.ndarray | None = None,
    t0: float = 0.0,
) -> CsiTrace:
    """Generate a CSI trace for a target moving along ``positions``.

    ``positions`` has shape (T, 2) sampled at ``cfg.sample_rate``; ``occupied``
    flags (scalar or per-step) gate the dynamic term. ``speed`` is only used
    by the optional body-shadowing term.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise DataError(f"positions must have shape (T, 2), got {positions.shape}")
    if not np.all(np.isfinite(positions)):
        raise DataError("trajectory contains non-finite positions")
    if np.any(np.abs(positions) > 1e6):
        raise DataError("trajectory positions outside the supported numeric range")
    n = positions.shape[0]
    occ = np.broadcast_to(np.asarray(occupied, dtype=bool), (n,)).astype(np.float64)

    h_s = static_gains(cfg)
    amp, noise_std = resolve_amplitudes(cfg, h_s)
    dt = 1.0 / cfg.sample_rate
    ts = t0 + np.arange(n) * dt

    d = path_length(cfg.tx_pos, cfg.rx_pos, positions)
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if cfg.breathing_amplitude_m > 0:
        d = d + cfg.breathing_amplitude_m * np.sin(2 * math.pi * cfg.breathing_rate_hz * ts)
    if cfg.heartbeat_amplitude_m > 0:
        d = d + cfg.heartbeat_amplitude_m * np.sin(2 * math.pi * cfg.heartbeat_rate_hz * ts + 1.0)

    lambdas = cfg.subcarrier_wavelengths()
    phase = -2 * math.pi * d[:, None] / lambdas[None, :]  # (T, S)
    dyn = amp * np.exp(1j * phase) * occ[:, None]  # (T, S)

    static = np.broadcast_to(h_s, (n, *h_s.shape)).copy()  # (T, S, R)
    rng = np.random.default_rng(cfg.noise_seed if cfg.noise_seed is not None else cfg.static_gain_seed + 1)

    if cfg.gain_drift_std > 0 and n > 0:
        # Slow common log-gain wander per antenna (receiver gain instability).
        rho = math.exp(-dt / cfg.gain_drift_tau_s)
        innov = rng.standard_normal((n, cfg.n_rx_antennas)) * cfg.gain_drift_std * math.sqrt(1 - rho * rho)
        drift = np.empty((n, cfg.n_rx_antennas))
        drift[0] = rng.standard_normal(cfg.n_rx_antennas) * cfg.gain_drift_std
        for i in range(1, n):
            drift[i] = rho * drift[i - 1] + innov[i]
        static *= (1.0 + drift)[:, None, :]

    if cfg.body_shadow_depth > 0 and n > 0:
        # Body blocking the static paths while the target moves: a slow,
        # motion-gated common attenuation.
        if speed is None:
            gate = occ
        else:
            gate = occ * np.clip(np.asarray(speed, dtype=np.float64) / 0.5, 0.0, 1.0)
        rho = math.exp(-dt / 0.5)
        w = np.empty(n)
        w[0] = rng.standard_normal()
        innov = rng.standard_normal(n) * math.sqrt(1 - rho * rho)
        for i in range(1, n):
            w[i] = rho * w[i - 1] + innov[i]
        shadow = 1.0 - cfg.body_shadow_depth * gate * (0.5 + 0.25 * w)
        static *= shadow[:, None, None]

    h = static + dyn[:, :, None]
    if noise_std > 0:
        h = h + noise_std * (
            rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
        )
    if not np.all(np.isfinite(h.view(np.float64))):
        raise DataError("CSI synthesis produced non-finite values")
    return CsiTrace(ts, h)


# --------------------------------------------------------------------------
# Trace file format
# --------------------------------------------------------------------------


def _open_for_read(source) -> tuple[IO[str], str | None, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8"), str(source), True
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), None, True
    if isinstance(source, str):
        return io.StringIO(source), None, True
    return source, getattr(source, "name", None), False


def write_csi_trace(trace: CsiTrace, dest) -> None:
    """Write the line-delimited trace format: header record then one record per frame."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        header = {"n_sub": trace.n_subcarriers, "n_rx": trace.n_rx_antennas}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for i in range(len(trace)):
            flat = trace.h[i].reshape(-1)  # subcarrier-major
            pairs = [[float(v.real), float(v.imag)] for v in flat]
            rec = {"ts": float(trace.ts[i]), "csi": pairs}
            fh.write(json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n")
    finally:
        if own:
            fh.close()


def parse_csi_trace(source) -> CsiTrace:
    """Parse a trace, validating shape, finiteness, and timestamp order.

    Malformed records raise :class:`ParseError` carrying the line number;
    contract violations that span records raise :class:`FormatError`.
    """
    fh, path, own = _open_for_read(source)
    try:
        header = None
        ts_list: list[float] = []
        rows: list[np.ndarray] = []
        last_ts = -math.inf
        for line_no, line in enumerate(fh, start=1):
            if line.strip() == "":
                raise ParseError("blank line inside trace", line=line_no, path=path)
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=line_no, path=path) from None
            if header is None:
                if not isinstance(rec, dict) or set(rec) != {"n_sub", "n_rx"}:
                    raise ParseError("first record must be the {\"n_sub\", \"n_rx\"} header", line=line_no, path=path)
                if not all(isinstance(rec[k], int) and not isinstance(rec[k], bool) and rec[k] >= 1 for k in ("n_sub", "n_rx")):
                    raise ParseError("header counts must be integers >= 1", line=line_no, path=path)
                header = (rec["n_sub"], rec["n_rx"])
                continue
            if not isinstance(rec, dict) or set(rec) != {"ts", "csi"}:
                raise ParseError("frame records must have exactly 'ts' and 'csi'", line=line_no, path=path)
            ts = rec["ts"]
            if not isinstance(ts, (int, float)) or isinstance(ts, bool) or not math.isfinite(ts):
                raise ParseError(f"'ts' must be a finite number, got {ts!r}", line=line_no, path=path)
            if ts < last_ts:
                raise FormatError(f"timestamp {ts} goes backwards (previous {last_ts})", line=line_no, path=path)
            csi = rec["csi"]
            expected = header[0] * header[1]
            if not isinstance(csi, list) or len(csi) != expected:
                got = len(csi) if isinstance(csi, list) else type(csi).__name__
                raise ParseError(
                    f"record {len(rows)} has {got} [re, im] pairs, expected {expected}",
                    line=line_no,
                    path=path,
                )
            flat = np.empty(expected, dtype=np.complex128)
            for k, pair in enumerate(csi):
                if (
                    not isinstance(pair, list)
                    or len(pair) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in pair)
                ):
                    raise ParseError(f"'csi' entry {k} is not a finite [re, im] pair", line=line_no, path=path)
                flat[k] = complex(pair[0], pair[1])
            rows.append(flat.reshape(header))
            ts_list.append(float(ts))
            last_ts = ts
        if header is None:
            if ts_list or rows:  # pragma: no cover - unreachable
                raise FormatError("trace without header", path=path)
            return CsiTrace(np.empty(0), np.empty((0, 1, 1), dtype=np.complex128))
        if not rows:
            return CsiTrace(np.empty(0), np.empty((0, *header), dtype=np.complex128))
        return CsiTrace(np.array(ts_list), np.stack(rows))
    finally:
        if own:
            fh.close()
