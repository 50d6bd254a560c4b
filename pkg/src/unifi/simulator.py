"""Behavior simulation: event chains, kinematics, labels, and feature synthesis.

The modeling pipeline runs in four steps per sequence:

1. Sample a simulated-event sequence from a first-order Markov chain over the
   five behavioral primitives, with per-event geometric dwell times.
2. Expand events into a kinematic trajectory: walking uses a trapezoidal
   speed profile (accelerate, cruise, decelerate) with random turning,
   door events move along the ray through the door point, stillness holds
   position, and local motion adds bounded positional jitter around an
   anchor. The room boundary acts as a specular (billiard) reflector.
3. Map each step to a real event with speed/containment rules.
4. Emit the per-frame feature vector: interval cells of the range table
   become AR(1)-smoothed draws whose stationary distribution is uniform over
   the cell (a Gaussian-copula recursion), and the geometric walking cell is
   the trajectory's range rate plus sampling noise that shrinks with the
   packet rate.

Everything is a pure function of (config, master seed, sequence index), so
datasets regenerate byte-identically and sequences can be produced in
parallel without changing the result.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.signal import lfilter

from .csi import RadioConfig, range_rate
from .domain import (
    CANONICAL_FEATURES,
    FeatureRangeTable,
    GeometricModel,
    Interval,
    N_FEATURES,
    N_REAL_EVENTS,
    N_SIM_EVENTS,
    RealEvent,
    SimEvent,
    default_range_table,
)
from .errors import ConfigError, DataError, ParseError

# --------------------------------------------------------------------------
# Configuration types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic 5x5 transition matrix over simulated events."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (N_SIM_EVENTS, N_SIM_EVENTS):
            raise ConfigError(f"transition matrix must be {N_SIM_EVENTS}x{N_SIM_EVENTS}, got {m.shape}")
        if np.any(m < 0):
            raise ConfigError("transition probabilities must be non-negative")
        sums = m.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ConfigError(f"transition matrix rows must sum to 1 (+/- 1e-9), got {sums}")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def stationary(self, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
        """Stationary distribution by power iteration to the given tolerance."""
        pi = np.full(N_SIM_EVENTS, 1.0 / N_SIM_EVENTS)
        for _ in range(max_iter):
            nxt = pi @ self.m
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - pi)) < tol:
                return nxt
            pi = nxt
        return pi


def default_transition_matrix() -> TransitionMatrix:
    """Indoor default: long dwells with occasional walks, door traffic, gestures."""
    rows = np.array(
        [
            # leave   enter   walk    still   local
            [0.900, 0.040, 0.000, 0.060, 0.000],  # leave_through_door
            [0.000, 0.900, 0.050, 0.030, 0.020],  # enter_room
            [0.010, 0.000, 0.900, 0.060, 0.030],  # walk_within_room
            [0.020, 0.000, 0.050, 0.900, 0.030],  # remain_still
            [0.000, 0.000, 0.030, 0.070, 0.900],  # local_motion
        ]
    )
    return TransitionMatrix(rows)


# Mean contiguous dwell per simulated event, seconds.
DEFAULT_DWELL_MEAN_S: tuple[float, ...] = (2.0, 2.0, 3.0, 8.0, 4.0)


@dataclass(frozen=True)
class RoomSpec:
    """Axis-aligned room with a door point on its perimeter."""

    x0: float = -2.0
    y0: float = -1.5
    x1: float = 2.0
    y1: float = 1.5
    door: tuple[float, float] = (0.9, 1.5)
    tx_pos: tuple[float, float] = (-1.8, -1.3)
    rx_pos: tuple[float, float] = (1.8, -1.3)

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ConfigError("room boundary must have positive extent")
        dx, dy = self.door
        on_x_wall = math.isclose(dx, self.x0, abs_tol=1e-9) or math.isclose(dx, self.x1, abs_tol=1e-9)
        on_y_wall = math.isclose(dy, self.y0, abs_tol=1e-9) or math.isclose(dy, self.y1, abs_tol=1e-9)
        in_x = self.x0 - 1e-9 <= dx <= self.x1 + 1e-9
        in_y = self.y0 - 1e-9 <= dy <= self.y1 + 1e-9
        if not ((on_x_wall and in_y) or (on_y_wall and in_x)):
            raise ConfigError(f"door {self.door} must lie on the room perimeter")
        if tuple(self.tx_pos) == tuple(self.rx_pos):
            raise ConfigError("tx_pos and rx_pos must differ")
        for name in ("tx_pos", "rx_pos"):
            p = getattr(self, name)
            if not self.contains(np.asarray(p)):
                raise ConfigError(f"{name} {p} must lie inside or on the boundary")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2])

    def contains(self, points: np.ndarray, atol: float = 1e-9) -> np.ndarray | bool:
        p = np.asarray(points, dtype=np.float64)
        inside = (
            (p[..., 0] >= self.x0 - atol)
            & (p[..., 0] <= self.x1 + atol)
            & (p[..., 1] >= self.y0 - atol)
            & (p[..., 1] <= self.y1 + atol)
        )
        if np.ndim(inside) == 0:
            return bool(inside)
        return inside

    def door_outward_normal(self) -> np.ndarray:
        dx, dy = self.door
        if math.isclose(dy, self.y1, abs_tol=1e-9):
            return np.array([0.0, 1.0])
        if math.isclose(dy, self.y0, abs_tol=1e-9):
            return np.array([0.0, -1.0])
        if math.isclose(dx, self.x1, abs_tol=1e-9):
            return np.array([1.0, 0.0])
        return np.array([-1.0, 0.0])


@dataclass(frozen=True)
class KinematicParams:
    """Motion parameters for expanding events into trajectories."""

    a_range: tuple[float, float] = (0.5, 1.2)
    vmax_range: tuple[float, float] = (0.6, 1.0)
    turn_prob: float = 0.03
    turn_jitter_rad: float = 0.6
    local_motion_plcr_range: tuple[float, float] = (0.0, 0.3)
    walk_speed_threshold: float = 0.2
    local_extent_threshold: float = 0.3

    def __post_init__(self) -> None:
        for name in ("a_range", "vmax_range", "local_motion_plcr_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ConfigError(f"{name} must have lo <= hi, got ({lo}, {hi})")
        if not (0 <= self.turn_prob <= 1):
            raise ConfigError(f"turn_prob must be a probability, got {self.turn_prob}")
        if self.walk_speed_threshold <= 0 or self.local_extent_threshold <= 0:
            raise ConfigError("speed and extent thresholds must be positive")
        if self.a_range[0] <= 0 or self.vmax_range[0] <= 0:
            raise ConfigError("acceleration and peak speed must be positive")


@dataclass(frozen=True)
class Trajectory:
    """Per-step kinematic state at the packet rate.

    ``speed`` is locomotion speed (local-motion jitter is not locomotion and
    reports 0); ``heading`` is the realized direction of travel.
    """

    pos: np.ndarray  # (L, 2) meters
    speed: np.ndarray  # (L,) m/s
    heading: np.ndarray  # (L,) radians
    inside: np.ndarray  # (L,) bool
    f_s: float

    def __post_init__(self) -> None:
        pos = np.asarray(self.pos, dtype=np.float64)
        speed = np.asarray(self.speed, dtype=np.float64)
        heading = np.asarray(self.heading, dtype=np.float64)
        inside = np.asarray(self.inside, dtype=bool)
        n = pos.shape[0]
        if pos.shape != (n, 2) or speed.shape != (n,) or heading.shape != (n,) or inside.shape != (n,):
            raise DataError("trajectory arrays have inconsistent shapes")
        if self.f_s <= 0:
            raise ConfigError(f"f_s must be positive, got {self.f_s}")
        for a in (pos, speed, heading, inside):
            a.flags.writeable = False
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "speed", speed)
        object.__setattr__(self, "heading", heading)
        object.__setattr__(self, "inside", inside)

    def __len__(self) -> int:
        return self.pos.shape[0]

    def velocities(self) -> np.ndarray:
        """Per-step velocity from position differences (last step repeats)."""
        if len(self) < 2:
            return np.zeros_like(self.pos)
        v = np.diff(self.pos, axis=0) * self.f_s
        return np.vstack([v, v[-1:]])


@dataclass(frozen=True)
class FeatureSynthesisParams:
    """Forward-model emission parameters."""

    ar_coef: float = 0.9
    plcr_noise_base: float = 0.12  # m/s at the 100 Hz reference packet rate
    reference_rate: float = 100.0

    def __post_init__(self) -> None:
        if not (0 <= self.ar_coef < 1):
            raise ConfigError(f"ar_coef must lie in [0, 1), got {self.ar_coef}")
        if self.plcr_noise_base < 0:
            raise ConfigError("plcr_noise_base must be non-negative")

    def plcr_noise_std(self, f_s: float) -> float:
        """Estimator noise shrinks with the number of samples per window."""
        return self.plcr_noise_base * math.sqrt(self.reference_rate / f_s)


@dataclass(frozen=True)
class SimulatorConfig:
    """Everything the modeling pipeline needs, minus the master seed."""

    room: RoomSpec = field(default_factory=RoomSpec)
    kin: KinematicParams = field(default_factory=KinematicParams)
    markov: TransitionMatrix = field(default_factory=default_transition_matrix)
    dwell_mean_s: tuple[float, ...] = DEFAULT_DWELL_MEAN_S
    table: FeatureRangeTable = field(default_factory=default_range_table)
    feat: FeatureSynthesisParams = field(default_factory=FeatureSynthesisParams)
    f_s: float = 100.0
    hop_s: float = 0.1
    duration_range_s: tuple[float, float] = (20.0, 40.0)
    init_pos_sigma: float = 0.4

    def __post_init__(self) -> None:
        if len(self.dwell_mean_s) != N_SIM_EVENTS or any(d <= 0 for d in self.dwell_mean_s):
            raise ConfigError("dwell_mean_s needs one positive entry per simulated event")
        if self.f_s <= 0 or self.hop_s <= 0:
            raise ConfigError("f_s and hop_s must be positive")
        lo, hi = self.duration_range_s
        if not (0 < lo <= hi):
            raise ConfigError(f"duration_range_s must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.init_pos_sigma <= 0:
            raise ConfigError("init_pos_sigma must be positive")

    @property
    def frame_stride(self) -> int:
        return max(1, round(self.f_s * self.hop_s))

    @property
    def frame_rate(self) -> float:
        return self.f_s / self.frame_stride


@dataclass(frozen=True)
class LabeledSequence:
    """One simulated sequence at the emitted frame cadence."""

    seq_id: int
    f_s: float  # frame rate of the stored series
    sim_events: np.ndarray  # (K,) int
    real_events: np.ndarray  # (K,) int
    pos: np.ndarray  # (K, 2) meters
    feat: np.ndarray  # (K, 5), NaN for sentinel slots

    def __post_init__(self) -> None:
        sim = np.asarray(self.sim_events, dtype=np.int64)
        real = np.asarray(self.real_events, dtype=np.int64)
        pos = np.asarray(self.pos, dtype=np.float64)
        feat = np.asarray(self.feat, dtype=np.float64)
        k = sim.shape[0]
        if real.shape != (k,) or pos.shape != (k, 2) or feat.shape != (k, N_FEATURES):
            raise DataError("labeled sequence series have inconsistent lengths")
        if k and (sim.min() < 0 or sim.max() >= N_SIM_EVENTS):
            raise DataError("sim_events out of range")
        if k and (real.min() < 0 or real.max() >= N_REAL_EVENTS):
            raise DataError("real_events out of range")
        for a in (sim, real, pos, feat):
            a.flags.writeable = False
        object.__setattr__(self, "sim_events", sim)
        object.__setattr__(self, "real_events", real)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "feat", feat)

    def __len__(self) -> int:
        return self.sim_events.shape[0]


# --------------------------------------------------------------------------
# Step 1: event chain
# --------------------------------------------------------------------------


def contiguous_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """(start, end, value) for each maximal run of equal labels; end exclusive."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def sample_sim_events(
    matrix: TransitionMatrix,
    length: int,
    rng: np.random.Generator,
    dwell_mean_steps: Sequence[float],
) -> np.ndarray:
    """Sample a per-step simulated-event sequence of the given length.

    The first segment's event comes from the stationary distribution; each
    following segment is drawn from the current event's transition row.
    Segment dwells are geometric; because a row may keep probability mass on
    its own event, the per-segment mean is scaled by (1 - p_stay) so the mean
    *contiguous* dwell matches the configured value.
    """
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    dwell = np.asarray(dwell_mean_steps, dtype=np.float64)
    if dwell.shape != (N_SIM_EVENTS,) or np.any(dwell <= 0):
        raise ConfigError("dwell_mean_steps needs one positive entry per simulated event")
    pi = matrix.stationary()
    event = int(rng.choice(N_SIM_EVENTS, p=pi))
    out = np.empty(length, dtype=np.int64)
    filled = 0
    while filled < length:
        stay = float(matrix.m[event, event])
        mean_steps = max(1.0, dwell[event] * (1.0 - stay))
        steps = int(rng.geometric(1.0 / mean_steps))
        take = min(steps, length - filled)
        out[filled : filled + take] = event
        filled += take
        event = int(rng.choice(N_SIM_EVENTS, p=matrix.m[event]))
    return out


# --------------------------------------------------------------------------
# Step 2: kinematics
# --------------------------------------------------------------------------


def _fold(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Specular (billiard) reflection of unconstrained coordinates into [lo, hi]."""
    w = hi - lo
    m = np.mod(u - lo, 2.0 * w)
    return lo + (w - np.abs(m - w))


def _trapezoid_displacements(n_steps: int, dt: float, accel: float, v_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-step displacements and step-start speeds of a trapezoidal profile.

    Degenerates to a triangle when the segment is too short to reach v_max.
    """
    total = n_steps * dt
    v_peak = min(v_max, accel * total / 2.0)
    t1 = v_peak / accel
    t2 = total - t1

    def dist(t: np.ndarray) -> np.ndarray:
        t = np.clip(t, 0.0, total)
        d_acc = 0.5 * accel * np.minimum(t, t1) ** 2
        d_cruise = v_peak * np.clip(t - t1, 0.0, t2 - t1)
        td = np.clip(t - t2, 0.0, t1)
        d_dec = v_peak * td - 0.5 * accel * td**2
        return d_acc + d_cruise + d_dec

    edges = np.arange(n_steps + 1) * dt
    cum = dist(edges)
    speeds = np.where(
        edges[:-1] < t1,
        accel * edges[:-1],
        np.where(edges[:-1] < t2, v_peak, np.maximum(v_peak - accel * (edges[:-1] - t2), 0.0)),
    )
    return np.diff(cum), speeds


def _heading_walk(n_steps: int, theta0: float, kin: KinematicParams, rng: np.random.Generator) -> np.ndarray:
    """Per-step headings: persistent direction with occasional bounded turns."""
    turns = rng.random(n_steps) < kin.turn_prob
    jitter = rng.uniform(-kin.turn_jitter_rad, kin.turn_jitter_rad, n_steps) * turns
    return theta0 + np.cumsum(jitter)


def expand_kinematics(
    sim_events: np.ndarray,
    room: RoomSpec,
    kin: KinematicParams,
    f_s: float,
    rng: np.random.Generator,
    init_pos_sigma: float = 0.4,
) -> Trajectory:
    """Expand a simulated-event sequence into a full trajectory.

    Walking wanders with billiard reflections at the boundary; door events
    move along the ray through the door point and flip the inside flag at the
    crossing; stillness holds position; local motion jitters around an anchor
    without leaving the room. The starting position is drawn near the room
    center (or outside the door if the sequence starts with an entry).
    """
    if f_s <= 0:
        raise ConfigError(f"f_s must be positive, got {f_s}")
    sim_events = np.asarray(sim_events, dtype=np.int64)
    n = sim_events.shape[0]
    if n == 0:
        raise ConfigError("sim_events must be non-empty")
    dt = 1.0 / f_s
    door = np.asarray(room.door, dtype=np.float64)
    normal = room.door_outward_normal()

    pos = np.empty((n, 2))
    speed = np.zeros(n)
    inside = np.empty(n, dtype=bool)

    first = SimEvent(int(sim_events[0]))
    if first == SimEvent.ENTER_ROOM:
        lateral = np.array([-normal[1], normal[0]])
        p = door + normal * rng.uniform(0.8, 2.5) + lateral * rng.normal(0.0, 0.3)
        cur_inside = False
    else:
        for _ in range(64):
            p = room.center + rng.normal(0.0, init_pos_sigma, 2)
            if room.contains(p):
                break
        else:
            p = room.center.copy()
        cur_inside = True
    theta = float(rng.uniform(-math.pi, math.pi))

    for start, end, value in contiguous_runs(sim_events):
        ell = end - start
        event = SimEvent(value)
        if event == SimEvent.REMAIN_STILL:
            pos[start:end] = p
            inside[start:end] = cur_inside
            continue
        if event == SimEvent.LOCAL_MOTION:
            # Bounded jitter of the reflection point: an OU velocity
            # integrated to a displacement, clipped to the allowed extent.
            tau, sigma_v = 0.3, 0.12
            rho = math.exp(-dt / tau)
            eps = rng.standard_normal((ell, 2)) * sigma_v * math.sqrt(1 - rho * rho)
            v0 = rng.standard_normal(2) * sigma_v
            vel, _ = lfilter([1.0], [1.0, -rho], eps, axis=0, zi=(rho * v0)[None, :])
            disp = np.cumsum(vel * dt, axis=0)
            radius = np.linalg.norm(disp, axis=1, keepdims=True)
            limit = kin.local_extent_threshold
            scale = np.where(radius > limit, limit / np.maximum(radius, 1e-12), 1.0)
            jittered = p + disp * scale
            if cur_inside:
                jittered[:, 0] = np.clip(jittered[:, 0], room.x0, room.x1)
                jittered[:, 1] = np.clip(jittered[:, 1], room.y0, room.y1)
            pos[start:end] = jittered
            inside[start:end] = cur_inside
            p = jittered[-1].copy()
            continue

        accel = rng.uniform(*kin.a_range)
        v_max = rng.uniform(*kin.vmax_range)
        deltas, speeds = _trapezoid_displacements(ell, dt, accel, v_max)
        if event == SimEvent.WALK_WITHIN_ROOM:
            theta = float(rng.uniform(-math.pi, math.pi))
            headings = _heading_walk(ell, theta, kin, rng)
            steps = deltas[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
            raw = p + np.cumsum(steps, axis=0)
            if cur_inside:
                walked = np.stack(
                    [_fold(raw[:, 0], room.x0, room.x1), _fold(raw[:, 1], room.y0, room.y1)], axis=1
                )
            else:
                walked = raw
            pos[start:end] = walked
            speed[start:end] = speeds
            inside[start:end] = cur_inside
            p = walked[-1].copy()
            theta = float(headings[-1])
            continue

        # Door events: move along the ray through the door point.
        if event == SimEvent.LEAVE_THROUGH_DOOR:
            to_door = door - p
            dist_to_door = float(np.linalg.norm(to_door))
            direction = normal if dist_to_door < 1e-9 else to_door / dist_to_door
            if not cur_inside:
                # Already outside: keep moving away from the room.
                direction = normal if dist_to_door < 1e-9 else -to_door / dist_to_door
        else:  # ENTER_ROOM
            if cur_inside:
                # Degenerate: already in the room; walk toward the interior.
                to_center = room.center - p
                norm_c = float(np.linalg.norm(to_center))
                direction = to_center / norm_c if norm_c > 1e-9 else -normal
            else:
                to_door = door - p
                dist_to_door = float(np.linalg.norm(to_door))
                direction = -normal if dist_to_door < 1e-9 else to_door / dist_to_door
        arc = np.cumsum(deltas)
        ray = p + arc[:, None] * direction[None, :]
        contained = room.contains(ray)
        if event == SimEvent.ENTER_ROOM and not cur_inside:
            # After crossing into the room, reflect the straight continuation.
            entered = np.flatnonzero(contained)
            if entered.size:
                k0 = int(entered[0])
                ray[k0:, 0] = _fold(ray[k0:, 0], room.x0, room.x1)
                ray[k0:, 1] = _fold(ray[k0:, 1], room.y0, room.y1)
                contained = room.contains(ray)
        pos[start:end] = ray
        speed[start:end] = speeds
        inside[start:end] = contained
        p = ray[-1].copy()
        cur_inside = bool(contained[-1])
        theta = float(math.atan2(direction[1], direction[0]))

    # Realized heading from actual displacements; carry forward when static.
    if n == 1:
        heading = np.array([theta])
    else:
        d = np.diff(pos, axis=0)
        moved = np.linalg.norm(d, axis=1) > 1e-12
        ang = np.arctan2(d[:, 1], d[:, 0])
        if moved.any():
            first_ang = float(ang[moved][0])
            last_idx = np.maximum.accumulate(np.where(moved, np.arange(n - 1), -1))
            heading_steps = np.where(last_idx >= 0, ang[np.maximum(last_idx, 0)], first_ang)
        else:
            heading_steps = np.zeros(n - 1)
        heading = np.concatenate([heading_steps, heading_steps[-1:]])
    return Trajectory(pos=pos, speed=speed, heading=heading, inside=inside, f_s=f_s)


# --------------------------------------------------------------------------
# Step 3: rule-based mapping to real events
# --------------------------------------------------------------------------


def map_to_real_events(sim_events: np.ndarray, traj: Trajectory, kin: KinematicParams) -> np.ndarray:
    """Map per-step simulated events and kinematics to real events.

    Outside the room everything is absence. Inside, locomotion speed at or
    above the walking threshold is walking; below it, steps inside a
    local-motion segment are local motion and everything else (including the
    sub-threshold ramp of a walk) is stillness.
    """
    sim_events = np.asarray(sim_events, dtype=np.int64)
    if sim_events.shape[0] != len(traj):
        raise DataError("sim_events and trajectory must have equal length")
    real = np.full(sim_events.shape[0], RealEvent.STILLNESS.value, dtype=np.int64)
    walking = traj.speed >= kin.walk_speed_threshold
    real[walking] = RealEvent.WALKING.value
    local = (~walking) & (sim_events == SimEvent.LOCAL_MOTION.value)
    real[local] = RealEvent.LOCAL_MOTION.value
    real[~traj.inside] = RealEvent.ABSENCE.value
    return real


# --------------------------------------------------------------------------
# Step 4: feature synthesis
# --------------------------------------------------------------------------


def _uniform_ar_draws(
    n: int, n_cols: int, ar_coef: float, rng: np.random.Generator
) -> np.ndarray:
    """Stationary AR(1) latents mapped through a Gaussian copula to U(0, 1).

    Every sample is exactly uniform on (0, 1); consecutive samples correlate
    with coefficient ``ar_coef`` in the latent space.
    """
    eps = rng.standard_normal((n, n_cols))
    if ar_coef == 0.0 or n == 1:
        z = eps
    else:
        scale = math.sqrt(1.0 - ar_coef * ar_coef)
        z = np.empty((n, n_cols))
        z[0] = eps[0]
        rest, _ = lfilter([scale], [1.0, -ar_coef], eps[1:], axis=0, zi=(ar_coef * z[0])[None, :])
        z[1:] = rest
    return ndtr(z)


def synthesize_features(
    real_events: np.ndarray,
    pos: np.ndarray,
    vel: np.ndarray,
    table: FeatureRangeTable,
    room: RoomSpec,
    rng: np.random.Generator,
    params: FeatureSynthesisParams,
    plcr_noise_std: float | None = None,
) -> np.ndarray:
    """Emit the five-slot feature vector per frame from the range table.

    Interval cells produce AR(1)-smoothed draws uniform over the cell; the
    AR state resets at event changes. The geometric walking cell emits the
    range rate of the reflected path plus Gaussian estimator noise.
    """
    real_events = np.asarray(real_events, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    n = real_events.shape[0]
    if pos.shape != (n, 2) or vel.shape != (n, 2):
        raise DataError("real_events, pos and vel must share one length")
    if plcr_noise_std is None:
        plcr_noise_std = params.plcr_noise_std(params.reference_rate)
    out = np.empty((n, N_FEATURES))
    for start, end, value in contiguous_runs(real_events):
        event = RealEvent(value)
        ell = end - start
        cells = [table.lookup(event, kind) for kind in CANONICAL_FEATURES]
        interval_cols = [j for j, c in enumerate(cells) if isinstance(c, Interval)]
        u = _uniform_ar_draws(ell, len(interval_cols), params.ar_coef, rng)
        for idx, j in enumerate(interval_cols):
            cell = cells[j]
            out[start:end, j] = cell.lo + cell.width * u[:, idx]
        for j, c in enumerate(cells):
            if isinstance(c, GeometricModel):
                rate = range_rate(room.tx_pos, room.rx_pos, pos[start:end], vel[start:end])
                noise = rng.standard_normal(ell) * plcr_noise_std
                out[start:end, j] = np.asarray(rate) + noise
    return out


# --------------------------------------------------------------------------
# Full pipeline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationArtifacts:
    """Full-rate intermediates of one simulated sequence (for checks and CSI synthesis)."""

    sim_events: np.ndarray
    traj: Trajectory
    real_events: np.ndarray
    emit_indices: np.ndarray


def sequence_rngs(master_seed: int, seq_index: int) -> tuple[np.random.Generator, ...]:
    """Independent streams (length, events, kinematics, features) per sequence."""
    ss = np.random.SeedSequence(entropy=(master_seed, seq_index))
    return tuple(np.random.default_rng(child) for child in ss.spawn(4))


def simulate_sequence(
    cfg: SimulatorConfig,
    master_seed: int,
    seq_index: int,
    duration_s: float | None = None,
) -> tuple[LabeledSequence, SimulationArtifacts]:
    """Run the whole modeling pipeline for one sequence."""
    rng_len, rng_events, rng_kin, rng_feat = sequence_rngs(master_seed, seq_index)
    lo, hi = cfg.duration_range_s
    dur = float(rng_len.uniform(lo, hi)) if duration_s is None else float(duration_s)
    length = max(cfg.frame_stride, round(dur * cfg.f_s))

    dwell_steps = np.asarray(cfg.dwell_mean_s) * cfg.f_s
    sim_events = sample_sim_events(cfg.markov, length, rng_events, dwell_steps)
    traj = expand_kinematics(sim_events, cfg.room, cfg.kin, cfg.f_s, rng_kin, cfg.init_pos_sigma)
    real_events = map_to_real_events(sim_events, traj, cfg.kin)

    stride = cfg.frame_stride
    idx = np.arange(stride - 1, length, stride)
    vel = traj.velocities()
    feat = synthesize_features(
        real_events[idx],
        traj.pos[idx],
        vel[idx],
        cfg.table,
        cfg.room,
        rng_feat,
        cfg.feat,
        plcr_noise_std=cfg.feat.plcr_noise_std(cfg.f_s),
    )
    labeled = LabeledSequence(
        seq_id=seq_index,
        f_s=cfg.frame_rate,
        sim_events=sim_events[idx],
        real_events=real_events[idx],
        pos=traj.pos[idx],
        feat=feat,
    )
    artifacts = SimulationArtifacts(
        sim_events=sim_events, traj=traj, real_events=real_events, emit_indices=idx
    )
    return labeled, artifacts


def class_balance(sequences: Iterable[LabeledSequence]) -> dict[str, float]:
    counts = np.zeros(N_REAL_EVENTS, dtype=np.int64)
    total = 0
    for seq in sequences:
        counts += np.bincount(seq.real_events, minlength=N_REAL_EVENTS)
        total += len(seq)
    if total == 0:
        return {e.name.lower(): 0.0 for e in RealEvent}
    return {e.name.lower(): float(counts[e.value]) / total for e in RealEvent}


def generate_dataset(
    n_sequences: int,
    cfg: SimulatorConfig,
    master_seed: int,
    out=None,
) -> tuple[list[LabeledSequence], dict[str, float]]:
    """Generate a dataset of independent sequences; optionally persist it.

    Returns the sequences and the per-event frame-balance report.
    """
    if n_sequences < 1:
        raise ConfigError(f"n_sequences must be >= 1, got {n_sequences}")
    sequences = [simulate_sequence(cfg, master_seed, i)[0] for i in range(n_sequences)]
    balance = class_balance(sequences)
    if out is not None:
        write_dataset(sequences, out)
    return sequences, balance


# --------------------------------------------------------------------------
# Dataset file format
# --------------------------------------------------------------------------


def write_dataset(sequences: Sequence[LabeledSequence], dest) -> None:
    """Line-delimited records, one per sequence; NaN feature slots become null."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for seq in sequences:
            feat_rows = [
                [None if math.isnan(v) else float(v) for v in row] for row in seq.feat
            ]
            rec = {
                "id": int(seq.seq_id),
                "f_s": float(seq.f_s),
                "sim": [int(v) for v in seq.sim_events],
                "real": [int(v) for v in seq.real_events],
                "pos": [[float(x), float(y)] for x, y in seq.pos],
                "feat": feat_rows,
            }
            fh.write(json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n")
    finally:
        if own:
            fh.close()


def parse_dataset(source) -> list[LabeledSequence]:
    from .csi import _open_for_read

    fh, path, own = _open_for_read(source)
    try:
        out: list[LabeledSequence] = []
        for line_no, line in enumerate(fh, start=1):
            if line.strip() == "":
                raise ParseError("blank line inside dataset file", line=line_no, path=path)
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=line_no, path=path) from None
            if not isinstance(rec, dict) or set(rec) != {"id", "f_s", "sim", "real", "pos", "feat"}:
                raise ParseError(
                    "dataset records need exactly the keys id, f_s, sim, real, pos, feat",
                    line=line_no,
                    path=path,
                )
            if not isinstance(rec["id"], int) or isinstance(rec["id"], bool):
                raise ParseError("'id' must be an integer", line=line_no, path=path)
            f_s = rec["f_s"]
            if not isinstance(f_s, (int, float)) or isinstance(f_s, bool) or not math.isfinite(f_s) or f_s <= 0:
                raise ParseError("'f_s' must be a positive number", line=line_no, path=path)
            sim, real, pos, feat = rec["sim"], rec["real"], rec["pos"], rec["feat"]
            if not all(isinstance(x, list) for x in (sim, real, pos, feat)):
                raise ParseError("'sim', 'real', 'pos', 'feat' must be arrays", line=line_no, path=path)
            k = len(sim)
            if not (len(real) == len(pos) == len(feat) == k):
                raise ParseError("series lengths differ within one record", line=line_no, path=path)
            if not all(isinstance(v, int) and not isinstance(v, bool) and 0 <= v < N_SIM_EVENTS for v in sim):
                raise ParseError("'sim' entries must be integers in [0, 5)", line=line_no, path=path)
            if not all(isinstance(v, int) and not isinstance(v, bool) and 0 <= v < N_REAL_EVENTS for v in real):
                raise ParseError("'real' entries must be integers in [0, 4)", line=line_no, path=path)
            pos_arr = np.empty((k, 2))
            for i, xy in enumerate(pos):
                if (
                    not isinstance(xy, list)
                    or len(xy) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in xy)
                ):
                    raise ParseError(f"'pos' entry {i} is not a finite [x, y] pair", line=line_no, path=path)
                pos_arr[i] = xy
            feat_arr = np.empty((k, N_FEATURES))
            for i, row in enumerate(feat):
                if not isinstance(row, list) or len(row) != N_FEATURES:
                    raise ParseError(f"'feat' entry {i} must have {N_FEATURES} slots", line=line_no, path=path)
                for j, v in enumerate(row):
                    if v is None:
                        feat_arr[i, j] = math.nan
                    elif isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v):
                        feat_arr[i, j] = float(v)
                    else:
                        raise ParseError(
                            f"'feat' entry {i} slot {j} must be a finite number or null",
                            line=line_no,
                            path=path,
                        )
            try:
                out.append(
                    LabeledSequence(
                        seq_id=rec["id"],
                        f_s=float(f_s),
                        sim_events=np.array(sim, dtype=np.int64),
                        real_events=np.array(real, dtype=np.int64),
                        pos=pos_arr,
                        feat=feat_arr,
                    )
                )
            except DataError as exc:
                raise ParseError(str(exc), line=line_no, path=path) from None
        return out
    finally:
        if own:
            fh.close()
