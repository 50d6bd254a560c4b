"""Shared vocabulary of the sensing framework.

Defines the event sets, the feature descriptors with their observation
windows, task specifications, and the empirical feature-range table that
drives forward-model feature synthesis. Multi-task composition is plain set
union over events and features, so adding a task never requires touching the
rest of the pipeline.

All types here are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError


class RealEvent(enum.IntEnum):
    """Low-level human states observable through the radio channel.

    The integer order is fixed: it indexes confusion matrices, dataset
    labels, and classifier outputs.
    """

    ABSENCE = 0
    STILLNESS = 1
    LOCAL_MOTION = 2
    WALKING = 3


class SimEvent(enum.IntEnum):
    """Behavioral primitives used by the event simulator."""

    LEAVE_THROUGH_DOOR = 0
    ENTER_ROOM = 1
    WALK_WITHIN_ROOM = 2
    REMAIN_STILL = 3
    LOCAL_MOTION = 4


class FeatureDescriptor(enum.Enum):
    """The three physical descriptors extracted from CSI."""

    SUBCARRIER_CORR = "corr"
    DSER = "dser"
    PLCR = "plcr"


@dataclass(frozen=True, order=True)
class FeatureKind:
    """A descriptor together with its observation window in seconds."""

    descriptor: FeatureDescriptor
    window_s: float

    def __post_init__(self) -> None:
        if not self.window_s > 0:
            raise ConfigError(f"feature window must be positive, got {self.window_s}")

    @property
    def label(self) -> str:
        return f"{self.descriptor.value}@{self.window_s:g}s"


# Canonical five-slot feature vector, in the slot order used everywhere
# (feature files, dataset records, model inputs).
CANONICAL_FEATURES: tuple[FeatureKind, ...] = (
    FeatureKind(FeatureDescriptor.SUBCARRIER_CORR, 0.5),
    FeatureKind(FeatureDescriptor.DSER, 0.5),
    FeatureKind(FeatureDescriptor.PLCR, 0.1),
    FeatureKind(FeatureDescriptor.SUBCARRIER_CORR, 2.0),
    FeatureKind(FeatureDescriptor.DSER, 2.0),
)

FEATURE_SLOT_NAMES: tuple[str, ...] = ("corr_s", "dser_s", "plcr", "corr_l", "dser_l")

N_REAL_EVENTS = len(RealEvent)
N_SIM_EVENTS = len(SimEvent)
N_FEATURES = len(CANONICAL_FEATURES)


def feature_slot(kind: FeatureKind) -> int:
    """Index of a canonical feature in the five-slot vector."""
    try:
        return CANONICAL_FEATURES.index(kind)
    except ValueError:
        raise ConfigError(f"{kind.label} is not one of the canonical features") from None


@dataclass(frozen=True)
class TaskSpec:
    """A single sensing objective: which events it resolves, which features it reads."""

    name: str
    event_subset: frozenset[RealEvent]
    feature_subset: frozenset[FeatureKind]
    has_position: bool = False

    def __post_init__(self) -> None:
        if not self.event_subset:
            raise ConfigError(f"task {self.name!r} has an empty event subset")
        unknown = [k for k in self.feature_subset if k not in CANONICAL_FEATURES]
        if unknown:
            labels = ", ".join(k.label for k in unknown)
            raise ConfigError(f"task {self.name!r} uses non-canonical features: {labels}")


@dataclass(frozen=True)
class TaskSetSpec:
    """A composed set of tasks with union event and feature sets."""

    tasks: tuple[TaskSpec, ...]

    @property
    def events(self) -> tuple[RealEvent, ...]:
        union = set()
        for t in self.tasks:
            union |= t.event_subset
        return tuple(sorted(union))

    @property
    def features(self) -> tuple[FeatureKind, ...]:
        union = set()
        for t in self.tasks:
            union |= t.feature_subset
        return tuple(k for k in CANONICAL_FEATURES if k in union)

    @property
    def has_position(self) -> bool:
        return any(t.has_position for t in self.tasks)


def compose_task_sets(tasks: Sequence[TaskSpec]) -> TaskSetSpec:
    """Union-compose tasks into one multi-task specification.

    Duplicate tasks collapse, so composition is idempotent, commutative and
    associative. The composed event set must cover all four real events;
    anything narrower points at a misconfigured task list.
    """
    if not tasks:
        raise ConfigError("cannot compose an empty task list")
    seen: dict[str, TaskSpec] = {}
    for t in tasks:
        prev = seen.get(t.name)
        if prev is not None and prev != t:
            raise ConfigError(f"conflicting definitions for task {t.name!r}")
        seen[t.name] = t
    composed = TaskSetSpec(tasks=tuple(sorted(seen.values(), key=lambda t: t.name)))
    missing = set(RealEvent) - set(composed.events)
    if missing:
        names = ", ".join(e.name for e in sorted(missing))
        raise ConfigError(f"composed event set does not cover: {names}")
    return composed


class GeometricModel:
    """Marker for a range-table cell whose values come from path geometry, not an interval."""

    _instance: "GeometricModel | None" = None

    def __new__(cls) -> "GeometricModel":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "GeometricModel"


GEOMETRIC_MODEL = GeometricModel()


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo <= self.hi):
            raise ConfigError(f"interval lo must not exceed hi: [{self.lo}, {self.hi}]")

    def contains(self, x: float, atol: float = 0.0) -> bool:
        return (self.lo - atol) <= x <= (self.hi + atol)

    @property
    def width(self) -> float:
        return self.hi - self.lo


RangeCell = Interval | GeometricModel


@dataclass(frozen=True)
class FeatureRangeTable:
    """Per-(event, feature) emission ranges for forward-model feature synthesis.

    Every (event, feature) pair must have a cell; for the canonical feature
    set exactly one cell (walking speed seen through the path-length change
    rate) is a geometric model rather than an interval.
    """

    cells: Mapping[tuple[RealEvent, FeatureKind], RangeCell]
    features: tuple[FeatureKind, ...] = CANONICAL_FEATURES

    def __post_init__(self) -> None:
        expected = {(e, k) for e in RealEvent for k in self.features}
        got = set(self.cells)
        if got != expected:
            missing = expected - got
            extra = got - expected
            parts = []
            if missing:
                e, k = sorted(missing, key=lambda ek: (ek[0], ek[1].label))[0]
                parts.append(f"missing cell ({e.name}, {k.label}) and {len(missing) - 1} more")
            if extra:
                parts.append(f"{len(extra)} unexpected cells")
            raise ConfigError("incomplete feature range table: " + "; ".join(parts))
        n_geo = sum(1 for c in self.cells.values() if isinstance(c, GeometricModel))
        if self.features == CANONICAL_FEATURES and n_geo != 1:
            raise ConfigError(f"canonical range table needs exactly one geometric cell, got {n_geo}")

    def lookup(self, event: RealEvent, kind: FeatureKind) -> RangeCell:
        return self.cells[(event, kind)]


def default_range_table() -> FeatureRangeTable:
    """Empirical feature ranges per behavior (canonical 4x5 table).

    Walking has no fixed range for the path-length change rate; its values
    follow the geometry of the moving reflection path.
    """
    corr_s, dser_s, plcr, corr_l, dser_l = CANONICAL_FEATURES
    rows: dict[tuple[RealEvent, FeatureKind], RangeCell] = {
        (RealEvent.ABSENCE, corr_s): Interval(0.1, 0.3),
        (RealEvent.ABSENCE, dser_s): Interval(-6.0, -4.0),
        (RealEvent.ABSENCE, plcr): Interval(0.0, 0.1),
        (RealEvent.ABSENCE, corr_l): Interval(0.1, 0.3),
        (RealEvent.ABSENCE, dser_l): Interval(-6.0, -4.0),
        (RealEvent.STILLNESS, corr_s): Interval(0.2, 0.7),
        (RealEvent.STILLNESS, dser_s): Interval(-5.2, -4.0),
        (RealEvent.STILLNESS, plcr): Interval(0.0, 0.1),
        (RealEvent.STILLNESS, corr_l): Interval(0.4, 0.7),
        (RealEvent.STILLNESS, dser_l): Interval(-5.0, -2.5),
        (RealEvent.LOCAL_MOTION, corr_s): Interval(0.6, 1.0),
        (RealEvent.LOCAL_MOTION, dser_s): Interval(-4.0, -1.0),
        (RealEvent.LOCAL_MOTION, plcr): Interval(0.0, 0.3),
        (RealEvent.LOCAL_MOTION, corr_l): Interval(0.6, 1.0),
        (RealEvent.LOCAL_MOTION, dser_l): Interval(-4.0, 0.0),
        (RealEvent.WALKING, corr_s): Interval(0.6, 1.0),
        (RealEvent.WALKING, dser_s): Interval(-4.0, -1.0),
        (RealEvent.WALKING, plcr): GEOMETRIC_MODEL,
        (RealEvent.WALKING, corr_l): Interval(0.6, 1.0),
        (RealEvent.WALKING, dser_l): Interval(-4.0, 0.0),
    }
    return FeatureRangeTable(cells=rows)


def default_tasks() -> tuple[TaskSpec, ...]:
    """Built-in task definitions: tracking, presence detection, state recognition.

    Every task resolves all four events; they differ in the features they
    read and in whether they output coordinates.
    """
    corr_s, dser_s, plcr, corr_l, dser_l = CANONICAL_FEATURES
    all_events = frozenset(RealEvent)
    return (
        TaskSpec(
            name="tracking",
            event_subset=all_events,
            feature_subset=frozenset(CANONICAL_FEATURES),
            has_position=True,
        ),
        TaskSpec(
            name="presence",
            event_subset=all_events,
            feature_subset=frozenset({corr_s, corr_l}),
        ),
        TaskSpec(
            name="state-recognition",
            event_subset=all_events,
            feature_subset=frozenset({corr_s, dser_s, corr_l, dser_l}),
        ),
    )


# --------------------------------------------------------------------------
# Config-document (de)serialization
# --------------------------------------------------------------------------

_EVENT_NAMES = {e: e.name.lower() for e in RealEvent}
_EVENT_BY_NAME = {v: k for k, v in _EVENT_NAMES.items()}
_SIM_EVENT_NAMES = {e: e.name.lower() for e in SimEvent}
_SIM_EVENT_BY_NAME = {v: k for k, v in _SIM_EVENT_NAMES.items()}


def event_name(event: RealEvent) -> str:
    return _EVENT_NAMES[event]


def event_from_name(name: str) -> RealEvent:
    try:
        return _EVENT_BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown event name {name!r}") from None


def sim_event_name(event: SimEvent) -> str:
    return _SIM_EVENT_NAMES[event]


def sim_event_from_name(name: str) -> SimEvent:
    try:
        return _SIM_EVENT_BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown simulator event name {name!r}") from None


def feature_kind_from_config(doc: Mapping) -> FeatureKind:
    if not isinstance(doc, Mapping) or set(doc) != {"descriptor", "window_s"}:
        raise ConfigError(f"feature entries need exactly 'descriptor' and 'window_s': {doc!r}")
    try:
        desc = FeatureDescriptor(doc["descriptor"])
    except ValueError:
        raise ConfigError(f"unknown feature descriptor {doc['descriptor']!r}") from None
    window = doc["window_s"]
    if not isinstance(window, (int, float)) or isinstance(window, bool):
        raise ConfigError(f"window_s must be a number, got {window!r}")
    return FeatureKind(desc, float(window))


def feature_kind_to_config(kind: FeatureKind) -> dict:
    return {"descriptor": kind.descriptor.value, "window_s": kind.window_s}


def range_table_from_config(doc: Mapping) -> FeatureRangeTable:
    """Build a range table from a config document.

    Expected keys: ``events`` (list of event names), ``features`` (list of
    descriptor/window entries), ``ranges`` (per event, one cell per feature:
    ``[lo, hi]`` or the string ``"model"``).
    """
    for key in ("events", "features", "ranges"):
        if key not in doc:
            raise ConfigError(f"range-table config is missing the {key!r} section")
    events = [event_from_name(n) for n in doc["events"]]
    if sorted(events) != sorted(RealEvent):
        raise ConfigError("range-table config must list each of the four events exactly once")
    features = tuple(feature_kind_from_config(f) for f in doc["features"])
    if len(set(features)) != len(features):
        raise ConfigError("range-table config lists a duplicate feature")
    ranges = doc["ranges"]
    if not isinstance(ranges, Mapping) or set(ranges) != {event_name(e) for e in events}:
        raise ConfigError("'ranges' must map every listed event name to its row")
    cells: dict[tuple[RealEvent, FeatureKind], RangeCell] = {}
    for name, row in ranges.items():
        event = event_from_name(name)
        if not isinstance(row, Sequence) or isinstance(row, str) or len(row) != len(features):
            raise ConfigError(f"range row for {name!r} must have {len(features)} cells")
        for kind, cell in zip(features, row):
            if cell == "model":
                cells[(event, kind)] = GEOMETRIC_MODEL
            elif (
                isinstance(cell, Sequence)
                and not isinstance(cell, str)
                and len(cell) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in cell)
            ):
                cells[(event, kind)] = Interval(float(cell[0]), float(cell[1]))
            else:
                raise ConfigError(
                    f"range cell for ({name}, {kind.label}) must be [lo, hi] or \"model\", got {cell!r}"
                )
    return FeatureRangeTable(cells=cells, features=features)


def range_table_to_config(table: FeatureRangeTable) -> dict:
    rows = {}
    for event in RealEvent:
        row = []
        for kind in table.features:
            cell = table.lookup(event, kind)
            row.append("model" if isinstance(cell, GeometricModel) else [cell.lo, cell.hi])
        rows[event_name(event)] = row
    return {
        "events": [event_name(e) for e in RealEvent],
        "features": [feature_kind_to_config(k) for k in table.features],
        "ranges": rows,
    }
