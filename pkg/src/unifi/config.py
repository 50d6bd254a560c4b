"""YAML configuration surface for the CLI and experiment runners.

One document configures the whole pipeline. Every section is optional and
falls back to the built-in defaults; unknown keys are rejected so typos fail
loudly. The ``events``/``features``/``ranges`` triple follows the documented
range-table schema; the remaining sections mirror the config dataclasses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .csi import RadioConfig
from .domain import FeatureRangeTable, range_table_from_config, range_table_to_config
from .errors import ConfigError
from .features import WindowConfig
from .inverse import ModelConfig, TrainConfig, setting_configs
from .simulator import (
    DEFAULT_DWELL_MEAN_S,
    FeatureSynthesisParams,
    KinematicParams,
    RoomSpec,
    SimulatorConfig,
    TransitionMatrix,
    default_transition_matrix,
)


@dataclass(frozen=True)
class AppConfig:
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_sequences: int = 2000

    def to_dict(self) -> dict:
        """Canonical plain-data view (used for fingerprinting and echoing)."""
        sim = self.sim
        return {
            "range_table": range_table_to_config(sim.table),
            "room": {
                "x0": sim.room.x0,
                "y0": sim.room.y0,
                "x1": sim.room.x1,
                "y1": sim.room.y1,
                "door": list(sim.room.door),
                "tx": list(sim.room.tx_pos),
                "rx": list(sim.room.rx_pos),
            },
            "kinematics": {
                "a_range": list(sim.kin.a_range),
                "vmax_range": list(sim.kin.vmax_range),
                "turn_prob": sim.kin.turn_prob,
                "turn_jitter_rad": sim.kin.turn_jitter_rad,
                "local_motion_plcr_range": list(sim.kin.local_motion_plcr_range),
                "walk_speed_threshold": sim.kin.walk_speed_threshold,
                "local_extent_threshold": sim.kin.local_extent_threshold,
            },
            "markov": {
                "matrix": [[float(v) for v in row] for row in sim.markov.m],
                "dwell_mean_s": list(sim.dwell_mean_s),
            },
            "feature_synthesis": {
                "ar_coef": sim.feat.ar_coef,
                "plcr_noise_base": sim.feat.plcr_noise_base,
                "reference_rate": sim.feat.reference_rate,
            },
            "simulate": {
                "f_s": sim.f_s,
                "hop_s": sim.hop_s,
                "duration_range_s": list(sim.duration_range_s),
                "init_pos_sigma": sim.init_pos_sigma,
                "n_sequences": self.n_sequences,
            },
            "radio": {
                "carrier_freq": self.radio.carrier_freq,
                "n_subcarriers": self.radio.n_subcarriers,
                "n_rx_antennas": self.radio.n_rx_antennas,
                "subcarrier_spacing": self.radio.subcarrier_spacing,
                "tx_pos": list(self.radio.tx_pos),
                "rx_pos": list(self.radio.rx_pos),
                "sample_rate": self.radio.sample_rate,
                "static_gain_seed": self.radio.static_gain_seed,
                "dyn_amplitude": self.radio.dyn_amplitude,
                "noise_std": self.radio.noise_std,
                "noise_seed": self.radio.noise_seed,
                "breathing_amplitude_m": self.radio.breathing_amplitude_m,
                "breathing_rate_hz": self.radio.breathing_rate_hz,
                "gain_drift_std": self.radio.gain_drift_std,
                "gain_drift_tau_s": self.radio.gain_drift_tau_s,
                "body_shadow_depth": self.radio.body_shadow_depth,
            },
            "windows": {
                "short_s": self.windows.short_s,
                "long_s": self.windows.long_s,
                "plcr_s": self.windows.plcr_s,
                "hop_s": self.windows.hop_s,
                "plcr_floor_ratio": self.windows.plcr_floor_ratio,
            },
            "model": {
                "state_hidden": self.model.state_hidden,
                "traj_hidden": self.model.traj_hidden,
                "context": self.model.context,
                "n_heads_attn": self.model.n_heads_attn,
                "architecture": self.model.architecture,
                "d_model": self.model.d_model,
                "ffn_hidden": self.model.ffn_hidden,
                "seed": self.model.seed,
            },
            "train": {
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "lambda_pos": self.train.lambda_pos,
                "lambda_sta": self.train.lambda_sta,
                "epochs": self.train.epochs,
                "val_fraction": self.train.val_fraction,
                "early_stop_patience": self.train.early_stop_patience,
                "clip_norm": self.train.clip_norm,
                "momentum": self.train.momentum,
                "optimizer": self.train.optimizer,
            },
        }


def config_fingerprint(cfg: AppConfig, seed: int | None = None) -> str:
    """Stable hash of the full configuration (plus the run seed when given)."""
    doc = cfg.to_dict()
    if seed is not None:
        doc["seed"] = seed
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _require_mapping(doc: Any, name: str) -> Mapping:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"config section {name!r} must be a mapping, got {type(doc).__name__}")
    return doc


def _check_keys(doc: Mapping, allowed: set[str], name: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")


def _pair(doc: Mapping, key: str, default: tuple[float, float]) -> tuple[float, float]:
    if key not in doc:
        return default
    v = doc[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{key} must be a [lo, hi] pair, got {v!r}")
    return (float(v[0]), float(v[1]))


def _build_room(doc: Mapping) -> RoomSpec:
    _check_keys(doc, {"x0", "y0", "x1", "y1", "door", "tx", "rx"}, "room")
    base = RoomSpec()
    door = doc.get("door", base.door)
    tx = doc.get("tx", base.tx_pos)
    rx = doc.get("rx", base.rx_pos)
    for name, v in (("door", door), ("tx", tx), ("rx", rx)):
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise ConfigError(f"room.{name} must be an [x, y] pair")
    return RoomSpec(
        x0=float(doc.get("x0", base.x0)),
        y0=float(doc.get("y0", base.y0)),
        x1=float(doc.get("x1", base.x1)),
        y1=float(doc.get("y1", base.y1)),
        door=(float(door[0]), float(door[1])),
        tx_pos=(float(tx[0]), float(tx[1])),
        rx_pos=(float(rx[0]), float(rx[1])),
    )


def _build_kin(doc: Mapping) -> KinematicParams:
    allowed = {
        "a_range",
        "vmax_range",
        "turn_prob",
        "turn_jitter_rad",
        "local_motion_plcr_range",
        "walk_speed_threshold",
        "local_extent_threshold",
    }
    _check_keys(doc, allowed, "kinematics")
    base = KinematicParams()
    return KinematicParams(
        a_range=_pair(doc, "a_range", base.a_range),
        vmax_range=_pair(doc, "vmax_range", base.vmax_range),
        turn_prob=float(doc.get("turn_prob", base.turn_prob)),
        turn_jitter_rad=float(doc.get("turn_jitter_rad", base.turn_jitter_rad)),
        local_motion_plcr_range=_pair(doc, "local_motion_plcr_range", base.local_motion_plcr_range),
        walk_speed_threshold=float(doc.get("walk_speed_threshold", base.walk_speed_threshold)),
        local_extent_threshold=float(doc.get("local_extent_threshold", base.local_extent_threshold)),
    )


def _build_markov(doc: Mapping) -> tuple[TransitionMatrix, tuple[float, ...]]:
    _check_keys(doc, {"matrix", "dwell_mean_s"}, "markov")
    matrix = default_transition_matrix()
    dwell = DEFAULT_DWELL_MEAN_S
    if "matrix" in doc:
        rows = doc["matrix"]
        if not isinstance(rows, list) or len(rows) != 5 or not all(isinstance(r, list) and len(r) == 5 for r in rows):
            raise ConfigError("markov.matrix must be a 5x5 array of probabilities")
        matrix = TransitionMatrix(np.array(rows, dtype=np.float64))
    if "dwell_mean_s" in doc:
        d = doc["dwell_mean_s"]
        if not isinstance(d, list) or len(d) != 5:
            raise ConfigError("markov.dwell_mean_s must list five mean dwell times")
        dwell = tuple(float(v) for v in d)
    return matrix, dwell


def _build_simulator(doc: Mapping, table: FeatureRangeTable) -> tuple[SimulatorConfig, int]:
    room = _build_room(_require_mapping(doc.get("room", {}), "room"))
    kin = _build_kin(_require_mapping(doc.get("kinematics", {}), "kinematics"))
    markov, dwell = _build_markov(_require_mapping(doc.get("markov", {}), "markov"))

    fs_doc = _require_mapping(doc.get("feature_synthesis", {}), "feature_synthesis")
    _check_keys(fs_doc, {"ar_coef", "plcr_noise_base", "reference_rate"}, "feature_synthesis")
    feat_base = FeatureSynthesisParams()
    feat = FeatureSynthesisParams(
        ar_coef=float(fs_doc.get("ar_coef", feat_base.ar_coef)),
        plcr_noise_base=float(fs_doc.get("plcr_noise_base", feat_base.plcr_noise_base)),
        reference_rate=float(fs_doc.get("reference_rate", feat_base.reference_rate)),
    )

    sim_doc = _require_mapping(doc.get("simulate", {}), "simulate")
    _check_keys(sim_doc, {"f_s", "hop_s", "duration_range_s", "init_pos_sigma", "n_sequences"}, "simulate")
    base = SimulatorConfig()
    n_sequences = sim_doc.get("n_sequences", 2000)
    if not isinstance(n_sequences, int) or isinstance(n_sequences, bool) or n_sequences < 1:
        raise ConfigError("simulate.n_sequences must be a positive integer")
    cfg = SimulatorConfig(
        room=room,
        kin=kin,
        markov=markov,
        dwell_mean_s=dwell,
        table=table,
        feat=feat,
        f_s=float(sim_doc.get("f_s", base.f_s)),
        hop_s=float(sim_doc.get("hop_s", base.hop_s)),
        duration_range_s=_pair(sim_doc, "duration_range_s", base.duration_range_s),
        init_pos_sigma=float(sim_doc.get("init_pos_sigma", base.init_pos_sigma)),
    )
    return cfg, n_sequences


def _build_radio(doc: Mapping, sim: SimulatorConfig) -> RadioConfig:
    allowed = {
        "preset",
        "carrier_freq",
        "n_subcarriers",
        "n_rx_antennas",
        "subcarrier_spacing",
        "tx_pos",
        "rx_pos",
        "sample_rate",
        "static_gain_seed",
        "dyn_amplitude",
        "noise_std",
        "noise_seed",
        "breathing_amplitude_m",
        "breathing_rate_hz",
        "gain_drift_std",
        "gain_drift_tau_s",
        "body_shadow_depth",
    }
    _check_keys(doc, allowed, "radio")
    preset = doc.get("preset", "bare")
    if preset not in ("bare", "realistic"):
        raise ConfigError(f"radio.preset must be 'bare' or 'realistic', got {preset!r}")
    base = RadioConfig.realistic() if preset == "realistic" else RadioConfig()
    # Geometry and rate follow the simulator unless explicitly overridden.
    values = {
        "tx_pos": tuple(doc.get("tx_pos", sim.room.tx_pos)),
        "rx_pos": tuple(doc.get("rx_pos", sim.room.rx_pos)),
        "sample_rate": float(doc.get("sample_rate", sim.f_s)),
    }
    for name in allowed - {"preset", "tx_pos", "rx_pos", "sample_rate"}:
        if name in doc:
            values[name] = doc[name]
        else:
            values[name] = getattr(base, name)
    return RadioConfig(**values)


def _build_windows(doc: Mapping) -> WindowConfig:
    _check_keys(doc, {"short_s", "long_s", "plcr_s", "hop_s", "plcr_floor_ratio"}, "windows")
    base = WindowConfig()
    return WindowConfig(
        short_s=float(doc.get("short_s", base.short_s)),
        long_s=float(doc.get("long_s", base.long_s)),
        plcr_s=float(doc.get("plcr_s", base.plcr_s)),
        hop_s=float(doc.get("hop_s", base.hop_s)),
        plcr_floor_ratio=float(doc.get("plcr_floor_ratio", base.plcr_floor_ratio)),
    )


def _build_model_train(doc_model: Mapping, doc_train: Mapping, seed: int) -> tuple[ModelConfig, TrainConfig]:
    allowed_m = {
        "setting",
        "state_hidden",
        "traj_hidden",
        "context",
        "n_heads_attn",
        "architecture",
        "d_model",
        "ffn_hidden",
        "seed",
    }
    _check_keys(doc_model, allowed_m, "model")
    setting = doc_model.get("setting")
    if setting is not None:
        mcfg, tcfg = setting_configs(int(setting), seed=seed)
    else:
        mcfg, tcfg = ModelConfig(seed=seed), TrainConfig()
    overrides = {k: doc_model[k] for k in allowed_m - {"setting"} if k in doc_model}
    if overrides:
        mcfg = replace(mcfg, **overrides)

    allowed_t = {
        "batch_size",
        "learning_rate",
        "lambda_pos",
        "lambda_sta",
        "epochs",
        "val_fraction",
        "early_stop_patience",
        "clip_norm",
        "momentum",
        "optimizer",
    }
    _check_keys(doc_train, allowed_t, "train")
    t_overrides = {k: doc_train[k] for k in allowed_t if k in doc_train}
    if t_overrides:
        tcfg = replace(tcfg, **t_overrides)
    return mcfg, tcfg


def config_from_mapping(doc: Mapping | None, seed: int = 0) -> AppConfig:
    if doc is None:
        doc = {}
    doc = _require_mapping(doc, "<root>")
    allowed = {
        "events",
        "features",
        "ranges",
        "room",
        "kinematics",
        "markov",
        "feature_synthesis",
        "simulate",
        "radio",
        "windows",
        "model",
        "train",
    }
    _check_keys(doc, allowed, "<root>")
    if any(k in doc for k in ("events", "features", "ranges")):
        table = range_table_from_config(doc)
    else:
        table = SimulatorConfig().table
    sim, n_sequences = _build_simulator(doc, table)
    radio = _build_radio(_require_mapping(doc.get("radio", {}), "radio"), sim)
    windows = _build_windows(_require_mapping(doc.get("windows", {}), "windows"))
    model, train = _build_model_train(
        _require_mapping(doc.get("model", {}), "model"),
        _require_mapping(doc.get("train", {}), "train"),
        seed,
    )
    return AppConfig(sim=sim, radio=radio, windows=windows, model=model, train=train, n_sequences=n_sequences)


def load_config(path: str | Path | None, seed: int = 0) -> AppConfig:
    """Load a YAML config file; ``None`` gives the built-in defaults."""
    if path is None:
        return config_from_mapping(None, seed=seed)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    return config_from_mapping(doc, seed=seed)
