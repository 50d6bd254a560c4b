"""Training loop, model container, and inference for the inverse model.

Training is plain mini-batch gradient descent (optional momentum) with a
global gradient-norm clip, mean-reduced losses, an internal validation split,
and best-validation checkpointing. Everything is float64 and seeded, so a
given (dataset, configs) pair reproduces the exact same parameters.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ..domain import N_FEATURES, N_REAL_EVENTS, RealEvent
from ..errors import ConfigError, TrainingError
from ..simulator import LabeledSequence
from .network import (
    ModelConfig,
    MODEL_SETTINGS,
    Params,
    backward,
    forward,
    init_params,
    loss_terms,
    loss_weights,
    param_shapes,
)

log = logging.getLogger(__name__)

# Sequences per forward/backward chunk; bounds attention memory while keeping
# results bit-identical to an unchunked pass (gradients accumulate in a fixed
# order).
CHUNK_SEQUENCES = 16


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 2e-3
    lambda_pos: float = 1.0
    lambda_sta: float = 1.0
    epochs: int = 30
    val_fraction: float = 0.15
    early_stop_patience: int = 5
    clip_norm: float = 1.0
    momentum: float = 0.9
    optimizer: str = "momentum"

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lambda_pos < 0 or self.lambda_sta < 0:
            raise ConfigError("loss weights must be non-negative")
        if not (0 < self.val_fraction < 0.5):
            raise ConfigError(f"val_fraction must lie in (0, 0.5), got {self.val_fraction}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.optimizer not in ("sgd", "momentum"):
            raise ConfigError(f"optimizer must be 'sgd' or 'momentum', got {self.optimizer!r}")


def setting_configs(setting: int, seed: int = 0) -> tuple[ModelConfig, TrainConfig]:
    """The five named configurations; setting 5 also rebalances the losses."""
    if setting not in MODEL_SETTINGS:
        raise ConfigError(f"setting must be one of {sorted(MODEL_SETTINGS)}, got {setting}")
    mcfg = ModelConfig(seed=seed, **MODEL_SETTINGS[setting])
    tcfg = TrainConfig()
    if setting == 5:
        tcfg = replace(tcfg, learning_rate=1e-3, lambda_pos=0.5, lambda_sta=1.5)
    return mcfg, tcfg


@dataclass(frozen=True)
class Normalizer:
    """Per-slot mean/std fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise ConfigError("normalizer needs one mean/std per feature slot")
        if np.any(std <= 0):
            raise ConfigError("normalizer std must be positive")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, feats: np.ndarray) -> "Normalizer":
        ok = ~np.isnan(feats).any(axis=1)
        data = feats[ok]
        if data.shape[0] < 2:
            raise TrainingError("not enough valid frames to fit a normalizer")
        std = data.std(axis=0)
        return cls(mean=data.mean(axis=0), std=np.maximum(std, 1e-8))


@dataclass(frozen=True)
class FramePrediction:
    """Per-frame output: event distribution plus coordinates when present."""

    index: int
    event_probs: np.ndarray  # (4,), sums to 1
    event: RealEvent
    pos: tuple[float, float] | None
    confidence: float

    def __post_init__(self) -> None:
        probs = np.asarray(self.event_probs, dtype=np.float64)
        if probs.shape != (N_REAL_EVENTS,) or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ConfigError("event_probs must be a 4-way distribution")
        if (self.pos is None) != (self.event == RealEvent.ABSENCE):
            raise ConfigError("pos must be absent exactly for absence predictions")
        probs.flags.writeable = False
        object.__setattr__(self, "event_probs", probs)


@dataclass(frozen=True)
class InverseModel:
    """Trained parameters plus everything needed to reproduce predictions."""

    params: Params
    config: ModelConfig
    normalizer: Normalizer
    feature_mask: np.ndarray  # (5,) bool; False slots are zeroed at input

    def __post_init__(self) -> None:
        mask = np.asarray(self.feature_mask, dtype=bool)
        if mask.shape != (N_FEATURES,):
            raise ConfigError("feature_mask needs one flag per feature slot")
        mask.flags.writeable = False
        object.__setattr__(self, "feature_mask", mask)
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.params):
            raise ConfigError("parameter names do not match the model config")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def prepare_inputs(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Normalize, zero masked slots and sentinel frames; returns (x, valid)."""
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 2:
            feats = feats[None]
        valid = ~np.isnan(feats).any(axis=2)
        x = (feats - self.normalizer.mean) / self.normalizer.std
        x = np.where(np.isnan(x), 0.0, x)
        x *= self.feature_mask.astype(np.float64)
        x *= valid[..., None]
        return x, valid

    def predict_arrays(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(probs (T, 4), pos (T, 2), valid (T,)) for a single sequence."""
        x, valid = self.prepare_inputs(np.asarray(feats, dtype=np.float64))
        cache = forward(self.params, self.config, x, valid)
        logits = cache["logits"][0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        return probs, cache["pos"][0], valid[0]


def infer(model: InverseModel, features) -> list[FramePrediction]:
    """Apply the model over a feature sequence.

    Accepts a (T, 5) array, a FeatureSequence, or an iterable of
    FeatureFrame. Sentinel frames produce no prediction; an all-sentinel
    input returns an empty list with a warning.
    """
    feats = _features_to_array(features)
    if feats.shape[0] == 0:
        return []
    probs, pos, valid = model.predict_arrays(feats)
    if not valid.any():
        warnings.warn("all feature frames are sentinels; nothing to infer", stacklevel=2)
        return []
    out: list[FramePrediction] = []
    for t in np.flatnonzero(valid):
        p = probs[t]
        event = RealEvent(int(np.argmax(p)))
        out.append(
            FramePrediction(
                index=int(t),
                event_probs=p,
                event=event,
                pos=None if event == RealEvent.ABSENCE else (float(pos[t, 0]), float(pos[t, 1])),
                confidence=float(p.max()),
            )
        )
    return out


def _features_to_array(features) -> np.ndarray:
    from ..features import FeatureFrame, FeatureSequence

    if isinstance(features, FeatureSequence):
        return features.values
    if isinstance(features, np.ndarray):
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise ConfigError(f"feature array must be (T, {N_FEATURES}), got {features.shape}")
        return features.astype(np.float64)
    frames = list(features)
    if not frames:
        return np.empty((0, N_FEATURES))
    if not all(isinstance(f, FeatureFrame) for f in frames):
        raise ConfigError("features must be FeatureFrame instances, a FeatureSequence, or an array")
    return np.stack([f.to_array() for f in frames])


# --------------------------------------------------------------------------
# Batch assembly
# --------------------------------------------------------------------------


@dataclass
class _Batch:
    x: np.ndarray  # (B, T, 5)
    valid: np.ndarray  # (B, T)
    y: np.ndarray  # (B, T)
    pos: np.ndarray  # (B, T, 2)


def _pad_batch(
    seqs: Sequence[LabeledSequence],
    normalizer: Normalizer,
    feature_mask: np.ndarray,
) -> _Batch:
    t_max = max(len(s) for s in seqs)
    b = len(seqs)
    x = np.zeros((b, t_max, N_FEATURES))
    valid = np.zeros((b, t_max), dtype=bool)
    y = np.zeros((b, t_max), dtype=np.int64)
    pos = np.zeros((b, t_max, 2))
    for i, s in enumerate(seqs):
        k = len(s)
        ok = ~np.isnan(s.feat).any(axis=1)
        xi = (s.feat - normalizer.mean) / normalizer.std
        xi = np.where(np.isnan(xi), 0.0, xi)
        xi *= feature_mask.astype(np.float64)
        xi *= ok[:, None]
        x[i, :k] = xi
        valid[i, :k] = ok
        y[i, :k] = s.real_events
        pos[i, :k] = s.pos
    return _Batch(x=x, valid=valid, y=y, pos=pos)


def _global_norm(grads: Params) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def _batch_pass(
    params: Params,
    mcfg: ModelConfig,
    batch: _Batch,
    tcfg: TrainConfig,
    compute_grads: bool,
) -> tuple[float, dict, Params | None]:
    """Mean-reduced loss (and grads) over one batch, chunked for memory."""
    b = batch.x.shape[0]
    # Counts first so chunk gradients can be weighted exactly.
    ev_mask = batch.valid
    pos_mask = batch.valid & (batch.y != RealEvent.ABSENCE.value)
    n_ev = max(int(ev_mask.sum()), 1)
    n_pos = max(int(pos_mask.sum()), 1)
    w_ce = tcfg.lambda_sta / n_ev
    w_pos = tcfg.lambda_pos / n_pos

    total = 0.0
    agg = {"ce_sum": 0.0, "pos_sum": 0.0, "n_ev": 0, "n_pos": 0, "correct": 0}
    grads: Params | None = None
    for start in range(0, b, CHUNK_SEQUENCES):
        sl = slice(start, min(start + CHUNK_SEQUENCES, b))
        cache = forward(params, mcfg, batch.x[sl], batch.valid[sl])
        terms = loss_terms(cache, batch.y[sl], batch.pos[sl])
        agg["ce_sum"] += terms["ce_sum"]
        agg["pos_sum"] += terms["pos_sum"]
        agg["n_ev"] += terms["n_ev"]
        agg["n_pos"] += terms["n_pos"]
        pred = cache["logits"].argmax(axis=2)
        agg["correct"] += int(((pred == batch.y[sl]) & batch.valid[sl]).sum())
        total += w_ce * terms["ce_sum"] + w_pos * terms["pos_sum"]
        if compute_grads:
            g = backward(params, mcfg, cache, batch.y[sl], batch.pos[sl], w_ce, w_pos)
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
    return total, agg, grads


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_event_accuracy: float


def train(
    dataset: Sequence[LabeledSequence],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    feature_mask: np.ndarray | Sequence[bool] | None = None,
) -> tuple[InverseModel, list[EpochRecord]]:
    """Fit the inverse model on a labeled dataset.

    Splits off a validation fraction (by sequence), minimizes the weighted
    loss with seeded mini-batch gradient descent, and returns the
    best-validation checkpoint together with the per-epoch log.
    """
    if not dataset:
        raise TrainingError("dataset is empty")
    mask = np.ones(N_FEATURES, dtype=bool) if feature_mask is None else np.asarray(feature_mask, dtype=bool)
    if mask.shape != (N_FEATURES,):
        raise TrainingError(f"feature_mask needs {N_FEATURES} flags")

    present = set()
    for s in dataset:
        present |= set(np.unique(s.real_events).tolist())
    missing = set(int(e) for e in RealEvent) - present
    if missing:
        names = ", ".join(RealEvent(m).name for m in sorted(missing))
        raise TrainingError(f"dataset is missing real events: {names}")

    rng = np.random.default_rng(mcfg.seed)
    order = rng.permutation(len(dataset))
    n_val = max(1, int(round(tcfg.val_fraction * len(dataset))))
    if n_val >= len(dataset):
        raise TrainingError("dataset too small for the validation split")
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    train_seqs = [dataset[i] for i in train_idx]
    val_seqs = [dataset[i] for i in val_idx]

    normalizer = Normalizer.fit(np.concatenate([s.feat for s in train_seqs]))
    params = init_params(mcfg)
    velocity: Params = {name: np.zeros_like(p) for name, p in params.items()}

    val_batch = _pad_batch(val_seqs, normalizer, mask)
    best_val = math.inf
    best_params = {name: p.copy() for name, p in params.items()}
    best_epoch = 0
    records: list[EpochRecord] = []
    stale = 0

    for epoch in range(1, tcfg.epochs + 1):
        perm = rng.permutation(len(train_seqs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(train_seqs), tcfg.batch_size):
            chosen = [train_seqs[i] for i in perm[start : start + tcfg.batch_size]]
            batch = _pad_batch(chosen, normalizer, mask)
            loss, _, grads = _batch_pass(params, mcfg, batch, tcfg, compute_grads=True)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch}, batch {n_batches} (loss={loss}); "
                    "try a lower learning rate"
                )
            assert grads is not None
            norm = _global_norm(grads)
            if norm > tcfg.clip_norm:
                scale = tcfg.clip_norm / norm
                for g in grads.values():
                    g *= scale
            if tcfg.optimizer == "momentum":
                for name in params:
                    velocity[name] = tcfg.momentum * velocity[name] + grads[name]
                    params[name] -= tcfg.learning_rate * velocity[name]
            else:
                for name in params:
                    params[name] -= tcfg.learning_rate * grads[name]
            epoch_loss += loss
            n_batches += 1

        val_loss, val_agg, _ = _batch_pass(params, mcfg, val_batch, tcfg, compute_grads=False)
        if not math.isfinite(val_loss):
            raise TrainingError(f"validation loss diverged at epoch {epoch}")
        val_acc = val_agg["correct"] / max(val_agg["n_ev"], 1)
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=epoch_loss / max(n_batches, 1),
                val_loss=val_loss,
                val_event_accuracy=val_acc,
            )
        )
        log.info(
            "epoch %d: train %.5f, val %.5f, val acc %.4f", epoch, records[-1].train_loss, val_loss, val_acc
        )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = {name: p.copy() for name, p in params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.early_stop_patience:
                log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break

    model = InverseModel(params=best_params, config=mcfg, normalizer=normalizer, feature_mask=mask)
    return model, records
