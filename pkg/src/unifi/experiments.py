"""Experiment orchestration: train/evaluate runs, ablations, rate sweeps, reports.

Every run is seeded end to end and stamps its report with a fingerprint of
the full configuration, so repeating a command reproduces the output files
byte for byte. Wall-clock measurements are opt-in and excluded from that
contract.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import AppConfig, config_fingerprint
from .domain import FEATURE_SLOT_NAMES, N_FEATURES, RealEvent, event_name
from .errors import ConfigError, DataError, EvaluationError
from .inverse import InverseModel, ModelConfig, TrainConfig, train
from .metrics import ConfusionMatrix, ErrorCdf, score_events, score_tracking
from .simulator import LabeledSequence, SimulatorConfig, generate_dataset
from .inverse.training import EpochRecord

log = logging.getLogger(__name__)

SWEEP_RATES = (100.0, 200.0, 500.0, 1000.0)

ABLATION_SUBSETS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("corr_short", ("corr_s",)),
    ("corr_dser_short", ("corr_s", "dser_s")),
    ("all_features", FEATURE_SLOT_NAMES),
)


def feature_mask_from_names(names: Sequence[str]) -> np.ndarray:
    mask = np.zeros(N_FEATURES, dtype=bool)
    for name in names:
        try:
            mask[FEATURE_SLOT_NAMES.index(name)] = True
        except ValueError:
            raise ConfigError(f"unknown feature slot {name!r}; slots are {FEATURE_SLOT_NAMES}") from None
    if not mask.any():
        raise ConfigError("feature subset must keep at least one slot")
    return mask


def split_dataset(
    dataset: Sequence[LabeledSequence], test_fraction: float, seed: int
) -> tuple[list[LabeledSequence], list[LabeledSequence]]:
    """Deterministic by-sequence split into (train, test)."""
    if not (0 < test_fraction < 1):
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    if n_test >= len(dataset):
        raise DataError("dataset too small to split")
    test_idx = set(order[:n_test].tolist())
    train_set = [dataset[i] for i in range(len(dataset)) if i not in test_idx]
    test_set = [dataset[i] for i in range(len(dataset)) if i in test_idx]
    return train_set, test_set


@dataclass(frozen=True)
class EvalResult:
    confusion: ConfusionMatrix
    accuracy: float
    cdf: ErrorCdf | None

    @property
    def median_error(self) -> float | None:
        return self.cdf.median if self.cdf is not None else None

    @property
    def p90_error(self) -> float | None:
        return self.cdf.p90 if self.cdf is not None else None

    @property
    def mean_error(self) -> float | None:
        return self.cdf.mean if self.cdf is not None else None


def evaluate(model: InverseModel, test_seqs: Sequence[LabeledSequence]) -> EvalResult:
    """Score events on every valid frame and tracking where presence agrees."""
    truths, preds = [], []
    err_truth, err_pred, err_mask = [], [], []
    for seq in test_seqs:
        probs, pos, valid = model.predict_arrays(seq.feat)
        pred_events = probs.argmax(axis=1)
        truths.append(seq.real_events[valid])
        preds.append(pred_events[valid])
        both_present = (
            valid
            & (seq.real_events != RealEvent.ABSENCE.value)
            & (pred_events != RealEvent.ABSENCE.value)
        )
        err_truth.append(seq.pos)
        err_pred.append(pos)
        err_mask.append(both_present)
    confusion, accuracy = score_events(np.concatenate(truths), np.concatenate(preds))
    mask = np.concatenate(err_mask)
    cdf = None
    if mask.any():
        cdf = score_tracking(np.concatenate(err_truth), np.concatenate(err_pred), mask)
    return EvalResult(confusion=confusion, accuracy=accuracy, cdf=cdf)


def measure_latency(model: InverseModel, seqs: Sequence[LabeledSequence], n_samples: int = 1000) -> float:
    """Mean wall-clock seconds per single-frame prediction with full context.

    Each sample presents the model with one new frame plus its context window,
    the way a streaming deployment would.
    """
    ctx = model.config.context
    feats = np.concatenate([s.feat for s in seqs])
    ok = ~np.isnan(feats).any(axis=1)
    feats = feats[ok]
    if feats.shape[0] < 2:
        raise EvaluationError("not enough frames to measure latency")
    n_samples = min(n_samples, feats.shape[0])
    start = time.perf_counter()
    for i in range(n_samples):
        lo = max(0, i + 1 - ctx)
        model.predict_arrays(feats[lo : i + 1])
    return (time.perf_counter() - start) / n_samples


@dataclass(frozen=True)
class ExperimentReport:
    """Everything one experiment cell produces, ready for emission."""

    name: str
    seed: int
    fingerprint: str
    accuracy: float
    confusion: ConfusionMatrix
    cdf: ErrorCdf | None
    median_error_m: float | None
    p90_error_m: float | None
    mean_error_m: float | None
    mean_latency_s: float | None
    extra: Mapping[str, object]

    def per_class(self) -> dict[str, dict[str, float]]:
        return {
            event_name(e): {
                "precision": self.confusion.precision(e),
                "recall": self.confusion.recall(e),
            }
            for e in RealEvent
        }


def build_report(
    name: str,
    seed: int,
    fingerprint: str,
    result: EvalResult,
    mean_latency_s: float | None = None,
    extra: Mapping[str, object] | None = None,
) -> ExperimentReport:
    return ExperimentReport(
        name=name,
        seed=seed,
        fingerprint=fingerprint,
        accuracy=result.accuracy,
        confusion=result.confusion,
        cdf=result.cdf,
        median_error_m=result.median_error,
        p90_error_m=result.p90_error,
        mean_error_m=result.mean_error,
        mean_latency_s=mean_latency_s,
        extra=dict(extra or {}),
    )


def run_experiment(
    dataset: Sequence[LabeledSequence],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    *,
    name: str = "experiment",
    feature_mask: np.ndarray | None = None,
    test_fraction: float = 0.2,
    seed: int = 0,
    fingerprint: str = "",
) -> tuple[InverseModel, ExperimentReport, list[EpochRecord]]:
    """Split, train, and evaluate one configuration."""
    train_set, test_set = split_dataset(dataset, test_fraction, seed)
    model, records = train(train_set, mcfg, tcfg, feature_mask=feature_mask)
    result = evaluate(model, test_set)
    report = build_report(
        name,
        seed,
        fingerprint,
        result,
        extra={
            "architecture": mcfg.architecture,
            "n_train_sequences": len(train_set),
            "n_test_sequences": len(test_set),
            "epochs_run": len(records),
        },
    )
    return model, report, records


def run_ablation(
    dataset: Sequence[LabeledSequence],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    subsets: Sequence[tuple[str, Sequence[str]]] = ABLATION_SUBSETS,
    *,
    test_fraction: float = 0.2,
    seed: int = 0,
    fingerprint: str = "",
) -> list[ExperimentReport | Exception]:
    """Train one model per feature subset on identical splits and seeds.

    A failing subset yields its exception in place of a report; the other
    subsets still run.
    """
    if not subsets:
        raise ConfigError("ablation needs at least one feature subset")
    out: list[ExperimentReport | Exception] = []
    for name, slot_names in subsets:
        try:
            mask = feature_mask_from_names(slot_names)
            _, report, _ = run_experiment(
                dataset,
                mcfg,
                tcfg,
                name=f"ablation/{name}",
                feature_mask=mask,
                test_fraction=test_fraction,
                seed=seed,
                fingerprint=fingerprint,
            )
            report = replace(report, extra={**report.extra, "slots": list(slot_names)})
            out.append(report)
        except DataError as exc:
            log.error("ablation subset %s failed: %s", name, exc)
            out.append(exc)
    return out


def sweep_simulator_config(base: SimulatorConfig, rate: float) -> SimulatorConfig:
    """Per-rate simulator config with a rate-invariant per-second turn hazard."""
    ref = 100.0
    p_ref = base.kin.turn_prob
    turn = 1.0 - (1.0 - p_ref) ** (ref / rate)
    return replace(base, f_s=rate, kin=replace(base.kin, turn_prob=turn))


@dataclass(frozen=True)
class RateSweepRow:
    rate_hz: float
    mean_error_m: float
    median_error_m: float
    accuracy: float


def run_rate_sweep(
    app: AppConfig,
    *,
    rates: Sequence[float] = SWEEP_RATES,
    n_sequences: int = 256,
    seed: int = 0,
    test_fraction: float = 0.25,
    progress: Callable[[str], None] | None = None,
) -> list[RateSweepRow]:
    """Full pipeline per packet rate; identical seeds keep cells comparable."""
    rows: list[RateSweepRow] = []
    for rate in rates:
        sim_cfg = sweep_simulator_config(app.sim, float(rate))
        dataset, _ = generate_dataset(n_sequences, sim_cfg, master_seed=seed)
        _, report, _ = run_experiment(
            dataset,
            app.model,
            app.train,
            name=f"rate/{rate:g}Hz",
            test_fraction=test_fraction,
            seed=seed,
            fingerprint=config_fingerprint(app, seed=seed),
        )
        if report.mean_error_m is None:
            raise EvaluationError(f"rate sweep cell {rate} Hz produced no tracking frames")
        rows.append(
            RateSweepRow(
                rate_hz=float(rate),
                mean_error_m=report.mean_error_m,
                median_error_m=report.median_error_m or math.nan,
                accuracy=report.accuracy,
            )
        )
        if progress is not None:
            progress(f"rate {rate:g} Hz: mean error {rows[-1].mean_error_m:.3f} m")
    return rows


def plateau_check(rows: Sequence[RateSweepRow], tolerance: float = 0.05) -> dict[str, bool]:
    """Trend checks: non-increasing within tolerance, and a high-rate plateau."""
    by_rate = sorted(rows, key=lambda r: r.rate_hz)
    monotone = all(
        by_rate[i + 1].mean_error_m <= by_rate[i].mean_error_m + tolerance for i in range(len(by_rate) - 1)
    )
    plateau = True
    rates = {r.rate_hz: r.mean_error_m for r in by_rate}
    if 500.0 in rates and 1000.0 in rates:
        plateau = abs(rates[1000.0] - rates[500.0]) <= tolerance
    return {"monotone_within_tolerance": monotone, "plateau_beyond_500hz": plateau}


# --------------------------------------------------------------------------
# Report emission
# --------------------------------------------------------------------------


def emit_report(report: ExperimentReport, dest) -> None:
    """Write the line-delimited report: meta, confusion, CDF points, summary."""
    if report.confusion.total == 0:
        raise EvaluationError("refusing to emit an empty report")
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest

    def emit(rec: dict) -> None:
        fh.write(json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n")

    try:
        emit({"kind": "meta", "name": report.name, "seed": report.seed, "fingerprint": report.fingerprint})
        for e in RealEvent:
            emit(
                {
                    "kind": "confusion",
                    "true": event_name(e),
                    "counts": [int(v) for v in report.confusion.counts[e.value]],
                }
            )
        for cls, stats in report.per_class().items():
            emit({"kind": "per_class", "event": cls, **{k: float(v) for k, v in stats.items()}})
        if report.cdf is not None:
            for x, p in report.cdf.points():
                emit({"kind": "cdf_point", "x": x, "p": p})
        summary = {
            "kind": "summary",
            "accuracy": report.accuracy,
            "median_error_m": report.median_error_m,
            "p90_error_m": report.p90_error_m,
            "mean_error_m": report.mean_error_m,
            "mean_latency_s": report.mean_latency_s,
        }
        for key, value in report.extra.items():
            summary[f"extra_{key}"] = value
        emit(summary)
    except OSError as exc:
        raise DataError(f"cannot write report to {dest}: {exc}") from None
    finally:
        if own:
            fh.close()


def write_predictions(predictions, dest) -> None:
    """Line-delimited inference output: one record per predicted frame."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for p in predictions:
            rec = {
                "idx": p.index,
                "event": int(p.event.value),
                "probs": [float(v) for v in p.event_probs],
                "pos": None if p.pos is None else [p.pos[0], p.pos[1]],
                "conf": p.confidence,
            }
            fh.write(json.dumps(rec, separators=(",", ":"), allow_nan=False) + "\n")
    finally:
        if own:
            fh.close()
