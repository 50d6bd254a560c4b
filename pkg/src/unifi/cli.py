"""Command-line surface.

Verbs: simulate, synthesize-csi, extract, train, infer, eval, ablation,
rate-sweep. Every verb takes --config/--seed/--out; seeded commands write
byte-identical outputs on repeat runs (wall-clock timing is opt-in via
--timing and excluded from that guarantee).

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import AppConfig, config_fingerprint, load_config
from .csi import parse_csi_trace, synthesize_csi, write_csi_trace
from .errors import ConfigError, UnifiError
from .experiments import (
    ABLATION_SUBSETS,
    build_report,
    emit_report,
    evaluate,
    feature_mask_from_names,
    measure_latency,
    plateau_check,
    run_ablation,
    run_rate_sweep,
    write_predictions,
)
from .features import extract_sequence, parse_feature_file, write_feature_file
from .inverse import infer as run_infer
from .inverse import load_model, save_model, setting_configs, train as train_model
from .simulator import generate_dataset, parse_dataset, simulate_sequence, write_dataset


@click.group()
@click.version_option(version=__version__, prog_name="unifi")
def cli() -> None:
    """Unified multi-task Wi-Fi sensing toolkit."""


def _echo_kv(**kwargs) -> None:
    for key, value in kwargs.items():
        click.echo(f"{key}: {value}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--n", "n_sequences", type=int, default=None, help="Number of sequences (default from config).")
@click.option("--seed", type=int, default=0, show_default=True)
def simulate(config_path, out, n_sequences, seed) -> None:
    """Generate a labeled synthetic dataset."""
    app = load_config(config_path, seed=seed)
    n = n_sequences if n_sequences is not None else app.n_sequences
    _, balance = generate_dataset(n, app.sim, master_seed=seed, out=out)
    _echo_kv(sequences=n, out=out, fingerprint=config_fingerprint(app, seed=seed))
    for name, frac in balance.items():
        click.echo(f"balance {name}: {frac:.4f}")


@cli.command("synthesize-csi")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--seq-index", type=int, default=0, show_default=True, help="Sequence index within the seed.")
@click.option("--duration", type=float, default=None, help="Override sequence duration in seconds.")
@click.option(
    "--preset",
    type=click.Choice(["bare", "realistic"]),
    default="realistic",
    show_default=True,
    help="Radio realism preset used for synthesis.",
)
def synthesize_csi_cmd(config_path, out, seed, seq_index, duration, preset) -> None:
    """Simulate one trajectory and write its synthetic CSI trace."""
    from .csi import RadioConfig

    app = load_config(config_path, seed=seed)
    radio = app.radio
    if preset == "realistic" and radio.breathing_amplitude_m == 0 and radio.gain_drift_std == 0:
        base = RadioConfig.realistic()
        radio = replace(
            radio,
            breathing_amplitude_m=base.breathing_amplitude_m,
            breathing_rate_hz=base.breathing_rate_hz,
            gain_drift_std=base.gain_drift_std,
            gain_drift_tau_s=base.gain_drift_tau_s,
            body_shadow_depth=base.body_shadow_depth,
        )
    radio = replace(radio, sample_rate=app.sim.f_s, noise_seed=seed * 100003 + seq_index)
    _, artifacts = simulate_sequence(app.sim, master_seed=seed, seq_index=seq_index, duration_s=duration)
    trace = synthesize_csi(
        artifacts.traj.pos, radio, occupied=artifacts.traj.inside, speed=artifacts.traj.speed
    )
    write_csi_trace(trace, out)
    _echo_kv(frames=len(trace), out=out)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def extract(config_path, trace_path, out, seed) -> None:
    """Extract the five-slot feature sequence from a CSI trace."""
    app = load_config(config_path, seed=seed)
    trace = parse_csi_trace(trace_path)
    seq = extract_sequence(trace, app.windows, app.radio)
    write_feature_file(seq, out)
    _echo_kv(frames=len(seq), out=out)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--setting", type=click.IntRange(1, 5), default=None, help="Named model configuration.")
@click.option("--epochs", type=int, default=None)
@click.option("--arch", type=click.Choice(["attention", "recurrent"]), default=None)
@click.option("--features", "feature_names", default=None, help="Comma-separated slot names to keep.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def train(config_path, dataset_path, setting, epochs, arch, feature_names, out, seed) -> None:
    """Train the inverse model on a dataset file."""
    app = load_config(config_path, seed=seed)
    mcfg, tcfg = app.model, app.train
    if setting is not None:
        mcfg, tcfg = setting_configs(setting, seed=seed)
    else:
        mcfg = replace(mcfg, seed=seed)
    if epochs is not None:
        if epochs < 1:
            raise ConfigError("--epochs must be >= 1")
        tcfg = replace(tcfg, epochs=epochs)
    if arch is not None:
        mcfg = replace(mcfg, architecture=arch)
    mask = None
    if feature_names:
        mask = feature_mask_from_names([n.strip() for n in feature_names.split(",") if n.strip()])
    dataset = parse_dataset(dataset_path)
    model, records = train_model(dataset, mcfg, tcfg, feature_mask=mask)
    save_model(model, out)
    last = records[-1]
    _echo_kv(
        out=out,
        epochs_run=len(records),
        val_loss=f"{last.val_loss:.6f}",
        val_accuracy=f"{last.val_event_accuracy:.4f}",
    )


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def infer(model_path, features_path, out, seed) -> None:
    """Run inference over a feature file."""
    model = load_model(model_path)
    seq = parse_feature_file(features_path)
    predictions = run_infer(model, seq)
    write_predictions(predictions, out)
    _echo_kv(predictions=len(predictions), out=out)


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--timing", is_flag=True, help="Measure inference latency (makes output non-reproducible).")
def eval_cmd(model_path, dataset_path, out, seed, config_path, timing) -> None:
    """Evaluate a trained model against a labeled dataset file."""
    app = load_config(config_path, seed=seed)
    model = load_model(model_path)
    dataset = parse_dataset(dataset_path)
    result = evaluate(model, dataset)
    latency = measure_latency(model, dataset) if timing else None
    report = build_report(
        "eval",
        seed,
        config_fingerprint(app, seed=seed),
        result,
        mean_latency_s=latency,
        extra={"n_sequences": len(dataset)},
    )
    emit_report(report, out)
    _echo_kv(
        accuracy=f"{result.accuracy:.4f}",
        median_error_m="n/a" if result.median_error is None else f"{result.median_error:.3f}",
        out=out,
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def ablation(config_path, dataset_path, out_dir, seed) -> None:
    """Train one model per feature subset and emit comparative reports."""
    app = load_config(config_path, seed=seed)
    dataset = parse_dataset(dataset_path)
    fingerprint = config_fingerprint(app, seed=seed)
    results = run_ablation(dataset, app.model, app.train, seed=seed, fingerprint=fingerprint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for (name, _), result in zip(ABLATION_SUBSETS, results):
        if isinstance(result, Exception):
            failures += 1
            click.echo(f"{name}: FAILED ({result})", err=True)
            continue
        emit_report(result, out / f"ablation_{name}.jsonl")
        click.echo(f"{name}: accuracy {result.accuracy:.4f}")
    if failures:
        raise UnifiError(f"{failures} ablation subset(s) failed")


@cli.command("rate-sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n", "n_sequences", type=int, default=256, show_default=True)
@click.option("--rates", default="100,200,500,1000", show_default=True, help="Comma-separated rates in Hz.")
def rate_sweep(config_path, out, seed, n_sequences, rates) -> None:
    """Run the full pipeline per packet rate and report the error trend."""
    import json

    app = load_config(config_path, seed=seed)
    try:
        rate_list = [float(r) for r in rates.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"--rates must be comma-separated numbers, got {rates!r}") from None
    if not rate_list:
        raise ConfigError("--rates must name at least one rate")
    rows = run_rate_sweep(
        app, rates=rate_list, n_sequences=n_sequences, seed=seed, progress=lambda msg: click.echo(msg)
    )
    checks = plateau_check(rows)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "kind": "rate",
                        "rate_hz": row.rate_hz,
                        "mean_error_m": row.mean_error_m,
                        "median_error_m": row.median_error_m,
                        "accuracy": row.accuracy,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
        fh.write(json.dumps({"kind": "summary", **checks}, separators=(",", ":")) + "\n")
    _echo_kv(out=out, **checks)


def main() -> None:
    try:
        cli(standalone_mode=False)
    except UnifiError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(130)


if __name__ == "__main__":
    main()
