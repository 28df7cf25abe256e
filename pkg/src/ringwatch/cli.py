"""Command-line pipeline: simulate | train | calibrate | eval | audit | serve | backfill.

Exit codes: 0 success, 2 configuration/validation errors, 1 runtime
failures. A JSON config file (--config, schema ringwatch/config/v1) may
supply any option; config values override flags so recorded configs
reproduce runs exactly.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ringwatch import __version__
from ringwatch.errors import ConfigError, RingwatchError
from ringwatch.pipeline import (
    ALL_METHODS,
    DEFAULT_METHOD,
    DEFAULT_PAIR_TARGET,
    audit_stage,
    calibrate_stage,
    eval_stage,
    load_flag_thresholds,
    simulate_stage,
    train_stage,
)
from ringwatch.simulate import GeneratorConfig

CONFIG_SCHEMA = "ringwatch/config/v1"


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict) or raw.get("schema_version") != CONFIG_SCHEMA:
        raise click.UsageError(f"config must carry schema_version={CONFIG_SCHEMA!r}")
    return {k: v for k, v in raw.items() if k != "schema_version"}


def _merged(config: dict, **flags):
    """Config file values win over flags (recorded configs reproduce runs)."""
    merged = dict(flags)
    for key, value in config.items():
        if key not in merged:
            raise click.UsageError(f"unknown config key {key!r}")
        merged[key] = value
    return merged


def _run(stage_fn, *args, **kwargs):
    try:
        result = stage_fn(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except RingwatchError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    return result


@click.group()
@click.version_option(version=__version__, prog_name="ringwatch")
def main() -> None:
    """Behavioral-biometric similarity scoring and ring detection."""


@main.command()
@click.option("--out", required=True, type=click.Path(), help="output directory")
@click.option("--users", default=500, show_default=True)
@click.option("--sessions-per-user", default=3, show_default=True)
@click.option("--separation", default=1.5, show_default=True)
@click.option("--rings", default=0, show_default=True)
@click.option("--ring-size", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--duration-ms", default=180_000, show_default=True)
@click.option("--balanced-demographics", is_flag=True,
              help="uniform gender/age distributions (fairness experiments)")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def simulate(out, users, sessions_per_user, separation, rings, ring_size, seed,
             duration_ms, balanced_demographics, config_path):
    """Generate a synthetic corpus (and ring ground truth) into --out."""
    opts = _merged(_load_config(config_path), users=users,
                   sessions_per_user=sessions_per_user, separation=separation,
                   rings=rings, ring_size=ring_size, seed=seed,
                   duration_ms=duration_ms,
                   balanced_demographics=balanced_demographics)
    kwargs = dict(
        n_users=opts["users"], sessions_per_user=opts["sessions_per_user"],
        separation=opts["separation"], n_rings=opts["rings"],
        ring_size=opts["ring_size"], seed=opts["seed"],
        duration_target_ms=opts["duration_ms"],
    )
    if opts["balanced_demographics"]:
        from ringwatch.session import AGE_BANDS, GENDERS
        kwargs["gender_dist"] = {g: 1.0 for g in GENDERS if g != "unknown"}
        kwargs["age_dist"] = {a: 1.0 for a in AGE_BANDS if a != "unknown"}
    try:
        cfg = GeneratorConfig(**kwargs)
    except RingwatchError as exc:
        raise click.UsageError(str(exc))
    result = _run(simulate_stage, out, cfg)
    click.echo(f"wrote {result['sessions']} sessions to {result['out_dir']}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--batch-users", default=32, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def train(data, out, seed, epochs, batch_users, config_path):
    """Split users and train keystroke/mouse/combined embedding models."""
    opts = _merged(_load_config(config_path), data=data, out=out, seed=seed,
                   epochs=epochs, batch_users=batch_users)
    result = _run(train_stage, opts["out"], Path(opts["data"]), seed=opts["seed"],
                  epochs=opts["epochs"], batch_users=opts["batch_users"])
    for method, history in result["losses"].items():
        click.echo(f"{method}: epoch-1 loss {history[0]:.4f} -> "
                   f"epoch-{len(history)} loss {history[-1]:.4f}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True),
              help="train-stage output directory")
@click.option("--out", required=True, type=click.Path())
@click.option("--fpr-target", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pairs", default=DEFAULT_PAIR_TARGET, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def calibrate(data, model_dir, out, fpr_target, seed, pairs, config_path):
    """Calibrate per-method thresholds at an FPR target on validation pairs."""
    opts = _merged(_load_config(config_path), data=data, model=model_dir, out=out,
                   fpr_target=fpr_target, seed=seed, pairs=pairs)
    result = _run(calibrate_stage, opts["out"], Path(opts["data"]),
                  Path(opts["model"]), fpr_target=opts["fpr_target"],
                  seed=opts["seed"], n_pairs=opts["pairs"])
    for method, value in result["thresholds"].items():
        click.echo(f"{method}: threshold {value:.6g}")


@main.command("eval")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--threshold-file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--pairs", default=DEFAULT_PAIR_TARGET, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def eval_command(data, model_dir, threshold_file, out, seed, pairs, config_path):
    """Evaluate every method on test pairs at its calibrated threshold."""
    opts = _merged(_load_config(config_path), data=data, model=model_dir,
                   threshold_file=threshold_file, out=out, seed=seed, pairs=pairs)
    result = _run(eval_stage, opts["out"], Path(opts["data"]), Path(opts["model"]),
                  Path(opts["threshold_file"]), seed=opts["seed"],
                  n_pairs=opts["pairs"])
    for report in result["reports"]:
        click.echo(f"{report['method']}: AUROC {report['auroc']:.4f} "
                   f"FPR {report['fpr']:.4f} FNR {report['fnr']:.4f}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--threshold-file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--pairs", default=DEFAULT_PAIR_TARGET, show_default=True)
@click.option("--method", default=DEFAULT_METHOD, show_default=True,
              type=click.Choice(list(ALL_METHODS)))
@click.option("--group-by", default="gender,age_band,region", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def audit(data, model_dir, threshold_file, out, seed, pairs, method, group_by,
          config_path):
    """Fairness audit: per-group TNR over negative test pairs."""
    opts = _merged(_load_config(config_path), data=data, model=model_dir,
                   threshold_file=threshold_file, out=out, seed=seed, pairs=pairs,
                   method=method, group_by=group_by)
    axes = tuple(a.strip() for a in opts["group_by"].split(",") if a.strip())
    bad = [a for a in axes if a not in ("gender", "age_band", "region")]
    if bad:
        raise click.UsageError(f"unknown group axes: {bad}")
    result = _run(audit_stage, opts["out"], Path(opts["data"]), Path(opts["model"]),
                  Path(opts["threshold_file"]), seed=opts["seed"],
                  n_pairs=opts["pairs"], method=opts["method"], group_by=axes)
    click.echo(f"overall TNR {result['report']['overall_tnr']:.4f} "
               f"over {result['report']['total_pairs']} pairs")


@main.command()
@click.option("--model", "model_file", required=True, type=click.Path(exists=True),
              help="one .rwnet model file (the production scorer)")
@click.option("--threshold-file", required=True, type=click.Path(exists=True))
@click.option("--method", default=DEFAULT_METHOD, show_default=True,
              help="which calibrated threshold to serve with")
@click.option("--addr", default="127.0.0.1:8800", show_default=True)
@click.option("--store", type=click.Path(), default=None,
              help="persistence directory (log + snapshots)")
@click.option("--data", type=click.Path(exists=True), default=None,
              help="optional sessions.jsonl (or its directory) to enroll at startup")
@click.option("--token", default=None, help="static proctor token (auth stub)")
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="static directory for the proctor UI")
@click.option("--history-window", default=None, type=int,
              help="compare only against the last N gallery entries")
def serve(model_file, threshold_file, method, addr, store, data, token, ui_dir,
          history_window):
    """Run the flagging service (HTTP API, plus UI when --ui-dir is given)."""
    import uvicorn

    from ringwatch.api import create_app
    from ringwatch.model_io import load_model
    from ringwatch.service import DetectorService
    from ringwatch.session import sessions_from_jsonl

    try:
        net = load_model(Path(model_file).read_bytes())
        thresholds = load_flag_thresholds(threshold_file)
        if method not in thresholds:
            raise ConfigError(f"no flag threshold for method {method!r}")
        service = DetectorService(net, thresholds[method].value, store_dir=store,
                                  history_window=history_window)
        if data is not None:
            data_path = Path(data)
            if data_path.is_dir():
                data_path = data_path / "sessions.jsonl"
            records = sessions_from_jsonl(data_path.read_text(encoding="utf-8"))
            records.sort(key=lambda r: (r.started_at_ms, r.session_id))
            for record in records:
                service.enroll_session(record)
            click.echo(f"preloaded {len(records)} sessions")
    except RingwatchError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    host, _, port = addr.partition(":")
    app = create_app(service, token=token, ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8800),
                log_level="warning")


@main.command()
@click.option("--store", required=True, type=click.Path(exists=True))
@click.option("--model", "model_file", required=True, type=click.Path(exists=True))
@click.option("--threshold-file", required=True, type=click.Path(exists=True))
@click.option("--method", default=DEFAULT_METHOD, show_default=True)
@click.option("--out", required=True, type=click.Path())
def backfill(store, model_file, threshold_file, method, out):
    """Re-scan the whole stored gallery pairwise and write an audit report."""
    from ringwatch.model_io import load_model
    from ringwatch.service import DetectorService

    try:
        net = load_model(Path(model_file).read_bytes())
        thresholds = load_flag_thresholds(threshold_file)
        if method not in thresholds:
            raise ConfigError(f"no flag threshold for method {method!r}")
        service = DetectorService(net, thresholds[method].value, store_dir=store)
        hits = service.backfill_audit()
        service.close()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except RingwatchError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    Path(out).write_text(json.dumps({"hits": hits}, indent=2) + "\n", encoding="utf-8")
    click.echo(f"{len(hits)} above-threshold cross-user pairs")


if __name__ == "__main__":
    main()
