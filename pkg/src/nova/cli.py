"""Command-line surface: dataset generation, training, evaluation, gradient
audit, and regularizer benchmarking.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
abort (step index on stderr), 5 checkpoint corruption, 6 failed gradient
audit. NOVA_THREADS caps worker parallelism.
"""

from __future__ import annotations

import csv
import hashlib
import os
import sys
from pathlib import Path

import click

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .synthdata import ManifestError, generate_dataset, load_manifest, split_manifest
from .trainer import AUDIT_LOSSES, NumericalAbort, audit_all_losses, build_model, run_training

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5
EXIT_AUDIT = 6


def _apply_thread_cap() -> None:
    raw = os.environ.get("NOVA_THREADS")
    if not raw:
        return
    try:
        threads = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"NOVA_THREADS must be an integer, got {raw!r}") from None
    import cv2
    import torch

    torch.set_num_threads(threads)
    cv2.setNumThreads(threads)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None, help="key=value config file")(fn)
    fn = click.option("--seed", type=int, default=None, help="override train.seed")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="nova_out", help="output directory")(fn)
    fn = click.option("--set", "overrides", multiple=True, help="override key=value (repeatable)")(fn)
    return fn


def _load(config_path, overrides, seed):
    try:
        _apply_thread_cap()
        return load_config(config_path, overrides=overrides, seed=seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


@click.group()
def cli() -> None:
    """Non-contrastive vision-language alignment toolkit."""


@cli.command()
@common_options
def generate(config_path, seed, out_dir, overrides) -> None:
    """Render the synthetic dataset and its manifest into --out."""
    cfg = _load(config_path, overrides, seed)
    try:
        spec = cfg.synthetic_spec()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = Path(out_dir)
    try:
        manifest = generate_dataset(spec, out)
    except OSError as exc:
        _fail(EXIT_DATA, str(exc))
    cfg.write_resolved(out / "resolved.cfg")
    click.echo(f"wrote {len(manifest)} samples to {out / 'manifest.csv'}")


@cli.command()
@common_options
@click.option("--manifest", "manifest_path", type=click.Path(), default=None, help="dataset manifest CSV")
@click.option("--resume", "resume_path", type=click.Path(), default=None, help="checkpoint to resume from")
def train(config_path, seed, out_dir, overrides, manifest_path, resume_path) -> None:
    """Train with the configured objective (nova, infonce, or siglip)."""
    cfg = _load(config_path, overrides, seed)
    manifest_file = manifest_path or cfg.get("data", "manifest")
    if not manifest_file:
        _fail(EXIT_CONFIG, "no dataset manifest configured (data.manifest or --manifest)")
    try:
        manifest = load_manifest(manifest_file)
        train_data, eval_data = split_manifest(
            manifest, cfg.get("data", "eval_fraction"), cfg.get("data", "seed")
        )
    except (ManifestError, OSError) as exc:
        _fail(EXIT_DATA, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "resolved.cfg")
    try:
        log, ckpt = run_training(
            cfg.model_spec(),
            cfg.train_config(),
            cfg.augment_config(),
            cfg.sigreg_config(),
            train_data,
            eval_data if len(eval_data) > 0 else None,
            out,
            config_hash=cfg.config_hash(),
            resume_from=resume_path,
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except NumericalAbort as exc:
        click.echo(f"numerical abort in term {exc.term!r} at step {exc.step}", err=True)
        sys.exit(EXIT_NUMERIC)
    except CheckpointError as exc:
        _fail(EXIT_CHECKPOINT, str(exc))
    except ValueError as exc:
        _fail(EXIT_DATA, str(exc))
    click.echo(f"trained {len(log.steps)} steps; checkpoint at {ckpt}")


@cli.command("eval")
@common_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
def eval_cmd(config_path, seed, out_dir, overrides, checkpoint_path, manifest_path) -> None:
    """Zero-shot evaluation of a checkpoint; prints macro_auc=<value> last."""
    from .trainer import apply_checkpoint_to_model
    from .zeroshot import evaluate, write_report

    cfg = _load(config_path, overrides, seed)
    manifest_file = manifest_path or cfg.get("data", "manifest")
    if not manifest_file:
        _fail(EXIT_CONFIG, "no dataset manifest configured (data.manifest or --manifest)")
    try:
        manifest = load_manifest(manifest_file)
    except (ManifestError, OSError) as exc:
        _fail(EXIT_DATA, str(exc))
    split = cfg.get("eval", "split")
    if split not in ("eval", "train", "all"):
        _fail(EXIT_CONFIG, f"eval.split must be eval, train, or all, got {split!r}")
    if split != "all":
        train_data, eval_data = split_manifest(
            manifest, cfg.get("data", "eval_fraction"), cfg.get("data", "seed")
        )
        manifest = eval_data if split == "eval" else train_data
    try:
        state = load_checkpoint(checkpoint_path)
        model = build_model(cfg.model_spec(), cfg.get("train", "seed"))
        if state.config_hash and state.config_hash != cfg.config_hash():
            click.echo("warning: checkpoint was written under a different configuration", err=True)
        apply_checkpoint_to_model(model, state)
    except CheckpointError as exc:
        _fail(EXIT_CHECKPOINT, str(exc))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, manifest, batch_size=cfg.get("eval", "batch_size"))
    ckpt_hash = hashlib.blake2b(Path(checkpoint_path).read_bytes(), digest_size=8).hexdigest()
    write_report(report, out, seed=cfg.get("train", "seed"), checkpoint_hash=ckpt_hash)
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"macro_auc={report.macro_auc}")


@cli.command()
@common_options
@click.option("--fault", type=click.Choice(AUDIT_LOSSES), default=None, help="corrupt one gradient (negative control)")
def audit(config_path, seed, out_dir, overrides, fault) -> None:
    """Finite-difference audit of all objectives and the regularizer."""
    cfg = _load(config_path, overrides, seed)
    tolerance = 1e-4
    results = audit_all_losses(seed=cfg.get("train", "seed"), tolerance=tolerance, fault=fault)
    failed = []
    for name in AUDIT_LOSSES:
        err = results[name]
        status = "ok" if err < tolerance else "FAIL"
        click.echo(f"{name}: max_rel_error={err:.3e} [{status}]")
        if err >= tolerance:
            failed.append(name)
    if failed:
        click.echo(f"audit failed for: {', '.join(failed)}", err=True)
        sys.exit(EXIT_AUDIT)


@cli.command("sigreg-bench")
@common_options
@click.option("--n", "ns", multiple=True, type=int, help="batch sizes (repeatable; default 4096 8192)")
@click.option("--d", "ds", multiple=True, type=int, help="embedding dims (repeatable; default 64)")
@click.option("--repeats", type=int, default=5)
def sigreg_bench(config_path, seed, out_dir, overrides, ns, ds, repeats) -> None:
    """Benchmark closed-form vs grid evaluation; emits a timing CSV."""
    from .bench import doubling_ratios, run_bench

    cfg = _load(config_path, overrides, seed)
    ns = sorted(ns) if ns else [4096, 8192]
    ds = sorted(ds) if ds else [64]
    if any(n < 2 for n in ns) or any(d < 1 for d in ds):
        _fail(EXIT_CONFIG, "sizes must be positive (n >= 2, d >= 1)")
    grid = cfg.sigreg_config().grid
    if grid is None:
        from .sigreg import CFGridSpec

        grid = CFGridSpec.gauss_legendre(
            n_points=cfg.get("sigreg", "grid_points"), t_max=cfg.get("sigreg", "grid_tmax")
        )
    rows = run_bench(ns, ds, grid=grid, repeats=repeats, seed=cfg.get("train", "seed"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sigreg_bench.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "d", "mode", "wall_time", "peak_extra_memory"])
        for row in rows:
            writer.writerow([row.n, row.d, row.mode, repr(row.wall_time), row.peak_extra_memory])
    values = {}
    for row in rows:
        values.setdefault((row.n, row.d), {})[row.mode] = row.value
    worst_gap = max(abs(v["closed_form"] - v["grid"]) for v in values.values())
    click.echo(f"max |closed_form - grid| over benchmarked batches: {worst_gap:.3e}")
    for mode in ("closed_form", "grid"):
        for d, n, ratio in doubling_ratios(rows, mode):
            click.echo(f"{mode}: d={d} time ratio n={n}->{2 * n}: {ratio:.2f}x")
    click.echo(f"wrote {csv_path}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
