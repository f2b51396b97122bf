"""Command-line entry point: synth, train, eval, explain, serve, compare.

Exit codes: 0 success, 1 validation error (bad flags or malformed input),
2 runtime failure.
"""

from __future__ import annotations

import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import click

from . import experiment as X
from . import metrics as MT
from . import model as M
from . import saliency as S
from . import trainer as TR
from .data import (
    DataFormatError,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)


def _load_config_overrides(config_path, cls, flag_values):
    """Merge a JSON config file (same schema as the dataclass) under flags."""
    base = {}
    if config_path:
        base = json.loads(Path(config_path).read_text())
        allowed = {f.name for f in fields(cls)}
        unknown = set(base) - allowed
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    base.update({k: v for k, v in flag_values.items() if v is not None})
    return base


def _read_dataset(path):
    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"dataset path {path} does not exist")
    return load_dataset(p, "csv_dir" if p.is_dir() else "binary_records")


def _model_config_for(manifest, blocks_json=None, seed=0):
    if blocks_json:
        return M.ModelConfig.from_dict(json.loads(Path(blocks_json).read_text()))
    return M.ModelConfig(in_leads=manifest.L, n_classes=manifest.K, seed=seed)


@click.group()
def cli():
    """Signal-mask feedback training toolkit."""


@cli.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", default="csv_dir", type=click.Choice(["csv_dir", "binary_records"]))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--n-examples", type=int, default=None)
@click.option("--leads", "L", type=int, default=None)
@click.option("--length", "T", type=int, default=None)
@click.option("--classes", "K", type=int, default=None)
@click.option("--noise-sigma", type=float, default=None)
@click.option("--spurious-correlation", type=float, default=None)
@click.option("--seed", type=int, default=None)
def synth(out, fmt, config_path, **flags):
    """Generate a synthetic dataset with known evidence windows."""
    spec = SyntheticSpec(**_load_config_overrides(config_path, SyntheticSpec, flags))
    manifest = generate_synthetic(spec)
    save_dataset(manifest, out, fmt)
    run_manifest = {"command": "synth", "spec": spec.__dict__, "out": str(out), "format": fmt,
                    "fingerprint": manifest.fingerprint()}
    _write_run_manifest(out, run_manifest)
    click.echo(json.dumps({"examples": len(manifest.examples), "fingerprint": manifest.fingerprint()}))


def _write_run_manifest(anchor, payload):
    p = Path(str(anchor) + ".run.json") if not Path(anchor).is_dir() else Path(anchor) / "run.json"
    p.write_text(json.dumps(payload, indent=1))


@cli.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--model-config", "blocks_json", default=None, type=click.Path(exists=True))
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--train-window", type=int, default=None)
@click.option("--selection-metric", type=click.Choice(["macro_auc", "fmax"]), default=None)
@click.option("--seed", type=int, default=0)
def train(dataset, out, config_path, blocks_json, seed, **flags):
    """Train one run and write runs/<id>/{manifest,ckpt-best,ckpt-last}."""
    manifest = _read_dataset(dataset)
    tconfig = TR.TrainConfig(**_load_config_overrides(config_path, TR.TrainConfig, flags)).validate()
    model_config = _model_config_for(manifest, blocks_json, seed)
    result = TR.train(manifest, model_config, tconfig, seed=seed, out_dir=out)
    click.echo(json.dumps({
        "best_validation_metric": result.manifest["best_validation_metric"],
        "selected_epoch": result.manifest["selected_epoch"],
        "out": str(out),
    }))


@cli.command("eval")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", type=click.Choice(["train", "validation", "test"]))
@click.option("--out", default=None, type=click.Path())
def eval_cmd(dataset, checkpoint, split, out):
    """Fmax and macro-AUC of a checkpoint on one dataset split."""
    manifest = _read_dataset(dataset)
    params, model_config, _meta = M.load_checkpoint(checkpoint)
    examples = manifest.split(split)
    if not examples:
        raise click.UsageError(f"split {split!r} is empty")
    sm = TR.evaluate_scores(params, model_config, examples)
    report = MT.evaluation_report(sm, manifest.label_names)
    text = json.dumps(report, indent=1)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@cli.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--id", "example_id", required=True)
@click.option("--out", default=None, type=click.Path(), help="defaults next to the checkpoint")
@click.option("--smoothing-window", type=int, default=9)
@click.option("--normalization", default="global", type=click.Choice(["global", "per_lead"]))
def explain(dataset, checkpoint, example_id, out, smoothing_window, normalization):
    """Write saliency svg + json for one example."""
    manifest = _read_dataset(dataset)
    params, model_config, _meta = M.load_checkpoint(checkpoint)
    try:
        ex = manifest.by_id(example_id)
    except KeyError:
        raise click.UsageError(f"unknown example id {example_id!r}")
    smap = S.compute_saliency(params, model_config, ex, smoothing_window=smoothing_window,
                              normalization=normalization)
    out_dir = Path(out) if out else Path(checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"saliency-{example_id}.svg").write_bytes(
        S.render(smap, ex, "svg", manifest.label_names))
    (out_dir / f"saliency-{example_id}.json").write_bytes(S.render(smap, ex, "json"))
    click.echo(str(out_dir / f"saliency-{example_id}.svg"))


@cli.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--checkpoint", default=None, type=click.Path(exists=True))
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--data-dir", default=None, type=click.Path())
@click.option("--static-dir", default=None, type=click.Path())
def serve(dataset, checkpoint, port, host, data_dir, static_dir):
    """Run the feedback service (and the annotation UI, if bundled)."""
    import uvicorn

    from .service import create_app

    if static_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = str(bundled) if bundled.is_dir() else None
    app = create_app(dataset, checkpoint, data_dir, static_dir)
    uvicorn.run(app, host=host, port=port)


@cli.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seeds", "n_seeds", type=int, default=5)
@click.option("--lambda", "lam", type=float, default=10.0)
@click.option("--epochs", type=int, default=8)
@click.option("--batch-size", type=int, default=64)
@click.option("--mask-fraction", type=float, default=0.1)
@click.option("--model-config", "blocks_json", default=None, type=click.Path(exists=True))
def compare(dataset, out, n_seeds, lam, epochs, batch_size, mask_fraction, blocks_json):
    """Paired Normal-vs-Feedback runs with a metric boxplot."""
    manifest = _read_dataset(dataset)
    model_config = _model_config_for(manifest, blocks_json)
    tconfig = TR.TrainConfig(lam=lam, epochs=epochs, batch_size=batch_size)
    report = X.run_comparison(manifest, model_config, tconfig, n_seeds=n_seeds,
                              mask_fraction=mask_fraction)
    X.write_report(report, out)
    click.echo(json.dumps(report["summary"], indent=1))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except (DataFormatError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except Exception as e:  # runtime failure
        click.echo(f"runtime failure: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
