"""Normal-vs-Feedback comparison harness and its boxplot rendering."""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics as MT
from . import model as M
from . import saliency as S
from . import trainer as TR
from .data import DatasetManifest


class ComparisonError(ValueError):
    pass


def evaluate_run(params, model_config, manifest: DatasetManifest, ground_truth: DatasetManifest | None = None):
    """Test-split Fmax, macro-AUC, and mean saliency mask overlap.

    ``ground_truth`` supplies test masks when the training manifest had
    them stripped; defaults to ``manifest`` itself.
    """
    test = manifest.split("test")
    if not test:
        raise ComparisonError("dataset has no test split")
    sm = TR.evaluate_scores(params, model_config, test)
    f, _t = MT.fmax(sm)
    auc = MT.macro_auc(sm).macro_auc

    gt = ground_truth or manifest
    overlaps = []
    for ex in gt.split("test"):
        if ex.mask is None or not ex.mask.intervals:
            continue
        # raw gradients (no smoothing): overlap measures gradient mass itself
        smap = S.compute_saliency(params, model_config, manifest.by_id(ex.id), smoothing_window=1)
        overlaps.append(S.mask_overlap(smap, ex.mask))
    return {
        "fmax": f,
        "macro_auc": auc,
        "mean_mask_overlap": float(np.mean(overlaps)) if overlaps else None,
        "n_overlap_examples": len(overlaps),
    }


def run_comparison(
    manifest: DatasetManifest,
    model_config: M.ModelConfig,
    train_config: TR.TrainConfig,
    n_seeds: int = 5,
    mask_fraction: float | None = 0.1,
    mask_seed: int = 0,
    overlap_limit: int = 50,
) -> dict:
    """Train paired Normal (lambda=0, masks stripped) and Feedback runs.

    Returns a report with per-seed metrics and arm means.  ``mask_fraction``
    keeps masks on that fraction of training examples before the Feedback
    arm trains (None = use the dataset's masks as-is).
    """
    if not any(ex.mask is not None for ex in manifest.split("train")):
        raise ComparisonError(
            "dataset has no training masks; generate synthetic data or collect feedback first"
        )
    feedback_ds = (
        manifest if mask_fraction is None else manifest.with_mask_fraction(mask_fraction, mask_seed)
    )
    # feedback arm must not peek at validation/test masks during training
    feedback_ds = feedback_ds.strip_masks("validation").strip_masks("test")
    normal_ds = manifest.strip_masks()

    gt = _overlap_subset(manifest, overlap_limit)
    runs = []
    started = time.time()
    for seed in range(n_seeds):
        normal = TR.train(normal_ds, model_config, replace(train_config, lam=0.0), seed=seed)
        feedback = TR.train(feedback_ds, model_config, train_config, seed=seed)
        runs.append(
            {
                "seed": seed,
                "normal": evaluate_run(normal.best_params, model_config, normal_ds, gt),
                "feedback": evaluate_run(feedback.best_params, model_config, feedback_ds, gt),
                "n_feedback": feedback.manifest["n_feedback"],
            }
        )

    def arm_mean(arm, key):
        vals = [r[arm][key] for r in runs if r[arm][key] is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "version": 1,
        "n_seeds": n_seeds,
        "lambda": train_config.lam,
        "mask_fraction": mask_fraction,
        "runs": runs,
        "summary": {
            arm: {k: arm_mean(arm, k) for k in ("fmax", "macro_auc", "mean_mask_overlap")}
            for arm in ("normal", "feedback")
        },
        "wall_clock_s": time.time() - started,
    }


def _overlap_subset(manifest, limit):
    """Cap how many test examples the saliency-overlap statistic visits."""
    test = [ex for ex in manifest.split("test") if ex.mask is not None and ex.mask.intervals]
    keep = {ex.id for ex in test[:limit]}
    from dataclasses import replace as _r

    return DatasetManifest(
        [ex if ex.id in keep else _r(ex, mask=None) for ex in manifest.examples],
        manifest.K, list(manifest.label_names), manifest.L, manifest.T, manifest.sample_rate_hz,
    )


# ---------------------------------------------------------------------------
# boxplot svg (self-contained, two metrics x two arms)


def _box_stats(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    return {
        "min": float(v[0]),
        "q1": float(np.percentile(v, 25)),
        "median": float(np.percentile(v, 50)),
        "q3": float(np.percentile(v, 75)),
        "max": float(v[-1]),
    }


def boxplot_svg(report: dict) -> bytes:
    metrics = ["fmax", "macro_auc"]
    arms = ["normal", "feedback"]
    colors = {"normal": "#7799cc", "feedback": "#cc6655"}
    panel_w, panel_h, margin = 280, 240, 50
    width = len(metrics) * (panel_w + margin) + margin
    height = panel_h + 2 * margin + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">'
    ]
    for mi, metric in enumerate(metrics):
        x0 = margin + mi * (panel_w + margin)
        y0 = margin
        vals = {arm: [r[arm][metric] for r in report["runs"]] for arm in arms}
        lo = min(min(v) for v in vals.values())
        hi = max(max(v) for v in vals.values())
        pad = (hi - lo) * 0.15 or 0.05
        lo, hi = lo - pad, hi + pad

        def ypix(v):
            return y0 + panel_h * (1 - (v - lo) / (hi - lo))

        parts.append(
            f'<rect x="{x0}" y="{y0}" width="{panel_w}" height="{panel_h}" '
            f'fill="none" stroke="#444"/>'
        )
        parts.append(f'<text x="{x0}" y="{y0 - 10}">{metric}</text>')
        parts.append(f'<text x="{x0 - 45}" y="{ypix(lo) + 4:.0f}">{lo:.3f}</text>')
        parts.append(f'<text x="{x0 - 45}" y="{ypix(hi) + 4:.0f}">{hi:.3f}</text>')
        for ai, arm in enumerate(arms):
            st = _box_stats(vals[arm])
            cx = x0 + panel_w * (0.3 + 0.4 * ai)
            bw = 46
            c = colors[arm]
            parts.append(
                f'<line x1="{cx:.0f}" y1="{ypix(st["min"]):.1f}" x2="{cx:.0f}" '
                f'y2="{ypix(st["max"]):.1f}" stroke="{c}"/>'
            )
            parts.append(
                f'<rect x="{cx - bw / 2:.0f}" y="{ypix(st["q3"]):.1f}" width="{bw}" '
                f'height="{max(1.0, ypix(st["q1"]) - ypix(st["q3"])):.1f}" '
                f'fill="{c}" fill-opacity="0.45" stroke="{c}"/>'
            )
            parts.append(
                f'<line x1="{cx - bw / 2:.0f}" y1="{ypix(st["median"]):.1f}" '
                f'x2="{cx + bw / 2:.0f}" y2="{ypix(st["median"]):.1f}" stroke="{c}" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{cx - bw / 2:.0f}" y="{y0 + panel_h + 18}">{arm}</text>'
            )
    parts.append("</svg>")
    return "".join(parts).encode()


def write_report(report: dict, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(report, indent=1))
    (out / "boxplot.svg").write_bytes(boxplot_svg(report))
    return out
