"""Input-gradient interpretability maps and their blue->white->red rendering.

The map explains the model's decision set: gradients of the summed logits
of the predicted-positive labels (top-1 fallback) with respect to every
input sample, taken as magnitudes, optionally smoothed per lead, and
normalized to [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor
from .data import MaskSet, SignalExample, flatten_mask


@dataclass
class SaliencyMap:
    values: np.ndarray  # (L, T), in [0, 1]
    target_labels: tuple[int, ...]
    smoothing_window: int
    normalization: str


def compute_saliency(
    params: M.ModelParams,
    model_config: M.ModelConfig,
    example: SignalExample,
    targets=None,
    smoothing_window: int = 9,
    normalization: str = "global",
) -> SaliencyMap:
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValueError("smoothing_window must be a positive odd integer")
    if normalization not in ("global", "per_lead"):
        raise ValueError(f"unknown normalization {normalization!r}")

    x = Tensor(example.signal, requires_grad=True)
    logits = M.forward(params, model_config, x)
    if targets is None:
        positive = np.flatnonzero(logits.data > 0)
        targets = positive if positive.size else np.array([int(np.argmax(logits.data))])
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ValueError("targets must be nonempty")

    score = ad.tsum(ad.take_flat(logits, np.array(targets, dtype=np.intp)))
    (g,) = ad.backward(score, [x])
    values = np.abs(g.data)

    if smoothing_window > 1:
        kernel = np.ones(smoothing_window) / smoothing_window
        values = np.stack([np.convolve(row, kernel, mode="same") for row in values])

    if normalization == "global":
        peak = values.max()
        if peak > 0:
            values = values / peak
    else:
        peaks = values.max(axis=1, keepdims=True)
        values = np.where(peaks > 0, values / np.maximum(peaks, 1e-300), values)

    return SaliencyMap(values, targets, smoothing_window, normalization)


def mask_overlap(smap: SaliencyMap, mask: MaskSet) -> float:
    """Fraction of total saliency mass lying inside the mask."""
    L, T = smap.values.shape
    total = float(smap.values.sum())
    if total == 0:
        return 0.0
    idx = flatten_mask(mask, L, T)
    return float(smap.values.reshape(-1)[idx].sum() / total)


def heat_color(v: float) -> tuple[int, int, int]:
    """Linear blue -> white -> red ramp on [0, 1]."""
    v = min(1.0, max(0.0, float(v)))
    if v <= 0.5:
        a = v / 0.5
        return (round(255 * a), round(255 * a), 255)
    a = (v - 0.5) / 0.5
    return (255, round(255 * (1 - a)), round(255 * (1 - a)))


def to_json_bytes(smap: SaliencyMap) -> bytes:
    payload = {
        "values": smap.values.tolist(),
        "target_labels": list(smap.target_labels),
        "smoothing_window": smap.smoothing_window,
        "normalization": smap.normalization,
        "L": smap.values.shape[0],
        "T": smap.values.shape[1],
    }
    return json.dumps(payload).encode()


def from_json_bytes(raw: bytes) -> SaliencyMap:
    d = json.loads(raw)
    return SaliencyMap(
        np.asarray(d["values"], dtype=np.float64),
        tuple(d["target_labels"]),
        d["smoothing_window"],
        d["normalization"],
    )


def to_svg_bytes(smap: SaliencyMap, example: SignalExample, label_names=None) -> bytes:
    """Stacked lead panels: heat strip background, waveform polyline, colorbar."""
    L, T = smap.values.shape
    panel_w, panel_h, gap, left = 900, 80, 12, 50
    width = left + panel_w + 80
    height = L * (panel_h + gap) + 60
    cell_w = panel_w / T
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">'
    ]
    for lead in range(L):
        y0 = 20 + lead * (panel_h + gap)
        parts.append(f'<text x="4" y="{y0 + panel_h / 2:.1f}">lead {lead}</text>')
        for t in range(T):
            r, g, b = heat_color(smap.values[lead, t])
            parts.append(
                f'<rect x="{left + t * cell_w:.2f}" y="{y0}" width="{cell_w + 0.05:.2f}" '
                f'height="{panel_h}" fill="rgb({r},{g},{b})"/>'
            )
        row = example.signal[lead]
        lo, hi = row.min(), row.max()
        span = hi - lo if hi > lo else 1.0
        pts = " ".join(
            f"{left + (t + 0.5) * cell_w:.2f},{y0 + panel_h - (row[t] - lo) / span * panel_h:.2f}"
            for t in range(T)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    # colorbar legend
    bar_x = left + panel_w + 16
    for i in range(64):
        r, g, b = heat_color(i / 63)
        y = height - 60 - (i + 1) * ((height - 80) / 64)
        parts.append(
            f'<rect x="{bar_x}" y="{y:.2f}" width="14" height="{(height - 80) / 64 + 0.5:.2f}" '
            f'fill="rgb({r},{g},{b})"/>'
        )
    parts.append(f'<text x="{bar_x + 18}" y="{height - 60:.0f}">0</text>')
    parts.append(f'<text x="{bar_x + 18}" y="32">1</text>')
    names = label_names or []
    tgt = ", ".join(names[t] if t < len(names) else str(t) for t in smap.target_labels)
    parts.append(f'<text x="{left}" y="{height - 20}">targets: {tgt}</text>')
    parts.append("</svg>")
    return "".join(parts).encode()


def render(smap: SaliencyMap, example: SignalExample, format: str, label_names=None) -> bytes:
    if format == "json":
        return to_json_bytes(smap)
    if format == "svg":
        return to_svg_bytes(smap, example, label_names)
    raise ValueError(f"unknown render format {format!r}")
