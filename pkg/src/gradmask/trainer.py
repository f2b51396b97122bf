"""Adam minibatch training with validation-based model selection.

The Normal and Feedback pipelines share this loop; they differ only in
lambda (and in which examples still carry masks).  Everything random --
init, shuffling, batch order -- is derived from the run seed, so a run is
reproducible bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics as MT
from . import model as M
from .data import DatasetManifest
from .objective import ObjectiveConfig, objective_grads

MANIFEST_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    lam: float = 10.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    selection_metric: str = "macro_auc"
    reduction: str = "mean"
    train_window: int | None = None  # truncate train signals to this length

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.selection_metric not in ("macro_auc", "fmax"):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")
        return self

    def to_dict(self):
        d = self.__dict__.copy()
        d["seeds"] = list(self.seeds)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return TrainConfig(**d).validate()


class AdamState:
    def __init__(self, params: M.ModelParams):
        self.m = {n: np.zeros_like(params[n].data) for n in params.names()}
        self.v = {n: np.zeros_like(params[n].data) for n in params.names()}
        self.t = 0


def adam_step(params: M.ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    for name in params.names():
        g = grads[name]
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1**t)
        v_hat = state.v[name] / (1 - beta2**t)
        params[name].data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def evaluate_scores(params, model_config, examples, batch_size=256):
    """(score matrix, truth matrix) over examples, outside any graph."""
    chunks = []
    with ad.no_grad():
        for i in range(0, len(examples), batch_size):
            X = np.stack([ex.signal for ex in examples[i : i + batch_size]])
            chunks.append(M.scores(M.forward(params, model_config, X)))
    truth = np.stack([ex.labels for ex in examples])
    return MT.ScoreMatrix(np.concatenate(chunks), truth)


def _validation_metric(params, model_config, examples, which):
    sm = evaluate_scores(params, model_config, examples)
    if which == "fmax":
        return MT.fmax(sm)[0]
    return MT.macro_auc(sm).macro_auc


@dataclass
class TrainResult:
    manifest: dict
    best_params: M.ModelParams
    last_params: M.ModelParams
    model_config: M.ModelConfig


def train(
    dataset: DatasetManifest,
    model_config: M.ModelConfig,
    config: TrainConfig,
    seed: int = 0,
    out_dir=None,
    on_epoch=None,
) -> TrainResult:
    """Train one run; returns the validation-selected best checkpoint.

    ``out_dir`` (optional) receives ``manifest.json``, ``ckpt-best`` and
    ``ckpt-last``.
    """
    config.validate()
    train_full = dataset.split("train")
    val_examples = dataset.split("validation")
    if not train_full or not val_examples:
        raise TrainingError("dataset needs nonempty train and validation splits")

    train_examples = train_full
    if config.train_window is not None and config.train_window < dataset.T:
        # short training crops; validation/test stay full length
        trunc = DatasetManifest(
            list(train_full), dataset.K, list(dataset.label_names),
            dataset.L, dataset.T, dataset.sample_rate_hz,
        ).truncate(config.train_window)
        train_examples = trunc.examples

    obj_config = ObjectiveConfig(lam=config.lam, reduction=config.reduction)
    params = M.init(replace(model_config, seed=seed))
    state = AdamState(params)
    rng = np.random.default_rng(seed)

    n = len(train_examples)
    feedback_ids = sorted(
        ex.id for ex in train_examples if ex.mask is not None
    ) if config.lam > 0 else []
    epoch_losses = []
    val_trajectory = []
    best_metric, best_epoch = -np.inf, -1
    best_params = params.copy()
    started = time.time()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    try:
        for epoch in range(config.epochs):
            perm = rng.permutation(n)
            losses = []
            for lo in range(0, n, config.batch_size):
                batch = [train_examples[i] for i in perm[lo : lo + config.batch_size]]
                loss, grads = objective_grads(params, model_config, batch, obj_config)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}"
                    )
                try:
                    adam_step(
                        params, dict(zip(params.names(), grads)), state, config.lr,
                        config.beta1, config.beta2, config.eps,
                    )
                except TrainingError as e:
                    raise TrainingError(f"epoch {epoch}, batch {lo // config.batch_size}: {e}") from e
                losses.append(loss)
            epoch_losses.append(float(np.mean(losses)))

            metric = _validation_metric(params, model_config, val_examples, config.selection_metric)
            val_trajectory.append(float(metric))
            if metric > best_metric:  # ties keep the earliest epoch
                best_metric, best_epoch = metric, epoch
                best_params = params.copy()
                if out_path is not None:
                    M.save_checkpoint(
                        out_path / "ckpt-best", best_params, model_config,
                        {"epoch": epoch, "seed": seed, "lambda": config.lam},
                    )
            if on_epoch is not None:
                on_epoch(epoch, epoch_losses[-1], val_trajectory[-1])
    finally:
        if out_path is not None:
            M.save_checkpoint(
                out_path / "ckpt-last", params, model_config,
                {"epoch": len(epoch_losses) - 1, "seed": seed, "lambda": config.lam},
            )

    manifest = {
        "version": MANIFEST_VERSION,
        "train_config": config.to_dict(),
        "model_config": model_config.to_dict(),
        "seed": seed,
        "epoch_train_loss": epoch_losses,
        "validation_trajectory": val_trajectory,
        "selected_epoch": best_epoch,
        "selected_checkpoint": "ckpt-best",
        "selection_metric": config.selection_metric,
        "best_validation_metric": float(best_metric),
        "wall_clock_s": time.time() - started,
        "dataset_fingerprint": dataset.fingerprint(),
        "n_feedback": len(feedback_ids),
        "feedback_ids": feedback_ids,
    }
    if out_path is not None:
        (out_path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return TrainResult(manifest, best_params, params, model_config)
