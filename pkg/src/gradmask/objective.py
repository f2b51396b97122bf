"""Multi-label logistic loss and the mask-regularized training objective.

An example with an importance mask contributes its logistic loss plus
lambda * sum over out-of-mask input coordinates of the squared gradient of
that loss with respect to the input.  The penalty's parameter gradient is
exact: the input gradient is computed with ``create_graph=True`` and
differentiated again, never approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor
from .data import SignalExample, flatten_mask


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 10.0  # penalty weight; 0 disables the penalty (Normal baseline)
    reduction: str = "mean"

    def validate(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        return self


def multilabel_logistic(logits: Tensor, labels) -> Tensor:
    """sum_j ln(1 + exp(-y_j f_j)), summed over the batch if batched."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ad.ShapeError(f"labels shape {y.shape} != logits shape {logits.shape}")
    return ad.tsum(ad.log1p_exp(ad.mul(Tensor(-y), logits)))


def masked_gradient_penalty(model_fn, x: Tensor, labels, complement, lam: float) -> Tensor:
    """lambda * sum of squared d(loss)/dx over coordinates where complement == 1.

    ``model_fn`` maps an input tensor to logits; ``complement`` is a 0/1
    array of x's shape (1 = outside the mask).  Differentiable w.r.t. any
    parameters captured by ``model_fn``.
    """
    loss = multilabel_logistic(model_fn(x), labels)
    (g,) = ad.backward(loss, [x], create_graph=True)
    gated = ad.mul(g, Tensor(np.asarray(complement, dtype=np.float64)))
    return ad.mul(Tensor(float(lam)), ad.tsum(ad.square(gated)))


def logistic_loss(params: M.ModelParams, model_config: M.ModelConfig, example: SignalExample) -> Tensor:
    return multilabel_logistic(M.forward(params, model_config, example.signal), example.labels)


def penalty(params: M.ModelParams, model_config: M.ModelConfig, example: SignalExample, lam: float) -> Tensor:
    if example.mask is None:
        raise ValueError(
            f"example {example.id} has no mask; maskless examples take logistic_loss only"
        )
    L, T = example.signal.shape
    comp = np.ones(L * T)
    comp[flatten_mask(example.mask, L, T)] = 0.0
    x = Tensor(example.signal, requires_grad=True)
    return masked_gradient_penalty(
        lambda xt: M.forward(params, model_config, xt), x, example.labels, comp.reshape(L, T), lam
    )


def objective_batch(
    params: M.ModelParams,
    model_config: M.ModelConfig,
    batch: list[SignalExample],
    config: ObjectiveConfig,
) -> Tensor:
    """Eq.-style two-part objective over a minibatch.

    The logistic term runs over the whole batch in its given order; masked
    examples additionally contribute the out-of-mask gradient penalty.
    With lam == 0 the penalty pass is skipped entirely, so the result is
    bitwise identical to the same batch with masks removed.
    """
    if not batch:
        raise ValueError("empty batch")
    config.validate()
    X = np.stack([ex.signal for ex in batch])
    Y = np.stack([ex.labels for ex in batch]).astype(np.float64)
    total = multilabel_logistic(M.forward(params, model_config, X), Y)

    if config.lam > 0:
        masked = [ex for ex in batch if ex.mask is not None]
        if masked:
            L, T = masked[0].signal.shape
            Xm = Tensor(np.stack([ex.signal for ex in masked]), requires_grad=True)
            Ym = np.stack([ex.labels for ex in masked]).astype(np.float64)
            comp = np.ones((len(masked), L * T))
            for i, ex in enumerate(masked):
                comp[i, flatten_mask(ex.mask, L, T)] = 0.0
            pen = masked_gradient_penalty(
                lambda xt: M.forward(params, model_config, xt),
                Xm,
                Ym,
                comp.reshape(len(masked), L, T),
                config.lam,
            )
            total = ad.add(total, pen)

    if config.reduction == "mean":
        total = ad.mul(total, Tensor(1.0 / len(batch)))
    return total


def objective_grads(params, model_config, batch, config):
    """(objective value, gradient arrays aligned with params.names())."""
    loss = objective_batch(params, model_config, batch, config)
    grads = ad.backward(loss, params.leaves())
    return loss.item(), [g.data for g in grads]
