"""Scikit-learn style estimator facade over the training pipeline.

``SignalMaskClassifier`` is a multi-label classifier for (n, L, T) signal
arrays that optionally consumes per-example importance masks during fit,
penalizing input sensitivity outside them.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import metrics as MT
from . import model as M
from . import saliency as S
from . import trainer as TR
from .data import DatasetManifest, MaskSet, SignalExample


def _check_signals(X, leads=None, length=None):
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"X must have shape (n_samples, n_leads, n_samples_per_lead), got {X.shape}")
    if leads is not None and X.shape[1] != leads:
        raise ValueError(f"X has {X.shape[1]} leads, expected {leads}")
    if length is not None and X.shape[2] != length:
        raise ValueError(f"X has length {X.shape[2]}, expected {length}")
    return X


def _check_labels(y, n):
    y = check_array(y, dtype=None)
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows, X has {n}")
    vals = np.unique(y)
    if np.isin(vals, (0, 1)).all():
        y = np.where(y == 1, 1, -1)
    elif not np.isin(vals, (-1, 1)).all():
        raise ValueError("y entries must be in {-1,+1} (or {0,1})")
    return y.astype(np.int8)


class SignalMaskClassifier(BaseEstimator, ClassifierMixin):
    """Multi-label 1D-conv classifier with optional mask-penalty training.

    Parameters mirror the trainer defaults; ``lam=0`` reproduces plain
    logistic training even when masks are passed.
    """

    def __init__(
        self,
        blocks=None,
        lam=10.0,
        lr=0.002,
        batch_size=64,
        epochs=10,
        seed=0,
        selection_metric="macro_auc",
        validation_fraction=0.15,
    ):
        self.blocks = blocks
        self.lam = lam
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.selection_metric = selection_metric
        self.validation_fraction = validation_fraction

    def fit(self, X, y, masks=None):
        """Fit on signals X (n, L, T), labels y (n, K), optional masks.

        ``masks[i]`` is None, a MaskSet, or an iterable of
        (lead, start, end_exclusive) intervals.
        """
        X = _check_signals(X)
        y = _check_labels(y, X.shape[0])
        n, L, T = X.shape
        K = y.shape[1]
        if masks is not None and len(masks) != n:
            raise ValueError(f"masks has {len(masks)} entries, X has {n}")

        rng = np.random.default_rng(self.seed)
        n_val = max(1, int(round(self.validation_fraction * n)))
        if n_val >= n:
            raise ValueError("validation_fraction leaves no training data")
        val_ids = set(rng.permutation(n)[:n_val].tolist())

        examples = []
        for i in range(n):
            mask = None
            if masks is not None and masks[i] is not None:
                mask = masks[i] if isinstance(masks[i], MaskSet) else MaskSet(masks[i])
            examples.append(
                SignalExample(
                    id=f"fit-{i}",
                    signal=X[i],
                    sample_rate_hz=1.0,
                    labels=y[i],
                    mask=mask,
                    split="validation" if i in val_ids else "train",
                )
            )
        manifest = DatasetManifest(
            examples, K, [f"label_{j}" for j in range(K)], L, T, 1.0
        ).validate()

        blocks = self.blocks or (M.InceptionBlockSpec((9, 19, 39), 16),)
        model_config = M.ModelConfig(in_leads=L, n_classes=K, blocks=tuple(blocks), seed=self.seed)
        result = TR.train(
            manifest,
            model_config,
            TR.TrainConfig(
                lr=self.lr,
                batch_size=self.batch_size,
                epochs=self.epochs,
                lam=self.lam,
                selection_metric=self.selection_metric,
            ),
            seed=self.seed,
        )
        self.model_config_ = model_config
        self.params_ = result.best_params
        self.run_manifest_ = result.manifest
        self.n_features_in_ = L * T
        self.n_leads_ = L
        self.n_timesteps_ = T
        self.n_labels_ = K
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = _check_signals(X, self.n_leads_, self.n_timesteps_)
        from .autodiff import no_grad

        with no_grad():
            return M.forward(self.params_, self.model_config_, X).data

    def predict(self, X):
        return M.predict(self.decision_function(X))

    def predict_proba(self, X):
        return M.scores(self.decision_function(X))

    def score(self, X, y):
        """Macro-AUC of the fitted model on (X, y)."""
        y = _check_labels(y, np.asarray(X).shape[0])
        sm = MT.ScoreMatrix(self.predict_proba(X), y)
        return MT.macro_auc(sm).macro_auc

    def saliency_map(self, x, **kwargs):
        """Saliency for one (L, T) signal; kwargs pass to compute_saliency."""
        check_is_fitted(self, "params_")
        x = np.asarray(x, dtype=np.float64)
        ex = SignalExample(
            id="query",
            signal=x,
            sample_rate_hz=1.0,
            labels=np.full(self.n_labels_, -1, dtype=np.int8),
        )
        return S.compute_saliency(self.params_, self.model_config_, ex, **kwargs)
