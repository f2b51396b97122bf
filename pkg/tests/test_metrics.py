import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradmask.metrics import (
    MacroAucReport,
    MetricError,
    ScoreMatrix,
    evaluation_report,
    fmax,
    label_auc,
    macro_auc,
    sample_f1_at,
)


def brute_fmax(scores, truth):
    """Independent oracle: scan every threshold, per-sample F1 from counts."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    best = -1.0
    for t in sorted(set(scores.reshape(-1).tolist()) | {0.0, 1.0}):
        fs = []
        for i in range(scores.shape[0]):
            true = {j for j in range(scores.shape[1]) if truth[i, j] == 1}
            if not true:
                continue
            pred = {j for j in range(scores.shape[1]) if scores[i, j] >= t}
            tp = len(pred & true)
            p = tp / len(pred) if pred else 1.0
            r = tp / len(true)
            fs.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
        best = max(best, sum(fs) / len(fs))
    return best


def brute_auc(scores, truth):
    """Independent oracle: pairwise positive-vs-negative comparison, ties half."""
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == -1]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestFmax:
    def test_worked_example(self):
        # truth [[+,+],[-,+]] with scores [[0.9,0.2],[0.4,0.8]]:
        # thresholds <= 0.2 and (0.4, 0.8] both give F1 = (1 + 2/3) / 2 = 5/6,
        # so the smallest maximizing threshold is 0
        sm = ScoreMatrix([[0.9, 0.2], [0.4, 0.8]], [[1, 1], [-1, 1]])
        f, t = fmax(sm)
        assert f == pytest.approx(5 / 6, abs=1e-12)
        assert t == 0.0
        assert sample_f1_at(sm, 0.8) == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_separation(self):
        sm = ScoreMatrix([[1.0, 0.0], [0.0, 1.0]], [[1, -1], [-1, 1]])
        assert fmax(sm)[0] == 1.0

    def test_empty_prediction_precision_one(self):
        # at threshold 1.0 nothing is predicted for the first sample
        sm = ScoreMatrix([[0.2, 0.3]], [[1, -1]])
        assert sample_f1_at(sm, 1.0) == 0.0  # P=1, R=0 -> F=0

    def test_sample_without_true_labels_skipped(self):
        with_neg = ScoreMatrix([[0.9, 0.1], [0.5, 0.5]], [[1, -1], [-1, -1]])
        only_pos = ScoreMatrix([[0.9, 0.1]], [[1, -1]])
        assert fmax(with_neg)[0] == fmax(only_pos)[0]

    def test_all_samples_negative_rejected(self):
        with pytest.raises(MetricError, match="true label"):
            fmax(ScoreMatrix([[0.5]], [[-1]]))

    def test_score_range_enforced(self):
        with pytest.raises(MetricError, match=r"\[0, 1\]"):
            ScoreMatrix([[1.5]], [[1]])
        with pytest.raises(MetricError, match="non-finite"):
            ScoreMatrix([[np.nan]], [[1]])

    def test_truth_values_enforced(self):
        with pytest.raises(MetricError, match=r"\+/-1"):
            ScoreMatrix([[0.5]], [[0]])

    def test_exhaustive_small_matrices(self):
        # every truth pattern for N=2, K=2 against a fixed score grid
        scores = np.array([[0.1, 0.6], [0.6, 0.3]])
        for bits in itertools.product((-1, 1), repeat=4):
            truth = np.array(bits).reshape(2, 2)
            if not (truth == 1).any():
                continue
            sm = ScoreMatrix(scores, truth)
            assert fmax(sm)[0] == pytest.approx(brute_fmax(scores, truth), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 4))
    def test_matches_brute_force(self, seed, n, k):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 5, size=(n, k)) / 4.0  # ties likely
        truth = rng.choice([-1, 1], size=(n, k))
        if not (truth == 1).any():
            truth[0, 0] = 1
        sm = ScoreMatrix(scores, truth)
        f, t = fmax(sm)
        assert f == pytest.approx(brute_fmax(scores, truth), abs=1e-12)
        assert sample_f1_at(sm, t) == pytest.approx(f, abs=1e-12)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.random((20, 3))
        truth = rng.choice([-1, 1], size=(20, 3))
        truth[0] = 1
        f1, _ = fmax(ScoreMatrix(scores, truth))
        f2, _ = fmax(ScoreMatrix(scores**3, truth))  # strictly monotone remap
        assert f1 == pytest.approx(f2, abs=1e-12)


class TestMacroAuc:
    def test_hand_value(self):
        # scores 0.1, 0.4, 0.35, 0.8 with truth -,-,+,+ -> AUC = 3.5/4? no:
        # pairs (0.35 vs 0.1)=1 (0.35 vs 0.4)=0 (0.8 vs 0.1)=1 (0.8 vs 0.4)=1 -> 3/4
        assert label_auc(np.array([0.1, 0.4, 0.35, 0.8]),
                         np.array([-1, -1, 1, 1])) == pytest.approx(0.75)

    def test_ties_half(self):
        assert label_auc(np.array([0.5, 0.5]), np.array([1, -1])) == 0.5

    def test_perfect_and_inverted(self):
        s = np.array([0.9, 0.8, 0.2, 0.1])
        t = np.array([1, 1, -1, -1])
        assert label_auc(s, t) == 1.0
        assert label_auc(s, -t) == 0.0

    def test_single_class_label_skipped(self):
        sm = ScoreMatrix([[0.9, 0.4], [0.1, 0.6]], [[1, 1], [-1, 1]])
        rep = macro_auc(sm)
        assert rep.skipped_labels == [1]
        assert rep.per_label == {0: 1.0}
        assert rep.macro_auc == 1.0

    def test_all_labels_degenerate_rejected(self):
        with pytest.raises(MetricError, match="positive and a negative"):
            macro_auc(ScoreMatrix([[0.9], [0.1]], [[1], [1]]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 4))
    def test_matches_brute_force(self, seed, n, k):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 5, size=(n, k)) / 4.0
        truth = rng.choice([-1, 1], size=(n, k))
        valid = [j for j in range(k)
                 if (truth[:, j] == 1).any() and (truth[:, j] == -1).any()]
        if not valid:
            truth[:, 0] = [1, -1] * (n // 2) + [1] * (n % 2)
            valid = [0]
        rep = macro_auc(ScoreMatrix(scores, truth))
        for j in valid:
            assert rep.per_label[j] == pytest.approx(
                brute_auc(scores[:, j], truth[:, j]), abs=1e-12)
        assert rep.macro_auc == pytest.approx(
            np.mean([brute_auc(scores[:, j], truth[:, j]) for j in valid]), abs=1e-12)

    def test_matches_sklearn(self):
        from sklearn.metrics import roc_auc_score

        rng = np.random.default_rng(11)
        scores = rng.random((50, 3))
        truth = rng.choice([-1, 1], size=(50, 3))
        rep = macro_auc(ScoreMatrix(scores, truth))
        ref = roc_auc_score((truth + 1) // 2, scores, average="macro")
        assert rep.macro_auc == pytest.approx(ref, abs=1e-12)


def test_evaluation_report_structure():
    sm = ScoreMatrix([[0.9, 0.2], [0.4, 0.8]], [[1, 1], [-1, 1]])
    rep = evaluation_report(sm, ["a", "b"])
    assert rep["fmax"] == pytest.approx(5 / 6)
    assert set(rep["per_label_auc"]) <= {"a", "b"}
    assert rep["n_samples"] == 2
