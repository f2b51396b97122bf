import math

import numpy as np
import pytest

from gradmask import autodiff as ad
from gradmask import model as M
from gradmask.autodiff import Tensor
from gradmask.data import MaskSet, SignalExample, generate_synthetic, SyntheticSpec
from gradmask.objective import (
    ObjectiveConfig,
    logistic_loss,
    masked_gradient_penalty,
    multilabel_logistic,
    objective_batch,
    objective_grads,
    penalty,
)


def tiny_model():
    cfg = M.ModelConfig(in_leads=2, n_classes=2,
                        blocks=(M.ConvBlockSpec(4, 3),), seed=0)
    params = M.init(cfg)
    # nudge parameters off zero so no pre-activation sits exactly on a ReLU kink
    rng = np.random.default_rng(5)
    for name in params.names():
        params[name].data += 0.3 * rng.standard_normal(params[name].data.shape)
    return cfg, params


def example(seed=0, masked=True, L=2, T=12, K=2):
    rng = np.random.default_rng(seed)
    return SignalExample(
        id=f"e{seed}",
        signal=rng.standard_normal((L, T)),
        sample_rate_hz=100.0,
        labels=rng.choice([-1, 1], size=K).astype(np.int8),
        mask=MaskSet([(0, 2, 6)]) if masked else None,
    )


class TestLogistic:
    def test_zero_logits_ln2_per_label(self):
        logits = Tensor(np.zeros((1, 71)))
        labels = np.ones((1, 71))
        assert multilabel_logistic(logits, labels).item() == pytest.approx(
            71 * math.log(2), rel=1e-15)

    def test_sign_symmetry(self):
        logits = Tensor(np.array([[2.0, -1.0]]))
        a = multilabel_logistic(logits, np.array([[1.0, -1.0]])).item()
        b = multilabel_logistic(Tensor(-logits.data), np.array([[-1.0, 1.0]])).item()
        assert a == pytest.approx(b, rel=1e-15)

    def test_confident_correct_near_zero(self):
        logits = Tensor(np.array([[40.0]]))
        assert multilabel_logistic(logits, np.array([[1.0]])).item() < 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            multilabel_logistic(Tensor(np.zeros((1, 2))), np.zeros((2, 1)))


class TestPenaltyWorkedExample:
    """Linear single-logit model f = w.x with w=(1,2), x=(0,0), y=+1.

    d loss/dx = -sigmoid(-f) * y * w = (-0.5, -1.0) at x=0.  With the mask
    keeping coordinate 0, the penalty is lambda * (-1.0)^2.
    """

    def setup_method(self):
        self.w = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
        self.model_fn = lambda x: ad.matmul(x, self.w)  # (1,2)@(2,1) -> (1,1)

    def test_hand_value(self):
        x = Tensor(np.zeros((1, 2)), requires_grad=True)
        pen = masked_gradient_penalty(
            self.model_fn, x, np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=0.1)
        assert pen.item() == pytest.approx(0.1, rel=1e-15)

    def test_total_objective(self):
        x = Tensor(np.zeros((1, 2)), requires_grad=True)
        loss = multilabel_logistic(self.model_fn(x), np.array([[1.0]]))
        pen = masked_gradient_penalty(
            self.model_fn, x, np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=0.1)
        assert ad.add(loss, pen).item() == pytest.approx(
            math.log(2) + 0.1, rel=1e-15)

    def test_lambda_scaling_exact(self):
        x = Tensor(np.zeros((1, 2)), requires_grad=True)
        p1 = masked_gradient_penalty(
            self.model_fn, x, np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=1.0)
        p2 = masked_gradient_penalty(
            self.model_fn, x, np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=2.0)
        assert p2.item() == 2.0 * p1.item()

    def test_inside_mask_coordinates_ignored(self):
        # linear model: per-coordinate input gradients depend on x only
        # through sigmoid(-f); fix f by moving x along w's null space
        x_a = Tensor(np.array([[2.0, -1.0]]), requires_grad=True)  # f = 0
        x_b = Tensor(np.array([[-4.0, 2.0]]), requires_grad=True)  # f = 0
        args = (np.array([[1.0]]), np.array([[0.0, 1.0]]), 0.7)
        pa = masked_gradient_penalty(self.model_fn, x_a, *args[:-1], lam=args[-1])
        pb = masked_gradient_penalty(self.model_fn, x_b, *args[:-1], lam=args[-1])
        assert pa.item() == pytest.approx(pb.item(), rel=1e-14)

    def test_penalty_gradient_wrt_weights_fd(self):
        # d penalty/dw via double backward vs central finite differences
        def value(wdata):
            w = Tensor(wdata.reshape(2, 1), requires_grad=True)
            x = Tensor(np.array([[0.3, -0.2]]), requires_grad=True)
            pen = masked_gradient_penalty(
                lambda xt: ad.matmul(xt, w), x,
                np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=0.5)
            return pen

        w0 = np.array([1.0, 2.0])
        w = Tensor(w0.reshape(2, 1), requires_grad=True)
        x = Tensor(np.array([[0.3, -0.2]]), requires_grad=True)
        pen = masked_gradient_penalty(
            lambda xt: ad.matmul(xt, w), x,
            np.array([[1.0]]), np.array([[0.0, 1.0]]), lam=0.5)
        (gw,) = ad.backward(pen, [w])
        h = 1e-6
        for i in range(2):
            wp, wm = w0.copy(), w0.copy()
            wp[i] += h
            wm[i] -= h
            fd = (value(wp).item() - value(wm).item()) / (2 * h)
            assert gw.data.reshape(-1)[i] == pytest.approx(fd, abs=1e-6)


class TestPenaltyOnModel:
    def test_maskless_example_rejected(self):
        cfg, params = tiny_model()
        with pytest.raises(ValueError, match="no mask"):
            penalty(params, cfg, example(masked=False), lam=1.0)

    def test_nonnegative(self):
        cfg, params = tiny_model()
        for s in range(5):
            assert penalty(params, cfg, example(seed=s), lam=1.0).item() >= 0.0

    def test_full_mask_zero_penalty(self):
        cfg, params = tiny_model()
        ex = example()
        ex.mask = MaskSet([(0, 0, 12), (1, 0, 12)])
        assert penalty(params, cfg, ex, lam=3.0).item() == 0.0


class TestObjectiveBatch:
    def test_unmasked_batch_equals_logistic(self):
        cfg, params = tiny_model()
        batch = [example(seed=s, masked=False) for s in range(4)]
        obj = objective_batch(params, cfg, batch, ObjectiveConfig(lam=5.0, reduction="sum"))
        ref = sum(logistic_loss(params, cfg, ex).item() for ex in batch)
        assert obj.item() == pytest.approx(ref, rel=1e-12)

    def test_single_masked_decomposition(self):
        cfg, params = tiny_model()
        ex = example()
        obj = objective_batch(params, cfg, [ex], ObjectiveConfig(lam=2.0, reduction="sum"))
        ref = logistic_loss(params, cfg, ex).item() + penalty(params, cfg, ex, 2.0).item()
        assert obj.item() == pytest.approx(ref, rel=1e-12)

    def test_lambda_zero_bitwise_equals_masks_removed(self):
        cfg, params = tiny_model()
        batch = [example(seed=s, masked=(s % 2 == 0)) for s in range(6)]
        stripped = [SignalExample(ex.id, ex.signal, ex.sample_rate_hz, ex.labels, mask=None)
                    for ex in batch]
        a = objective_batch(params, cfg, batch, ObjectiveConfig(lam=0.0))
        b = objective_batch(params, cfg, stripped, ObjectiveConfig(lam=0.0))
        assert a.item() == b.item()  # bitwise

    def test_mean_reduction(self):
        cfg, params = tiny_model()
        batch = [example(seed=s, masked=False) for s in range(3)]
        s = objective_batch(params, cfg, batch, ObjectiveConfig(lam=0.0, reduction="sum"))
        m = objective_batch(params, cfg, batch, ObjectiveConfig(lam=0.0, reduction="mean"))
        assert m.item() == pytest.approx(s.item() / 3, rel=1e-15)

    def test_objective_at_least_logistic(self):
        cfg, params = tiny_model()
        batch = [example(seed=s) for s in range(4)]
        with_pen = objective_batch(params, cfg, batch, ObjectiveConfig(lam=4.0))
        without = objective_batch(params, cfg, batch, ObjectiveConfig(lam=0.0))
        assert with_pen.item() >= without.item()

    def test_empty_batch_rejected(self):
        cfg, params = tiny_model()
        with pytest.raises(ValueError, match="empty"):
            objective_batch(params, cfg, [], ObjectiveConfig())

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError, match="lambda"):
            ObjectiveConfig(lam=-1.0).validate()
        with pytest.raises(ValueError, match="reduction"):
            ObjectiveConfig(reduction="max").validate()


class TestObjectiveGradients:
    @pytest.mark.parametrize("lam", [0.0, 0.1, 1.0, 10.0])
    def test_param_gradient_matches_fd(self, lam):
        cfg, params = tiny_model()
        batch = [example(seed=s, masked=(s != 1)) for s in range(3)]
        config = ObjectiveConfig(lam=lam)
        _, grads = objective_grads(params, cfg, batch, config)
        rng = np.random.default_rng(7)
        h = 1e-5
        for name, g in zip(params.names(), grads):
            flat = params[name].data.reshape(-1)
            for idx in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                up = objective_batch(params, cfg, batch, config).item()
                flat[idx] = orig - h
                down = objective_batch(params, cfg, batch, config).item()
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                scale = max(1.0, abs(fd), abs(g.reshape(-1)[idx]))
                assert abs(g.reshape(-1)[idx] - fd) / scale < 1e-5, name
