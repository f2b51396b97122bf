import numpy as np
import pytest

from gradmask import autodiff as ad
from gradmask.autodiff import Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestForwardOps:
    def test_log1p_exp_at_zero(self):
        assert ad.log1p_exp(Tensor(0.0)).item() == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_log1p_exp_stable_branch(self):
        # reference: ln(1+e^50) = 50 + ln(1+e^-50) computed in extended precision
        out = ad.log1p_exp(Tensor(50.0)).item()
        assert np.isfinite(out)
        assert out == pytest.approx(50.0, abs=1e-12)
        assert 0.0 <= ad.log1p_exp(Tensor(-700.0)).item() < 1e-300

    def test_sigmoid_extremes(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5
        assert ad.sigmoid(Tensor(800.0)).item() == 1.0
        assert ad.sigmoid(Tensor(-800.0)).item() == 0.0

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_relu(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_concat_slice(self):
        a, b = Tensor(rand((2, 3))), Tensor(rand((2, 4), 1))
        c = ad.concat([a, b], axis=1)
        assert np.array_equal(ad.slice_axis(c, 1, 3, 7).data, b.data)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (g,) = ad.backward(ad.tsum(ad.square(x)), [x])
        assert g.data.tolist() == [2.0, 4.0, 6.0]

    def test_unreachable_leaf_zero(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0], requires_grad=True)
        (gx, gy) = ad.backward(ad.tsum(ad.square(x)), [x, y])
        assert gy.data.tolist() == [0.0]

    def test_nonscalar_output_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ad.ShapeError, match="scalar"):
            ad.backward(ad.square(x), [x])

    def test_double_backward_hand_value(self):
        # g = d(w x)^2/dx = 2(wx)w at w=3, x=2 -> 36; dg/dw = 4wx -> 24
        w = Tensor(3.0, requires_grad=True)
        x = Tensor(2.0, requires_grad=True)
        (g,) = ad.backward(ad.square(ad.mul(w, x)), [x], create_graph=True)
        assert g.item() == 36.0
        (dgdw,) = ad.backward(ad.tsum(g), [w])
        assert dgdw.item() == 24.0

    def test_linearity(self):
        x0 = rand(6, 3)

        def grad_of(fn):
            x = Tensor(x0, requires_grad=True)
            return ad.backward(fn(x), [x])[0].data

        f = lambda x: ad.tsum(ad.square(x))
        g = lambda x: ad.tsum(ad.mul(x, ad.sigmoid(x)))
        combo = lambda x: ad.add(ad.mul(Tensor(2.5), f(x)), ad.mul(Tensor(-1.5), g(x)))
        np.testing.assert_allclose(grad_of(combo), 2.5 * grad_of(f) - 1.5 * grad_of(g), atol=1e-12)

    def test_create_graph_first_order_identical(self):
        x0 = rand(5, 4)
        x = Tensor(x0, requires_grad=True)
        out = ad.tsum(ad.log1p_exp(ad.square(x)))
        (g1,) = ad.backward(out, [x], create_graph=False)
        x2 = Tensor(x0, requires_grad=True)
        out2 = ad.tsum(ad.log1p_exp(ad.square(x2)))
        (g2,) = ad.backward(out2, [x2], create_graph=True)
        assert np.array_equal(g1.data, g2.data)

    def test_deterministic(self):
        def run():
            x = Tensor(rand((3, 4), 9), requires_grad=True)
            w = Tensor(rand((2, 3), 10), requires_grad=True)
            out = ad.tsum(ad.sigmoid(ad.matmul(w, x)))
            return ad.backward(out, [x, w])

        a = run()
        b = run()
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


SMOOTH_OPS = {
    "add": (lambda ts: ad.tsum(ad.square(ad.add(ts[0], ts[1]))), [(3, 4), (3, 4)]),
    "add_broadcast": (lambda ts: ad.tsum(ad.square(ad.add(ts[0], ts[1]))), [(2, 3, 4), (3, 1)]),
    "mul": (lambda ts: ad.tsum(ad.square(ad.mul(ts[0], ts[1]))), [(3, 4), (3, 4)]),
    "matmul": (lambda ts: ad.tsum(ad.square(ad.matmul(ts[0], ts[1]))), [(3, 4), (4, 2)]),
    "matmul_batched": (lambda ts: ad.tsum(ad.square(ad.matmul(ts[0], ts[1]))), [(3, 4), (5, 4, 2)]),
    "sigmoid": (lambda ts: ad.tsum(ad.square(ad.sigmoid(ts[0]))), [(4, 4)]),
    "log1p_exp": (lambda ts: ad.tsum(ad.square(ad.log1p_exp(ts[0]))), [(4, 4)]),
    "square": (lambda ts: ad.tsum(ad.square(ad.square(ts[0]))), [(3, 5)]),
    "sum_axis": (lambda ts: ad.tsum(ad.square(ad.tsum(ts[0], axis=1))), [(3, 5)]),
    "mean": (lambda ts: ad.tsum(ad.square(ad.tmean(ts[0], axis=0))), [(3, 5)]),
    "global_avg_pool": (lambda ts: ad.tsum(ad.square(ad.global_avg_pool(ts[0]))), [(2, 3, 6)]),
    "slice": (lambda ts: ad.tsum(ad.square(ad.slice_axis(ts[0], 1, 1, 4))), [(3, 6)]),
    "pad": (lambda ts: ad.tsum(ad.square(ad.pad_axis(ts[0], 1, 2, 1))), [(3, 6)]),
    "concat": (lambda ts: ad.tsum(ad.square(ad.concat(ts, axis=0))), [(2, 4), (3, 4)]),
    "gather": (
        lambda ts: ad.tsum(ad.square(ad.take_flat(ts[0], np.array([[0, 2], [2, 5]])))),
        [(3, 6)],
    ),
    "scatter": (
        lambda ts: ad.tsum(ad.square(ad.scatter_flat(ts[0], np.array([1, 3, 1]), 5))),
        [(2, 3)],
    ),
    "transpose": (lambda ts: ad.tsum(ad.square(ad.matmul(ts[0], ad.transpose_last(ts[0])))), [(3, 4)]),
    "reshape": (lambda ts: ad.tsum(ad.square(ad.reshape(ts[0], (6, 2)))), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(SMOOTH_OPS))
def test_grad_check_every_op(name):
    fn, shapes = SMOOTH_OPS[name]
    worst = 0.0
    for trial in range(100):
        pts = [Tensor(rand(s, seed=1000 * trial + i)) for i, s in enumerate(shapes)]
        worst = max(worst, ad.grad_check(fn, pts))
    assert worst < 1e-7


@pytest.mark.parametrize("name", ["mul", "matmul", "sigmoid", "log1p_exp", "square", "gather"])
def test_grad_check_second_order(name):
    fn, shapes = SMOOTH_OPS[name]
    for trial in range(10):
        pts = [Tensor(rand(s, seed=77 * trial + i)) for i, s in enumerate(shapes)]
        assert ad.grad_check(fn, pts, order=2, seed=trial) < 1e-6


def test_grad_check_mixed_second_order():
    # f = sum((w x)^2) over mixed (w, x)
    fn = lambda ts: ad.tsum(ad.square(ad.matmul(ts[0], ts[1])))
    pts = [Tensor(rand((2, 3), 5)), Tensor(rand((3, 2), 6))]
    assert ad.grad_check(fn, pts, order=2) < 1e-6


def test_grad_check_polynomial_exact():
    fn = lambda ts: ad.tsum(ad.square(ts[0]))
    assert ad.grad_check(fn, [Tensor(rand(8, 3))]) < 1e-7
