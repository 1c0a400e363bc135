import numpy as np
import pytest

from signgraph import tensor as tz
from signgraph.tensor import (
    NonFiniteError, ShapeError, Tape, Tensor, apply_op, backward, grad_check,
    load_params, save_params,
)


class TestOps:
    def test_matmul_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        out = tz.matmul(Tensor(np.eye(3)), Tensor(a))
        assert np.array_equal(out.data, a)

    def test_matmul_hand_case(self):
        out = tz.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_relu_definition(self):
        out = tz.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_add_broadcast(self):
        out = tz.add(Tensor(np.ones((2, 3))), Tensor([1.0, 2.0, 3.0]))
        assert np.array_equal(out.data, [[2, 3, 4], [2, 3, 4]])

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul"):
            tz.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            tz.relu(Tensor([np.nan, 1.0]))
        with pytest.raises(NonFiniteError):
            tz.add(Tensor([np.inf]), Tensor([1.0]))

    def test_softmax_log_normalizes(self):
        out = tz.softmax_log(Tensor([[1.0, 2.0, 3.0]]))
        assert np.isclose(np.exp(out.data).sum(), 1.0)

    def test_max_over_axis_first_tie(self):
        x = Tensor(np.array([[2.0, 2.0, 1.0]]), requires_grad=True)
        with Tape() as tape:
            loss = tz.tsum(tz.max_over_axis(x, axis=1))
        backward(tape, loss)
        assert np.array_equal(x.grad, [[1.0, 0.0, 0.0]])

    def test_mean_over_axis(self):
        out = tz.mean_over_axis(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=0)
        assert np.array_equal(out.data, [3.0, 5.0])

    def test_gather_scatter_roundtrip(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        g = tz.gather_rows(x, [2, 0])
        assert np.array_equal(g.data, [[4, 5], [0, 1]])
        s = tz.scatter_add_rows(g, [2, 0], 3)
        assert np.array_equal(s.data, [[0, 1], [0, 0], [4, 5]])

    def test_segment_max_values_and_empty_segment(self):
        vals = Tensor(np.array([[1.0, -5.0], [3.0, -1.0], [2.0, -9.0]]))
        out = tz.segment_max(vals, [0, 0, 2], 3)
        assert np.array_equal(out.data, [[3.0, -1.0], [0.0, 0.0], [2.0, -9.0]])

    def test_conv1d_matches_manual(self):
        x = np.arange(8.0).reshape(4, 2)
        k = np.ones((3, 2, 1))
        out = tz.conv1d(Tensor(x), Tensor(k), pad=1)
        manual = [x[max(0, t - 1):t + 2].sum() for t in range(4)]
        assert np.allclose(out.data[:, 0], manual)

    def test_conv2d_stride(self):
        x = Tensor(np.ones((1, 4, 4, 1)))
        k = Tensor(np.ones((2, 2, 1, 1)))
        out = tz.strided_conv2d(x, k, stride=2)
        assert out.data.shape == (1, 2, 2, 1)
        assert np.allclose(out.data, 4.0)

    def test_apply_op_dispatch_and_unknown(self):
        out = apply_op("relu", [Tensor([-2.0, 5.0])])
        assert np.array_equal(out.data, [0.0, 5.0])
        with pytest.raises(ValueError, match="unknown kind"):
            apply_op("fft", [Tensor([1.0])])

    def test_determinism(self):
        x = Tensor(np.linspace(-1, 1, 12).reshape(3, 4))
        a = tz.softmax_log(x).data
        b = tz.softmax_log(x).data
        assert np.array_equal(a, b)


class TestBackward:
    def test_sum_grad_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = tz.tsum(x)
        backward(tape, loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = tz.tsum(x * x)
        backward(tape, loss)
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_relu_subgradient_zero_at_zero(self):
        x = Tensor([-1.0, 3.0, 0.0], requires_grad=True)
        with Tape() as tape:
            loss = tz.tsum(tz.relu(x))
        backward(tape, loss)
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_accumulation_is_linear(self):
        def grads(combined: bool):
            x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
            with Tape() as tape:
                l1 = tz.tsum(x * x)
                l2 = tz.tsum(tz.relu(x))
                if combined:
                    backward(tape, tz.add(l1, l2))
                else:
                    backward(tape, l1)
                    backward(tape, l2)
            return x.grad
        assert np.allclose(grads(True), grads(False))

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * x
            with pytest.raises(ShapeError):
                backward(tape, y)

    def test_loss_off_tape_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            tz.tsum(x)
        stray = Tensor(np.asarray(0.0))
        with pytest.raises(ValueError):
            backward(tape, stray)


class TestGradCheck:
    def test_linear_exact(self):
        rep = grad_check(lambda x: tz.tsum(x), Tensor(np.ones(4)))
        assert rep.passed and rep.max_rel_err < 1e-9

    def test_quadratic_tight_tol(self):
        rep = grad_check(lambda x: tz.tsum(x * x), Tensor([1.0, 2.0]),
                         eps=1e-5, tol=1e-6)
        assert rep.passed

    def test_wrong_gradient_fails(self):
        def f(x):
            # correct value, forward; gradient off by 1% via a hand-rigged op
            out = Tensor(np.asarray((x.data ** 2).sum()))
            return tz._record(out, (x,), lambda g: (g * 2.0 * x.data * 1.01,))
        rep = grad_check(f, Tensor([1.0, 2.0]), tol=1e-4)
        assert not rep.passed

    def test_random_small_shapes_all_ops(self):
        # 10 random shapes through a mixed computation
        rng = np.random.default_rng(7)
        for i in range(10):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(2, 5))
            w = Tensor(rng.normal(size=(m, 3)))
            x0 = rng.normal(size=(n, m))
            x0 = np.where(np.abs(x0) < 0.05, 0.2, x0)  # keep off relu kinks

            def f(x):
                return tz.tsum(tz.relu(tz.matmul(x, w)))

            assert grad_check(f, Tensor(x0)).passed


class TestSerialization:
    def test_roundtrip_byte_stable(self, tmp_path):
        rng = np.random.default_rng(3)
        params = {
            "a.w": Tensor(rng.normal(size=(2, 3))),
            "b.bias": Tensor(rng.normal(size=(4,))),
        }
        m1, b1 = tmp_path / "m1.json", tmp_path / "p1.bin"
        save_params(params, m1, b1)
        loaded = load_params(m1, b1)
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k].data, params[k].data)
        m2, b2 = tmp_path / "m2.json", tmp_path / "p2.bin"
        save_params(loaded, m2, b2)
        assert m1.read_bytes() == m2.read_bytes()
        assert b1.read_bytes() == b2.read_bytes()

    def test_truncated_binary_rejected(self, tmp_path):
        params = {"w": Tensor(np.ones((2, 2)))}
        save_params(params, tmp_path / "m.json", tmp_path / "p.bin")
        data = (tmp_path / "p.bin").read_bytes()
        (tmp_path / "p.bin").write_bytes(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_params(tmp_path / "m.json", tmp_path / "p.bin")
