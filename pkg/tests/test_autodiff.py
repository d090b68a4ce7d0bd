"""Tensor, tape, primitives, optimizer and schedule."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ssmtnet.autodiff import (
    Adam, AdamState, Tensor, adam_step, backward, cosine_lr, gradcheck, no_grad, ops,
)
from ssmtnet.autodiff.tensor import Tape
from ssmtnet.errors import ContractError, DegenerateRowError, DimensionError, NumericalFault
from ssmtnet.gradsuite import primitive_cases

# high-precision (40-digit) oracle values, frozen
SOFTMAX_123 = [0.090030573170380458, 0.24472847105479765, 0.66524095577482189]
GELU_PRIME = {-1.0: -0.083315470587686298, 0.0: 0.5, 1.0: 1.0833154705876863}
ADAM_TRAJECTORY = [  # p0=(0.5,-1), lr=1e-3, wd=0.01, grads below
    [0.49899500009999999, -0.99899000005],
    [0.49807222907205489, -0.99851054201100397],
    [0.49758355652690945, -0.99890238148665773],
]
ADAM_GRADS = [[0.1, -0.2], [0.3, 0.05], [-0.1, 0.4]]

finite_floats = st.floats(-10, 10, allow_nan=False, width=32)


# ----------------------------------------------------------------------------
# Tensor and tape
# ----------------------------------------------------------------------------

class TestTensor:
    def test_shape_and_dtype(self):
        t = Tensor([[1, 2, 3], [4, 5, 6]])
        assert t.shape == (2, 3)
        assert t.data.dtype == np.float32
        assert t.data.flags.c_contiguous

    def test_scalar_keeps_zero_dims(self):
        assert Tensor(3.0).shape == ()

    def test_rejects_empty_dimension(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_finite_check_names_tensor(self):
        t = Tensor([1.0, np.nan], name="weights")
        assert not t.is_finite()
        with pytest.raises(NumericalFault, match="weights"):
            t.check_finite()


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_mean_of_square(self, rng):
        v = rng.standard_normal(7)
        x = Tensor(v, requires_grad=True)
        backward(ops.mean(ops.square(x)))
        np.testing.assert_allclose(x.grad, 2 * v / 7, rtol=1e-6)

    def test_repeated_calls_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, 3.0)))
        backward(ops.sum(ops.mul(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_shared_input_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        backward(ops.sum(ops.add(ops.mul(x, x), x)))  # d/dx (x² + x) = 2x + 1
        np.testing.assert_allclose(x.grad, [5.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(ops.mul(x, 2.0))

    def test_loss_without_grad_rejected(self):
        with pytest.raises(ContractError):
            backward(ops.sum(Tensor([1.0, 2.0])))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = ops.mul(x, 2.0)
        assert y.is_leaf and not y.requires_grad

    def test_tape_is_reverse_execution_order(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        a = ops.mul(x, 2.0)
        b = ops.sigmoid(a)
        c = ops.add(a, b)
        loss = ops.sum(c)
        nodes = list(Tape.from_output(loss))
        assert nodes == [loss, c, b, a]

    def test_linearity_of_accumulation(self, rng):
        v = rng.standard_normal((3, 4))
        w = Tensor(v, requires_grad=True)
        backward(ops.add(ops.sum(ops.square(w)), ops.mean(ops.sigmoid(w))))
        joint = w.grad.copy()
        w.grad = None
        backward(ops.sum(ops.square(w)))
        backward(ops.mean(ops.sigmoid(w)))
        np.testing.assert_allclose(joint, w.grad, rtol=1e-6, atol=1e-7)


# ----------------------------------------------------------------------------
# primitives: forward values
# ----------------------------------------------------------------------------

class TestMatmul:
    def test_identity(self, rng):
        b = rng.standard_normal((2, 2))
        np.testing.assert_allclose(ops.matmul(Tensor(np.eye(2)), Tensor(b)).data, b, rtol=1e-6)

    def test_hand_example(self):
        out = ops.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[0], [1]]))
        np.testing.assert_array_equal(out.data, [[2], [4]])

    def test_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(5, 2\)"):
            ops.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))

    def test_backward_formulas(self, rng):
        a, b = Tensor(rng.standard_normal((3, 4)), requires_grad=True), Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        g = rng.standard_normal((3, 2))
        backward(ops.sum(ops.mul(ops.matmul(a, b), Tensor(g))))
        np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-5)
        np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-5)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-7)

    def test_masked_entry_exact_zero(self):
        out = ops.softmax(Tensor([-np.inf, 0.0])).data
        assert out[0] == 0.0 and out[1] == 1.0

    def test_high_precision_oracle(self):
        np.testing.assert_allclose(ops.softmax(Tensor([1.0, 2.0, 3.0])).data, SOFTMAX_123, atol=1e-6)

    def test_all_masked_row_is_degenerate(self):
        with pytest.raises(DegenerateRowError):
            ops.softmax(Tensor([[0.0, 1.0], [-np.inf, -np.inf]]))

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=3, max_side=8), elements=finite_floats),
           st.data())
    def test_rows_are_distributions(self, x, data):
        mask = data.draw(hnp.arrays(bool, x.shape))
        mask[..., 0] = False  # keep one live entry per row
        x = np.where(mask, -np.inf, x)
        out = ops.softmax(Tensor(x), axis=-1).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)
        assert np.all(out[mask] == 0.0)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = ops.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_zero_gamma_gives_beta(self, rng):
        b = rng.standard_normal(4)
        out = ops.layer_norm(Tensor(rng.standard_normal((3, 4))), Tensor(np.zeros(4)), Tensor(b))
        np.testing.assert_allclose(out.data, np.broadcast_to(b, (3, 4)), rtol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)),
                      elements=st.floats(-100, 100, allow_nan=False)))
    def test_standardizes_rows(self, x):
        # rows need spread well above eps for unit variance
        x = x + np.arange(x.shape[1]) * 3.0
        d = x.shape[1]
        out = ops.layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data.astype(np.float64)
        np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-5)
        var = x.var(-1)
        np.testing.assert_allclose(out.var(-1), var / (var + 1e-5), atol=1e-5)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_mean(self):
        assert ops.mean(Tensor([1.0, 2.0, 3.0, 4.0])).item() == 2.5

    @pytest.mark.parametrize("x", [-1.0, 0.0, 1.0])
    def test_gelu_gradient(self, x):
        t = Tensor([x], requires_grad=True)
        backward(ops.sum(ops.gelu(t)))
        assert t.grad[0] == pytest.approx(GELU_PRIME[x], rel=1e-6, abs=1e-7)
        res = gradcheck(ops.gelu, [Tensor([x])])
        assert res[0].passed

    def test_scalar_broadcast(self):
        np.testing.assert_array_equal(ops.add(Tensor([1.0, 2.0]), 1.0).data, [2.0, 3.0])
        np.testing.assert_array_equal(ops.sub(1.0, Tensor([1.0, 2.0])).data, [0.0, -1.0])

    @pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul, ops.div])
    def test_general_broadcasting_rejected(self, op):
        with pytest.raises(DimensionError):
            op(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_relu_and_clamp(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(ops.clamp(Tensor([-1.0, 0.5, 2.0]), 0.0, 1.0).data, [0.0, 0.5, 1.0])


class TestKinkFreezing:
    def test_record_relu_and_clamp_active_sets(self):
        x = Tensor([-1.0, 0.0, 0.5, 2.0])
        with ops.record_kinks() as sets:
            ops.relu(x)
            ops.clamp(x, 0.0, 1.0)
        assert sets[0].tolist() == [False, False, True, True]
        assert sets[1].tolist() == [-1, 0, 0, 1]

    def test_recording_does_not_change_values(self):
        x = Tensor([-1.0, 0.25, 3.0])
        plain = ops.clamp(ops.relu(x), 0.0, 1.0).data
        with ops.record_kinks():
            recorded = ops.clamp(ops.relu(x), 0.0, 1.0).data
        assert np.array_equal(plain, recorded)

    def test_frozen_relu_continues_the_linear_piece(self):
        with ops.record_kinks() as sets:
            ops.relu(Tensor([0.5, -0.5]))
        with ops.frozen_kinks(sets):
            y = ops.relu(Tensor([-0.25, 0.25]))
        assert y.data.tolist() == [-0.25, 0.0]

    def test_frozen_clamp_keeps_each_side(self):
        with ops.record_kinks() as sets:
            ops.clamp(Tensor([-1.0, 0.5, 2.0]), 0.0, 1.0)
        with ops.frozen_kinks(sets):
            y = ops.clamp(Tensor([0.5, 1.5, 0.5]), 0.0, 1.0)
        assert y.data.tolist() == [0.0, 1.5, 1.0]

    def test_gradcheck_across_a_kink_when_frozen(self):
        x0 = np.array([1e-4, -1e-4, 0.3, 0.99995], np.float32)

        def fn(x):
            return ops.clamp(ops.mul(ops.relu(x), 2.0), 0.0, 2.0)

        unfrozen = gradcheck(fn, [Tensor(x0)], h=1e-3)[0]
        assert not unfrozen.passed  # the stencil straddles the kinks
        with ops.record_kinks() as sets:
            fn(Tensor(x0))

        def frozen_fn(x):
            with ops.frozen_kinks(sets):
                return fn(x)

        assert gradcheck(frozen_fn, [Tensor(x0)], h=1e-3)[0].passed

    def test_replay_mismatch_raises(self):
        with ops.record_kinks() as sets:
            ops.relu(Tensor([1.0, 2.0]))
        with pytest.raises(DimensionError), ops.frozen_kinks(sets):
            ops.relu(Tensor([1.0, 2.0, 3.0]))
        with pytest.raises(DimensionError), ops.frozen_kinks(sets):
            ops.relu(Tensor([1.0, 2.0]))
            ops.relu(Tensor([1.0, 2.0]))


class TestConv2d:
    @staticmethod
    def naive(x, w, b, stride, pad):
        """Independent loop-based cross-correlation."""
        cin, h, wd = x.shape
        cout, _, k, _ = w.shape
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
        out = np.zeros((cout, ho, wo))
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    out[o, i, j] = np.sum(xp[:, i * stride:i * stride + k, j * stride:j * stride + k] * w[o]) + b[o]
        return out

    def test_unit_kernel_is_identity(self, rng):
        x = rng.standard_normal((1, 5, 5))
        np.testing.assert_allclose(ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1)))).data, x, rtol=1e-6)

    def test_ones_kernel_interior_nine(self):
        out = ops.conv2d(Tensor(np.ones((1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), pad=1).data
        assert np.all(out[0, 1:-1, 1:-1] == 9.0)
        assert out[0, 0, 0] == 4.0

    @pytest.mark.parametrize("stride,k,size", [(1, 3, 6), (2, 3, 7), (2, 3, 8), (1, 5, 6), (2, 1, 5)])
    def test_matches_naive(self, rng, stride, k, size):
        x, w, b = rng.standard_normal((2, size, size)), rng.standard_normal((3, 2, k, k)), rng.standard_normal(3)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
        ref = self.naive(x, w, b, stride, k // 2)
        assert out.shape == ref.shape == (3, (size + 2 * (k // 2) - k) // stride + 1,) * 1 + ref.shape[2:]
        np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-5)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 7, 7))), pad=0)

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


def _bilinear_oracle(img, oh, ow):
    """Scalar align-corners bilinear interpolation."""
    h, w = img.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        y = (h - 1) / 2 if oh == 1 else i * (h - 1) / (oh - 1)
        y0 = min(int(math.floor(y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(ow):
            x = (w - 1) / 2 if ow == 1 else j * (w - 1) / (ow - 1)
            x0 = min(int(math.floor(x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


class TestResample:
    def test_constant_upsample(self):
        out = ops.resample2d(Tensor(np.full((1, 1, 2, 2), 7.0)), 4, 4).data
        assert np.all(out == 7.0)

    def test_ramp_stays_linear(self):
        ramp = np.repeat(np.arange(4.0)[:, None], 4, axis=1)[None, None]
        out = ops.resample2d(Tensor(ramp), 8, 8).data[0, 0]
        np.testing.assert_allclose(np.diff(out, axis=0), 3 / 7, rtol=1e-5)
        np.testing.assert_allclose(np.diff(out, axis=1), 0.0, atol=1e-6)

    def test_down_up_matches_scalar_oracle(self, rng):
        img = rng.standard_normal((8, 8))
        down = ops.resample2d(Tensor(img[None, None]), 3, 5)
        up = ops.resample2d(down, 8, 8).data[0, 0]
        ref = _bilinear_oracle(_bilinear_oracle(img, 3, 5), 8, 8)
        np.testing.assert_allclose(up, ref, atol=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                      elements=st.integers(0, 9).map(float)),
           st.integers(1, 12), st.integers(1, 12))
    def test_nearest_preserves_value_set(self, img, oh, ow):
        out = ops.resample2d(Tensor(img[None, None]), oh, ow, "nearest").data
        assert set(np.unique(out)) <= set(np.unique(img))


# ----------------------------------------------------------------------------
# finite differences over every primitive
# ----------------------------------------------------------------------------

_CASES = primitive_cases(np.random.default_rng(0))


@pytest.mark.parametrize("name,fn,arrays", _CASES, ids=[c[0] for c in _CASES])
def test_primitive_gradcheck(name, fn, arrays):
    assert all(max(a.shape or (1,)) <= 8 for a in arrays)
    results = gradcheck(fn, [Tensor(a) for a in arrays], h=1e-3, tol=1e-3)
    for r in results:
        assert r.passed, f"{name}: rel err {r.rel_error:.2e}"


def test_determinism_bit_identical(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))

    def run():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        y = ops.gelu(ops.conv2d(xt, wt, stride=2))
        backward(ops.mean(ops.softmax(ops.reshape(y, (2, -1)))))
        return y.data.tobytes(), xt.grad.tobytes(), wt.grad.tobytes()

    assert run() == run()


# ----------------------------------------------------------------------------
# optimizer and schedule
# ----------------------------------------------------------------------------

class TestAdam:
    def test_zero_grad_no_decay_unchanged(self):
        p = np.array([0.3, -0.7], np.float32)
        before = p.copy()
        adam_step(p, np.zeros(2, np.float32), AdamState.zeros_like(p), lr=1e-3)
        np.testing.assert_array_equal(p, before)

    def test_first_step_is_sign_times_lr(self):
        p = np.array([1.0, 1.0, 1.0], np.float32)
        g = np.array([0.5, -3.0, 1e-3], np.float32)
        adam_step(p, g, AdamState.zeros_like(p), lr=1e-2)
        np.testing.assert_allclose(1.0 - p, 1e-2 * np.sign(g), rtol=1e-4)

    def test_matches_high_precision_trajectory(self):
        p = np.array([0.5, -1.0], np.float32)
        state = AdamState.zeros_like(p)
        for g, expected in zip(ADAM_GRADS, ADAM_TRAJECTORY):
            adam_step(p, np.array(g, np.float32), state, lr=1e-3, weight_decay=0.01)
            np.testing.assert_allclose(p, expected, rtol=0, atol=2e-7)
        assert state.step == 3

    def test_quadratic_monotone_decrease(self):
        w = Tensor([1.0], requires_grad=True)
        opt = Adam([("w", w)])
        values = []
        for _ in range(10):
            opt.zero_grad()
            loss = ops.sum(ops.square(w))
            values.append(loss.item())
            backward(loss)
            opt.step(0.05)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_non_finite_grad_names_parameter(self):
        p = np.ones(2, np.float32)
        with pytest.raises(NumericalFault, match="decoder.W_q"):
            adam_step(p, np.array([np.inf, 0], np.float32), AdamState.zeros_like(p), 1e-3, name="decoder.W_q")

    def test_state_round_trip(self):
        w = Tensor(np.ones(3), requires_grad=True)
        opt = Adam([("w", w)])
        w.grad = np.full(3, 0.5, np.float32)
        opt.step(1e-3)
        arrays = {k: v.copy() for k, v in opt.state_arrays().items()}
        other = Adam([("w", Tensor(np.ones(3), requires_grad=True))])
        other.load_state_arrays(arrays)
        assert other.states["w"].step == 1
        np.testing.assert_array_equal(other.states["w"].m, opt.states["w"].m)


class TestCosine:
    def test_start_is_default_lr(self):
        assert cosine_lr(0, 100) == pytest.approx(1e-3)

    def test_end_is_min_lr(self):
        assert cosine_lr(100, 100) == pytest.approx(1e-6)

    def test_midpoint(self):
        assert cosine_lr(50, 100) == pytest.approx((1e-3 + 1e-6) / 2)

    def test_quarter(self):
        assert cosine_lr(25, 100) == pytest.approx(0.00085369983720268049, rel=1e-12)

    def test_past_end_clamps(self):
        assert cosine_lr(150, 100) == 1e-6

    @given(st.integers(0, 999))
    def test_monotone_non_increasing(self, step):
        assert cosine_lr(step + 1, 1000) <= cosine_lr(step, 1000)



class TestEndToEndSetup:
    def test_frozen_loss_and_gradient_match_the_real_ones_at_base_point(self):
        from ssmtnet.gradsuite import _end_to_end_setup

        model, frozen_loss, real_loss = _end_to_end_setup(seed=0)

        def value_and_grads(loss_fn):
            model.zero_grad()
            loss = loss_fn()
            backward(loss)
            return float(loss.data), {n: p.grad.copy() for n, p in model.named_parameters()}

        v_frozen, g_frozen = value_and_grads(frozen_loss)
        v_real, g_real = value_and_grads(real_loss)
        assert v_frozen == v_real
        assert g_frozen.keys() == g_real.keys()
        for name in g_real:
            assert np.array_equal(g_frozen[name], g_real[name]), name
