import numpy as np
import pytest

from spexplus import tensor as tc
from spexplus.tensor import (
    AutodiffError,
    NonFiniteError,
    Tensor,
    backward,
    conv1d,
    conv1d_transpose,
    kernels,
    max_pool1d,
    mul,
    no_grad,
    relu,
    set_debug_checks,
    softmax,
    sum_all,
)
from spexplus.tensor import _kernels_np as np_impl


class TestElementwise:
    def test_mul_values(self):
        out = mul(Tensor([1.0, 2.0, 3.0]), Tensor([4.0, 5.0, 6.0]))
        assert np.array_equal(out.data, [4.0, 10.0, 18.0])

    def test_zero_mask_absorbs(self):
        y = Tensor(np.random.default_rng(0).normal(size=(4, 9)).astype(np.float32))
        out = mul(Tensor(np.zeros((4, 9), dtype=np.float32)), y)
        assert np.all(out.data == 0)

    def test_grad_of_sum_mul(self):
        a = Tensor([1.0, 1.0], requires_grad=True)
        b = Tensor([2.0, 3.0])
        backward(sum_all(mul(a, b)))
        assert np.allclose(a.grad, [2.0, 3.0])

    def test_column_broadcast_over_time(self):
        x = Tensor(np.ones((3, 4), dtype=np.float32))
        col = Tensor(np.array([[1.0], [2.0], [3.0]], dtype=np.float32))
        out = tc.add(x, col)
        assert out.shape == (3, 4)
        assert np.allclose(out.data[2], 4.0)

    def test_bad_broadcast_rejected(self):
        x = Tensor(np.ones((3, 4), dtype=np.float32))
        with pytest.raises(AutodiffError):
            tc.add(x, Tensor(np.ones((4, 1), dtype=np.float32)))
        with pytest.raises(AutodiffError):
            tc.add(x, Tensor(np.ones(4, dtype=np.float32)))

    def test_dtype_mismatch_rejected(self):
        with pytest.raises(AutodiffError):
            tc.add(Tensor(np.ones(3, dtype=np.float32)),
                   Tensor(np.ones(3, dtype=np.float64)))


class TestConv:
    def test_hand_convolution(self):
        x = Tensor(np.array([[1.0, 2, 3, 4, 5]], dtype=np.float32))
        w = Tensor(np.ones((1, 1, 2), dtype=np.float32))
        assert np.array_equal(conv1d(x, w).data, [[3.0, 5, 7, 9]])

    def test_hand_convolution_dilated(self):
        x = Tensor(np.array([[1.0, 2, 3, 4, 5]], dtype=np.float32))
        w = Tensor(np.ones((1, 1, 2), dtype=np.float32))
        assert np.array_equal(conv1d(x, w, dilation=2).data, [[4.0, 6, 8]])

    def test_frame_count_at_8khz(self):
        # 4 s at 8 kHz with a 2.5 ms filter and half-filter stride
        x = Tensor(np.zeros((1, 32000), dtype=np.float32))
        w = Tensor(np.zeros((8, 1, 20), dtype=np.float32))
        assert conv1d(x, w, stride=10).shape == (8, 3199)

    def test_frame_formula_matrix(self, rng):
        for _ in range(40):
            T = int(rng.integers(30, 200))
            L = int(rng.integers(1, 12))
            stride = int(rng.integers(1, 5))
            dilation = int(rng.integers(1, 4))
            span = (L - 1) * dilation + 1
            if span > T:
                continue
            x = Tensor(rng.normal(size=(2, T)).astype(np.float32))
            w = Tensor(rng.normal(size=(3, 2, L)).astype(np.float32))
            K = conv1d(x, w, stride=stride, dilation=dilation).shape[1]
            assert K == (T - span) // stride + 1

    def test_kernel_span_exceeds_input(self):
        x = Tensor(np.zeros((1, 5), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 4), dtype=np.float32))
        with pytest.raises(AutodiffError):
            conv1d(x, w, dilation=2)
        # but padding can make it fit
        assert conv1d(x, w, dilation=2, pad=(1, 1)).shape == (1, 1)

    def test_non_positive_stride_rejected(self):
        x = Tensor(np.zeros((1, 5), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 2), dtype=np.float32))
        with pytest.raises(AutodiffError):
            conv1d(x, w, stride=0)
        with pytest.raises(AutodiffError):
            conv1d(x, w, dilation=0)


class TestConvTranspose:
    def test_overlap_add_by_hand(self):
        x = Tensor(np.array([[1.0, 1.0]], dtype=np.float32))
        w = Tensor(np.ones((1, 1, 2), dtype=np.float32))
        assert np.array_equal(conv1d_transpose(x, w, stride=1).data, [[1.0, 2.0, 1.0]])

    def test_zero_input_zero_output(self):
        x = Tensor(np.zeros((3, 7), dtype=np.float32))
        w = Tensor(np.ones((3, 1, 4), dtype=np.float32))
        assert np.all(conv1d_transpose(x, w, stride=2).data == 0)

    def test_length_inverts_encoder_frames(self):
        x = Tensor(np.zeros((2, 3199), dtype=np.float32))
        w = Tensor(np.zeros((2, 1, 20), dtype=np.float32))
        assert conv1d_transpose(x, w, stride=10).shape == (1, 32000)

    def test_adjoint_of_conv1d(self, rng):
        # <conv(x), y> == <x, transpose(y)> for matching stride/kernel
        for stride, L, K in ((1, 4, 9), (3, 5, 6), (10, 20, 31)):
            T = (K - 1) * stride + L
            x = rng.normal(size=(1, T)).astype(np.float64)
            w = Tensor(rng.normal(size=(6, 1, L)).astype(np.float64))
            y = rng.normal(size=(6, K)).astype(np.float64)
            lhs = float(np.sum(conv1d(Tensor(x), w, stride=stride).data * y))
            rhs = float(np.sum(x * conv1d_transpose(Tensor(y), w, stride=stride).data))
            assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(lhs))


class TestActivationsAndReductions:
    def test_relu(self):
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_max_pool_values(self):
        out = max_pool1d(Tensor(np.array([[1.0, 9, 2, 3, 1, 1]], dtype=np.float32)))
        assert np.array_equal(out.data, [[9.0, 3.0]])

    def test_max_pool_short_axis_rejected(self):
        with pytest.raises(AutodiffError):
            max_pool1d(Tensor(np.ones((2, 2), dtype=np.float32)), 3, 3)

    def test_max_pool_output_length(self, rng):
        for T in range(3, 40):
            x = Tensor(rng.normal(size=(2, T)).astype(np.float32))
            assert max_pool1d(x, 3, 3).shape[1] == T // 3

    def test_softmax_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 0.25)
        assert abs(float(out.data.sum()) - 1.0) < 1e-6


class TestBackwardContract:
    def test_linear_case(self):
        w = Tensor([1.5, -2.0], requires_grad=True)
        x = Tensor([3.0, 4.0])
        backward(sum_all(mul(w, x)))
        assert np.allclose(w.grad, x.data)

    def test_double_backward_rejected(self):
        a = Tensor([1.0], requires_grad=True)
        loss = sum_all(mul(a, a))
        backward(loss)
        with pytest.raises(AutodiffError):
            backward(loss)

    def test_non_scalar_loss_rejected(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(AutodiffError):
            backward(mul(a, a))

    def test_disconnected_loss_rejected(self):
        with pytest.raises(AutodiffError):
            backward(Tensor([1.0]))

    def test_no_grad_records_nothing(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = sum_all(mul(a, a))
        assert not out.requires_grad

    def test_grad_accumulates_across_uses(self):
        a = Tensor([2.0], requires_grad=True)
        backward(sum_all(mul(a, a)))  # d(a^2)/da = 2a
        assert np.allclose(a.grad, [4.0])


class TestDeterminismAndDebug:
    def test_bitwise_deterministic_forward(self):
        def run():
            r = np.random.default_rng(7)
            x = Tensor(r.normal(size=(3, 50)).astype(np.float32))
            w = Tensor(r.normal(size=(4, 3, 5)).astype(np.float32))
            return conv1d(x, w, stride=2, pad=(1, 2)).data.tobytes()

        assert run() == run()

    def test_debug_mode_catches_non_finite(self):
        set_debug_checks(True)
        try:
            with pytest.raises(NonFiniteError):
                tc.log(Tensor([-1.0]))
        finally:
            set_debug_checks(False)


@pytest.mark.skipif(kernels.backend() != "cython",
                    reason="compiled extension not built")
class TestBackendParity:
    """The compiled kernels must agree with the numpy fallback."""

    CASES = [
        dict(Cin=3, T=40, Cout=5, L=4, stride=2, dilation=1, groups=1),
        dict(Cin=4, T=64, Cout=4, L=3, stride=1, dilation=4, groups=4),
        dict(Cin=6, T=33, Cout=8, L=5, stride=3, dilation=2, groups=2),
        dict(Cin=1, T=100, Cout=7, L=9, stride=4, dilation=1, groups=1),
    ]

    def _close(self, a, b):
        return np.abs(a - b).max() <= 1e-4 * max(1.0, np.abs(a).max())

    @pytest.mark.parametrize("case", CASES)
    def test_all_primitives_agree(self, case, rng):
        from spexplus.tensor import _convkernels as cy_impl

        Cin, T, Cout = case["Cin"], case["T"], case["Cout"]
        L, stride, dilation, groups = (case["L"], case["stride"],
                                       case["dilation"], case["groups"])
        x = rng.normal(size=(Cin, T)).astype(np.float32)
        w = rng.normal(size=(Cout, Cin // groups, L)).astype(np.float32)
        K = np_impl._out_frames(T, L, stride, dilation)
        gy = rng.normal(size=(Cout, K)).astype(np.float32)
        args = (stride, dilation, groups)
        assert self._close(np_impl.conv1d_forward(x, w, *args),
                           cy_impl.conv1d_forward(x, w, *args))
        assert self._close(np_impl.conv1d_grad_input(gy, w, *args, T),
                           cy_impl.conv1d_grad_input(gy, w, *args, T))
        assert self._close(np_impl.conv1d_grad_weight(gy, x, *args, L),
                           cy_impl.conv1d_grad_weight(gy, x, *args, L))
