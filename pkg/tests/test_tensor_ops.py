"""
Unit tests for the tensor engine: forward values, shape contracts and the tape.
"""

import numpy as np
import pytest

from taftseg.errors import ContractError, DimensionError, SingularSystemError
from taftseg.tensor import Graph, Tensor, parameter
from taftseg.tensor import functional as F


class TestElementwise:
    """Test cases for elementwise ops and broadcasting."""

    def test_add_vectors(self):
        """Test adding two vectors."""
        out = F.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_channel_broadcast(self):
        """Test a length-C vector broadcasts along axis 1."""
        x = Tensor(np.zeros((2, 3, 2, 2)))
        out = F.add(x, Tensor([1.0, 2.0, 3.0]))
        assert out.shape == (2, 3, 2, 2)
        np.testing.assert_array_equal(out.data[1, :, 0, 1], [1.0, 2.0, 3.0])

    def test_scalar_broadcast(self):
        """Test a scalar operand broadcasts everywhere."""
        out = F.multiply(Tensor(np.ones((2, 2))), Tensor(3.0))
        np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))

    def test_incompatible_shapes(self):
        """Test general broadcasting is rejected."""
        with pytest.raises(DimensionError):
            F.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_relu(self):
        """Test relu zeroes negatives."""
        out = F.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


class TestLinearAlgebra:
    """Test cases for matmul and the 2x2 inverse."""

    def test_matmul(self):
        """Test a (2x2)(2x1) product."""
        out = F.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_matmul_mismatch(self):
        """Test mismatched inner extents raise DimensionError."""
        with pytest.raises(DimensionError):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched_matmul(self):
        """Test matching leading batch extents multiply pairwise."""
        a = np.random.default_rng(0).normal(size=(4, 2, 3))
        b = np.random.default_rng(1).normal(size=(4, 3, 5))
        out = F.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, np.matmul(a, b))

    def test_inverse_2x2(self):
        """Test the closed-form inverse."""
        m = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(F.inverse_2x2(Tensor(m)).data @ m, np.eye(2), atol=1e-12)

    def test_inverse_singular(self):
        """Test a zero determinant raises SingularSystemError."""
        with pytest.raises(SingularSystemError):
            F.inverse_2x2(Tensor([[1.0, 2.0], [2.0, 4.0]]))


class TestSpatial:
    """Test cases for convolution, pooling and resizing."""

    def test_conv_all_ones(self):
        """Test a 3x3 ones kernel over a 3x3 ones input sums to 9."""
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_conv_output_extent(self):
        """Test stride, dilation and padding give the documented extent."""
        x = Tensor(np.ones((2, 3, 16, 16)))
        w = Tensor(np.ones((4, 3, 3, 3)))
        assert F.conv2d(x, w, stride=2, padding=1).shape == (2, 4, 8, 8)
        assert F.conv2d(x, w, dilation=2, padding=2).shape == (2, 4, 16, 16)

    def test_conv_bias(self):
        """Test the bias is added per output channel."""
        out = F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((2, 1, 1, 1))), Tensor([1.0, -1.0]))
        np.testing.assert_array_equal(out.data[0, :, 0, 0], [1.0, -1.0])

    def test_conv_empty_output(self):
        """Test an output extent below 1 raises DimensionError."""
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_conv_channel_mismatch(self):
        """Test a kernel expecting other input channels raises DimensionError."""
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))))

    def test_avgpool(self):
        """Test 2x2 pooling of an identity pattern gives 0.5."""
        out = F.avgpool2d(Tensor(np.eye(2)[None, None]), 2)
        assert out.data[0, 0, 0, 0] == 0.5

    @pytest.mark.parametrize("seed", range(20))
    def test_avgpool_preserves_mean(self, seed):
        """Test pooling keeps the global mean of random inputs."""
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 5))
        x = rng.normal(scale=10.0, size=(2, 3, 4 * k, 2 * k))
        assert abs(F.avgpool2d(Tensor(x), k).data.mean() - x.mean()) < 1e-12

    def test_avgpool_not_divisible(self):
        """Test pooling requires divisible extents."""
        with pytest.raises(DimensionError):
            F.avgpool2d(Tensor(np.ones((1, 1, 5, 4))), 2)

    def test_bilinear_constant(self):
        """Test resizing preserves a constant image."""
        out = F.bilinear_resize(Tensor(np.full((1, 2, 4, 4), 0.7)), 16, 8)
        assert out.shape == (1, 2, 16, 8)
        np.testing.assert_allclose(out.data, 0.7)

    def test_interpolation_rows_sum_to_one(self):
        """Test interpolation weights are row-stochastic."""
        np.testing.assert_allclose(F.interpolation_matrix(4, 16).sum(axis=1), 1.0)


class TestReductions:
    """Test cases for softmax, norms and reductions."""

    def test_softmax_stable(self):
        """Test large logits do not overflow."""
        out = F.softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_softmax_sums_to_one(self, seed):
        """Test random logits give probabilities summing to 1 along the axis."""
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=50.0, size=(3, 7, 5))
        axis = int(rng.integers(0, 3))
        sums = F.softmax(Tensor(x), axis=axis).data.sum(axis=axis)
        np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-12)

    def test_softmax_bad_axis(self):
        """Test an out-of-range axis raises ContractError."""
        with pytest.raises(ContractError):
            F.softmax(Tensor(np.ones((2, 2))), axis=3)

    def test_l2_norm(self):
        """Test the norm of [3, 4] is 5."""
        assert F.l2_norm(Tensor([3.0, 4.0])).item() == 5.0

    def test_l2_norm_zero_vector_gradient(self):
        """Test the zero vector has norm 0 and zero gradient."""
        x = parameter(np.zeros(3))
        graph = Graph()
        with graph:
            norm = F.l2_norm(x)
        graph.backward(norm)
        assert norm.item() == 0.0
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_mean_axis(self):
        """Test mean over one axis."""
        out = F.mean(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=0)
        np.testing.assert_array_equal(out.data, [3.0, 5.0])

    def test_cross_entropy_uniform(self):
        """Test equal logits give log(2) for two classes."""
        logits = Tensor(np.zeros((1, 2, 2, 2)))
        target = F.one_hot(np.zeros((1, 2, 2), dtype=int), 2, axis=1)
        assert F.cross_entropy(logits, target).item() == pytest.approx(np.log(2.0))

    def test_one_hot_out_of_range(self):
        """Test labels outside the class range are rejected."""
        with pytest.raises(ContractError):
            F.one_hot(np.array([[0, 2]]), 2)

    def test_reshape_invalid(self):
        """Test an impossible view raises DimensionError."""
        with pytest.raises(DimensionError):
            F.reshape(Tensor(np.ones(6)), (4, 2))


class TestGraph:
    """Test cases for recording, backward and clearing."""

    def test_ops_outside_graph_are_constants(self):
        """Test nothing is recorded without an active graph."""
        x = parameter([1.0, 2.0])
        out = F.multiply(x, x)
        assert out.node_id is None
        assert not out.requires_grad

    def test_constants_are_not_recorded(self):
        """Test ops on constants inside a graph stay off the tape."""
        graph = Graph()
        with graph:
            F.add(Tensor([1.0]), Tensor([2.0]))
        assert len(graph) == 0

    def test_backward_accumulates(self):
        """Test d(sum(x*x))/dx = 2x, accumulated over two passes."""
        x = parameter([1.0, -2.0])
        for _ in range(2):
            graph = Graph()
            with graph:
                loss = F.sum(F.multiply(x, x))
            graph.backward(loss)
            graph.clear()
        np.testing.assert_allclose(x.grad, [4.0, -8.0])

    def test_shared_input_gradient(self):
        """Test an input used by two branches gets both contributions."""
        x = parameter(3.0)
        graph = Graph()
        with graph:
            loss = F.add(F.scale(x, 2.0), F.multiply(x, x))
        graph.backward(loss)
        assert x.grad == pytest.approx(8.0)

    def test_detach_blocks_gradient(self):
        """Test stop-gradient leaves the source untouched."""
        x = parameter([1.0, 2.0])
        graph = Graph()
        with graph:
            loss = F.sum(F.multiply(F.detach(x), x))
        graph.backward(loss)
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_clear_frees_tape(self):
        """Test clear turns outputs into constants."""
        x = parameter([1.0])
        graph = Graph()
        with graph:
            out = F.scale(x, 2.0)
        graph.clear()
        assert len(graph) == 0
        assert out.node_id is None and not out.requires_grad

    def test_backward_needs_scalar(self):
        """Test backward from a non-scalar raises ContractError."""
        x = parameter([1.0, 2.0])
        graph = Graph()
        with graph:
            out = F.scale(x, 2.0)
        with pytest.raises(ContractError):
            graph.backward(out)

    def test_nested_activation_rejected(self):
        """Test a graph cannot be entered twice."""
        graph = Graph()
        with graph:
            with pytest.raises(ContractError):
                graph.__enter__()
