"""
Unit tests for label downsizing, prototypes, the transform and the regression loss.
"""

import math

import numpy as np
import pytest

from taftseg.errors import ContractError, DegenerateInputError, DegenerateLabelError, DimensionError, SingularSystemError
from taftseg.services.selfcheck_service import fit_residual, prototype_set, reference_bank
from taftseg.services.taft_service import (
    DownsizedLabel,
    ReferenceBank,
    TransformMatrix,
    apply_transform,
    build_transform,
    compute_prototypes,
    downsize_label,
    regression_loss,
)
from taftseg.tensor import Graph, Tensor, parameter
from taftseg.tensor import functional as F


class TestDownsizeLabel:
    """Test cases for average-pooled soft labels."""

    def test_planes_sum_to_one(self):
        """Test fg and bg planes are complementary."""
        mask = np.zeros((32, 32))
        mask[:10, :20] = 1.0
        label = downsize_label(mask, 16)
        assert label.shape == (2, 2)
        np.testing.assert_allclose(label.fg + label.bg, 1.0)

    def test_fractional_coverage(self):
        """Test a half-covered window has soft label 0.5."""
        mask = np.zeros((4, 4))
        mask[:2, :] = 1.0
        label = downsize_label(mask, 4)
        assert label.fg[0, 0] == 0.5

    def test_non_binary_mask(self):
        """Test a mask with values other than 0/1 is rejected."""
        with pytest.raises(ContractError):
            downsize_label(np.full((4, 4), 0.5), 2)

    def test_indivisible_extent(self):
        """Test extents not divisible by the factor raise DimensionError."""
        with pytest.raises(DimensionError):
            downsize_label(np.zeros((6, 6)), 4)


class TestPrototypes:
    """Test cases for soft-label weighted prototypes."""

    def test_weighted_mean(self):
        """Test the fg prototype of pixels [1,0],[0,1],[1,0] is [2/3, 1/3]."""
        feats = Tensor(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).reshape(1, 2, 1, 3))
        label = DownsizedLabel(fg=np.ones((1, 3)), bg=np.array([[0.0, 0.0, 1.0]]))
        protos = compute_prototypes(feats, [label])
        np.testing.assert_allclose(protos.fg.data, [2 / 3, 1 / 3])
        np.testing.assert_allclose(protos.bg.data, [1.0, 0.0])

    def test_shot_average(self):
        """Test prototypes average the per-shot prototypes."""
        feats = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
        label = DownsizedLabel(fg=np.ones((1, 1)), bg=np.ones((1, 1)))
        protos = compute_prototypes(feats, [label, label])
        assert protos.fg.data[0] == 2.0
        assert protos.shot(1, 0)[0] == 3.0

    def test_list_input(self):
        """Test a list of per-shot maps is accepted."""
        label = DownsizedLabel(fg=np.ones((2, 2)), bg=np.ones((2, 2)))
        protos = compute_prototypes([Tensor(np.ones((3, 2, 2)))], [label])
        np.testing.assert_allclose(protos.fg.data, np.ones(3))

    def test_empty_plane(self):
        """Test an all-zero plane raises DegenerateLabelError naming the plane."""
        feats = Tensor(np.ones((1, 2, 2, 2)))
        label = DownsizedLabel(fg=np.zeros((2, 2)), bg=np.ones((2, 2)))
        with pytest.raises(DegenerateLabelError) as exc_info:
            compute_prototypes(feats, [label])
        assert exc_info.value.plane == "fg"

    def test_gradient_reaches_features(self):
        """Test prototypes stay on the graph."""
        feats = parameter(np.ones((1, 2, 1, 2)))
        label = DownsizedLabel(fg=np.array([[1.0, 0.0]]), bg=np.array([[0.0, 1.0]]))
        graph = Graph()
        with graph:
            loss = F.sum(compute_prototypes(feats, [label]).fg)
        graph.backward(loss)
        np.testing.assert_allclose(feats.grad[0, :, 0, 0], [1.0, 1.0])
        np.testing.assert_allclose(feats.grad[0, :, 0, 1], [0.0, 0.0])


class TestTransform:
    """Test cases for the least-squares transform P."""

    def test_exact_fit(self):
        """Test P maps normalized prototypes onto normalized references."""
        rng = np.random.default_rng(11)
        for d in (4, 16, 64):
            assert fit_residual(rng.normal(size=(d, 2)), rng.normal(size=(d, 2))) < 1e-9

    def test_scale_invariance(self):
        """Test rescaling a prototype does not change P."""
        rng = np.random.default_rng(3)
        c, r = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        refs = reference_bank(r[:, 0], r[:, 1])
        p1 = build_transform(prototype_set(c[:, 0], c[:, 1]), refs).matrix.data
        p2 = build_transform(prototype_set(5.0 * c[:, 0], c[:, 1]), refs).matrix.data
        np.testing.assert_allclose(p1, p2, atol=1e-10)

    def test_equal_prototypes_need_ridge(self):
        """Test identical prototypes are singular without ridge and finite with it."""
        v = np.random.default_rng(4).normal(size=6)
        refs = reference_bank(np.ones(6), -np.ones(6))
        with pytest.raises(SingularSystemError):
            build_transform(prototype_set(v, v.copy()), refs, ridge=0.0)
        transform = build_transform(prototype_set(v, v.copy()), refs, ridge=1e-8)
        assert np.all(np.isfinite(transform.matrix.data))

    def test_zero_prototype(self):
        """Test a zero-norm prototype raises DegenerateInputError."""
        refs = reference_bank(np.ones(3), np.arange(3.0))
        with pytest.raises(DegenerateInputError):
            build_transform(prototype_set(np.zeros(3), np.ones(3)), refs)

    def test_width_mismatch(self):
        """Test prototype and reference widths must agree."""
        refs = reference_bank(np.ones(4), np.arange(4.0))
        with pytest.raises(DimensionError):
            build_transform(prototype_set(np.ones(3), np.arange(3.0)), refs)

    def test_references_get_no_gradient(self):
        """Test references enter P as constants."""
        rng = np.random.default_rng(8)
        refs = ReferenceBank(rng, 5)
        fg, bg = parameter(rng.normal(size=5)), parameter(rng.normal(size=5))
        graph = Graph()
        with graph:
            protos = prototype_set(fg.data, bg.data)
            protos.fg, protos.bg = fg, bg
            loss = F.sum(build_transform(protos, refs).matrix)
        graph.backward(loss)
        np.testing.assert_array_equal(refs.fg.grad, np.zeros(5))
        np.testing.assert_array_equal(refs.bg.grad, np.zeros(5))
        assert np.any(fg.grad != 0.0)

    def test_apply_is_pixelwise(self):
        """Test applying P multiplies every pixel vector."""
        rng = np.random.default_rng(9)
        matrix = rng.normal(size=(3, 3))
        transform = TransformMatrix(matrix=Tensor(matrix), condition=1.0, ridge=0.0, determinant=1.0)
        high = rng.normal(size=(2, 3, 2, 2))
        out = apply_transform(transform, Tensor(high)).data
        np.testing.assert_allclose(out[1, :, 0, 1], matrix @ high[1, :, 0, 1])

    def test_identity_transform(self):
        """Test the identity baseline leaves features unchanged."""
        high = np.random.default_rng(1).normal(size=(1, 4, 2, 2))
        out = apply_transform(TransformMatrix.identity(4), Tensor(high)).data
        np.testing.assert_allclose(out, high)


class TestRegressionLoss:
    """Test cases for the reference regression loss."""

    def test_known_value(self):
        """Test p_fg = 2/3 against a foreground label gives 1/9."""
        refs = reference_bank(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        h = Tensor(np.array([math.log(2.0), 0.0]).reshape(1, 2, 1, 1))
        label = DownsizedLabel(fg=np.ones((1, 1)), bg=np.zeros((1, 1)))
        assert regression_loss(h, refs, [label]).item() == pytest.approx(1.0 / 9.0)

    def test_label_count_mismatch(self):
        """Test the batch and label counts must agree."""
        refs = reference_bank(np.ones(2), np.arange(2.0))
        label = DownsizedLabel(fg=np.ones((1, 1)), bg=np.zeros((1, 1)))
        with pytest.raises(ContractError):
            regression_loss(Tensor(np.ones((2, 2, 1, 1))), refs, [label])
