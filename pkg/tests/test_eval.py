"""
Unit tests for IoU counting, multi-scale prediction and the evaluation loop.
"""

import numpy as np
import pytest

from taftseg.data.episodes import Phase, sample_episode
from taftseg.errors import ConfigurationError, ContractError, DimensionError
from taftseg.models.networks import ModelOptions, TaftSegModel
from taftseg.schemas.reports import MetricsReport
from taftseg.services.eval_service import (
    IouAccumulator,
    evaluate,
    fbiou,
    iou_accumulate,
    oracle_predictor,
    predict_episode,
    with_deltas,
)
from taftseg.services.selfcheck_service import brute_force_counts


@pytest.fixture
def model(small_model_config, small_world):
    return TaftSegModel(small_model_config, ModelOptions(aux_classes=len(small_world.train_classes(0))), seed=0)


def _report(shots: int, miou: float) -> MetricsReport:
    return MetricsReport(
        split=0,
        shots=shots,
        episodes=1,
        scales=[1.0],
        seed=0,
        per_class=[],
        miou=miou,
        fbiou=0.5,
        fg_iou=0.5,
        bg_iou=0.5,
        config_hash="",
        parameter_hash="",
    )


class TestIoU:
    """Test cases for pooled IoU counts."""

    def test_hand_case(self):
        """Test predicting 4 pixels over a 2-pixel object gives IoU 0.5."""
        pred = np.zeros((4, 4), dtype=bool)
        pred[0] = True
        gt = np.zeros((4, 4), dtype=bool)
        gt[0, :2] = True
        assert iou_accumulate(pred, gt, 3).class_iou(3) == 0.5

    def test_matches_brute_force(self):
        """Test vectorized counts equal a pixel-by-pixel count."""
        rng = np.random.default_rng(0)
        pred, gt = rng.random((7, 5)) < 0.4, rng.random((7, 5)) < 0.6
        acc = iou_accumulate(pred, gt, 1)
        fi, fu, bi, bu = brute_force_counts(pred, gt)
        assert acc.classes[1] == [fi, fu]
        assert acc.bg == [bi, bu]

    def test_counts_pool_before_dividing(self):
        """Test mIoU divides pooled counts rather than averaging per-image IoU."""
        acc = IouAccumulator()
        full = np.ones((2, 2), dtype=bool)
        iou_accumulate(full, full, 1, acc)
        half = np.zeros((2, 2), dtype=bool)
        half[0, 0] = True
        iou_accumulate(half, full, 1, acc)
        assert acc.class_iou(1) == pytest.approx(5 / 8)

    def test_miou_averages_classes(self):
        """Test mIoU is the mean of per-class IoU."""
        acc = IouAccumulator(classes={1: [1, 2], 2: [1, 1]})
        assert acc.miou() == pytest.approx(0.75)

    def test_fbiou_perfect(self):
        """Test identical masks score 1."""
        mask = np.eye(3, dtype=bool)
        assert fbiou([mask], [mask]) == 1.0

    def test_fbiou_empty(self):
        """Test empty input raises ContractError."""
        with pytest.raises(ContractError):
            fbiou([], [])

    def test_shape_mismatch(self):
        """Test differing shapes raise DimensionError."""
        with pytest.raises(DimensionError):
            iou_accumulate(np.zeros((2, 2)), np.zeros((2, 3)), 1)

    def test_merge(self):
        """Test merging accumulators adds counts."""
        a = IouAccumulator(classes={1: [1, 2]}, fg=[1, 2], bg=[3, 4], images=1)
        b = IouAccumulator(classes={1: [2, 2], 5: [0, 1]}, fg=[2, 2], bg=[1, 1], images=2)
        a.merge(b)
        assert a.classes == {1: [3, 4], 5: [0, 1]}
        assert a.fg == [3, 4] and a.bg == [4, 5] and a.images == 3


class TestPrediction:
    """Test cases for single- and multi-scale inference."""

    def test_prediction_shape(self, model, small_world):
        """Test one boolean mask per query at input resolution."""
        episode = sample_episode(small_world, Phase.TEST, 0, 1, 2, seed=4)
        preds = predict_episode(model, episode)
        assert preds.shape == (2, 32, 32)
        assert preds.dtype == bool

    def test_repeated_unit_scale(self, model, small_world):
        """Test scales [1, 1, 1] predict the same as [1]."""
        episode = sample_episode(small_world, Phase.TEST, 0, 1, 1, seed=6)
        single = predict_episode(model, episode, scales=[1.0])
        repeated = predict_episode(model, episode, scales=[1.0, 1.0, 1.0])
        np.testing.assert_array_equal(single, repeated)

    def test_other_scales(self, model, small_world):
        """Test rescaled passes are resized back to the original size."""
        episode = sample_episode(small_world, Phase.TEST, 0, 1, 1, seed=6)
        assert predict_episode(model, episode, scales=[0.5, 1.5]).shape == (1, 32, 32)

    def test_no_scales(self, model, small_world):
        """Test an empty scale list is rejected."""
        episode = sample_episode(small_world, Phase.TEST, 0, 1, 1, seed=6)
        with pytest.raises(ContractError):
            predict_episode(model, episode, scales=[])


class TestEvaluate:
    """Test cases for the evaluation loop."""

    def test_oracle_scores_one(self, model, small_world):
        """Test ground-truth predictions give mIoU and FBIoU of 1."""
        report = evaluate(model, small_world, 0, 1, 6, predictor=oracle_predictor)
        assert report.miou == 1.0
        assert report.fbiou == 1.0
        assert {c.class_id for c in report.per_class} <= set(small_world.test_classes(0))

    def test_worker_count_does_not_matter(self, model, small_world):
        """Test pooled counts are identical with one or two workers."""
        one = evaluate(model, small_world, 0, 1, 4, predictor=oracle_predictor, workers=1)
        two = evaluate(model, small_world, 0, 1, 4, predictor=oracle_predictor, workers=2)
        assert one.model_dump() == two.model_dump()

    def test_parameters_unchanged(self, model, small_world):
        """Test evaluation reports the hash of untouched parameters."""
        report = evaluate(model, small_world, 0, 1, 2, seed=3)
        again = evaluate(model, small_world, 0, 1, 2, seed=3)
        assert report.parameter_hash == again.parameter_hash
        assert report.miou == again.miou

    def test_checkpoint_from_other_split(self, model, small_world):
        """Test a checkpoint trained on another split is refused."""
        with pytest.raises(ConfigurationError):
            evaluate(model, small_world, 0, 1, 1, predictor=oracle_predictor, metadata={"split": 1})

    def test_deltas(self):
        """Test Δ columns relative to the previous and the 1-shot entries."""
        reports = with_deltas([_report(5, 0.6), _report(1, 0.4), _report(3, 0.5)])
        assert [r.shots for r in reports] == [1, 3, 5]
        assert reports[0].delta_from_previous is None
        assert reports[2].delta_from_previous == pytest.approx(0.1)
        assert reports[2].delta_from_one_shot == pytest.approx(0.2)
