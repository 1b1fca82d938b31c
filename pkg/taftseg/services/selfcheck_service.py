"""
In-process self-tests: finite-difference gradients, exact transform fit, update
routing, and IoU counting against a brute-force oracle.
"""

import logging
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from taftseg.data.episodes import Phase, sample_episode
from taftseg.data.shape_world import ShapeWorld
from taftseg.models.networks import ModelOptions, TaftSegModel
from taftseg.schemas.config import ModelConfig, TrainConfig, WorldConfig
from taftseg.schemas.reports import SuiteResult
from taftseg.services.eval_service import IouAccumulator, iou_accumulate
from taftseg.services.taft_service import PrototypeSet, ReferenceBank, build_transform
from taftseg.services.train_service import GROUP_LOSSES, loss_gradients
from taftseg.tensor import Tensor, parameter
from taftseg.tensor import functional as F
from taftseg.tensor.gradcheck import check_gradients

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
EXACT_FIT_TOLERANCE = 1e-9
ROUTING_TOLERANCE = 1e-10

GradientCase = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], List[Tensor]]]


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.2) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return F.sum(F.multiply(out, Tensor.wrap(weights)))


def _unary(op, positive: bool = False) -> GradientCase:
    def case(rng):
        data = rng.uniform(0.3, 2.0, size=(2, 3)) if positive else _away_from_zero(rng, (2, 3))
        x = parameter(data)
        w = rng.normal(size=(2, 3))
        return (lambda: _weighted(op(x), w)), [x]

    return case


def _binary(op, channel: bool = False) -> GradientCase:
    def case(rng):
        a = parameter(rng.normal(size=(2, 3, 2, 2)))
        b_shape = (3,) if channel else (2, 3, 2, 2)
        b = parameter(rng.uniform(0.5, 1.5, size=b_shape) * rng.choice([-1.0, 1.0], size=b_shape))
        w = rng.normal(size=(2, 3, 2, 2))
        return (lambda: _weighted(op(a, b), w)), [a, b]

    return case


def _matmul(rng):
    a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2)))
    w = rng.normal(size=(3, 2))
    return (lambda: _weighted(F.matmul(a, b), w)), [a, b]


def _batched_matmul(rng):
    a, b = parameter(rng.normal(size=(2, 3, 4))), parameter(rng.normal(size=(2, 4, 2)))
    w = rng.normal(size=(2, 3, 2))
    return (lambda: _weighted(F.matmul(a, b), w)), [a, b]


def _conv(rng):
    x = parameter(rng.normal(size=(1, 2, 6, 6)))
    k = parameter(rng.normal(size=(3, 2, 3, 3)))
    bias = parameter(rng.normal(size=3))
    w = rng.normal(size=(1, 3, 4, 4))
    return (lambda: _weighted(F.conv2d(x, k, bias, dilation=2, padding=1), w)), [x, k, bias]


def _avgpool(rng):
    x = parameter(rng.normal(size=(1, 2, 4, 4)))
    w = rng.normal(size=(1, 2, 2, 2))
    return (lambda: _weighted(F.avgpool2d(x, 2), w)), [x]


def _softmax(rng):
    x = parameter(rng.normal(size=(2, 5)))
    w = rng.normal(size=(2, 5))
    return (lambda: _weighted(F.softmax(x, axis=1), w)), [x]


def _log_softmax(rng):
    x = parameter(rng.normal(size=(2, 5)))
    w = rng.normal(size=(2, 5))
    return (lambda: _weighted(F.log_softmax(x, axis=1), w)), [x]


def _bilinear(rng):
    x = parameter(rng.normal(size=(1, 1, 4, 4)))
    w = rng.normal(size=(1, 1, 7, 7))
    return (lambda: _weighted(F.bilinear_resize(x, 7, 7), w)), [x]


def _reductions(rng):
    x = parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=4)
    return (lambda: F.add(_weighted(F.mean(x, axis=0), w), F.l2_norm(x))), [x]


def _shapes(rng):
    a, b = parameter(rng.normal(size=(1, 2, 3))), parameter(rng.normal(size=(1, 1, 3)))
    w = rng.normal(size=(3, 3))
    return (lambda: _weighted(F.transpose(F.reshape(F.concat([a, b], axis=1), (3, 3)), (1, 0)), w)), [a, b]


def _inverse(rng):
    m = parameter(np.eye(2) * 2.0 + rng.normal(scale=0.3, size=(2, 2)))
    w = rng.normal(size=(2, 2))
    return (lambda: _weighted(F.inverse_2x2(m), w)), [m]


def _cross_entropy(rng):
    logits = parameter(rng.normal(size=(2, 3, 2, 2)))
    target = F.one_hot(rng.integers(0, 3, size=(2, 2, 2)), 3, axis=1)
    return (lambda: F.cross_entropy(logits, target, axis=1)), [logits]


GRADIENT_CASES: Dict[str, GradientCase] = {
    "add": _binary(F.add),
    "add_channel": _binary(F.add, channel=True),
    "subtract": _binary(F.subtract),
    "multiply": _binary(F.multiply),
    "divide": _binary(F.divide),
    "divide_channel": _binary(F.divide, channel=True),
    "relu": _unary(F.relu),
    "exp": _unary(F.exp),
    "log": _unary(F.log, positive=True),
    "sqrt": _unary(F.sqrt, positive=True),
    "negate": _unary(F.negate),
    "scale": _unary(lambda x: F.scale(x, 2.5)),
    "matmul": _matmul,
    "batched_matmul": _batched_matmul,
    "conv2d": _conv,
    "avgpool2d": _avgpool,
    "softmax": _softmax,
    "log_softmax": _log_softmax,
    "bilinear_resize": _bilinear,
    "reductions": _reductions,
    "reshape_transpose_concat": _shapes,
    "inverse_2x2": _inverse,
    "cross_entropy": _cross_entropy,
}


def gradient_suite(seeds: int = 20) -> SuiteResult:
    passed = total = 0
    worst = 0.0
    for name, case in GRADIENT_CASES.items():
        for seed in range(seeds):
            fn, inputs = case(np.random.default_rng([seed, len(name)]))
            error = check_gradients(fn, inputs)
            worst = max(worst, error)
            total += 1
            if error < GRADIENT_TOLERANCE:
                passed += 1
            else:
                logger.warning(f"gradient check failed for {name} seed {seed}: relative error {error:.2e}")
    return SuiteResult(name="gradient", passed=passed, total=total, worst_error=worst)


def prototype_set(fg: np.ndarray, bg: np.ndarray) -> PrototypeSet:
    """Single-shot prototype set built directly from two vectors."""
    return PrototypeSet(
        fg=Tensor(fg), bg=Tensor(bg), per_shot=Tensor(np.stack([fg, bg], axis=1)), shots=1
    )


def reference_bank(fg: np.ndarray, bg: np.ndarray) -> ReferenceBank:
    bank = ReferenceBank(np.random.default_rng(0), fg.shape[0])
    bank.fg.data[...] = fg
    bank.bg.data[...] = bg
    return bank


def fit_residual(c: np.ndarray, r: np.ndarray, ridge: float = 0.0) -> float:
    """‖P·Ĉ − R̂‖_F / ‖R̂‖_F for d×2 prototype and reference matrices."""
    transform = build_transform(prototype_set(c[:, 0], c[:, 1]), reference_bank(r[:, 0], r[:, 1]), ridge=ridge)
    c_hat = c / np.linalg.norm(c, axis=0)
    r_hat = r / np.linalg.norm(r, axis=0)
    return float(np.linalg.norm(transform.matrix.data @ c_hat - r_hat) / np.linalg.norm(r_hat))


def exact_fit_suite(instances: int = 200) -> SuiteResult:
    passed = 0
    worst = 0.0
    rng = np.random.default_rng(2024)
    for _ in range(instances):
        d = int(rng.integers(4, 65))
        residual = fit_residual(rng.normal(size=(d, 2)), rng.normal(size=(d, 2)))
        worst = max(worst, residual)
        passed += residual < EXACT_FIT_TOLERANCE

    # equal prototypes only work through the ridge
    v = rng.normal(size=8)
    transform = build_transform(prototype_set(v, v.copy()), reference_bank(rng.normal(size=8), rng.normal(size=8)))
    passed += bool(np.all(np.isfinite(transform.matrix.data)))
    return SuiteResult(name="exact_fit", passed=int(passed), total=instances + 1, worst_error=worst)


def small_setup() -> Tuple[ShapeWorld, ModelConfig, TrainConfig]:
    world = ShapeWorld(config=WorldConfig(image_size=32, shapes_max=3))
    model_config = ModelConfig(d=16, d_low=8, aspp_channels=8, decoder_channels=8, low_reduce_channels=4)
    train = TrainConfig(episodes_total=10, decay_point=5, queries=2, shots=1)
    return world, model_config, train


def routing_gaps(model: TaftSegModel, episode, train: TrainConfig, train_classes: Sequence[int]) -> Dict[str, float]:
    """
    Per group, the largest gap between combined-loss gradients and the gradients
    of the group's designated losses alone.
    """
    combined = loss_gradients(model, episode, train, train_classes, ("regression", "segmentation", "auxiliary"))
    groups = model.param_groups()
    gaps = {}
    for group, losses in GROUP_LOSSES.items():
        designated = loss_gradients(model, episode, train, train_classes, losses)
        gap = 0.0
        for name, _ in groups.groups[group]:
            scale = 1.0 + float(np.max(np.abs(designated[name])))
            gap = max(gap, float(np.max(np.abs(combined[name] - designated[name]))) / scale)
        gaps[group] = gap
    return gaps


def routing_suite(episodes: int = 20) -> SuiteResult:
    world, model_config, train = small_setup()
    train_classes = world.train_classes(train.split)
    passed = 0
    worst = 0.0
    for i in range(episodes):
        model = TaftSegModel(model_config, ModelOptions(aux_classes=len(train_classes)), seed=i)
        episode = sample_episode(world, Phase.TRAIN, train.split, train.shots, train.queries, seed=1000 + i)
        gap = max(routing_gaps(model, episode, train, train_classes).values())
        worst = max(worst, gap)
        passed += gap <= ROUTING_TOLERANCE
    return SuiteResult(name="routing", passed=int(passed), total=episodes, worst_error=worst)


def brute_force_counts(pred: np.ndarray, gt: np.ndarray) -> Tuple[int, int, int, int]:
    """(fg intersection, fg union, bg intersection, bg union) by visiting every pixel."""
    fi = fu = bi = bu = 0
    for p, g in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist()):
        fi += p and g
        fu += p or g
        bi += (not p) and (not g)
        bu += (not p) or (not g)
    return fi, fu, bi, bu


def metric_suite(pairs: int = 100) -> SuiteResult:
    rng = np.random.default_rng(7)
    passed = 0
    accumulator = IouAccumulator()
    totals = np.zeros(4, dtype=np.int64)
    for _ in range(pairs):
        shape = tuple(int(s) for s in rng.integers(2, 9, size=2))
        pred = rng.random(shape) < rng.random()
        gt = rng.random(shape) < rng.random()
        counts = np.array(brute_force_counts(pred, gt))
        totals += counts
        single = iou_accumulate(pred, gt, 1)
        accumulator = iou_accumulate(pred, gt, 1, accumulator)
        passed += single.classes[1] == [counts[0], counts[1]] and single.fg == [counts[0], counts[1]]
    pooled_ok = accumulator.classes[1] == [totals[0], totals[1]] and accumulator.bg == [totals[2], totals[3]]

    pred = np.zeros((4, 4), dtype=bool)
    pred[0, :4] = True
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, :2] = True
    hand_ok = iou_accumulate(pred, gt, 3).class_iou(3) == 0.5
    return SuiteResult(name="metric", passed=int(passed) + pooled_ok + hand_ok, total=pairs + 2)


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "gradient": gradient_suite,
    "exact_fit": exact_fit_suite,
    "routing": routing_suite,
    "metric": metric_suite,
}


def run_checks(names: Sequence[str] = tuple(SUITES)) -> List[SuiteResult]:
    results = []
    for name in names:
        result = SUITES[name]()
        logger.info(f"check {name}: {result.passed}/{result.total} passed")
        results.append(result)
    return results
