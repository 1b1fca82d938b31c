"""
Toy encoder/decoder segmentation network with pixel self-attention.

Topology: four stride-2 3×3 conv blocks (low-level tap at 1/4, high-level at
1/16), optional self-attention over high-level pixels, an ASPP-like block of
parallel dilated convolutions, and a decoder that upsamples and concatenates the
reduced low-level feature. The auxiliary decoder has the same shape with a
wider classifier.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from taftseg.errors import ContractError, DimensionError
from taftseg.models.layers import Conv2d, Module
from taftseg.schemas.config import ModelConfig
from taftseg.services.taft_service import ReferenceBank
from taftseg.tensor import Tensor, parameter
from taftseg.tensor import functional as F

logger = logging.getLogger(__name__)

LOW_LEVEL_FACTOR = 4
HIGH_LEVEL_FACTOR = 16


class Encoder(Module):
    """Conv stack producing (low, high) features at 1/4 and 1/16 resolution."""

    def __init__(self, rng: np.random.Generator, d: int, d_low: int):
        self.block1 = Conv2d(rng, 3, 16, kernel=3, stride=2, padding=1)
        self.block2 = Conv2d(rng, 16, d_low, kernel=3, stride=2, padding=1)
        self.block3 = Conv2d(rng, d_low, 64, kernel=3, stride=2, padding=1)
        self.block4 = Conv2d(rng, 64, d, kernel=3, stride=2, padding=1)

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"encoder expects (B,3,H,W) images, got {x.shape}")
        height, width = x.shape[2:]
        if height % HIGH_LEVEL_FACTOR or width % HIGH_LEVEL_FACTOR:
            raise DimensionError(
                f"image extent {height}x{width} is not divisible by {HIGH_LEVEL_FACTOR}",
                input_shape=x.shape,
            )
        f1 = F.relu(self.block1(x))
        low = F.relu(self.block2(f1))
        f3 = F.relu(self.block3(low))
        high = F.relu(self.block4(f3))
        return low, high


class PixelAttention(Module):
    """
    Multi-head scaled dot-product self-attention over the pixels of one feature
    map, with a residual connection and no normalization.
    """

    def __init__(self, rng: np.random.Generator, d: int, heads: int = 1):
        if d % heads:
            raise ContractError(f"d={d} is not divisible by heads={heads}")
        std = 1.0 / math.sqrt(d)
        self.query = parameter(rng.normal(0.0, std, size=(d, d)))
        self.key = parameter(rng.normal(0.0, std, size=(d, d)))
        self.value = parameter(rng.normal(0.0, std, size=(d, d)))
        self.output = parameter(rng.normal(0.0, std, size=(d, d)))
        self.heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        batch, d, hs, ws = x.shape
        pixels = hs * ws
        heads = self.heads
        head_dim = d // heads

        seq = F.reshape(F.transpose(x, (0, 2, 3, 1)), (batch * pixels, d))

        def split_heads(t: Tensor) -> Tensor:
            t = F.reshape(t, (batch, pixels, heads, head_dim))
            return F.reshape(F.transpose(t, (0, 2, 1, 3)), (batch * heads, pixels, head_dim))

        q = split_heads(F.matmul(seq, self.query))
        k = split_heads(F.matmul(seq, self.key))
        v = split_heads(F.matmul(seq, self.value))
        scores = F.scale(F.matmul(q, F.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(head_dim))
        context = F.matmul(F.softmax(scores, axis=-1), v)
        context = F.transpose(F.reshape(context, (batch, heads, pixels, head_dim)), (0, 2, 1, 3))
        attended = F.matmul(F.reshape(context, (batch * pixels, d)), self.output)
        attended = F.transpose(F.reshape(attended, (batch, hs, ws, d)), (0, 3, 1, 2))
        return F.add(x, attended)


class SegmentationDecoder(Module):
    """ASPP-like dilated block, low-level skip, classifier, ×4 upsampling."""

    def __init__(
        self,
        rng: np.random.Generator,
        d: int,
        d_low: int,
        num_classes: int,
        config: ModelConfig,
    ):
        self.aspp = [
            Conv2d(rng, d, config.aspp_channels, kernel=3, dilation=rate, padding=rate)
            for rate in config.aspp_rates
        ]
        self.fuse = Conv2d(rng, config.aspp_channels * len(config.aspp_rates), config.aspp_channels, kernel=1)
        self.low_reduce = Conv2d(rng, d_low, config.low_reduce_channels, kernel=1)
        self.head = Conv2d(
            rng,
            config.aspp_channels + config.low_reduce_channels,
            config.decoder_channels,
            kernel=3,
            padding=1,
        )
        self.classifier = Conv2d(rng, config.decoder_channels, num_classes, kernel=1)

    @property
    def num_classes(self) -> int:
        return self.classifier.out_channels

    def __call__(self, high: Tensor, low: Tensor) -> Tensor:
        if high.shape[0] != low.shape[0]:
            raise DimensionError(
                f"decoder inputs disagree on batch: high {high.shape}, low {low.shape}",
                left_shape=high.shape,
                right_shape=low.shape,
            )
        branches = [F.relu(conv(high)) for conv in self.aspp]
        x = F.relu(self.fuse(F.concat(branches, axis=1)))
        low_h, low_w = low.shape[2:]
        x = F.bilinear_resize(x, low_h, low_w)
        skip = F.relu(self.low_reduce(low))
        x = F.relu(self.head(F.concat([x, skip], axis=1)))
        logits = self.classifier(x)
        return F.bilinear_resize(logits, low_h * LOW_LEVEL_FACTOR, low_w * LOW_LEVEL_FACTOR)


@dataclass
class ParamGroups:
    """Disjoint named parameter sets, each with its own learning-rate multiplier."""
    groups: Dict[str, List[Tuple[str, Tensor]]]
    multipliers: Dict[str, float] = field(default_factory=dict)

    def multiplier(self, group: str) -> float:
        return self.multipliers.get(group, 1.0)

    def tensors(self, group: str) -> List[Tensor]:
        return [t for _, t in self.groups[group]]

    def names(self) -> List[str]:
        return list(self.groups)

    def all_named(self) -> List[Tuple[str, Tensor]]:
        return [item for group in self.groups.values() for item in group]


GROUP_ENCODER = "encoder"
GROUP_DECODER = "decoder"
GROUP_REFERENCES = "references"
GROUP_AUX = "aux_decoder"

_GROUP_OF_PREFIX = {
    "encoder": GROUP_ENCODER,
    "attention": GROUP_ENCODER,
    "decoder": GROUP_DECODER,
    "references": GROUP_REFERENCES,
    "low_references": GROUP_REFERENCES,
    "aux_decoder": GROUP_AUX,
}


@dataclass
class ModelOptions:
    """Structural switches that change which modules exist or run."""
    attention: bool = True
    low_level_transform: bool = False
    aux_classes: int = 1

    def to_dict(self) -> Dict[str, object]:
        return {
            "attention": self.attention,
            "low_level_transform": self.low_level_transform,
            "aux_classes": self.aux_classes,
        }


class TaftSegModel(Module):
    """Encoder, attention, decoder, auxiliary decoder and reference banks."""

    def __init__(self, config: ModelConfig, options: ModelOptions, seed: int = 0):
        if options.aux_classes < 1:
            raise ContractError("aux_classes must count at least one training class")
        self.config = config
        self.options = options
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(rng, config.d, config.d_low)
        self.attention = PixelAttention(rng, config.d, config.heads)
        self.decoder = SegmentationDecoder(rng, config.d, config.d_low, 2, config)
        self.aux_decoder = SegmentationDecoder(rng, config.d, config.d_low, options.aux_classes + 1, config)
        self.references = ReferenceBank(rng, config.d)
        self.low_references: Optional[ReferenceBank] = (
            ReferenceBank(rng, config.d_low) if options.low_level_transform else None
        )
        self.param_groups()

    def encode(self, images: Tensor) -> Tuple[Tensor, Tensor]:
        return self.encoder(images)

    def attend(self, high: Tensor) -> Tensor:
        if not self.options.attention:
            return high
        return self.attention(high)

    def features(self, images: Tensor) -> Tuple[Tensor, Tensor]:
        """(low, attended high) for a batch of images."""
        low, high = self.encode(images)
        return low, self.attend(high)

    def decode(self, task_agnostic_high: Tensor, low: Tensor) -> Tensor:
        return self.decoder(task_agnostic_high, low)

    def decode_aux(self, high: Tensor, low: Tensor) -> Tensor:
        return self.aux_decoder(high, low)

    def param_groups(self, encoder_lr_multiplier: float = 1.0) -> ParamGroups:
        """
        Partition parameters into the update groups.

        Raises:
            ContractError: If the partition is not exhaustive and disjoint
        """
        groups: Dict[str, List[Tuple[str, Tensor]]] = {
            GROUP_ENCODER: [],
            GROUP_DECODER: [],
            GROUP_REFERENCES: [],
            GROUP_AUX: [],
        }
        seen = set()
        named = list(self.named_parameters())
        for name, tensor in named:
            prefix = name.split(".", 1)[0]
            group = _GROUP_OF_PREFIX.get(prefix)
            if group is None:
                raise ContractError(f"parameter {name} belongs to no update group")
            if id(tensor) in seen:
                raise ContractError(f"parameter {name} is registered twice")
            seen.add(id(tensor))
            groups[group].append((name, tensor))
        if sum(len(g) for g in groups.values()) != len(named):
            raise ContractError("parameter groups do not cover every parameter")
        return ParamGroups(groups=groups, multipliers={GROUP_ENCODER: encoder_lr_multiplier})

    def signature(self) -> Dict[str, Sequence[int]]:
        return {name: list(t.shape) for name, t in self.named_parameters()}
