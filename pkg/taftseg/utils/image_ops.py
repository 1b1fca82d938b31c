"""
Resizing helpers for masks and image batches outside the differentiation graph.
"""

import math

import numpy as np

from taftseg.tensor import Tensor
from taftseg.tensor import functional as F


def round_up(value: float, multiple: int) -> int:
    """Smallest positive multiple of ``multiple`` that is >= ``value``."""
    return max(multiple, int(math.ceil(value / multiple - 1e-9)) * multiple)


def scaled_extent(size: int, scale: float, multiple: int = 16) -> int:
    return round_up(size * scale, multiple)


def nearest_resize(masks: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of (..., H, W) arrays; values stay in the input set."""
    in_h, in_w = masks.shape[-2:]
    rows = np.minimum(((np.arange(height) + 0.5) * in_h / height).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * in_w / width).astype(np.int64), in_w - 1)
    return masks[..., rows[:, None], cols[None, :]]


def bilinear_images(images: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a (B,C,H,W) batch as constants."""
    if images.shape[-2:] == (height, width):
        return images
    return F.bilinear_resize(Tensor.wrap(images), height, width).data
