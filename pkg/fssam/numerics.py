"""
Dense kernels shared by prior generation, refinement and attention.

All reductions run in float64. Inputs are never modified.
"""

from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateMaskError, EmptyInputError, ShapeMismatchError
from .models import FeatureMap, SoftMask, Prototype

EPSILON = 1e-8


def masked_gap(features: FeatureMap, mask: SoftMask) -> Prototype:
    """Mask-weighted global average pooling of a feature map"""
    if features.spatial_shape != mask.spatial_shape:
        raise ShapeMismatchError(
            f"features {features.spatial_shape} and mask {mask.spatial_shape} differ")
    weights = mask.data
    total = weights.sum(dtype=np.float64)
    if total <= 0.0:
        raise DegenerateMaskError("mask has no positive weight")
    pooled = np.einsum('hw,hwc->c', weights, features.data) / total
    return Prototype(pooled)


def cosine_rows(matrix: np.ndarray, vector: np.ndarray, epsilon: float = EPSILON) -> np.ndarray:
    """Cosine of each row of an N x C matrix against a C-vector"""
    dots = matrix @ vector
    norms = np.linalg.norm(matrix, axis=-1) * np.linalg.norm(vector) + epsilon
    return dots / norms


def cosine_map(features: FeatureMap, proto: Prototype, epsilon: float = EPSILON) -> np.ndarray:
    """Per-pixel cosine similarity against a prototype, H x W"""
    if features.channels != proto.channels:
        raise ShapeMismatchError(
            f"features have {features.channels} channels, prototype has {proto.channels}")
    return cosine_rows(features.flat(), proto.data, epsilon).reshape(features.spatial_shape)


def minmax_norm(grid: np.ndarray, axis: Optional[int] = None, fill: float = 0.0) -> np.ndarray:
    """
    Min-max normalize into [0, 1].

    With an axis, each slice along it is normalized on its own. Slices with
    a zero range are set to `fill`.
    """
    grid = np.asarray(grid, dtype=np.float64)
    lo = grid.min(axis=axis, keepdims=True)
    hi = grid.max(axis=axis, keepdims=True)
    span = hi - lo
    flat = span == 0.0
    out = (grid - lo) / np.where(flat, 1.0, span)
    return np.where(flat, fill, out)


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with the row max subtracted first"""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def running_mean(arrays: Iterable[np.ndarray]) -> np.ndarray:
    """
    Incremental mean m <- m + (x - m) / i.

    Identical inputs return the first input unchanged, bit for bit.
    """
    mean = None
    for i, array in enumerate(arrays, start=1):
        array = np.asarray(array, dtype=np.float64)
        if mean is None:
            mean = array.copy()
        elif array.shape != mean.shape:
            raise ShapeMismatchError(f"cannot average shapes {mean.shape} and {array.shape}")
        else:
            mean = mean + (array - mean) / i
    if mean is None:
        raise EmptyInputError("nothing to average")
    return mean


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shape-checked float64 matrix product"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b
