"""
Iterative memory refinement.

The Disc memory and prior take in FG content from the FG memory wherever
the FG memory resembles both the Disc prototype and the support prototypes.
"""

import logging
from typing import List, Tuple

import numpy as np

from .errors import MissingSupportError, ShapeMismatchError
from .models import FeatureMap, SoftMask, Memory, IterationRecord, RefinementTrace
from .numerics import EPSILON, masked_gap, cosine_map, minmax_norm, relu, running_mean

logger = logging.getLogger(__name__)


def similarity_op_count(n: int, k: int) -> int:
    """
    Prototype-vs-map cosine passes performed by `refine` for n iterations and k shots.

    This is an upper bound: an iteration that meets an all-zero Disc prior
    short-circuits and performs no passes, so a degenerate trace reports fewer
    (see `RefinementTrace.degenerate`).
    """
    if n < 0 or k < 0:
        raise ValueError("n and k must be >= 0")
    return n * (k + 1)


def _check_inputs(disc_mem: Memory, disc_prior: SoftMask, fg_mem: Memory,
                  support_mems: List[Memory]) -> None:
    if not support_mems:
        raise MissingSupportError("refinement needs at least one support memory")
    shape = disc_mem.features.data.shape
    for name, mem in [('fg_mem', fg_mem)] + [(f'support {i}', m) for i, m in enumerate(support_mems)]:
        if mem.features.data.shape != shape:
            raise ShapeMismatchError(f"{name} features {mem.features.data.shape} differ from {shape}")
    if disc_prior.spatial_shape != disc_mem.features.spatial_shape:
        raise ShapeMismatchError("disc prior shape differs from the disc memory")


def suppress_background(a_qq: np.ndarray, a_qs: np.ndarray) -> np.ndarray:
    """ReLU(A_QQ + (A_QS - 1)): keep only what the supports also support"""
    return relu(a_qq + (a_qs - 1.0))


def blend_prior(disc: np.ndarray, fg: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """weights * fg + (1 - weights) * disc, kept inside [min(disc, fg), max(disc, fg)]"""
    return np.clip(disc + weights * (fg - disc), np.minimum(disc, fg), np.maximum(disc, fg))


def refine_once(disc_mem: Memory, disc_prior: SoftMask, fg_mem: Memory, support_mems: List[Memory],
                epsilon: float = EPSILON) -> Tuple[Memory, SoftMask, IterationRecord, int]:
    """
    One refinement step.

    Returns the refined Disc memory, the refined Disc prior, the iteration
    record and the number of cosine passes performed.
    """
    _check_inputs(disc_mem, disc_prior, fg_mem, support_mems)
    shape = disc_prior.spatial_shape

    if disc_prior.data.sum() <= 0.0:
        logger.warning("Disc prior is empty; refinement leaves the memory unchanged")
        zeros = np.zeros(shape)
        record = IterationRecord(a_qq=zeros, a_qs=zeros, weights=zeros, prior=disc_prior, degenerate=True)
        return disc_mem, disc_prior, record, 0

    disc_proto = masked_gap(disc_mem.features, disc_prior)
    a_qq = minmax_norm(cosine_map(fg_mem.features, disc_proto, epsilon))
    a_qs = running_mean(
        minmax_norm(cosine_map(fg_mem.features, masked_gap(mem.features, mem.prior), epsilon))
        for mem in support_mems
    )
    passes = 1 + len(support_mems)

    weights = suppress_background(a_qq, a_qs)

    disc_feats = disc_mem.features.data
    fg_feats = fg_mem.features.data
    features = disc_feats + weights[..., None] * (fg_feats - disc_feats)

    refined_prior = SoftMask(blend_prior(disc_prior.data, fg_mem.prior.data, weights))
    refined_mem = Memory(features=FeatureMap(features), prior=refined_prior)
    record = IterationRecord(a_qq=a_qq, a_qs=a_qs, weights=weights, prior=refined_prior)
    return refined_mem, refined_prior, record, passes


def refine(disc_mem: Memory, disc_prior: SoftMask, fg_mem: Memory, support_mems: List[Memory],
           n: int = 3, epsilon: float = EPSILON) -> Tuple[Memory, SoftMask, RefinementTrace]:
    """Apply `refine_once` n times, threading outputs back in as inputs"""
    if n < 0:
        raise ValueError(f"iteration count must be >= 0, got {n}")
    _check_inputs(disc_mem, disc_prior, fg_mem, support_mems)

    trace = RefinementTrace()
    for _ in range(n):
        disc_mem, disc_prior, record, passes = refine_once(
            disc_mem, disc_prior, fg_mem, support_mems, epsilon)
        trace.records.append(record)
        trace.similarity_passes += passes
    return disc_mem, disc_prior, trace
