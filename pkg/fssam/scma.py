"""
Support-calibrated memory attention.

Cross-attention scores between the query and the pseudo query memory are
biased downwards at memory positions that the support prototypes do not
back up. Each layer runs plain self-attention followed by cross-attention.
"""

import logging
import math
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import qr

from .errors import MissingSupportError, ShapeMismatchError
from .models import (FeatureMap, Memory, ProjectionSet, AttentionStackConfig,
                     CrossAttentionDiagnostics)
from .numerics import masked_gap, cosine_rows, minmax_norm, row_softmax, running_mean, matmul

logger = logging.getLogger(__name__)


def _orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal columns (or rows, when wide)"""
    tall, short = max(rows, cols), min(rows, cols)
    q, r = qr(rng.standard_normal((tall, short)), mode='economic')
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q if rows >= cols else q.T


def make_projections(channels: int, d: int, seed: int = 0) -> ProjectionSet:
    """Identity projections when d == channels, seeded orthonormal ones otherwise"""
    if channels < 1 or d < 1:
        raise ValueError(f"channels and d must be >= 1, got {channels} and {d}")
    if d == channels:
        eye = np.eye(channels)
        return ProjectionSet(theta_q=eye, theta_k=eye, theta_v=eye, theta_out=eye, seed=seed)
    rng = np.random.default_rng(seed)
    return ProjectionSet(
        theta_q=_orthonormal(channels, d, rng),
        theta_k=_orthonormal(channels, d, rng),
        theta_v=_orthonormal(channels, d, rng),
        theta_out=_orthonormal(d, channels, rng),
        seed=seed,
    )


def extra_similarity_count(k: int, layers: int = 1) -> int:
    """Support-prototype cosine passes added by calibration"""
    if k < 1:
        raise MissingSupportError("calibration needs at least one support")
    return k * layers


def _check_projection(features: FeatureMap, proj: ProjectionSet) -> None:
    if features.channels != proj.channels:
        raise ShapeMismatchError(
            f"features have {features.channels} channels, projections expect {proj.channels}")


def _attend(query: np.ndarray, scores: np.ndarray, values: np.ndarray, proj: ProjectionSet) -> np.ndarray:
    """Softmax-aggregate values, project out and add the skip connection"""
    return query + matmul(matmul(row_softmax(scores), values), proj.theta_out)


def self_attention(features: FeatureMap, proj: ProjectionSet) -> FeatureMap:
    _check_projection(features, proj)
    x = features.flat()
    q = matmul(x, proj.theta_q)
    k = matmul(x, proj.theta_k)
    v = matmul(x, proj.theta_v)
    scores = matmul(q, k.T) / math.sqrt(proj.width)
    return FeatureMap(_attend(x, scores, v, proj).reshape(features.data.shape))


def memory_cross_attention(query_feats: FeatureMap, memory_feats: np.ndarray,
                           proj: ProjectionSet) -> FeatureMap:
    """Plain scaled dot-product cross-attention over an M x C memory"""
    _check_projection(query_feats, proj)
    x = query_feats.flat()
    q = matmul(x, proj.theta_q)
    k = matmul(memory_feats, proj.theta_k)
    v = matmul(memory_feats, proj.theta_v)
    scores = matmul(q, k.T) / math.sqrt(proj.width)
    return FeatureMap(_attend(x, scores, v, proj).reshape(query_feats.data.shape))


def support_similarity(disc_keys: np.ndarray, support_mems: List[Memory], proj: ProjectionSet,
                       epsilon: float) -> np.ndarray:
    """Cosine of each projected support prototype against the memory keys, averaged over supports"""
    return running_mean(
        cosine_rows(disc_keys, masked_gap(mem.features, mem.prior).data @ proj.theta_k, epsilon)
        for mem in support_mems
    )


def calibration_bias(scores: np.ndarray, a_sq_norm: np.ndarray, alpha: float,
                     norm_axis: str = 'row') -> np.ndarray:
    """alpha * min(A', 0) with A' = minmax(scores) + (A_SQ - 1); never positive"""
    axis = -1 if norm_axis == 'row' else None
    offset = minmax_norm(scores, axis=axis) + (a_sq_norm[None, :] - 1.0)
    return alpha * np.minimum(offset, 0.0)


def calibrated_cross_attention(query_feats: FeatureMap, disc_mem: Memory, support_mems: List[Memory],
                               proj: ProjectionSet, cfg: AttentionStackConfig
                               ) -> Tuple[FeatureMap, CrossAttentionDiagnostics]:
    """
    Cross-attention from the query onto the Disc memory with BG suppression.

    Scores are shifted by alpha * min(A', 0), where A' adds the normalized
    scores to the normalized support similarity minus one. The shift is never
    positive; alpha = 0 leaves the scores untouched.
    """
    if not support_mems:
        raise MissingSupportError("calibrated cross-attention needs at least one support memory")
    _check_projection(query_feats, proj)
    if disc_mem.features.data.shape != query_feats.data.shape:
        raise ShapeMismatchError("disc memory and query features differ in shape")

    x = query_feats.flat()
    memory = disc_mem.features.flat()
    q = matmul(x, proj.theta_q)
    k_q = matmul(memory, proj.theta_k)
    v_q = matmul(memory, proj.theta_v)
    scores = matmul(q, k_q.T) / math.sqrt(proj.width)

    a_sq = support_similarity(k_q, support_mems, proj, cfg.epsilon)
    a_sq_norm = minmax_norm(a_sq, fill=1.0)

    if cfg.alpha > 0:
        calibrated = scores + calibration_bias(scores, a_sq_norm, cfg.alpha, cfg.norm_axis)
    else:
        calibrated = scores

    output = _attend(x, calibrated, v_q, proj).reshape(query_feats.data.shape)
    diagnostics = CrossAttentionDiagnostics(
        pre_scores=scores,
        post_scores=calibrated,
        support_similarity=a_sq_norm,
        similarity_passes=len(support_mems),
        calibrated=cfg.alpha > 0,
    )
    return FeatureMap(output), diagnostics


def self_projections(proj: ProjectionSet, layers: int) -> List[ProjectionSet]:
    """Per-layer self-attention projections, seeded from the cross projections"""
    return [make_projections(proj.channels, proj.width, proj.seed + 1 + layer) for layer in range(layers)]


def attention_stack(query_feats: FeatureMap, disc_mem: Memory, support_mems: List[Memory],
                    proj: ProjectionSet, cfg: AttentionStackConfig, calibrated: bool = True,
                    memory_override: Optional[np.ndarray] = None
                    ) -> Tuple[FeatureMap, List[CrossAttentionDiagnostics]]:
    """
    `cfg.layers` rounds of self-attention then cross-attention.

    With `calibrated` off the cross-attention runs with alpha = 0. A
    `memory_override` (M x C) replaces the Disc memory with a plain,
    uncalibrated memory such as the stacked support memories.
    """
    if not support_mems:
        raise MissingSupportError("attention stack needs at least one support memory")
    layer_cfg = cfg if calibrated else replace(cfg, alpha=0.0)
    features = query_feats
    diagnostics = []
    for layer, self_proj in enumerate(self_projections(proj, cfg.layers)):
        features = self_attention(features, self_proj)
        if memory_override is not None:
            features = memory_cross_attention(features, memory_override, proj)
            continue
        features, diag = calibrated_cross_attention(features, disc_mem, support_mems, proj, layer_cfg)
        diagnostics.append(diag)
        if logger.isEnabledFor(logging.DEBUG):
            shift = float(np.mean(diag.post_scores - diag.pre_scores))
            logger.debug(f"Layer {layer}: mean score shift {shift:.4f}")
    return features, diagnostics
