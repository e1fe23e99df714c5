"""
Pseudo prompt generation: FG/BG/Disc prior masks and memory encoding.
"""

import logging
from typing import List

import numpy as np

from .errors import DegenerateMaskError, EmptyInputError, ShapeMismatchError
from .models import FeatureMap, SoftMask, Prototype, Memory, PriorSet, RawPriors
from .numerics import EPSILON, masked_gap, cosine_map, minmax_norm, relu, running_mean

logger = logging.getLogger(__name__)


def make_priors(query_feats: FeatureMap, support_feats: FeatureMap, support_mask: SoftMask,
                epsilon: float = EPSILON) -> PriorSet:
    """
    Build FG, BG and Disc priors of the query from one annotated support.

    The Disc prior subtracts the normalized BG prior from the normalized FG
    prior, drops negatives and normalizes again. `raw` carries the cosine
    maps and the pre-normalization Disc map.
    """
    if query_feats.channels != support_feats.channels:
        raise ShapeMismatchError(
            f"query has {query_feats.channels} channels, support has {support_feats.channels}")
    if not support_mask.is_binary():
        raise ValueError("support mask must be binary")

    fg_proto = masked_gap(support_feats, support_mask)

    bg_fallback = False
    bg_mask = SoftMask(1.0 - support_mask.data)
    try:
        bg_proto = masked_gap(support_feats, bg_mask)
    except DegenerateMaskError:
        logger.warning("Support mask covers the whole image; using a zero BG prototype")
        bg_proto = Prototype(np.zeros(support_feats.channels))
        bg_fallback = True

    fg_cosine = cosine_map(query_feats, fg_proto, epsilon)
    bg_cosine = cosine_map(query_feats, bg_proto, epsilon)
    fg = minmax_norm(fg_cosine)
    bg = minmax_norm(bg_cosine)
    disc_pre = relu(fg - bg)
    disc = minmax_norm(disc_pre)

    return PriorSet(
        fg=SoftMask(fg),
        bg=SoftMask(bg),
        disc=SoftMask(disc),
        raw=RawPriors(fg_cosine=fg_cosine, bg_cosine=bg_cosine, disc_pre=disc_pre),
        bg_fallback=bg_fallback,
    )


def average_priors(sets: List[PriorSet]) -> PriorSet:
    """Elementwise mean of per-support prior sets"""
    if not sets:
        raise EmptyInputError("no prior sets to average")
    if len(sets) == 1:
        return sets[0]
    return PriorSet(
        fg=SoftMask(running_mean(s.fg.data for s in sets)),
        bg=SoftMask(running_mean(s.bg.data for s in sets)),
        disc=SoftMask(running_mean(s.disc.data for s in sets)),
        bg_fallback=any(s.bg_fallback for s in sets),
    )


def encode_memory(features: FeatureMap, mask: SoftMask, gain: float = 0.0) -> Memory:
    """Mask-gated gain modulation: features * (1 + gain * mask)"""
    if features.spatial_shape != mask.spatial_shape:
        raise ShapeMismatchError(
            f"features {features.spatial_shape} and mask {mask.spatial_shape} differ")
    if gain < 0:
        raise ValueError(f"gain must be >= 0, got {gain}")
    if gain == 0.0:
        return Memory(features=features, prior=mask)
    scale = 1.0 + gain * mask.data
    return Memory(features=FeatureMap(features.data * scale[..., None]), prior=mask)
