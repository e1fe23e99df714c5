"""
Episodic orchestration: priors, refinement, attention, readout and metrics.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import EmptyInputError, EpisodeError, FssamError
from .imr import refine
from .models import (Episode, PipelineConfig, ProjectionSet, SoftMask, Prototype, PriorSet,
                     RefinementTrace, EpisodeRecord, MetricsReport, LayerScoreStats,
                     SuppressionReport, AblationRow, AblationReport)
from .numerics import masked_gap, cosine_map, minmax_norm, running_mean
from .ppg import make_priors, average_priors, encode_memory
from .scma import make_projections, attention_stack

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = [
    ('Baseline', False, False, 'support'),
    ('PPG', False, False, 'pseudo'),
    ('PPG+IMR', True, False, 'pseudo'),
    ('PPG+SCMA', False, True, 'pseudo'),
    ('Full', True, True, 'pseudo'),
]


@dataclass
class EpisodeDiagnostics:
    priors: PriorSet
    refined_prior: SoftMask
    trace: RefinementTrace
    score_map: np.ndarray
    scma_similarity_passes: int = 0
    layer_stats: List[LayerScoreStats] = field(default_factory=list)


def build_projections(cfg: PipelineConfig, channels: int) -> ProjectionSet:
    """Cross-attention projections for a feature width"""
    return make_projections(channels, cfg.projection_width or channels, cfg.projection_seed)


def _layer_stats(diagnostics, gt: np.ndarray, disc_prior: np.ndarray) -> List[LayerScoreStats]:
    """
    Score sums over (query-FG row, true-BG memory column) pairs per layer.

    The unexpected-BG sums weight each memory column by ReLU(disc_prior - gt),
    the Disc prior mass that landed outside the true mask.
    """
    flat = gt.reshape(-1) > 0.5
    rows = np.flatnonzero(flat)
    cols = np.flatnonzero(~flat)
    weights = np.maximum(disc_prior.reshape(-1) - gt.reshape(-1), 0.0)
    stats = []
    for layer, diag in enumerate(diagnostics):
        entry = LayerScoreStats(layer=layer)
        if rows.size and cols.size:
            block = np.ix_(rows, cols)
            entry.pre_sum = float(diag.pre_scores[block].sum())
            entry.post_sum = float(diag.post_scores[block].sum())
            entry.pairs = int(rows.size * cols.size)
        if rows.size and weights.any():
            entry.unexpected_pre_sum = float((diag.pre_scores[rows] * weights).sum())
            entry.unexpected_post_sum = float((diag.post_scores[rows] * weights).sum())
            entry.unexpected_weight = float(rows.size * weights.sum())
        stats.append(entry)
    return stats


def run_episode(ep: Episode, cfg: PipelineConfig, proj: ProjectionSet,
                collect_stats: bool = False) -> Tuple[SoftMask, EpisodeDiagnostics]:
    """Predict the query mask of one episode"""
    eps = cfg.epsilon
    query = ep.query_feats

    priors = average_priors([make_priors(query, feats, mask, eps) for feats, mask in ep.supports])
    if priors.bg_fallback:
        logger.warning("Episode has a support without background; BG prior fell back to zeros")

    support_mems = [encode_memory(feats, mask, cfg.memory_gain) for feats, mask in ep.supports]
    fg_mem = encode_memory(query, priors.fg, cfg.memory_gain)
    disc_mem = encode_memory(query, priors.disc, cfg.memory_gain)

    disc_prior = priors.disc
    trace = RefinementTrace()
    if cfg.use_imr and cfg.imr_iterations > 0:
        disc_mem, disc_prior, trace = refine(
            disc_mem, disc_prior, fg_mem, support_mems, cfg.imr_iterations, eps)

    override = None
    if cfg.memory_source == 'support':
        override = np.concatenate([mem.features.flat() for mem in support_mems])
    fused, diagnostics = attention_stack(
        query, disc_mem, support_mems, proj, cfg.attention_config(query.channels),
        calibrated=cfg.use_scma_calibration, memory_override=override)

    if cfg.head == 'prior':
        score = disc_prior.data
    else:
        proto = Prototype(running_mean(masked_gap(feats, mask).data for feats, mask in ep.supports))
        score = minmax_norm(cosine_map(fused, proto, eps))

    prediction = SoftMask((score >= cfg.threshold).astype(np.float64))
    details = EpisodeDiagnostics(
        priors=priors,
        refined_prior=disc_prior,
        trace=trace,
        score_map=score,
        scma_similarity_passes=sum(diag.similarity_passes for diag in diagnostics),
    )
    if collect_stats:
        details.layer_stats = _layer_stats(diagnostics, ep.query_gt.data, disc_prior.data)
    return prediction, details


def score_episode(index: int, ep: Episode, prediction: SoftMask) -> EpisodeRecord:
    pred = prediction.data > 0.5
    gt = ep.query_gt.data > 0.5
    return EpisodeRecord(
        index=index,
        class_id=ep.class_id,
        fg_intersection=int(np.sum(pred & gt)),
        fg_union=int(np.sum(pred | gt)),
        bg_intersection=int(np.sum(~pred & ~gt)),
        bg_union=int(np.sum(~pred | ~gt)),
    )


def _ratio(intersection: int, union: int) -> float:
    return intersection / union if union else 1.0


def summarize(records: List[EpisodeRecord]) -> MetricsReport:
    """Aggregate per-episode counts; intersections and unions are summed per class before dividing"""
    if not records:
        raise EmptyInputError("no episode records to summarize")
    per_class: Dict[int, List[int]] = {}
    fg_i = fg_u = bg_i = bg_u = 0
    for record in sorted(records, key=lambda r: r.index):
        counts = per_class.setdefault(record.class_id, [0, 0])
        counts[0] += record.fg_intersection
        counts[1] += record.fg_union
        fg_i += record.fg_intersection
        fg_u += record.fg_union
        bg_i += record.bg_intersection
        bg_u += record.bg_union

    class_iou = {cls: _ratio(i, u) for cls, (i, u) in sorted(per_class.items())}
    fg_iou = _ratio(fg_i, fg_u)
    bg_iou = _ratio(bg_i, bg_u)
    return MetricsReport(
        class_iou=class_iou,
        miou=sum(class_iou.values()) / len(class_iou),
        fb_iou=(fg_iou + bg_iou) / 2,
        fg_iou=fg_iou,
        bg_iou=bg_iou,
        episode_count=len(records),
        records=sorted(records, key=lambda r: r.index),
    )


def _map_episodes(func, episodes: Sequence[Episode], workers: int, desc: str, show_progress: bool):
    """Apply func(index, episode) to every episode; results keep episode order"""
    def guarded(item):
        index, ep = item
        try:
            return func(index, ep)
        except FssamError as e:
            raise EpisodeError(index, e) from e
        except ValueError as e:
            raise EpisodeError(index, e) from e

    items = list(enumerate(episodes))
    with tqdm(total=len(items), desc=desc, disable=not show_progress) as bar:
        if workers <= 1:
            results = []
            for item in items:
                results.append(guarded(item))
                bar.update(1)
            return results
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = []
            for result in pool.map(guarded, items):
                results.append(result)
                bar.update(1)
            return results


def evaluate(episodes: Sequence[Episode], cfg: PipelineConfig, proj: Optional[ProjectionSet] = None,
             show_progress: bool = False) -> MetricsReport:
    """Run every episode and compute mIoU and FB-IoU"""
    if not episodes:
        raise EmptyInputError("no episodes to evaluate")
    cfg.validate()
    if proj is None:
        proj = build_projections(cfg, episodes[0].query_feats.channels)
    logger.info(f"Evaluating {len(episodes)} episodes "
                f"(imr={cfg.use_imr}, n={cfg.imr_iterations}, scma={cfg.use_scma_calibration}, head={cfg.head})")

    def run(index, ep):
        prediction, _ = run_episode(ep, cfg, proj)
        return score_episode(index, ep, prediction)

    records = _map_episodes(run, episodes, cfg.workers, 'Evaluating', show_progress)
    report = summarize(records)
    logger.info(f"mIoU {report.miou:.4f}, FB-IoU {report.fb_iou:.4f}")
    return report


def ablation_suite(episodes: Sequence[Episode], cfg: PipelineConfig, proj: Optional[ProjectionSet] = None,
                   show_progress: bool = False) -> AblationReport:
    """
    Evaluate the support-memory baseline, PPG-only, PPG+IMR, PPG+SCMA and the full pipeline.

    The baseline attends to the concatenated support memories and is always
    read out through the fused head, since it has no refined prior of its own.
    """
    result = AblationReport()
    for name, use_imr, use_scma, memory_source in ABLATION_VARIANTS:
        variant = replace(cfg, use_imr=use_imr, use_scma_calibration=use_scma, memory_source=memory_source)
        if memory_source == 'support':
            variant = replace(variant, head='fused')
        logger.info(f"Ablation variant {name}")
        result.rows.append(AblationRow(
            name=name,
            use_imr=use_imr,
            use_scma_calibration=use_scma,
            memory_source=memory_source,
            report=evaluate(episodes, variant, proj, show_progress),
        ))
    return result


def sweep_iterations(episodes: Sequence[Episode], cfg: PipelineConfig, proj: Optional[ProjectionSet] = None,
                     iterations: Sequence[int] = (0, 1, 2, 3, 4),
                     show_progress: bool = False) -> Dict[int, MetricsReport]:
    """Evaluate the pipeline once per refinement iteration count"""
    return {
        n: evaluate(episodes, replace(cfg, imr_iterations=n), proj, show_progress)
        for n in iterations
    }


def suppression_stats(episodes: Sequence[Episode], cfg: PipelineConfig, proj: Optional[ProjectionSet] = None,
                      show_progress: bool = False) -> SuppressionReport:
    """Per-layer mean cross-attention score on query-FG rows and true-BG memory columns, before and after calibration"""
    if not episodes:
        raise EmptyInputError("no episodes to measure")
    cfg = replace(cfg, use_scma_calibration=True, memory_source='pseudo').validate()
    if proj is None:
        proj = build_projections(cfg, episodes[0].query_feats.channels)

    def run(index, ep):
        _, details = run_episode(ep, cfg, proj, collect_stats=True)
        return details.layer_stats

    per_episode = _map_episodes(run, episodes, cfg.workers, 'Measuring', show_progress)
    layers = [LayerScoreStats(layer=layer) for layer in range(cfg.attention_layers)]
    for stats in per_episode:
        for total, entry in zip(layers, stats):
            total.merge(entry)
    return SuppressionReport(layers=layers, episode_count=len(episodes))
