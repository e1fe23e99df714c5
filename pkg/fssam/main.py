import json
import logging
import os
from typing import Any, Dict, List, Optional

import pandas as pd

from .datagen import EpisodeGenerator
from .errors import FeatureFileError
from .imr import refine
from .io import read_episodes, write_episodes, read_feature_file, write_feature_file, write_pgm
from .models import (FeatureMap, SoftMask, PipelineConfig, SynthSpec, MetricsReport,
                     AblationReport, SuppressionReport)
from .pipeline import evaluate, ablation_suite, sweep_iterations, suppression_stats
from .ppg import make_priors, encode_memory

logger = logging.getLogger(__name__)


def save_report(report: Dict[str, Any], output_file: str) -> None:
    """Write a report as JSON; identical inputs give byte-identical files"""
    folder = os.path.dirname(output_file)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(output_file, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=4, sort_keys=True)
        f.write('\n')
    logger.info(f"Report saved to {output_file}")


def metrics_table(report: MetricsReport) -> pd.DataFrame:
    rows = [{'class': str(cls), 'iou': iou} for cls, iou in sorted(report.class_iou.items())]
    rows.append({'class': 'mIoU', 'iou': report.miou})
    rows.append({'class': 'FB-IoU', 'iou': report.fb_iou})
    return pd.DataFrame(rows).set_index('class')


def ablation_table(report: AblationReport) -> pd.DataFrame:
    frame = pd.DataFrame(report.to_dict()['variants'])
    return frame[['name', 'memory_source', 'use_imr', 'use_scma_calibration', 'miou', 'fb_iou',
                  'mean_episode_iou', 'delta_miou']].set_index('name')


def stats_table(report: SuppressionReport) -> pd.DataFrame:
    frame = pd.DataFrame([layer.to_dict() for layer in report.layers])
    return frame.set_index('layer')


def sweep_table(reports: Dict[int, MetricsReport]) -> pd.DataFrame:
    rows = [{'iterations': n, 'miou': r.miou, 'fb_iou': r.fb_iou, 'mean_episode_iou': r.mean_episode_iou}
            for n, r in reports.items()]
    return pd.DataFrame(rows).set_index('iterations')


def print_table(title: str, table: pd.DataFrame) -> None:
    print(f"\n{title}")
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))


def run_generation(spec: SynthSpec, out_dir: str) -> int:
    """Generate a synthetic episode set and write it to disk"""
    generator = EpisodeGenerator(spec)
    episodes = generator.generate()
    write_episodes(out_dir, episodes)
    with open(os.path.join(out_dir, 'spec.json'), 'w', encoding='utf-8') as f:
        json.dump(spec.to_dict(), f, indent=4, sort_keys=True)
    if spec.noise_sigma > 0 or spec.distractors:
        logger.info(f"Oracle pixel error: {generator.oracle_error(episodes):.4f}")
    return len(episodes)


def _load_features(path: str) -> FeatureMap:
    value = read_feature_file(path)
    if not isinstance(value, FeatureMap):
        raise FeatureFileError(f"{path}: expected a feature map file")
    return value


def _load_mask(path: str) -> SoftMask:
    value = read_feature_file(path)
    if not isinstance(value, SoftMask):
        raise FeatureFileError(f"{path}: expected a mask file")
    return value


def _emit_mask(out_dir: str, name: str, mask: SoftMask) -> None:
    write_feature_file(os.path.join(out_dir, f'{name}.fssf'), mask)
    write_pgm(os.path.join(out_dir, f'{name}.pgm'), mask.data)


def run_priors(query_path: str, support_path: str, mask_path: str, out_dir: str,
               cfg: PipelineConfig) -> List[str]:
    """Write FG, BG and Disc priors of a query as FSSF masks and PGM images"""
    priors = make_priors(_load_features(query_path), _load_features(support_path),
                         _load_mask(mask_path), cfg.epsilon)
    os.makedirs(out_dir, exist_ok=True)
    for name, mask in (('fg', priors.fg), ('bg', priors.bg), ('disc', priors.disc)):
        _emit_mask(out_dir, f'prior_{name}', mask)
    logger.info(f"Priors written to {out_dir}")
    return ['prior_fg', 'prior_bg', 'prior_disc']


def run_refinement(query_path: str, support_path: str, mask_path: str, out_dir: str,
                   cfg: PipelineConfig) -> List[str]:
    """Write the Disc prior before and after each refinement iteration"""
    query = _load_features(query_path)
    support = _load_features(support_path)
    mask = _load_mask(mask_path)
    priors = make_priors(query, support, mask, cfg.epsilon)

    fg_mem = encode_memory(query, priors.fg, cfg.memory_gain)
    disc_mem = encode_memory(query, priors.disc, cfg.memory_gain)
    support_mem = encode_memory(support, mask, cfg.memory_gain)
    _, _, trace = refine(disc_mem, priors.disc, fg_mem, [support_mem], cfg.imr_iterations, cfg.epsilon)

    os.makedirs(out_dir, exist_ok=True)
    names = ['refine_iter_0']
    _emit_mask(out_dir, names[0], priors.disc)
    for i, record in enumerate(trace.records, start=1):
        names.append(f'refine_iter_{i}')
        _emit_mask(out_dir, names[-1], record.prior)
    logger.info(f"{len(trace)} refinement snapshots written to {out_dir} "
                f"({trace.similarity_passes} cosine passes)")
    return names


def run_evaluation(episodes_dir: str, cfg: PipelineConfig, shots: Optional[int] = None,
                   output_file: Optional[str] = None, show_progress: bool = False) -> MetricsReport:
    episodes = read_episodes(episodes_dir, shots)
    report = evaluate(episodes, cfg, show_progress=show_progress)
    if output_file:
        save_report({'config': cfg.to_dict(), 'metrics': report.to_dict()}, output_file)
    return report


def run_ablation(episodes_dir: str, cfg: PipelineConfig, shots: Optional[int] = None,
                 output_file: Optional[str] = None, show_progress: bool = False) -> AblationReport:
    episodes = read_episodes(episodes_dir, shots)
    report = ablation_suite(episodes, cfg, show_progress=show_progress)
    if output_file:
        save_report({'config': cfg.to_dict(), 'ablation': report.to_dict()}, output_file)
    return report


def run_stats(episodes_dir: str, cfg: PipelineConfig, shots: Optional[int] = None,
              output_file: Optional[str] = None, show_progress: bool = False) -> SuppressionReport:
    episodes = read_episodes(episodes_dir, shots)
    report = suppression_stats(episodes, cfg, show_progress=show_progress)
    if output_file:
        save_report({'config': cfg.to_dict(), 'suppression': report.to_dict()}, output_file)
    return report


def run_sweep(episodes_dir: str, cfg: PipelineConfig, iterations: List[int], shots: Optional[int] = None,
              output_file: Optional[str] = None, show_progress: bool = False) -> Dict[int, MetricsReport]:
    episodes = read_episodes(episodes_dir, shots)
    reports = sweep_iterations(episodes, cfg, iterations=iterations, show_progress=show_progress)
    if output_file:
        save_report({
            'config': cfg.to_dict(),
            'sweep': {str(n): r.to_dict() for n, r in reports.items()},
        }, output_file)
    return reports
