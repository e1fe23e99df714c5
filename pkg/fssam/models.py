from dataclasses import dataclass, field, fields, asdict
from typing import Dict, List, Optional, Any, Tuple
import math

import numpy as np

from .errors import ShapeMismatchError, ConfigError, InvalidSpecError


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    """Copy values into a read-only float64 array of the given rank"""
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {array.shape}")
    if array.size == 0:
        raise ShapeMismatchError(f"{name} must not be empty, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense H x W x C feature grid"""
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 3, 'FeatureMap'))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def flat(self) -> np.ndarray:
        """Pixels as an (H*W) x C matrix, row-major"""
        return self.data.reshape(-1, self.channels)


@dataclass(frozen=True, eq=False)
class SoftMask:
    """H x W grid of values in [0, 1]"""
    data: np.ndarray

    def __post_init__(self):
        array = _frozen_array(self.data, 2, 'SoftMask')
        if array.min() < 0.0 or array.max() > 1.0:
            raise ValueError(f"SoftMask values must lie in [0, 1], got [{array.min()}, {array.max()}]")
        object.__setattr__(self, 'data', array)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return self.data.shape

    def is_binary(self) -> bool:
        return bool(np.all((self.data == 0.0) | (self.data == 1.0)))


@dataclass(frozen=True, eq=False)
class Prototype:
    """Channel-space vector pooled from a feature map region"""
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 1, 'Prototype'))

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class Memory:
    """Feature map encoded together with the mask used to encode it"""
    features: FeatureMap
    prior: SoftMask

    def __post_init__(self):
        if self.features.spatial_shape != self.prior.spatial_shape:
            raise ShapeMismatchError(
                f"memory features {self.features.spatial_shape} and prior {self.prior.spatial_shape} differ")


@dataclass(frozen=True, eq=False)
class RawPriors:
    """Intermediates of prior generation, before the final normalization"""
    fg_cosine: np.ndarray
    bg_cosine: np.ndarray
    disc_pre: np.ndarray


@dataclass(frozen=True, eq=False)
class PriorSet:
    """FG, BG and discriminative prior masks for one query"""
    fg: SoftMask
    bg: SoftMask
    disc: SoftMask
    raw: Optional[RawPriors] = None
    bg_fallback: bool = False

    def __post_init__(self):
        shapes = {self.fg.spatial_shape, self.bg.spatial_shape, self.disc.spatial_shape}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"prior masks disagree on shape: {sorted(shapes)}")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """Snapshot of one refinement step"""
    a_qq: np.ndarray
    a_qs: np.ndarray
    weights: np.ndarray
    prior: SoftMask
    degenerate: bool = False


@dataclass
class RefinementTrace:
    records: List[IterationRecord] = field(default_factory=list)
    similarity_passes: int = 0

    @property
    def degenerate(self) -> bool:
        return any(record.degenerate for record in self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """Projection matrices for one attention block"""
    theta_q: np.ndarray
    theta_k: np.ndarray
    theta_v: np.ndarray
    theta_out: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ('theta_q', 'theta_k', 'theta_v', 'theta_out'):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), 2, name))
        channels, width = self.theta_q.shape
        for name in ('theta_k', 'theta_v'):
            if getattr(self, name).shape != (channels, width):
                raise ShapeMismatchError(f"{name} must be {channels}x{width}")
        if self.theta_out.shape != (width, channels):
            raise ShapeMismatchError(f"theta_out must be {width}x{channels}")

    @property
    def channels(self) -> int:
        return self.theta_q.shape[0]

    @property
    def width(self) -> int:
        return self.theta_q.shape[1]


@dataclass(frozen=True)
class AttentionStackConfig:
    layers: int = 4
    alpha: float = 10.0
    epsilon: float = 1e-8
    d: Optional[int] = None
    norm_axis: str = 'row'

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.norm_axis not in ('row', 'global'):
            raise ValueError(f"norm_axis must be 'row' or 'global', got {self.norm_axis!r}")


@dataclass(frozen=True, eq=False)
class CrossAttentionDiagnostics:
    """Scores of one cross-attention pass, before and after calibration"""
    pre_scores: np.ndarray
    post_scores: np.ndarray
    support_similarity: np.ndarray
    similarity_passes: int
    calibrated: bool


@dataclass(frozen=True, eq=False)
class Episode:
    """One query plus k annotated supports of the same class"""
    query_feats: FeatureMap
    query_gt: SoftMask
    supports: List[Tuple[FeatureMap, SoftMask]]
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'supports', list(self.supports))
        if not self.supports:
            raise ShapeMismatchError("episode needs at least one support")
        if self.query_feats.spatial_shape != self.query_gt.spatial_shape:
            raise ShapeMismatchError("query features and ground truth differ in shape")
        if not self.query_gt.is_binary():
            raise ValueError("query ground truth must be binary")
        for i, (feats, mask) in enumerate(self.supports):
            if feats.data.shape != self.query_feats.data.shape:
                raise ShapeMismatchError(
                    f"support {i} features {feats.data.shape} differ from query {self.query_feats.data.shape}")
            if mask.spatial_shape != feats.spatial_shape:
                raise ShapeMismatchError(f"support {i} mask shape differs from its features")
            if not mask.is_binary():
                raise ValueError(f"support {i} mask must be binary")
            if mask.data.sum() == 0:
                raise ValueError(f"support {i} mask has an empty foreground")

    @property
    def shots(self) -> int:
        return len(self.supports)


def _check_keys(cls, data: Dict[str, Any], error=ConfigError) -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise error(f"unknown {cls.__name__} key: {key!r}")


def _coerce(cls, data: Dict[str, Any], error=ConfigError) -> Dict[str, Any]:
    """Type-check JSON values against the dataclass defaults"""
    defaults = cls()
    values = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise error(f"{key} must be a boolean, got {value!r}")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise error(f"{key} must be an integer, got {value!r}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise error(f"{key} must be a number, got {value!r}")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise error(f"{key} must be a string, got {value!r}")
        elif default is None and value is not None:
            if isinstance(value, bool) or not isinstance(value, int):
                raise error(f"{key} must be an integer or null, got {value!r}")
        values[key] = value
    return values


@dataclass
class PipelineConfig:
    """All constants of the matching pipeline"""
    imr_iterations: int = 3
    alpha: float = 10.0
    epsilon: float = 1e-8
    attention_layers: int = 4
    memory_gain: float = 0.0
    head: str = 'fused'
    threshold: float = 0.5
    use_imr: bool = True
    use_scma_calibration: bool = True
    projection_seed: int = 0
    projection_width: Optional[int] = None
    score_norm_axis: str = 'row'
    memory_source: str = 'pseudo'
    workers: int = 1

    def validate(self) -> 'PipelineConfig':
        for name in ('alpha', 'epsilon', 'memory_gain', 'threshold'):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.imr_iterations < 0:
            raise ConfigError(f"imr_iterations must be >= 0, got {self.imr_iterations}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.attention_layers < 1:
            raise ConfigError(f"attention_layers must be >= 1, got {self.attention_layers}")
        if self.memory_gain < 0:
            raise ConfigError(f"memory_gain must be >= 0, got {self.memory_gain}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.head not in ('fused', 'prior'):
            raise ConfigError(f"head must be 'fused' or 'prior', got {self.head!r}")
        if self.score_norm_axis not in ('row', 'global'):
            raise ConfigError(f"score_norm_axis must be 'row' or 'global', got {self.score_norm_axis!r}")
        if self.memory_source not in ('pseudo', 'support'):
            raise ConfigError(f"memory_source must be 'pseudo' or 'support', got {self.memory_source!r}")
        if self.projection_width is not None and self.projection_width < 1:
            raise ConfigError(f"projection_width must be >= 1, got {self.projection_width}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        return self

    def attention_config(self, channels: int) -> AttentionStackConfig:
        return AttentionStackConfig(
            layers=self.attention_layers,
            alpha=self.alpha,
            epsilon=self.epsilon,
            d=self.projection_width or channels,
            norm_axis=self.score_norm_axis,
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PipelineConfig':
        """Create a config from JSON data, rejecting unknown keys"""
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(cls, data)
        return cls(**_coerce(cls, data)).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SynthSpec:
    """Parameters of a synthetic episode set"""
    height: int = 32
    width: int = 32
    channels: int = 16
    num_classes: int = 4
    noise_sigma: float = 0.0
    distractors: int = 0
    fg_rectangles: int = 1
    min_fg_size: int = 6
    max_fg_size: int = 14
    distractor_size: int = 7
    intra_class_gap: float = 0.0
    part_fraction: float = 0.4
    distractor_similarity: float = 0.0
    shots: int = 1
    episodes: int = 10
    seed: int = 0

    def validate(self) -> 'SynthSpec':
        for name in ('height', 'width', 'channels', 'num_classes', 'fg_rectangles',
                     'min_fg_size', 'max_fg_size', 'shots', 'episodes'):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.min_fg_size > self.max_fg_size:
            raise InvalidSpecError("min_fg_size exceeds max_fg_size")
        if self.max_fg_size > min(self.height, self.width):
            raise InvalidSpecError(
                f"FG size {self.max_fg_size} does not fit a {self.height}x{self.width} image")
        if self.distractors < 0:
            raise InvalidSpecError("distractors must be >= 0")
        if self.seed < 0:
            raise InvalidSpecError("seed must be >= 0")
        if self.distractors and self.distractor_size > min(self.height, self.width):
            raise InvalidSpecError("distractor_size does not fit the image")
        if self.noise_sigma < 0 or self.intra_class_gap < 0:
            raise InvalidSpecError("noise_sigma and intra_class_gap must be >= 0")
        if not 0.0 <= self.part_fraction < 1.0:
            raise InvalidSpecError("part_fraction must lie in [0, 1)")
        if not 0.0 <= self.distractor_similarity < 1.0:
            raise InvalidSpecError("distractor_similarity must lie in [0, 1)")
        if self.distractors and self.num_classes < 2:
            raise InvalidSpecError("distractors need at least 2 classes")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SynthSpec':
        if not isinstance(data, dict):
            raise InvalidSpecError("synthetic spec must be a JSON object")
        _check_keys(cls, data, InvalidSpecError)
        return cls(**_coerce(cls, data, InvalidSpecError)).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EpisodeRecord:
    """Pixel counts of one evaluated episode"""
    index: int
    class_id: int
    fg_intersection: int
    fg_union: int
    bg_intersection: int
    bg_union: int

    @property
    def iou(self) -> float:
        return self.fg_intersection / self.fg_union if self.fg_union else 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'class_id': self.class_id,
            'fg_intersection': self.fg_intersection,
            'fg_union': self.fg_union,
            'bg_intersection': self.bg_intersection,
            'bg_union': self.bg_union,
            'iou': self.iou,
        }


@dataclass
class MetricsReport:
    """Episodic segmentation metrics"""
    class_iou: Dict[int, float]
    miou: float
    fb_iou: float
    fg_iou: float
    bg_iou: float
    episode_count: int
    records: List[EpisodeRecord] = field(default_factory=list)

    @property
    def mean_episode_iou(self) -> float:
        if not self.records:
            return 0.0
        return math.fsum(record.iou for record in self.records) / len(self.records)

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to dictionary for JSON serialization"""
        return {
            'miou': self.miou,
            'fb_iou': self.fb_iou,
            'fg_iou': self.fg_iou,
            'bg_iou': self.bg_iou,
            'mean_episode_iou': self.mean_episode_iou,
            'episode_count': self.episode_count,
            'class_iou': {str(k): v for k, v in sorted(self.class_iou.items())},
            'episodes': [record.to_dict() for record in self.records],
        }


@dataclass
class LayerScoreStats:
    """
    Sums of cross-attention scores over (query-FG row, true-BG memory column) pairs.

    The `unexpected_*` sums cover the same query rows but weight each memory
    column by the Disc prior mass outside the true mask.
    """
    layer: int
    pre_sum: float = 0.0
    post_sum: float = 0.0
    pairs: int = 0
    unexpected_pre_sum: float = 0.0
    unexpected_post_sum: float = 0.0
    unexpected_weight: float = 0.0

    def merge(self, other: 'LayerScoreStats') -> None:
        self.pre_sum += other.pre_sum
        self.post_sum += other.post_sum
        self.pairs += other.pairs
        self.unexpected_pre_sum += other.unexpected_pre_sum
        self.unexpected_post_sum += other.unexpected_post_sum
        self.unexpected_weight += other.unexpected_weight

    @property
    def pre_mean(self) -> float:
        return self.pre_sum / self.pairs if self.pairs else 0.0

    @property
    def post_mean(self) -> float:
        return self.post_sum / self.pairs if self.pairs else 0.0

    @property
    def unexpected_pre_mean(self) -> float:
        return self.unexpected_pre_sum / self.unexpected_weight if self.unexpected_weight else 0.0

    @property
    def unexpected_post_mean(self) -> float:
        return self.unexpected_post_sum / self.unexpected_weight if self.unexpected_weight else 0.0

    @staticmethod
    def _relative(pre: float, post: float) -> float:
        return 0.0 if pre == 0.0 else (post - pre) / abs(pre)

    @property
    def gap(self) -> float:
        """Relative change of the mean score, (post - pre) / |pre|"""
        return self._relative(self.pre_mean, self.post_mean)

    @property
    def unexpected_gap(self) -> float:
        return self._relative(self.unexpected_pre_mean, self.unexpected_post_mean)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'layer': self.layer,
            'pairs': self.pairs,
            'pre_mean': self.pre_mean,
            'post_mean': self.post_mean,
            'gap_percent': round(self.gap * 100, 2),
            'unexpected_weight': self.unexpected_weight,
            'unexpected_pre_mean': self.unexpected_pre_mean,
            'unexpected_post_mean': self.unexpected_post_mean,
            'unexpected_gap_percent': round(self.unexpected_gap * 100, 2),
        }


@dataclass
class SuppressionReport:
    layers: List[LayerScoreStats] = field(default_factory=list)
    episode_count: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'episode_count': self.episode_count,
            'layers': [layer.to_dict() for layer in self.layers],
        }


@dataclass
class AblationRow:
    name: str
    use_imr: bool
    use_scma_calibration: bool
    memory_source: str
    report: MetricsReport


@dataclass
class AblationReport:
    """Metrics under each component combination, in a fixed order"""
    rows: List[AblationRow] = field(default_factory=list)

    def row(self, name: str) -> AblationRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        baseline = self.rows[0].report if self.rows else None
        return {
            'variants': [
                {
                    'name': row.name,
                    'use_imr': row.use_imr,
                    'use_scma_calibration': row.use_scma_calibration,
                    'memory_source': row.memory_source,
                    'miou': row.report.miou,
                    'fb_iou': row.report.fb_iou,
                    'mean_episode_iou': row.report.mean_episode_iou,
                    'delta_miou': row.report.miou - baseline.miou,
                    'delta_fb_iou': row.report.fb_iou - baseline.fb_iou,
                }
                for row in self.rows
            ],
        }
