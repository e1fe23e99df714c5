"""
Synthetic episodes with known ground truth.

Every class owns a fixed unit vector. FG pixels carry the class vector, BG
pixels carry the neutral vector or, inside distractor squares, another
class's vector. Gaussian noise is added per channel.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import qr

from .errors import InvalidSpecError
from .models import Episode, FeatureMap, SoftMask, SynthSpec
from .numerics import cosine_rows

Rect = Tuple[int, int, int, int]

PLACEMENT_ATTEMPTS = 200


class EpisodeGenerator:
    """Seeded generator of synthetic few-shot episodes"""

    def __init__(self, spec: SynthSpec):
        self.logger = logging.getLogger(__name__)
        self.spec = spec.validate()
        self.class_vectors, self.neutral = self._make_vectors()

    def _make_vectors(self) -> Tuple[np.ndarray, np.ndarray]:
        """Class vectors (rows) and the neutral vector, mutually orthonormal when channels allow"""
        spec = self.spec
        rng = np.random.default_rng([spec.seed, 0])
        count = spec.num_classes + 1
        if count <= spec.channels:
            basis, r = qr(rng.standard_normal((spec.channels, count)), mode='economic')
            basis = basis * np.where(np.diag(r) < 0, -1.0, 1.0)
            vectors = basis.T
        else:
            self.logger.warning(f"{count} vectors do not fit {spec.channels} channels; using random unit vectors")
            vectors = rng.standard_normal((count, spec.channels))
            vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        return vectors[:-1], vectors[-1]

    def distractor_vector(self, class_id: int, other: int) -> np.ndarray:
        """Another class's vector tilted towards the episode class by the distractor similarity"""
        rho = self.spec.distractor_similarity
        vector = rho * self.class_vectors[class_id] + np.sqrt(1.0 - rho ** 2) * self.class_vectors[other]
        return vector / np.linalg.norm(vector)

    def _random_rect(self, rng: np.random.Generator, low: int, high: int) -> Rect:
        h = int(rng.integers(low, high + 1))
        w = int(rng.integers(low, high + 1))
        top = int(rng.integers(0, self.spec.height - h + 1))
        left = int(rng.integers(0, self.spec.width - w + 1))
        return top, left, h, w

    def _place_distractor(self, rng: np.random.Generator, fg: np.ndarray) -> Optional[Rect]:
        size = self.spec.distractor_size
        for _ in range(PLACEMENT_ATTEMPTS):
            top, left, h, w = self._random_rect(rng, size, size)
            if not fg[top:top + h, left:left + w].any():
                return top, left, h, w
        return None

    def render(self, rng: np.random.Generator, class_id: int, with_part: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Render one image.

        Returns (features H x W x C, FG mask, distractor mask).
        """
        spec = self.spec
        fg = np.zeros((spec.height, spec.width), dtype=bool)
        rects = [self._random_rect(rng, spec.min_fg_size, spec.max_fg_size) for _ in range(spec.fg_rectangles)]
        for top, left, h, w in rects:
            fg[top:top + h, left:left + w] = True

        features = np.broadcast_to(self.neutral, (spec.height, spec.width, spec.channels)).copy()
        distractor_mask = np.zeros_like(fg)
        others = [c for c in range(spec.num_classes) if c != class_id]
        for _ in range(spec.distractors):
            other = others[int(rng.integers(len(others)))]
            placed = self._place_distractor(rng, fg)
            if placed is None:
                self.logger.debug("No room for a distractor square; skipping it")
                continue
            top, left, h, w = placed
            features[top:top + h, left:left + w] = self.distractor_vector(class_id, other)
            distractor_mask[top:top + h, left:left + w] = True

        features[fg] = self.class_vectors[class_id]
        if with_part and spec.intra_class_gap > 0 and spec.part_fraction > 0:
            top, left, h, w = rects[0]
            rows = max(1, int(round(h * spec.part_fraction)))
            part = np.zeros_like(fg)
            part[top:top + rows, left:left + w] = True
            features[part] = self.class_vectors[class_id] + spec.intra_class_gap * self.neutral

        noise = rng.standard_normal(features.shape)
        features = features + spec.noise_sigma * noise
        return features, fg, distractor_mask

    def episode_with_distractors(self, index: int) -> Tuple[Episode, np.ndarray]:
        """Episode `index`, drawn from its own derived seed, and the boolean distractor mask of its query"""
        spec = self.spec
        rng = np.random.default_rng([spec.seed, 1, index])
        class_id = int(rng.integers(spec.num_classes))
        query, query_fg, query_distractors = self.render(rng, class_id, with_part=True)
        supports = []
        for _ in range(spec.shots):
            feats, fg, _ = self.render(rng, class_id, with_part=False)
            supports.append((FeatureMap(feats), SoftMask(fg.astype(np.float64))))
        episode = Episode(
            query_feats=FeatureMap(query),
            query_gt=SoftMask(query_fg.astype(np.float64)),
            supports=supports,
            class_id=class_id,
        )
        return episode, query_distractors

    def episode(self, index: int) -> Episode:
        return self.episode_with_distractors(index)[0]

    def generate(self) -> List[Episode]:
        episodes = [self.episode(i) for i in range(self.spec.episodes)]
        self.logger.info(f"Generated {len(episodes)} episodes "
                         f"({self.spec.height}x{self.spec.width}x{self.spec.channels}, k={self.spec.shots})")
        return episodes

    def oracle_error(self, episodes: List[Episode], threshold: float = 0.5) -> float:
        """Pixel error rate of thresholding the cosine to the true class vector on every query"""
        wrong = total = 0
        for ep in episodes:
            cos = cosine_rows(ep.query_feats.flat(), self.class_vectors[ep.class_id])
            pred = cos >= threshold
            gt = ep.query_gt.data.reshape(-1) > 0.5
            wrong += int(np.sum(pred != gt))
            total += gt.size
        return wrong / total


def generate(spec: SynthSpec) -> List[Episode]:
    """Generate the episode set described by a synthetic spec"""
    if spec is None:
        raise InvalidSpecError("missing synthetic spec")
    return EpisodeGenerator(spec).generate()
