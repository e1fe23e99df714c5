import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fssam.errors import MissingSupportError, ShapeMismatchError
from fssam.models import FeatureMap, SoftMask, Memory, ProjectionSet, AttentionStackConfig
from fssam.numerics import row_softmax
from fssam.scma import (make_projections, extra_similarity_count, self_attention,
                        memory_cross_attention, calibrated_cross_attention, calibration_bias,
                        attention_stack)


def random_inputs(seed: int, k: int = 1, h: int = 4, w: int = 5, c: int = 6):
    rng = np.random.default_rng(seed)
    query = FeatureMap(rng.standard_normal((h, w, c)))
    disc_prior = SoftMask(rng.uniform(0.0, 1.0, (h, w)))
    disc_mem = Memory(FeatureMap(rng.standard_normal((h, w, c))), disc_prior)
    supports = []
    for _ in range(k):
        mask = (rng.random((h, w)) < 0.5).astype(np.float64)
        mask[0, 0] = 1.0
        supports.append(Memory(FeatureMap(rng.standard_normal((h, w, c))), SoftMask(mask)))
    return query, disc_mem, supports


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.sampled_from([None, 3]),
       st.sampled_from(['row', 'global']))
def test_calibration_invariants(seed, k, width, axis):
    query, disc_mem, supports = random_inputs(seed, k)
    proj = make_projections(query.channels, width or query.channels, seed=seed % 97)
    cfg = AttentionStackConfig(layers=1, alpha=10.0, norm_axis=axis)
    _, diag = calibrated_cross_attention(query, disc_mem, supports, proj, cfg)

    assert np.all(diag.post_scores <= diag.pre_scores)
    assert np.allclose(row_softmax(diag.post_scores).sum(axis=-1), 1.0, atol=1e-6)
    assert diag.similarity_passes == k == extra_similarity_count(k)

    unbiased = diag.support_similarity == 1.0
    assert np.array_equal(diag.post_scores[:, unbiased], diag.pre_scores[:, unbiased])


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_zero_alpha_is_plain_attention(seed):
    query, disc_mem, supports = random_inputs(seed)
    proj = make_projections(query.channels, query.channels)
    out, diag = calibrated_cross_attention(query, disc_mem, supports, proj,
                                           AttentionStackConfig(layers=1, alpha=0.0))
    plain = memory_cross_attention(query, disc_mem.features.flat(), proj)
    assert np.array_equal(out.data, plain.data)
    assert not diag.calibrated


def test_constant_support_similarity_is_uncalibrated():
    rng = np.random.default_rng(11)
    query = FeatureMap(rng.standard_normal((3, 4, 5)))
    flat = np.broadcast_to(rng.standard_normal(5), (3, 4, 5))
    disc_mem = Memory(FeatureMap(flat), SoftMask(np.ones((3, 4))))
    _, _, supports = random_inputs(12, k=2, h=3, w=4, c=5)
    proj = make_projections(5, 5)
    cfg = AttentionStackConfig(layers=2, alpha=10.0)

    calibrated, diagnostics = attention_stack(query, disc_mem, supports, proj, cfg, calibrated=True)
    plain, _ = attention_stack(query, disc_mem, supports, proj, cfg, calibrated=False)
    assert np.array_equal(calibrated.data, plain.data)
    assert all(np.all(diag.support_similarity == 1.0) for diag in diagnostics)


def test_zero_output_projection_returns_input():
    query, disc_mem, supports = random_inputs(13)
    c = query.channels
    proj = ProjectionSet(theta_q=np.eye(c), theta_k=np.eye(c), theta_v=np.eye(c),
                         theta_out=np.zeros((c, c)))
    out, _ = calibrated_cross_attention(query, disc_mem, supports, proj, AttentionStackConfig())
    assert np.array_equal(out.data, query.data)
    assert np.array_equal(self_attention(query, proj).data, query.data)


def test_calibration_bias_row():
    bias = calibration_bias(np.array([[1.0, 0.2, 0.0]]), np.array([1.0, 0.1, 1.0]), alpha=10.0)
    assert bias[0, 0] == 0.0 and bias[0, 2] == 0.0
    assert bias[0, 1] == pytest.approx(-7.0)


def test_fg_row_turns_away_from_distractor():
    """An FG query pixel attends less to a distractor the supports do not back up"""
    fg, distractor, neutral = np.eye(3)
    tilted = 0.3 * fg + np.sqrt(1 - 0.3 ** 2) * distractor
    pixels = np.array([fg, fg, tilted, tilted, neutral, neutral])
    memory = FeatureMap(pixels.reshape(1, 6, 3))
    disc_mem = Memory(memory, SoftMask(np.array([[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]])))
    support = Memory(FeatureMap(np.array([[fg, fg, neutral, neutral, neutral, neutral]])),
                     SoftMask(np.array([[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]])))
    proj = make_projections(3, 3)

    _, diag = calibrated_cross_attention(memory, disc_mem, [support], proj, AttentionStackConfig(alpha=10.0))
    before = row_softmax(diag.pre_scores)[0]
    after = row_softmax(diag.post_scores)[0]
    assert np.all(diag.post_scores[0, 2:4] < diag.pre_scores[0, 2:4])
    assert np.array_equal(diag.post_scores[0, :2], diag.pre_scores[0, :2])
    assert after[2:4].sum() < before[2:4].sum()
    assert after[:2].sum() > before[:2].sum()


def test_projections():
    identity = make_projections(4, 4)
    for theta in (identity.theta_q, identity.theta_k, identity.theta_v, identity.theta_out):
        assert np.array_equal(theta, np.eye(4))
    first = make_projections(8, 3, seed=5)
    again = make_projections(8, 3, seed=5)
    assert np.array_equal(first.theta_k, again.theta_k)
    assert np.allclose(first.theta_q.T @ first.theta_q, np.eye(3))
    assert first.theta_out.shape == (3, 8)
    with pytest.raises(ValueError):
        make_projections(0, 3)


def test_stack_layers_and_counters():
    query, disc_mem, supports = random_inputs(21, k=2)
    proj = make_projections(query.channels, query.channels)
    out, diagnostics = attention_stack(query, disc_mem, supports, proj, AttentionStackConfig(layers=4))
    assert out.data.shape == query.data.shape
    assert len(diagnostics) == 4
    assert sum(diag.similarity_passes for diag in diagnostics) == extra_similarity_count(2, layers=4) == 8


def test_support_memory_override_skips_diagnostics():
    query, disc_mem, supports = random_inputs(22, k=2)
    proj = make_projections(query.channels, query.channels)
    stacked = np.concatenate([mem.features.flat() for mem in supports])
    out, diagnostics = attention_stack(query, disc_mem, supports, proj, AttentionStackConfig(layers=2),
                                       memory_override=stacked)
    assert diagnostics == []
    assert out.data.shape == query.data.shape


def test_missing_support_and_shape_errors():
    query, disc_mem, _ = random_inputs(23)
    proj = make_projections(query.channels, query.channels)
    with pytest.raises(MissingSupportError):
        calibrated_cross_attention(query, disc_mem, [], proj, AttentionStackConfig())
    with pytest.raises(MissingSupportError):
        extra_similarity_count(0)
    with pytest.raises(ShapeMismatchError):
        self_attention(query, make_projections(query.channels + 1, 2))
    with pytest.raises(ShapeMismatchError):
        memory_cross_attention(query, np.ones((7, query.channels + 1)), proj)
