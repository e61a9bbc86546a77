import math

import numpy as np
import pytest

from analytics.attention import (
    AttentionConfig,
    AttentionInputs,
    baseline_attention,
    modulated_attention,
    modulated_attention_naive,
    run_attention,
)
from analytics.metrics import k_in_block, profile_fwhm
from analytics.modulation import ModulationCurve
from analytics.numerics import DenseMap, DenseMatrix
from analytics.rope import PositionGrid
from analytics.saliency import SaliencyMap, quantize_saliency
from conftest import random_inputs
from errors import DimensionMismatch, InactiveConfig, SaliencyNotQuantized
from report.render import attention_map

REFERENCE = AttentionConfig(ModulationCurve(0.65, 1.0, 3.5, 5), ModulationCurve(0.65, 1.34, 6.5, 5))
IDENTITY = AttentionConfig(ModulationCurve.constant(1.0), ModulationCurve.constant(1.0))


def _random_instance(rng):
    h, w = int(rng.integers(1, 9)), int(rng.integers(2, 9))
    heads = int(rng.integers(1, 3))
    d = int(rng.choice([4, 8, 16, 32]))
    return random_inputs(rng, h, w, heads, d)


def _content_free(width: int, amplitude: float, height: int = 1) -> AttentionInputs:
    t = height * width
    token = np.tile(np.array([amplitude, 0.0, amplitude, 0.0], dtype=np.float32), (t, 1))
    block = DenseMatrix(token)
    return AttentionInputs(
        q_out=block, k_out=block, v_out=block, k_in=block, v_in=block,
        positions_out=PositionGrid.for_grid(height, width),
        positions_in=PositionGrid.for_grid(height, width),
        crop_mask=np.ones((height, width), dtype=bool),
        saliency=SaliencyMap(DenseMap.constant(height, width, 0.0)),
        head_dim=4,
    )


def _constant(r: float, k: float = 1.0) -> AttentionConfig:
    return AttentionConfig(ModulationCurve.constant(r), ModulationCurve.constant(k))


def test_identity_override_reduces_to_baseline(rng):
    for _ in range(100):
        inputs = _random_instance(rng)
        base = baseline_attention(inputs)
        for out in (modulated_attention(inputs, IDENTITY), modulated_attention_naive(inputs, IDENTITY)):
            for wb, wm in zip(base.weights, out.weights):
                np.testing.assert_allclose(wm.values, wb.values, atol=1e-6)
            np.testing.assert_allclose(out.context.values, base.context.values, atol=1e-6)


def test_grouped_path_matches_naive_loop(rng):
    for _ in range(100):
        inputs = _random_instance(rng)
        fast = modulated_attention(inputs, REFERENCE)
        naive = modulated_attention_naive(inputs, REFERENCE)
        for wf, wn in zip(fast.weights, naive.weights):
            np.testing.assert_allclose(wf.values, wn.values, atol=1e-6)
        np.testing.assert_allclose(fast.context.values, naive.context.values, atol=1e-6)


def test_grouped_path_rotates_once_per_level(rng):
    inputs = random_inputs(rng, 8, 8, head_count=2, head_dim=8, mask=np.ones((8, 8), dtype=bool))
    levels = len(np.unique(inputs.saliency.flat()))
    assert modulated_attention(inputs, REFERENCE).k_in_rotations == 2 * levels
    assert modulated_attention_naive(inputs, REFERENCE).k_in_rotations == 2 * 64
    assert levels <= 5


def test_rows_are_distributions(rng):
    out = modulated_attention(random_inputs(rng, 4, 4, 2, 8), REFERENCE)
    for w in out.weights:
        assert w.shape == (16, 32)
        np.testing.assert_allclose(w.values.sum(axis=1), 1.0, atol=1e-5)
        assert (w.values >= 0).all()


def test_non_crop_rows_keep_baseline(rng):
    inputs = random_inputs(rng, 4, 4, 1, 8)
    base = baseline_attention(inputs).weights[0].values
    mod = modulated_attention(inputs, REFERENCE).weights[0].values
    outside = ~inputs.crop_mask.reshape(-1)
    np.testing.assert_allclose(mod[outside], base[outside], atol=1e-6)


def _two_token_inputs(saliency_levels=5):
    ln2 = math.log(2.0)
    q = DenseMatrix(np.array([[1, 0, 0, 0], [0, 0, 0, 0]], dtype=np.float32))
    k_in = DenseMatrix(np.array([[2 * ln2, 0, 0, 0], [0, 0, 0, 0]], dtype=np.float32))
    zeros = DenseMatrix(np.zeros((2, 4), dtype=np.float32))
    s = SaliencyMap(DenseMap(np.zeros((1, 2))))
    return AttentionInputs(
        q_out=q, k_out=zeros, v_out=zeros, k_in=k_in, v_in=zeros,
        positions_out=PositionGrid.for_grid(1, 2),
        positions_in=PositionGrid.for_grid(1, 2),
        crop_mask=np.array([[True, False]]),
        saliency=quantize_saliency(s, saliency_levels),
    )


def test_crop_attention_factor_on_hand_example():
    # logit at the in-mask key is ln 2 (scale 1/2); k = 2 doubles it
    inputs = _two_token_inputs()
    base = k_in_block(baseline_attention(inputs).weights[0], 2).values[0]
    np.testing.assert_allclose(base, [2 / 3, 1 / 3], atol=1e-6)

    out = modulated_attention(inputs, _constant(1.0, 2.0))
    np.testing.assert_allclose(k_in_block(out.weights[0], 2).values[0], [0.8, 0.2], atol=1e-6)
    assert out.ratio == pytest.approx(4.0, rel=1e-5)


def test_larger_k_pulls_more_mass_inside_on_positive_logits(rng):
    for _ in range(20):
        # query and in-mask keys sit at the origin, so their logits stay positive under any r
        q = np.zeros((3, 4), dtype=np.float32)
        q[0, 0] = 1.0
        k_in = np.zeros((3, 4), dtype=np.float32)
        k_in[0, 0], k_in[1, 0] = rng.uniform(0.1, 3.0, 2)
        zeros = DenseMatrix(np.zeros((3, 4), dtype=np.float32))
        mask = np.array([[True, True, False]])
        inputs = AttentionInputs(
            q_out=DenseMatrix(q), k_out=zeros, v_out=zeros, k_in=DenseMatrix(k_in), v_in=zeros,
            positions_out=PositionGrid(1, 3, [0, 1, 2], [0, 0, 0]),
            positions_in=PositionGrid(1, 3, [0, 0, 2], [0, 0, 0]),
            crop_mask=mask,
            saliency=quantize_saliency(SaliencyMap(DenseMap(np.zeros((1, 3)))), 5),
        )
        mass = []
        for k in (0.7, 1.0, 1.4, 2.0, 3.0):
            w = modulated_attention(inputs, _constant(1.0, k)).weights[0].values[0].astype(np.float64)
            mass.append(w[3:5].sum())
        assert all(b > a for a, b in zip(mass, mass[1:]))


def test_attn_scaling_ablation_forces_unit_k():
    inputs = _two_token_inputs()
    config = AttentionConfig(ModulationCurve.constant(1.0), ModulationCurve.constant(2.0), attn_scaling=False)
    out = modulated_attention(inputs, config)
    np.testing.assert_allclose(k_in_block(out.weights[0], 2).values[0], [2 / 3, 1 / 3], atol=1e-6)


def test_rope_scaling_ablation_forces_unit_r(rng):
    inputs = random_inputs(rng, 4, 4, 1, 8)
    config = AttentionConfig(ModulationCurve.constant(0.65), ModulationCurve.constant(1.0), rope_scaling=False)
    out = modulated_attention(inputs, config).weights[0].values
    np.testing.assert_allclose(out, baseline_attention(inputs).weights[0].values, atol=1e-6)


def test_lower_range_factor_broadens_profile():
    inputs = _content_free(64, 2.0)
    widths = []
    for r in (1.0, 0.9, 0.8, 0.65):
        w = run_attention(inputs, _constant(r), naive=True).weights[0]
        widths.append(profile_fwhm(k_in_block(w, 64, renormalize=False).values[32], 32))
    assert widths == sorted(widths)
    assert widths[-1] > widths[0]


def test_rendered_map_is_wider_for_lower_range_factor():
    inputs = _content_free(7, 2.0)
    bright = {}
    for r in (0.65, 1.0):
        w = run_attention(inputs, _constant(r), naive=True).weights[0]
        bright[r] = int((attention_map(w, 3, 1, 7) >= 0.5).sum())
    assert bright[0.65] > bright[1.0]


def test_inactive_and_unquantized_paths(rng):
    inputs = random_inputs(rng, 3, 3, quant_levels=None)
    inactive = AttentionConfig(REFERENCE.r_curve, REFERENCE.k_curve, active=False)
    with pytest.raises(InactiveConfig):
        modulated_attention(inputs, inactive)
    with pytest.raises(InactiveConfig):
        modulated_attention_naive(inputs, inactive)
    with pytest.raises(SaliencyNotQuantized):
        modulated_attention(inputs, REFERENCE)

    base = baseline_attention(inputs).weights[0].values
    np.testing.assert_array_equal(run_attention(inputs, inactive).weights[0].values, base)
    # unquantized saliency falls back to the per-query loop
    assert run_attention(inputs, REFERENCE).k_in_rotations == int(inputs.crop_mask.sum())


def test_input_shapes_are_checked(rng):
    good = random_inputs(rng, 2, 2, 1, 8)
    with pytest.raises(DimensionMismatch):
        AttentionInputs(
            q_out=good.q_out, k_out=good.k_out, v_out=good.v_out,
            k_in=DenseMatrix(np.zeros((3, 8))), v_in=good.v_in,
            positions_out=good.positions_out, positions_in=good.positions_in,
            crop_mask=good.crop_mask, saliency=good.saliency, head_dim=8,
        )
    with pytest.raises(DimensionMismatch):
        AttentionInputs(
            q_out=DenseMatrix(np.zeros((4, 6))), k_out=DenseMatrix(np.zeros((4, 6))),
            v_out=DenseMatrix(np.zeros((4, 6))), k_in=DenseMatrix(np.zeros((4, 6))),
            v_in=DenseMatrix(np.zeros((4, 6))),
            positions_out=good.positions_out, positions_in=good.positions_in,
            crop_mask=good.crop_mask, saliency=good.saliency,
        )
