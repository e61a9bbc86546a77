import numpy as np
import pytest

from analytics.metrics import inward_mass, inward_outward_ratio, k_in_block, profile_fwhm
from analytics.numerics import DenseMatrix
from errors import DimensionMismatch, EmptyQuerySet, IndexOutOfRange, ZeroOutwardMass


def _uniform(t):
    return DenseMatrix(np.full((t, t), 1.0 / t))


def test_uniform_weights_over_half_mask_give_unit_ratio():
    mask = np.array([True, True, False, False])
    assert inward_outward_ratio(_uniform(4), mask) == pytest.approx(1.0)


def test_ratio_uses_only_crop_queries():
    w = np.array([
        [0.9, 0.1],   # crop query
        [0.0, 1.0],   # outside query, ignored
    ])
    assert inward_outward_ratio(DenseMatrix(w), np.array([True, False])) == pytest.approx(9.0)
    # explicit query rows override the default
    assert inward_outward_ratio(DenseMatrix(w), np.array([True, False]), query_mask=[1]) == pytest.approx(0.0)


def test_ratio_errors():
    with pytest.raises(ZeroOutwardMass):
        inward_outward_ratio(_uniform(2), np.array([True, True]))
    with pytest.raises(EmptyQuerySet):
        inward_outward_ratio(_uniform(2), np.array([True, False]), query_mask=np.array([False, False]))
    with pytest.raises(DimensionMismatch):
        inward_outward_ratio(_uniform(3), np.array([True, False]))


def test_k_in_block_renormalizes_rows():
    joint = DenseMatrix(np.array([[0.5, 0.1, 0.3, 0.1], [0.0, 0.0, 0.25, 0.75]]))
    block = k_in_block(joint, 2).values
    np.testing.assert_allclose(block, [[0.75, 0.25], [0.25, 0.75]], atol=1e-6)
    raw = k_in_block(joint, 2, renormalize=False).values
    np.testing.assert_allclose(raw, [[0.3, 0.1], [0.25, 0.75]], atol=1e-6)


def test_inward_mass_per_row():
    w = DenseMatrix(np.array([[0.2, 0.8], [1.0, 0.0]]))
    np.testing.assert_allclose(inward_mass(w, np.array([True, False])), [0.2, 1.0], atol=1e-6)


def test_profile_fwhm():
    assert profile_fwhm([0.0, 0.4, 1.0, 0.6, 0.1, 0.9], 2) == 2
    assert profile_fwhm([0.5, 0.7, 1.0, 0.6, 0.1], 2) == 4
    assert profile_fwhm([1.0], 0) == 1
    with pytest.raises(IndexOutOfRange):
        profile_fwhm([1.0, 2.0], 5)


def _ratio_by_loops(w: np.ndarray, key_mask: np.ndarray, rows) -> float:
    inward = outward = 0.0
    for q in rows:
        for k in range(w.shape[1]):
            if key_mask[k]:
                inward += float(w[q, k])
            else:
                outward += float(w[q, k])
    return inward / outward


def test_ratio_matches_double_loop(rng):
    for _ in range(200):
        rows, keys = int(rng.integers(1, 7)), int(rng.integers(2, 10))
        w = rng.random((rows, keys))
        w /= w.sum(axis=1, keepdims=True)
        key_mask = np.zeros(keys, dtype=bool)
        key_mask[rng.choice(keys, int(rng.integers(1, keys)), replace=False)] = True
        query_mask = rng.random(rows) < 0.6
        query_mask[rng.integers(rows)] = True
        weights = DenseMatrix(w)
        expected = _ratio_by_loops(weights.values, key_mask, np.flatnonzero(query_mask))
        assert inward_outward_ratio(weights, key_mask, query_mask) == pytest.approx(expected, abs=1e-9)


def test_ratio_worked_example():
    w = DenseMatrix(np.array([[0.5, 0.25, 0.25]]))
    assert inward_outward_ratio(w, np.array([True, True, False]), query_mask=[0]) == pytest.approx(3.0)
