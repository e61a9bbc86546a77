import math

import numpy as np
import pytest

from analytics.numerics import (
    DenseMap,
    DenseMatrix,
    bilinear_resize,
    gaussian_blur,
    gaussian_kernel_1d,
    matmul,
    minmax_normalize,
    row_entropy,
    softmax_rows,
)
from errors import DimensionMismatch, InvalidKernel, NonFiniteInput, NotADistribution


def test_dense_map_rejects_bad_values():
    with pytest.raises(NonFiniteInput):
        DenseMap(np.array([[0.0, np.nan]]))
    with pytest.raises(DimensionMismatch):
        DenseMap(np.zeros(4))


def test_matmul_matches_numpy_and_checks_shapes(rng):
    a = DenseMatrix(rng.normal(size=(3, 5)))
    b = DenseMatrix(rng.normal(size=(5, 2)))
    np.testing.assert_allclose(matmul(a, b).values, a.values @ b.values, rtol=1e-5, atol=1e-6)
    with pytest.raises(DimensionMismatch):
        matmul(a, a)


def test_softmax_rows_is_stable_for_large_logits():
    w = softmax_rows(DenseMatrix(np.array([[1000.0, 1001.0], [0.0, 0.0]])))
    assert np.isfinite(w.values).all()
    np.testing.assert_allclose(w.values.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(w.values[1], [0.5, 0.5])
    assert w.values[0, 1] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-6)


def test_bilinear_upsample_uses_half_pixel_centers():
    out = bilinear_resize(DenseMap(np.array([[0.0, 1.0]])), 1, 4)
    np.testing.assert_allclose(out.values[0], [0.0, 0.25, 0.75, 1.0], atol=1e-7)


def test_bilinear_same_size_is_identity(rng):
    m = DenseMap(rng.random((5, 7)))
    np.testing.assert_array_equal(bilinear_resize(m, 5, 7).values, m.values)


def test_gaussian_kernel_normalized_and_symmetric():
    k = gaussian_kernel_1d(5, 1.1)
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])
    assert k.argmax() == 2


@pytest.mark.parametrize("size,sigma", [(4, 1.0), (0, 1.0), (5, 0.0)])
def test_gaussian_kernel_rejects_bad_params(size, sigma):
    with pytest.raises(InvalidKernel):
        gaussian_kernel_1d(size, sigma)


def test_blur_keeps_constants_and_spreads_impulses():
    flat = gaussian_blur(DenseMap.constant(6, 6, 0.3), 5, 1.1)
    np.testing.assert_allclose(flat.values, 0.3, atol=1e-6)

    impulse = np.zeros((9, 9))
    impulse[4, 4] = 1.0
    out = gaussian_blur(DenseMap(impulse), 5, 1.1).values
    assert out.sum() == pytest.approx(1.0, abs=1e-5)
    assert out[4, 4] < 1.0 and out[4, 5] > 0.0 and out[0, 0] == 0.0


def test_row_entropy():
    w = DenseMatrix(np.array([[0.25, 0.25, 0.25, 0.25], [1.0, 0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(row_entropy(w), [math.log(4), 0.0], atol=1e-6)
    with pytest.raises(NotADistribution):
        row_entropy(DenseMatrix(np.array([[0.5, 0.2]])))


def test_minmax_degenerate_range():
    np.testing.assert_array_equal(minmax_normalize(np.full((2, 2), 3.0)), np.full((2, 2), 0.5))
    np.testing.assert_array_equal(minmax_normalize(np.zeros(3), degenerate=0.0), np.zeros(3))
    np.testing.assert_allclose(minmax_normalize(np.array([2.0, 4.0, 3.0])), [0.0, 1.0, 0.5])


def _triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop(rng):
    for _ in range(100):
        a = DenseMatrix(rng.uniform(-1.0, 1.0, (8, 8)))
        b = DenseMatrix(rng.uniform(-1.0, 1.0, (8, 8)))
        np.testing.assert_allclose(matmul(a, b).values, _triple_loop(a.values, b.values), atol=1e-6)


def test_matmul_worked_examples(rng):
    m = DenseMatrix(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(matmul(DenseMatrix.identity(3), m).values, m.values)
    out = matmul(DenseMatrix(np.array([[1.0, 2.0], [3.0, 4.0]])), DenseMatrix(np.ones((2, 1))))
    np.testing.assert_array_equal(out.values, [[3.0], [7.0]])


def test_softmax_closed_form():
    w = softmax_rows(DenseMatrix(np.array([[math.log(2.0), 0.0], [1000.0, 0.0]])))
    np.testing.assert_allclose(w.values, [[2 / 3, 1 / 3], [1.0, 0.0]], atol=1e-6)


def test_bilinear_keeps_ramps_monotone():
    ramp = DenseMap(np.linspace(0.0, 1.0, 5)[None, :])
    out = bilinear_resize(ramp, 1, 13).values[0]
    assert (np.diff(out) >= 0).all()
    np.testing.assert_allclose(bilinear_resize(DenseMap.constant(3, 3, 0.7), 5, 2).values, 0.7, atol=1e-7)


def test_blur_impulse_center_is_product_of_center_weights():
    impulse = np.zeros((9, 9))
    impulse[4, 4] = 1.0
    k = gaussian_kernel_1d(5, 1.1)
    out = gaussian_blur(DenseMap(impulse), 5, 1.1).values
    assert out[4, 4] == pytest.approx(k[2] * k[2], abs=1e-7)


def test_blur_preserves_mean_with_constant_border(rng):
    for _ in range(20):
        v = np.full((12, 12), rng.random())
        v[2:10, 2:10] = rng.random((8, 8))
        out = gaussian_blur(DenseMap(v), 5, 1.1).values
        assert out.mean() == pytest.approx(DenseMap(v).values.mean(), abs=1e-4)


def test_row_entropy_closed_form():
    h = row_entropy(DenseMatrix(np.array([[0.5, 0.25, 0.25]])))
    assert h[0] == pytest.approx(1.0397, abs=1e-4)
