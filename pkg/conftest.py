from __future__ import annotations
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from analytics.attention import AttentionInputs
from analytics.numerics import DenseMap, DenseMatrix
from analytics.rope import PositionGrid
from analytics.saliency import SaliencyMap, quantize_saliency


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_inputs(
    rng: np.random.Generator,
    height: int,
    width: int,
    head_count: int = 1,
    head_dim: int = 8,
    quant_levels: int | None = 5,
    mask: np.ndarray | None = None,
) -> AttentionInputs:
    """Random joint-attention inputs with a random crop mask and saliency."""
    t = height * width
    cols = head_count * head_dim

    def block():
        return DenseMatrix(rng.normal(0.0, 1.0, (t, cols)).astype(np.float32))

    if mask is None:
        mask = rng.random((height, width)) < 0.5
        if not mask.any():
            mask.flat[0] = True
    s = SaliencyMap(DenseMap(rng.random((height, width)).astype(np.float32)))
    if quant_levels:
        s = quantize_saliency(s, quant_levels)
    return AttentionInputs(
        q_out=block(), k_out=block(), v_out=block(), k_in=block(), v_in=block(),
        positions_out=PositionGrid.for_grid(height, width),
        positions_in=PositionGrid.for_grid(height, width),
        crop_mask=mask,
        saliency=s,
        head_count=head_count,
        head_dim=head_dim,
    )
