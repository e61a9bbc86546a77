import json
from pathlib import Path

import numpy as np
import pytest

from analytics.modulation import schedule_params
from analytics.numerics import DenseMatrix
from data_sources.oracles import ScriptedOracle
from errors import ConfigInvalid
from pipeline.config import PipelineConfig, apply_overrides, config_from_dict, load_config
from pipeline.runner import PipelineRun, prepare_inputs, run_pipeline, start_run, write_run_outputs, x0_snapshot
from pipeline.steering import steering_loop

DEFAULT_JSON = Path(__file__).resolve().parents[1] / "configs" / "default.json"


def small(**changes) -> PipelineConfig:
    return PipelineConfig(grid=(4, 4), layer_count=2, total_steps=5, modulation_window=3, **changes)


@pytest.fixture(scope="module")
def default_run():
    config = PipelineConfig()
    return config, run_pipeline(config)


def test_one_record_per_step_and_layer(default_run):
    config, diag = default_run
    assert len(diag.records) == 28 * 4
    assert [(r.t, r.layer) for r in diag.records[:5]] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]


def test_schedule_conformance(default_run):
    config, diag = default_run
    schedule = config.schedule()
    for rec in diag.records:
        r, k, active = schedule_params(schedule, rec.t)
        assert rec.active is active
        assert rec.active == (rec.t < 22)
        assert (rec.r_low, rec.r_high, rec.k_low, rec.k_high) == (r.v_min, r.v_max, k.v_min, k.v_max)
        if not rec.active:
            assert rec.k_in_rotations == 0


def test_diagnostics_table(default_run):
    _, diag = default_run
    df = diag.to_frame()
    assert list(df.columns[:10]) == ["t", "layer", "active", "ratio", "entropy", "lambda", "r_low", "r_high", "k_low", "k_high"]
    assert (df["lambda"] == 0.83).all()
    assert df["ratio"].notna().all()
    assert diag.summary()["active_steps"] == 22


def test_fixed_seed_is_bit_identical(default_run):
    config, diag = default_run
    again = run_pipeline(config)
    np.testing.assert_array_equal(again.tokens.values, diag.tokens.values)
    assert again.to_records() == diag.to_records()


def test_seed_changes_the_run(default_run):
    config, diag = default_run
    other = run_pipeline(config.with_overrides(seed=7))
    assert not np.array_equal(other.tokens.values, diag.tokens.values)


def test_empty_window_runs_baseline_only():
    diag = run_pipeline(PipelineConfig(modulation_window=0, total_steps=4, layer_count=2))
    assert len(diag.records) == 8
    assert not any(r.active for r in diag.records)


def test_naive_and_grouped_runs_agree():
    config = small()
    fast = run_pipeline(config)
    naive = run_pipeline(config.with_overrides(naive=True))
    np.testing.assert_allclose(fast.tokens.values, naive.tokens.values, atol=1e-4)


def test_run_can_pause_and_resume():
    config = small()
    prepared = prepare_inputs(config)
    paused = start_run(config, prepared)
    paused.advance(2)
    assert paused.t == 2 and paused.latest_ratio is not None
    resumed = paused.finish()
    straight = run_pipeline(config, prepared)
    np.testing.assert_array_equal(resumed.tokens.values, straight.tokens.values)


def test_x0_snapshot_examples(rng):
    np.testing.assert_array_equal(x0_snapshot(DenseMatrix(np.zeros((4, 3))), 2, 2).values, 0.0)
    one = np.zeros((4, 3))
    one[2] = [1.0, -2.0, 0.5]
    np.testing.assert_array_equal(x0_snapshot(DenseMatrix(one), 2, 2).values, [[0, 0], [1, 0]])

    state = rng.normal(size=(6, 5))
    norms = np.array([np.sqrt(sum(v * v for v in row)) for row in state.astype(np.float32).astype(np.float64)])
    expected = ((norms - norms.min()) / (norms.max() - norms.min())).reshape(2, 3)
    np.testing.assert_allclose(x0_snapshot(DenseMatrix(state), 2, 3).values, expected, atol=1e-6)


def test_default_inputs_use_central_crop():
    prepared = prepare_inputs(PipelineConfig())
    mask = prepared.masks.crop_mask
    assert mask.sum() == 16 and mask[2:6, 2:6].all()
    assert prepared.saliency.levels == 5


def test_outputs_written(tmp_path):
    config = small(trace_weights=True)
    prepared = prepare_inputs(config)
    diag = run_pipeline(config, prepared)
    paths = write_run_outputs(diag, prepared, tmp_path, trace_weights=True)
    for name in ("tokens.tnsr", "saliency.pfm", "composite.pgm", "diagnostics.csv", "diagnostics.jsonl", "weights_layer1.tnsr"):
        assert (tmp_path / name).exists()
    assert paths["tokens"] == tmp_path / "tokens.tnsr"


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        PipelineConfig(modulation_window=30)
    with pytest.raises(ConfigInvalid):
        PipelineConfig(head_dim=6)
    with pytest.raises(ConfigInvalid):
        config_from_dict({"grid": [8, 8], "heads": 2})


def test_committed_config_matches_defaults():
    assert load_config(DEFAULT_JSON).to_dict()["stages"] == PipelineConfig().to_dict()["stages"]
    assert load_config(DEFAULT_JSON).steering == PipelineConfig().steering


def test_overrides(tmp_path):
    config = apply_overrides(PipelineConfig(), ["steering.max_tries=2", "seed=5", "r_curve.G=4.0"])
    assert (config.steering.max_tries, config.seed, config.r_curve.G) == (2, 5, 4.0)
    with pytest.raises(ConfigInvalid):
        apply_overrides(PipelineConfig(), ["steering.nope=1"])

    path = tmp_path / "c.json"
    path.write_text(json.dumps(config.to_dict()))
    assert load_config(path).to_dict() == config.to_dict()


def test_success_first_steering_matches_plain_run():
    config = small()
    prepared = prepare_inputs(config)
    steered = steering_loop(
        runner=lambda s, lam: PipelineRun(config, prepared, s, lam),
        oracle=ScriptedOracle(["success"]),
        policy=config.steering,
        s_original=prepared.saliency,
    )
    plain = run_pipeline(config, prepared)
    assert steered.trace.lambdas == [config.steering.lambda0]
    np.testing.assert_array_equal(steered.result.tokens.values, plain.tokens.values)
    assert steered.result.to_records() == plain.to_records()
