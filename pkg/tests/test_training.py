import math

import numpy as np
import pytest

from chaoscast.checkpoint import load_checkpoint
from chaoscast.errors import CheckpointMismatch
from chaoscast.model import ModelConfig, init_model, param_shapes
from chaoscast.training import (
    MetricsLog,
    MetricsRow,
    OptimizerState,
    TrainConfig,
    adam_update,
    clip_global_norm,
    global_norm,
    lr_schedule,
    train,
    validation_arrays,
)


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


def test_schedule_starts_at_zero():
    assert lr_schedule(0, 1_000_000, 0.06, 1e-3) == 0.0


def test_schedule_peak_at_warmup_end():
    assert lr_schedule(60_000, 1_000_000, 0.06, 1e-3) == pytest.approx(1e-3, rel=1e-12)


def test_schedule_half_at_decay_midpoint():
    assert lr_schedule(530_000, 1_000_000, 0.06, 1e-3) == pytest.approx(0.5e-3, rel=1e-12)


def test_schedule_zero_at_end_and_continuous():
    total = 1_000_000
    assert lr_schedule(total, total, 0.06, 1e-3) == pytest.approx(0.0, abs=1e-18)
    before = lr_schedule(59_999, total, 0.06, 1e-3)
    after = lr_schedule(60_001, total, 0.06, 1e-3)
    warmup_slope = 1e-3 / 60_000
    assert abs(before - after) <= 2.5 * warmup_slope
    grid = [lr_schedule(s, total, 0.06, 1e-3) for s in range(0, total + 1, 1000)]
    assert max(grid) == pytest.approx(1e-3, rel=1e-12)


def test_schedule_validates_range():
    with pytest.raises(ValueError):
        lr_schedule(-1, 100, 0.06, 1e-3)
    with pytest.raises(ValueError):
        lr_schedule(101, 100, 0.06, 1e-3)


# ---------------------------------------------------------------------------
# clipping
# ---------------------------------------------------------------------------


def test_clip_scales_when_over():
    grads = {"a": np.array([2.0, 0.0]), "b": np.zeros(3)}
    clipped = clip_global_norm(grads, 1.0)
    assert clipped["a"][0] == 1.0
    assert global_norm(clipped) <= 1.0 + 1e-12


def test_clip_untouched_when_under():
    grads = {"a": np.array([0.3, 0.4])}  # norm 0.5
    clipped = clip_global_norm(grads, 1.0)
    assert clipped is grads  # unchanged, bit-exactly


def test_clip_contract_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        grads = {
            "a": rng.normal(0, 3, (4, 5)),
            "b": rng.normal(0, 3, 7),
        }
        clipped = clip_global_norm(grads, 1.0)
        assert global_norm(clipped) <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_decay_only_step():
    theta = np.array([[1.0, -2.0]])
    params = {"layer0.attn.wq": theta.copy()}
    grads = {"layer0.attn.wq": np.zeros_like(theta)}
    state = OptimizerState.zeros(params)
    lr, wd = 1e-3, 0.1
    new, _ = adam_update(params, grads, state, lr, weight_decay=wd)
    assert np.allclose(new["layer0.attn.wq"], theta * (1 - lr * wd), rtol=1e-12)


def test_adam_first_step_is_signed_lr():
    g = np.array([3.0, -0.5, 1e-2])
    params = {"embed.b": np.zeros(3)}  # bias: no decay
    grads = {"embed.b": g.copy()}
    state = OptimizerState.zeros(params)
    new, _ = adam_update(params, grads, state, lr=1e-3)
    ratio = new["embed.b"] / (-1e-3 * np.sign(g))
    assert np.abs(ratio - 1.0).max() < 1e-6


def test_adam_two_steps_match_scalar_reference():
    # independent scalar Adam with decoupled decay
    beta1, beta2, lr, wd, eps = 0.9, 0.95, 2e-3, 0.1, 1e-8
    g = 0.7
    theta = 1.3
    m = v = 0.0
    for t in (1, 2):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        theta = theta - lr * (mhat / (math.sqrt(vhat) + eps) + wd * theta)

    params = {"head.w": np.array([[1.3]])}
    grads = {"head.w": np.array([[0.7]])}
    state = OptimizerState.zeros(params)
    for _ in range(2):
        params, state = adam_update(
            params, grads, state, lr, beta1=beta1, beta2=beta2,
            weight_decay=wd, eps=eps,
        )
    assert params["head.w"][0, 0] == pytest.approx(theta, rel=1e-14)
    assert state.step == 2


def test_adam_no_decay_on_biases_and_norms(tiny_cfg):
    params = init_model(tiny_cfg, 0)
    zero_grads = {k: np.zeros_like(v) for k, v in params.items()}
    state = OptimizerState.zeros(params)
    new, _ = adam_update(params, zero_grads, state, lr=1e-2, weight_decay=0.5)
    for name in param_shapes(tiny_cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g" or leaf.startswith("b"):
            assert np.array_equal(new[name], params[name]), name
        else:
            assert not np.array_equal(new[name], params[name]), name


# ---------------------------------------------------------------------------
# metrics log
# ---------------------------------------------------------------------------


def test_metrics_log_roundtrip(tmp_path):
    log = MetricsLog()
    log.append(MetricsRow(0, 0, math.nan, 5.0, 0.0, 0.01, -0.02, 0.0, 0.1))
    log.append(MetricsRow(8192, 2, 4.5, 4.25, 0.1, 0.2, 0.3, 1e-3, 2.5))
    path = tmp_path / "metrics.csv"
    log.write_csv(path)
    back = MetricsLog.read_csv(path)
    assert len(back.rows) == 2
    assert math.isnan(back.rows[0].train_loss)
    assert back.rows[1] == log.rows[1]


def test_metrics_log_strictly_increasing():
    log = MetricsLog()
    log.append(MetricsRow(10, 1, 1.0, 1.0, 0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        log.append(MetricsRow(10, 2, 1.0, 1.0, 0, 0, 0, 0, 0))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(total_samples=100, interval=10, seed=0, warmup_frac=1.5)
    with pytest.raises(ValueError):
        TrainConfig(total_samples=0, interval=10, seed=0)
    with pytest.raises(ValueError):
        TrainConfig(total_samples=10, interval=10, seed=0, dtype="float16")


# ---------------------------------------------------------------------------
# the training loop (small, fast configurations)
# ---------------------------------------------------------------------------


FAST_MODEL = ModelConfig(n_layers=2, d_model=16, n_heads=2, context_len=32)


def _fast_cfg(**overrides):
    base = dict(
        total_samples=20 * 4 * 32,  # 20 steps at batch 4
        interval=10,
        seed=77,
        batch_size=4,
        eval_every=10,
        checkpoint_every=10,
        val_sequences=8,
        dtype="float64",
        prefetch=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_validation_reserved_indices():
    cfg = _fast_cfg()
    inputs, targets = validation_arrays(FAST_MODEL, cfg)
    assert inputs.shape == (8, 32, 3)
    assert np.array_equal(
        (inputs, targets)[0], validation_arrays(FAST_MODEL, cfg)[0]
    )


def test_train_runs_and_logs(tmp_path):
    cfg = _fast_cfg(prefetch=0)
    result = train(FAST_MODEL, cfg, out_dir=tmp_path)
    assert result.samples_seen == cfg.total_samples
    # single-epoch: indices advance one per consumed sequence, starting
    # after the reserved validation block
    assert result.stream_index_end == cfg.val_sequences + 20 * cfg.batch_size
    assert result.gen_stats.sequences == 20 * cfg.batch_size
    rows = result.log.rows
    assert rows[0].step == 0 and rows[0].samples_seen == 0
    deltas = [b.samples_seen - a.samples_seen for a, b in zip(rows, rows[1:])]
    assert all(d % (cfg.batch_size * 32) == 0 for d in deltas)
    assert (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "ckpt_final.json").exists()
    ckpt = load_checkpoint(tmp_path / "ckpt_final")
    assert ckpt.step == 20
    assert ckpt.samples_seen == cfg.total_samples
    for k in result.params:
        assert np.array_equal(ckpt.params[k], result.params[k])


def test_train_deterministic_rerun(tmp_path):
    cfg = _fast_cfg(prefetch=0)
    a = train(FAST_MODEL, cfg, out_dir=None)
    b = train(FAST_MODEL, cfg, out_dir=None)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert [r.val_loss for r in a.log.rows] == [r.val_loss for r in b.log.rows]


def test_prefetch_does_not_change_results():
    a = train(FAST_MODEL, _fast_cfg(prefetch=0))
    b = train(FAST_MODEL, _fast_cfg(prefetch=3))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_resume_bit_identical(tmp_path):
    cfg = _fast_cfg()
    full = train(FAST_MODEL, cfg, out_dir=tmp_path / "full")
    part = train(FAST_MODEL, cfg, out_dir=tmp_path / "part")
    # rerun the second half from the step-10 checkpoint
    resumed = train(
        FAST_MODEL, cfg, out_dir=tmp_path / "part",
        resume_from=tmp_path / "part" / "ckpt_step10",
    )
    for k in full.params:
        assert np.array_equal(full.params[k], resumed.params[k])
    full_ck = load_checkpoint(tmp_path / "full" / "ckpt_final")
    res_ck = load_checkpoint(tmp_path / "part" / "ckpt_final")
    for k in full_ck.params:
        assert np.array_equal(full_ck.params[k], res_ck.params[k])
        assert np.array_equal(full_ck.adam_m[k], res_ck.adam_m[k])
    assert full_ck.stream_index == res_ck.stream_index
    # resumed metrics continue the original history
    log = MetricsLog.read_csv(tmp_path / "part" / "metrics.csv")
    assert [r.samples_seen for r in log.rows] == [
        r.samples_seen for r in full.log.rows
    ]


def test_resume_of_finished_run_is_noop(tmp_path):
    cfg = _fast_cfg()
    done = train(FAST_MODEL, cfg, out_dir=tmp_path)
    again = train(FAST_MODEL, cfg, out_dir=tmp_path,
                  resume_from=tmp_path / "ckpt_final")
    assert again.samples_seen == done.samples_seen
    for k in done.params:
        assert np.array_equal(done.params[k], again.params[k])
    assert [r.samples_seen for r in again.log.rows] == [
        r.samples_seen for r in done.log.rows
    ]


def test_resume_refuses_config_mismatch(tmp_path):
    cfg = _fast_cfg()
    train(FAST_MODEL, cfg, out_dir=tmp_path)
    other_model = ModelConfig(n_layers=1, d_model=16, n_heads=2, context_len=32)
    with pytest.raises(CheckpointMismatch):
        train(other_model, cfg, out_dir=tmp_path, resume_from=tmp_path / "ckpt_final")
    other_cfg = _fast_cfg(base_lr=5e-4)
    with pytest.raises(CheckpointMismatch):
        train(FAST_MODEL, other_cfg, out_dir=tmp_path, resume_from=tmp_path / "ckpt_final")


def test_training_reduces_validation_loss_short_horizon(tmp_path):
    # 100 steps on an easy (short) horizon must improve validation loss
    cfg = TrainConfig(
        total_samples=100 * 4 * 512,
        interval=100,
        seed=3,
        batch_size=4,
        eval_every=50,
        checkpoint_every=0,
        val_sequences=16,
        dtype="float64",
    )
    model = ModelConfig(n_layers=2, d_model=16, n_heads=2, context_len=512)
    result = train(model, cfg, out_dir=tmp_path)
    rows = result.log.rows
    assert rows[0].step == 0
    assert rows[-1].step == 100
    assert rows[-1].val_loss < rows[0].val_loss
