import math

import numpy as np
import pytest

from conftest import generic_params
from chaoscast.errors import NonFiniteActivation
from chaoscast.model import (
    MODEL_PRESETS,
    ModelConfig,
    _forward_cached,
    cast_params,
    decays,
    forward,
    generate,
    grad,
    init_model,
    mse_loss,
    param_count,
    param_shapes,
    positional_table,
)

NOMINAL = {"0.1M": 1e5, "1M": 1e6, "10M": 1e7}


# ---------------------------------------------------------------------------
# scalar reference: an independent, loop-level implementation of the
# same architecture, used as the oracle for the vectorized forward
# ---------------------------------------------------------------------------


def _ref_layer_norm(vec, g, b):
    n = len(vec)
    mean = sum(vec) / n
    var = sum((v - mean) ** 2 for v in vec) / n
    inv = 1.0 / math.sqrt(var + 1e-5)
    return [(v - mean) * inv * g[j] + b[j] for j, v in enumerate(vec)]


def _ref_gelu(u):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * u * (1.0 + math.tanh(c * (u + 0.044715 * u**3)))


def _ref_affine(vec, w, b):
    return [sum(vec[i] * w[i][j] for i in range(len(vec))) + b[j]
            for j in range(len(b))]


def reference_forward(cfg, params, x):
    """Single-head scalar evaluation of the stack for one sequence."""
    assert cfg.n_heads == 1
    T = len(x)
    d = cfg.d_model
    pos = []
    for t in range(T):
        row = []
        for j in range(d):
            angle = t / (10000.0 ** ((j - j % 2) / d))
            row.append(math.sin(angle) if j % 2 == 0 else math.cos(angle))
        pos.append(row)
    p = {k: v.tolist() for k, v in params.items()}
    h = [
        [_ref_affine(x[t], p["embed.w"], p["embed.b"])[j] + pos[t][j] for j in range(d)]
        for t in range(T)
    ]
    for layer in range(cfg.n_layers):
        pre = f"layer{layer}."
        a = [_ref_layer_norm(h[t], p[pre + "ln1.g"], p[pre + "ln1.b"]) for t in range(T)]
        q = [_ref_affine(a[t], p[pre + "attn.wq"], p[pre + "attn.bq"]) for t in range(T)]
        k = [_ref_affine(a[t], p[pre + "attn.wk"], p[pre + "attn.bk"]) for t in range(T)]
        v = [_ref_affine(a[t], p[pre + "attn.wv"], p[pre + "attn.bv"]) for t in range(T)]
        ctx = []
        for t in range(T):
            scores = [
                sum(q[t][j] * k[s][j] for j in range(d)) / math.sqrt(d)
                for s in range(t + 1)  # causal: only positions <= t
            ]
            mx = max(scores)
            exps = [math.exp(s - mx) for s in scores]
            z = sum(exps)
            probs = [e / z for e in exps]
            ctx.append([
                sum(probs[s] * v[s][j] for s in range(t + 1)) for j in range(d)
            ])
        o = [_ref_affine(ctx[t], p[pre + "attn.wo"], p[pre + "attn.bo"]) for t in range(T)]
        h = [[h[t][j] + o[t][j] for j in range(d)] for t in range(T)]
        f = [_ref_layer_norm(h[t], p[pre + "ln2.g"], p[pre + "ln2.b"]) for t in range(T)]
        u = [_ref_affine(f[t], p[pre + "ffn.w1"], p[pre + "ffn.b1"]) for t in range(T)]
        g = [[_ref_gelu(val) for val in u[t]] for t in range(T)]
        ffn = [_ref_affine(g[t], p[pre + "ffn.w2"], p[pre + "ffn.b2"]) for t in range(T)]
        h = [[h[t][j] + ffn[t][j] for j in range(d)] for t in range(T)]
    hn = [_ref_layer_norm(h[t], p["final_ln.g"], p["final_ln.b"]) for t in range(T)]
    return [_ref_affine(hn[t], p["head.w"], p["head.b"]) for t in range(T)]


def test_forward_matches_scalar_reference():
    cfg = ModelConfig(n_layers=1, d_model=4, n_heads=1, context_len=8)
    params = generic_params(cfg, seed=3)
    x = [[0.3, -1.2, 2.0], [1.5, 0.1, -0.7]]
    ref = np.array(reference_forward(cfg, params, x))
    out = forward(cfg, params, np.array(x)[None])
    assert np.abs(out[0] - ref).max() < 1e-12


def test_forward_matches_scalar_reference_deeper():
    cfg = ModelConfig(n_layers=2, d_model=6, n_heads=1, context_len=8)
    params = generic_params(cfg, seed=9)
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1.5, (5, 3))
    ref = np.array(reference_forward(cfg, params, x.tolist()))
    out = forward(cfg, params, x[None])
    assert np.abs(out[0] - ref).max() < 1e-11


# ---------------------------------------------------------------------------
# structural properties
# ---------------------------------------------------------------------------


def test_param_counts_within_band():
    for name, cfg in MODEL_PRESETS.items():
        n = param_count(cfg)
        assert abs(n - NOMINAL[name]) / NOMINAL[name] <= 0.15, (name, n)


def test_param_count_matches_init_sizes(tiny_cfg):
    params = init_model(tiny_cfg, 0)
    assert sum(p.size for p in params.values()) == param_count(tiny_cfg)


def test_init_deterministic(tiny_cfg):
    a = init_model(tiny_cfg, 11)
    b = init_model(tiny_cfg, 11)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_init_gains_one_biases_zero(tiny_cfg):
    params = init_model(tiny_cfg, 1)
    for name, p in params.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            assert np.all(p == 1.0)
        elif leaf.startswith("b"):
            assert np.all(p == 0.0)


def test_init_weight_scale():
    cfg = ModelConfig(n_layers=2, d_model=64, n_heads=4)
    params = init_model(cfg, 5)
    resid = 1.0 / math.sqrt(2 * cfg.n_layers)
    for name, p in params.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("wo", "w2"):
            assert 0.015 * resid < p.std() < 0.025 * resid
        elif leaf.startswith("w") and p.size >= 192:
            assert 0.015 < p.std() < 0.025


def test_decay_set_is_weight_matrices_only(tiny_cfg):
    excluded = {n for n in param_shapes(tiny_cfg) if not decays(n)}
    expected = {
        n for n in param_shapes(tiny_cfg)
        if n.rsplit(".", 1)[-1] == "g" or n.rsplit(".", 1)[-1].startswith("b")
    }
    assert excluded == expected


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_layers=2, d_model=10, n_heads=3)


def test_positional_table_structure():
    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=1, context_len=16)
    pe = positional_table(cfg)
    assert pe.shape == (16, 8)
    assert np.all(pe[0, 0::2] == 0.0)  # sin(0)
    assert np.all(pe[0, 1::2] == 1.0)  # cos(0)
    assert pe[3, 0] == pytest.approx(math.sin(3.0), abs=1e-15)


# ---------------------------------------------------------------------------
# forward behavior
# ---------------------------------------------------------------------------


def test_causality_bit_exact(tiny_cfg):
    params = init_model(tiny_cfg, 2)
    rng = np.random.default_rng(4)
    base = rng.normal(0, 5, (1, 32, 3))
    out_base = forward(tiny_cfg, params, base)
    for t in (1, 10, 31):
        pert = base.copy()
        pert[0, t:] += rng.normal(0, 2, (32 - t, 3))
        out_pert = forward(tiny_cfg, params, pert)
        assert np.array_equal(out_base[0, :t], out_pert[0, :t])
        assert not np.array_equal(out_base[0, t:], out_pert[0, t:])


def test_identical_batch_rows_identical_outputs(tiny_cfg):
    params = init_model(tiny_cfg, 3)
    row = np.random.default_rng(0).normal(0, 3, (1, 20, 3))
    out = forward(tiny_cfg, params, np.repeat(row, 5, axis=0))
    for j in range(1, 5):
        assert np.array_equal(out[0], out[j])


def test_shape_closure(tiny_cfg):
    params = init_model(tiny_cfg, 1)
    for B in (1, 3):
        for T in (1, 5, 32):
            out = forward(tiny_cfg, params, np.zeros((B, T, 3)))
            assert out.shape == (B, T, 3)
    with pytest.raises(ValueError):
        forward(tiny_cfg, params, np.zeros((1, 33, 3)))


def test_forward_deterministic(tiny_cfg):
    params = generic_params(tiny_cfg)
    x = np.random.default_rng(8).normal(0, 2, (2, 32, 3))
    assert np.array_equal(forward(tiny_cfg, params, x), forward(tiny_cfg, params, x))


def test_attention_rows_are_probabilities(tiny_cfg):
    params = generic_params(tiny_cfg, seed=5)
    x = np.random.default_rng(1).normal(0, 2, (2, 16, 3))
    _, cache = _forward_cached(tiny_cfg, params, x, keep_attn=True)
    for layer in cache["layers"]:
        probs = layer["probs"]
        assert np.abs(probs.sum(axis=-1) - 1.0).max() < 1e-6
        T = probs.shape[-1]
        upper = np.triu_indices(T, k=1)
        assert np.all(probs[..., upper[0], upper[1]] == 0.0)


def test_nonfinite_activation_raises(tiny_cfg):
    params = init_model(tiny_cfg, 0)
    params["head.w"] = params["head.w"] + np.inf
    with np.errstate(invalid="ignore"):
        with pytest.raises(NonFiniteActivation):
            forward(tiny_cfg, params, np.zeros((1, 4, 3)))


def test_float32_path_close_to_float64(tiny_cfg):
    params = init_model(tiny_cfg, 6)
    x = np.random.default_rng(0).normal(0, 2, (2, 32, 3))
    out64 = forward(tiny_cfg, params, x)
    out32 = forward(tiny_cfg, cast_params(params, np.float32), x)
    assert out32.dtype == np.float32
    assert np.abs(out64 - out32).max() < 1e-3


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------


def test_mse_loss_examples():
    t = np.ones((2, 5, 3))
    assert mse_loss(t, t) == 0.0
    pred = np.zeros((1, 1, 3))
    target = np.ones((1, 1, 3))
    assert mse_loss(pred, target) == 3.0


def test_mse_loss_homogeneity_exact():
    rng = np.random.default_rng(3)
    target = rng.normal(0, 1, (2, 7, 3))
    err = rng.normal(0, 1, (2, 7, 3))
    assert mse_loss(target + 2 * err, target) == 4.0 * mse_loss(target + err, target)


def test_grad_loss_consistency(tiny_cfg):
    params = generic_params(tiny_cfg)
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1.5, (2, 32, 3))
    t = rng.normal(0, 1.5, (2, 32, 3))
    loss, grads = grad(tiny_cfg, params, x, t)
    assert loss == mse_loss(forward(tiny_cfg, params, x), t)
    assert set(grads) == set(params)
    for name in params:
        assert grads[name].shape == params[name].shape


def test_grad_deterministic(tiny_cfg):
    params = generic_params(tiny_cfg)
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1.5, (2, 16, 3))
    t = rng.normal(0, 1.5, (2, 16, 3))
    l1, g1 = grad(tiny_cfg, params, x, t)
    l2, g2 = grad(tiny_cfg, params, x, t)
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_key_bias_gradient_is_structurally_zero(tiny_cfg):
    # adding a constant to every key shifts each attention row uniformly,
    # which softmax ignores, so the key-projection bias cannot move the loss
    params = generic_params(tiny_cfg)
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1.5, (2, 32, 3))
    t = rng.normal(0, 1.5, (2, 32, 3))
    _, grads = grad(tiny_cfg, params, x, t)
    for name, g in grads.items():
        if name.endswith("attn.bk"):
            assert np.abs(g).max() < 1e-12


def test_grad_matches_finite_differences_quick(tiny_cfg):
    params = generic_params(tiny_cfg)
    rng = np.random.default_rng(1)
    x = rng.normal(0, 1.5, (2, 32, 3))
    t = rng.normal(0, 1.5, (2, 32, 3))
    _, grads = grad(tiny_cfg, params, x, t)
    h = 1e-4
    picker = np.random.default_rng(0)
    for name, p in params.items():
        flat = p.ravel()
        gflat = grads[name].ravel()
        for idx in picker.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = mse_loss(forward(tiny_cfg, params, x), t)
            flat[idx] = orig - h
            lm = mse_loss(forward(tiny_cfg, params, x), t)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - gflat[idx]) / max(abs(fd), abs(gflat[idx]), 1e-6)
            assert rel < 1e-4, (name, idx, fd, gflat[idx])


def test_generate_autoregressive(tiny_cfg):
    params = init_model(tiny_cfg, 4)
    context = np.random.default_rng(0).normal(0, 2, (8, 3))
    out = generate(tiny_cfg, params, context, n_steps=5)
    assert out.shape == (13, 3)
    assert np.array_equal(out[:8], context)
    again = generate(tiny_cfg, params, context, n_steps=5)
    assert np.array_equal(out, again)
