"""Decoder-only transformer over 3-dimensional continuous tokens.

Forward pass and exact reverse-mode gradients are implemented directly
in numpy: pre-norm blocks of causally masked multi-head self-attention
and a GELU feed-forward, sinusoidal additive positions, and a linear
head producing one-step-ahead 3-vector predictions at every position.

Parameters live in a flat name -> array dict (see `param_shapes` for
the canonical ordering); gradients come back in the same structure.
Everything here is a pure function of (config, params, inputs): no
hidden state, no dropout, no in-place mutation of inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import NonFiniteActivation

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    d_ff defaults to d_model, which is what the target parameter budgets
    (~6 * d_model^2 per layer) imply.
    """

    n_layers: int
    d_model: int
    n_heads: int
    context_len: int = 512
    d_ff: int = 0  # 0 -> d_model
    in_dim: int = 3
    out_dim: int = 3

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", self.d_model)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


#: The three standard model sizes (nominal parameter counts 0.1M/1M/10M).
MODEL_PRESETS = {
    "0.1M": ModelConfig(n_layers=4, d_model=64, n_heads=4),
    "1M": ModelConfig(n_layers=10, d_model=128, n_heads=8),
    "10M": ModelConfig(n_layers=12, d_model=384, n_heads=24),
}

Params = dict[str, np.ndarray]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical (ordered) learnable tensor names and shapes."""
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (cfg.in_dim, d),
        "embed.b": (d,),
    }
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.bk"] = (d,)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.w"] = (d, cfg.out_dim)
    shapes["head.b"] = (cfg.out_dim,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Exact number of scalar learnables."""
    return sum(int(np.prod(shape)) for shape in param_shapes(cfg).values())


def decays(name: str) -> bool:
    """Whether weight decay applies: weight matrices only, never biases
    or layer-norm parameters."""
    return name.rsplit(".", 1)[-1].startswith("w")


def init_model(cfg: ModelConfig, seed: int) -> Params:
    """Initialize parameters: weights N(0, 0.02^2) with residual output
    projections (attn.wo, ffn.w2) scaled by 1/sqrt(2*n_layers), biases
    zero, layer-norm gains one."""
    rng = np.random.default_rng(seed)
    resid_scale = 1.0 / math.sqrt(2.0 * cfg.n_layers)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("w"):
            w = rng.standard_normal(shape) * 0.02
            if leaf in ("wo", "w2"):
                w *= resid_scale
            params[name] = w
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def cast_params(params: Params, dtype) -> Params:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}


@lru_cache(maxsize=8)
def _positions_f64(context_len: int, d_model: int) -> np.ndarray:
    # Fixed sinusoidal table: pe[t, 2i] = sin(t * w_i), pe[t, 2i+1] = cos.
    t = np.arange(context_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = t / np.power(10000.0, i / d_model)
    pe = np.zeros((context_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : pe[:, 1::2].shape[1]])
    return pe


def positional_table(cfg: ModelConfig, dtype=np.float64) -> np.ndarray:
    """Non-learned additive positional encoding, (context_len, d_model)."""
    return _positions_f64(cfg.context_len, cfg.d_model).astype(dtype, copy=False)


def _causal_mask(T: int, dtype) -> np.ndarray:
    mask = np.zeros((T, T), dtype=dtype)
    mask[np.triu_indices(T, k=1)] = -np.inf
    return mask


def _layer_norm(x: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv
    return xhat, inv


def _layer_norm_backward(dy, g, xhat, inv):
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _gelu(u: np.ndarray):
    inner = _GELU_C * (u + _GELU_A * u ** 3)
    th = np.tanh(inner)
    return 0.5 * u * (1.0 + th), th


def _gelu_backward(dg, u, th):
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * u ** 2)
    return dg * (0.5 * (1.0 + th) + 0.5 * u * (1.0 - th ** 2) * dinner)


def _softmax_masked(scores: np.ndarray) -> np.ndarray:
    # Rows always contain at least one finite entry (the diagonal), so
    # the max is finite and masked -inf entries exp to exactly 0.
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _attention_probs(q, k, scale, mask, out):
    """Masked softmax(q k^T * scale + mask) computed in the preallocated
    `out` buffer. In-place (same arithmetic as the expression form, no
    (B, H, T, T) temporaries; those allocations dominate runtime for
    the larger models)."""
    np.matmul(q, k.swapaxes(-1, -2), out=out)
    out *= scale
    out += mask
    m = out.max(axis=-1, keepdims=True)
    out -= m
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def _split_heads(x, B, T, H, dh):
    return x.reshape(B, T, H, dh).transpose(0, 2, 1, 3)


def _merge_heads(x, B, T, d):
    return x.transpose(0, 2, 1, 3).reshape(B, T, d)


def _forward_cached(cfg: ModelConfig, params: Params, inputs, keep_attn=False,
                    build_cache=True):
    dtype = params["embed.w"].dtype
    x = np.asarray(inputs, dtype=dtype)
    if x.ndim != 3 or x.shape[2] != cfg.in_dim:
        raise ValueError(f"inputs must be (B, T, {cfg.in_dim})")
    B, T, _ = x.shape
    if not (1 <= T <= cfg.context_len):
        raise ValueError(f"sequence length {T} outside 1..{cfg.context_len}")
    H, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
    scale = 1.0 / math.sqrt(dh)
    mask = _causal_mask(T, dtype)

    h = x @ params["embed.w"] + params["embed.b"] + positional_table(cfg, dtype)[:T]
    layers = []
    shared_probs = None if keep_attn else np.empty((B, H, T, T), dtype=dtype)
    ctx_buf = np.empty((B, H, T, dh), dtype=dtype)
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        xhat1, inv1 = _layer_norm(h)
        a = xhat1 * params[p + "ln1.g"] + params[p + "ln1.b"]
        q = _split_heads(a @ params[p + "attn.wq"] + params[p + "attn.bq"], B, T, H, dh)
        k = _split_heads(a @ params[p + "attn.wk"] + params[p + "attn.bk"], B, T, H, dh)
        v = _split_heads(a @ params[p + "attn.wv"] + params[p + "attn.bv"], B, T, H, dh)
        buf = np.empty((B, H, T, T), dtype=dtype) if keep_attn else shared_probs
        probs = _attention_probs(q, k, scale, mask, buf)
        ctx = _merge_heads(np.matmul(probs, v, out=ctx_buf), B, T, d)
        h = h + ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]

        xhat2, inv2 = _layer_norm(h)
        f = xhat2 * params[p + "ln2.g"] + params[p + "ln2.b"]
        u = f @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        g, th = _gelu(u)
        h = h + g @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        if build_cache:
            layers.append(
                dict(
                    xhat1=xhat1, inv1=inv1, a=a, q=q, k=k, v=v, ctx=ctx,
                    xhat2=xhat2, inv2=inv2, f=f, u=u, th=th, g=g,
                    probs=probs if keep_attn else None,
                )
            )
        del probs

    xhatf, invf = _layer_norm(h)
    hn = xhatf * params["final_ln.g"] + params["final_ln.b"]
    out = hn @ params["head.w"] + params["head.b"]
    if not build_cache:
        return out, None
    cache = dict(x=x, layers=layers, xhatf=xhatf, invf=invf, hn=hn, mask=mask, scale=scale)
    return out, cache


def forward(cfg: ModelConfig, params: Params, inputs: np.ndarray) -> np.ndarray:
    """Predictions (B, T, out_dim); position t sees only inputs[0..t]."""
    out, _ = _forward_cached(cfg, params, inputs, build_cache=False)
    if not np.isfinite(out).all():
        raise NonFiniteActivation("non-finite values in model output")
    return out


def forward_fn(cfg: ModelConfig, params: Params) -> Callable[[np.ndarray], np.ndarray]:
    """Bind (cfg, params) into a plain (B, T, 3) -> (B, T, 3) callable."""
    return lambda inputs: forward(cfg, params, inputs)


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over batch and positions of the squared error summed over
    the three output dimensions."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError("shape mismatch between predictions and targets")
    diff = predictions.astype(np.float64) - targets.astype(np.float64)
    n_rows = int(np.prod(diff.shape[:-1]))
    return float(np.sum(diff * diff) / n_rows)


def grad(
    cfg: ModelConfig, params: Params, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, Params]:
    """Loss and exact partial derivatives of mse_loss(forward(inputs),
    targets) with respect to every learnable."""
    out, cache = _forward_cached(cfg, params, inputs, keep_attn=True)
    if not np.isfinite(out).all():
        raise NonFiniteActivation("non-finite values in model output")
    loss = mse_loss(out, targets)

    dtype = out.dtype
    B, T, _ = out.shape
    H, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
    scale = cache["scale"]
    mask = cache["mask"]
    grads: Params = {}

    dout = (2.0 / (B * T)) * (out - np.asarray(targets, dtype=dtype))
    hn = cache["hn"]
    grads["head.w"] = hn.reshape(-1, d).T @ dout.reshape(-1, cfg.out_dim)
    grads["head.b"] = dout.sum(axis=(0, 1))
    dhn = dout @ params["head.w"].T
    dh_res, grads["final_ln.g"], grads["final_ln.b"] = _layer_norm_backward(
        dhn, params["final_ln.g"], cache["xhatf"], cache["invf"]
    )

    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}."
        c = cache["layers"][i]
        # feed-forward branch
        dffn = dh_res
        g, u, th, f = c["g"], c["u"], c["th"], c["f"]
        grads[p + "ffn.w2"] = g.reshape(-1, cfg.d_ff).T @ dffn.reshape(-1, d)
        grads[p + "ffn.b2"] = dffn.sum(axis=(0, 1))
        dg = dffn @ params[p + "ffn.w2"].T
        du = _gelu_backward(dg, u, th)
        grads[p + "ffn.w1"] = f.reshape(-1, d).T @ du.reshape(-1, cfg.d_ff)
        grads[p + "ffn.b1"] = du.sum(axis=(0, 1))
        df = du @ params[p + "ffn.w1"].T
        dln2, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_backward(
            df, params[p + "ln2.g"], c["xhat2"], c["inv2"]
        )
        dh_res = dh_res + dln2

        # attention branch (probs recomputed from cached q, k)
        do = dh_res
        ctx, a, q, k, v = c["ctx"], c["a"], c["q"], c["k"], c["v"]
        probs = c["probs"]
        if probs is None:
            probs = _softmax_masked(q @ k.swapaxes(-1, -2) * scale + mask)
        grads[p + "attn.wo"] = ctx.reshape(-1, d).T @ do.reshape(-1, d)
        grads[p + "attn.bo"] = do.sum(axis=(0, 1))
        dctx = _split_heads(do @ params[p + "attn.wo"].T, B, T, H, dh)
        dprobs = dctx @ v.swapaxes(-1, -2)
        dv = probs.swapaxes(-1, -2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dscores *= scale
        dq = dscores @ k
        dk = dscores.swapaxes(-1, -2) @ q
        del probs, dprobs, dscores
        da = np.zeros_like(a)
        a_flat = a.reshape(-1, d)
        for name, dt_ in (("wq", dq), ("wk", dk), ("wv", dv)):
            dt_m = _merge_heads(dt_, B, T, d)
            grads[p + "attn." + name] = a_flat.T @ dt_m.reshape(-1, d)
            grads[p + "attn.b" + name[1:]] = dt_m.sum(axis=(0, 1))
            da += dt_m @ params[p + "attn." + name].T
        dln1, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_backward(
            da, params[p + "ln1.g"], c["xhat1"], c["inv1"]
        )
        dh_res = dh_res + dln1

    x = cache["x"]
    grads["embed.w"] = x.reshape(-1, cfg.in_dim).T @ dh_res.reshape(-1, d)
    grads["embed.b"] = dh_res.sum(axis=(0, 1))
    grads = {name: grads[name] for name in params}  # canonical ordering
    return loss, grads


def generate(
    cfg: ModelConfig, params: Params, context: np.ndarray, n_steps: int
) -> np.ndarray:
    """Autoregressive continuation: append n_steps one-step predictions,
    each conditioned on the trailing context window. Diagnostic use;
    training and evaluation are one-step-ahead only."""
    seq = np.asarray(context, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != cfg.in_dim:
        raise ValueError("context must be (T, 3)")
    for _ in range(n_steps):
        window = seq[-cfg.context_len:]
        out = forward(cfg, params, window[None])
        seq = np.concatenate([seq, out[0, -1:].astype(np.float64)], axis=0)
    return seq
