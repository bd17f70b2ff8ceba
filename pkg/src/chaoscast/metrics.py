"""Evaluation quantities: information coefficient, held-out model
evaluation, threshold crossings of IC curves, and the samples-vs-horizon
scaling fit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateFit, DegenerateSeries
from .lorenz import GenConfig, batch_stream, stack_batch
from .model import ModelConfig, Params, forward

ForwardFn = Callable[[np.ndarray], np.ndarray]


def information_coefficient(pred: np.ndarray, target: np.ndarray) -> float:
    """Pearson correlation between predictions and realized targets."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape or pred.size < 3:
        raise ValueError("pred and target must have equal length >= 3")
    if pred.std() == 0.0 or target.std() == 0.0:
        raise DegenerateSeries("zero variance input to information coefficient")
    return float(np.corrcoef(pred, target)[0, 1])


@dataclass(frozen=True)
class EvalMetrics:
    val_loss: float
    ic_x: float
    ic_y: float
    ic_z: float

    def ic(self, dim: int) -> float:
        return (self.ic_x, self.ic_y, self.ic_z)[dim]


def eval_arrays(
    model_cfg: ModelConfig,
    params: Params,
    inputs: np.ndarray,
    targets: np.ndarray,
    batch_size: int = 64,
    forward_fn: ForwardFn | None = None,
) -> EvalMetrics:
    """Pool one-step predictions at every position of every sequence and
    report MSE loss plus per-dimension IC."""
    if forward_fn is None:
        forward_fn = lambda x: forward(model_cfg, params, x)
    n = inputs.shape[0]
    preds = np.empty(inputs.shape, dtype=np.float64)
    for i in range(0, n, batch_size):
        preds[i : i + batch_size] = forward_fn(inputs[i : i + batch_size])
    diff = preds - targets
    val_loss = float(np.sum(diff * diff) / (n * inputs.shape[1]))
    ics = [
        information_coefficient(preds[..., d].ravel(), np.asarray(targets)[..., d].ravel())
        for d in range(3)
    ]
    return EvalMetrics(val_loss=val_loss, ic_x=ics[0], ic_y=ics[1], ic_z=ics[2])


def _held_out_arrays(model_cfg: ModelConfig, interval: int, n_sequences: int,
                     seed: int, dt: float, ode_warmup_steps: int):
    gen_cfg = GenConfig(
        interval=interval, seed=seed, dt=dt, warmup_steps=ode_warmup_steps,
        context_len=model_cfg.context_len,
    )
    stream = batch_stream(seed, gen_cfg, batch_size=min(n_sequences, 64))
    seqs = []
    while len(seqs) < n_sequences:
        seqs.extend(next(stream))
    return stack_batch(seqs[:n_sequences])


def eval_model(
    model_cfg: ModelConfig,
    params: Params,
    interval: int,
    n_sequences: int,
    seed: int,
    dt: float = 0.01,
    ode_warmup_steps: int = 1000,
    batch_size: int = 64,
    forward_fn: ForwardFn | None = None,
) -> EvalMetrics:
    """Generate held-out sequences at `interval` from `seed` and
    evaluate the model on them."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    inputs, targets = _held_out_arrays(
        model_cfg, interval, n_sequences, seed, dt, ode_warmup_steps
    )
    return eval_arrays(model_cfg, params, inputs, targets, batch_size, forward_fn)


def prediction_points(
    model_cfg: ModelConfig,
    params: Params,
    interval: int,
    n_sequences: int,
    seed: int,
    dt: float = 0.01,
    ode_warmup_steps: int = 1000,
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled (predictions, targets) 3-vector clouds over held-out
    sequences, for state-space inspection of what the model reproduces
    (feed either to chaoscast.lorenz.export_attractor)."""
    inputs, targets = _held_out_arrays(
        model_cfg, interval, n_sequences, seed, dt, ode_warmup_steps
    )
    preds = np.empty(inputs.shape, dtype=np.float64)
    for i in range(0, inputs.shape[0], batch_size):
        preds[i : i + batch_size] = forward(model_cfg, params, inputs[i : i + batch_size])
    return preds.reshape(-1, 3), targets.reshape(-1, 3)


# ---------------------------------------------------------------------------
# IC curves and the scaling fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ICCurve:
    """IC as a function of consumed training samples, one horizon."""

    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        samples = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(samples, samples[1:])):
            raise ValueError("samples_seen must be strictly increasing")

    @classmethod
    def from_lists(cls, samples: Sequence[int], ic: Sequence[float]) -> "ICCurve":
        return cls(tuple(zip([int(s) for s in samples], [float(v) for v in ic])))


def samples_to_threshold(
    curve: ICCurve, threshold: float, window: int = 3
) -> int | None:
    """Smallest samples_seen whose trailing moving average of IC (over
    up to `window` points) reaches the threshold; None if never."""
    if not curve.points:
        raise ValueError("curve is empty")
    if window < 1:
        raise ValueError("window must be >= 1")
    values = [v for _, v in curve.points]
    for i, (samples, _) in enumerate(curve.points):
        avg = float(np.mean(values[max(0, i - window + 1) : i + 1]))
        if avg >= threshold:
            return samples
    return None


@dataclass(frozen=True)
class ScalingPoint:
    horizon: int
    samples_to_threshold: int

    def __post_init__(self):
        if self.horizon <= 0 or self.samples_to_threshold <= 0:
            raise ValueError("horizon and samples_to_threshold must be positive")


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


def fit_scaling_law(points: Sequence[ScalingPoint]) -> ScalingFit:
    """Least-squares line of log10(samples_to_threshold) against horizon."""
    if len(points) < 2:
        raise DegenerateFit("need at least 2 scaling points")
    h = np.array([p.horizon for p in points], dtype=np.float64)
    ls = np.log10([p.samples_to_threshold for p in points])
    if np.all(h == h[0]):
        raise DegenerateFit("all horizons equal; line is undetermined")
    hm = h.mean()
    lm = ls.mean()
    slope = float(np.sum((h - hm) * (ls - lm)) / np.sum((h - hm) ** 2))
    intercept = float(lm - slope * hm)
    resid = ls - (slope * h + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ls - lm) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ScalingFit(slope=slope, intercept=intercept, r2=r2, n_points=len(points))
