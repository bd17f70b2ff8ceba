"""Single-epoch streaming pretraining loop.

Batches are generated on the fly (never revisiting a sequence seed),
pushed through exact gradients, clipped by global norm, and applied
with bias-corrected Adam plus decoupled weight decay under a linear
warmup / cosine decay schedule measured in samples. Sequence indices
0..val_sequences-1 are reserved for the fixed validation set; training
consumes indices from val_sequences upward, so the two can never
overlap. Checkpoints capture parameters, optimizer moments, and the
stream position; resuming reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import CheckpointMismatch
from .lorenz import GenConfig, GenStats, batch_stream, stack_batch
from .model import ModelConfig, Params, cast_params, decays, grad, init_model

logger = logging.getLogger(__name__)

#: Table batch sizes for the standard model presets.
PRESET_BATCH = {"0.1M": 60, "1M": 60, "10M": 40}

#: Stream index reserved for model initialization (never used for data).
MODEL_INIT_INDEX = -1

METRICS_COLUMNS = (
    "samples_seen", "step", "train_loss", "val_loss",
    "ic_x", "ic_y", "ic_z", "lr", "seconds",
)


@dataclass(frozen=True)
class TrainConfig:
    total_samples: int
    interval: int
    seed: int
    batch_size: int = 60
    base_lr: float = 1e-3
    warmup_frac: float = 0.06
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    eval_every: int = 20
    checkpoint_every: int = 0  # 0: final checkpoint only
    val_sequences: int = 256
    dt: float = 0.01
    ode_warmup_steps: int = 1000
    dtype: str = "float64"
    # optional early stop: once every set target is met at an eval point
    target_ic_y: float | None = None
    target_val_frac: float | None = None  # val_loss <= frac * step-0 val_loss
    prefetch: int = 2

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise ValueError("warmup_frac must be in (0, 1)")
        if self.total_samples < 1 or self.batch_size < 1:
            raise ValueError("total_samples and batch_size must be >= 1")
        if min(self.base_lr, self.adam_beta1, self.adam_beta2, self.adam_eps,
               self.weight_decay + 1, self.clip_norm) <= 0:
            raise ValueError("rates must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class OptimizerState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def zeros(cls, params: Params) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class MetricsRow:
    samples_seen: int
    step: int
    train_loss: float
    val_loss: float
    ic_x: float
    ic_y: float
    ic_z: float
    lr: float
    seconds: float


@dataclass
class MetricsLog:
    rows: list[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.samples_seen <= self.rows[-1].samples_seen:
            raise ValueError("samples_seen must be strictly increasing")
        self.rows.append(row)

    def write_csv(self, path: str | Path) -> None:
        lines = [",".join(METRICS_COLUMNS)]
        for r in self.rows:
            lines.append(
                f"{r.samples_seen},{r.step},{r.train_loss!r},{r.val_loss!r},"
                f"{r.ic_x!r},{r.ic_y!r},{r.ic_z!r},{r.lr!r},{r.seconds!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "MetricsLog":
        lines = Path(path).read_text().strip().splitlines()
        if not lines or tuple(lines[0].split(",")) != METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics header in {path}")
        log = cls()
        for line in lines[1:]:
            vals = line.split(",")
            log.append(MetricsRow(
                samples_seen=int(vals[0]), step=int(vals[1]),
                train_loss=float(vals[2]), val_loss=float(vals[3]),
                ic_x=float(vals[4]), ic_y=float(vals[5]), ic_z=float(vals[6]),
                lr=float(vals[7]), seconds=float(vals[8]),
            ))
        return log


# ---------------------------------------------------------------------------
# Schedule, clipping, Adam
# ---------------------------------------------------------------------------


def lr_schedule(samples_seen: int, total_samples: int, warmup_frac: float,
                base_lr: float) -> float:
    """Linear ramp to base_lr over warmup_frac of the run, then cosine
    decay to zero at total_samples."""
    if not 0 <= samples_seen <= total_samples:
        raise ValueError("samples_seen must lie in [0, total_samples]")
    warm = warmup_frac * total_samples
    if samples_seen < warm:
        return base_lr * samples_seen / warm
    progress = (samples_seen - warm) / (total_samples - warm)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: Params) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_global_norm(grads: Params, max_norm: float) -> Params:
    """Scale all gradients jointly so the global L2 norm is at most
    max_norm; returns the input unchanged when already within bounds."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    coef = max_norm / norm
    return {k: g * coef for k, g in grads.items()}


def adam_update(
    params: Params,
    grads: Params,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    weight_decay: float = 0.1,
    eps: float = 1e-8,
) -> tuple[Params, OptimizerState]:
    """Bias-corrected Adam step with decoupled weight decay. Decay is
    applied to weight matrices only (never biases or layer-norm
    parameters). Moment buffers are updated in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_params: Params = {}
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay != 0.0 and decays(name):
            update = update + weight_decay * theta
        new_params[name] = theta - lr * update
    return new_params, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: Params
    log: MetricsLog
    checkpoints: list[Path]
    stream_index_end: int
    samples_seen: int
    gen_stats: GenStats


class _Prefetcher:
    """Bounded single-producer queue over a batch iterator; preserves
    order, so it changes nothing but latency."""

    def __init__(self, iterator, depth: int):
        self._it = iterator
        self._q: queue.Queue = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        try:
            for item in self._it:
                while not self._stop.is_set():
                    try:
                        self._q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        except BaseException as exc:  # propagate to consumer
            while not self._stop.is_set():
                try:
                    self._q.put(exc, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def next(self):
        item = self._q.get()
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self):
        self._stop.set()


def _targets_met(cfg: TrainConfig, row: MetricsRow, log: MetricsLog) -> bool:
    if cfg.target_ic_y is None and cfg.target_val_frac is None:
        return False
    if cfg.target_ic_y is not None and row.ic_y < cfg.target_ic_y:
        return False
    if cfg.target_val_frac is not None:
        first = log.rows[0]
        if first.step != 0:
            return False  # no step-0 reference available
        if row.val_loss > cfg.target_val_frac * first.val_loss:
            return False
    return True


def _gen_config(model_cfg: ModelConfig, cfg: TrainConfig) -> GenConfig:
    return GenConfig(
        interval=cfg.interval,
        seed=cfg.seed,
        dt=cfg.dt,
        warmup_steps=cfg.ode_warmup_steps,
        context_len=model_cfg.context_len,
    )


def validation_arrays(model_cfg: ModelConfig, cfg: TrainConfig):
    """The fixed held-out set: stream indices 0..val_sequences-1."""
    gen_cfg = _gen_config(model_cfg, cfg)
    stream = batch_stream(cfg.seed, gen_cfg, batch_size=min(cfg.val_sequences, 64))
    seqs = []
    while len(seqs) < cfg.val_sequences:
        seqs.extend(next(stream))
    inputs, targets = stack_batch(seqs[: cfg.val_sequences])
    return inputs, targets


def train(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run (or resume) a single-epoch streaming pretraining job.

    Writes `ckpt_step<N>` every checkpoint_every steps and `ckpt_final`
    at the end when out_dir is given; on a non-finite failure the last
    written checkpoint is left intact and the error re-raised.
    """
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    gen_cfg = _gen_config(model_cfg, cfg)
    samples_per_step = cfg.batch_size * model_cfg.context_len
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.model_config != model_cfg:
            raise CheckpointMismatch(
                f"checkpoint model config {ckpt.model_config} != requested {model_cfg}"
            )
        if ckpt.train_config is not None and ckpt.train_config != cfg.to_dict():
            raise CheckpointMismatch("checkpoint train config differs from requested")
        if ckpt.adam_m is None or ckpt.adam_v is None:
            raise CheckpointMismatch("checkpoint lacks optimizer state; cannot resume")
        params = cast_params(ckpt.params, dtype)
        opt = OptimizerState(
            m=cast_params(ckpt.adam_m, dtype),
            v=cast_params(ckpt.adam_v, dtype),
            step=ckpt.step,
        )
        step = ckpt.step
        samples_seen = ckpt.samples_seen
        stream_index = ckpt.stream_index
    else:
        from .lorenz import derive_seed

        params = cast_params(init_model(model_cfg, derive_seed(cfg.seed, MODEL_INIT_INDEX)), dtype)
        opt = OptimizerState.zeros(params)
        step = 0
        samples_seen = 0
        stream_index = cfg.val_sequences

    val_inputs, val_targets = validation_arrays(model_cfg, cfg)

    stats = GenStats()
    stream = batch_stream(
        cfg.seed, gen_cfg, cfg.batch_size, start_index=stream_index, stats=stats
    )
    feeder = _Prefetcher(stream, cfg.prefetch) if cfg.prefetch > 0 else None

    log = MetricsLog()
    if resume_from is not None and out_dir is not None and (out_dir / "metrics.csv").exists():
        # continue the metrics history up to the checkpoint's position
        prior = MetricsLog.read_csv(out_dir / "metrics.csv")
        for row in prior.rows:
            if row.samples_seen <= samples_seen:
                log.append(row)
    checkpoints: list[Path] = []
    t0 = time.perf_counter()
    last_train_loss = math.nan
    stopped_early = False

    def evaluate(train_loss: float, lr: float) -> MetricsRow:
        ev = metrics_mod.eval_arrays(model_cfg, params, val_inputs, val_targets)
        return MetricsRow(
            samples_seen=samples_seen, step=step, train_loss=train_loss,
            val_loss=ev.val_loss, ic_x=ev.ic_x, ic_y=ev.ic_y, ic_z=ev.ic_z,
            lr=lr, seconds=time.perf_counter() - t0,
        )

    def write_checkpoint(stem_name: str) -> None:
        if out_dir is None:
            return
        ckpt = Checkpoint(
            model_config=model_cfg, params=params, step=step,
            samples_seen=samples_seen, stream_index=stream_index,
            adam_m=opt.m, adam_v=opt.v, train_config=cfg.to_dict(),
        )
        save_checkpoint(ckpt, out_dir / stem_name)
        checkpoints.append(out_dir / stem_name)
        if out_dir is not None:
            log.write_csv(out_dir / "metrics.csv")

    try:
        if step == 0:
            row = evaluate(math.nan, 0.0)
            log.append(row)
            logger.info("step 0: val_loss=%.6g ic_y=%.4f", row.val_loss, row.ic_y)
        just_evaluated = False
        while samples_seen < cfg.total_samples:
            batch = feeder.next() if feeder is not None else next(stream)
            stream_index += cfg.batch_size
            inputs, targets = stack_batch(batch)
            loss, grads = grad(cfg=model_cfg, params=params, inputs=inputs, targets=targets)
            grads = clip_global_norm(grads, cfg.clip_norm)
            samples_seen += samples_per_step
            lr = lr_schedule(
                min(samples_seen, cfg.total_samples), cfg.total_samples,
                cfg.warmup_frac, cfg.base_lr,
            )
            params, opt = adam_update(
                params, grads, opt, lr,
                beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                weight_decay=cfg.weight_decay, eps=cfg.adam_eps,
            )
            step += 1
            last_train_loss = loss
            just_evaluated = False
            if cfg.eval_every and step % cfg.eval_every == 0:
                row = evaluate(loss, lr)
                log.append(row)
                just_evaluated = True
                logger.info(
                    "step %d (%d samples): train=%.6g val=%.6g ic_y=%.4f lr=%.3g",
                    step, samples_seen, loss, row.val_loss, row.ic_y, lr,
                )
                if _targets_met(cfg, row, log):
                    stopped_early = True
                    break
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                write_checkpoint(f"ckpt_step{step}")
        fresh_progress = not log.rows or samples_seen > log.rows[-1].samples_seen
        if not just_evaluated and fresh_progress:
            row = evaluate(last_train_loss, lr_schedule(
                min(samples_seen, cfg.total_samples), cfg.total_samples,
                cfg.warmup_frac, cfg.base_lr))
            log.append(row)
        if stopped_early:
            logger.info("stopping early: ic_y reached %.4f", cfg.target_ic_y)
        write_checkpoint("ckpt_final")
    finally:
        if feeder is not None:
            feeder.close()
        if out_dir is not None:
            log.write_csv(out_dir / "metrics.csv")

    return TrainResult(
        params=params, log=log, checkpoints=checkpoints,
        stream_index_end=stream_index, samples_seen=samples_seen, gen_stats=stats,
    )
