"""Zero-shot prediction over sliding windows and the tail-quantile
long/short evaluation.

Strategy: long when the predicted price change rate is at or above the
high calibration quantile, short at or below the low one, flat
otherwise; one unit of notional, no costs. Profits use unscaled
realized next-bar returns. The autocorrelation baseline predicts with
the final context value of y and is evaluated identically. Thresholds
always come from the calibration segment, never the test span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import load_checkpoint
from .errors import InsufficientCalibration, MissingCheckpoint
from .market import (
    DEFAULT_CALIBRATION_BARS,
    BarSeries,
    Scaler,
    WindowSet,
    build_calibration_windows,
    build_test_windows,
    fit_scaler,
    identity_scaler,
)
from .model import ModelConfig, Params, forward

ForwardFn = Callable[[np.ndarray], np.ndarray]

Y_DIM = 1  # column of the price change rate in (x, y, z)


@dataclass(frozen=True)
class StrategyConfig:
    long_quantile: float = 0.95
    short_quantile: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.short_quantile < self.long_quantile < 1.0:
            raise ValueError("need 0 < short_quantile < long_quantile < 1")


@dataclass
class PredictionSeries:
    t_pred: np.ndarray  # (n,) int64, strictly increasing
    pred_y: np.ndarray  # (n,) model-space predictions
    realized_y: np.ndarray  # (n,) unscaled realized next-bar returns

    def __post_init__(self):
        if not (len(self.t_pred) == len(self.pred_y) == len(self.realized_y)):
            raise ValueError("prediction series arrays must align")
        if np.any(np.diff(self.t_pred) <= 0):
            raise ValueError("t_pred must be strictly increasing")


def _identity_forward(x: np.ndarray) -> np.ndarray:
    return x


def predict_series(
    windows: WindowSet,
    forward_fn: ForwardFn,
    batch_size: int = 64,
) -> PredictionSeries:
    """One prediction per window: the y output at the final context
    position (the one-step-ahead forecast)."""
    n = len(windows)
    pred_y = np.empty(n, dtype=np.float64)
    for i in range(0, n, batch_size):
        out = forward_fn(windows.batch(i, min(i + batch_size, n)))
        pred_y[i : i + out.shape[0]] = out[:, -1, Y_DIM]
    return PredictionSeries(
        t_pred=windows.t_pred.copy(),
        pred_y=pred_y,
        realized_y=windows.realized_next_y.copy(),
    )


def model_prediction_fn(cfg: ModelConfig, params: Params) -> ForwardFn:
    return lambda x: forward(cfg, params, x)


def baseline_series(windows: WindowSet, batch_size: int = 64) -> PredictionSeries:
    """Autocorrelation baseline: predict with the final context y."""
    return predict_series(windows, _identity_forward, batch_size)


def percentile_thresholds(
    calib_preds: np.ndarray, lo_q: float, hi_q: float
) -> tuple[float, float]:
    """Nearest-rank quantiles of the calibration prediction distribution."""
    preds = np.asarray(calib_preds, dtype=np.float64).ravel()
    if preds.size < 20:
        raise InsufficientCalibration(
            f"need >= 20 calibration predictions, have {preds.size}"
        )
    if not lo_q < hi_q:
        raise ValueError("lo_q must be < hi_q")
    ordered = np.sort(preds)
    n = ordered.size

    def rank(q: float) -> float:
        k = min(max(math.ceil(q * n), 1), n)
        return float(ordered[k - 1])

    return rank(lo_q), rank(hi_q)


@dataclass
class StrategyResult:
    total_return: float
    balance_curve: np.ndarray  # cumulative sum of step profits
    n_trades: int
    positions: np.ndarray  # (n,) in {-1, 0, +1}


def run_strategy(
    series: PredictionSeries, thresholds: tuple[float, float]
) -> StrategyResult:
    """Apply tail-threshold positions to realized returns.

    position = +1 if pred >= hi, -1 if pred <= lo, else 0; with lo == hi
    a prediction matching both cancels to 0 (no trade on degenerate
    thresholds). Step profit is position * realized_y.
    """
    lo, hi = thresholds
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("thresholds must be finite")
    if lo > hi:
        raise ValueError("lo threshold must be <= hi")
    positions = (series.pred_y >= hi).astype(np.int64) - (series.pred_y <= lo).astype(np.int64)
    profits = positions * series.realized_y
    balance = np.cumsum(profits)
    total = float(balance[-1]) if balance.size else 0.0
    return StrategyResult(
        total_return=total,
        balance_curve=balance,
        n_trades=int(np.count_nonzero(positions)),
        positions=positions,
    )


# ---------------------------------------------------------------------------
# Grid report
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    timeframe_s: int
    horizon: int
    model_return: float
    baseline_return: float
    excess_return: float
    n_trades: int
    t_pred: np.ndarray
    balance_curve: np.ndarray
    thresholds: tuple[float, float] = (math.nan, math.nan)


@dataclass
class CellError:
    timeframe_s: int
    horizon: int
    error: str


@dataclass
class BacktestReport:
    cells: list[CellResult] = field(default_factory=list)
    baseline_returns: dict[int, float] = field(default_factory=dict)
    errors: list[CellError] = field(default_factory=list)
    scalers: dict[tuple[int, int], Scaler] = field(default_factory=dict)

    def cell(self, timeframe_s: int, horizon: int) -> CellResult:
        for c in self.cells:
            if c.timeframe_s == timeframe_s and c.horizon == horizon:
                return c
        raise KeyError((timeframe_s, horizon))

    def _ranks(self) -> dict[tuple[int, int], int]:
        ranks: dict[tuple[int, int], int] = {}
        for tf in sorted({c.timeframe_s for c in self.cells}):
            row = sorted(
                (c for c in self.cells if c.timeframe_s == tf),
                key=lambda c: -c.excess_return,
            )
            for pos, c in enumerate(row[:2], start=1):
                ranks[(tf, c.horizon)] = pos
        return ranks

    def to_csv(self, path: str | Path) -> None:
        ranks = self._ranks()
        lines = ["timeframe_s,horizon,model_return,baseline_return,excess_return,n_trades,excess_rank"]
        for c in sorted(self.cells, key=lambda c: (c.timeframe_s, c.horizon)):
            rank = ranks.get((c.timeframe_s, c.horizon), "")
            lines.append(
                f"{c.timeframe_s},{c.horizon},{c.model_return!r},"
                f"{c.baseline_return!r},{c.excess_return!r},{c.n_trades},{rank}"
            )
        for e in sorted(self.errors, key=lambda e: (e.timeframe_s, e.horizon)):
            lines.append(f"{e.timeframe_s},{e.horizon},,,,,{e.error!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def _forward_for(entry) -> ForwardFn:
    """Accepts a checkpoint path, a (ModelConfig, Params) pair, or a
    ready (B, L, 3) -> (B, L, 3) callable."""
    if callable(entry):
        return entry
    if isinstance(entry, (str, Path)):
        ckpt = load_checkpoint(entry)
        return model_prediction_fn(ckpt.model_config, ckpt.params)
    cfg, params = entry
    return model_prediction_fn(cfg, params)


def grid_report(
    bars_by_timeframe: Mapping[int, BarSeries],
    checkpoints_by_horizon: Mapping[int, object],
    ref_moments_by_horizon: Mapping[int, tuple[np.ndarray, np.ndarray]],
    strategy: StrategyConfig = StrategyConfig(),
    calibration_bars: int = DEFAULT_CALIBRATION_BARS,
    context_len: int = 512,
    batch_size: int = 64,
    horizons: Sequence[int] | None = None,
) -> BacktestReport:
    """Fill every (timeframe x horizon) cell with model, baseline, and
    excess returns. Per-cell failures are recorded, not fatal. The
    baseline is computed once per timeframe (its predictions do not
    depend on the horizon's scaling)."""
    report = BacktestReport()
    horizons = list(horizons) if horizons is not None else sorted(checkpoints_by_horizon)

    for tf in sorted(bars_by_timeframe):
        bars = bars_by_timeframe[tf]
        # baseline, in raw bar units (positions are scale-invariant)
        try:
            raw_calib = build_calibration_windows(
                bars, identity_scaler(), context_len, calibration_bars
            )
            raw_test = build_test_windows(
                bars, identity_scaler(), context_len, calibration_bars
            )
            base_calib = baseline_series(raw_calib, batch_size)
            base_thresholds = percentile_thresholds(
                base_calib.pred_y, strategy.short_quantile, strategy.long_quantile
            )
            base_result = run_strategy(baseline_series(raw_test, batch_size), base_thresholds)
            report.baseline_returns[tf] = base_result.total_return
        except Exception as exc:
            for h in horizons:
                report.errors.append(CellError(tf, h, f"{type(exc).__name__}: {exc}"))
            continue

        for h in horizons:
            try:
                if h not in checkpoints_by_horizon:
                    raise MissingCheckpoint(f"no checkpoint for horizon {h}")
                fn = _forward_for(checkpoints_by_horizon[h])
                ref_mean, ref_std = ref_moments_by_horizon[h]
                scaler = fit_scaler(
                    bars.xyz[: min(calibration_bars, len(bars))], ref_mean, ref_std,
                    provenance={
                        "timeframe_s": tf, "horizon": h,
                        "reference_interval": h,
                        "calibration_bars": int(min(calibration_bars, len(bars))),
                        "calibration_t_open": [int(bars.t_open[0]), int(
                            bars.t_open[min(calibration_bars, len(bars)) - 1])],
                    },
                )
                report.scalers[(tf, h)] = scaler
                calib = build_calibration_windows(bars, scaler, context_len, calibration_bars)
                test = build_test_windows(bars, scaler, context_len, calibration_bars)
                thresholds = percentile_thresholds(
                    predict_series(calib, fn, batch_size).pred_y,
                    strategy.short_quantile, strategy.long_quantile,
                )
                result = run_strategy(predict_series(test, fn, batch_size), thresholds)
                report.cells.append(
                    CellResult(
                        timeframe_s=tf,
                        horizon=h,
                        model_return=result.total_return,
                        baseline_return=report.baseline_returns[tf],
                        excess_return=result.total_return - report.baseline_returns[tf],
                        n_trades=result.n_trades,
                        t_pred=test.t_pred.copy(),
                        balance_curve=result.balance_curve,
                        thresholds=thresholds,
                    )
                )
            except Exception as exc:
                report.errors.append(CellError(tf, h, f"{type(exc).__name__}: {exc}"))
    return report


def write_balance_csv(cell: CellResult, path: str | Path) -> None:
    lines = ["t_pred,cumulative_return"]
    for t, v in zip(cell.t_pred, cell.balance_curve):
        lines.append(f"{int(t)},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
