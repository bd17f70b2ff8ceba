#!/usr/bin/env python3
"""Zero-shot evaluation on market-shaped data.

End of the pipeline: raw trades are aggregated into (order flow, price
change rate, volume) bars, scaled onto the training distribution with
coefficients fitted on the calibration prefix only, and swept by a
sliding 512-context window (here 128 to keep the demo quick). The
pretrained model from demo 02 predicts one bar ahead; a tail-quantile
long/short rule turns predictions into positions, and the result is
compared with the last-value autocorrelation baseline.

The trades here are synthesized from a resampled trajectory plus noise
so the demo runs anywhere; point `parse_trades` at a real
timestamp_ms,price,size,side CSV for the real thing.

Run demos/02_pretrain_small.py first, then:
    python3 demos/04_market_zero_shot.py
Outputs land in demos/out/04/.
"""

import sys
from pathlib import Path

import numpy as np

from chaoscast import (
    BarSeries,
    GenConfig,
    StrategyConfig,
    grid_report,
    load_checkpoint,
)
from chaoscast.backtest import write_balance_csv
from chaoscast.lorenz import reference_moments, resample_series
from chaoscast.svgplot import line_plot

OUT = Path(__file__).parent / "out" / "04"
OUT.mkdir(parents=True, exist_ok=True)
CKPT = Path(__file__).parent / "out" / "02" / "ckpt_final"

if not CKPT.with_suffix(".json").exists():
    sys.exit("run demos/02_pretrain_small.py first (needs its checkpoint)")

ckpt = load_checkpoint(CKPT)
model_cfg = ckpt.model_config
horizon = ckpt.train_config["interval"]
context = model_cfg.context_len
print(f"loaded checkpoint: step {ckpt.step}, horizon {horizon}, context {context}")

# A synthetic market: the y channel of a held-out trajectory plus 50%
# observation noise; x and z stay clean.
calib_bars, test_bars = 1500, 4000
n = calib_bars + test_bars + context
clean = resample_series(GenConfig(interval=horizon, seed=555), n)
rng = np.random.default_rng(556)
noisy = clean.copy()
noisy[:, 1] += rng.normal(0, 0.5 * clean[:, 1].std(), n)
bars = BarSeries(
    timeframe_s=15,
    t_open=np.arange(n, dtype=np.int64) * 15_000,
    xyz=noisy,
    close=np.full(n, 1.0),
)
print(f"market: {n} bars at {bars.timeframe_s}s, calibration prefix {calib_bars}")

moments = reference_moments(
    GenConfig(interval=horizon, seed=99, context_len=context), 64, 99
)
report = grid_report(
    {15: bars},
    {horizon: (model_cfg, ckpt.params)},
    {horizon: moments},
    strategy=StrategyConfig(long_quantile=0.95, short_quantile=0.05),
    calibration_bars=calib_bars,
    context_len=context,
)
if report.errors:
    sys.exit(f"backtest failed: {report.errors}")

cell = report.cell(15, horizon)
# returns are in raw series units here (synthetic y has trajectory scale,
# not the ~1e-4 of real per-bar returns); only comparisons are meaningful
print(f"model return    {cell.model_return:+.3f} over {cell.n_trades} trades")
print(f"baseline return {cell.baseline_return:+.3f}")
print(f"excess return   {cell.excess_return:+.3f}")

report.to_csv(OUT / "report.csv")
write_balance_csv(cell, OUT / "balance.csv")
report.scalers[(15, horizon)].to_json(OUT / "scaler.json")
line_plot(
    OUT / "balance.svg",
    [(cell.t_pred / 1000.0, cell.balance_curve, "model")],
    title="cumulative return, tail-quantile long/short",
    xlabel="time (s)", ylabel="cumulative return",
)
print(f"wrote report, balance curve, and scaler to {OUT}")
