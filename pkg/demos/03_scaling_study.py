#!/usr/bin/env python3
"""The samples-to-skill scaling harness.

Longer predictive horizons need exponentially more training samples to
reach the same information coefficient. This demo exercises the
measurement tooling on constructed IC curves (running the full sweep
takes GPU-scale budgets): trailing-average threshold crossings, the
log-linear fit of required samples against horizon, and the NotReached
bookkeeping for horizons that never get there.

Run from the repository root:  python3 demos/03_scaling_study.py
Outputs land in demos/out/03/.
"""

import math
from pathlib import Path

import numpy as np

from chaoscast import ICCurve, ScalingPoint, fit_scaling_law, samples_to_threshold
from chaoscast.svgplot import line_plot

OUT = Path(__file__).parent / "out" / "03"
OUT.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(0)
THRESHOLD = 0.1

# Synthetic training histories: IC grows roughly logistically in
# log-samples, the horizon shifts the curve right exponentially.
horizons = [100, 200, 300, 400, 500, 700]
true_slope, true_intercept = 0.004, 4.4


def make_curve(horizon):
    cross = 10 ** (true_slope * horizon + true_intercept)
    samples = np.unique(np.logspace(3.5, 9.5, 40).astype(np.int64))
    ic = 0.35 / (1 + (cross / samples) ** 1.2) + rng.normal(0, 0.004, samples.size)
    return ICCurve.from_lists(samples.tolist(), ic.tolist())


points = []
curve_series = []
for h in horizons:
    curve = make_curve(h)
    crossing = samples_to_threshold(curve, THRESHOLD, window=3)
    label = f"{crossing:,}" if crossing is not None else "NotReached"
    print(f"horizon {h:>4}: samples to IC {THRESHOLD} = {label}")
    if crossing is not None:
        points.append(ScalingPoint(h, crossing))
    curve_series.append((
        [math.log10(s) for s, _ in curve.points],
        [v for _, v in curve.points],
        f"h={h}",
    ))

# A horizon that never reaches the bar is recorded, not fitted.
flat = ICCurve.from_lists([10**k for k in range(4, 10)], [0.02] * 6)
print(f"horizon 1000: samples to IC {THRESHOLD} = "
      f"{samples_to_threshold(flat, THRESHOLD) or 'NotReached'}")

fit = fit_scaling_law(points)
print(f"fit: log10(samples) = {fit.slope:.5f} * horizon + {fit.intercept:.3f} "
      f"(r2 = {fit.r2:.4f}, truth {true_slope}/{true_intercept})")

line_plot(OUT / "ic_curves.svg", curve_series,
          title="IC vs training samples by horizon",
          xlabel="log10 samples seen", ylabel="information coefficient")
hs = [p.horizon for p in points]
line_plot(
    OUT / "scaling_fit.svg",
    [
        (hs, [math.log10(p.samples_to_threshold) for p in points], "measured"),
        (hs, [fit.slope * h + fit.intercept for h in hs], "fit"),
    ],
    title=f"samples to IC {THRESHOLD}: exponential in horizon",
    xlabel="predictive horizon", ylabel="log10 samples",
)
print(f"wrote plots to {OUT}")
