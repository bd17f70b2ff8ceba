"""Market trade ingestion: trades -> per-timeframe bars -> scaled
sliding test windows.

Bars carry (x, y, z) = (signed order flow, close-to-close price change
rate, total volume). Scaling is an affine map per dimension fitted on
the calibration prefix only, matching its first two moments to those of
generated training data at the chosen horizon; test windows never
overlap the calibration segment.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DegenerateCalibration,
    EmptyInput,
    InsufficientData,
    SchemaMismatch,
    UnreadableFile,
)

TRADE_COLUMNS = ("timestamp_ms", "price", "size", "side")
STANDARD_TIMEFRAMES = (5, 10, 15, 20, 25, 30, 60)
DEFAULT_CALIBRATION_BARS = 10_000


@dataclass(frozen=True)
class TradeRecord:
    timestamp_ms: int
    price: float
    size: float
    side: str  # "buy" (buyer-initiated) or "sell"


@dataclass
class ParseReport:
    n_rows: int = 0
    n_ok: int = 0
    n_skipped: int = 0
    reasons: Counter = field(default_factory=Counter)


def parse_trades(path: str | Path) -> tuple[list[TradeRecord], ParseReport]:
    """Read a trade CSV (header timestamp_ms,price,size,side), skipping
    and counting malformed rows; records come back timestamp-sorted
    (stable on ties)."""
    report = ParseReport()
    records: list[TradeRecord] = []
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or not set(TRADE_COLUMNS).issubset(h.strip() for h in header):
            raise SchemaMismatch(
                f"{path}: header must contain columns {','.join(TRADE_COLUMNS)}"
            )
        cols = {name.strip(): i for i, name in enumerate(header)}
        idx = [cols[c] for c in TRADE_COLUMNS]
        for row in reader:
            report.n_rows += 1
            try:
                ts = int(row[idx[0]])
                price = float(row[idx[1]])
                size = float(row[idx[2]])
                side = row[idx[3]].strip().lower()
            except (ValueError, IndexError):
                report.n_skipped += 1
                report.reasons["unparseable"] += 1
                continue
            if side not in ("buy", "sell"):
                report.n_skipped += 1
                report.reasons["bad_side"] += 1
                continue
            if price <= 0 or size <= 0 or ts < 0:
                report.n_skipped += 1
                report.reasons["nonpositive_value"] += 1
                continue
            records.append(TradeRecord(ts, price, size, side))
            report.n_ok += 1
    records.sort(key=lambda r: r.timestamp_ms)  # stable
    return records, report


@dataclass
class BarSeries:
    """Parallel arrays of bars at one timeframe. z >= |x| always holds:
    z is total traded size, x the buy-minus-sell imbalance."""

    timeframe_s: int
    t_open: np.ndarray  # (n,) int64, ms since epoch
    xyz: np.ndarray  # (n, 3) float64
    close: np.ndarray  # (n,) float64, last trade price carried forward

    def __len__(self) -> int:
        return self.t_open.shape[0]

    def to_csv(self, path: str | Path) -> None:
        lines = ["t_open,x,y,z"]
        for i in range(len(self)):
            x, y, z = self.xyz[i]
            lines.append(f"{int(self.t_open[i])},{float(x)!r},{float(y)!r},{float(z)!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, timeframe_s: int) -> "BarSeries":
        lines = Path(path).read_text().strip().splitlines()
        if not lines or lines[0] != "t_open,x,y,z":
            raise SchemaMismatch(f"{path}: expected header t_open,x,y,z")
        n = len(lines) - 1
        t_open = np.empty(n, dtype=np.int64)
        xyz = np.empty((n, 3), dtype=np.float64)
        for i, line in enumerate(lines[1:]):
            t, x, y, z = line.split(",")
            t_open[i] = int(t)
            xyz[i] = (float(x), float(y), float(z))
        return cls(timeframe_s=timeframe_s, t_open=t_open, xyz=xyz,
                   close=np.full(n, np.nan))


def aggregate_bars(trades: Sequence[TradeRecord], timeframe_s: int) -> BarSeries:
    """Bucket trades into fixed epoch-aligned bars of `timeframe_s`.

    Per bar: x = buy size - sell size, z = total size, y = simple return
    of bucket closes (vs the last close of the previous non-empty bar).
    Empty bars emit (0, 0, 0) and carry the close forward; the first bar
    has y = 0 by convention.
    """
    if timeframe_s < 1:
        raise ValueError("timeframe_s must be >= 1")
    if not trades:
        raise EmptyInput("no trades to aggregate")
    ts = np.array([t.timestamp_ms for t in trades], dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("trades must be timestamp-sorted (use parse_trades)")
    width = timeframe_s * 1000
    bucket = ts // width
    first, last = int(bucket[0]), int(bucket[-1])
    n = last - first + 1
    rel = (bucket - first).astype(np.int64)

    sizes = np.array([t.size for t in trades])
    signs = np.array([1.0 if t.side == "buy" else -1.0 for t in trades])
    prices = np.array([t.price for t in trades])

    x = np.zeros(n)
    z = np.zeros(n)
    np.add.at(x, rel, signs * sizes)
    np.add.at(z, rel, sizes)

    # last trade per occupied bucket (trades are sorted, so the index
    # before each first-occurrence boundary is a bucket close)
    occupied, first_pos = np.unique(rel, return_index=True)
    last_pos = np.append(first_pos[1:], rel.shape[0]) - 1
    close = np.full(n, np.nan)
    close[occupied] = prices[last_pos]
    # carry forward
    filled = np.maximum.accumulate(np.where(np.isnan(close), -1, np.arange(n)))
    close = close[filled]  # first bucket always occupied, so no NaN remains

    y = np.zeros(n)
    prev = close[:-1]
    has_trades = np.zeros(n, dtype=bool)
    has_trades[occupied] = True
    mask = has_trades[1:]
    y[1:][mask] = (close[1:][mask] - prev[mask]) / prev[mask]

    t_open = (np.arange(first, last + 1, dtype=np.int64)) * width
    xyz = np.stack([x, y, z], axis=1)
    return BarSeries(timeframe_s=timeframe_s, t_open=t_open, xyz=xyz, close=close)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaler:
    """Per-dimension affine map scaled = v * gain + offset."""

    gain: np.ndarray  # (3,)
    offset: np.ndarray  # (3,)
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.gain).all() and np.isfinite(self.offset).all()):
            raise ValueError("scaler coefficients must be finite")
        if np.any(self.gain == 0):
            raise ValueError("scaler gains must be non-zero")

    def transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.gain + self.offset

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.offset) / self.gain

    def to_json(self, path: str | Path) -> None:
        payload = {
            "gain": [float(v) for v in self.gain],
            "offset": [float(v) for v in self.offset],
            "provenance": self.provenance,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "Scaler":
        payload = json.loads(Path(path).read_text())
        return cls(
            gain=np.array(payload["gain"], dtype=np.float64),
            offset=np.array(payload["offset"], dtype=np.float64),
            provenance=payload.get("provenance", {}),
        )


def identity_scaler() -> Scaler:
    return Scaler(gain=np.ones(3), offset=np.zeros(3), provenance={"kind": "identity"})


def fit_scaler(
    calibration_xyz: np.ndarray,
    ref_mean: np.ndarray,
    ref_std: np.ndarray,
    provenance: dict | None = None,
) -> Scaler:
    """Affine coefficients mapping the calibration distribution onto the
    reference moments: scaled = (v - calib_mean)/calib_std * ref_std + ref_mean."""
    calib = np.asarray(calibration_xyz, dtype=np.float64)
    if calib.ndim != 2 or calib.shape[1] != 3 or calib.shape[0] < 2:
        raise ValueError("calibration must be (n >= 2, 3)")
    mean = calib.mean(axis=0)
    std = calib.std(axis=0)
    if np.any(std == 0):
        raise DegenerateCalibration("zero variance in calibration dimension")
    ref_mean = np.asarray(ref_mean, dtype=np.float64)
    ref_std = np.asarray(ref_std, dtype=np.float64)
    gain = ref_std / std
    offset = ref_mean - mean * gain
    return Scaler(gain=gain, offset=offset, provenance=provenance or {})


# ---------------------------------------------------------------------------
# Test windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestWindow:
    inputs: np.ndarray  # (context_len, 3), scaled
    realized_next_y: float  # unscaled next-bar price change rate
    t_pred: int  # timestamp of the predicted bar


@dataclass
class WindowSet:
    """All slide-1 windows over a contiguous bar region; window i covers
    bars [i, i+context_len) and predicts bar i+context_len."""

    scaled: np.ndarray  # (m, 3)
    raw_y: np.ndarray  # (m,) unscaled y
    t_open: np.ndarray  # (m,)
    context_len: int

    def __len__(self) -> int:
        return self.scaled.shape[0] - self.context_len

    @property
    def realized_next_y(self) -> np.ndarray:
        return self.raw_y[self.context_len:]

    @property
    def t_pred(self) -> np.ndarray:
        return self.t_open[self.context_len:]

    def window(self, i: int) -> TestWindow:
        if not 0 <= i < len(self):
            raise IndexError(i)
        return TestWindow(
            inputs=self.scaled[i : i + self.context_len].copy(),
            realized_next_y=float(self.raw_y[i + self.context_len]),
            t_pred=int(self.t_open[i + self.context_len]),
        )

    def batch(self, start: int, stop: int) -> np.ndarray:
        """Inputs for windows [start, stop) as a contiguous (B, L, 3)."""
        view = sliding_window_view(self.scaled, self.context_len, axis=0)
        return np.ascontiguousarray(view[start:stop].transpose(0, 2, 1))


def _window_set(bars: BarSeries, scaler: Scaler, context_len: int,
                start: int, stop: int) -> WindowSet:
    region = bars.xyz[start:stop]
    if region.shape[0] <= context_len:
        raise InsufficientData(
            f"need more than {context_len} bars, have {region.shape[0]}"
        )
    scaled = scaler.transform(region)
    if not np.isfinite(scaled).all():
        raise ValueError("non-finite window inputs after scaling")
    return WindowSet(
        scaled=scaled,
        raw_y=region[:, 1].copy(),
        t_open=bars.t_open[start:stop].copy(),
        context_len=context_len,
    )


def build_test_windows(
    bars: BarSeries,
    scaler: Scaler,
    context_len: int = 512,
    calibration_bars: int = DEFAULT_CALIBRATION_BARS,
) -> WindowSet:
    """Windows over the post-calibration region only (no overlap with
    the segment the scaler was fitted on)."""
    return _window_set(bars, scaler, context_len, calibration_bars, len(bars))


def build_calibration_windows(
    bars: BarSeries,
    scaler: Scaler,
    context_len: int = 512,
    calibration_bars: int = DEFAULT_CALIBRATION_BARS,
) -> WindowSet:
    """Windows fully inside the calibration prefix, for fitting
    prediction-quantile thresholds without look-ahead."""
    return _window_set(bars, scaler, context_len, 0, min(calibration_bars, len(bars)))
