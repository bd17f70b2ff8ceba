import numpy as np
import pytest

from chaoscast.errors import (
    DegenerateCalibration,
    EmptyInput,
    InsufficientData,
    SchemaMismatch,
    UnreadableFile,
)
from chaoscast.market import (
    BarSeries,
    Scaler,
    TradeRecord,
    aggregate_bars,
    build_calibration_windows,
    build_test_windows,
    fit_scaler,
    identity_scaler,
    parse_trades,
)


def _write_trades(path, rows, header="timestamp_ms,price,size,side"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_parse_well_formed_sorted(tmp_path):
    path = tmp_path / "t.csv"
    _write_trades(path, [
        "3000,100.5,2.0,buy",
        "1000,100.0,1.0,sell",
        "2000,100.2,0.5,Buy",
    ])
    records, report = parse_trades(path)
    assert report.n_ok == 3 and report.n_skipped == 0
    assert [r.timestamp_ms for r in records] == [1000, 2000, 3000]
    assert records[1].side == "buy"


def test_parse_skips_malformed(tmp_path):
    path = tmp_path / "t.csv"
    _write_trades(path, [
        "1000,100.0,1.0,buy",
        "1500,100.0,-2.0,sell",  # nonpositive size
        "2000,abc,1.0,buy",      # unparseable
        "2500,100.0,1.0,hold",   # bad side
        "3000,0,1.0,sell",       # nonpositive price
    ])
    records, report = parse_trades(path)
    assert report.n_ok == 1
    assert report.n_skipped == 4
    assert report.reasons["nonpositive_value"] == 2
    assert report.reasons["unparseable"] == 1
    assert report.reasons["bad_side"] == 1


def test_parse_stable_on_ties(tmp_path):
    path = tmp_path / "t.csv"
    _write_trades(path, [
        "1000,101.0,1.0,buy",
        "1000,102.0,1.0,buy",
        "1000,103.0,1.0,buy",
    ])
    records, _ = parse_trades(path)
    assert [r.price for r in records] == [101.0, 102.0, 103.0]


def test_parse_schema_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,price,qty\n1,2,3\n")
    with pytest.raises(SchemaMismatch):
        parse_trades(path)


def test_parse_unreadable(tmp_path):
    with pytest.raises(UnreadableFile):
        parse_trades(tmp_path / "missing.csv")


def test_parse_extra_columns_ok(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "exchange,timestamp_ms,price,size,side,flag\nbb,1000,10.0,1.0,buy,x\n"
    )
    records, report = parse_trades(path)
    assert report.n_ok == 1
    assert records[0].price == 10.0


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_aggregate_hand_example():
    trades = [
        TradeRecord(2_000, 100.0, 1.0, "buy"),   # bar 0, close 100
        TradeRecord(5_000, 100.0, 2.0, "buy"),   # bar 1
        TradeRecord(8_000, 101.0, 1.0, "sell"),  # bar 1, close 101
    ]
    bars = aggregate_bars(trades, 5)
    assert len(bars) == 2
    assert bars.t_open.tolist() == [0, 5000]
    x, y, z = bars.xyz[1]
    assert x == pytest.approx(1.0)
    assert z == pytest.approx(3.0)
    assert y == pytest.approx(0.01, abs=1e-15)


def test_aggregate_empty_bucket_carries_close():
    trades = [
        TradeRecord(0, 100.0, 1.0, "buy"),
        TradeRecord(10_500, 102.0, 1.0, "sell"),  # two-bucket gap
    ]
    bars = aggregate_bars(trades, 5)
    assert len(bars) == 3
    assert np.array_equal(bars.xyz[1], [0.0, 0.0, 0.0])
    assert bars.close[1] == 100.0
    assert bars.xyz[2][1] == pytest.approx(0.02, abs=1e-15)


def test_aggregate_first_bar_y_zero():
    bars = aggregate_bars([TradeRecord(100, 50.0, 1.0, "buy")], 5)
    assert bars.xyz[0][1] == 0.0


def test_aggregate_epoch_alignment():
    bars = aggregate_bars([TradeRecord(12_345, 10.0, 1.0, "buy")], 5)
    assert bars.t_open[0] == 10_000


def test_aggregate_empty_raises():
    with pytest.raises(EmptyInput):
        aggregate_bars([], 5)


def test_aggregate_requires_sorted():
    trades = [TradeRecord(5000, 10.0, 1.0, "buy"), TradeRecord(0, 10.0, 1.0, "buy")]
    with pytest.raises(ValueError):
        aggregate_bars(trades, 5)


def test_aggregate_conservation_and_totality():
    rng = np.random.default_rng(0)
    n = 5000
    ts = np.sort(rng.integers(0, 600_000, n))
    trades = [
        TradeRecord(int(t), float(rng.uniform(90, 110)), float(rng.uniform(0.01, 5)),
                    "buy" if rng.random() < 0.5 else "sell")
        for t in ts
    ]
    bars = aggregate_bars(trades, 5)
    x, z = bars.xyz[:, 0], bars.xyz[:, 2]
    assert np.all(z >= np.abs(x) - 1e-12)
    total_size = sum(t.size for t in trades)
    assert z.sum() == pytest.approx(total_size, rel=1e-9)


def test_bars_csv_roundtrip(tmp_path):
    trades = [
        TradeRecord(0, 100.0, 1.5, "buy"),
        TradeRecord(7_000, 101.0, 2.5, "sell"),
    ]
    bars = aggregate_bars(trades, 5)
    path = tmp_path / "bars.csv"
    bars.to_csv(path)
    back = BarSeries.from_csv(path, 5)
    assert np.array_equal(back.t_open, bars.t_open)
    assert np.array_equal(back.xyz, bars.xyz)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


def test_scaler_identity_case():
    rng = np.random.default_rng(1)
    calib = rng.normal(0, 1, (1000, 3))
    scaler = fit_scaler(calib, calib.mean(axis=0), calib.std(axis=0))
    assert np.abs(scaler.gain - 1).max() < 1e-12
    assert np.abs(scaler.offset).max() < 1e-12


def test_scaler_matches_reference_moments():
    rng = np.random.default_rng(2)
    calib = rng.normal(5, 3, (2000, 3))
    ref_mean = np.array([0.1, -0.2, 25.0])
    ref_std = np.array([7.0, 8.0, 9.0])
    scaler = fit_scaler(calib, ref_mean, ref_std)
    scaled = scaler.transform(calib)
    assert np.abs(scaled.mean(axis=0) - ref_mean).max() < 1e-9
    assert np.abs(scaled.std(axis=0) - ref_std).max() < 1e-9


def test_scaler_roundtrip():
    rng = np.random.default_rng(3)
    scaler = fit_scaler(rng.normal(2, 4, (500, 3)), np.zeros(3), np.ones(3))
    v = rng.normal(0, 10, (100, 3))
    assert np.abs(scaler.inverse(scaler.transform(v)) - v).max() < 1e-12


def test_scaler_json_roundtrip(tmp_path):
    scaler = Scaler(gain=np.array([1.5, -2.0, 0.25]), offset=np.array([0.1, 0.0, -3.0]),
                    provenance={"calibration_bars": 10, "reference_interval": 1000})
    path = tmp_path / "scaler.json"
    scaler.to_json(path)
    back = Scaler.from_json(path)
    assert np.array_equal(back.gain, scaler.gain)
    assert np.array_equal(back.offset, scaler.offset)
    assert back.provenance["reference_interval"] == 1000


def test_scaler_degenerate_calibration():
    calib = np.zeros((100, 3))
    calib[:, 0] = np.arange(100)
    calib[:, 1] = np.arange(100)
    with pytest.raises(DegenerateCalibration):
        fit_scaler(calib, np.zeros(3), np.ones(3))


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def _synthetic_bars(n, timeframe_s=5, seed=0):
    rng = np.random.default_rng(seed)
    xyz = np.stack([
        rng.normal(0, 2, n),
        rng.normal(0, 0.01, n),
        np.abs(rng.normal(5, 2, n)) + 2.1,
    ], axis=1)
    return BarSeries(
        timeframe_s=timeframe_s,
        t_open=np.arange(n, dtype=np.int64) * timeframe_s * 1000,
        xyz=xyz,
        close=np.full(n, 100.0),
    )


def test_window_counts():
    bars = _synthetic_bars(10_000 + 10_513)
    ws = build_test_windows(bars, identity_scaler(), context_len=512,
                            calibration_bars=10_000)
    assert len(ws) == 10_001


def test_windows_slide_one():
    bars = _synthetic_bars(700, seed=1)
    ws = build_test_windows(bars, identity_scaler(), context_len=64,
                            calibration_bars=100)
    a = ws.batch(0, 2)
    assert a.shape == (2, 64, 3)
    assert np.array_equal(a[0][1:], a[1][:-1])  # consecutive windows share rows
    w0 = ws.window(0)
    assert np.array_equal(w0.inputs, a[0])
    assert w0.t_pred == int(bars.t_open[100 + 64])
    assert w0.realized_next_y == bars.xyz[100 + 64, 1]


def test_windows_exclude_calibration():
    bars = _synthetic_bars(1200, seed=2)
    ws = build_test_windows(bars, identity_scaler(), context_len=64,
                            calibration_bars=600)
    assert np.array_equal(ws.scaled, bars.xyz[600:])
    calib_ws = build_calibration_windows(bars, identity_scaler(), context_len=64,
                                         calibration_bars=600)
    assert len(calib_ws) == 600 - 64
    assert calib_ws.t_pred.max() < ws.t_pred.min()


def test_windows_scaled_and_finite():
    bars = _synthetic_bars(800, seed=3)
    scaler = fit_scaler(bars.xyz[:300], np.array([0.0, 0.0, 25.0]),
                        np.array([8.0, 9.0, 8.5]))
    ws = build_test_windows(bars, scaler, context_len=64, calibration_bars=300)
    assert np.isfinite(ws.scaled).all()
    assert np.array_equal(ws.raw_y, bars.xyz[300:, 1])  # profits stay unscaled


def test_windows_insufficient_data():
    bars = _synthetic_bars(600)
    with pytest.raises(InsufficientData):
        build_test_windows(bars, identity_scaler(), context_len=512,
                           calibration_bars=100)


def test_no_lookahead_in_scaler():
    bars_a = _synthetic_bars(1000, seed=4)
    bars_b = _synthetic_bars(1000, seed=4)
    bars_b.xyz[600:] += 100.0  # test span changes only
    s_a = fit_scaler(bars_a.xyz[:600], np.zeros(3), np.ones(3))
    s_b = fit_scaler(bars_b.xyz[:600], np.zeros(3), np.ones(3))
    assert np.array_equal(s_a.gain, s_b.gain)
    assert np.array_equal(s_a.offset, s_b.offset)
