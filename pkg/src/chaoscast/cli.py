"""Command-line pipeline driver.

Subcommands: generate | train | eval | ingest | backtest | report.
Every run resolves its configuration (built-in defaults < --config JSON
< explicit flags), writes its artifacts under --out-dir, and finishes
with a run_manifest.json recording inputs (with digests), outputs, and
the seed. CSV artifacts are deterministic; reruns with --workers 1 and
identical inputs produce identical bytes.

Exit codes: 0 success, 2 usage, 3 data errors, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import StrategyConfig, grid_report, write_balance_csv
from .errors import DataError, InsufficientData, NumericError, UnreadableFile
from .lorenz import (
    GenConfig,
    autocorrelation,
    batch_stream,
    export_attractor,
    reference_moments,
    resample_series,
)
from .manifest import write_run_manifest
from .market import STANDARD_TIMEFRAMES, BarSeries, aggregate_bars, parse_trades
from .metrics import ICCurve, ScalingPoint, fit_scaling_law, samples_to_threshold
from .model import MODEL_PRESETS, ModelConfig
from .svgplot import line_plot, scatter_plot
from .training import PRESET_BATCH, MetricsLog, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_pairs(pairs: list[str], parser: argparse.ArgumentParser) -> dict[int, str]:
    out: dict[int, str] = {}
    for pair in pairs:
        key, sep, path = pair.partition("=")
        if not sep or not path or not key.isdigit():
            parser.error(f"expected HORIZON=PATH, got {pair!r}")
        out[int(key)] = path
    return out


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Fill unset (None) options from the --config JSON file."""
    if not getattr(args, "config", None):
        return
    try:
        payload = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise UnreadableFile(f"cannot read config {args.config}: {exc}") from exc
    for key, value in payload.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            parser.error(f"unknown config key {key!r}")
        if getattr(args, dest) is None:
            setattr(args, dest, value)


def _default(args, name, value):
    if getattr(args, name) is None:
        setattr(args, name, value)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _generate_one(interval: int, args, out: Path) -> list[Path]:
    outputs = []
    gen_cfg = GenConfig(
        interval=interval, seed=args.seed, dt=args.dt,
        warmup_steps=args.warmup_steps, context_len=args.context_len,
    )

    # sample training sequences from the stream head
    stream = batch_stream(args.seed, gen_cfg, batch_size=args.n_sequences)
    seqs = next(stream)
    path = out / f"sequences_{interval}.csv"
    lines = ["seq,t,x,y,z,target_x,target_y,target_z"]
    for j, s in enumerate(seqs):
        for t in range(s.inputs.shape[0]):
            ins = ",".join(repr(float(v)) for v in s.inputs[t])
            tgt = ",".join(repr(float(v)) for v in s.targets[t])
            lines.append(f"{j},{t},{ins},{tgt}")
    path.write_text("\n".join(lines) + "\n")
    outputs.append(path)

    # diagnostics: one continuing resampled series
    diag_cfg = GenConfig(interval=interval, seed=args.seed + 1, dt=args.dt,
                         warmup_steps=args.warmup_steps)
    series = resample_series(diag_cfg, args.diag_samples)
    xcum = np.cumsum(series[:, 0])
    path = out / f"series_{interval}.csv"
    lines = ["t,x,y,z,x_cumsum"]
    for t in range(series.shape[0]):
        vals = ",".join(repr(float(v)) for v in series[t])
        lines.append(f"{t},{vals},{float(xcum[t])!r}")
    path.write_text("\n".join(lines) + "\n")
    outputs.append(path)

    path = out / f"autocorr_{interval}.csv"
    lags = list(range(1, args.max_lag + 1))
    acs = [autocorrelation(series[:, 0], lag) for lag in lags]
    path.write_text(
        "lag,autocorr_x\n"
        + "\n".join(f"{lag},{ac!r}" for lag, ac in zip(lags, acs))
        + "\n"
    )
    outputs.append(path)

    path = out / f"attractor_{interval}.csv"
    export_attractor(series, path)
    outputs.append(path)

    scatter_plot(
        out / f"attractor_{interval}.svg", series[:, 0], series[:, 2],
        title=f"state space, interval {interval}", xlabel="x", ylabel="z",
    )
    line_plot(
        out / f"autocorr_{interval}.svg", [(lags, acs, "x")],
        title=f"autocorrelation, interval {interval}", xlabel="lag",
        ylabel="autocorrelation",
    )
    outputs += [out / f"attractor_{interval}.svg", out / f"autocorr_{interval}.svg"]
    return outputs


def cmd_generate(args, parser) -> int:
    _apply_config_file(args, parser)
    _default(args, "seed", 0)
    _default(args, "n_sequences", 4)
    _default(args, "diag_samples", 10000)
    _default(args, "max_lag", 20)
    _default(args, "workers", 1)
    _default(args, "dt", 0.01)
    _default(args, "warmup_steps", 1000)
    _default(args, "context_len", 512)
    if args.interval is None:
        parser.error("--interval is required")
    intervals = _parse_int_list(args.interval)
    out = _out_dir(args)
    t0 = time.perf_counter()
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(lambda iv: _generate_one(iv, args, out), intervals))
    else:
        results = [_generate_one(iv, args, out) for iv in intervals]
    outputs = [p for group in results for p in group]
    write_run_manifest(
        out, "generate",
        {"interval": intervals, "n_sequences": args.n_sequences,
         "diag_samples": args.diag_samples, "max_lag": args.max_lag,
         "dt": args.dt, "warmup_steps": args.warmup_steps,
         "context_len": args.context_len, "workers": args.workers},
        inputs=[], outputs=outputs, seed=args.seed,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _model_config(args, parser) -> ModelConfig:
    if args.model != "custom":
        return MODEL_PRESETS[args.model]
    if args.layers is None or args.d_model is None or args.heads is None:
        parser.error("--model custom requires --layers, --d-model, --heads")
    return ModelConfig(
        n_layers=args.layers, d_model=args.d_model, n_heads=args.heads,
        context_len=args.context_len or 512, d_ff=args.d_ff or 0,
    )


def cmd_train(args, parser) -> int:
    _apply_config_file(args, parser)
    _default(args, "seed", 0)
    _default(args, "model", "0.1M")
    _default(args, "batch_size", PRESET_BATCH.get(args.model, 60))
    _default(args, "base_lr", 1e-3)
    _default(args, "eval_every", 20)
    _default(args, "checkpoint_every", 0)
    _default(args, "val_sequences", 256)
    _default(args, "dtype", "float64")
    if args.interval is None or args.total_samples is None:
        parser.error("--interval and --total-samples are required")
    model_cfg = _model_config(args, parser)
    train_cfg = TrainConfig(
        total_samples=int(float(args.total_samples)),
        interval=args.interval,
        seed=args.seed,
        batch_size=args.batch_size,
        base_lr=args.base_lr,
        eval_every=args.eval_every,
        checkpoint_every=args.checkpoint_every,
        val_sequences=args.val_sequences,
        dtype=args.dtype,
        target_ic_y=args.target_ic_y,
    )
    out = _out_dir(args)
    t0 = time.perf_counter()
    result = train(model_cfg, train_cfg, out_dir=out, resume_from=args.resume)
    outputs = [out / "metrics.csv"]
    for stem in result.checkpoints:
        outputs += [stem.with_suffix(".json"), stem.with_suffix(".bin")]
    inputs = []
    if args.resume:
        stem = Path(args.resume)
        if stem.suffix == ".json":
            stem = stem.with_suffix("")
        inputs = [stem.with_suffix(".json"), stem.with_suffix(".bin")]
    write_run_manifest(
        out, "train",
        {"model": args.model, "model_config": vars(model_cfg) | {},
         "train_config": train_cfg.to_dict(), "resume": args.resume},
        inputs=inputs, outputs=outputs, seed=args.seed,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args, parser) -> int:
    _apply_config_file(args, parser)
    _default(args, "threshold", 0.1)
    _default(args, "window", 3)
    if not args.metrics:
        parser.error("at least one --metrics HORIZON=PATH is required")
    by_horizon = _parse_pairs(args.metrics, parser)
    out = _out_dir(args)
    t0 = time.perf_counter()
    outputs = []
    crossings: list[tuple[int, int | None]] = []
    for horizon in sorted(by_horizon):
        path = Path(by_horizon[horizon])
        if not path.exists():
            raise UnreadableFile(f"metrics log not found: {path}")
        log = MetricsLog.read_csv(path)
        rows = [(r.samples_seen, r.ic_y) for r in log.rows if r.samples_seen > 0]
        if not rows:
            raise InsufficientData(f"{path} has no post-step-0 evaluation rows")
        curve = ICCurve(tuple(rows))
        crossing = samples_to_threshold(curve, args.threshold, args.window)
        crossings.append((horizon, crossing))
        curve_path = out / f"ic_curve_{horizon}.csv"
        curve_path.write_text(
            "samples_seen,ic_y\n"
            + "\n".join(f"{s},{v!r}" for s, v in rows) + "\n"
        )
        outputs.append(curve_path)

    cross_path = out / "crossings.csv"
    cross_path.write_text(
        "horizon,samples_to_threshold\n"
        + "\n".join(
            f"{h},{c if c is not None else 'NotReached'}" for h, c in crossings
        )
        + "\n"
    )
    outputs.append(cross_path)

    reached = [ScalingPoint(h, c) for h, c in crossings if c is not None]
    fit_path = out / "scaling_fit.csv"
    if len(reached) >= 2 and len({p.horizon for p in reached}) >= 2:
        fit = fit_scaling_law(reached)
        fit_path.write_text(
            "slope,intercept,r2,n_points\n"
            f"{fit.slope!r},{fit.intercept!r},{fit.r2!r},{fit.n_points}\n"
        )
        hs = [p.horizon for p in reached]
        ls = [np.log10(p.samples_to_threshold) for p in reached]
        line = [fit.slope * h + fit.intercept for h in hs]
        line_plot(
            out / "scaling_fit.svg",
            [(hs, ls, "measured"), (hs, line, "fit")],
            title=f"samples to IC {args.threshold} vs horizon",
            xlabel="horizon (resampling interval)",
            ylabel="log10 samples",
        )
        outputs.append(out / "scaling_fit.svg")
    else:
        fit_path.write_text("slope,intercept,r2,n_points\n,,,%d\n" % len(reached))
    outputs.append(fit_path)

    write_run_manifest(
        out, "eval",
        {"metrics": {str(k): str(v) for k, v in by_horizon.items()},
         "threshold": args.threshold, "window": args.window},
        inputs=[by_horizon[h] for h in sorted(by_horizon)],
        outputs=outputs, seed=None,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest / backtest / report
# ---------------------------------------------------------------------------


def cmd_ingest(args, parser) -> int:
    _apply_config_file(args, parser)
    _default(args, "timeframes", ",".join(str(t) for t in STANDARD_TIMEFRAMES))
    _default(args, "workers", 1)
    if args.trades is None:
        parser.error("--trades is required")
    timeframes = _parse_int_list(args.timeframes)
    out = _out_dir(args)
    t0 = time.perf_counter()
    trades, report = parse_trades(args.trades)
    print(
        f"parsed {report.n_ok}/{report.n_rows} rows "
        f"({report.n_skipped} skipped: {dict(report.reasons)})"
    )

    def one(tf: int) -> Path:
        bars = aggregate_bars(trades, tf)
        path = out / f"bars_{tf}s.csv"
        bars.to_csv(path)
        return path

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            outputs = list(pool.map(one, timeframes))
    else:
        outputs = [one(tf) for tf in timeframes]
    write_run_manifest(
        out, "ingest",
        {"timeframes": timeframes, "skipped_rows": report.n_skipped,
         "parsed_rows": report.n_ok, "workers": args.workers},
        inputs=[args.trades], outputs=outputs, seed=None,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


def cmd_backtest(args, parser) -> int:
    _apply_config_file(args, parser)
    _default(args, "seed", 0)
    _default(args, "timeframes", ",".join(str(t) for t in STANDARD_TIMEFRAMES))
    _default(args, "calibration_bars", 10000)
    _default(args, "context_len", 512)
    _default(args, "lo_q", 0.05)
    _default(args, "hi_q", 0.95)
    _default(args, "ref_sequences", 256)
    if args.trades is None and args.bars_dir is None:
        parser.error("one of --trades / --bars-dir is required")
    if not args.checkpoint:
        parser.error("at least one --checkpoint HORIZON=PATH is required")
    checkpoints = _parse_pairs(args.checkpoint, parser)
    timeframes = _parse_int_list(args.timeframes)
    out = _out_dir(args)
    t0 = time.perf_counter()
    inputs = []
    for p in checkpoints.values():
        stem = Path(p)
        if stem.suffix == ".json":
            stem = stem.with_suffix("")
        inputs += [stem.with_suffix(".json"), stem.with_suffix(".bin")]

    bars_by_tf: dict[int, BarSeries] = {}
    if args.trades is not None:
        trades, _ = parse_trades(args.trades)
        inputs.append(args.trades)
        for tf in timeframes:
            bars_by_tf[tf] = aggregate_bars(trades, tf)
    else:
        for tf in timeframes:
            path = Path(args.bars_dir) / f"bars_{tf}s.csv"
            inputs.append(str(path))
            bars_by_tf[tf] = BarSeries.from_csv(path, tf)

    ref_moments = {
        h: reference_moments(
            GenConfig(interval=h, seed=args.seed), args.ref_sequences, args.seed
        )
        for h in checkpoints
    }
    strategy = StrategyConfig(long_quantile=args.hi_q, short_quantile=args.lo_q)
    report = grid_report(
        bars_by_tf, checkpoints, ref_moments, strategy,
        calibration_bars=args.calibration_bars, context_len=args.context_len,
    )
    outputs = []
    report_path = out / "report.csv"
    report.to_csv(report_path)
    outputs.append(report_path)
    for cell in report.cells:
        stem = f"balance_{cell.timeframe_s}s_h{cell.horizon}"
        write_balance_csv(cell, out / f"{stem}.csv")
        line_plot(
            out / f"{stem}.svg",
            [(cell.t_pred, cell.balance_curve, "model")],
            title=f"balance, {cell.timeframe_s}s bars, horizon {cell.horizon}",
            xlabel="time (ms)", ylabel="cumulative return",
        )
        outputs += [out / f"{stem}.csv", out / f"{stem}.svg"]
    for (tf, h), scaler in report.scalers.items():
        path = out / f"scaler_{tf}s_h{h}.json"
        scaler.to_json(path)
        outputs.append(path)
    for err in report.errors:
        print(f"cell ({err.timeframe_s}s, horizon {err.horizon}) failed: {err.error}",
              file=sys.stderr)
    write_run_manifest(
        out, "backtest",
        {"timeframes": timeframes, "horizons": sorted(checkpoints),
         "calibration_bars": args.calibration_bars, "lo_q": args.lo_q,
         "hi_q": args.hi_q, "ref_sequences": args.ref_sequences},
        inputs=inputs, outputs=outputs, seed=args.seed,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


def cmd_report(args, parser) -> int:
    _apply_config_file(args, parser)
    if args.grid is None:
        parser.error("--grid is required")
    out = _out_dir(args)
    t0 = time.perf_counter()
    try:
        lines = Path(args.grid).read_text().strip().splitlines()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {args.grid}: {exc}") from exc
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    rows = [r for r in rows if r.get("model_return")]

    by_tf: dict[int, list[dict]] = {}
    for r in rows:
        by_tf.setdefault(int(r["timeframe_s"]), []).append(r)
    horizons = sorted({int(r["horizon"]) for r in rows})

    text = ["timeframe | " + " | ".join(f"h={h} excess" for h in horizons) + " | baseline"]
    text.append("-" * len(text[0]))
    for tf in sorted(by_tf):
        cells = {int(r["horizon"]): r for r in by_tf[tf]}
        fields = []
        for h in horizons:
            r = cells.get(h)
            if r is None:
                fields.append("   n/a   ")
                continue
            mark = {" 1": "*", " 2": "+", "1": "*", "2": "+"}.get(r.get("excess_rank", ""), " ")
            fields.append(f"{float(r['excess_return']):+9.4f}{mark}")
        base = next(iter(by_tf[tf]))["baseline_return"]
        text.append(f"{tf:>9} | " + " | ".join(fields) + f" | {float(base):+9.4f}")
    text.append("")
    text.append("* best excess in row, + second best")
    report_txt = out / "report.txt"
    report_txt.write_text("\n".join(text) + "\n")
    print("\n".join(text))

    series = []
    for tf in sorted(by_tf):
        cells = {int(r["horizon"]): r for r in by_tf[tf]}
        hs = [h for h in horizons if h in cells]
        ex = [float(cells[h]["excess_return"]) for h in hs]
        series.append((hs, ex, f"{tf}s"))
    excess_svg = out / "excess_returns.svg"
    line_plot(series=series, path=excess_svg, title="excess return vs horizon",
              xlabel="predictive horizon", ylabel="excess return")
    write_run_manifest(
        out, "report", {"grid": str(args.grid)}, inputs=[args.grid],
        outputs=[report_txt, excess_svg], seed=None,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaoscast",
        description="chaos-pretrained forecasting pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with defaults for unset flags")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out-dir", required=True)

    g = sub.add_parser("generate", help="emit sequences and resampling diagnostics")
    common(g)
    g.add_argument("--interval", help="comma-separated resampling intervals")
    g.add_argument("--n-sequences", type=int, default=None)
    g.add_argument("--diag-samples", type=int, default=None)
    g.add_argument("--max-lag", type=int, default=None)
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--warmup-steps", type=int, default=None)
    g.add_argument("--context-len", type=int, default=None)

    t = sub.add_parser("train", help="streaming single-epoch pretraining")
    common(t)
    t.add_argument("--model", choices=[*MODEL_PRESETS, "custom"], default=None)
    t.add_argument("--layers", type=int)
    t.add_argument("--d-model", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--d-ff", type=int)
    t.add_argument("--context-len", type=int)
    t.add_argument("--interval", type=int)
    t.add_argument("--total-samples")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--base-lr", type=float, default=None)
    t.add_argument("--eval-every", type=int, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--val-sequences", type=int, default=None)
    t.add_argument("--dtype", choices=["float32", "float64"], default=None)
    t.add_argument("--target-ic-y", type=float, default=None)
    t.add_argument("--resume", help="checkpoint stem or .json to resume from")

    e = sub.add_parser("eval", help="IC curves, threshold crossings, scaling fit")
    common(e)
    e.add_argument("--metrics", action="append",
                   help="HORIZON=metrics.csv (repeatable)")
    e.add_argument("--threshold", type=float, default=None)
    e.add_argument("--window", type=int, default=None)

    i = sub.add_parser("ingest", help="aggregate trades into bar series")
    common(i)
    i.add_argument("--trades")
    i.add_argument("--timeframes", default=None)

    b = sub.add_parser("backtest", help="grid backtest over timeframes x horizons")
    common(b)
    b.add_argument("--trades")
    b.add_argument("--bars-dir")
    b.add_argument("--checkpoint", action="append",
                   help="HORIZON=checkpoint stem (repeatable)")
    b.add_argument("--timeframes", default=None)
    b.add_argument("--calibration-bars", type=int, default=None)
    b.add_argument("--context-len", type=int, default=None)
    b.add_argument("--lo-q", type=float, default=None)
    b.add_argument("--hi-q", type=float, default=None)
    b.add_argument("--ref-sequences", type=int, default=None)

    r = sub.add_parser("report", help="format a grid report with row bests")
    common(r)
    r.add_argument("--grid", help="report.csv from the backtest command")

    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ingest": cmd_ingest,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
