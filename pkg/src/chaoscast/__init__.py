"""Chaos-pretrained forecasting toolkit.

Pipeline: generate resampled Lorenz training sequences, pretrain a
decoder-only transformer one-step-ahead over streaming batches,
evaluate information coefficients and the samples-vs-horizon scaling
fit, and run zero-shot tail-quantile backtests on aggregated market
trade data.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ChaoscastError,
    CheckpointMismatch,
    DataError,
    DegenerateCalibration,
    DegenerateFit,
    DegenerateSeries,
    EmptyInput,
    InsufficientCalibration,
    InsufficientData,
    MissingCheckpoint,
    NonFiniteActivation,
    NonFiniteTrajectory,
    NumericError,
    SchemaMismatch,
    UnreadableFile,
)
from .lorenz import (  # noqa: F401
    GenConfig,
    GenStats,
    LorenzParams,
    TrainingSequence,
    autocorrelation,
    batch_stream,
    derive_seed,
    export_attractor,
    generate_sequence,
    lorenz_deriv,
    reference_moments,
    resample_series,
    rk4_step,
    sample_params,
    stack_batch,
)
from .model import (  # noqa: F401
    MODEL_PRESETS,
    ModelConfig,
    forward,
    generate,
    grad,
    init_model,
    mse_loss,
    param_count,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: F401
from .training import (  # noqa: F401
    MetricsLog,
    MetricsRow,
    OptimizerState,
    TrainConfig,
    TrainResult,
    adam_update,
    clip_global_norm,
    global_norm,
    lr_schedule,
    train,
)
from .metrics import (  # noqa: F401
    EvalMetrics,
    ICCurve,
    ScalingFit,
    ScalingPoint,
    eval_model,
    fit_scaling_law,
    information_coefficient,
    samples_to_threshold,
)
from .market import (  # noqa: F401
    BarSeries,
    ParseReport,
    Scaler,
    TestWindow,
    TradeRecord,
    WindowSet,
    aggregate_bars,
    build_calibration_windows,
    build_test_windows,
    fit_scaler,
    parse_trades,
)
from .backtest import (  # noqa: F401
    BacktestReport,
    PredictionSeries,
    StrategyConfig,
    StrategyResult,
    baseline_series,
    grid_report,
    percentile_thresholds,
    predict_series,
    run_strategy,
)
