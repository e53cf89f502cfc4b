"""Burst-aware autoscaling engine and discrete-time cluster simulator."""

__version__ = "0.1.0"

from .burst import (
    Ar2Model,
    BurstDetector,
    BurstHandler,
    DetectorConfig,
    ar_predict,
    bootstrap_upper_ci,
    detect_burst,
    deviation_distance,
    fit_ar2,
    overestimate_burst,
)
from .engine import (
    Artifacts,
    AutoscalerSpec,
    Decision,
    HpaConfig,
    hpa_step,
    run_comparison,
    run_episode,
    train_artifacts,
)
from .forecast import (
    Forecaster,
    ForecasterConfig,
    IntervalForecast,
    aggregate_quantile_loss,
    fit_linear_quantile,
    fit_seasonal_quantile,
    quantile_loss,
)
from .perfmodel import (
    PerfSample,
    SvrModel,
    estimate_min_instances,
    rbf_kernel,
    train_svr,
)
from .rl import (
    DualPivotAction,
    RlConfig,
    RlState,
    build_action_space,
    policy_act,
    ppo_update,
    reward,
    reward_rt,
    reward_ru,
    train_agent,
)
from .sim import (
    Cluster,
    ClusterConfig,
    EpisodeReport,
    StepOutcome,
    compute_metrics,
    ground_truth_rt,
    ground_truth_ru,
)
from .trace import (
    WorkloadTrace,
    fetch_pageviews,
    load_trace,
    save_trace,
    standardize,
    time_features,
    window,
)
