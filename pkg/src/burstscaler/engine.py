"""Autoscaling control loop: forecast, detect, handle, estimate, enhance.

Composes the forecaster, burst detector/handler, performance model, and
policy into per-step scaling decisions, alongside the threshold HPA
baseline and the three ablation variants. Episodes run against the
simulated cluster and produce step logs plus aggregate metrics.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .burst import BurstDetector, BurstHandler, DetectorConfig
from .forecast import (
    Forecaster,
    ForecasterConfig,
    IntervalForecast,
    fit_linear_quantile,
    fit_seasonal_quantile,
)
from .perfmodel import PerfSample, SvrModel, estimate_min_instances, train_svr
from .rl import (
    EnvObs,
    Mlp,
    RlConfig,
    RlState,
    TrainResult,
    policy_act,
    reward,
    reward_rt,
    reward_ru,
    train_agent,
)
from .sim import (
    Cluster,
    ClusterConfig,
    EpisodeMetrics,
    EpisodeReport,
    StepRecord,
    compute_metrics,
    ground_truth_rt,
    ground_truth_ru,
)
from .trace import InputWindow, WorkloadTrace, time_features

logger = logging.getLogger(__name__)

PATH_BURST = "burst-overestimate"
PATH_ENHANCED = "non-burst-enhanced"
PATH_FALLBACK = "reactive-fallback"
PATH_BASELINE = "baseline"

VARIANTS = ("bascaler", "hpa", "ab_burst", "ab_pred", "ab_rl")

# forecast bounds are floored here before entering the detector, whose
# relative distance is undefined at non-positive interval bounds
MIN_INTERVAL_BOUND = 1e-3

_CEIL_GUARD = 1e-9  # absorbs float junk in exact-ratio HPA targets


class EngineError(ValueError):
    pass


class EpisodeRuntimeError(RuntimeError):
    """A component blew up mid-episode; the message carries the step index."""


@dataclass(frozen=True)
class HpaConfig:
    target_utilization: float = 0.6
    tolerance: float = 0.1  # relative dead band around the target
    cooldown: int = 1  # steps to hold after a scaling change

    def __post_init__(self) -> None:
        if not 0.0 < self.target_utilization < 1.0:
            raise EngineError("target_utilization must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "target_utilization": self.target_utilization,
            "tolerance": self.tolerance,
            "cooldown": self.cooldown,
        }


def hpa_step(
    current_in: int, current_ru: float, target_ru: float, in_max: int = 64
) -> int:
    """Proportional reactive rule: ceil(in * ru / target), clamped to [1, in_max]."""
    if not 0.0 < target_ru < 1.0:
        raise EngineError(f"target_ru must lie in (0, 1), got {target_ru}")
    desired = current_in * current_ru / target_ru
    return int(min(max(math.ceil(desired - _CEIL_GUARD), 1), in_max))


@dataclass(frozen=True)
class AutoscalerSpec:
    variant: str = "bascaler"
    slo_rt: float = 16.0
    in_max: int = 64
    forecaster_kind: str = "seasonal"
    forecaster_config: ForecasterConfig = field(
        default_factory=lambda: ForecasterConfig(input_length=48, horizon=24)
    )
    detector_config: DetectorConfig = field(default_factory=DetectorConfig)
    handler_fit_window: int = 168
    handler_bootstrap_iterations: int = 100
    svr_c: float = 100.0
    svr_epsilon: float = 0.2
    svr_gamma: float | None = 16.0
    svr_samples: int = 800
    rl_config: RlConfig = field(default_factory=lambda: RlConfig(workload_window=8))
    rl_train_episodes: int = 30
    hpa_config: HpaConfig = field(default_factory=HpaConfig)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise EngineError(f"unknown variant {self.variant!r}; pick from {VARIANTS}")
        if self.uses_detector and (
            self.forecaster_config.horizon < self.detector_config.history_length
        ):
            raise EngineError(
                "forecast horizon must cover the detector history length "
                f"({self.forecaster_config.horizon} < "
                f"{self.detector_config.history_length})"
            )

    @property
    def uses_forecaster(self) -> bool:
        return self.variant != "hpa"

    @property
    def uses_detector(self) -> bool:
        return self.variant in ("bascaler", "ab_pred", "ab_rl")

    @property
    def uses_policy(self) -> bool:
        return self.variant in ("bascaler", "ab_burst", "ab_pred")

    def with_variant(self, variant: str) -> "AutoscalerSpec":
        return replace(self, variant=variant)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "slo_rt": self.slo_rt,
            "in_max": self.in_max,
            "forecaster_kind": self.forecaster_kind,
            "forecaster": self.forecaster_config.to_dict(),
            "detector": self.detector_config.to_dict(),
            "handler_fit_window": self.handler_fit_window,
            "handler_bootstrap_iterations": self.handler_bootstrap_iterations,
            "svr_c": self.svr_c,
            "svr_epsilon": self.svr_epsilon,
            "svr_gamma": self.svr_gamma,
            "svr_samples": self.svr_samples,
            "rl": self.rl_config.to_dict(),
            "rl_train_episodes": self.rl_train_episodes,
            "hpa": self.hpa_config.to_dict(),
        }


@dataclass(frozen=True)
class Decision:
    target: int
    path: str
    is_burst: bool = False
    forecast_median: float | None = None
    in_min: int | None = None
    saturated: bool = False
    rl_pivot: int | None = None
    rl_offset: int | None = None
    degraded: bool = False


@dataclass(frozen=True)
class Observation:
    """Measurements available when planning step t (taken during step t-1)."""

    t: int
    timestamp: int
    prev_workload: float
    prev_ru: float
    prev_rt: float
    instances: int


@dataclass
class Artifacts:
    forecaster: Forecaster | None = None
    perf_model: SvrModel | None = None
    policy: Mlp | None = None
    value_net: Mlp | None = None
    rl_curve: list[float] = field(default_factory=list)


class HpaController:
    """Reactive CPU-threshold autoscaler with a dead band and cooldown."""

    def __init__(self, spec: AutoscalerSpec):
        self.spec = spec
        self._since_change = 10**9

    def step(self, obs: Observation) -> Decision:
        cfg = self.spec.hpa_config
        self._since_change += 1
        target = obs.instances
        in_band = abs(obs.prev_ru - cfg.target_utilization) <= (
            cfg.tolerance * cfg.target_utilization
        )
        if not in_band and self._since_change > cfg.cooldown:
            proposed = hpa_step(
                obs.instances, obs.prev_ru, cfg.target_utilization, self.spec.in_max
            )
            if proposed != obs.instances:
                target = proposed
                self._since_change = 0
        return Decision(target=target, path=PATH_BASELINE)


class BurstAwareController:
    """Per-step planner for the bascaler variant and its ablations."""

    def __init__(
        self,
        spec: AutoscalerSpec,
        artifacts: Artifacts,
        trace_step: int,
        trace_mean: float,
        seed: int = 0,
        plan_ahead: int = 1,
    ):
        if spec.uses_forecaster and artifacts.forecaster is None:
            raise EngineError(f"variant {spec.variant} needs a trained forecaster")
        if spec.uses_forecaster and artifacts.perf_model is None:
            raise EngineError(f"variant {spec.variant} needs a trained perf model")
        if spec.uses_policy and artifacts.policy is None:
            raise EngineError(f"variant {spec.variant} needs a trained policy")
        if not 1 <= plan_ahead <= spec.forecaster_config.horizon:
            raise EngineError(f"plan_ahead {plan_ahead} outside the forecast horizon")
        self.spec = spec
        self.artifacts = artifacts
        self.trace_step = trace_step
        self.trace_mean = max(trace_mean, 1e-9)
        # which horizon step the decision serves: 1 plus the provisioning delay
        self.plan_ahead = plan_ahead
        self.history: deque[tuple[int, float]] = deque(
            maxlen=spec.forecaster_config.input_length
        )
        self.detector = BurstDetector(spec.detector_config) if spec.uses_detector else None
        self.handler = (
            BurstHandler(
                fit_window=spec.handler_fit_window,
                residual_window=spec.detector_config.history_length,
                bootstrap_iterations=spec.handler_bootstrap_iterations,
                seed=seed,
            )
            if spec.uses_detector
            else None
        )
        self.wf: deque[float] = deque(maxlen=spec.rl_config.workload_window)
        self.degradations = 0

    def _ingest(self, m: int, timestamp_m: int, y: float) -> None:
        self.history.append((timestamp_m, y))
        self.wf.append(y / self.trace_mean)
        if self.handler is not None:
            self.handler.observe(y)
        if self.detector is not None:
            self.detector.observe(m, y)

    def _window(self) -> InputWindow:
        ts = np.array([p[0] for p in self.history], dtype=np.int64)
        vals = np.array([p[1] for p in self.history], dtype=np.float64)
        return InputWindow(values=vals, timestamps=ts, step=self.trace_step)

    def _wf_features(self, timestamp: int) -> np.ndarray:
        k = self.spec.rl_config.workload_window
        recent = np.zeros(k)
        if self.wf:
            got = np.array(self.wf)
            recent[-len(got):] = got
        return np.concatenate([recent, time_features(timestamp)])

    def prewarm(self, trace: WorkloadTrace, eval_start: int) -> None:
        """Replay the training prefix so detection is live at the first step."""
        spec = self.spec
        need = spec.forecaster_config.input_length
        if spec.uses_detector:
            need += spec.detector_config.history_length + 2
        if eval_start < need:
            raise EngineError(
                f"eval_start {eval_start} leaves too little history (need {need})"
            )
        replay_from = eval_start - 1 - (
            spec.detector_config.history_length + 2 if spec.uses_detector else 0
        )
        for m in range(eval_start - 1):
            self._ingest(m, int(trace.timestamps[m]), float(trace.values[m]))
            if (
                spec.uses_detector
                and m >= replay_from
                and len(self.history) >= spec.forecaster_config.input_length
            ):
                forecast = self._detector_forecast()
                self.detector.detect(m)
                self.detector.push_forecast(m, forecast)

    def _detector_forecast(self) -> IntervalForecast:
        raw = self.artifacts.forecaster.predict(self._window())
        return IntervalForecast(np.maximum(raw.triples, MIN_INTERVAL_BOUND))

    def step(self, obs: Observation) -> Decision:
        try:
            return self._plan(obs)
        except Exception:
            logger.exception("component failure at t=%d; reactive fallback", obs.t)
            self.degradations += 1
            return Decision(
                target=hpa_step(
                    obs.instances,
                    obs.prev_ru,
                    self.spec.hpa_config.target_utilization,
                    self.spec.in_max,
                ),
                path=PATH_FALLBACK,
                degraded=True,
            )

    def _plan(self, obs: Observation) -> Decision:
        spec = self.spec
        m = obs.t - 1
        self._ingest(m, obs.timestamp - self.trace_step, obs.prev_workload)
        if len(self.history) < spec.forecaster_config.input_length:
            return Decision(
                target=hpa_step(
                    obs.instances, obs.prev_ru,
                    spec.hpa_config.target_utilization, spec.in_max,
                ),
                path=PATH_FALLBACK,
            )
        forecast = self.artifacts.forecaster.predict(self._window())
        is_burst = False
        if self.detector is not None:
            clamped = IntervalForecast(
                np.maximum(forecast.triples, MIN_INTERVAL_BOUND)
            )
            is_burst = self.detector.detect(m)
            self.detector.push_forecast(m, clamped)
        median_next = float(forecast.median[self.plan_ahead - 1])
        if is_burst:
            planned_workload = self.handler.overestimate(steps=self.plan_ahead)
        else:
            planned_workload = max(median_next, 0.0)
        estimate = estimate_min_instances(
            self.artifacts.perf_model, planned_workload, spec.slo_rt, spec.in_max
        )
        if is_burst:
            return Decision(
                target=estimate.count,
                path=PATH_BURST,
                is_burst=True,
                forecast_median=median_next,
                in_min=estimate.count,
                saturated=estimate.saturated,
            )
        if spec.uses_policy:
            p0 = estimate.count
            p1 = obs.instances
            if spec.variant == "ab_pred":
                # prediction pivot ablated: both blocks anchor on the current count
                p0 = p1
            state = RlState(
                utilization=obs.prev_ru,
                response_time=obs.prev_rt,
                instances=obs.instances,
                workload_features=self._wf_features(obs.timestamp),
            )
            action, _ = policy_act(
                self.artifacts.policy,
                state.vector(spec.rl_config),
                p0,
                p1,
                spec.rl_config,
                deterministic=True,
            )
            return Decision(
                target=action.instances,
                path=PATH_ENHANCED,
                forecast_median=median_next,
                in_min=estimate.count,
                saturated=estimate.saturated,
                rl_pivot=action.pivot,
                rl_offset=action.offset,
            )
        return Decision(
            target=estimate.count,
            path=PATH_BASELINE,
            forecast_median=median_next,
            in_min=estimate.count,
            saturated=estimate.saturated,
        )


def build_controller(
    spec: AutoscalerSpec,
    artifacts: Artifacts,
    trace: WorkloadTrace,
    seed: int = 0,
    plan_ahead: int = 1,
):
    if spec.variant == "hpa":
        return HpaController(spec)
    controller = BurstAwareController(
        spec,
        artifacts,
        trace_step=trace.step,
        trace_mean=float(np.mean(trace.values)),
        seed=seed,
        plan_ahead=plan_ahead,
    )
    return controller


# --- training helpers --------------------------------------------------------


def generate_perf_samples(
    sim_config: ClusterConfig,
    wl_max: float,
    n: int,
    rng: np.random.Generator,
    measurement_noise: float = 0.1,
) -> list[PerfSample]:
    """Sample (instances, workload) across the operational envelope.

    Instance counts are restricted to the range the workload ceiling can
    actually exercise, and half the samples sit in the utilization band
    around the SLO crossing, where instance-count decisions flip.
    """
    samples = []
    mu = sim_config.capacity_per_instance
    in_hi = min(sim_config.in_max, math.ceil(wl_max / (mu * 0.65)) + 2)
    for _ in range(n):
        instances = int(rng.integers(1, in_hi + 1))
        if rng.uniform() < 0.5:
            rho = rng.uniform(0.45, 0.95)
        else:
            rho = rng.uniform(0.0, 1.2)
        workload = min(rho * instances * mu, wl_max)
        rt = ground_truth_rt(instances, workload, sim_config)
        rt = max(rt + rng.uniform(-measurement_noise, measurement_noise), 0.01)
        samples.append(PerfSample(instances, float(workload), float(rt)))
    return samples


def oracle_min_instances(
    workload: float, slo_rt: float, sim_config: ClusterConfig
) -> int:
    """Minimum instances meeting the SLO under the true simulator dynamics."""
    est = estimate_min_instances(
        lambda count, wl: ground_truth_rt(count, wl, sim_config),
        workload,
        slo_rt,
        sim_config.in_max,
    )
    return est.count


class ClusterScalingEnv:
    """Simulator-backed environment for training the enhancement agent.

    Mirrors the non-burst decision path: each step exposes the estimated
    pivot (from the forecaster median through the performance model) and
    the current pivot; the agent picks the instance count directly.
    """

    def __init__(
        self,
        trace: WorkloadTrace,
        start: int,
        sim_config: ClusterConfig,
        slo_rt: float,
        rl_config: RlConfig,
        forecaster: Forecaster,
        perf_model: SvrModel,
        input_length: int,
        end: int | None = None,
        current_pivot_only: bool = False,
    ):
        if start < input_length + 1:
            raise EngineError("start leaves no room for the forecast window")
        self.trace = trace
        self.start = start
        self.end = len(trace) if end is None else min(end, len(trace))
        if self.end <= start:
            raise EngineError("empty environment segment")
        # prediction-pivot ablation: expose the current count as both pivots
        self.current_pivot_only = current_pivot_only
        self.sim_config = sim_config
        self.slo_rt = slo_rt
        self.rl_config = rl_config
        self.forecaster = forecaster
        self.perf_model = perf_model
        self.input_length = input_length
        self.trace_mean = max(float(np.mean(trace.values)), 1e-9)
        self.plan_ahead = 1 + sim_config.scaling_delay
        self._p0_cache: dict[int, int] = {}
        self._t = start
        self.cluster: Cluster | None = None
        self._prev_ru = 0.0
        self._prev_rt = sim_config.base_rt

    def _pivot_for(self, t: int) -> int:
        if t not in self._p0_cache:
            lo = t - self.input_length
            win = InputWindow(
                values=self.trace.values[lo:t].copy(),
                timestamps=self.trace.timestamps[lo:t].copy(),
                step=self.trace.step,
            )
            forecast = self.forecaster.predict(win)
            median = max(float(forecast.median[self.plan_ahead - 1]), 0.0)
            est = estimate_min_instances(
                self.perf_model, median, self.slo_rt, self.sim_config.in_max
            )
            self._p0_cache[t] = est.count
        return self._p0_cache[t]

    def _obs(self) -> EnvObs:
        t = self._t
        k = self.rl_config.workload_window
        recent = self.trace.values[max(0, t - k): t] / self.trace_mean
        wf = np.zeros(k)
        wf[-len(recent):] = recent
        state = RlState(
            utilization=self._prev_ru,
            response_time=self._prev_rt,
            instances=self.cluster.effective,
            workload_features=np.concatenate(
                [wf, time_features(self.trace.timestamps[t])]
            ),
        )
        p1 = self.cluster.effective
        p0 = p1 if self.current_pivot_only else self._pivot_for(t)
        return EnvObs(state=state, p0=p0, p1=p1)

    def reset(self) -> EnvObs:
        t0 = self.start
        wl_prev = float(self.trace.values[t0 - 1])
        initial = oracle_min_instances(wl_prev, self.slo_rt, self.sim_config)
        self.cluster = Cluster(self.sim_config, self.slo_rt, initial)
        self._prev_ru = ground_truth_ru(initial, wl_prev, self.sim_config)
        self._prev_rt = ground_truth_rt(initial, wl_prev, self.sim_config)
        self._t = t0
        return self._obs()

    def step(self, instances: int) -> tuple[EnvObs, float, bool]:
        if self.cluster is None:
            raise EngineError("call reset() before step()")
        t = self._t
        outcome = self.cluster.step(instances, float(self.trace.values[t]))
        cfg = self.rl_config
        rew = reward(
            reward_ru(outcome.ru, cfg.utilization_knee),
            reward_rt(outcome.rt, cfg.slo_rt, cfg.rt_penalty),
            cfg.reward_mix,
        )
        # the utilization score is unbounded below at saturation; training
        # rewards are floored so one such step cannot dominate the update
        rew = max(rew, -10.0)
        self._prev_ru = outcome.ru
        self._prev_rt = outcome.rt
        self._t += 1
        done = self._t >= self.end
        return self._obs() if not done else self._terminal_obs(), rew, done

    def _terminal_obs(self) -> EnvObs:
        # placeholder observation; its value is only used when not done
        state = RlState(
            utilization=self._prev_ru,
            response_time=self._prev_rt,
            instances=self.cluster.effective,
            workload_features=np.zeros(self.rl_config.workload_window + 4),
        )
        return EnvObs(state=state, p0=1, p1=self.cluster.effective)


def train_artifacts(
    spec: AutoscalerSpec,
    trace: WorkloadTrace,
    sim_config: ClusterConfig,
    eval_start: int,
    seed: int = 0,
) -> Artifacts:
    """Train whatever the variant needs: forecaster, perf model, policy."""
    artifacts = Artifacts()
    if not spec.uses_forecaster:
        return artifacts
    ss = np.random.SeedSequence([seed, 1001])
    rng = np.random.default_rng(ss)
    train_trace = trace.slice(0, eval_start)
    if spec.forecaster_kind == "seasonal":
        artifacts.forecaster = fit_seasonal_quantile(train_trace, spec.forecaster_config)
    elif spec.forecaster_kind == "linear":
        artifacts.forecaster = fit_linear_quantile(train_trace, spec.forecaster_config)
    else:
        raise EngineError(f"unknown forecaster kind {spec.forecaster_kind!r}")
    wl_max = float(np.max(trace.values)) * 1.5
    samples = generate_perf_samples(sim_config, wl_max, spec.svr_samples, rng)
    artifacts.perf_model = train_svr(
        samples, c=spec.svr_c, epsilon=spec.svr_epsilon, gamma=spec.svr_gamma
    )
    if spec.uses_policy:
        result = train_policy(
            spec, trace, sim_config, eval_start, seed,
            artifacts.forecaster, artifacts.perf_model,
        )
        artifacts.policy = result.policy
        artifacts.value_net = result.value_net
        artifacts.rl_curve = result.episode_rewards
    return artifacts


def train_policy(
    spec: AutoscalerSpec,
    trace: WorkloadTrace,
    sim_config: ClusterConfig,
    eval_start: int,
    seed: int,
    forecaster: Forecaster,
    perf_model: SvrModel,
) -> TrainResult:
    """Train the enhancement agent on the tail of the training prefix.

    The evaluation region is never seen during training. The ab_pred
    variant trains with the current count as its only pivot, matching how
    it acts.
    """
    rl_config = replace(spec.rl_config, seed=seed, in_max=spec.in_max,
                        slo_rt=spec.slo_rt)
    env_start = max(spec.forecaster_config.input_length + 1, eval_start - 480)
    env = ClusterScalingEnv(
        trace,
        env_start,
        replace(sim_config, seed=seed),
        spec.slo_rt,
        rl_config,
        forecaster,
        perf_model,
        spec.forecaster_config.input_length,
        end=eval_start,
        current_pivot_only=spec.variant == "ab_pred",
    )
    return train_agent(env, rl_config, spec.rl_train_episodes)


# --- episodes and comparisons -------------------------------------------------


def run_episode(
    spec: AutoscalerSpec,
    trace: WorkloadTrace,
    sim_config: ClusterConfig,
    seed: int = 0,
    artifacts: Artifacts | None = None,
    eval_start: int | None = None,
) -> EpisodeReport:
    """Run the sequential decision loop over the trace's evaluation region."""
    if eval_start is None:
        eval_start = int(len(trace) * 0.6)
    if eval_start < 1 or eval_start >= len(trace):
        raise EngineError(f"eval_start {eval_start} out of range")
    if artifacts is None:
        artifacts = train_artifacts(spec, trace, sim_config, eval_start, seed)
    controller = build_controller(
        spec, artifacts, trace, seed, plan_ahead=1 + sim_config.scaling_delay
    )
    if isinstance(controller, BurstAwareController):
        controller.prewarm(trace, eval_start)
    wl_prev = float(trace.values[eval_start - 1])
    initial = oracle_min_instances(wl_prev, spec.slo_rt, sim_config)
    episode_seed = int(
        np.random.SeedSequence([sim_config.seed, seed, 77]).generate_state(1)[0]
    )
    episode_sim = replace(sim_config, seed=episode_seed)
    cluster = Cluster(episode_sim, spec.slo_rt, initial)
    prev_ru = ground_truth_ru(initial, wl_prev, episode_sim)
    prev_rt = ground_truth_rt(initial, wl_prev, episode_sim)
    records: list[StepRecord] = []
    for t in range(eval_start, len(trace)):
        obs = Observation(
            t=t,
            timestamp=int(trace.timestamps[t]),
            prev_workload=float(trace.values[t - 1]),
            prev_ru=prev_ru,
            prev_rt=prev_rt,
            instances=cluster.effective,
        )
        try:
            decision = controller.step(obs)
            outcome = cluster.step(decision.target, float(trace.values[t]))
        except Exception as exc:
            raise EpisodeRuntimeError(f"episode failed at step index {t}: {exc}") from exc
        records.append(
            StepRecord.from_outcome(outcome, decision.is_burst, decision.path)
        )
        prev_ru, prev_rt = outcome.ru, outcome.rt
    return EpisodeReport(
        records=records,
        metrics=compute_metrics(records, spec.slo_rt),
        slo_rt=spec.slo_rt,
        seed=seed,
        config_echo={
            "spec": spec.to_dict(),
            "sim": sim_config.to_dict(),
            "eval_start": eval_start,
            "trace_length": len(trace),
        },
    )


METRIC_NAMES = ("violation_rate", "resource_cost", "total_errors", "rt_variance")


@dataclass
class ComparisonRow:
    variant: str
    trace_name: str
    means: dict
    stds: dict
    n_seeds: int


@dataclass
class ComparisonResult:
    rows: list[ComparisonRow]
    improvements: list[dict]  # bascaler vs each other variant, mean+-std per metric
    reports: dict  # (variant, trace_name, seed) -> EpisodeReport


def _improvement(baseline: float, ours: float) -> float:
    """Percent reduction relative to the baseline, capped for degenerate zeros."""
    if abs(baseline) < 1e-12:
        return 0.0 if abs(ours) < 1e-12 else -1000.0
    return max(min(100.0 * (baseline - ours) / abs(baseline), 1000.0), -1000.0)


def run_comparison(
    specs: list[AutoscalerSpec],
    traces: dict[str, WorkloadTrace],
    seeds: list[int],
    sim_config: ClusterConfig,
    eval_fraction: float = 0.6,
) -> ComparisonResult:
    """Per (variant, trace): mean +- std of the metrics across seeds.

    All variants share the artifacts trained per (trace, seed) from the
    most demanding spec, so ablations differ only in the decision logic.
    """
    if not specs or not traces or not seeds:
        raise EngineError("need at least one spec, trace, and seed")
    trainer_spec = next(
        (s for s in specs if s.uses_policy), next((s for s in specs if s.uses_forecaster), specs[0])
    )
    reports: dict = {}
    for trace_name, trace in traces.items():
        eval_start = int(len(trace) * eval_fraction)
        for seed in seeds:
            artifacts = train_artifacts(trainer_spec, trace, sim_config, eval_start, seed)
            for spec in specs:
                spec_artifacts = artifacts
                if spec.variant == "ab_pred" and artifacts.forecaster is not None:
                    # its policy acts on the current-pivot space, so it is
                    # trained that way rather than reusing the dual policy
                    result = train_policy(
                        spec, trace, sim_config, eval_start, seed,
                        artifacts.forecaster, artifacts.perf_model,
                    )
                    spec_artifacts = Artifacts(
                        forecaster=artifacts.forecaster,
                        perf_model=artifacts.perf_model,
                        policy=result.policy,
                        value_net=result.value_net,
                        rl_curve=result.episode_rewards,
                    )
                reports[(spec.variant, trace_name, seed)] = run_episode(
                    spec, trace, sim_config, seed, spec_artifacts, eval_start
                )
    rows = []
    for spec in specs:
        for trace_name in traces:
            metric_values = {
                m: [
                    getattr(reports[(spec.variant, trace_name, s)].metrics, m)
                    for s in seeds
                ]
                for m in METRIC_NAMES
            }
            rows.append(
                ComparisonRow(
                    variant=spec.variant,
                    trace_name=trace_name,
                    means={m: float(np.mean(v)) for m, v in metric_values.items()},
                    stds={m: float(np.std(v)) for m, v in metric_values.items()},
                    n_seeds=len(seeds),
                )
            )
    improvements = []
    by_key = {(r.variant, r.trace_name): r for r in rows}
    if any(s.variant == "bascaler" for s in specs):
        for spec in specs:
            if spec.variant == "bascaler":
                continue
            entry = {"baseline": spec.variant}
            for m in METRIC_NAMES:
                per_trace = [
                    _improvement(
                        by_key[(spec.variant, name)].means[m],
                        by_key[("bascaler", name)].means[m],
                    )
                    for name in traces
                ]
                entry[m] = {
                    "mean": float(np.mean(per_trace)),
                    "std": float(np.std(per_trace)),
                }
            improvements.append(entry)
    return ComparisonResult(rows=rows, improvements=improvements, reports=reports)
