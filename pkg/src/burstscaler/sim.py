"""Discrete-time simulated cluster: response-time/utilization dynamics,
scaling delay, overload shedding, and episode metric accounting."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    capacity_per_instance: float = 100.0  # requests per step one instance absorbs
    base_rt: float = 5.0  # ms at zero load
    saturation_knee: float = 0.95  # rho where the latency curve linearizes
    scaling_delay: int = 1  # steps between decision and effect
    in_max: int = 64
    ru_noise: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.capacity_per_instance <= 0:
            raise SimError("capacity_per_instance must be positive")
        if not 0.0 < self.saturation_knee < 1.0:
            raise SimError("saturation_knee must lie in (0, 1)")
        if self.scaling_delay < 0:
            raise SimError("scaling_delay must be >= 0")
        if self.in_max < 1:
            raise SimError("in_max must be >= 1")

    def to_dict(self) -> dict:
        return {
            "capacity_per_instance": self.capacity_per_instance,
            "base_rt": self.base_rt,
            "saturation_knee": self.saturation_knee,
            "scaling_delay": self.scaling_delay,
            "in_max": self.in_max,
            "ru_noise": self.ru_noise,
            "seed": self.seed,
        }


def utilization_rho(instances: int, workload: float, config: ClusterConfig) -> float:
    return workload / (instances * config.capacity_per_instance)


def ground_truth_rt(instances: int, workload: float, config: ClusterConfig) -> float:
    """M/M/1-style latency curve with a linear tail past the saturation knee.

    RT = base / (1 - rho) below the knee; above it the curve continues with
    the tangent slope at the knee, so it is continuous and monotone in rho.
    """
    if instances < 1:
        raise SimError(f"instances must be >= 1, got {instances}")
    rho = utilization_rho(instances, workload, config)
    knee = config.saturation_knee
    if rho < knee:
        return config.base_rt / (1.0 - rho)
    kappa = config.base_rt / (1.0 - knee) ** 2
    return config.base_rt / (1.0 - knee) + kappa * (rho - knee)


RU_CEILING = 1.0 - 1e-6


def ground_truth_ru(instances: int, workload: float, config: ClusterConfig) -> float:
    """CPU utilization: rho capped just under 1, plus seeded measurement noise.

    The noise is a pure function of (seed, instances, workload) so repeated
    calls with identical inputs return identical values.
    """
    if instances < 1:
        raise SimError(f"instances must be >= 1, got {instances}")
    rho = utilization_rho(instances, workload, config)
    base = min(RU_CEILING, rho)
    if config.ru_noise <= 0:
        return max(0.0, base)
    wl_bits = int(np.float64(workload).view(np.uint64))
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, int(instances), wl_bits])
    )
    noisy = base + rng.uniform(-config.ru_noise, config.ru_noise)
    return float(min(RU_CEILING, max(0.0, noisy)))


@dataclass(frozen=True)
class StepOutcome:
    t: int
    workload: float
    target_instances: int
    effective_instances: int
    rt: float
    ru: float
    errors: int
    violated: bool


class Cluster:
    """Single-owner sequential cluster; scaling decisions apply after the delay."""

    def __init__(
        self,
        config: ClusterConfig,
        slo_rt: float = 16.0,
        initial_instances: int = 1,
    ):
        if not 1 <= initial_instances <= config.in_max:
            raise SimError(f"initial_instances out of [1, {config.in_max}]")
        self.config = config
        self.slo_rt = slo_rt
        self.effective = initial_instances
        self._pending: list[tuple[int, int]] = []  # (apply_at, target)
        self._t = 0

    def step(self, target_instances: int, workload: float) -> StepOutcome:
        """Serve one step of workload; the target takes effect after the delay."""
        cfg = self.config
        if not 1 <= target_instances <= cfg.in_max:
            raise SimError(
                f"target {target_instances} out of [1, {cfg.in_max}] at t={self._t}"
            )
        if workload < 0:
            raise SimError(f"negative workload at t={self._t}")
        t = self._t
        self._pending.append((t + cfg.scaling_delay, target_instances))
        due = [tgt for at, tgt in self._pending if at <= t]
        if due:
            self.effective = due[-1]
            self._pending = [(at, tgt) for at, tgt in self._pending if at > t]
        rho = utilization_rho(self.effective, workload, cfg)
        rt = ground_truth_rt(self.effective, workload, cfg)
        ru = ground_truth_ru(self.effective, workload, cfg)
        errors = int(round(workload * (rho - 1.0) / rho)) if rho > 1.0 else 0
        outcome = StepOutcome(
            t=t,
            workload=float(workload),
            target_instances=int(target_instances),
            effective_instances=int(self.effective),
            rt=float(rt),
            ru=float(ru),
            errors=errors,
            violated=bool(rt > self.slo_rt),
        )
        self._t += 1
        return outcome


@dataclass(frozen=True)
class StepRecord:
    """One row of the episode step log."""

    t: int
    workload: float
    target_in: int
    effective_in: int
    rt: float
    ru: float
    errors: int
    violated: bool
    is_burst: bool
    decision_path: str

    @staticmethod
    def from_outcome(outcome: StepOutcome, is_burst: bool, path: str) -> "StepRecord":
        return StepRecord(
            t=outcome.t,
            workload=outcome.workload,
            target_in=outcome.target_instances,
            effective_in=outcome.effective_instances,
            rt=outcome.rt,
            ru=outcome.ru,
            errors=outcome.errors,
            violated=outcome.violated,
            is_burst=is_burst,
            decision_path=path,
        )


STEP_LOG_COLUMNS = (
    "t", "workload", "target_in", "effective_in", "rt", "ru",
    "errors", "violated", "is_burst", "decision_path",
)


@dataclass(frozen=True)
class EpisodeMetrics:
    violation_rate: float
    resource_cost: float
    total_errors: int
    rt_variance: float

    def to_dict(self) -> dict:
        return {
            "violation_rate": self.violation_rate,
            "resource_cost": self.resource_cost,
            "total_errors": self.total_errors,
            "rt_variance": self.rt_variance,
        }


def compute_metrics(records: list[StepRecord], slo_rt: float) -> EpisodeMetrics:
    """Aggregate a step log: violation rate, mean instances, errors, RT variance."""
    if not records:
        raise SimError("empty step log")
    rts = np.array([r.rt for r in records])
    return EpisodeMetrics(
        violation_rate=float(np.mean([r.rt > slo_rt for r in records])),
        resource_cost=float(np.mean([r.effective_in for r in records])),
        total_errors=int(sum(r.errors for r in records)),
        rt_variance=float(np.var(rts)),  # population variance
    )


@dataclass
class EpisodeReport:
    records: list[StepRecord]
    metrics: EpisodeMetrics
    slo_rt: float
    seed: int
    config_echo: dict = field(default_factory=dict)

    def write_step_log(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(STEP_LOG_COLUMNS)
            for r in self.records:
                writer.writerow(
                    [
                        r.t, repr(r.workload), r.target_in, r.effective_in,
                        repr(r.rt), repr(r.ru), r.errors, int(r.violated),
                        int(r.is_burst), r.decision_path,
                    ]
                )

    def to_json(self) -> str:
        return json.dumps(
            {
                "metrics": self.metrics.to_dict(),
                "slo_rt": self.slo_rt,
                "seed": self.seed,
                "steps": len(self.records),
                "config": self.config_echo,
            },
            indent=1,
            sort_keys=True,
        )


def read_step_log(path: str | Path) -> list[StepRecord]:
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                StepRecord(
                    t=int(row["t"]),
                    workload=float(row["workload"]),
                    target_in=int(row["target_in"]),
                    effective_in=int(row["effective_in"]),
                    rt=float(row["rt"]),
                    ru=float(row["ru"]),
                    errors=int(row["errors"]),
                    violated=bool(int(row["violated"])),
                    is_burst=bool(int(row["is_burst"])),
                    decision_path=row["decision_path"],
                )
            )
    return records
