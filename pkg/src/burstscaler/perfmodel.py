"""SVR performance model (instances, workload) -> response time, trained by SMO,
plus the SLO-constrained minimum-instance search."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

PERFMODEL_FORMAT_VERSION = 1


class PerfModelError(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PerfSample:
    instances: int
    workload: float
    response_time: float

    def __post_init__(self) -> None:
        if self.instances < 1:
            raise PerfModelError(f"instances must be >= 1, got {self.instances}")
        if self.workload < 0:
            raise PerfModelError(f"workload must be >= 0, got {self.workload}")
        if self.response_time <= 0:
            raise PerfModelError(
                f"response_time must be > 0, got {self.response_time}"
            )


def rbf_kernel(x1: np.ndarray, x2: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x1 - x2||^2); 1 at zero distance, positive everywhere."""
    if gamma <= 0:
        raise PerfModelError(f"gamma must be positive, got {gamma}")
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise PerfModelError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    diff = x1 - x2
    return float(np.exp(-gamma * np.dot(diff, diff)))


def _kernel_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


class SvrModel:
    """Trained epsilon-SVR with an RBF kernel over scaled (instances, workload).

    Prediction is the dual expansion sum(beta_i * K(x_i, x)) + b over the
    support vectors. Models are immutable after training and safe to share.
    """

    def __init__(
        self,
        support_vectors: np.ndarray,  # scaled features, shape (m, 2)
        dual_coefs: np.ndarray,  # beta, shape (m,)
        bias: float,
        gamma: float,
        feature_mean: np.ndarray,
        feature_std: np.ndarray,
        c: float,
        epsilon: float,
        converged: bool = True,
        iterations: int = 0,
        training_betas: np.ndarray | None = None,
    ):
        self.support_vectors = np.asarray(support_vectors, dtype=np.float64)
        self.dual_coefs = np.asarray(dual_coefs, dtype=np.float64)
        self.bias = float(bias)
        self.gamma = float(gamma)
        self.feature_mean = np.asarray(feature_mean, dtype=np.float64)
        self.feature_std = np.asarray(feature_std, dtype=np.float64)
        self.c = float(c)
        self.epsilon = float(epsilon)
        self.converged = converged
        self.iterations = iterations
        # full per-sample beta vector, kept for KKT auditing
        self.training_betas = training_betas

    def _scale(self, instances, workload) -> np.ndarray:
        raw = np.column_stack(
            [np.atleast_1d(instances).astype(np.float64),
             np.atleast_1d(workload).astype(np.float64)]
        )
        return (raw - self.feature_mean) / self.feature_std

    def predict_rt(self, instances: int | float, workload: float) -> float:
        """Predicted response time in ms for one (instances, workload) point."""
        if np.ndim(instances) == 0 and instances < 1:
            raise PerfModelError(f"instances must be >= 1, got {instances}")
        x = self._scale(instances, workload)
        if len(self.dual_coefs) == 0:
            return self.bias
        k = _kernel_matrix(self.support_vectors, x, self.gamma)[:, 0]
        return float(self.dual_coefs @ k + self.bias)

    def predict_batch(self, instances: np.ndarray, workload: np.ndarray) -> np.ndarray:
        x = self._scale(instances, workload)
        if len(self.dual_coefs) == 0:
            return np.full(x.shape[0], self.bias)
        k = _kernel_matrix(self.support_vectors, x, self.gamma)
        return self.dual_coefs @ k + self.bias

    def to_dict(self) -> dict:
        return {
            "version": PERFMODEL_FORMAT_VERSION,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "c": self.c,
            "epsilon": self.epsilon,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @staticmethod
    def from_dict(d: dict) -> "SvrModel":
        if d.get("version") != PERFMODEL_FORMAT_VERSION:
            raise PerfModelError(f"unsupported model version {d.get('version')}")
        return SvrModel(
            np.array(d["support_vectors"], dtype=np.float64).reshape(-1, 2),
            np.array(d["dual_coefs"], dtype=np.float64),
            d["bias"],
            d["gamma"],
            np.array(d["feature_mean"], dtype=np.float64),
            np.array(d["feature_std"], dtype=np.float64),
            d["c"],
            d["epsilon"],
            d.get("converged", True),
            d.get("iterations", 0),
        )


def train_svr(
    samples: list[PerfSample],
    c: float = 100.0,
    epsilon: float = 0.5,
    gamma: float | None = None,
    tol: float = 1e-3,
    max_iter: int = 200_000,
) -> SvrModel:
    """Solve the epsilon-SVR dual by sequential minimal optimization.

    The dual is expressed over 2n box-constrained variables (positive and
    negative slack directions per sample); each iteration picks the maximal
    violating pair and solves the two-variable subproblem in closed form.
    Stops when the KKT gap falls below `tol`, or warns at the iteration cap.

    Features are standardized internally; by default gamma is
    1 / (2 * mean feature variance) computed on the scaled features.
    """
    if len(samples) < 2:
        raise PerfModelError(f"need at least 2 samples, got {len(samples)}")
    raw = np.array(
        [[s.instances, s.workload] for s in samples], dtype=np.float64
    )
    y = np.array([s.response_time for s in samples], dtype=np.float64)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    x = (raw - mean) / std
    if gamma is None:
        gamma = 1.0 / (2.0 * max(float(np.mean(np.var(x, axis=0))), 1e-12))

    n = len(samples)
    kmat = _kernel_matrix(x, x, gamma)
    k2 = np.concatenate([kmat, kmat], axis=0)  # row s maps to sample s % n
    z = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    a = np.zeros(2 * n)
    grad = p.copy()

    diag = np.concatenate([np.diag(kmat), np.diag(kmat)])
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        vals = -z * grad
        up_mask = ((z > 0) & (a < c)) | ((z < 0) & (a > 0))
        low_mask = ((z > 0) & (a > 0)) | ((z < 0) & (a < c))
        up_vals = np.where(up_mask, vals, -np.inf)
        low_vals = np.where(low_mask, vals, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        m_up = up_vals[i]
        m_low = low_vals[j]
        if m_up - m_low <= tol:
            converged = True
            break
        q_ij = z[i] * z[j] * k2[i, j % n]
        eta = max(diag[i] + diag[j] - 2.0 * q_ij * z[i] * z[j], 1e-12)
        step = (m_up - m_low) / eta
        # box limits along the feasible direction a_i += z_i*s, a_j -= z_j*s
        limit_i = (c - a[i]) if z[i] > 0 else a[i]
        limit_j = a[j] if z[j] > 0 else (c - a[j])
        step = min(step, limit_i, limit_j)
        a[i] += z[i] * step
        a[j] -= z[j] * step
        grad += (z[i] * step) * (z * z[i] * k2[:, i % n])
        grad += (-z[j] * step) * (z * z[j] * k2[:, j % n])

    if not converged:
        warnings.warn(
            f"SMO hit the iteration cap ({max_iter}) with KKT gap above {tol}",
            ConvergenceWarning,
        )
    betas = a[:n] - a[n:]
    # bias from free variables; midpoint of the KKT bracket otherwise
    vals = -z * grad
    free = (a > 1e-10) & (a < c - 1e-10)
    if np.any(free):
        bias = float(np.mean(vals[free]))
    else:
        up_mask = ((z > 0) & (a < c)) | ((z < 0) & (a > 0))
        low_mask = ((z > 0) & (a > 0)) | ((z < 0) & (a < c))
        m_up = np.max(np.where(up_mask, vals, -np.inf))
        m_low = np.min(np.where(low_mask, vals, np.inf))
        bias = float((m_up + m_low) / 2.0)

    sv_mask = np.abs(betas) > 1e-10
    model = SvrModel(
        support_vectors=x[sv_mask],
        dual_coefs=betas[sv_mask],
        bias=bias,
        gamma=gamma,
        feature_mean=mean,
        feature_std=std,
        c=c,
        epsilon=epsilon,
        converged=converged,
        iterations=it,
        training_betas=betas,
    )
    logger.debug(
        "SMO finished: %d iterations, %d support vectors, converged=%s",
        it, int(sv_mask.sum()), converged,
    )
    return model


@dataclass(frozen=True)
class InstanceEstimate:
    count: int
    saturated: bool


def estimate_min_instances(
    model: "SvrModel | Callable[[int, float], float]",
    workload: float,
    slo_rt: float,
    in_max: int = 64,
) -> InstanceEstimate:
    """Smallest instance count whose predicted response time beats the SLO.

    Ascending linear scan over [1, in_max]; no monotonicity is assumed of
    the model. The comparison is strict (predicted == slo_rt fails). When
    no count qualifies the result is in_max with the saturated flag set,
    so callers can escalate instead of silently under-provisioning.
    """
    if slo_rt <= 0:
        raise PerfModelError(f"slo_rt must be positive, got {slo_rt}")
    if in_max < 1:
        raise PerfModelError(f"in_max must be >= 1, got {in_max}")
    predict = model.predict_rt if hasattr(model, "predict_rt") else model
    for count in range(1, in_max + 1):
        if predict(count, workload) < slo_rt:
            return InstanceEstimate(count, False)
    return InstanceEstimate(in_max, True)


def save_svr(model: SvrModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1), encoding="utf-8")


def load_svr(path: str | Path) -> SvrModel:
    return SvrModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_samples_csv(path: str | Path) -> list[PerfSample]:
    """Read training samples from CSV `instances,workload,response_time`."""
    out: list[PerfSample] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"instances", "workload", "response_time"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise PerfModelError(f"CSV must have columns {sorted(required)}")
        for i, row in enumerate(reader, start=1):
            try:
                out.append(
                    PerfSample(
                        int(float(row["instances"])),
                        float(row["workload"]),
                        float(row["response_time"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise PerfModelError(f"bad sample at row {i}: {row}") from exc
    return out
