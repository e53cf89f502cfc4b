"""PPO-based estimation enhancement over a dual-pivot discrete action space.

The policy scores a fixed logit layout of 2 * (2 * sigma + 1) slots — one
block of offsets around the model-estimated instance count, one around the
current count. Slots resolving to the same instance count have their
probabilities merged, honoring the set-union semantics of the action space
while keeping network shapes static.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

logger = logging.getLogger(__name__)

POLICY_FORMAT_VERSION = 1


class RlError(ValueError):
    pass


@dataclass(frozen=True)
class RlConfig:
    discount: float = 0.99  # gamma
    offset_range: int = 2  # sigma: half-width of each pivot block
    reward_mix: float = 0.5  # beta: weight on the utilization term
    utilization_knee: float = 0.9  # lambda_RU
    slo_rt: float = 16.0  # lambda_RT (ms)
    rt_penalty: float = 1.0  # alpha
    clip_ratio: float = 0.2
    epochs: int = 4
    rollout_steps: int = 2048
    hidden_width: int = 64
    gae_lambda: float = 0.95
    policy_lr: float = 1e-2
    value_lr: float = 1e-2
    workload_window: int = 24  # recent workload values in the state
    in_max: int = 64
    entropy_coef: float = 0.003
    kl_stop: float = 0.5  # skip remaining epochs past this approximate KL
    warm_start_bias: float = 2.0  # initial logit bias on the offset-0 slot
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise RlError(f"discount must lie in [0, 1], got {self.discount}")
        if not 0.0 < self.reward_mix < 1.0:
            raise RlError(f"reward_mix must lie in (0, 1), got {self.reward_mix}")
        if self.offset_range < 0:
            raise RlError(f"offset_range must be >= 0, got {self.offset_range}")

    @property
    def n_slots(self) -> int:
        return 2 * (2 * self.offset_range + 1)

    @property
    def state_dim(self) -> int:
        # ru, rt, instances + workload window + 4 calendar features
        return 3 + self.workload_window + 4

    def to_dict(self) -> dict:
        return {
            "discount": self.discount,
            "offset_range": self.offset_range,
            "reward_mix": self.reward_mix,
            "utilization_knee": self.utilization_knee,
            "slo_rt": self.slo_rt,
            "rt_penalty": self.rt_penalty,
            "clip_ratio": self.clip_ratio,
            "epochs": self.epochs,
            "rollout_steps": self.rollout_steps,
            "hidden_width": self.hidden_width,
            "gae_lambda": self.gae_lambda,
            "policy_lr": self.policy_lr,
            "value_lr": self.value_lr,
            "workload_window": self.workload_window,
            "in_max": self.in_max,
            "entropy_coef": self.entropy_coef,
            "kl_stop": self.kl_stop,
            "warm_start_bias": self.warm_start_bias,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "RlConfig":
        return RlConfig(**d)


@dataclass(frozen=True)
class RlState:
    """Observed scaling state; workload_features is already normalized."""

    utilization: float  # RU in [0, 1)
    response_time: float  # previous step's raw measurement, ms
    instances: int
    workload_features: np.ndarray  # window of wl / trace_mean, then calendar

    def vector(self, config: RlConfig) -> np.ndarray:
        rt_norm = min(self.response_time / config.slo_rt, 10.0)
        head = np.array(
            [self.utilization, rt_norm, self.instances / config.in_max]
        )
        vec = np.concatenate([head, self.workload_features])
        if len(vec) != config.state_dim:
            raise RlError(
                f"state dim {len(vec)} != configured {config.state_dim}"
            )
        return vec


@dataclass(frozen=True)
class DualPivotAction:
    pivot: int  # 0 = prediction pivot, 1 = current pivot (representative slot)
    offset: int
    instances: int


# --- rewards ----------------------------------------------------------------


def reward_ru(ru: float, knee: float) -> float:
    """Utilization score: linear up to the knee, collapsing toward 2 past it."""
    if not 0.0 < knee < 1.0:
        raise RlError(f"utilization knee must lie in (0, 1), got {knee}")
    ru = min(ru, 1.0 - 1e-6)  # guard the 1/(1-RU) pole
    if ru <= knee:
        return ru / knee
    return 2.0 - (1.0 - knee) / (1.0 - ru)


def reward_rt(rt: float, slo_rt: float, alpha: float) -> float:
    """SLO score: 1 when within the SLO, scaled penalty in (-2a, -a] beyond it."""
    if rt <= slo_rt:
        return 1.0
    return alpha * (slo_rt / rt - 2.0)


def reward(r_ru: float, r_rt: float, beta: float) -> float:
    """Linear mix beta * r_ru + (1 - beta) * r_rt."""
    if not 0.0 < beta < 1.0:
        raise RlError(f"beta must lie in (0, 1), got {beta}")
    return beta * r_ru + (1.0 - beta) * r_rt


# --- action space -----------------------------------------------------------


def build_action_space(p0: int, p1: int, sigma: int, in_max: int) -> np.ndarray:
    """Distinct instance counts {p0 +- j} U {p1 +- j}, clamped, ascending."""
    if p0 < 1 or p1 < 1:
        raise RlError(f"pivots must be >= 1, got {p0}, {p1}")
    offsets = np.arange(-sigma, sigma + 1)
    counts = np.concatenate([p0 + offsets, p1 + offsets])
    counts = np.clip(counts, 1, in_max)
    return np.unique(counts)


def action_layout(p0: int, p1: int, sigma: int, in_max: int) -> np.ndarray:
    """Resolved instance count per logit slot; shape (2 * (2*sigma + 1),)."""
    offsets = np.arange(-sigma, sigma + 1)
    return np.clip(np.concatenate([p0 + offsets, p1 + offsets]), 1, in_max)


# --- tiny feed-forward networks with manual backprop ------------------------


class Mlp:
    """Two-hidden-layer tanh network with analytic gradients.

    Weights are Xavier-initialized; the output layer starts at zero so a
    fresh policy is uniform and a fresh value head predicts 0.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (a + b))
            self.weights.append(rng.uniform(-bound, bound, size=(a, b)))
            self.biases.append(np.zeros(b))
        self.weights[-1][:] = 0.0

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, activation cache); x has shape (batch, in_dim)."""
        h = np.atleast_2d(x)
        cache = [h]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if layer < len(self.weights) - 1:
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self, cache: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradients of a scalar loss wrt weights/biases, given dL/d(output)."""
        grads_w = [np.zeros_like(w) for w in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]
        delta = np.atleast_2d(grad_out)
        for layer in range(len(self.weights) - 1, -1, -1):
            if layer < len(self.weights) - 1:
                delta = delta * (1.0 - cache[layer + 1] ** 2)  # tanh'
            grads_w[layer] = cache[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ self.weights[layer].T
        return grads_w, grads_b

    def get_flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for w in self.weights:
            w[:] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for b in self.biases:
            b[:] = flat[pos : pos + b.size]
            pos += b.size

    def snapshot(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights] + [b.copy() for b in self.biases]

    def restore(self, snap: list[np.ndarray]) -> None:
        k = len(self.weights)
        for i in range(k):
            self.weights[i][:] = snap[i]
            self.biases[i][:] = snap[k + i]

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @staticmethod
    def from_dict(d: dict) -> "Mlp":
        net = Mlp(d["sizes"], np.random.default_rng(0))
        net.weights = [np.array(w, dtype=np.float64) for w in d["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return net


class Adam:
    """Adam over a network's weight/bias lists."""

    def __init__(self, net: Mlp, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        params = net.weights + net.biases
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads_w: list[np.ndarray], grads_b: list[np.ndarray]) -> None:
        self.t += 1
        params = self.net.weights + self.net.biases
        grads = grads_w + grads_b
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- acting -----------------------------------------------------------------


def _merged_distribution(
    logits: np.ndarray, layout: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(distinct counts ascending, merged probabilities) for one slot layout."""
    shifted = logits - np.max(logits)
    probs = np.exp(shifted)
    probs /= probs.sum()
    counts = np.unique(layout)
    merged = np.array([probs[layout == c].sum() for c in counts])
    return counts, merged


def policy_act(
    policy: Mlp,
    state_vec: np.ndarray,
    p0: int,
    p1: int,
    config: RlConfig,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> tuple[DualPivotAction, float]:
    """Choose an instance count and return it with its merged log-probability."""
    layout = action_layout(p0, p1, config.offset_range, config.in_max)
    logits = policy(state_vec)[0]
    counts, merged = _merged_distribution(logits, layout)
    if deterministic:
        pick = int(np.argmax(merged))
    else:
        if rng is None:
            raise RlError("stochastic mode needs a random generator")
        pick = int(rng.choice(len(counts), p=merged))
    chosen = int(counts[pick])
    logp = float(np.log(max(merged[pick], 1e-12)))
    slot = int(np.argmax(layout == chosen))
    block = 2 * config.offset_range + 1
    action = DualPivotAction(
        pivot=slot // block,
        offset=int(slot % block - config.offset_range),
        instances=chosen,
    )
    return action, logp


# --- rollouts and PPO -------------------------------------------------------


@dataclass
class Rollout:
    states: np.ndarray  # (N, state_dim)
    layouts: np.ndarray  # (N, n_slots) resolved counts per slot
    chosen: np.ndarray  # (N,) chosen instance counts
    log_probs: np.ndarray  # (N,) behavior log-probabilities
    rewards: np.ndarray  # (N,)
    terminals: np.ndarray  # (N,) bool

    def __len__(self) -> int:
        return len(self.rewards)


def gae_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    terminals: np.ndarray,
    discount: float,
    lam: float,
    last_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation; returns (advantages, returns)."""
    n = len(rewards)
    adv = np.zeros(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        v_next = 0.0 if terminals[t] else (last_value if t == n - 1 else values[t + 1])
        delta = rewards[t] + discount * v_next - values[t]
        carry = delta + discount * lam * carry * (0.0 if terminals[t] else 1.0)
        adv[t] = carry
    return adv, adv + values


def _policy_loss_and_grad(
    policy: Mlp, rollout: Rollout, advantages: np.ndarray, config: RlConfig
) -> tuple[float, list[np.ndarray], list[np.ndarray], dict]:
    logits, cache = policy.forward(rollout.states)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    mask = rollout.layouts == rollout.chosen[:, None]
    merged = np.maximum((probs * mask).sum(axis=1), 1e-12)
    logp_new = np.log(merged)
    ratio = np.exp(logp_new - rollout.log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    n = len(rollout)
    # entropy of the merged distribution, via per-slot merged probabilities
    eq = rollout.layouts[:, :, None] == rollout.layouts[:, None, :]
    p_slot = np.maximum(np.einsum("nab,nb->na", eq, probs), 1e-12)
    entropy = -np.sum(probs * np.log(p_slot), axis=1)
    loss = float(
        -np.mean(np.minimum(surr1, surr2)) - config.entropy_coef * np.mean(entropy)
    )
    # d(-min)/d logp: active only where the unclipped branch is selected
    active = surr1 <= surr2
    dlogp = np.where(active, -advantages * ratio, 0.0) / n
    # d logp / d logits for a merged action: p_k * (1[k in set]/P - 1)
    dlogits = probs * (mask / merged[:, None] - 1.0) * dlogp[:, None]
    # entropy term: dH/dlogit_j = p_j * (-H - log P_slot_j)
    dlogits += (
        -config.entropy_coef / n
    ) * probs * (-entropy[:, None] - np.log(p_slot))
    grads_w, grads_b = policy.backward(cache, dlogits)
    diag = {
        "clip_fraction": float(np.mean(~active)),
        "approx_kl": float(np.mean(rollout.log_probs - logp_new)),
        "entropy": float(np.mean(entropy)),
    }
    return loss, grads_w, grads_b, diag


def _value_loss_and_grad(
    value_net: Mlp, states: np.ndarray, returns: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    preds, cache = value_net.forward(states)
    preds = preds[:, 0]
    err = preds - returns
    loss = float(np.mean(err**2))
    dout = (2.0 * err / len(returns))[:, None]
    grads_w, grads_b = value_net.backward(cache, dout)
    return loss, grads_w, grads_b


def ppo_update(
    policy: Mlp,
    value_net: Mlp,
    rollout: Rollout,
    config: RlConfig,
    policy_opt: Adam | None = None,
    value_opt: Adam | None = None,
    last_value: float = 0.0,
) -> dict:
    """Clipped-surrogate PPO update over one rollout.

    Runs config.epochs full-batch passes. A non-finite loss aborts the
    update and restores both networks' prior parameters (reported via the
    'aborted' diagnostic).
    """
    if len(rollout) == 0:
        raise RlError("empty rollout")
    policy_opt = policy_opt or Adam(policy, config.policy_lr)
    value_opt = value_opt or Adam(value_net, config.value_lr)
    values = value_net(rollout.states)[:, 0]
    if not np.all(np.isfinite(rollout.rewards)):
        return {"aborted": True, "reason": "non-finite rewards"}
    advantages, returns = gae_advantages(
        rollout.rewards, values, rollout.terminals,
        config.discount, config.gae_lambda, last_value,
    )
    std = advantages.std()
    if std > 1e-8:
        advantages = (advantages - advantages.mean()) / std
    policy_snap = policy.snapshot()
    value_snap = value_net.snapshot()
    diags: dict = {"aborted": False}
    for epoch in range(config.epochs):
        p_loss, pw, pb, p_diag = _policy_loss_and_grad(
            policy, rollout, advantages, config
        )
        v_loss, vw, vb = _value_loss_and_grad(value_net, rollout.states, returns)
        if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
            policy.restore(policy_snap)
            value_net.restore(value_snap)
            logger.warning("PPO update aborted on non-finite loss")
            return {"aborted": True, "reason": "non-finite loss"}
        if epoch > 0 and p_diag["approx_kl"] > config.kl_stop:
            diags["kl_stopped"] = True
            break
        policy_opt.step(pw, pb)
        value_opt.step(vw, vb)
        diags = {"aborted": False, "policy_loss": p_loss, "value_loss": v_loss, **p_diag}
    return diags


# --- environment protocol and training loop ---------------------------------


@dataclass(frozen=True)
class EnvObs:
    state: RlState
    p0: int  # prediction pivot (estimated instance count)
    p1: int  # current pivot (instances now)


class ScalingEnv(Protocol):
    def reset(self) -> EnvObs: ...

    def step(self, instances: int) -> tuple[EnvObs, float, bool]: ...


@dataclass
class TrainResult:
    policy: Mlp
    value_net: Mlp
    episode_rewards: list[float]


def train_agent(env: ScalingEnv, config: RlConfig, episodes: int) -> TrainResult:
    """Train PPO on the environment; one update per collected episode.

    The policy starts warm: the offset-0 slot of the prediction pivot gets
    an initial logit bias, so training explores refinements around the
    model-estimated count instead of wandering from uniform.
    """
    rng = np.random.default_rng(config.seed)
    policy = Mlp([config.state_dim, config.hidden_width, config.hidden_width,
                  config.n_slots], rng)
    policy.biases[-1][config.offset_range] = config.warm_start_bias
    value_net = Mlp([config.state_dim, config.hidden_width, config.hidden_width, 1], rng)
    policy_opt = Adam(policy, config.policy_lr)
    value_opt = Adam(value_net, config.value_lr)
    curve: list[float] = []
    for _ in range(episodes):
        obs = env.reset()
        states, layouts, chosen, logps, rewards, terminals = [], [], [], [], [], []
        done = False
        steps = 0
        while not done and steps < config.rollout_steps:
            vec = obs.state.vector(config)
            action, logp = policy_act(
                policy, vec, obs.p0, obs.p1, config, rng=rng
            )
            layout = action_layout(obs.p0, obs.p1, config.offset_range, config.in_max)
            obs, rew, done = env.step(action.instances)
            states.append(vec)
            layouts.append(layout)
            chosen.append(action.instances)
            logps.append(logp)
            rewards.append(rew)
            terminals.append(done)
            steps += 1
        rollout = Rollout(
            states=np.array(states),
            layouts=np.array(layouts),
            chosen=np.array(chosen),
            log_probs=np.array(logps),
            rewards=np.array(rewards),
            terminals=np.array(terminals, dtype=bool),
        )
        last_value = 0.0
        if not terminals[-1]:
            last_value = float(value_net(obs.state.vector(config))[0, 0])
        ppo_update(policy, value_net, rollout, config, policy_opt, value_opt, last_value)
        curve.append(float(np.mean(rewards)))
    return TrainResult(policy, value_net, curve)


def random_policy_rewards(env: ScalingEnv, config: RlConfig, episodes: int,
                          seed: int) -> list[float]:
    """Per-episode mean reward of a uniform policy over the merged action space."""
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(episodes):
        obs = env.reset()
        rewards = []
        done = False
        steps = 0
        while not done and steps < config.rollout_steps:
            space = build_action_space(
                obs.p0, obs.p1, config.offset_range, config.in_max
            )
            obs, rew, done = env.step(int(rng.choice(space)))
            rewards.append(rew)
            steps += 1
        curve.append(float(np.mean(rewards)))
    return curve


# --- serialization ----------------------------------------------------------


def save_policy(result: TrainResult, config: RlConfig, path: str | Path) -> None:
    doc = {
        "version": POLICY_FORMAT_VERSION,
        "config": config.to_dict(),
        "policy": result.policy.to_dict(),
        "value_net": result.value_net.to_dict(),
        "episode_rewards": result.episode_rewards,
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_policy(path: str | Path) -> tuple[TrainResult, RlConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != POLICY_FORMAT_VERSION:
        raise RlError(f"unsupported policy format version {doc.get('version')}")
    result = TrainResult(
        Mlp.from_dict(doc["policy"]),
        Mlp.from_dict(doc["value_net"]),
        list(doc.get("episode_rewards", [])),
    )
    return result, RlConfig.from_dict(doc["config"])


def save_learning_curve(curve: list[float], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("episode,mean_reward\n")
        for i, r in enumerate(curve):
            fh.write(f"{i},{repr(float(r))}\n")
