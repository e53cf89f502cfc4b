import numpy as np
import pytest

from burstscaler.rl import (
    Adam,
    DualPivotAction,
    EnvObs,
    Mlp,
    RlConfig,
    RlError,
    RlState,
    Rollout,
    _policy_loss_and_grad,
    _value_loss_and_grad,
    action_layout,
    build_action_space,
    gae_advantages,
    load_policy,
    policy_act,
    ppo_update,
    random_policy_rewards,
    reward,
    reward_rt,
    reward_ru,
    save_policy,
    train_agent,
)


def small_config(**kw):
    defaults = dict(workload_window=2, hidden_width=8, seed=0, in_max=16,
                    offset_range=2)
    defaults.update(kw)
    return RlConfig(**defaults)


def make_policy(config, seed=0):
    rng = np.random.default_rng(seed)
    return Mlp([config.state_dim, config.hidden_width, config.hidden_width,
                config.n_slots], rng)


def make_value(config, seed=1):
    rng = np.random.default_rng(seed)
    return Mlp([config.state_dim, config.hidden_width, config.hidden_width, 1], rng)


# --- rewards -------------------------------------------------------------------


def test_reward_ru_below_knee():
    assert reward_ru(0.45, 0.9) == pytest.approx(0.5)


def test_reward_ru_at_knee():
    assert reward_ru(0.9, 0.9) == pytest.approx(1.0)


def test_reward_ru_above_knee():
    assert reward_ru(0.95, 0.9) == pytest.approx(0.0)


def test_reward_ru_continuous_at_knee():
    eps = 1e-9
    below = reward_ru(0.9 - eps, 0.9)
    above = reward_ru(0.9 + eps, 0.9)
    assert below == pytest.approx(above, abs=1e-6)


def test_reward_ru_clamps_full_utilization():
    out = reward_ru(1.0, 0.9)
    assert np.isfinite(out)
    assert out < -1000  # saturation is catastrphically penalized


def test_reward_rt_within_slo():
    assert reward_rt(10.0, 16.0, 1.0) == 1.0


def test_reward_rt_violation():
    assert reward_rt(32.0, 16.0, 1.0) == pytest.approx(-1.5)


def test_reward_rt_limit():
    assert reward_rt(1e12, 16.0, 1.0) == pytest.approx(-2.0, abs=1e-9)
    assert reward_rt(1e12, 16.0, 2.0) == pytest.approx(-4.0, abs=1e-9)


def test_reward_rt_discontinuous_at_slo():
    # the spec'd definition jumps from 1 to -alpha at the boundary
    eps = 1e-9
    assert reward_rt(16.0, 16.0, 1.0) == 1.0
    assert reward_rt(16.0 + 1e-6, 16.0, 1.0) == pytest.approx(-1.0, abs=1e-5)


def test_reward_mix():
    assert reward(0.5, 1.0, 0.5) == pytest.approx(0.75)


def test_reward_mix_equal_components():
    assert reward(0.3, 0.3, 0.5) == pytest.approx(0.3)


def test_reward_mix_floor():
    assert reward(1.0, -2.0, 0.5) == pytest.approx(-0.5)


def test_reward_mix_invalid_beta():
    with pytest.raises(RlError):
        reward(0.0, 0.0, 1.0)


# --- action space ----------------------------------------------------------------


def test_action_space_two_pivots():
    space = build_action_space(3, 10, 1, 64)
    assert list(space) == [2, 3, 4, 9, 10, 11]


def test_action_space_identical_pivots():
    space = build_action_space(5, 5, 2, 64)
    assert list(space) == [3, 4, 5, 6, 7]


def test_action_space_clamped_low():
    space = build_action_space(1, 1, 2, 64)
    assert list(space) == [1, 2, 3]


def test_action_space_contains_both_pivots():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p0 = int(rng.integers(1, 30))
        p1 = int(rng.integers(1, 30))
        space = build_action_space(p0, p1, 2, 32)
        assert p0 in space and p1 in space


def test_action_space_rejects_bad_pivot():
    with pytest.raises(RlError):
        build_action_space(0, 3, 2, 64)


def test_action_layout_shape():
    layout = action_layout(3, 10, 2, 64)
    assert layout.shape == (10,)
    assert list(layout[:5]) == [1, 2, 3, 4, 5]
    assert list(layout[5:]) == [8, 9, 10, 11, 12]


# --- acting -----------------------------------------------------------------------


def test_fresh_policy_is_near_uniform():
    config = small_config()
    policy = make_policy(config)
    state = np.zeros(config.state_dim)
    counts = build_action_space(4, 11, config.offset_range, config.in_max)
    uniform = 1.0 / len(counts)
    rng = np.random.default_rng(3)
    samples = {int(c): 0 for c in counts}
    for _ in range(2000):
        action, _ = policy_act(policy, state, 4, 11, config, rng=rng)
        samples[action.instances] += 1
    for c, n in samples.items():
        assert n / 2000 <= 2 * uniform + 0.02
        assert n / 2000 >= uniform / 2 - 0.02


def test_deterministic_mode_repeatable():
    config = small_config()
    policy = make_policy(config, seed=5)
    state = np.linspace(-1, 1, config.state_dim)
    a1, lp1 = policy_act(policy, state, 3, 9, config, deterministic=True)
    a2, lp2 = policy_act(policy, state, 3, 9, config, deterministic=True)
    assert a1 == a2 and lp1 == lp2


def test_merged_probabilities_form_simplex():
    from burstscaler.rl import _merged_distribution

    rng = np.random.default_rng(7)
    for _ in range(50):
        logits = rng.normal(size=10)
        layout = action_layout(
            int(rng.integers(1, 8)), int(rng.integers(1, 8)), 2, 16
        )
        counts, merged = _merged_distribution(logits, layout)
        assert merged.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(merged >= 0)
        assert len(counts) == len(np.unique(layout))


def test_merged_logp_matches_slot_sum():
    config = small_config()
    policy = make_policy(config, seed=9)
    state = np.linspace(-0.5, 0.5, config.state_dim)
    action, logp = policy_act(policy, state, 2, 3, config, deterministic=True)
    layout = action_layout(2, 3, config.offset_range, config.in_max)
    logits = policy(state)[0]
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    expected = np.log(probs[layout == action.instances].sum())
    assert logp == pytest.approx(expected, abs=1e-12)


def test_stochastic_mode_requires_rng():
    config = small_config()
    policy = make_policy(config)
    with pytest.raises(RlError):
        policy_act(policy, np.zeros(config.state_dim), 1, 1, config)


# --- GAE ---------------------------------------------------------------------------


def test_gae_telescoping_example():
    adv, rets = gae_advantages(
        rewards=np.array([1.0, 1.0]),
        values=np.zeros(2),
        terminals=np.array([False, True]),
        discount=1.0,
        lam=1.0,
    )
    assert np.allclose(adv, [2.0, 1.0])
    assert np.allclose(rets, [2.0, 1.0])


def test_gae_terminal_cuts_bootstrap():
    adv, _ = gae_advantages(
        rewards=np.array([0.0, 5.0]),
        values=np.array([1.0, 1.0]),
        terminals=np.array([True, True]),
        discount=0.9,
        lam=0.95,
    )
    assert adv[0] == pytest.approx(-1.0)  # reward 0, no bootstrap, minus value
    assert adv[1] == pytest.approx(4.0)


def test_gae_uses_last_value_bootstrap():
    adv, _ = gae_advantages(
        rewards=np.array([0.0]),
        values=np.array([0.0]),
        terminals=np.array([False]),
        discount=0.5,
        lam=1.0,
        last_value=4.0,
    )
    assert adv[0] == pytest.approx(2.0)


# --- PPO update ----------------------------------------------------------------------


def single_step_rollout(config, policy, state, p0, p1, reward_value, logp_shift=0.0):
    layout = action_layout(p0, p1, config.offset_range, config.in_max)
    rng = np.random.default_rng(0)
    action, logp = policy_act(policy, state, p0, p1, config, rng=rng)
    return Rollout(
        states=state[None, :],
        layouts=layout[None, :],
        chosen=np.array([action.instances]),
        log_probs=np.array([logp + logp_shift]),
        rewards=np.array([reward_value]),
        terminals=np.array([True]),
    )


def test_clipped_surrogate_uses_clip_factor():
    config = small_config(clip_ratio=0.2, epochs=1, entropy_coef=0.0)
    policy = make_policy(config, seed=11)
    value_net = make_value(config, seed=12)
    value_net.set_flat(np.zeros_like(value_net.get_flat()))  # V = 0
    state = np.linspace(-1, 1, config.state_dim)
    # behavior log-prob shifted so the ratio is exactly 1.5; advantage = 1
    rollout = single_step_rollout(config, policy, state, 3, 9, reward_value=1.0,
                                  logp_shift=-np.log(1.5))
    diag = ppo_update(policy, value_net, rollout, config)
    assert not diag["aborted"]
    # single-sample advantage stays unnormalized at 1.0: loss = -min(1.5, 1.2)
    assert diag["policy_loss"] == pytest.approx(-1.2, abs=1e-9)


def test_zero_advantage_leaves_policy_unchanged():
    # with the entropy regularizer off, a zero-advantage rollout has an
    # exactly-zero policy gradient
    config = small_config(epochs=3, entropy_coef=0.0)
    policy = make_policy(config, seed=13)
    value_net = make_value(config, seed=14)
    value_net.set_flat(np.zeros_like(value_net.get_flat()))  # V = 0 exactly
    state = np.linspace(-1, 1, config.state_dim)
    rollout = single_step_rollout(config, policy, state, 3, 9, reward_value=0.0)
    before = policy.get_flat().copy()
    diag = ppo_update(policy, value_net, rollout, config)
    assert not diag["aborted"]
    assert np.array_equal(policy.get_flat(), before)


def test_non_finite_reward_aborts_and_restores():
    config = small_config(epochs=2)
    policy = make_policy(config, seed=15)
    value_net = make_value(config, seed=16)
    state = np.linspace(-1, 1, config.state_dim)
    rollout = single_step_rollout(config, policy, state, 3, 9, reward_value=np.nan)
    before_p = policy.get_flat().copy()
    before_v = value_net.get_flat().copy()
    diag = ppo_update(policy, value_net, rollout, config)
    assert diag["aborted"]
    assert np.array_equal(policy.get_flat(), before_p)
    assert np.array_equal(value_net.get_flat(), before_v)


# --- analytic gradients vs finite differences -----------------------------------------


def random_rollout(config, policy, n, seed):
    rng = np.random.default_rng(seed)
    states, layouts, chosen, logps = [], [], [], []
    for _ in range(n):
        state = rng.normal(size=config.state_dim)
        p0 = int(rng.integers(1, 8))
        p1 = int(rng.integers(1, 8))
        action, logp = policy_act(policy, state, p0, p1, config, rng=rng)
        states.append(state)
        layouts.append(action_layout(p0, p1, config.offset_range, config.in_max))
        chosen.append(action.instances)
        logps.append(logp)
    return Rollout(
        states=np.array(states),
        layouts=np.array(layouts),
        chosen=np.array(chosen),
        log_probs=np.array(logps),
        rewards=rng.normal(size=n),
        terminals=np.zeros(n, dtype=bool),
    )


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def flat_grads(net, grads_w, grads_b):
    return np.concatenate([g.ravel() for g in grads_w + grads_b])


def test_policy_gradient_matches_finite_differences():
    config = small_config(clip_ratio=0.2)
    policy = make_policy(config, seed=17)
    rollout = random_rollout(config, policy, n=6, seed=18)
    advantages = np.random.default_rng(19).normal(size=6)

    loss, gw, gb, _ = _policy_loss_and_grad(policy, rollout, advantages, config)
    analytic = flat_grads(policy, gw, gb)

    theta = policy.get_flat().copy()
    h = 1e-6
    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        theta[i] += h
        policy.set_flat(theta)
        up, *_ = _policy_loss_and_grad(policy, rollout, advantages, config)
        theta[i] -= 2 * h
        policy.set_flat(theta)
        down, *_ = _policy_loss_and_grad(policy, rollout, advantages, config)
        theta[i] += h
        fd[i] = (up - down) / (2 * h)
    policy.set_flat(theta)
    assert relative_error(analytic, fd) < 1e-4


def test_value_gradient_matches_finite_differences():
    config = small_config()
    value_net = make_value(config, seed=20)
    rng = np.random.default_rng(21)
    states = rng.normal(size=(5, config.state_dim))
    returns = rng.normal(size=5)

    loss, gw, gb = _value_loss_and_grad(value_net, states, returns)
    analytic = flat_grads(value_net, gw, gb)

    theta = value_net.get_flat().copy()
    h = 1e-6
    fd = np.zeros_like(theta)
    for i in range(len(theta)):
        theta[i] += h
        value_net.set_flat(theta)
        up, *_ = _value_loss_and_grad(value_net, states, returns)
        theta[i] -= 2 * h
        value_net.set_flat(theta)
        down, *_ = _value_loss_and_grad(value_net, states, returns)
        theta[i] += h
        fd[i] = (up - down) / (2 * h)
    value_net.set_flat(theta)
    assert relative_error(analytic, fd) < 1e-4


# --- training loop ---------------------------------------------------------------------


class ToyEnv:
    """Reward 1 when the agent picks the fixed good count, else decreasing.

    The good count sits two offsets above the prediction pivot, so the
    warm-started policy has to move away from its initialization.
    """

    def __init__(self, good=5, length=40, config=None):
        self.good = good
        self.length = length
        self.config = config
        self.t = 0

    def _obs(self):
        state = RlState(
            utilization=0.5,
            response_time=10.0,
            instances=self.good,
            workload_features=np.zeros(self.config.workload_window + 4),
        )
        return EnvObs(state=state, p0=self.good - 2, p1=self.good + 3)

    def reset(self):
        self.t = 0
        return self._obs()

    def step(self, instances):
        self.t += 1
        rew = 1.0 - 0.2 * abs(instances - self.good)
        return self._obs(), rew, self.t >= self.length


def test_train_agent_zero_episodes_returns_initialized():
    config = small_config()
    env = ToyEnv(config=config)
    result = train_agent(env, config, episodes=0)
    # same seed, untouched by training (warm-start bias included)
    rng = np.random.default_rng(config.seed)
    expected = Mlp([config.state_dim, config.hidden_width, config.hidden_width,
                    config.n_slots], rng)
    expected.biases[-1][config.offset_range] = config.warm_start_bias
    assert np.array_equal(result.policy.get_flat(), expected.get_flat())
    assert result.episode_rewards == []


def test_train_agent_seeded_determinism():
    config = small_config(epochs=2)
    r1 = train_agent(ToyEnv(config=config), config, episodes=5)
    r2 = train_agent(ToyEnv(config=config), config, episodes=5)
    assert r1.episode_rewards == r2.episode_rewards
    assert np.array_equal(r1.policy.get_flat(), r2.policy.get_flat())


def test_train_agent_improves_on_toy_env():
    config = small_config(epochs=4, policy_lr=0.01)
    result = train_agent(ToyEnv(config=config), config, episodes=40)
    curve = result.episode_rewards
    assert np.mean(curve[-5:]) > np.mean(curve[:5]) + 0.1


def test_random_policy_rewards_seeded():
    config = small_config()
    a = random_policy_rewards(ToyEnv(config=config), config, 3, seed=5)
    b = random_policy_rewards(ToyEnv(config=config), config, 3, seed=5)
    assert a == b


# --- serialization -----------------------------------------------------------------------


def test_policy_round_trip(tmp_path):
    config = small_config()
    result = train_agent(ToyEnv(config=config), config, episodes=2)
    path = tmp_path / "p.json"
    save_policy(result, config, path)
    back, back_config = load_policy(path)
    assert np.array_equal(back.policy.get_flat(), result.policy.get_flat())
    assert back_config == config
    assert back.episode_rewards == result.episode_rewards


def test_state_vector_dimension_check():
    config = small_config()
    state = RlState(0.5, 10.0, 3, np.zeros(1))  # wrong feature width
    with pytest.raises(RlError):
        state.vector(config)
