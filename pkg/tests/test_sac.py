import numpy as np
import pytest
from scipy import integrate, stats

from felrl.envs import EnvSpec
from felrl.errors import ContractViolation
from felrl.nn import DenseNet, Learner
from felrl.sac import LOG_STD_MIN, SacAgent, SacConfig, log1m_tanh_sq
from tests.helpers import make_batch


def box_spec(low: float = -1.5, high: float = 2.5, obs_dim: int = 1) -> EnvSpec:
    return EnvSpec(obs_dim=obs_dim, act_dim=1, action_low=np.array([low]), action_high=np.array([high]), horizon=10)


def constant_net(n_in: int, out) -> DenseNet:
    out = np.asarray(out, dtype=float)
    return DenseNet((n_in, out.size), ("linear",), np.concatenate([np.zeros(n_in * out.size), out]))


def linear_agent(spec: EnvSpec, **config) -> SacAgent:
    return SacAgent(spec, SacConfig(hidden_sizes=(), **config), seed=0)


def with_actor(agent: SacAgent, mean: float, log_std: float) -> SacAgent:
    agent.actor = Learner.fresh(constant_net(agent.spec.obs_dim, [mean, log_std]), agent.config.lr)
    return agent


def with_critics(agent: SacAgent, *values: float) -> SacAgent:
    n_in = agent.spec.obs_dim + agent.spec.act_dim
    agent.critics = [Learner.fresh(constant_net(n_in, [v]), agent.config.lr) for v in values]
    return agent


class QuadraticCritic:
    """Q(s, a) = −(a − peak)², with the network's tape interface."""

    def __init__(self, peak: float):
        self.peak = peak

    def forward_tape(self, x):
        return -(x[:, -1:] - self.peak) ** 2, x

    def backward(self, x, grad_out):
        grad_in = np.zeros_like(x)
        grad_in[:, -1] = grad_out[:, 0] * -2.0 * (x[:, -1] - self.peak)
        return None, grad_in


def bandit_agent(alpha: float, peak: float = 0.3) -> SacAgent:
    agent = linear_agent(box_spec(-1.0, 1.0), alpha=alpha, lr=0.01)
    for critic in agent.critics:
        critic.net = QuadraticCritic(peak)
    return agent


def zero_state_batch(n: int = 32):
    return make_batch([np.zeros(1)] * n, [[0.0]] * n, [0.0] * n, [np.zeros(1)] * n, [False] * n)


# ─────────────────────────────────────────────────────────────────────────────
# Squashed Gaussian actor
# ─────────────────────────────────────────────────────────────────────────────
def test_log1m_tanh_sq_matches_naive_form():
    u = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(log1m_tanh_sq(u), np.log(1.0 - np.tanh(u) ** 2), rtol=1e-10, atol=1e-12)


def test_log1m_tanh_sq_is_finite_far_out():
    assert log1m_tanh_sq(np.array([60.0]))[0] == pytest.approx(2.0 * (np.log(2.0) - 60.0))
    assert np.isfinite(log1m_tanh_sq(np.array([-400.0, 400.0]))).all()


def test_vanishing_std_is_deterministic():
    agent = with_actor(linear_agent(box_spec()), 0.4, -30.0)
    expected = 0.5 + 2.0 * np.tanh(0.4)
    for seed in range(5):
        action, _ = agent.actor_sample(np.zeros(1), np.random.default_rng(seed))
        assert action[0] == pytest.approx(expected, abs=1e-7)
    assert agent.log_std(np.zeros(1))[0, 0] == LOG_STD_MIN


def test_samples_stay_inside_bounds(rng):
    agent = with_actor(linear_agent(box_spec()), 3.0, 1.5)
    actions, _ = agent.actor_sample(np.zeros((20_000, 1)), rng)
    assert np.all(actions >= -1.5) and np.all(actions <= 2.5)


def test_log_prob_matches_change_of_variables(rng):
    mean, std = 0.3, 0.5
    agent = with_actor(linear_agent(box_spec()), mean, np.log(std))
    actions, log_prob = agent.actor_sample(np.zeros((500, 1)), rng)
    u = np.arctanh((actions[:, 0] - 0.5) / 2.0)
    expected = stats.norm.logpdf(u, mean, std) - np.log(2.0 * (1.0 - np.tanh(u) ** 2))
    np.testing.assert_allclose(log_prob, expected, rtol=1e-8, atol=1e-10)


def test_entropy_matches_quadrature(rng):
    mean, std = 0.3, 0.5
    agent = with_actor(linear_agent(box_spec()), mean, np.log(std))
    _, log_prob = agent.actor_sample(np.zeros((200_000, 1)), rng)

    def integrand(u):
        log_density = stats.norm.logpdf(u, mean, std) - np.log(2.0) - log1m_tanh_sq(np.array([u]))[0]
        return -stats.norm.pdf(u, mean, std) * log_density

    entropy, _ = integrate.quad(integrand, mean - 12 * std, mean + 12 * std)
    assert -np.mean(log_prob) == pytest.approx(entropy, abs=1e-2)


def test_density_integrates_to_one():
    mean, std = -0.2, 0.8

    def density(a):
        u = np.arctanh(a)
        return stats.norm.pdf(u, mean, std) / np.exp(log1m_tanh_sq(np.array([u]))[0])

    total, _ = integrate.quad(density, -1.0 + 1e-12, 1.0 - 1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_scalar_input_gives_scalar_log_prob():
    agent = SacAgent(box_spec(obs_dim=3), SacConfig(hidden_sizes=(8,)), seed=1)
    action, log_prob = agent.actor_sample(np.zeros(3))
    assert action.shape == (1,) and isinstance(log_prob, float)


def test_policy_is_tanh_of_mean():
    agent = with_actor(linear_agent(box_spec()), -0.7, 0.0)
    assert agent.act(np.zeros(1))[0] == pytest.approx(0.5 + 2.0 * np.tanh(-0.7), abs=1e-14)
    assert agent.policy().kind == "sac"


# ─────────────────────────────────────────────────────────────────────────────
# Critics
# ─────────────────────────────────────────────────────────────────────────────
def test_terminal_target_is_scaled_reward():
    agent = linear_agent(box_spec(), reward_scale=2.0)
    batch = make_batch([np.zeros(1)], [[0.0]], [1.5], [np.ones(1)], [True])
    assert agent.critic_target(batch).tolist() == [3.0]


def test_zero_temperature_uses_twin_minimum():
    agent = linear_agent(box_spec(), alpha=0.0, gamma=0.9)
    agent.targets = [constant_net(2, [2.0]), constant_net(2, [5.0])]
    batch = make_batch([np.zeros(1)], [[0.0]], [1.0], [np.ones(1)], [False])
    assert agent.alpha == 0.0
    assert agent.critic_target(batch)[0] == pytest.approx(1.0 + 0.9 * 2.0)


def test_entropy_bonus_enters_target():
    agent = with_actor(linear_agent(box_spec(), alpha=0.5, gamma=1.0), 0.0, np.log(0.3))
    agent.targets = [constant_net(2, [1.0]), constant_net(2, [1.0])]
    agent.rng = np.random.default_rng(4)
    y = agent.critic_target(make_batch([np.zeros(1)], [[0.0]], [0.0], [np.zeros(1)], [False]))
    _, log_prob = agent.actor_sample(np.zeros((1, 1)), np.random.default_rng(4))
    assert y[0] == pytest.approx(1.0 - 0.5 * log_prob[0], rel=1e-12)


def test_critic_fixed_point_is_stationary():
    agent = with_critics(linear_agent(box_spec()), 1.0, 1.0)
    before = [c.net.params.copy() for c in agent.critics]
    loss = agent.critic_update(make_batch([np.zeros(1)], [[0.2]], [1.0], [np.zeros(1)], [True]))
    assert loss == 0.0
    for b, c in zip(before, agent.critics):
        assert np.array_equal(b, c.net.params)


def test_targets_trail_critics():
    agent = SacAgent(box_spec(obs_dim=2), SacConfig(hidden_sizes=(8,), tau=0.5), seed=2)
    old_target = agent.targets[0].params.copy()
    agent.critic_update(make_batch([np.ones(2)], [[0.1]], [5.0], [np.ones(2)], [True]))
    expected = 0.5 * old_target + 0.5 * agent.critics[0].net.params
    np.testing.assert_allclose(agent.targets[0].params, expected, rtol=1e-12)


def test_zero_tau_rejected():
    with pytest.raises(ContractViolation):
        SacConfig(tau=0.0)


# ─────────────────────────────────────────────────────────────────────────────
# Actor objective
# ─────────────────────────────────────────────────────────────────────────────
def test_flat_critics_without_entropy_give_zero_gradient():
    agent = with_critics(linear_agent(box_spec(), alpha=0.0), 0.0, 0.0)
    batch = make_batch([np.zeros(1)] * 4, [[0.0]] * 4, [0.0] * 4, [np.zeros(1)] * 4, [False] * 4)
    _, grads, _ = agent.actor_gradient(batch)
    assert not grads.any()


def test_actor_gradient_matches_central_differences(rng):
    agent = SacAgent(box_spec(obs_dim=2), SacConfig(hidden_sizes=(4,), alpha=0.3), seed=5)
    s = rng.normal(size=(5, 2))
    batch = make_batch(list(s), [[0.0]] * 5, [0.0] * 5, list(s), [False] * 5)
    base = agent.actor.net

    def objective(params):
        agent.actor.net = base.with_params(params)
        agent.rng = np.random.default_rng(11)
        return agent.actor_gradient(batch)[0]

    agent.rng = np.random.default_rng(11)
    _, analytic, _ = agent.actor_gradient(batch)
    h = 1e-6
    for i in range(base.param_count):
        up, down = base.params.copy(), base.params.copy()
        up[i] += h
        down[i] -= h
        numeric = (objective(up) - objective(down)) / (2 * h)
        assert analytic[i] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_clamped_log_std_gets_no_gradient():
    agent = with_critics(with_actor(linear_agent(box_spec(), alpha=1.0), 0.1, 5.0), 0.0, 0.0)
    batch = make_batch([np.zeros(1)] * 3, [[0.0]] * 3, [0.0] * 3, [np.zeros(1)] * 3, [False] * 3)
    _, grads, _ = agent.actor_gradient(batch)
    # layout: weight row (mean, log_std), then biases (mean, log_std)
    assert grads[1] == 0.0 and grads[3] == 0.0


def test_large_temperature_widens_policy():
    agent = with_critics(with_actor(linear_agent(box_spec(-1.0, 1.0), alpha=10.0, lr=0.05), 0.0, -2.0), 0.0, 0.0)
    batch = make_batch([np.zeros(1)] * 32, [[0.0]] * 32, [0.0] * 32, [np.zeros(1)] * 32, [False] * 32)
    for _ in range(100):
        agent.actor_update(batch)
    assert agent.log_std(np.zeros(1))[0, 0] > -1.5


def test_actor_climbs_monotone_critic():
    agent = linear_agent(box_spec(-1.0, 1.0), alpha=0.0, lr=0.05)
    critic = DenseNet((2, 1), ("linear",), np.array([0.0, 1.0, 0.0]))
    agent.critics = [Learner.fresh(critic, 0.05), Learner.fresh(critic, 0.05)]
    batch = make_batch([np.zeros(1)] * 16, [[0.0]] * 16, [0.0] * 16, [np.zeros(1)] * 16, [False] * 16)
    for _ in range(300):
        agent.actor_update(batch)
    assert agent.act(np.zeros(1))[0] > 0.9


def test_actor_finds_the_bandit_optimum():
    agent, batch = bandit_agent(alpha=0.0), zero_state_batch()
    for _ in range(2000):
        agent.actor_update(batch)
    assert agent.act(np.zeros(1))[0] == pytest.approx(0.3, abs=0.02)


def test_policy_width_grows_with_temperature():
    widths = []
    for alpha in (0.0, 0.1, 0.5):
        agent, batch = bandit_agent(alpha), zero_state_batch()
        tail = []
        for step in range(1500):
            agent.actor_update(batch)
            if step >= 1300:
                tail.append(agent.log_std(np.zeros(1))[0, 0])
        widths.append(np.mean(tail))
    assert widths[0] < widths[1] < widths[2]


# ─────────────────────────────────────────────────────────────────────────────
# Temperature and resets
# ─────────────────────────────────────────────────────────────────────────────
@pytest.mark.parametrize("target_entropy, grows", [(5.0, True), (-50.0, False)])
def test_auto_temperature_tracks_entropy_target(target_entropy, grows):
    cfg = SacConfig(hidden_sizes=(8,), auto_alpha=True, target_entropy=target_entropy, lr=0.01)
    agent = SacAgent(box_spec(), cfg, seed=3)
    start = agent.alpha
    batch = make_batch([np.zeros(1)] * 8, [[0.0]] * 8, [0.0] * 8, [np.zeros(1)] * 8, [False] * 8)
    for _ in range(20):
        agent.actor_update(batch)
    assert (agent.alpha > start) == grows


def test_fixed_temperature_stays_put():
    agent = SacAgent(box_spec(), SacConfig(hidden_sizes=(8,), alpha=0.2), seed=3)
    batch = make_batch([np.zeros(1)] * 8, [[0.1]] * 8, [-1.0] * 8, [np.zeros(1)] * 8, [False] * 8)
    for _ in range(5):
        result = agent.update(batch)
    assert result["alpha"] == pytest.approx(0.2)
    assert agent.updates == 5
    assert set(result) == {"critic_loss", "actor_loss", "alpha"}


def test_reset_controller_is_seeded():
    spec = box_spec(obs_dim=3)
    agent = SacAgent(spec, SacConfig(hidden_sizes=(8, 8)), seed=6)
    initial = agent.actor.net.params.copy()
    batch = make_batch([np.ones(3)] * 4, [[0.5]] * 4, [1.0] * 4, [np.ones(3)] * 4, [False] * 4)
    agent.update(batch)
    assert not np.array_equal(agent.actor.net.params, initial)
    agent.reset_controller(6)
    assert np.array_equal(agent.actor.net.params, initial)
    assert agent.updates == 0 and agent.actor.opt.step_count == 0
    for target, critic in zip(agent.targets, agent.critics):
        assert np.array_equal(target.params, critic.net.params)
