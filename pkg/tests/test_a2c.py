import numpy as np
import pytest
from conftest import rel_error

from cacc_marl import a2c, nn
from cacc_marl.errors import EmptyBatch, InvalidDistribution
from cacc_marl.fixtures import finite_difference_oracle


def random_batch(rng, n=8, terminal_last=False):
    term = np.zeros(n, dtype=bool)
    term[-1] = terminal_last
    return a2c.Batch(rng.normal(size=(n, 5)), rng.integers(0, 4, n), rng.normal(size=n),
                     rng.normal(size=(n, 5)), term)


def random_learner(rng, entropy_coef=0.01):
    return a2c.AgentLearner(rng.normal(scale=0.5, size=nn.ACTOR.n_params),
                            rng.normal(scale=0.5, size=nn.CRITIC.n_params), 0.99, entropy_coef)


def test_sample_degenerate():
    rng = np.random.default_rng(0)
    assert all(a2c.sample_action([1, 0, 0, 0], rng) == 0 for _ in range(100))
    assert all(a2c.sample_action([0, 0, 0, 1], rng) == 3 for _ in range(100))


def test_sample_frequencies():
    rng = np.random.default_rng(1)
    draws = np.array([a2c.sample_action([0.25] * 4, rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=4) / len(draws)
    sigma = np.sqrt(0.25 * 0.75 / len(draws))
    assert np.all(np.abs(freq - 0.25) < 4 * sigma)


def test_sample_deterministic():
    a = [a2c.sample_action([0.1, 0.2, 0.3, 0.4], r) for r in [np.random.default_rng(5)] * 20]
    b = [a2c.sample_action([0.1, 0.2, 0.3, 0.4], r) for r in [np.random.default_rng(5)] * 20]
    assert a == b


@pytest.mark.parametrize("probs", [[0.5, 0.5, 0.1, 0.0], [1.2, -0.2, 0, 0], [np.nan, 1, 0, 0]])
def test_sample_rejects_bad_distribution(probs):
    with pytest.raises(InvalidDistribution):
        a2c.sample_action(probs, np.random.default_rng(0))


def crafted_critic(v_s, v_next):
    """Critic whose output is exactly ``v_s`` at obs 0 and ``v_next`` at obs e_0 (zero hidden weights trick)."""
    spec = nn.CRITIC
    p = np.zeros(spec.n_params)
    (w0, b0), (w1, b1) = nn.unflatten(p, spec)
    w0[0, 0] = 1.0
    w1[0, 0] = (v_next - v_s) / np.tanh(1.0)
    b1[0] = v_s
    return p


def test_advantage_hand_example():
    critic = crafted_critic(2.0, 2.0)
    t = a2c.Transition(np.zeros(5), 0, 1.0, np.eye(5)[0])
    assert a2c.advantage(t, critic, 0.99) == pytest.approx(0.98, abs=1e-12)


def test_advantage_terminal_and_zero_critic():
    critic = crafted_critic(2.0, 5.0)
    t = a2c.Transition(np.zeros(5), 0, 1.0, np.eye(5)[0], terminal=True)
    assert a2c.advantage(t, critic, 0.99) == pytest.approx(-1.0, abs=1e-12)
    t2 = a2c.Transition(np.ones(5), 2, -3.5, np.ones(5))
    assert a2c.advantage(t2, np.zeros(nn.CRITIC.n_params), 0.99) == -3.5


def test_advantage_identity_batch(rng):
    b = random_batch(rng, terminal_last=True)
    critic = rng.normal(size=nn.CRITIC.n_params)
    adv = a2c.advantages(b, critic, 0.9)
    for t, a in zip(b.transitions(), adv):
        assert a == pytest.approx(a2c.advantage(t, critic, 0.9), abs=1e-12)


def test_empty_batch():
    learner = a2c.AgentLearner.fresh(0)
    with pytest.raises(EmptyBatch):
        a2c.actor_gradient([], learner)
    with pytest.raises(EmptyBatch):
        a2c.critic_gradient([], learner)


def test_zero_advantage_zero_gradient(rng):
    learner = random_learner(rng, entropy_coef=0.0)
    g = a2c.actor_gradient(random_batch(rng), learner, np.zeros(8))
    assert not g.any()


@pytest.mark.parametrize("coef", [0.0, 0.01, 0.5])
def test_actor_gradient_finite_differences(coef, rng):
    for _ in range(5):
        learner = random_learner(rng, coef)
        b = random_batch(rng)
        adv = rng.normal(size=len(b))
        f = lambda p: a2c.actor_objective(p, b, adv, coef)
        assert rel_error(a2c.actor_gradient(b, learner, adv), finite_difference_oracle(f, learner.actor_params)) < 1e-5


def test_single_transition_log_prob_gradient(rng):
    learner = random_learner(rng, 0.0)
    t = a2c.Transition(rng.normal(size=5), 2, 0.0, rng.normal(size=5))
    b = a2c.Batch.from_transitions([t])
    f = lambda p: float(np.log(nn.policy_forward(p, t.obs)[2]) * 1.7)
    got = a2c.actor_gradient(b, learner, np.array([1.7]))
    assert rel_error(got, finite_difference_oracle(f, learner.actor_params)) < 1e-5


def test_critic_gradient_finite_differences(rng):
    for _ in range(5):
        learner = random_learner(rng)
        b = random_batch(rng, terminal_last=True)
        targets = a2c.td_targets(b, learner.critic_params, learner.gamma)
        f = lambda p: a2c.critic_loss(p, b, targets)
        got = a2c.critic_gradient(b, learner)
        assert rel_error(got, finite_difference_oracle(f, learner.critic_params)) < 1e-5


def test_critic_gradient_zero_residual(rng):
    learner = random_learner(rng)
    b = random_batch(rng)
    v = nn.value_forward(learner.critic_params, b.obs)
    assert not a2c.critic_gradient(b, learner, v).any()


def test_critic_gradient_linear_in_residual(rng):
    # a critic with identity-like hidden layer behaves linearly in its output weights
    learner = random_learner(rng)
    b = random_batch(rng)
    v = nn.value_forward(learner.critic_params, b.obs)
    res = rng.normal(size=len(b))
    g1 = a2c.critic_gradient(b, learner, v + res)
    g2 = a2c.critic_gradient(b, learner, v + 2 * res)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-14)
    assert np.linalg.norm(g2) == pytest.approx(2 * np.linalg.norm(g1))


def test_entropy_pushes_toward_uniform():
    learner = a2c.AgentLearner(np.zeros(nn.ACTOR.n_params), np.zeros(nn.CRITIC.n_params), 0.99, 0.5)
    layers = nn.unflatten(learner.actor_params, nn.ACTOR)
    layers[1][1][:] = [4.0, 0.0, -1.0, 0.5]
    b = a2c.Batch(np.zeros((1, 5)), np.array([0]), np.zeros(1), np.zeros((1, 5)), np.zeros(1, bool))

    def entropy(p):
        pr = nn.policy_forward(p, np.zeros(5))
        return -np.sum(pr * np.log(pr))

    before = entropy(learner.actor_params)
    step = learner.actor_params + 0.1 * a2c.actor_gradient(b, learner, np.zeros(1))
    assert entropy(step) > before


def test_logit_shift_invariance(rng):
    learner = random_learner(rng)
    b = random_batch(rng)
    adv = rng.normal(size=len(b))
    shifted = learner.actor_params.copy()
    nn.unflatten(shifted, nn.ACTOR)[1][1][:] += 3.0
    g1 = a2c.actor_gradient(b, learner, adv)
    g2 = a2c.actor_gradient(b, a2c.AgentLearner(shifted, learner.critic_params, 0.99, 0.01), adv)
    np.testing.assert_allclose(g1, g2, atol=1e-10)


def test_uniform_policy_expected_gradient_zero():
    rng = np.random.default_rng(8)
    learner = a2c.AgentLearner(np.zeros(nn.ACTOR.n_params), np.zeros(nn.CRITIC.n_params), 0.99, 0.0)
    nn.unflatten(learner.actor_params, nn.ACTOR)[0][0][:] = rng.normal(size=(5, 64))
    nn.unflatten(learner.actor_params, nn.ACTOR)[1][0][:] = 0.0
    obs = rng.normal(size=5)
    n = 20_000
    grads = []
    for _ in range(n):
        a = a2c.sample_action([0.25] * 4, rng)
        b = a2c.Batch(obs[None], np.array([a]), np.zeros(1), obs[None], np.zeros(1, bool))
        grads.append(a2c.actor_gradient(b, learner, np.ones(1)))
    g = np.array(grads)
    mean, se = g.mean(axis=0), g.std(axis=0) / np.sqrt(n)
    live = se > 0
    assert np.all(np.abs(mean[live]) < 4.5 * se[live])
    assert np.all(mean[~live] == 0)


def test_fresh_learner_deterministic():
    a, b = a2c.AgentLearner.fresh(7), a2c.AgentLearner.fresh(7)
    np.testing.assert_array_equal(a.actor_params, b.actor_params)
    np.testing.assert_array_equal(a.critic_params, b.critic_params)
    assert not np.array_equal(a.actor_params[:10], a2c.AgentLearner.fresh(8).actor_params[:10])
