import math

import numpy as np
import pytest
from helpers import assert_gradients_match

from awac_lab.nn import Adam, DenseNet, GaussianPolicy, TwinCritic, load_checkpoint, save_checkpoint


def test_forward_examples():
    net = DenseNet([3, 4, 2], np.random.default_rng(0))
    for w in net.weights:
        w[...] = 0.0
    net.biases[-1][...] = [1.5, -2.0]
    for x in (np.zeros(3), np.ones(3) * 7):
        assert np.array_equal(net(x), [1.5, -2.0])
    lin = DenseNet([3, 3], np.random.default_rng(0))
    lin.weights[0][...] = np.eye(3)
    lin.biases[0][...] = 0.0
    x = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(lin(x), x)


def test_forward_matches_hand_composition():
    net = DenseNet([2, 3, 1], np.random.default_rng(7))
    x = np.array([[0.4, -0.9], [1.1, 0.2]])
    w0, b0, w1, b1 = net.params
    hand = np.maximum(x @ w0 + b0, 0.0) @ w1 + b1
    assert np.max(np.abs(net(x) - hand)) < 1e-12


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        DenseNet([3, 2])(np.zeros(4))


def test_backward_requires_forward():
    with pytest.raises(RuntimeError):
        DenseNet([2, 2]).backward(np.ones((1, 2)))


@pytest.mark.parametrize("sizes", [[3, 5, 2], [4, 8, 8, 1], [2, 6, 3, 4]])
def test_backward_matches_finite_differences(sizes):
    rng = np.random.default_rng(len(sizes))
    net = DenseNet(sizes, rng)
    x = rng.normal(size=(6, sizes[0]))
    target = rng.normal(size=(6, sizes[-1]))

    def loss():
        return float(np.sum(np.sin(net.predict(x)) * target))

    out = net.forward(x)
    grads, gx = net.backward(np.cos(out) * target)
    assert_gradients_match(net.params, loss, grads)
    # input gradient too
    assert_gradients_match([x], loss, [gx])


def test_zero_upstream_gives_zero_gradients():
    net = DenseNet([3, 4, 2], np.random.default_rng(1))
    net.forward(np.ones((5, 3)))
    grads, gx = net.backward(np.zeros((5, 2)))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_linear_least_squares_gradient_is_the_residual_formula():
    rng = np.random.default_rng(2)
    net = DenseNet([4, 1], rng)
    x = rng.normal(size=(20, 4))
    y = rng.normal(size=20)
    pred = net.forward(x)[:, 0]
    grads, _ = net.backward((pred - y)[:, None])
    w, b = net.params
    resid = x @ w[:, 0] + b[0] - y
    assert np.allclose(grads[0][:, 0], x.T @ resid)
    assert np.isclose(grads[1][0], resid.sum())


def unit_policy(obs_dim=2, act_dim=1, seed=0, low=-1.0, high=1.0, hidden=(8,)):
    return GaussianPolicy(obs_dim, act_dim, hidden, np.random.default_rng(seed), low, high)


def test_log_prob_standard_normal_at_center():
    pol = unit_policy()
    for w in pol.trunk.weights:
        w[...] = 0.0
    pol.trunk.biases[-1][...] = 0.0  # mean 0, log-std 0
    assert pol.log_prob(np.zeros(2), np.zeros(1))[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_prob_integrates_to_one():
    pol = unit_policy(seed=3, low=-2.0, high=3.0)
    s = np.array([0.2, -0.4])
    grid = np.linspace(-2.0, 3.0, 200_001)[1:-1]
    logp = pol.log_prob(np.repeat(s[None], grid.size, 0), grid[:, None])
    integral = np.trapezoid(np.exp(logp), grid)
    assert abs(integral - 1.0) < 1e-3


def test_log_prob_rejects_boundary_actions():
    pol = unit_policy()
    with pytest.raises(ValueError):
        pol.log_prob(np.zeros(2), np.ones(1))


def test_sampling_properties():
    pol = unit_policy(obs_dim=3, act_dim=2, seed=4, low=[-0.05, 0.0], high=[0.05, 2.0])
    s = np.random.default_rng(0).normal(size=(5, 3))
    mean, log_std = pol.distribution(s)
    a0, _ = pol.sample(s, np.zeros((5, 2)))
    assert np.allclose(a0, pol.center + pol.half * np.tanh(mean))
    noise = np.random.default_rng(1).normal(size=(5, 2)) * 3
    a, logp = pol.sample(s, noise)
    assert np.all(a > pol.center - pol.half) and np.all(a < pol.center + pol.half)
    assert np.max(np.abs(pol.log_prob(s, a) - logp)) < 1e-10
    a2, logp2 = pol.sample_no_grad(s, noise)
    assert np.array_equal(a, a2) and np.array_equal(logp, logp2)


def test_sample_mean_law_of_large_numbers():
    pol = unit_policy(seed=5)
    s = np.zeros((1, 2))
    mean, log_std = pol.distribution(s)
    n = 100_000
    noise = np.random.default_rng(2).standard_normal((n, 1))
    a, _ = pol.sample_no_grad(np.repeat(s, n, 0), noise)
    u = pol.unsquash(a)
    sigma = math.exp(log_std[0, 0])
    assert abs(u.mean() - mean[0, 0]) < 3 * sigma / math.sqrt(n) * 1.5


def test_samples_collapse_as_std_vanishes():
    pol = unit_policy(seed=6)
    pol.trunk.biases[-1][1] = -60.0  # raw log-std far below the clamp
    pol.trunk.weights[-1][:, 1] = 0.0
    s = np.zeros((3, 2))
    a, _ = pol.sample_no_grad(s, np.random.default_rng(0).normal(size=(3, 1)))
    assert np.allclose(a, pol.mean_action(s), atol=1e-7)


def test_log_prob_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    pol = unit_policy(obs_dim=3, act_dim=2, seed=8, low=[-0.05, -1.0], high=[0.05, 3.0])
    s = rng.normal(size=(7, 3))
    a = pol.center + pol.half * np.tanh(rng.normal(size=(7, 2)))
    coef = rng.normal(size=7)
    _, grads = pol.log_prob_grad(s, a, coef)
    assert_gradients_match(pol.params, lambda: float(coef @ pol.log_prob(s, a)), grads)


def test_reparameterized_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    pol = unit_policy(obs_dim=3, act_dim=2, seed=9, hidden=(6, 5))
    s = rng.normal(size=(6, 3))
    noise = rng.normal(size=(6, 2))
    ca, cl = rng.normal(size=(6, 2)), rng.normal(size=6)

    def loss():
        a, lp = pol.sample_no_grad(s, noise)
        return float(np.sum(ca * a) + cl @ lp)

    pol.sample(s, noise)
    grads = pol.sample_backward(ca, cl)
    assert_gradients_match(pol.params, loss, grads)


def test_critic_action_gradient():
    rng = np.random.default_rng(10)
    critic = TwinCritic(3, 2, (8,), rng, action_low=[-0.05, -0.05], action_high=[0.05, 0.05])
    s = rng.normal(size=(5, 3))
    a = rng.uniform(-0.05, 0.05, size=(5, 2))
    coef = rng.normal(size=5)
    _, ga = critic.q_min_action_grad(s, a, coef)
    assert_gradients_match([a], lambda: float(coef @ critic.q_min(s, a)), [ga])


def test_polyak_examples():
    rng = np.random.default_rng(11)
    critic = TwinCritic(2, 1, (4,), rng)
    for p in critic.params:
        p += 1.0
    t0 = [t.copy() for t in critic.q1_target.params]
    critic.polyak_update(0.0)
    assert all(np.array_equal(a, b) for a, b in zip(t0, critic.q1_target.params))
    critic.polyak_update(0.5)
    critic.polyak_update(0.5)
    for t, t_init, o in zip(critic.q1_target.params, t0, critic.q1.params):
        assert np.allclose(t, 0.25 * t_init + 0.75 * o)
    critic.polyak_update(1.0)
    assert all(np.array_equal(t, o) for t, o in zip(critic.q2_target.params, critic.q2.params))
    with pytest.raises(ValueError):
        critic.polyak_update(1.5)


def test_polyak_error_decays_geometrically():
    critic = TwinCritic(2, 1, (4,), np.random.default_rng(12), tau=0.1)
    for p in critic.params:
        p += 2.0
    err0 = np.abs(critic.q1_target.params[0] - critic.q1.params[0])
    for _ in range(15):
        critic.polyak_update()
    err = np.abs(critic.q1_target.params[0] - critic.q1.params[0])
    assert np.allclose(err, err0 * 0.9 ** 15, rtol=1e-9)


def test_adam_examples():
    p = np.array([1.0, -2.0])
    opt = Adam([p], lr=1e-3)
    opt.step([np.zeros(2)])
    assert np.array_equal(p, [1.0, -2.0])
    opt = Adam([p], lr=1e-3)
    for _ in range(200):
        before = p.copy()
        opt.step([np.array([0.5, -3.0])])
    step = p - before
    assert np.allclose(step, [-1e-3, 1e-3], rtol=1e-3)


def test_adam_converges_on_a_quadratic():
    x = np.array([0.5])
    opt = Adam([x], lr=3e-4)
    for _ in range(5000):
        opt.step([x.copy()])  # gradient of x^2 / 2
    assert abs(x[0]) < 3e-4  # adaptive steps oscillate at roughly the learning-rate scale


def test_adam_decoupled_weight_decay_and_errors():
    p = np.array([2.0])
    opt = Adam([p], lr=0.1, weight_decay=0.5, names=["w"])
    opt.step([np.zeros(1)])
    assert p[0] == pytest.approx(2.0 * (1 - 0.05))
    with pytest.raises(FloatingPointError, match="w"):
        opt.step([np.array([np.nan])])
    with pytest.raises(ValueError):
        opt.step([np.zeros(2)])
    assert opt.t == 1


def test_identical_seeds_give_identical_training():
    def train(seed):
        rng = np.random.default_rng(seed)
        net = DenseNet([3, 8, 1], rng)
        opt = Adam(net.params, 1e-2)
        data = np.random.default_rng(99).normal(size=(32, 3))
        for _ in range(50):
            out = net.forward(data)
            grads, _ = net.backward(out - 1.0)
            opt.step(grads)
        return [p.copy() for p in net.params]

    a, b = train(4), train(4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(13)
    pol = GaussianPolicy(4, 2, (8, 8), rng, dtype=np.float32)
    critic = TwinCritic(4, 2, (8,), rng)
    save_checkpoint(tmp_path / "ck.npz", policy=pol, critic=critic)
    data = load_checkpoint(tmp_path / "ck.npz")
    assert data["policy"]["__sizes__"].tolist() == [4, 8, 8, 4]
    fresh = GaussianPolicy(4, 2, (8, 8), np.random.default_rng(0), dtype=np.float32)
    fresh.load_state_dict(data["policy"])
    for a, b in zip(pol.params, fresh.params):
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    c2 = TwinCritic(4, 2, (8,), np.random.default_rng(1))
    c2.load_state_dict(data["critic"])
    for a, b in zip(critic.q2_target.params, c2.q2_target.params):
        assert a.tobytes() == b.tobytes()
