import numpy as np
import pytest
from gradcheck import directional_check, sac_head_errors, small_agent
from hypothesis import given, settings
from hypothesis import strategies as st

from l2e.nn import Adam, Mlp, backward, geometric_sizes
from l2e.sac import SAC, LearnerConfig, NonFiniteLoss


def test_geometric_sizes_default():
    assert geometric_sizes(256, 64, 4) == [256, 161, 102, 64]
    assert geometric_sizes(32, 32, 1) == [32]


def test_mlp_gradients(rng):
    net = Mlp([4, 8, 8, 3], rng, np.float64)
    x = rng.standard_normal((6, 4))
    up = rng.standard_normal((6, 3))
    grads = backward(net, x, up)
    err = directional_check(lambda: float(np.sum(up * net(x))), net.params, grads, rng)
    assert err < 1e-6
    # input gradient
    _, cache = net.forward(x)
    _, gx = net.backward(cache, up, inputs=True)
    assert net.backward(cache, up)[1] is None
    h = 1e-6
    v = rng.standard_normal(x.shape)
    num = (np.sum(up * net(x + h * v)) - np.sum(up * net(x - h * v))) / (2 * h)
    assert abs(num - np.sum(gx * v)) < 1e-6 * max(1.0, abs(num))


def test_backward_shape_check(rng):
    net = Mlp([3, 4, 2], rng)
    with pytest.raises(ValueError):
        backward(net, np.zeros((5, 3)), np.zeros((5, 3)))


def test_flat_roundtrip_and_polyak(rng):
    a = Mlp([3, 5, 2], rng)
    b = Mlp([3, 5, 2], rng)
    vec = b.flat()
    a2 = a.copy()
    a2.set_flat(vec)
    np.testing.assert_array_equal(a2.flat(), vec)
    c = a.copy()
    c.polyak_from(b, 0.25)
    np.testing.assert_allclose(c.flat(), 0.75 * a.flat() + 0.25 * b.flat())
    with pytest.raises(ValueError):
        a.set_flat(vec[:-1])


def test_adam_minimizes_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.step([2 * x])
    assert np.all(np.abs(x) < 1e-2)


@pytest.mark.parametrize("seed", range(10))
def test_sac_loss_heads_match_finite_differences(seed):
    errs = sac_head_errors(seed)
    assert max(errs.values()) < 1e-4, errs


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_actions_within_bound(seed, scale):
    agent = small_agent(seed % 100)
    rng = np.random.default_rng(seed)
    obs = scale * rng.standard_normal((16, agent.obs_dim))
    for det in (True, False):
        a = agent.act(obs, deterministic=det, rng=rng)
        assert np.all(np.abs(a) <= agent.action_bound)


def test_logp_matches_density_of_squashed_gaussian(rng):
    agent = small_agent(0, action_dim=1)
    obs = rng.standard_normal((1, agent.obs_dim))
    eps = rng.standard_normal((1, 1))
    pol = agent.policy(obs, eps)
    mu, std, t = pol["mu"][0, 0], pol["std"][0, 0], pol["t"][0, 0]
    u = np.arctanh(t)
    gauss = np.exp(-0.5 * ((u - mu) / std) ** 2) / (std * np.sqrt(2 * np.pi))
    assert pol["logp"][0] == pytest.approx(np.log(gauss / (1 - t * t)), rel=1e-8)


def test_update_moves_targets_by_polyak(rng):
    agent = small_agent(1)
    before_t = agent.q1_target.flat().copy()
    batch = {"obs": rng.standard_normal((8, 5)), "obs2": rng.standard_normal((8, 5)),
             "a": rng.uniform(-0.1, 0.1, (8, 2)), "r": rng.random(8), "terminal": np.zeros(8)}
    losses = agent.update(batch)
    assert set(losses) == {"critic1", "critic2", "actor", "temperature", "alpha"}
    tau = agent.config.polyak
    np.testing.assert_allclose(agent.q1_target.flat(),
                               (1 - tau) * before_t + tau * agent.q1.flat(), rtol=1e-12)


def test_terminal_blocks_bootstrap(rng):
    agent = small_agent(2)
    batch = {"obs2": rng.standard_normal((4, 5)), "r": np.array([1.0, 0.5, 0.0, 2.0]),
             "terminal": np.ones(4)}
    y = agent.critic_target(batch, rng.standard_normal((4, 2)))
    np.testing.assert_allclose(y, batch["r"])


def test_temperature_moves_toward_target(rng):
    agent = small_agent(3)
    high = np.full(32, 5.0)  # log-prob above -target: entropy too low, alpha should rise
    _, g = agent.temperature_loss(high)
    assert g[0] < 0


def test_nonfinite_loss_raises(rng):
    agent = small_agent(4)
    batch = {"obs": rng.standard_normal((8, 5)), "obs2": rng.standard_normal((8, 5)),
             "a": rng.uniform(-0.1, 0.1, (8, 2)), "r": np.full(8, np.nan),
             "terminal": np.zeros(8)}
    with pytest.raises(NonFiniteLoss) as info:
        agent.update(batch)
    assert info.value.name == "critic1"


def test_seeded_agents_identical(rng):
    batch = {"obs": rng.standard_normal((8, 5)), "obs2": rng.standard_normal((8, 5)),
             "a": rng.uniform(-0.1, 0.1, (8, 2)), "r": rng.random(8), "terminal": np.zeros(8)}
    a, b = small_agent(9), small_agent(9)
    for _ in range(3):
        la, lb = a.update(batch), b.update(batch)
    assert la == lb
    np.testing.assert_array_equal(a.actor.flat(), b.actor.flat())


def test_save_load(tmp_path, rng):
    agent = small_agent(5)
    path = tmp_path / "agent.npz"
    agent.save(path)
    cfg = LearnerConfig(dtype="float64")
    back = SAC.load(path, cfg)
    obs = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(back.act(obs, True), agent.act(obs, True))
    other = SAC(5, 2, 0.1, LearnerConfig(hidden=(8,), dtype="float64"))
    with np.load(path) as data, pytest.raises(ValueError):
        other.load_arrays(data)


def test_fixed_alpha_not_learned(rng):
    agent = small_agent(6, alpha=0.2)
    batch = {"obs": rng.standard_normal((8, 5)), "obs2": rng.standard_normal((8, 5)),
             "a": rng.uniform(-0.1, 0.1, (8, 2)), "r": rng.random(8), "terminal": np.zeros(8)}
    agent.update(batch)
    assert agent.alpha == 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(polyak=0.0)
    with pytest.raises(ValueError):
        LearnerConfig(gamma=1.0)
