import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2e.envs import EnvConfig, MazeEnv, PushingEnv
from l2e.planners import Plan, manhattan_plan
from l2e.shaping import (ShapingConfig, distance, fv_shaping, fv_shaping_batch, nearest_index,
                         plan_reward, plan_reward_batch)

CFG = ShapingConfig()


def reference_shaping(s, s2, waypoints, goal, sigma=0.5, tol=0.1, pos=(0, 1, 2, 3, 4, 5),
                      ach=(3, 4)):
    """Direct transcription, one waypoint at a time, first minimum wins."""
    best_k, best_d2 = None, None
    for k, w in enumerate(waypoints):
        d2 = np.float64(0.0)
        for j, i in enumerate(pos):
            diff = np.float64(s[i]) - np.float64(w[j])
            d2 = d2 + diff * diff
        if best_d2 is None or d2 < best_d2:
            best_k, best_d2 = k, d2
    gx = np.float64(s2[ach[0]]) - np.float64(goal[0])
    gy = np.float64(s2[ach[1]]) - np.float64(goal[1])
    rg = 1.0 if np.hypot(gx, gy) <= tol else 0.0
    L = len(waypoints)
    return rg, ((1.0 - rg) / 2.0) * ((best_k + 1) / L) * np.exp(-best_d2 / (2.0 * (sigma * sigma)))


def random_push_plan(rng):
    env = PushingEnv(seed=int(rng.integers(1 << 30)))
    s, g, _ = env.reset()
    return s, manhattan_plan(s, g, env.config)


def test_matches_reference_bitwise(rng):
    for _ in range(200):
        s0, plan = random_push_plan(rng)
        s = s0 + rng.normal(0, 0.5, 7)
        s2 = s + rng.normal(0, 0.05, 7)
        rg, f = reference_shaping(s, s2, plan.waypoints, plan.goal)
        assert fv_shaping(s, None, s2, plan, CFG) == f
        assert plan_reward(s, None, s2, plan, CFG) == rg + f


def test_scalar_and_batch_agree(rng):
    _, plan = random_push_plan(rng)
    S = rng.normal(0, 1, (64, 7))
    S2 = S + rng.normal(0, 0.05, (64, 7))
    batch = fv_shaping_batch(S, S2, plan, CFG)
    single = np.array([fv_shaping(a, None, b, plan, CFG) for a, b in zip(S, S2)])
    np.testing.assert_array_equal(batch, single)


@settings(max_examples=200, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_orientation_invariant(y1, y2):
    rng = np.random.default_rng(0)
    s0, plan = random_push_plan(rng)
    s = s0.copy()
    s2 = s0.copy()
    a, b = s.copy(), s.copy()
    a[6], b[6] = y1, y2
    assert fv_shaping(a, None, s2, plan, CFG) == fv_shaping(b, None, s2, plan, CFG)


def test_zero_when_goal_reached(rng):
    for _ in range(100):
        s0, plan = random_push_plan(rng)
        s2 = s0.copy()
        s2[3:5] = plan.goal + rng.uniform(-0.07, 0.07, 2)
        assert fv_shaping(s0, None, s2, plan, CFG) == 0.0
        assert plan_reward(s0, None, s2, plan, CFG) == 1.0


def test_range_and_value_at_final_waypoint(rng):
    s0, plan = random_push_plan(rng)
    S = rng.normal(0, 1, (500, 7))
    f = fv_shaping_batch(S, S, plan, CFG)
    assert np.all((f >= 0) & (f <= 0.5))
    # sitting on the last waypoint (not at the goal): maximal shaping 1/2
    w = plan.waypoints[-1]
    s = np.concatenate([w, [0.0]])
    far = s.copy()
    far[3:5] = plan.goal + 1.0
    assert fv_shaping(s, None, far, plan, CFG) == pytest.approx(0.5)


def test_monotone_in_k_and_distance():
    wp = np.array([[float(i), 0.0] for i in range(10)])
    plan = Plan(wp, np.array([100.0, 100.0]))
    cfg = ShapingConfig(position_index=(0, 1), achieved_index=(0, 1))
    vals_k = [fv_shaping(np.array([i, 0.3]), None, np.array([i, 0.3]), plan, cfg) for i in range(10)]
    assert all(a < b for a, b in zip(vals_k, vals_k[1:]))
    vals_d = [fv_shaping(np.array([4.0, d]), None, np.array([4.0, d]), plan, cfg)
              for d in (0.0, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(vals_d, vals_d[1:]))


def test_ties_take_lowest_index():
    wp = np.array([[0.0, 1.0], [0.0, -1.0]])
    plan = Plan(wp, np.array([5.0, 5.0]))
    cfg = ShapingConfig(position_index=(0, 1), achieved_index=(0, 1))
    assert nearest_index(np.zeros(2), plan, cfg) == 0


def test_distance_ignores_yaw():
    a = np.array([0, 0, 0, 1, 1, 0, 3.0])
    w = np.array([0, 0, 0, 1, 1, 0])
    assert distance(a, w) == 0.0


def test_maze_config_from_env():
    cfg = ShapingConfig.for_env(MazeEnv())
    assert cfg.position_index == (0, 1) and cfg.achieved_index == (0, 1)
    with pytest.raises(ValueError):
        ShapingConfig(sigma=0.0)


def test_waypoint_dim_mismatch():
    plan = Plan(np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        fv_shaping(np.zeros(7), None, np.zeros(7), plan, CFG)


def test_plan_reward_batch_is_sum(rng):
    _, plan = random_push_plan(rng)
    S = rng.normal(0, 1, (20, 7))
    r = plan_reward_batch(S, S, plan, CFG)
    f = fv_shaping_batch(S, S, plan, CFG)
    assert np.all((r == f) | (r == 1.0))


def test_sigma_scales_width():
    cfg_small = ShapingConfig(sigma=0.1, position_index=(0, 1), achieved_index=(0, 1))
    cfg_big = ShapingConfig(sigma=1.0, position_index=(0, 1), achieved_index=(0, 1))
    plan = Plan(np.zeros((2, 2)), np.array([9.0, 9.0]))
    s = np.array([0.3, 0.0])
    assert fv_shaping(s, None, s, plan, cfg_small) < fv_shaping(s, None, s, plan, cfg_big)


def test_env_config_default_tolerance():
    assert CFG.goal_tolerance == EnvConfig().goal_tolerance
