import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icpi.environments import (
    C,
    CatchState,
    InvadersState,
    PointMassState,
    action_space,
    make,
    optimal_value,
)
from icpi.exceptions import ConfigurationError, EpisodeFinishedError

from helpers import DOMAINS, random_trajectory


def brute_force_value(env, state, gamma, steps=8):
    """Best discounted return over every action sequence of length ``steps``."""
    best = 0.0
    for seq in itertools.product(range(env.n_actions), repeat=steps):
        s, g = state, 0.0
        for k, a in enumerate(seq):
            s, r, done = env.transition(s, a, None)
            g += gamma**k * r
            if done:
                break
        best = max(best, g)
    return best


def test_action_spaces():
    assert [n for _, n in action_space("chain")] == ["left", "right", "try_goal"]
    assert [n for _, n in action_space("maze")] == ["up", "down", "left", "right"]
    assert [n for _, n in action_space("point-mass")] == ["accel", "decel"]
    assert [len(action_space(d)) for d in DOMAINS] == [3, 3, 4, 3, 3, 2]


def test_unknown_domain():
    with pytest.raises(ConfigurationError):
        make("pong")


def test_point_mass_reset():
    env = make("point-mass")
    for seed in range(50):
        obs = env.reset(np.random.default_rng(seed))
        assert -6 <= env.state.pos <= 6
        assert obs.vel == 0.0
        assert obs.pos == round(env.state.pos, 2)


def test_mini_invaders_reset():
    env = make("mini-invaders")
    for seed in range(50):
        ship, aliens = env.reset(np.random.default_rng(seed))
        assert len(aliens) == 2
        cols = {a.x for a in aliens}
        assert len(cols) == 2 and cols <= {0, 1, 2, 3}
        assert ship.y == 0


def test_reset_deterministic():
    a = make("chain").reset(np.random.default_rng(7))
    b = make("chain").reset(np.random.default_rng(7))
    assert a == b


def test_chain_try_goal():
    env = make("chain")
    assert env.transition(4, 2) == (4, 1.0, True)
    assert env.transition(2, 2) == (2, 0.0, True)


def test_chain_clamps():
    env = make("chain")
    assert env.transition(0, 0)[0] == 0
    assert env.transition(7, 1)[0] == 7


def test_mini_catch_landing_any_action():
    env = make("mini-catch")
    state = CatchState(C(2, 0), C(2, 1))
    for a in range(3):
        nxt, r, done = env.transition(state, a)
        assert done and r == 1.0
    nxt, r, done = env.transition(CatchState(C(1, 0), C(2, 1)), 2)
    assert done and r == 0.0


def test_mini_catch_episode_length():
    env = make("mini-catch")
    traj = random_trajectory(env, np.random.default_rng(0))
    assert len(traj) == 5


def test_mini_invaders_shoot():
    env = make("mini-invaders")
    s = InvadersState(C(1, 0), (C(1, 3), C(3, 3)))
    nxt, r, done = env.transition(s, 2)
    assert r == 1.0 and not done
    assert nxt.aliens == (None, C(3, 2))
    # shooting an empty column does nothing
    nxt2, r2, _ = env.transition(nxt, 2)
    assert r2 == 0.0 and nxt2.aliens == (None, C(3, 1))


def test_mini_invaders_both_shot_ends():
    env = make("mini-invaders")
    nxt, r, done = env.transition(InvadersState(C(3, 0), (None, C(3, 2))), 2)
    assert (r, done) == (1.0, True)


def test_mini_invaders_landing_ends_without_reward():
    env = make("mini-invaders")
    _, r, done = env.transition(InvadersState(C(0, 0), (C(2, 1), C(3, 3))), 1)
    assert (r, done) == (0.0, True)


def test_point_mass_no_success_at_reset_origin():
    env = make("point-mass")
    start = PointMassState(0.0, 0.0)
    # every first action makes the velocity non-zero
    for a in range(2):
        _, r, done = env.transition(start, a)
        assert (r, done) == (0.0, False)
    # oracle: all 2^8 sequences; best is accel/decel (or the mirror) succeeding at step 2
    assert brute_force_value(env, start, 0.8) == pytest.approx(0.8)
    assert env.optimal_value(start, 0.8) == pytest.approx(0.8)


def test_point_mass_observation_rounds():
    env = make("point-mass")
    obs = env.observe(PointMassState(1.23456, -0.0))
    assert obs == (1.23, 0.0)
    assert str(obs.vel) == "0.0"


def test_stepping_terminal_raises():
    env = make("chain")
    env.reset(np.random.default_rng(0))
    env.step(2)
    with pytest.raises(EpisodeFinishedError):
        env.step(0)


@pytest.mark.parametrize("domain", DOMAINS)
def test_episodes_end_within_eight_steps(domain):
    env = make(domain)
    rng = np.random.default_rng(1)
    for _ in range(100):
        traj = random_trajectory(env, rng)
        assert len(traj) <= 8
        assert all(t.reward in (0.0, 1.0) for t in traj)


def test_mini_invaders_total_return():
    env = make("mini-invaders")
    rng = np.random.default_rng(2)
    totals = {random_trajectory(env, rng).undiscounted_return for _ in range(300)}
    assert totals <= {0.0, 1.0, 2.0}


@pytest.mark.parametrize("domain", DOMAINS)
def test_determinism(domain):
    def run():
        env = make(domain)
        rng = np.random.default_rng(3)
        return [(t.obs, t.action, t.reward, t.done) for t in random_trajectory(env, rng).transitions]

    assert run() == run()


def test_distractor_marginal_is_chain():
    chain, dchain = make("chain"), make("distractor-chain")
    rng = np.random.default_rng(0)
    for s in range(8):
        for a in range(3):
            (pos, d), r, done = dchain.transition((s, 5), a, rng)
            assert (pos, r, done) == chain.transition(s, a)
            assert 0 <= d < 8


def test_optimal_values_chain():
    assert optimal_value("chain", 4, 0.8) == 1.0
    env = make("chain")
    assert brute_force_value(env, 2, 0.8) == pytest.approx(0.64)
    assert optimal_value("chain", 2, 0.8) == pytest.approx(0.64)


def test_optimal_values_maze():
    env = make("maze")
    # one move from the goal: reward arrives on the first step
    assert brute_force_value(env, C(2, 1), 0.8) == pytest.approx(1.0)
    assert env.optimal_value(C(2, 1), 0.8) == pytest.approx(1.0)
    # two moves away
    assert brute_force_value(env, C(2, 0), 0.8) == pytest.approx(0.8)
    assert env.optimal_value(C(2, 0), 0.8) == pytest.approx(0.8)
    assert env.optimal_value(env.start, 0.8) == pytest.approx(0.8**3)


def test_maze_obstacle_and_walls_are_noops():
    env = make("maze")
    assert env.transition(C(1, 0), 0) == (C(1, 0), 0.0, False)  # up into (1, 1)
    assert env.transition(C(0, 0), 2) == (C(0, 0), 0.0, False)


def test_maze_layout_validation():
    with pytest.raises(ConfigurationError):
        make("maze", obstacles=[(2, 2)])
    env = make("maze", width=4, height=2, obstacles=[], start=(0, 0), goal=(3, 1))
    assert env.optimal_value(env.start, 0.8) == pytest.approx(0.8**3)


def test_optimal_value_rejects_bad_gamma():
    with pytest.raises(ConfigurationError):
        optimal_value("chain", 2, 1.0)


@pytest.mark.parametrize("domain", DOMAINS)
def test_optimal_value_bounds_random_rollouts(domain):
    env = make(domain)
    rng = np.random.default_rng(4)
    for _ in range(30):
        env.reset(rng)
        start = env.state
        v = env.optimal_value(start, 0.8)
        assert v > 0
        g, k, done = 0.0, 0, False
        while not done:
            res = env.step(int(rng.integers(env.n_actions)))
            g += 0.8**k * res.reward
            k += 1
            done = res.done
        assert g <= v + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-6, 6, allow_nan=False), st.lists(st.integers(0, 1), min_size=1, max_size=8))
def test_point_mass_dynamics_order(pos, actions):
    env = make("point-mass")
    s = PointMassState(pos, 0.0)
    for a in actions:
        nxt, r, done = env.transition(s, a)
        assert nxt.vel == s.vel + (1 if a == 0 else -1)
        assert nxt.pos == s.pos + nxt.vel
        assert done == (-2 <= nxt.pos <= 2 and nxt.vel == 0)
        if done:
            break
        s = nxt


def test_reset_from_state():
    env = make("maze")
    assert env.reset(state=C(2, 1)) == C(2, 1)
    res = env.step(0)
    assert (res.next_state, res.reward, res.done) == (C(2, 2), 1.0, True)
    with pytest.raises(ValueError):
        env.reset(state=C(1, 1))
    with pytest.raises(ValueError):
        env.reset()
