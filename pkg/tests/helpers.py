import numpy as np

from icpi.environments import make
from icpi.replay import ReplayBuffer, Trajectory, Transition

DOMAINS = ["chain", "distractor-chain", "maze", "mini-catch", "mini-invaders", "point-mass"]


def random_trajectory(env, rng, episode=0, policy=None):
    obs = env.reset(rng)
    transitions = []
    done = False
    while not done:
        a = int(rng.integers(env.n_actions)) if policy is None else policy(obs)
        res = env.step(a)
        transitions.append(Transition(obs, a, res.reward, res.done, res.next_state, episode, len(transitions)))
        obs, done = res.next_state, res.done
    return Trajectory(transitions)


def random_buffer(env_id, rng, n_episodes):
    env = make(env_id)
    return ReplayBuffer([random_trajectory(env, rng, i) for i in range(n_episodes)])


def tr(obs, action, reward=0.0, done=False, next_obs=None, episode=0, step=0):
    return Transition(obs, action, reward, done, obs if next_obs is None else next_obs, episode, step)


GOLDEN_KINDS = ("termination", "reward", "next_state", "action")


def golden_prompts(env_id):
    """Prompts assembled from a fixed-seed buffer; frozen under tests/golden."""
    from icpi.replay import (
        sample_obs_prompt,
        sample_policy_prompt,
        sample_reward_prompt,
        sample_termination_prompt,
    )
    from icpi.textcodec import build_prompt, get_codec

    rng = np.random.default_rng(1234)
    buffer = random_buffer(env_id, rng, 6)
    codec = get_codec(env_id)
    obs = buffer.trajectories[-1].transitions[0].obs
    state_text = "\n".join(codec.encode_state(obs))
    out = {}
    for kind in GOLDEN_KINDS:
        if kind == "termination":
            ex = sample_termination_prompt(buffer, 0, rng, max_pool=6)
        elif kind == "reward":
            ex = sample_reward_prompt(buffer, 0, False, rng, max_pool=6)
        elif kind == "next_state":
            ex = sample_obs_prompt(buffer, 0, rng, max_pool=6)
        else:
            ex = sample_policy_prompt(buffer, 4, rng, n_slices=4)
        out[kind] = build_prompt(codec, kind, ex, state_text, None if kind == "action" else 0).render()
    return out
