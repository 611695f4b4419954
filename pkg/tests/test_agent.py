from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icpi import ICPI, train
from icpi.agent import PromptSettings, RolloutStep, RolloutTrace, q_estimate, select_action
from icpi.environments import make
from icpi.exceptions import BackendUnavailable, ConfigurationError
from icpi.models import Backend, OracleBackend
from icpi.replay import ReplayBuffer, Trajectory
from icpi.runlog import discounted_return, normalized_regret
from icpi.textcodec import get_codec
from icpi.validation import greedy_tiebreak

from helpers import random_buffer, tr


class Scripted(Backend):
    """Answers each query kind from a fixed table and records the requests."""

    def __init__(self, answers):
        self.answers = answers
        self.requests = []

    def complete(self, request, rng):
        self.requests.append(request)
        out = self.answers[request.kind]
        return out(request) if callable(out) else out


def _chain():
    env = make("chain")
    return env, get_codec(env)


def _fixed_rewards(rewards):
    """Scripted backend whose rollout produces exactly ``rewards`` then terminates."""
    state = {"u": 0}

    def term(req):
        return "assert done" if state["u"] == len(rewards) - 1 else "assert not done"

    def rew(req):
        r = rewards[state["u"]]
        state["u"] += 1
        return f"assert reward == {r}"

    return Scripted({"termination": term, "reward": rew, "next_state": "assert state == 3", "action": "right()"})


def _full_buffer():
    # every (state, action) appears both terminal and non-terminal
    env, trajs = make("chain"), []
    for s in range(8):
        for a in range(3):
            nxt, r, _ = env.transition(s, a)
            trajs.append(Trajectory([tr(s, a, 0.0, False, nxt), tr(nxt, a, r, True, nxt, step=1)]))
    return ReplayBuffer(trajs)


def test_q_formula_example():
    _, codec = _chain()
    trace, _ = q_estimate("assert state == 2", 1, _full_buffer(), _fixed_rewards([0, 0, 1]), codec,
                          PromptSettings(), np.random.default_rng(0))
    assert trace.rewards == [0.0, 0.0, 1.0]
    assert trace.q_value == pytest.approx(0.64)
    assert trace.steps[-1].done


def test_immediate_termination_with_reward():
    _, codec = _chain()
    trace, _ = q_estimate("assert state == 4", 2, _full_buffer(), _fixed_rewards([1]), codec,
                          PromptSettings(), np.random.default_rng(0))
    assert trace.q_value == 1.0


def test_oracle_q_at_goal():
    env, codec = _chain()
    trace, tokens = q_estimate("assert state == 4\nassert state == 4", 2, _full_buffer(), OracleBackend(env, codec),
                               codec, PromptSettings(), np.random.default_rng(0))
    assert trace.q_value == 1.0
    assert tokens > 0


def test_empty_buffer_gives_empty_trace():
    _, codec = _chain()
    backend = Scripted({})
    trace, tokens = q_estimate("assert state == 2", 0, ReplayBuffer(), backend, codec, PromptSettings(),
                               np.random.default_rng(0))
    assert trace.steps == [] and trace.q_value == 0 and tokens == 0
    assert backend.requests == []


def test_parse_failure_is_terminal_zero():
    _, codec = _chain()
    backend = Scripted({"termination": "assert not done", "reward": "banana"})
    trace, _ = q_estimate("assert state == 2", 0, _full_buffer(), backend, codec, PromptSettings(),
                          np.random.default_rng(0))
    assert [(s.reward, s.done) for s in trace.steps] == [(0.0, True)]


def test_parse_retries_resample():
    _, codec = _chain()
    answers = iter(["banana", "assert reward == 1"])
    backend = Scripted({"termination": "assert done", "reward": lambda r: next(answers)})
    s = PromptSettings(parse_retries=1)
    trace, _ = q_estimate("assert state == 4", 2, _full_buffer(), backend, codec, s, np.random.default_rng(0))
    assert trace.q_value == 1.0


def test_no_match_truncates():
    _, codec = _chain()
    backend = Scripted({"termination": "assert not done", "reward": "assert reward == 0", "next_state": None})
    trace, _ = q_estimate("assert state == 2", 0, _full_buffer(), backend, codec, PromptSettings(),
                          np.random.default_rng(0))
    assert trace.truncated and len(trace.steps) == 1


def test_horizon_caps_rollout():
    _, codec = _chain()
    backend = Scripted({"termination": "assert not done", "reward": "assert reward == 0",
                        "next_state": "assert state == 3", "action": "left()"})
    trace, _ = q_estimate("assert state == 2", 0, _full_buffer(), backend, codec, PromptSettings(),
                          np.random.default_rng(0), horizon=3)
    assert len(trace.steps) == 3


def test_reward_prompt_conditioned_on_predicted_termination():
    _, codec = _chain()
    backend = _fixed_rewards([1])
    q_estimate("assert state == 4", 2, _full_buffer(), backend, codec, PromptSettings(), np.random.default_rng(0))
    reward_req = [r for r in backend.requests if r.kind == "reward"][0]
    assert all("assert done" not in ex for ex in reward_req.prompt.exemplars)
    assert all(ex.splitlines()[-2] == "try_goal()" for ex in reward_req.prompt.exemplars)


def test_ablation_switches_reach_prompts():
    _, codec = _chain()
    buffer = _full_buffer()
    backend = _fixed_rewards([0, 1])
    s = PromptSettings(hints=False, constraints=False)
    q_estimate("assert state == 3", 1, buffer, backend, codec, s, np.random.default_rng(0))
    term = [r for r in backend.requests if r.kind == "termination"][0]
    actions = {ex.splitlines()[1] for ex in term.prompt.exemplars}
    assert len(actions) > 1  # unconstrained: other actions present
    assert all(len(ex.splitlines()) == 3 for ex in term.prompt.exemplars)  # no hint lines


def test_rollout_trace_q_property():
    t = RolloutTrace(0.5, [RolloutStep("s", 0, 1.0, False), RolloutStep("s", 0, 1.0, True)])
    assert t.q_value == 1.5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 1.0]), max_size=8), st.floats(0.01, 0.99))
def test_q_value_matches_formula(rewards, gamma):
    trace = RolloutTrace(gamma, [RolloutStep("s", 0, r, False) for r in rewards])
    expected = sum(gamma ** (k - 1) * r for k, r in enumerate(rewards, start=1))
    assert trace.q_value == expected


def test_select_action_unique_argmax(monkeypatch):
    _, codec = _chain()
    import icpi.agent as agent_mod

    qs = {0: 0.0, 1: 0.64, 2: 0.0}

    def fake(state_text, a, *args, **kw):
        return RolloutTrace(0.8, [RolloutStep(state_text, a, qs[a], True)]), 0

    monkeypatch.setattr(agent_mod, "q_estimate", fake)
    for seed in range(20):
        a, traces, _ = select_action(2, _full_buffer(), None, codec, PromptSettings(), np.random.default_rng(seed))
        assert a == 1
        assert [t.q_value for t in traces] == [0.0, 0.64, 0.0]


def test_select_action_empty_buffer_uniform():
    _, codec = _chain()
    rng = np.random.default_rng(0)
    picks = [select_action(2, ReplayBuffer(), None, codec, PromptSettings(), rng)[0] for _ in range(3000)]
    freq = np.bincount(picks, minlength=3) / 3000
    assert np.all(np.abs(freq - 1 / 3) < 0.05)


def test_select_action_independent_of_n_jobs():
    env, codec = _chain()
    buffer = _full_buffer()
    oracle = OracleBackend(env, codec)
    a1 = select_action(2, buffer, oracle, codec, PromptSettings(), np.random.default_rng(5))
    a4 = select_action(2, buffer, oracle, codec, PromptSettings(), np.random.default_rng(5), n_jobs=3)
    assert a1[0] == a4[0]
    assert [t.rewards for t in a1[1]] == [t.rewards for t in a4[1]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=5), st.floats(0.1, 10), st.integers(0, 1000))
def test_tiebreak_shift_invariant(values, shift, seed):
    values = [round(v, 3) for v in values]
    shifted = [v + shift for v in values]
    best = set(np.flatnonzero(np.array(values) == max(values)))
    best_shifted = set(np.flatnonzero(np.array(shifted) == max(shifted)))
    assert best == best_shifted
    assert greedy_tiebreak(values, np.random.default_rng(seed)) in best


def test_regret():
    assert normalized_regret(0.64, 0.64) == 0
    assert normalized_regret(0.0, 0.64) == 1
    assert normalized_regret(0.32, 0.64) == pytest.approx(0.5)
    assert normalized_regret(0.0, 0.0) == 0
    assert discounted_return([0, 0, 1], 0.8) == pytest.approx(0.64)


# estimator API


def _strip(log):
    return [{k: v for k, v in asdict(r).items() if k != "wall_clock"} for r in log.records]


def test_zero_episodes():
    log = train("chain", n_episodes=0, random_state=0)
    assert len(log) == 0


def test_determinism():
    a = ICPI(n_episodes=8, random_state=3).fit("chain")
    b = ICPI(n_episodes=8, random_state=3).fit("chain")
    assert _strip(a.run_log_) == _strip(b.run_log_)
    assert list(a.buffer_.transitions()) == list(b.buffer_.transitions())


@pytest.mark.parametrize("domain", ["chain", "mini-catch", "point-mass"])
def test_buffer_count_equals_steps(domain):
    agent = ICPI(n_episodes=4, rollout_horizon=3, random_state=0).fit(domain)
    assert agent.buffer_.n_transitions() == sum(r.steps for r in agent.run_log_.records)
    assert agent.run_log_.records[-1].timesteps == agent.buffer_.n_transitions()
    assert len(agent.buffer_) == 4


def test_get_set_params():
    agent = ICPI(recency_cutoff=4)
    params = agent.get_params()
    assert params["recency_cutoff"] == 4 and params["backend"] == "oracle"
    agent.set_params(hints=False)
    assert agent.hints is False


@pytest.mark.parametrize("bad", [dict(gamma=1.0), dict(recency_cutoff=0), dict(rollout_horizon=0),
                                 dict(n_episodes=-1), dict(backend="nope"), dict(temperature=-0.1)])
def test_invalid_params(bad):
    with pytest.raises(ConfigurationError):
        ICPI(**{"n_episodes": 1, **bad}).fit("chain")


def test_predict_requires_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ICPI().predict([2])


def test_predict_after_fit():
    agent = ICPI(n_episodes=30, random_state=0).fit("chain")
    actions = agent.predict([4, 4, 4])
    assert list(actions) == [2, 2, 2]


def test_backend_unavailable_aborts_with_partial_log():
    class Flaky(Backend):
        def __init__(self):
            self.calls = 0

        def complete(self, request, rng):
            self.calls += 1
            if self.calls > 40:
                raise BackendUnavailable("down")
            return OracleBackend(make("chain"), get_codec("chain")).complete(request, rng)

    agent = ICPI(backend=Flaky(), n_episodes=50, random_state=0)
    with pytest.raises(BackendUnavailable):
        agent.fit("chain")
    assert agent.run_log_.aborted
    assert 0 < len(agent.run_log_) < 50


def test_warm_start_continues_numbering():
    buffer = random_buffer("chain", np.random.default_rng(0), 5)
    agent = ICPI(n_episodes=2, random_state=0).fit("chain", buffer=buffer)
    assert [r.episode for r in agent.run_log_.records] == [5, 6]
    assert len(agent.buffer_) == 7


def test_maze_layout_via_env_kwargs():
    kw = dict(width=4, height=2, obstacles=[], start=(0, 0), goal=(3, 1))
    agent = ICPI(n_episodes=1, rollout_horizon=2, env_kwargs=kw, random_state=0).fit("maze")
    assert agent.env_.width == 4
    assert agent.run_log_.records[0].optimal_value == pytest.approx(0.8**3)


def test_tokens_are_counted():
    agent = ICPI(n_episodes=5, random_state=0).fit("chain")
    assert agent.tokens_used_ == sum(r.tokens for r in agent.run_log_.records) > 0


def test_success_only_filters_policy_prompt():
    agent = ICPI(n_episodes=0, success_only=True, random_state=0).fit("chain")
    assert agent.settings_.success_threshold == 1.0
    agent = ICPI(n_episodes=0, random_state=0).fit("chain")
    assert agent.settings_.success_threshold is None
