"""Comparison agents: tabular Q-learning, imitation without argmax, nearest-neighbour modelling."""
from __future__ import annotations

import numpy as np

from .agent import ICPI, EpisodicAgent
from .exceptions import ConfigurationError, ParseFailure
from .models import Backend, CompletionRequest, resolve_backend, stop_sequences
from .replay import Transition, sample_policy_prompt
from .textcodec import DEFAULT_TOKEN_BUDGET, build_prompt
from .validation import check_int, greedy_tiebreak

# minimum undiscounted return of a "successful" trajectory
SUCCESS_THRESHOLDS = {
    "chain": 1.0,
    "distractor-chain": 1.0,
    "maze": 1.0,
    "mini-catch": 1.0,
    "mini-invaders": 2.0,
    "point-mass": 1.0,
}


class TabularQ(EpisodicAgent):
    """Q-learning over observed states with optimistic initial values and greedy action choice.

    Unvisited pairs read as ``initial_value``; optimism alone drives
    exploration, and ties are broken uniformly at random.
    """

    def __init__(
        self,
        n_episodes=500,
        gamma=0.8,
        learning_rate=1.0,
        initial_value=1.0,
        env_kwargs=None,
        random_state=None,
    ):
        self.n_episodes = n_episodes
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.initial_value = initial_value
        self.env_kwargs = env_kwargs
        self.random_state = random_state

    def _setup(self):
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError("learning_rate must lie in (0, 1]")
        self.q_ = {}

    def q_value(self, obs, action: int) -> float:
        return self.q_.get((obs, int(action)), self.initial_value)

    def q_values(self, obs) -> np.ndarray:
        return np.array([self.q_value(obs, a) for a in range(self.env_.n_actions)])

    def _act(self, obs) -> int:
        return greedy_tiebreak(self.q_values(obs), self._rng)

    def _observe(self, tr: Transition):
        target = tr.reward
        if not tr.done:
            target += self.gamma * self.q_values(tr.next_obs).max()
        alpha = self.learning_rate
        self.q_[(tr.obs, tr.action)] = (1 - alpha) * self.q_value(tr.obs, tr.action) + alpha * target


class NoArgMax(EpisodicAgent):
    """Imitate successful trajectories without any rollouts.

    Acts uniformly at random until ``n_explore_successes`` trajectories reach
    the success threshold, then asks the backend for an action given slices of
    the most recent successful trajectories only.
    """

    def __init__(
        self,
        backend="oracle",
        n_episodes=100,
        gamma=0.8,
        success_threshold=None,
        n_explore_successes=3,
        recency_cutoff=8,
        hints=True,
        max_pool=32,
        token_budget=DEFAULT_TOKEN_BUDGET,
        tokenizer=None,
        temperature=0.1,
        max_new_tokens=64,
        env_kwargs=None,
        random_state=None,
    ):
        self.backend = backend
        self.n_episodes = n_episodes
        self.gamma = gamma
        self.success_threshold = success_threshold
        self.n_explore_successes = n_explore_successes
        self.recency_cutoff = recency_cutoff
        self.hints = hints
        self.max_pool = max_pool
        self.token_budget = token_budget
        self.tokenizer = tokenizer
        self.temperature = temperature
        self.max_new_tokens = max_new_tokens
        self.env_kwargs = env_kwargs
        self.random_state = random_state

    def _setup(self):
        check_int(self.recency_cutoff, "recency_cutoff")
        check_int(self.n_explore_successes, "n_explore_successes", minimum=0)
        threshold = self.success_threshold
        if threshold is None:
            threshold = SUCCESS_THRESHOLDS[self.env_.name]
        if threshold <= 0:
            raise ConfigurationError("success_threshold must be positive")
        self.threshold_ = float(threshold)
        self.backend_: Backend = resolve_backend(
            self.backend, self.env_, self.codec_, self.buffer_, self.token_budget
        )
        self.last_prompt_slices_ = []

    def n_successes(self) -> int:
        return sum(t.undiscounted_return >= self.threshold_ for t in self.buffer_.trajectories)

    def _act(self, obs) -> int:
        n = self.env_.n_actions
        self.last_prompt_slices_ = []
        if self.n_successes() < self.n_explore_successes:
            return int(self._rng.integers(n))
        slices = sample_policy_prompt(
            self.buffer_, self.recency_cutoff, self._rng, self.threshold_, self.max_pool
        )
        state_text = "\n".join(self.codec_.encode_state(obs, self.hints))
        prompt = build_prompt(
            self.codec_, "action", slices, state_text, None, self.hints, self.token_budget, self.tokenizer
        )
        self.last_prompt_slices_ = slices
        self.tokens_used_ += prompt.n_tokens()
        request = CompletionRequest(
            prompt, "action", state_text, None, self.max_new_tokens, self.temperature, stop_sequences("action")
        )
        text = self.backend_.complete(request, self._rng)
        try:
            if text is None:
                raise ParseFailure("no answer")
            return self.codec_.parse_action(text)
        except ParseFailure:
            return int(self._rng.integers(n))


class NearestNeighbor(ICPI):
    """ICPI with the matching model in place of a sequence model.

    Every query replays the most recent exact match from the buffer; a miss ends
    the simulated rollout, so unseen states fall back to random tie-breaking.
    """

    def __init__(
        self,
        n_episodes=100,
        gamma=0.8,
        recency_cutoff=8,
        rollout_horizon=8,
        hints=True,
        balance=True,
        constraints=True,
        max_pool=32,
        env_kwargs=None,
        random_state=None,
    ):
        super().__init__(
            backend="matching",
            n_episodes=n_episodes,
            gamma=gamma,
            recency_cutoff=recency_cutoff,
            rollout_horizon=rollout_horizon,
            hints=hints,
            balance=balance,
            constraints=constraints,
            max_pool=max_pool,
            env_kwargs=env_kwargs,
            random_state=random_state,
        )
