"""In-context policy iteration.

:func:`q_estimate` simulates one trajectory with the sequence model standing in
for both world model and rollout policy; :func:`select_action` acts greedily on
those estimates; :class:`ICPI` wraps the training loop as an estimator.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .environments import Environment
from .exceptions import BackendUnavailable, ConfigurationError, ParseFailure
from .models import (
    Backend,
    CompletionRequest,
    resolve_backend,
    stop_sequences,
)
from .replay import (
    ReplayBuffer,
    Trajectory,
    Transition,
    sample_obs_prompt,
    sample_policy_prompt,
    sample_reward_prompt,
    sample_termination_prompt,
)
from .runlog import EpisodeRecord, RunLog, discounted_return, normalized_regret
from .textcodec import (
    DEFAULT_TOKEN_BUDGET,
    Codec,
    build_prompt,
    get_codec,
    parse_reward,
    parse_termination,
)
from .validation import check_environment, check_gamma, check_int, check_random_state, greedy_tiebreak


@dataclass
class PromptSettings:
    hints: bool = True
    balance: bool = True
    constraints: bool = True
    recency_cutoff: int = 8
    success_threshold: Optional[float] = None
    max_pool: int = 32
    token_budget: int = DEFAULT_TOKEN_BUDGET
    tokenizer: Optional[Callable[[str], int]] = None
    temperature: float = 0.1
    max_new_tokens: int = 64
    parse_retries: int = 0


@dataclass
class RolloutStep:
    state_text: str
    action: int
    reward: float
    done: bool


@dataclass
class RolloutTrace:
    gamma: float
    steps: list = field(default_factory=list)
    truncated: bool = False  # ended by a missing prompt or model answer, not by termination

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def q_value(self) -> float:
        return discounted_return(self.rewards, self.gamma)


class _NoAnswer(Exception):
    pass


@dataclass
class _Context:
    buffer: ReplayBuffer
    backend: Backend
    codec: Codec
    settings: PromptSettings
    rng: np.random.Generator
    tokens: int = 0

    def ask(self, kind, exemplars, state_text, action, parse):
        """Prompt the backend; returns the parsed value.

        Raises ``_NoAnswer`` for an empty prompt or a backend with nothing to
        say, ``ParseFailure`` once the retries are spent.
        """
        if not exemplars:
            raise _NoAnswer(kind)
        s = self.settings
        prompt = build_prompt(
            self.codec, kind, exemplars, state_text, action, s.hints, s.token_budget, s.tokenizer
        )
        request = CompletionRequest(
            prompt, kind, state_text, action, s.max_new_tokens, s.temperature, stop_sequences(kind)
        )
        for _ in range(s.parse_retries + 1):
            self.tokens += prompt.n_tokens()
            text = self.backend.complete(request, self.rng)
            if text is None:
                raise _NoAnswer(kind)
            try:
                return parse(text)
            except ParseFailure:
                continue
        raise ParseFailure(kind)


def q_estimate(
    state_text: str,
    action: int,
    buffer: ReplayBuffer,
    backend: Backend,
    codec: Codec,
    settings: PromptSettings,
    rng: np.random.Generator,
    gamma: float = 0.8,
    horizon: int = 8,
) -> tuple[RolloutTrace, int]:
    """Monte-Carlo estimate of Q(state, action) from one simulated rollout.

    Each simulated step predicts termination, then reward given that
    termination, then the next state, then the next action from recent
    trajectories. An unparseable termination or reward ends the rollout as a
    zero-reward terminal step; an empty prompt or an unanswerable query ends it
    without one. Returns the trace and the number of prompt tokens spent.
    """
    trace = RolloutTrace(gamma)
    ctx = _Context(buffer, backend, codec, settings, rng)
    if len(buffer) == 0:
        return trace, 0
    s = settings
    a = int(action)
    for u in range(horizon):
        try:
            pool = sample_termination_prompt(buffer, a, rng, s.balance, s.constraints, s.max_pool)
            done = ctx.ask("termination", pool, state_text, a, parse_termination)
            pool = sample_reward_prompt(buffer, a, done, rng, s.balance, s.constraints, s.max_pool)
            reward = ctx.ask("reward", pool, state_text, a, parse_reward)
        except ParseFailure:
            trace.steps.append(RolloutStep(state_text, a, 0.0, True))
            break
        except _NoAnswer:
            trace.truncated = True
            break
        trace.steps.append(RolloutStep(state_text, a, float(reward), bool(done)))
        if done or u == horizon - 1:
            break
        try:
            pool = sample_obs_prompt(buffer, a, rng, s.constraints, s.max_pool)
            state_text = ctx.ask("next_state", pool, state_text, a, codec.state_text)
            slices = sample_policy_prompt(buffer, s.recency_cutoff, rng, s.success_threshold, s.max_pool)
            a = ctx.ask("action", slices, state_text, None, codec.parse_action)
        except (ParseFailure, _NoAnswer):
            trace.truncated = True
            break
    return trace, ctx.tokens


def select_action(
    obs,
    buffer: ReplayBuffer,
    backend: Backend,
    codec: Codec,
    settings: PromptSettings,
    rng: np.random.Generator,
    gamma: float = 0.8,
    horizon: int = 8,
    n_jobs: int = 1,
) -> tuple[int, list[RolloutTrace], int]:
    """Greedy action over per-action rollout estimates, ties broken uniformly.

    Each candidate gets its own child generator, so results do not depend on
    ``n_jobs``.
    """
    state_text = "\n".join(codec.encode_state(obs, settings.hints))
    n = len(codec.action_texts)
    child_rngs = rng.spawn(n)

    def run(a):
        return q_estimate(state_text, a, buffer, backend, codec, settings, child_rngs[a], gamma, horizon)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(a) for a in range(n)]
    traces = [t for t, _ in results]
    tokens = sum(k for _, k in results)
    return greedy_tiebreak([t.q_value for t in traces], rng), traces, tokens


class EpisodicAgent(BaseEstimator):
    """Shared training loop: ``fit`` runs episodes, ``predict`` maps observations to actions.

    Subclasses implement ``_act`` and may hook ``_observe`` (after each real
    step) and ``_setup`` (before the first episode).
    """

    def fit(self, X, y=None, buffer: Optional[ReplayBuffer] = None):
        """Train on environment ``X`` (a domain name or :class:`Environment`).

        ``buffer`` warm-starts from earlier experience; episode numbering
        continues after it.
        """
        self._validate_params_common()
        env = check_environment(X, getattr(self, "env_kwargs", None))
        self.env_ = env
        self.codec_ = get_codec(env)
        env_rng, self._rng = check_random_state(self.random_state).spawn(2)
        self.buffer_ = buffer if buffer is not None else ReplayBuffer()
        self.run_log_ = RunLog()
        self.tokens_used_ = 0
        self._setup()
        for tr in self.buffer_.transitions():
            self._observe(tr)
        try:
            self._run(env, env_rng)
        except BackendUnavailable:
            self.run_log_.aborted = True
            raise
        return self

    def _validate_params_common(self):
        check_gamma(self.gamma)
        check_int(self.n_episodes, "n_episodes", minimum=0)

    def _setup(self):
        pass

    def _observe(self, transition: Transition):
        pass

    def _act(self, obs) -> int:
        raise NotImplementedError

    def _run(self, env: Environment, env_rng: np.random.Generator):
        first = len(self.buffer_)
        timesteps = self.buffer_.n_transitions()
        for ep in range(first, first + self.n_episodes):
            t0 = time.perf_counter()
            tokens0 = self.tokens_used_
            obs = env.reset(env_rng)
            v_star = env.optimal_value(env.state, self.gamma)
            transitions = []
            done = False
            while not done:
                a = self._act(obs)
                res = env.step(a)
                tr = Transition(obs, a, res.reward, res.done, res.next_state, ep, len(transitions))
                self._observe(tr)
                transitions.append(tr)
                obs, done = res.next_state, res.done
            self.buffer_.append(Trajectory(transitions))
            timesteps += len(transitions)
            rewards = [t.reward for t in transitions]
            g = discounted_return(rewards, self.gamma)
            self.run_log_.append(
                EpisodeRecord(
                    episode=ep,
                    steps=len(transitions),
                    timesteps=timesteps,
                    undiscounted_return=float(sum(rewards)),
                    discounted_return=g,
                    optimal_value=v_star,
                    normalized_regret=normalized_regret(g, v_star),
                    wall_clock=time.perf_counter() - t0,
                    tokens=self.tokens_used_ - tokens0,
                )
            )

    def predict(self, X) -> np.ndarray:
        """Greedy action for each observation in ``X``."""
        check_is_fitted(self, "buffer_")
        return np.array([self._act(obs) for obs in X], dtype=int)


class ICPI(EpisodicAgent):
    """In-context policy iteration agent.

    Parameters
    ----------
    backend : {"oracle", "matching", "remote"} or Backend
        Sequence model used for every query. ``"remote"`` reads its endpoint
        from the environment (see :meth:`RemoteBackend.from_env`).
    n_episodes : int
        Training episodes run by ``fit``.
    gamma : float
        Discount for rollout returns and regret.
    recency_cutoff : int
        Number of newest trajectories eligible for rollout-policy prompts.
    rollout_horizon : int
        Cap on simulated steps per rollout.
    hints, balance, constraints : bool
        Prompt features; switching one off gives the matching ablation.
    success_only : bool
        Draw policy prompts from recent *successful* trajectories only.
    success_threshold : float
        Return counted as success when ``success_only`` is set.
    parse_retries : int
        Extra samples drawn when a completion fails to parse.
    """

    def __init__(
        self,
        backend="oracle",
        n_episodes=100,
        gamma=0.8,
        recency_cutoff=8,
        rollout_horizon=8,
        hints=True,
        balance=True,
        constraints=True,
        success_only=False,
        success_threshold=1.0,
        max_pool=32,
        token_budget=DEFAULT_TOKEN_BUDGET,
        tokenizer=None,
        temperature=0.1,
        max_new_tokens=64,
        parse_retries=0,
        n_jobs=1,
        env_kwargs=None,
        random_state=None,
    ):
        self.backend = backend
        self.n_episodes = n_episodes
        self.gamma = gamma
        self.recency_cutoff = recency_cutoff
        self.rollout_horizon = rollout_horizon
        self.hints = hints
        self.balance = balance
        self.constraints = constraints
        self.success_only = success_only
        self.success_threshold = success_threshold
        self.max_pool = max_pool
        self.token_budget = token_budget
        self.tokenizer = tokenizer
        self.temperature = temperature
        self.max_new_tokens = max_new_tokens
        self.parse_retries = parse_retries
        self.n_jobs = n_jobs
        self.env_kwargs = env_kwargs
        self.random_state = random_state

    def _setup(self):
        check_int(self.recency_cutoff, "recency_cutoff")
        check_int(self.rollout_horizon, "rollout_horizon")
        check_int(self.parse_retries, "parse_retries", minimum=0)
        if self.temperature < 0:
            raise ConfigurationError("temperature must be non-negative")
        self.settings_ = PromptSettings(
            hints=self.hints,
            balance=self.balance,
            constraints=self.constraints,
            recency_cutoff=self.recency_cutoff,
            success_threshold=self.success_threshold if self.success_only else None,
            max_pool=self.max_pool,
            token_budget=self.token_budget,
            tokenizer=self.tokenizer,
            temperature=self.temperature,
            max_new_tokens=self.max_new_tokens,
            parse_retries=self.parse_retries,
        )
        self.backend_ = self._make_backend()
        self.last_traces_ = []

    def _make_backend(self) -> Backend:
        return resolve_backend(self.backend, self.env_, self.codec_, self.buffer_, self.token_budget)

    def _act(self, obs) -> int:
        action, traces, tokens = select_action(
            obs,
            self.buffer_,
            self.backend_,
            self.codec_,
            self.settings_,
            self._rng,
            self.gamma,
            self.rollout_horizon,
            self.n_jobs,
        )
        self.tokens_used_ += tokens
        self.last_traces_ = traces
        return action


def train(env, backend="oracle", **params) -> RunLog:
    """Functional form of ``ICPI(backend, **params).fit(env).run_log_``."""
    return ICPI(backend=backend, **params).fit(env).run_log_
