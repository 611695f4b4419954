"""Sequence-model backends.

Every backend answers a :class:`CompletionRequest` with completion text, or
``None`` when it has nothing to say (the matching model's "no match"). The
rollout loop parses the text, so backends are interchangeable:

* :class:`RemoteBackend` talks to a completions-style HTTP endpoint;
* :class:`MatchingBackend` replays the most recent exact match from the buffer;
* :class:`OracleBackend` answers dynamics queries from the true environment and
  imitates the prompt's exemplars for action queries. Used for verification.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import httpx
import numpy as np

from .environments import Environment
from .exceptions import BackendUnavailable, ConfigurationError
from .replay import ReplayBuffer
from .textcodec import (
    Codec,
    Prompt,
    parse_exemplar_actions,
    reward_line,
    termination_line,
)

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_NEW_TOKENS = 64


@dataclass
class CompletionRequest:
    prompt: Prompt
    kind: str  # termination | reward | next_state | action
    state_text: str
    action: Optional[int] = None
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop: Sequence[str] = ("\n",)

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def stop_sequences(kind: str) -> tuple[str, ...]:
    # a rendered state may span a state line plus hint lines, so next-state
    # completions run to the blank line that closes the block
    return ("\n\n",) if kind == "next_state" else ("\n",)


class Backend:
    def complete(self, request: CompletionRequest, rng: np.random.Generator) -> Optional[str]:
        raise NotImplementedError


# oracle


def _sharpen(counts: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    if temperature == 0:
        best = np.flatnonzero(counts == counts.max())
        return int(rng.choice(best))
    logits = np.log(np.maximum(counts, 1e-300)) / temperature
    p = np.exp(logits - logits.max())
    p[counts == 0] = 0.0
    return int(rng.choice(len(counts), p=p / p.sum()))


def state_vector(state) -> np.ndarray:
    """Flatten a (nested) state into numbers; an eliminated alien reads as (-1, -1)."""
    out = []

    def walk(v):
        if v is None:
            out.extend((-1.0, -1.0))
        elif isinstance(v, (tuple, list)):
            for item in v:
                walk(item)
        else:
            out.append(float(v))

    walk(state)
    return np.array(out)


class OracleBackend(Backend):
    """Ground-truth world model plus exemplar-imitating rollout policy."""

    def __init__(self, env: Environment, codec: Codec):
        self.env = env
        self.codec = codec
        self._vectors: dict = {}

    def complete(self, request, rng):
        codec = self.codec
        lines = request.state_text.splitlines()
        hints = len(lines) > 1
        if request.kind == "action":
            return codec.encode_action(self._imitate(request, lines[0], rng))
        state = codec.parse_state(lines[0])
        nxt, reward, done = self.env.transition(state, request.action, rng)
        if request.kind == "termination":
            return termination_line(done)
        if request.kind == "reward":
            return reward_line(reward)
        if request.kind == "next_state":
            return "\n".join(codec.encode_state(self.env.observe(nxt), hints))
        raise ValueError(f"unknown query kind {request.kind!r}")

    def _vector(self, line: str) -> np.ndarray:
        if line not in self._vectors:
            self._vectors[line] = state_vector(self.codec.parse_state_line(line))
        return self._vectors[line]

    def _imitate(self, request, state_line, rng) -> int:
        """Sample from the actions taken in the exemplar states nearest the query (uniform if none)."""
        n = self.env.n_actions
        pairs = parse_exemplar_actions(self.codec, "\n\n".join(request.prompt.exemplars))
        if not pairs:
            return int(rng.integers(n))
        target = self._vector(state_line)
        dist = np.array([np.linalg.norm(self._vector(line) - target) for line, _ in pairs])
        counts = np.zeros(n)
        for (_, a), d in zip(pairs, dist):
            if d == dist.min():
                counts[a] += 1
        return _sharpen(counts, request.temperature, rng)


# matching


def match_lookup(
    buffer: ReplayBuffer,
    codec: Codec,
    state_text: str,
    action: Optional[int],
    kind: str,
    hints: bool = True,
    _cache: Optional[dict] = None,
) -> Optional[str]:
    """Most recent buffer record whose rendered state equals ``state_text``, as completion text.

    Dynamics queries additionally require the action to match. Returns ``None``
    when nothing matches.
    """
    target = state_text.splitlines()[0].strip() if state_text else ""
    cache = {} if _cache is None else _cache

    def line_of(obs):
        key = repr(obs)
        if key not in cache:
            cache[key] = codec.state_line(obs)
        return cache[key]

    for traj in reversed(buffer.trajectories):
        for tr in reversed(traj.transitions):
            if kind != "action" and tr.action != action:
                continue
            if line_of(tr.obs) != target:
                continue
            if kind == "action":
                return codec.encode_action(tr.action)
            if kind == "termination":
                return termination_line(tr.done)
            if kind == "reward":
                return reward_line(tr.reward)
            if kind == "next_state":
                return "\n".join(codec.encode_state(tr.next_obs, hints))
            raise ValueError(f"unknown query kind {kind!r}")
    return None


class MatchingBackend(Backend):
    """Non-LLM world model and policy: replays the most recent exact historical match."""

    def __init__(self, buffer: ReplayBuffer, codec: Codec):
        self.buffer = buffer
        self.codec = codec
        self._cache: dict = {}

    def complete(self, request, rng):
        hints = len(request.state_text.splitlines()) > 1
        return match_lookup(
            self.buffer, self.codec, request.state_text, request.action, request.kind, hints, self._cache
        )


# remote


def _dig(obj: Any, path: str) -> Any:
    for part in path.split("."):
        obj = obj[int(part)] if isinstance(obj, list) else obj[part]
    return obj


@dataclass
class RemoteBackend(Backend):
    """Completions-style HTTP client with retries, backoff and an in-flight cap.

    The request body is ``{model, prompt, max_tokens, temperature, stop}``;
    rename fields with ``field_map`` and point ``response_path`` at the text in
    the response JSON when a provider differs.
    """

    base_url: str
    api_key: str
    model: str
    path: str = "/v1/completions"
    response_path: str = "choices.0.text"
    field_map: dict = field(default_factory=dict)
    max_retries: int = 6
    backoff: float = 1.0
    max_backoff: float = 60.0
    max_in_flight: int = 4
    timeout: float = 60.0
    token_budget: int = 4000
    debug: bool = False
    transport: Optional[httpx.BaseTransport] = None
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self):
        if not self.base_url:
            raise ConfigurationError("remote backend needs a base URL")
        if not self.api_key or any(c.isspace() for c in self.api_key):
            raise ConfigurationError("remote backend needs a non-empty API key without whitespace")
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._client = httpx.Client(
            base_url=self.base_url,
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=self.timeout,
            transport=self.transport,
        )

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteBackend":
        """Read ``ICPI_API_BASE``, ``ICPI_API_KEY`` and ``ICPI_MODEL``."""
        return cls(
            base_url=os.environ.get("ICPI_API_BASE", ""),
            api_key=os.environ.get("ICPI_API_KEY", ""),
            model=os.environ.get("ICPI_MODEL", "code-davinci-002"),
            **kwargs,
        )

    def _body(self, request: CompletionRequest) -> dict:
        body = {
            "model": self.model,
            "prompt": request.prompt.render(),
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "stop": list(request.stop),
        }
        return {self.field_map.get(k, k): v for k, v in body.items()}

    def complete(self, request, rng=None):
        if request.prompt.n_tokens() > self.token_budget:
            raise ValueError("prompt exceeds the token budget")
        body = self._body(request)
        if self.debug:
            logger.debug("POST %s%s model=%s body=%r", self.base_url, self.path, self.model, body)
        delay = self.backoff
        last_error = None
        for attempt in range(self.max_retries + 1):
            with self._slots:
                try:
                    resp = self._client.post(self.path, json=body)
                except httpx.TransportError as exc:
                    resp, last_error = None, exc
            if resp is not None:
                if resp.status_code == 401 or resp.status_code == 403:
                    raise ConfigurationError(f"credentials rejected ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = httpx.HTTPStatusError(
                        f"status {resp.status_code}", request=resp.request, response=resp
                    )
                else:
                    resp.raise_for_status()
                    text = _dig(resp.json(), self.response_path)
                    if self.debug:
                        logger.debug("response %r", text)
                    return text
            if attempt == self.max_retries:
                break
            wait = delay
            if resp is not None and "retry-after" in resp.headers:
                try:
                    wait = max(wait, float(resp.headers["retry-after"]))
                except ValueError:
                    pass
            logger.warning("completion attempt %d failed (%s); retrying in %.1fs", attempt + 1, last_error, wait)
            self.sleep(min(wait, self.max_backoff))
            delay = min(delay * 2, self.max_backoff)
        raise BackendUnavailable(f"{self.base_url}: gave up after {self.max_retries + 1} attempts") from last_error

    def close(self):
        self._client.close()

    def __repr__(self):
        return f"RemoteBackend(base_url={self.base_url!r}, model={self.model!r}, api_key='***')"


def resolve_backend(backend, env: Environment, codec: Codec, buffer: ReplayBuffer, token_budget: int = 4000) -> Backend:
    """Map a backend name (``oracle``, ``matching``, ``remote``) or instance to an instance."""
    if isinstance(backend, Backend):
        return backend
    if backend == "oracle":
        return OracleBackend(env, codec)
    if backend == "matching":
        return MatchingBackend(buffer, codec)
    if backend == "remote":
        return RemoteBackend.from_env(token_budget=token_budget)
    raise ConfigurationError(f"unknown backend {backend!r}")
