"""Argument checks shared by the estimators, in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numbers
from typing import Optional, Union

import numpy as np

from .environments import Environment, make
from .exceptions import ConfigurationError


def check_environment(env: Union[str, Environment], env_kwargs: Optional[dict] = None) -> Environment:
    if isinstance(env, Environment):
        return env
    if isinstance(env, str):
        return make(env, **(env_kwargs or {}))
    raise ConfigurationError(f"expected an environment name or instance, got {type(env).__name__}")


def check_gamma(gamma) -> float:
    if not isinstance(gamma, numbers.Real) or not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(gamma)


def check_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise ConfigurationError(f"cannot build a random generator from {seed!r}")


def greedy_tiebreak(values, rng: np.random.Generator) -> int:
    """Index of the maximum, ties broken uniformly at random."""
    values = np.asarray(values, dtype=float)
    best = np.flatnonzero(values == values.max())
    return int(best[0]) if len(best) == 1 else int(rng.choice(best))
