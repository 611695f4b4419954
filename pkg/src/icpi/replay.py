"""Replay buffer and the four prompt samplers.

All samplers are pure functions of ``(buffer, rng)``; they never mutate the buffer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterator, Optional, Sequence

import numpy as np

DEFAULT_MAX_POOL = 32


@dataclass(frozen=True)
class Transition:
    obs: Any
    action: int
    reward: float
    done: bool
    next_obs: Any
    episode_index: int = 0
    step_index: int = 0


@dataclass
class Trajectory:
    transitions: list

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("a trajectory needs at least one transition")
        if any(t.done for t in self.transitions[:-1]):
            raise ValueError("only the last transition of a trajectory may be terminal")

    @property
    def undiscounted_return(self) -> float:
        return float(sum(t.reward for t in self.transitions))

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)


class ReplayBuffer:
    """Append-only episode history; position is recency (last is newest)."""

    def __init__(self, trajectories: Optional[Sequence[Trajectory]] = None):
        self.trajectories: list[Trajectory] = []
        self._by_action: dict[int, list[Transition]] = {}
        for traj in trajectories or ():
            self.append(traj)

    def append(self, trajectory: Trajectory) -> None:
        if not trajectory.transitions[-1].done:
            raise ValueError("only complete trajectories can be added")
        self.trajectories.append(trajectory)
        for tr in trajectory.transitions:
            self._by_action.setdefault(int(tr.action), []).append(tr)

    def with_action(self, action: int) -> list[Transition]:
        """Transitions that took ``action``, oldest first."""
        return self._by_action.get(int(action), [])

    def __len__(self):
        return len(self.trajectories)

    def transitions(self) -> Iterator[Transition]:
        for traj in self.trajectories:
            yield from traj.transitions

    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def recent(self, c: int, threshold: Optional[float] = None) -> list[Trajectory]:
        """The ``c`` most recent trajectories, optionally only those with return >= ``threshold``."""
        trajs = self.trajectories
        if threshold is not None:
            trajs = [t for t in trajs if t.undiscounted_return >= threshold]
        return trajs[-c:] if c > 0 else []

    # persistence: one transition per line

    def save(self, path, codec=None) -> None:
        with open(path, "w") as fh:
            for tr in self.transitions():
                fh.write(json.dumps(transition_record(tr, codec)) + "\n")

    @classmethod
    def load(cls, path, decode_obs) -> "ReplayBuffer":
        """Rebuild a buffer written by :meth:`save`; ``decode_obs`` maps the JSON ``obs`` back."""
        buffer = cls()
        current: list[Transition] = []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                current.append(
                    Transition(
                        decode_obs(rec["obs"]),
                        int(rec["action"]),
                        float(rec["reward"]),
                        bool(rec["done"]),
                        decode_obs(rec["next_obs"]),
                        int(rec["episode"]),
                        int(rec["step"]),
                    )
                )
                if rec["done"]:
                    buffer.append(Trajectory(current))
                    current = []
        return buffer


def _jsonable(value):
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return [_jsonable(v) for v in value]


def transition_record(tr: Transition, codec=None) -> dict:
    rec = {
        "episode": tr.episode_index,
        "step": tr.step_index,
        "obs_text": "\n".join(codec.encode_state(tr.obs, hints=False)) if codec else None,
        "action": int(tr.action),
        "reward": float(tr.reward),
        "done": bool(tr.done),
        "next_obs_text": "\n".join(codec.encode_state(tr.next_obs, hints=False)) if codec else None,
        "obs": _jsonable(tr.obs),
        "next_obs": _jsonable(tr.next_obs),
    }
    return rec


# samplers


def _shuffled(items: list, rng: np.random.Generator) -> list:
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def _subset(items: list, k: int, rng: np.random.Generator) -> list:
    if len(items) <= k:
        return list(items)
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[i] for i in sorted(idx)]


def balance_groups(groups: Sequence[list], rng: np.random.Generator) -> list:
    """Pad every non-empty group up to the largest by duplicating random members (with replacement)."""
    groups = [g for g in groups if g]
    if not groups:
        return []
    target = max(len(g) for g in groups)
    out = []
    for g in groups:
        out.extend(g)
        if len(g) < target:
            extra = rng.integers(len(g), size=target - len(g))
            out.extend(g[i] for i in extra)
    return out


def _pool(buffer: ReplayBuffer, action: int, constrain: bool, done: Optional[bool] = None) -> list:
    if not constrain:
        return list(buffer.transitions())
    pool = buffer.with_action(action)
    if done is not None:
        pool = [tr for tr in pool if tr.done == done]
    return list(pool)


def _grouped_sample(pool, key, rng, balance, max_pool):
    if not balance:
        return _shuffled(_subset(pool, max_pool, rng), rng)
    values = sorted({key(tr) for tr in pool})
    if not values:
        return []
    per_group = max(1, max_pool // len(values))
    groups = [_subset([tr for tr in pool if key(tr) == v], per_group, rng) for v in values]
    return _shuffled(balance_groups(groups, rng), rng)


def sample_termination_prompt(
    buffer: ReplayBuffer,
    action: int,
    rng: np.random.Generator,
    balance: bool = True,
    constrain: bool = True,
    max_pool: int = DEFAULT_MAX_POOL,
) -> list[Transition]:
    """Transitions taking ``action`` with terminal and non-terminal steps in equal number."""
    pool = _pool(buffer, action, constrain)
    return _grouped_sample(pool, lambda tr: tr.done, rng, balance, max_pool)


def sample_reward_prompt(
    buffer: ReplayBuffer,
    action: int,
    predicted_done: bool,
    rng: np.random.Generator,
    balance: bool = True,
    constrain: bool = True,
    max_pool: int = DEFAULT_MAX_POOL,
) -> list[Transition]:
    pool = _pool(buffer, action, constrain, done=predicted_done)
    return _grouped_sample(pool, lambda tr: tr.reward, rng, balance, max_pool)


def sample_obs_prompt(
    buffer: ReplayBuffer,
    action: int,
    rng: np.random.Generator,
    constrain: bool = True,
    max_pool: int = DEFAULT_MAX_POOL,
) -> list[Transition]:
    pool = _pool(buffer, action, constrain, done=False)
    return _shuffled(_subset(pool, max_pool, rng), rng)


def sample_policy_prompt(
    buffer: ReplayBuffer,
    recency_cutoff: int,
    rng: np.random.Generator,
    success_threshold: Optional[float] = None,
    n_slices: int = DEFAULT_MAX_POOL,
) -> list[list[Transition]]:
    """Random contiguous slices of the ``recency_cutoff`` newest trajectories.

    Trajectories are drawn uniformly with replacement, ``n_slices`` times; each
    slice has a uniformly random start and end. The prompt builder clips the
    result to the token budget. With ``success_threshold`` only trajectories
    reaching that undiscounted return are eligible.
    """
    eligible = buffer.recent(recency_cutoff, success_threshold)
    if not eligible:
        return []
    slices = []
    for i in rng.integers(len(eligible), size=n_slices):
        traj = eligible[i]
        n = len(traj)
        start = int(rng.integers(n))
        stop = int(rng.integers(start + 1, n + 1))
        slices.append(traj.transitions[start:stop])
    return slices
