"""The six benchmark domains.

Every environment separates the natural dynamics (:meth:`Environment.transition`,
a function of state and action only) from episode bookkeeping (:meth:`reset` /
:meth:`step`, which add the eight-step time limit). Observations are what the
agent sees; for every domain except point-mass they equal the internal state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Hashable, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, EpisodeFinishedError

TIME_LIMIT = 8


class C(NamedTuple):
    x: int
    y: int


class CatchState(NamedTuple):
    paddle: C
    ball: C


class InvadersState(NamedTuple):
    ship: C
    aliens: tuple  # of C or None


class PointMassState(NamedTuple):
    pos: float
    vel: float


@dataclass(frozen=True)
class StepResult:
    next_state: Any
    reward: float
    done: bool


class Environment:
    """Base class: subclasses define ``action_names``, ``sample_start`` and ``transition``."""

    name: str = ""
    action_names: tuple = ()
    time_limit: int = TIME_LIMIT

    def __init__(self):
        self._state = None
        self._t = 0
        self._done = True
        self._rng = None

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    def action_space(self) -> list[tuple[int, str]]:
        return list(enumerate(self.action_names))

    def sample_start(self, rng: np.random.Generator):
        raise NotImplementedError

    def transition(self, state, action: int, rng: Optional[np.random.Generator] = None):
        """Natural dynamics. Returns ``(next_state, reward, terminal)`` without the time limit."""
        raise NotImplementedError

    def observe(self, state):
        return state

    def is_valid_state(self, state) -> bool:
        return True

    # episode bookkeeping

    @property
    def state(self):
        return self._state

    @property
    def t(self) -> int:
        return self._t

    def reset(self, rng: Optional[np.random.Generator] = None, state=None):
        """Start an episode from a sampled start, or from ``state`` when given."""
        if state is None and rng is None:
            raise ValueError(f"{self.name}: reset needs a generator or an explicit state")
        if state is not None and not self.is_valid_state(state):
            raise ValueError(f"{self.name}: invalid state {state!r}")
        self._rng = rng
        self._state = self.sample_start(rng) if state is None else state
        self._t = 0
        self._done = False
        return self.observe(self._state)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EpisodeFinishedError(f"{self.name}: episode is over, call reset()")
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"{self.name}: invalid action {action!r}")
        state, reward, done = self.transition(self._state, int(action), self._rng)
        self._t += 1
        # time-limit terminations are indistinguishable from natural ones
        done = bool(done) or self._t >= self.time_limit
        self._state = state
        self._done = done
        return StepResult(self.observe(state), float(reward), done)

    # regret normalisation

    def optimal_value(self, state, gamma: float, steps_left: Optional[int] = None) -> float:
        """Exact optimal discounted return from ``state`` within ``steps_left`` steps.

        Finite-horizon dynamic programming over the deterministic dynamics; the
        reachable set within eight steps is small for every domain.
        """
        if not 0 < gamma < 1:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
        steps_left = self.time_limit if steps_left is None else steps_left

        @lru_cache(maxsize=None)
        def value(s: Hashable, k: int) -> float:
            if k == 0:
                return 0.0
            best = 0.0
            for a in range(self.n_actions):
                s2, r, done = self.transition(s, a, None)
                q = r if done else r + gamma * value(s2, k - 1)
                best = max(best, q)
            return best

        return value(state, steps_left)


class Chain(Environment):
    name = "chain"
    action_names = ("left", "right", "try_goal")
    n_states = 8
    goal = 4

    def sample_start(self, rng):
        return int(rng.integers(self.n_states))

    def transition(self, state, action, rng=None):
        if action == 2:
            return state, float(state == self.goal), True
        step = -1 if action == 0 else 1
        return min(max(state + step, 0), self.n_states - 1), 0.0, False

    def is_valid_state(self, state):
        return isinstance(state, (int, np.integer)) and 0 <= state < self.n_states


class DistractorChain(Environment):
    """Chain whose observation carries a second, uniformly resampled integer."""

    name = "distractor-chain"
    action_names = Chain.action_names

    def __init__(self):
        super().__init__()
        self._chain = Chain()

    def sample_start(self, rng):
        return (self._chain.sample_start(rng), int(rng.integers(Chain.n_states)))

    def transition(self, state, action, rng=None):
        pos, distractor = state
        pos2, reward, done = self._chain.transition(pos, action)
        if rng is not None:
            distractor = int(rng.integers(Chain.n_states))
        return (pos2, distractor), reward, done

    def is_valid_state(self, state):
        return (
            isinstance(state, tuple)
            and len(state) == 2
            and all(self._chain.is_valid_state(v) for v in state)
        )

    def optimal_value(self, state, gamma, steps_left=None):
        return self._chain.optimal_value(state[0], gamma, steps_left)


class Maze(Environment):
    name = "maze"
    action_names = ("up", "down", "left", "right")
    _moves = ((0, 1), (0, -1), (-1, 0), (1, 0))

    def __init__(
        self,
        width: int = 3,
        height: int = 3,
        obstacles: Sequence[Sequence[int]] = ((1, 1),),
        start: Sequence[int] = (0, 0),
        goal: Sequence[int] = (2, 2),
    ):
        super().__init__()
        self.width = width
        self.height = height
        self.obstacles = frozenset(C(*o) for o in obstacles)
        self.start = C(*start)
        self.goal = C(*goal)
        for cell in (self.start, self.goal):
            if not self._free(cell):
                raise ConfigurationError(f"maze: {cell} is outside the grid or blocked")
        if self.start == self.goal:
            raise ConfigurationError("maze: start and goal coincide")

    def _free(self, cell: C) -> bool:
        return 0 <= cell.x < self.width and 0 <= cell.y < self.height and cell not in self.obstacles

    def sample_start(self, rng):
        return self.start

    def transition(self, state, action, rng=None):
        dx, dy = self._moves[action]
        nxt = C(state.x + dx, state.y + dy)
        if not self._free(nxt):
            nxt = state
        reached = nxt == self.goal
        return nxt, float(reached), reached

    def is_valid_state(self, state):
        return isinstance(state, C) and self._free(state)


class MiniCatch(Environment):
    """Paddle on row 0 catches a ball falling from height 5 in a 4-wide plane.

    The landing is checked against the paddle position before the paddle's own
    move on that step, so any action on the final step yields the same outcome.
    """

    name = "mini-catch"
    action_names = ("stay", "left", "right")
    width = 4
    height = 5

    def sample_start(self, rng):
        return CatchState(C(int(rng.integers(self.width)), 0), C(int(rng.integers(self.width)), self.height))

    def transition(self, state, action, rng=None):
        paddle, ball = state
        ball = C(ball.x, ball.y - 1)
        if ball.y <= paddle.y:
            return CatchState(paddle, ball), float(paddle.x == ball.x), True
        dx = (0, -1, 1)[action]
        paddle = C(min(max(paddle.x + dx, 0), self.width - 1), paddle.y)
        return CatchState(paddle, ball), 0.0, False

    def is_valid_state(self, state):
        if not isinstance(state, CatchState):
            return False
        p, b = state
        return p.y == 0 and 0 <= p.x < self.width and 0 <= b.x < self.width and 0 <= b.y <= self.height


class MiniInvaders(Environment):
    """Ship on row 0 shoots two aliens descending from row 4 of a 4x5 grid."""

    name = "mini-invaders"
    action_names = ("left", "right", "shoot")
    width = 4
    height = 5
    n_aliens = 2

    def sample_start(self, rng):
        ship = C(int(rng.integers(self.width)), 0)
        cols = sorted(int(c) for c in rng.choice(self.width, size=self.n_aliens, replace=False))
        return InvadersState(ship, tuple(C(c, self.height - 1) for c in cols))

    def transition(self, state, action, rng=None):
        ship, aliens = state
        aliens = list(aliens)
        reward = 0.0
        if action == 2:
            # instant hit on the lowest live alien in the ship's column
            column = [i for i, a in enumerate(aliens) if a is not None and a.x == ship.x]
            if column:
                aliens[min(column, key=lambda i: aliens[i].y)] = None
                reward = 1.0
        else:
            dx = -1 if action == 0 else 1
            ship = C(min(max(ship.x + dx, 0), self.width - 1), ship.y)
        if all(a is None for a in aliens):
            return InvadersState(ship, tuple(aliens)), reward, True
        aliens = [None if a is None else C(a.x, a.y - 1) for a in aliens]
        landed = any(a is not None and a.y <= ship.y for a in aliens)
        return InvadersState(ship, tuple(aliens)), reward, landed

    def is_valid_state(self, state):
        if not isinstance(state, InvadersState):
            return False
        ship, aliens = state
        return (
            ship.y == 0
            and 0 <= ship.x < self.width
            and all(a is None or (0 <= a.x < self.width and 0 <= a.y < self.height) for a in aliens)
        )


class PointMass(Environment):
    """Point mass on a line; success is ``-2 <= pos <= 2`` with zero velocity after a step.

    Internal state is exact; observations are rounded to two decimals.
    """

    name = "point-mass"
    action_names = ("accel", "decel")
    bound = 6.0
    success = 2.0

    def sample_start(self, rng):
        return PointMassState(float(rng.uniform(-self.bound, self.bound)), 0.0)

    def transition(self, state, action, rng=None):
        vel = state.vel + (1.0 if action == 0 else -1.0)
        pos = state.pos + vel
        hit = -self.success <= pos <= self.success and vel == 0
        return PointMassState(pos, vel), float(hit), hit

    def observe(self, state):
        # + 0.0 turns -0.0 into 0.0 so the text never reads "-0.00"
        return PointMassState(round(state.pos, 2) + 0.0, round(state.vel, 2) + 0.0)

    def is_valid_state(self, state):
        return isinstance(state, PointMassState) and all(math.isfinite(v) for v in state)


ENVIRONMENTS = {
    cls.name: cls for cls in (Chain, DistractorChain, Maze, MiniCatch, MiniInvaders, PointMass)
}


def make(env_id: str, **kwargs) -> Environment:
    """Instantiate a domain by name; keyword arguments go to the constructor (maze layout)."""
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}"
        ) from None
    return cls(**kwargs)


def action_space(env_id: str) -> list[tuple[int, str]]:
    return make(env_id).action_space()


def optimal_value(env_id: str, state, gamma: float = 0.8) -> float:
    return make(env_id).optimal_value(state, gamma)


def decode_state(env_id: str, value):
    """Inverse of the JSON form written by buffer persistence (nested lists)."""
    if env_id == "chain":
        return int(value)
    if env_id == "distractor-chain":
        return (int(value[0]), int(value[1]))
    if env_id == "maze":
        return C(*value)
    if env_id == "mini-catch":
        return CatchState(C(*value[0]), C(*value[1]))
    if env_id == "mini-invaders":
        return InvadersState(C(*value[0]), tuple(None if a is None else C(*a) for a in value[1]))
    if env_id == "point-mass":
        return PointMassState(float(value[0]), float(value[1]))
    raise ConfigurationError(f"unknown environment {env_id!r}")
