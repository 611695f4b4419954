"""Rendering domain values as Python-flavoured prompt text and parsing completions back.

Block layout, by query kind (one line per bullet, hint lines only when enabled)::

    termination   state, hint, action, "assert done" | "assert not done"
    reward        state, hint, action, "assert reward == r"
    next_state    state, hint, action, [dynamics annotation], next state, next hint
    full          state, hint, action, reward, termination, [annotation, next state, next hint]
    policy        (state, hint, action, [annotation]) repeated over a trajectory slice

Blocks are separated by one blank line. A prompt is its exemplar blocks
followed by the query block, which stops where the model has to continue.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .environments import (
    C,
    CatchState,
    Chain,
    Environment,
    InvadersState,
    Maze,
    PointMassState,
    make,
)
from .exceptions import ParseFailure

DEFAULT_TOKEN_BUDGET = 4000

QUERY_KINDS = ("termination", "reward", "next_state", "action")

_REWARD_RE = re.compile(r"^\s*assert\s+reward\s*==\s*(-?\d+(?:\.\d+)?)\b")
_DONE_RE = re.compile(r"^\s*assert\s+(not\s+)?done\s*(?:#.*)?$")
_C = r"C\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)"
_NUM = r"(-?\d+(?:\.\d+)?)"


# tokens


class RegexTokenizer:
    """Word-run / single-punctuation counter scaled by ``scale`` and rounded up.

    A stand-in upper bound for subword tokenizers; swap in any ``str -> int``
    callable (for example a wrapped Hugging Face tokenizer) where accuracy matters.
    """

    _pattern = re.compile(r"\w+|[^\w\s]")

    def __init__(self, scale: float = 1.25):
        self.scale = scale

    def __call__(self, text: str) -> int:
        return math.ceil(self.scale * len(self._pattern.findall(text)))


DEFAULT_TOKENIZER = RegexTokenizer()

Tokenizer = Callable[[str], int]


def count_tokens(text: str, tokenizer: Optional[Tokenizer] = None) -> int:
    return (tokenizer or DEFAULT_TOKENIZER)(text)


@dataclass
class Prompt:
    exemplars: list  # of block strings
    query: str
    token_budget: int = DEFAULT_TOKEN_BUDGET
    tokenizer: Optional[Tokenizer] = field(default=None, repr=False)

    def render(self) -> str:
        return "\n\n".join([*self.exemplars, self.query]) + "\n"

    def n_tokens(self) -> int:
        return count_tokens(self.render(), self.tokenizer)

    def clip(self) -> "Prompt":
        """Drop whole exemplar blocks from the front until the budget holds."""
        while self.exemplars and self.n_tokens() > self.token_budget:
            self.exemplars.pop(0)
        return self


# per-domain codecs


class Codec:
    """Text conventions for one domain. Subclasses render and parse states."""

    action_texts: tuple = ()
    annotation: Optional[str] = None

    def __init__(self, env: Environment):
        self.env = env

    def state_line(self, state) -> str:
        raise NotImplementedError

    def hint_line(self, state) -> Optional[str]:
        return None

    def parse_state_line(self, line: str):
        raise NotImplementedError

    # shared

    def encode_state(self, state, hints: bool = True) -> list[str]:
        lines = [self.state_line(state)]
        if hints:
            hint = self.hint_line(state)
            if hint is not None:
                lines.append(hint)
        return lines

    def encode_action(self, action: int) -> str:
        return self.action_texts[int(action)]

    def parse_action(self, completion: str) -> int:
        for line in completion.splitlines():
            line = line.strip()
            for i, text in enumerate(self.action_texts):
                if line.startswith(text):
                    return i
        raise ParseFailure(f"no action in {completion!r}")

    def parse_state(self, completion: str):
        for line in completion.splitlines():
            try:
                return self.parse_state_line(line.strip())
            except ParseFailure:
                continue
        raise ParseFailure(f"no state in {completion!r}")

    def state_text(self, completion: str) -> str:
        """Well-formed state block at the start of a completion, as carried into the next query.

        Keeps the leading run of ``assert`` lines that are neither reward nor
        termination lines; the first must parse as a state.
        """
        kept = []
        for line in completion.strip("\n").splitlines():
            line = line.rstrip()
            if not line.strip():
                if kept:
                    break
                continue
            s = line.strip()
            if not s.startswith("assert ") or _REWARD_RE.match(s) or _DONE_RE.match(s):
                break
            kept.append(s)
        if not kept:
            raise ParseFailure(f"no state in {completion!r}")
        self.parse_state_line(kept[0])
        return "\n".join(kept)


class ChainCodec(Codec):
    action_texts = ("left()", "right()", "try_goal()")
    _re = re.compile(r"^assert\s+state\s*==\s*(-?\d+)\b")

    def state_line(self, state):
        return f"assert state == {state}"

    def hint_line(self, state):
        op = "==" if state == Chain.goal else "!="
        return f"assert state {op} {Chain.goal}"

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        return int(m.group(1))


class DistractorChainCodec(Codec):
    action_texts = ChainCodec.action_texts
    _re = re.compile(r"^assert\s+state\s*==\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")

    def state_line(self, state):
        return f"assert state == ({state[0]}, {state[1]})"

    def hint_line(self, state):
        op = "==" if state[0] == Chain.goal else "!="
        return f"assert state[0] {op} {Chain.goal}"

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        return (int(m.group(1)), int(m.group(2)))


class MazeCodec(Codec):
    action_texts = ("up()", "down()", "left()", "right()")
    _re = re.compile(r"^assert\s+state\s*==\s*" + _C)

    def state_line(self, state):
        return f"assert state == C({state.x}, {state.y})"

    def hint_line(self, state):
        goal = self.env.goal
        op = "==" if state == goal else "!="
        return f"assert state {op} C({goal.x}, {goal.y})"

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        return C(int(m.group(1)), int(m.group(2)))


def _relation(a, b) -> str:
    return "<" if a < b else ">" if a > b else "=="


class MiniCatchCodec(Codec):
    action_texts = ("paddle.stay()", "paddle.left()", "paddle.right()")
    annotation = "ball.descend()"
    _re = re.compile(r"^assert\s+paddle\s*==\s*" + _C + r"\s+and\s+ball\s*==\s*" + _C)

    def state_line(self, state):
        p, b = state
        return f"assert paddle == C({p.x}, {p.y}) and ball == C({b.x}, {b.y})"

    def hint_line(self, state):
        p, b = state
        return (
            f"assert paddle.x == {p.x} and ball.x == {b.x} "
            f"and paddle.x {_relation(p.x, b.x)} ball.x and ball.y == {b.y}"
        )

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        v = [int(g) for g in m.groups()]
        return CatchState(C(v[0], v[1]), C(v[2], v[3]))


class MiniInvadersCodec(Codec):
    action_texts = ("ship.left()", "ship.right()", "ship.shoot()")
    annotation = "for a in aliens: a.descend()"
    _re = re.compile(r"^assert\s+ship\s*==\s*" + _C + r"\s+and\s+aliens\s*==\s*\[(.*)\]")
    _item = re.compile(r"\s*(?:" + _C + r"|(None))\s*(?:,|$)")

    def state_line(self, state):
        ship, aliens = state
        items = ", ".join("None" if a is None else f"C({a.x}, {a.y})" for a in aliens)
        return f"assert ship == C({ship.x}, {ship.y}) and aliens == [{items}]"

    def hint_line(self, state):
        ship, aliens = state
        parts = [f"ship.x == {ship.x}"]
        for i, a in enumerate(aliens):
            if a is not None:
                parts.append(f"aliens[{i}].x == {a.x}")
                parts.append(f"ship.x {_relation(ship.x, a.x)} aliens[{i}].x")
        return "assert " + " and ".join(parts)

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        ship = C(int(m.group(1)), int(m.group(2)))
        body = m.group(3).strip()
        aliens = []
        pos = 0
        while pos < len(body):
            im = self._item.match(body, pos)
            if not im or im.end() == pos:
                raise ParseFailure(line)
            aliens.append(None if im.group(3) else C(int(im.group(1)), int(im.group(2))))
            pos = im.end()
        return InvadersState(ship, tuple(aliens))


class PointMassCodec(Codec):
    action_texts = ("accel(pos, vel)", "decel(pos, vel)")
    _re = re.compile(r"^assert\s+pos\s*==\s*" + _NUM + r"\s+and\s+vel\s*==\s*" + _NUM)

    def state_line(self, state):
        return f"assert pos == {state.pos:.2f} and vel == {state.vel:.2f}"

    def hint_line(self, state):
        # hints describe the rendered (rounded) values so they follow from the state line
        pos, vel = round(state.pos, 2), round(state.vel, 2)
        lo = ">=" if pos >= -2 else "<"
        hi = "<=" if pos <= 2 else ">"
        v = "==" if vel == 0 else "!="
        return f"assert pos {lo} -2 and pos {hi} 2 and vel {v} 0"

    def parse_state_line(self, line):
        m = self._re.match(line)
        if not m:
            raise ParseFailure(line)
        return PointMassState(float(m.group(1)), float(m.group(2)))


_CODECS = {
    "chain": ChainCodec,
    "distractor-chain": DistractorChainCodec,
    "maze": MazeCodec,
    "mini-catch": MiniCatchCodec,
    "mini-invaders": MiniInvadersCodec,
    "point-mass": PointMassCodec,
}


def get_codec(env: Union[str, Environment]) -> Codec:
    if isinstance(env, str):
        env = make(env)
    return _CODECS[env.name](env)


# value lines


def reward_line(reward: float) -> str:
    r = int(reward) if float(reward).is_integer() else reward
    return f"assert reward == {r}"


def termination_line(done: bool) -> str:
    return "assert done" if done else "assert not done"


def parse_reward(completion: str) -> int:
    for line in completion.splitlines():
        m = _REWARD_RE.match(line)
        if m:
            value = float(m.group(1))
            return int(value) if value.is_integer() else value
    raise ParseFailure(f"no reward in {completion!r}")


def parse_termination(completion: str) -> bool:
    for line in completion.splitlines():
        m = _DONE_RE.match(line)
        if m:
            return m.group(1) is None
    raise ParseFailure(f"no termination in {completion!r}")


# blocks


def encode_transition(codec: Codec, transition, hints: bool = True, kind: str = "full") -> list[str]:
    """Lines for one buffer transition; ``kind`` selects which outcome lines follow the action."""
    lines = codec.encode_state(transition.obs, hints)
    lines.append(codec.encode_action(transition.action))
    if kind == "termination":
        lines.append(termination_line(transition.done))
    elif kind == "reward":
        lines.append(reward_line(transition.reward))
    elif kind == "next_state":
        if codec.annotation:
            lines.append(codec.annotation)
        lines.extend(codec.encode_state(transition.next_obs, hints))
    elif kind == "full":
        lines.append(reward_line(transition.reward))
        lines.append(termination_line(transition.done))
        if not transition.done:
            if codec.annotation:
                lines.append(codec.annotation)
            lines.extend(codec.encode_state(transition.next_obs, hints))
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return lines


def encode_trajectory_slice(codec: Codec, transitions: Sequence, hints: bool = True) -> list[str]:
    lines = []
    for i, tr in enumerate(transitions):
        lines.extend(codec.encode_state(tr.obs, hints))
        lines.append(codec.encode_action(tr.action))
        if codec.annotation and i + 1 < len(transitions):
            lines.append(codec.annotation)
    return lines


def query_block(codec: Codec, state_text: str, kind: str, action: Optional[int] = None) -> str:
    """The partial block the model completes. ``state_text`` is already rendered."""
    if kind == "action":
        return state_text
    lines = [state_text, codec.encode_action(action)]
    if kind == "next_state" and codec.annotation:
        lines.append(codec.annotation)
    return "\n".join(lines)


def build_prompt(
    codec: Codec,
    kind: str,
    exemplars: Sequence,
    state_text: str,
    action: Optional[int] = None,
    hints: bool = True,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    tokenizer: Optional[Tokenizer] = None,
) -> Prompt:
    """Assemble and clip a prompt. ``exemplars`` are transitions, or trajectory slices for ``kind='action'``."""
    if kind == "action":
        blocks = ["\n".join(encode_trajectory_slice(codec, sl, hints)) for sl in exemplars]
    else:
        blocks = ["\n".join(encode_transition(codec, tr, hints, kind)) for tr in exemplars]
    prompt = Prompt(blocks, query_block(codec, state_text, kind, action), token_budget, tokenizer)
    return prompt.clip()


def parse_exemplar_actions(codec: Codec, prompt_text: str) -> list[tuple[str, int]]:
    """(state line, action) pairs appearing in the exemplar part of a rendered prompt."""
    pairs = []
    last_state = None
    for line in prompt_text.splitlines():
        s = line.strip()
        try:
            codec.parse_state_line(s)
            last_state = s
            continue
        except ParseFailure:
            pass
        if last_state is not None:
            try:
                pairs.append((last_state, codec.parse_action(s)))
                last_state = None
            except ParseFailure:
                pass
    return pairs
