"""Per-episode training records and regret normalisation."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

logger = logging.getLogger(__name__)


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    total = 0.0
    for k, r in enumerate(rewards):
        total += gamma**k * r
    return total


def normalized_regret(achieved: float, optimal: float) -> float:
    """``(optimal - achieved) / optimal`` clamped to [0, 1]; 0 when ``optimal`` is 0."""
    if optimal <= 0:
        logger.warning("optimal value %r is not positive; regret defined as 0", optimal)
        return 0.0
    return min(1.0, max(0.0, (optimal - achieved) / optimal))


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    timesteps: int  # cumulative environment steps at the end of the episode
    undiscounted_return: float
    discounted_return: float
    optimal_value: float
    normalized_regret: float
    wall_clock: float
    tokens: int = 0


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    aborted: bool = False

    def __len__(self):
        return len(self.records)

    def append(self, record: EpisodeRecord) -> None:
        self.records.append(record)

    @property
    def regrets(self) -> list[float]:
        return [r.normalized_regret for r in self.records]

    def to_jsonl(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_jsonl(cls, path) -> "RunLog":
        with open(path) as fh:
            return cls([EpisodeRecord(**json.loads(line)) for line in fh if line.strip()])
