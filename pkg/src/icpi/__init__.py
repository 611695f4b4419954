"""In-context policy iteration with pluggable sequence models."""

from .agent import ICPI, PromptSettings, RolloutTrace, q_estimate, select_action, train
from .baselines import SUCCESS_THRESHOLDS, NearestNeighbor, NoArgMax, TabularQ
from .environments import ENVIRONMENTS, action_space, make, optimal_value
from .exceptions import BackendUnavailable, ConfigurationError, EpisodeFinishedError, ParseFailure
from .models import MatchingBackend, OracleBackend, RemoteBackend
from .replay import ReplayBuffer, Trajectory, Transition
from .runlog import RunLog, normalized_regret

__all__ = [
    "ICPI",
    "NearestNeighbor",
    "NoArgMax",
    "TabularQ",
    "PromptSettings",
    "RolloutTrace",
    "q_estimate",
    "select_action",
    "train",
    "SUCCESS_THRESHOLDS",
    "ENVIRONMENTS",
    "action_space",
    "make",
    "optimal_value",
    "BackendUnavailable",
    "ConfigurationError",
    "EpisodeFinishedError",
    "ParseFailure",
    "MatchingBackend",
    "OracleBackend",
    "RemoteBackend",
    "ReplayBuffer",
    "Trajectory",
    "Transition",
    "RunLog",
    "normalized_regret",
]
