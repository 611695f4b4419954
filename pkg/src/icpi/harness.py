"""Multi-seed experiment runner, regret curves and CSV aggregation.

Output layout under ``output_dir``::

    config.yaml                              the effective configuration
    <domain>/<algorithm>/seed<k>/runlog.jsonl   one record per episode
    <domain>/<algorithm>/seed<k>/buffer.jsonl   one transition per line
    <domain>/<algorithm>/seed<k>/status.json    {"status": "complete" | "failed", ...}
    <domain>__<algorithm>.csv                timestep,mean_regret,stderr,n_seeds
    summary.json                             per-cell status, failures listed
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .agent import ICPI, EpisodicAgent
from .baselines import NearestNeighbor, NoArgMax, TabularQ
from .environments import ENVIRONMENTS, decode_state
from .exceptions import ConfigurationError
from .replay import ReplayBuffer
from .runlog import RunLog, normalized_regret  # noqa: F401  (re-exported)
from .textcodec import get_codec
from .validation import check_environment

logger = logging.getLogger(__name__)

ALGORITHMS = ("icpi", "no_argmax", "tabular_q", "nearest_neighbor")
BACKENDS = ("oracle", "matching", "remote")


@dataclass
class ExperimentConfig:
    domains: list = field(default_factory=lambda: ["chain"])
    algorithms: list = field(default_factory=lambda: ["icpi"])
    backend: str = "oracle"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    episodes: int = 100
    gamma: float = 0.8
    recency_cutoff: int = 8
    rollout_horizon: int = 8
    hints: bool = True
    balance: bool = True
    constraints: bool = True
    success_only: bool = False
    temperature: float = 0.1
    maze: dict = field(default_factory=dict)
    output_dir: str = "runs"
    jobs: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("domains", "algorithms"):
            if isinstance(data.get(key), str):
                data[key] = [data[key]]
        if isinstance(data.get("seeds"), int) and not isinstance(data.get("seeds"), bool):
            data["seeds"] = list(range(data["seeds"]))
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        cfg = replace(self, **{k: v for k, v in overrides.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.domains:
            raise ConfigurationError("no domains given")
        for d in self.domains:
            if d not in ENVIRONMENTS:
                raise ConfigurationError(f"unknown domain {d!r}; choose from {sorted(ENVIRONMENTS)}")
        if not self.algorithms:
            raise ConfigurationError("no algorithms given")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigurationError(f"unknown algorithm {a!r}; choose from {list(ALGORITHMS)}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}; choose from {list(BACKENDS)}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be a non-empty list of distinct integers")
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigurationError("seeds must be integers")
        if not isinstance(self.episodes, int) or self.episodes < 0:
            raise ConfigurationError("episodes must be a non-negative integer")
        if not 0 < self.gamma < 1:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if self.recency_cutoff < 1 or self.rollout_horizon < 1:
            raise ConfigurationError("recency_cutoff and rollout_horizon must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if "maze" in self.domains and self.maze:
            check_environment("maze", self.maze)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)

    def cells(self):
        for domain in self.domains:
            for algorithm in self.algorithms:
                for seed in self.seeds:
                    yield domain, algorithm, seed


def make_agent(config: ExperimentConfig, domain: str, algorithm: str, seed) -> EpisodicAgent:
    env_kwargs = config.maze if domain == "maze" and config.maze else None
    common = dict(n_episodes=config.episodes, gamma=config.gamma, env_kwargs=env_kwargs, random_state=seed)
    if algorithm == "icpi":
        return ICPI(
            backend=config.backend,
            recency_cutoff=config.recency_cutoff,
            rollout_horizon=config.rollout_horizon,
            hints=config.hints,
            balance=config.balance,
            constraints=config.constraints,
            success_only=config.success_only,
            temperature=config.temperature,
            **common,
        )
    if algorithm == "no_argmax":
        return NoArgMax(
            backend=config.backend,
            recency_cutoff=config.recency_cutoff,
            hints=config.hints,
            temperature=config.temperature,
            **common,
        )
    if algorithm == "tabular_q":
        return TabularQ(**common)
    if algorithm == "nearest_neighbor":
        return NearestNeighbor(
            recency_cutoff=config.recency_cutoff,
            rollout_horizon=config.rollout_horizon,
            hints=config.hints,
            balance=config.balance,
            constraints=config.constraints,
            **common,
        )
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def cell_dir(root, domain, algorithm, seed) -> Path:
    return Path(root) / domain / algorithm / f"seed{seed}"


def _write_json(path: Path, data) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def run_cell(config: ExperimentConfig, domain: str, algorithm: str, seed: int, resume: bool = False) -> dict:
    """Train one (domain, algorithm, seed) run and persist its log, buffer and status."""
    out = cell_dir(config.output_dir, domain, algorithm, seed)
    out.mkdir(parents=True, exist_ok=True)
    status_path = out / "status.json"
    log_path, buffer_path = out / "runlog.jsonl", out / "buffer.jsonl"
    if resume and status_path.exists() and json.loads(status_path.read_text())["status"] == "complete":
        return {"domain": domain, "algorithm": algorithm, "seed": seed, "status": "complete"}

    previous = RunLog()
    buffer = None
    agent = None
    result = {"domain": domain, "algorithm": algorithm, "seed": seed}
    try:
        agent = make_agent(config, domain, algorithm, seed)
        if resume and buffer_path.exists() and log_path.exists():
            buffer = ReplayBuffer.load(buffer_path, lambda v: decode_state(domain, v))
            previous = RunLog.from_jsonl(log_path)
            previous.records = previous.records[: len(buffer)]
            agent.set_params(
                n_episodes=max(0, config.episodes - len(buffer)),
                random_state=int(np.random.SeedSequence([seed, len(buffer)]).generate_state(1)[0]),
            )
        agent.fit(domain, buffer=buffer)
        result["status"] = "complete"
    except Exception as exc:  # per-seed failures must not stop the experiment
        logger.exception("run %s/%s/seed%s failed", domain, algorithm, seed)
        result.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    log = RunLog(previous.records + list(getattr(agent, "run_log_", RunLog()).records))
    log.to_jsonl(log_path)
    if agent is not None and hasattr(agent, "buffer_"):
        agent.buffer_.save(buffer_path, get_codec(agent.env_))
    _write_json(status_path, result)
    return result


def regret_curve(log: RunLog) -> np.ndarray:
    """Per-timestep regret: each episode's regret spans the timesteps it occupied."""
    values = []
    for rec in log.records:
        values.extend([rec.normalized_regret] * rec.steps)
    return np.array(values)


def aggregate_curves(curves: list) -> list[dict]:
    """Mean and standard error across seeds, truncated to the shortest curve."""
    if not curves:
        return []
    n = min(len(c) for c in curves)
    stack = np.stack([c[:n] for c in curves])
    k = len(curves)
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(n)
    return [
        {"timestep": t + 1, "mean_regret": float(mean[t]), "stderr": float(se[t]), "n_seeds": k}
        for t in range(n)
    ]


def write_aggregate(config: ExperimentConfig) -> list[Path]:
    paths = []
    for domain in config.domains:
        for algorithm in config.algorithms:
            curves = []
            for seed in config.seeds:
                log_path = cell_dir(config.output_dir, domain, algorithm, seed) / "runlog.jsonl"
                if log_path.exists():
                    curves.append(regret_curve(RunLog.from_jsonl(log_path)))
            rows = aggregate_curves(curves)
            path = Path(config.output_dir) / f"{domain}__{algorithm}.csv"
            lines = ["timestep,mean_regret,stderr,n_seeds"]
            lines += [f"{r['timestep']},{r['mean_regret']!r},{r['stderr']!r},{r['n_seeds']}" for r in rows]
            tmp = path.with_suffix(".csv.tmp")
            tmp.write_text("\n".join(lines) + "\n")
            os.replace(tmp, path)
            paths.append(path)
    return paths


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(config: ExperimentConfig, resume: bool = False) -> dict:
    """Run every (domain, algorithm, seed) cell, then aggregate. Returns the summary."""
    config.validate()
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.yaml").write_text(config.to_yaml())
    jobs = [(config, d, a, s, resume) for d, a, s in config.cells()]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = [run_cell(*job) for job in jobs]
    write_aggregate(config)
    summary = {
        "runs": results,
        "failed": [r for r in results if r["status"] != "complete"],
    }
    _write_json(root / "summary.json", summary)
    return summary
