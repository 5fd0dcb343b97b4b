"""Trajectory sampling and line-delimited trajectory files."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ..errors import SchemaMismatch
from ..seeding import stream
from .battle import BattleConfig, BattleEnv
from .tamarisk import TamariskConfig, TamariskEnv

__all__ = [
    "TrajectoryRecord",
    "TrajectorySet",
    "make_env",
    "read_trajectories",
    "sample_trajectories",
    "write_trajectories",
]

ENVS = {"tamarisk": (TamariskEnv, TamariskConfig), "battle": (BattleEnv, BattleConfig)}


@dataclass
class TrajectoryRecord:
    id: int
    start_features: list
    rewards: list
    behavior: list = field(default=None)

    def __post_init__(self):
        if self.behavior is None:
            self.behavior = np.cumsum(self.rewards).tolist()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "start_features": list(self.start_features),
            "rewards": list(self.rewards),
            "behavior": list(self.behavior),
        }


@dataclass
class TrajectorySet:
    """Column view over a list of records."""

    ids: np.ndarray
    features: np.ndarray
    rewards: np.ndarray
    behavior: np.ndarray

    @classmethod
    def from_records(cls, records) -> "TrajectorySet":
        records = list(records)
        return cls(
            np.array([r.id for r in records], dtype=np.int64),
            np.array([r.start_features for r in records], dtype=float),
            np.array([r.rewards for r in records], dtype=float),
            np.array([r.behavior for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, rows) -> "TrajectorySet":
        return TrajectorySet(self.ids[rows], self.features[rows], self.rewards[rows], self.behavior[rows])


def make_env(name: str, config=None, **overrides):
    try:
        env_cls, cfg_cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    if config is None:
        config = cfg_cls(**overrides)
    elif isinstance(config, dict):
        config = cfg_cls(**{**config, **overrides})
    return env_cls(config)


def _one(env, seed: int, traj_id: int, horizon: int) -> TrajectoryRecord:
    # each trajectory owns a counter-based stream keyed by (seed, id)
    rng = stream(seed, env.name, traj_id)
    s0, rewards = env.rollout(rng, horizon)
    return TrajectoryRecord(traj_id, env.features(s0), rewards)


def sample_trajectories(env, n: int, horizon: Optional[int] = None, seed: int = 0,
                        workers: int = 1, first_id: int = 0) -> list:
    """``n`` independent rollouts of the env's fixed policy.

    Output depends only on ``(env config, n, horizon, seed, first_id)``,
    never on ``workers``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    H = env.horizon if horizon is None else horizon
    if H < 1:
        raise ValueError(f"horizon must be >= 1, got {H}")
    ids = range(first_id, first_id + n)
    if workers <= 1:
        return [_one(env, seed, i, H) for i in ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: _one(env, seed, i, H), ids))


def write_trajectories(path, records: Iterable[TrajectoryRecord], header: Optional[dict] = None) -> None:
    """One JSON object per line; an optional first line ``{"header": ...}``."""
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_trajectories(path):
    """Returns ``(records, header)``; header is ``None`` when absent."""
    records, header = [], None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "header" in obj:
            header = obj["header"]
            continue
        missing = {"id", "start_features", "rewards", "behavior"} - obj.keys()
        if missing:
            raise SchemaMismatch(f"{path}:{lineno}: record lacks {sorted(missing)}")
        records.append(TrajectoryRecord(obj["id"], obj["start_features"], obj["rewards"], obj["behavior"]))
    if records:
        H = len(records[0].behavior)
        d = len(records[0].start_features)
        for r in records:
            if len(r.behavior) != H or len(r.start_features) != d:
                raise SchemaMismatch(f"{path}: record {r.id} has inconsistent lengths")
    return records, header
