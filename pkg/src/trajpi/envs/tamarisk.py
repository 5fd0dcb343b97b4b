"""Seven-edge river network invaded by tamarisk, with a rule-based policy.

Edges form a balanced binary tree indexed bottom to top::

        3   4   5   6      top
         \\ /     \\ /
          1       2        middle
           \\     /
              0            bottom

Water and seeds flow from the top edges down to the bottom edge.  Each
edge is Empty, Invaded or Native.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from ..errors import InfeasibleAction, NoFeasibleAction

N_EDGES = 7
BOTTOM = (0,)
MIDDLE = (1, 2)
TOP = (3, 4, 5, 6)
UPSTREAM = {0: (1, 2), 1: (3, 4), 2: (5, 6), 3: (), 4: (), 5: (), 6: ()}


class Edge(IntEnum):
    EMPTY = 0
    INVADED = 1
    NATIVE = 2


class Act(IntEnum):
    NOTHING = 0
    ERADICATE = 1
    PLANT = 2
    ERADICATE_PLANT = 3


@dataclass(frozen=True)
class TamariskConfig:
    horizon: int = 50
    budget: float = 2.0
    cost_eradicate: float = 0.5
    cost_plant: float = 0.9
    cost_eradicate_plant: float = 1.2
    invasion_penalty: float = 0.1
    eradication_success: float = 0.85
    death_prob: float = 0.1
    invaded_weight: float = 2.0
    native_weight: float = 1.0
    exogenous_weight: float = 0.5
    colonization_rate: float = 0.4
    # top-level invaded edges get Eradicate; True switches them to Eradicate+Plant
    top_eradicate_plant: bool = False

    def __post_init__(self):
        for name in ("eradication_success", "death_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")

    @property
    def costs(self) -> tuple:
        return (0.0, self.cost_eradicate, self.cost_plant, self.cost_eradicate_plant)

    def to_dict(self) -> dict:
        return asdict(self)


def action_cost(action, config: TamariskConfig) -> float:
    costs = config.costs
    return math.fsum(costs[a] for a in action)


@lru_cache(maxsize=32)
def feasible_actions(costs: tuple, budget: float) -> np.ndarray:
    """All per-edge action vectors within budget, lexicographically sorted."""
    c = np.asarray(costs)
    grid = np.array(list(itertools.product(range(4), repeat=N_EDGES)), dtype=np.int8)
    total = c[grid].sum(axis=1)
    out = grid[total <= budget + 1e-9]
    out.setflags(write=False)
    return out


def _filters(state, config: TamariskConfig):
    top_act = Act.ERADICATE_PLANT if config.top_eradicate_plant else Act.ERADICATE
    return [
        ([e for e in MIDDLE if state[e] == Edge.EMPTY], Act.PLANT),
        ([e for e in TOP if state[e] == Edge.INVADED], top_act),
        ([e for e in BOTTOM if state[e] == Edge.EMPTY], Act.PLANT),
        ([e for e in MIDDLE if state[e] == Edge.INVADED], Act.ERADICATE_PLANT),
        ([e for e in BOTTOM if state[e] == Edge.INVADED], Act.ERADICATE_PLANT),
    ]


def tamarisk_policy(state, config: TamariskConfig = TamariskConfig()) -> tuple:
    """Fixed management policy.

    Starting from every action vector within budget, each filter keeps the
    vectors that apply its primitive to as many of its target edges as the
    budget allows.  Filters with no target edges, or that no vector can
    satisfy even once, are skipped.  Remaining ties go to the
    lexicographically smallest vector (edge 0 first, NOTHING smallest).
    """
    return _policy(tuple(int(s) for s in state), config)


@lru_cache(maxsize=8192)
def _policy(state: tuple, config: TamariskConfig) -> tuple:
    if config.budget <= 0:
        return (Act.NOTHING,) * N_EDGES
    cand = feasible_actions(config.costs, config.budget)
    if cand.shape[0] == 0:
        raise NoFeasibleAction("no action vector fits the budget")
    for edges, prim in _filters(state, config):
        if cand.shape[0] == 1:
            break
        if not edges:
            continue
        hits = (cand[:, edges] == prim).sum(axis=1)
        best = hits.max()
        if best > 0:
            cand = cand[hits == best]
    # feasible_actions is lexicographically sorted, so the first row is the minimum
    return tuple(Act(int(a)) for a in cand[0])


def tamarisk_step(state, action, rng: np.random.Generator, config: TamariskConfig = TamariskConfig()):
    """Apply ``action`` and advance one step.  Returns ``(next_state, reward)``.

    Order of events: the reward is charged on the current state, actions
    resolve (eradication may fail), occupied edges may die, then empty
    edges may be colonized from upstream occupants and outside sources.
    """
    state = [Edge(int(s)) for s in state]
    action = [Act(int(a)) for a in action]
    if len(state) != N_EDGES or len(action) != N_EDGES:
        raise ValueError("state and action must both have 7 entries")
    cost = action_cost(action, config)
    if cost > config.budget + 1e-9:
        raise InfeasibleAction(f"action cost {cost:.6g} exceeds budget {config.budget:.6g}")
    invaded = sum(1 for s in state if s == Edge.INVADED)
    reward = -(cost + config.invasion_penalty * invaded)
    u = rng.random((4, N_EDGES))

    nxt = list(state)
    for e, a in enumerate(action):
        if a in (Act.ERADICATE, Act.ERADICATE_PLANT) and nxt[e] == Edge.INVADED:
            if u[0, e] < config.eradication_success:
                nxt[e] = Edge.EMPTY
        if a in (Act.PLANT, Act.ERADICATE_PLANT) and nxt[e] == Edge.EMPTY:
            nxt[e] = Edge.NATIVE

    for e in range(N_EDGES):
        if nxt[e] != Edge.EMPTY and u[1, e] < config.death_prob:
            nxt[e] = Edge.EMPTY

    snapshot = list(nxt)
    for e in range(N_EDGES):
        if snapshot[e] != Edge.EMPTY:
            continue
        up = UPSTREAM[e]
        w_inv = config.exogenous_weight + config.invaded_weight * sum(snapshot[k] == Edge.INVADED for k in up)
        w_nat = config.exogenous_weight + config.native_weight * sum(snapshot[k] == Edge.NATIVE for k in up)
        total = w_inv + w_nat
        if total <= 0:
            continue
        if u[2, e] < 1.0 - math.exp(-config.colonization_rate * total):
            nxt[e] = Edge.INVADED if u[3, e] * total < w_inv else Edge.NATIVE
    if reward == 0.0:
        reward = 0.0  # no negative zero in outputs
    return tuple(nxt), reward


class TamariskEnv:
    name = "tamarisk"

    def __init__(self, config: TamariskConfig = TamariskConfig()):
        self.config = config

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def sample_start(self, rng: np.random.Generator) -> tuple:
        return tuple(Edge(int(v)) for v in rng.integers(0, 3, N_EDGES))

    @staticmethod
    def features(state) -> list:
        return [float(int(s)) for s in state]

    @staticmethod
    def summary_key(features) -> tuple:
        """(native count, tamarisk count) of a starting state."""
        f = [int(v) for v in features]
        return (sum(v == Edge.NATIVE for v in f), sum(v == Edge.INVADED for v in f))

    def rollout(self, rng: np.random.Generator, horizon: int, start=None):
        state = self.sample_start(rng) if start is None else tuple(Edge(int(s)) for s in start)
        s0 = state
        rewards = []
        for _ in range(horizon):
            action = tamarisk_policy(state, self.config)
            state, r = tamarisk_step(state, action, rng, self.config)
            rewards.append(r)
        return s0, rewards
