"""Stylized Blue-vs-Red battle standing in for the StarCraft 2 scenario.

Blue advances from t=0 and the armies engage from ``engage_at`` onward.
Each engaged step, each side loses Binomial(opponent units, hit_prob)
units, capped at its own strength.  Red receives Uniform{0..N} extra
units at ``reinforce_at``, where the cap N is drawn with the start state
but hidden from the features.  Blue's reward per step is red losses minus
blue losses plus Gaussian noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np


@dataclass(frozen=True)
class BattleConfig:
    horizon: int = 57
    blue_range: tuple = (5, 20)
    red_range: tuple = (5, 10)
    cap_range: tuple = (0, 15)
    engage_at: int = 5
    reinforce_at: int = 14
    hit_prob: float = 0.08
    noise_sd: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.hit_prob <= 1.0:
            raise ValueError(f"hit_prob must lie in [0, 1], got {self.hit_prob}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "blue_range", tuple(self.blue_range))
        object.__setattr__(self, "red_range", tuple(self.red_range))
        object.__setattr__(self, "cap_range", tuple(self.cap_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("blue_range", "red_range", "cap_range"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class BattleState:
    blue: int
    red: int
    t: int = 0
    cap: int = 0
    engaged: bool = False


def battle_step(state: BattleState, rng: np.random.Generator, config: BattleConfig = BattleConfig()):
    """Advance one step.  Returns ``(next_state, reward)``.

    The noise draw happens on every step (even when ``noise_sd`` is 0) so
    that toggling the noise does not shift the other random draws.
    """
    blue, red = state.blue, state.red
    if state.t == config.reinforce_at:
        red += int(rng.integers(0, state.cap + 1))
    engaged = state.engaged or state.t >= config.engage_at
    blue_loss = red_loss = 0
    if engaged:
        blue_loss = min(blue, int(rng.binomial(red, config.hit_prob)))
        red_loss = min(red, int(rng.binomial(blue, config.hit_prob)))
    noise = rng.normal()
    reward = float(red_loss - blue_loss) + config.noise_sd * noise
    nxt = BattleState(blue - blue_loss, red - red_loss, state.t + 1, state.cap, engaged)
    return nxt, reward


class BattleEnv:
    name = "battle"

    def __init__(self, config: BattleConfig = BattleConfig()):
        self.config = config

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def sample_start(self, rng: np.random.Generator) -> BattleState:
        c = self.config
        blue = int(rng.integers(c.blue_range[0], c.blue_range[1] + 1))
        red = int(rng.integers(c.red_range[0], c.red_range[1] + 1))
        cap = int(rng.integers(c.cap_range[0], c.cap_range[1] + 1))
        return BattleState(blue, red, 0, cap, False)

    @staticmethod
    def features(state: BattleState) -> list:
        return [float(state.blue), float(state.red)]

    @staticmethod
    def summary_key(features) -> tuple:
        """(blue units, red units) at the start."""
        return (int(features[0]), int(features[1]))

    def rollout(self, rng: np.random.Generator, horizon: int, start=None):
        state = self.sample_start(rng) if start is None else start
        s0 = state
        rewards = []
        for _ in range(horizon):
            state, r = battle_step(state, rng, self.config)
            rewards.append(r)
        return s0, rewards

    def without_noise(self) -> "BattleEnv":
        return BattleEnv(replace(self.config, noise_sd=0.0))
