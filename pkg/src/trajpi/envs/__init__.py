"""Data generators: MDP simulators and synthetic samplers."""
from .battle import BattleConfig, BattleEnv, BattleState, battle_step
from .synthetic import gen_gaussian, gen_t1, true_t1_quantile
from .tamarisk import Act, Edge, TamariskConfig, TamariskEnv, tamarisk_policy, tamarisk_step
from .trajectories import (
    TrajectoryRecord,
    TrajectorySet,
    make_env,
    read_trajectories,
    sample_trajectories,
    write_trajectories,
)
