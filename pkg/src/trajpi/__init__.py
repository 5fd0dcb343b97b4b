"""Distribution-free prediction intervals for vectors and MDP trajectories."""
import os

# TBB shipped in some images is too old for numba; OpenMP is always fine.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
