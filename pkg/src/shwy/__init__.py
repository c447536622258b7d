"""shwy: a desk-scale workbench for highway-driving agents.

Trains and evaluates three policy regimes on a built-in multi-lane
simulator: RL-only DQN, LLM-only prompted control, and hybrid DQN trained
under LLM reward shaping (deployed with no runtime LLM dependency).
"""

__version__ = "0.1.0"

import os as _os

# Small-matrix workloads: a threaded BLAS only adds overhead, and a fixed
# thread count keeps training runs byte-reproducible.  Only effective when
# this package is imported before numpy initializes.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from .kernel import BACKEND as KERNEL_BACKEND
from .observation import Observation, extract_observation, lane_ttc
from .rewards import (
    ShapingKind,
    ShapingScheme,
    env_reward,
    normalize_score,
    shape_averaged,
    shape_centered,
    shape_dense,
)
from .scenario import ScenarioConfig, ScenarioKind, scenario_preset
from .simulate import MetaAction, SimState, StepInfo, VehicleState, check_collision, reset, step

__all__ = [
    "KERNEL_BACKEND",
    "MetaAction",
    "Observation",
    "ScenarioConfig",
    "ScenarioKind",
    "ShapingKind",
    "ShapingScheme",
    "SimState",
    "StepInfo",
    "VehicleState",
    "__version__",
    "check_collision",
    "env_reward",
    "extract_observation",
    "lane_ttc",
    "normalize_score",
    "reset",
    "scenario_preset",
    "shape_averaged",
    "shape_centered",
    "shape_dense",
    "step",
]
