"""Locally optimal multi-robot formations for range-based relative pose estimation.

The package computes formations that maximize the Fisher information of
inter-tag range measurements about the relative poses, descends the resulting
cost on the pose manifold with a collision barrier, and validates formations
with an on-manifold Gauss-Newton estimator driven by Monte-Carlo trials.
"""

__version__ = "0.1.0"

from .manifold import GroupMode, Pose, StateTuple  # noqa: F401
from .scenario import Scenario, load_scenario, write_scenario  # noqa: F401
from .presets import PRESETS, preset  # noqa: F401
