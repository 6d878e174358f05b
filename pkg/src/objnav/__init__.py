"""Desk-scale object-goal navigation engine.

A deterministic grid world stands in for the simulator; every model role
(detector, pruner, captioner, planner, verifier) is pluggable between a
deterministic oracle and a remote chat-completion endpoint; a browser UI can
take the planner's seat for human-baseline runs.
"""

__version__ = "0.1.0"

from .harness import RunConfig, aggregate, bundled_suite, run_ablation_suite, run_episode, run_suite
from .world import EpisodeSpec, GridScene, GridWorld, Pose, load_episodes, load_scene

__all__ = [
    "EpisodeSpec", "GridScene", "GridWorld", "Pose",
    "RunConfig", "aggregate", "bundled_suite",
    "load_episodes", "load_scene",
    "run_ablation_suite", "run_episode", "run_suite",
    "__version__",
]
