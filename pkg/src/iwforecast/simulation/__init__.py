"""Random variates and Monte Carlo experiments."""

from __future__ import annotations

from .distributions import DistributionSpec
from .engine import Design, MonteCarloConfig, PointDraws, simulate_point
from .experiments import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    NamedDesign,
    load_config,
    preset_config,
    run_experiment,
    theta_grid_from_ratios,
)
from .streams import batch_means_se, block_rng

__all__ = [
    "DistributionSpec",
    "Design",
    "MonteCarloConfig",
    "PointDraws",
    "simulate_point",
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "NamedDesign",
    "load_config",
    "preset_config",
    "run_experiment",
    "theta_grid_from_ratios",
    "batch_means_se",
    "block_rng",
]
