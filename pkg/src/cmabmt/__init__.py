"""Combinatorial bandits with multivariant, probabilistically triggered arms.

Modules: :mod:`framework` (the CUCB-MT loop), :mod:`episodic`
(tabular RL oracles), :mod:`pmcgd` (coverage application), :mod:`harness`
(experiments) and :mod:`audits` (invariant checks).
"""
from .framework import ArmStatistics, TriggeredObservation, confidence_radius, run_cucb_mt
from .harness import ExperimentConfig, load_config, run_experiment, summarize_slope

__all__ = ["ArmStatistics", "TriggeredObservation", "confidence_radius", "run_cucb_mt",
           "ExperimentConfig", "load_config", "run_experiment", "summarize_slope"]
__version__ = "0.1.0"
