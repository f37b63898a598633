"""Stochastic sequential dual methods for nested compositional optimization."""
from .core import (ArgType, Ball, Box, CompositionProblem, DualSample, LayerBounds, LayerDual,
                   LayerKind, Regularizer, SSDError, eval_composition, gap_Q, lagrangian,
                   stochastic_lagrangian)
from .harness import ExperimentConfig, load_config, run_experiment, slope_estimate
from .multilayer import run_restarted, run_ssd
from .policies import Regime
from .reference import ReferenceSolution, reference_solve
from .vanilla import run_vanilla

__all__ = [
    "ArgType", "Ball", "Box", "CompositionProblem", "DualSample", "ExperimentConfig", "LayerBounds",
    "LayerDual", "LayerKind", "ReferenceSolution", "Regime", "Regularizer", "SSDError",
    "eval_composition", "gap_Q", "lagrangian", "load_config", "reference_solve", "run_experiment",
    "run_restarted", "run_ssd", "run_vanilla", "slope_estimate", "stochastic_lagrangian",
]
