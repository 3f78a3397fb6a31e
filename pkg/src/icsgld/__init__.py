"""Interacting contour stochastic gradient Langevin dynamics.

Parallel chains share one set of self-adapting energy-bin weights; each chain
runs Langevin dynamics on a flattened density, so it can cross the energy
barriers that trap plain SGLD, and importance weights recover expectations
under the original target.
"""

from .contour import ContourParams, Partition, Theta, evaluate_psi, gradient_multiplier, partition_index, sa_update
from .errors import ConfigError, InputError, NumericalError, StateError
from .interaction import ContourSetup, Trajectory, run_interacting
from .samplers import (ChainState, LearningRateSchedule, StepSizeSchedule, csgld_step, icsgld_round, make_chains,
                       sgld_step)
from .targets import AnalyticTarget, DatasetTarget, gaussian_mixture_1d, multimodal25, quadratic

__version__ = "0.1.0"

__all__ = ["AnalyticTarget", "ChainState", "ConfigError", "ContourParams", "ContourSetup", "DatasetTarget",
           "InputError", "LearningRateSchedule", "NumericalError", "Partition", "StateError", "StepSizeSchedule",
           "Theta", "Trajectory", "csgld_step", "evaluate_psi", "gaussian_mixture_1d", "gradient_multiplier",
           "icsgld_round", "make_chains", "multimodal25", "partition_index", "quadratic", "run_interacting",
           "sa_update", "sgld_step"]
