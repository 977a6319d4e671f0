"""Adaptive speculative-length selection for continuous-batching LLM serving, in simulation."""

from .baselines import DsdLike, EpsilonGreedy, FixedGamma, LinUCB, NoSpec, Oracle, UCB1
from .cost_model import CostModelParams, PrefillCostTable, get_preset
from .engine import SimConfig, StepOutcome, run, run_fixed_batch
from .policy import NightjarPolicy, SelectionContext
from .workload import LengthDistribution, Request, poisson_workload

__version__ = "0.1.0"
