"""Particle filtering with designed and learned sampling distributions."""

from .errors import (
    AggregationError, ConfigError, ContractError, DegeneracyError, DimensionError,
    LearnedPFError, NumericalError, StoreError, UndefinedMetricError,
)
from .filtering import (
    BootstrapProposal, FilterResult, MinDegeneracyProposal, ParticleEnsemble,
    effective_sample_size, kalman_filter, normalize_weights, resample, run_filter,
)
from .proposals import ParamStore, ProposalConfig, build_proposal, init_params
from .ssm import ModelSpec, NoiseLaw, SirParams, Trajectory, make_scenario, simulate, sir_model
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"
