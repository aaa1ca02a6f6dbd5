from .gaussian import GaussianProposalParams, gaussian_sample, kernel_covariance, reparam_sample
from .learned import (
    FAMILIES, GNNProposal, MLPProposal, ProposalConfig, PsiProposal, RNNProposal,
    build_proposal, init_params,
)
from .store import ParamStore

__all__ = [
    "FAMILIES", "GNNProposal", "GaussianProposalParams", "MLPProposal", "ParamStore",
    "ProposalConfig", "PsiProposal", "RNNProposal", "build_proposal", "gaussian_sample",
    "init_params", "kernel_covariance", "reparam_sample",
]
