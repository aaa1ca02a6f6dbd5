from . import autodiff
from .adam import AdamState, adam_step
from .autodiff import Tape, Var, backward
from .linalg import cholesky, gaussian_logpdf, spectral_norm
from .nn import graph_filter, init_graph_filter, init_lstm, init_mlp, lstm_step, mlp_forward
from .rng import make_rng, stable_id

__all__ = [
    "AdamState", "Tape", "Var", "adam_step", "autodiff", "backward", "cholesky",
    "gaussian_logpdf", "graph_filter", "init_graph_filter", "init_lstm", "init_mlp",
    "lstm_step", "make_rng", "mlp_forward", "spectral_norm", "stable_id",
]
