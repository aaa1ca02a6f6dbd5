"""Interface every sampling distribution implements."""

from ..ssm import measurement_logpdf, transition_logpdf


class Proposal:
    """Base class providing the generic importance-weight rule."""

    name = "proposal"

    def initial_memory(self, K: int):
        return None

    def sample(self, t, x_prev, y, memory, rng):
        raise NotImplementedError

    def log_weight_increment(self, model, t, x_prev, y, x, log_pi):
        return measurement_logpdf(model, x, y) + transition_logpdf(model, x_prev, x) - log_pi
