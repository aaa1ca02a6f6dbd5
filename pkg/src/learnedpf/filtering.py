"""Sequential importance sampling with resampling, designed proposals and the Kalman filter.

Weights are kept in the log domain.  A proposal is any object with

``sample(t, x_prev, y, memory, rng) -> (x, log_pi, memory)``

working on whole particle batches (``x_prev`` is ``(K, N)``), an
``initial_memory(K)`` method, and optionally ``log_weight_increment`` to
override the generic ``log p(y|x) + log p(x|x_prev) - log pi`` rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, DegeneracyError, NumericalError
from .numerics.linalg import cholesky, gaussian_logpdf
from .proposals.gaussian import GaussianProposalParams, gaussian_sample
from .proposals.base import Proposal
from .ssm import ModelSpec, initial_logpdf, measurement_logpdf, transition_logpdf


@dataclass
class ParticleEnsemble:
    states: np.ndarray          # (K, N)
    log_weights: np.ndarray     # (K,), normalized after every step
    memory: Optional[tuple] = None
    t: int = 0

    @property
    def K(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return normalize_weights(self.log_weights)


def normalize_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise DegeneracyError("all particle weights are zero")
    return np.exp(lw - logsumexp(lw))


def _log_normalize(log_weights, t=None) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise NumericalError(f"invalid log-weight at t={t}")
    if not np.any(np.isfinite(lw)):
        raise DegeneracyError("all particle weights are zero", t=t)
    return lw - logsumexp(lw)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def resample(ensemble: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    """Multinomial resampling; memories travel with their ancestors."""
    K = ensemble.K
    # inverse-CDF lookup of K i.i.d. uniforms, generated already sorted (normalized
    # exponential spacings), so the lookup walks the CDF once; particle order is immaterial
    cdf = np.cumsum(ensemble.weights)
    spacings = np.cumsum(rng.standard_exponential(K + 1))
    u = spacings[:K] / spacings[K] * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), K - 1)
    memory = None if ensemble.memory is None else tuple(m[idx] for m in ensemble.memory)
    return ParticleEnsemble(ensemble.states[idx], np.full(K, -np.log(K)), memory, ensemble.t)


def estimate(ensemble: ParticleEnsemble, f: Optional[Callable] = None) -> np.ndarray:
    """Weighted average of ``f`` over particles; ``f`` defaults to the current state."""
    vals = ensemble.states if f is None else np.asarray(f(ensemble.states))
    return np.tensordot(ensemble.weights, vals, axes=(0, 0))


class BootstrapProposal(Proposal):
    """Samples from the transition prior; the weight increment is the likelihood."""

    name = "bootstrap"

    def __init__(self, model: ModelSpec):
        self.model = model

    def sample(self, t, x_prev, y, memory, rng):
        m = self.model
        noise = m.state_noise.sample(x_prev.shape, rng)
        return m.transition_mean(x_prev) + noise, m.state_noise.logpdf(noise), memory

    def log_weight_increment(self, model, t, x_prev, y, x, log_pi):
        return measurement_logpdf(model, x, y)


def min_degeneracy_proposal(model: ModelSpec, x_prev, y) -> GaussianProposalParams:
    """Exact ``p(x_t | x_{t-1}, y_t)`` for Gaussian noise (moment-matched otherwise)."""
    sv, sw = model.state_noise.variance, model.measurement_noise.variance
    C = model.C
    precision = np.eye(model.N) / sv + C.T @ C / sw
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    prior_mean = model.transition_mean(np.asarray(x_prev, dtype=float))
    mean = (prior_mean / sv + (C.T @ np.asarray(y)) / sw) @ cov.T
    return GaussianProposalParams(mean, cov, cholesky(cov))


def min_degeneracy_log_increment(model: ModelSpec, x_prev, y) -> np.ndarray:
    """``log p(y_t | x_{t-1})`` with the Gaussian predictive ``N(C phi(A x), sv C C^T + sw I)``."""
    sv, sw = model.state_noise.variance, model.measurement_noise.variance
    C = model.C
    S = sv * C @ C.T + sw * np.eye(model.M)
    mean = model.measurement_mean(model.transition_mean(np.asarray(x_prev, dtype=float)))
    return gaussian_logpdf(np.asarray(y), mean, cholesky(S))


class MinDegeneracyProposal(Proposal):
    """Optimal-variance proposal; a Gaussian surrogate outside the linear-Gaussian case."""

    name = "mindeg"

    def __init__(self, model: ModelSpec):
        self.model = model
        self.gaussian_surrogate = not model.linear_gaussian

    def sample(self, t, x_prev, y, memory, rng):
        params = min_degeneracy_proposal(self.model, x_prev, y)
        x, log_pi = gaussian_sample(params, rng)
        return x, log_pi, memory

    def log_weight_increment(self, model, t, x_prev, y, x, log_pi):
        return min_degeneracy_log_increment(model, x_prev, y)


def sis_step(ensemble: ParticleEnsemble, proposal, model: ModelSpec, y, rng) -> ParticleEnsemble:
    """Propagate every particle one step and update its log-weight.

    Particles that already have zero weight are frozen: they keep their
    state and weight and are never checked, since they cannot contribute to
    any estimate and are dropped at the next resampling.
    """
    t = ensemble.t + 1
    x_prev = ensemble.states
    alive = np.isfinite(ensemble.log_weights)
    with np.errstate(all="ignore"):
        x, log_pi, memory = proposal.sample(t, x_prev, y, ensemble.memory, rng)
        x = np.asarray(x, dtype=float)
        bad = alive & ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            raise NumericalError(f"proposal returned a non-finite sample for particle "
                                 f"{int(np.argmax(bad))} at t={t}")
        x = np.where(alive[:, None], x, x_prev)
        if memory is not None and ensemble.memory is not None:
            memory = tuple(np.where(alive[:, None], new, old)
                           for new, old in zip(memory, ensemble.memory))
        inc = proposal.log_weight_increment(model, t, x_prev, y, x, log_pi)
    inc = np.where(alive, inc, -np.inf)
    lw = _log_normalize(ensemble.log_weights + inc, t)
    return ParticleEnsemble(x, lw, memory, t)


def initial_ensemble(model: ModelSpec, proposal, y0, K: int, rng) -> ParticleEnsemble:
    """Particles drawn from the initial law, weighted by the first measurement."""
    x0 = model.sample_initial(K, rng)
    lw = _log_normalize(measurement_logpdf(model, x0, y0) - np.log(K), 0)
    return ParticleEnsemble(x0, lw, proposal.initial_memory(K), 0)


@dataclass
class FilterResult:
    estimates: np.ndarray   # (T+1, N)
    ess: np.ndarray         # (T+1,)
    resampled: np.ndarray   # (T+1,) bool
    meta: dict = field(default_factory=dict)


def run_filter(model: ModelSpec, proposal, measurements, K: int, threshold_ratio: float,
               rng: np.random.Generator) -> FilterResult:
    """Filter ``y_{0:T}``; resample whenever ESS drops below ``threshold_ratio * K``."""
    if not 0.0 < threshold_ratio <= 1.0:
        raise ContractError("threshold_ratio must lie in (0, 1]")
    if K < 1:
        raise ContractError("need at least one particle")
    ys = np.asarray(measurements, dtype=float)
    T = len(ys) - 1
    est = np.empty((T + 1, model.N))
    ess = np.empty(T + 1)
    flags = np.zeros(T + 1, dtype=bool)
    ens = initial_ensemble(model, proposal, ys[0], K, rng)
    for t in range(T + 1):
        if t > 0:
            ens = sis_step(ens, proposal, model, ys[t], rng)
        w = ens.weights
        est[t] = np.tensordot(w, ens.states, axes=(0, 0))
        ess[t] = effective_sample_size(w)
        if ess[t] < threshold_ratio * K:
            ens = resample(ens, rng)
            flags[t] = True
    meta = {"proposal": getattr(proposal, "name", type(proposal).__name__),
            "gaussian_surrogate": bool(getattr(proposal, "gaussian_surrogate", False))}
    return FilterResult(est, ess, flags, meta)


def write_diagnostics_csv(path, result: FilterResult) -> None:
    N = result.estimates.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ess", "resampled"] + [f"estimate_{i + 1}" for i in range(N)])
        for t in range(len(result.ess)):
            w.writerow([t, repr(float(result.ess[t])), int(result.resampled[t])]
                       + [repr(float(v)) for v in result.estimates[t]])


@dataclass
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


def kalman_filter(model: ModelSpec, measurements) -> list[KalmanState]:
    """Exact posterior moments of ``x_t | y_{0:t}`` for a linear-Gaussian model."""
    if not model.linear_gaussian:
        raise ContractError("the Kalman filter needs a linear model with Gaussian noise")
    A, C = model.A, model.C
    Q = model.state_noise.variance * np.eye(model.N)
    R = model.measurement_noise.variance * np.eye(model.M)
    eye = np.eye(model.N)
    m = model.initial_mean.copy()
    P = model.initial_cov
    out = []
    for t, y in enumerate(np.asarray(measurements, dtype=float)):
        if t > 0:
            m = A @ m
            P = A @ P @ A.T + Q
        S = C @ P @ C.T + R
        G = np.linalg.solve(S, C @ P).T
        m = m + G @ (y - C @ m)
        IKC = eye - G @ C
        P = IKC @ P @ IKC.T + G @ R @ G.T
        P = 0.5 * (P + P.T)
        out.append(KalmanState(m.copy(), P.copy()))
    return out
