"""Unsupervised maximum-likelihood training of learnable proposals.

Particles are rolled forward with reparametrized draws, so every sample is a
differentiable function of the proposal parameters.  The loss is the negative
sum over steps and particles of ``log p(x_t | x_{t-1}) + log p(y_t | x_t)``;
particle weights only decide when and how to resample, and the resampling
indices are treated as constants.  By default a sampled state is also a
constant once it becomes the conditioning state of the next step.  Only measurements enter this module.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .filtering import effective_sample_size, measurement_logpdf, transition_logpdf
from .numerics import autodiff as ad
from .numerics.adam import AdamState, adam_step
from .numerics.rng import make_rng, stable_id
from .proposals.learned import LearnedProposal, ProposalConfig, build_proposal, init_params
from .proposals.store import ParamStore
from .ssm import ModelSpec, Trajectory

DENSITY_FLOOR = 1e-12
LOG_DENSITY_FLOOR = float(np.log(DENSITY_FLOOR))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    particles: int = 10
    clip_norm: float = 10.0
    threshold_ratio: float = 1.0 / 3.0
    seed: int = 0
    detach_states: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.particles < 1:
            raise ConfigError("need at least one training particle")
        if not self.clip_norm > 0:
            raise ConfigError("clip norm must be positive")
        if not 0 < self.threshold_ratio <= 1:
            raise ConfigError("threshold_ratio must lie in (0, 1]")


@dataclass
class TrainReport:
    losses: np.ndarray
    grad_norms: np.ndarray
    floor_hits: np.ndarray
    wall_clock: float
    checksum: str
    meta: dict = field(default_factory=dict)


def _floored(law, r):
    """Log-density of residual rows ``r`` with off-support rows floored; also returns those rows."""
    value, outside = law.logpdf_ad(r)
    bad = outside | ~np.isfinite(np.asarray(ad.value_of(value)))
    if not np.any(bad):
        return value, bad
    # off the support: the floor, lowered by the distance to the support so the
    # gradient still points back inside
    viol = law.support_violation(r)
    floor = LOG_DENSITY_FLOOR - ad.where(np.isfinite(ad.value_of(viol)), viol, 0.0)
    return ad.where(bad, floor, value), bad


def step_loss(model: ModelSpec, x, x_prev, y, mask=None):
    """``-sum_k [log p(x_k | x_prev_k) + log p(y | x_k)]`` with floored log-densities.

    A term whose residual falls off the noise support is replaced by
    ``log(floor) - d``, with ``d`` the distance to the support in noise
    standard deviations.  ``mask`` optionally restricts the sum to some
    particles.  Returns ``(loss, floor_hits)``, where ``floor_hits`` counts
    the replaced terms.
    """
    y = np.asarray(y, dtype=float)
    trans, bad_t = _floored(model.state_noise, x - model.transition_mean(x_prev))
    meas, bad_m = _floored(model.measurement_noise, y - model.measurement_mean(x))
    terms = trans + meas
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        terms = ad.where(mask, terms, 0.0)
        bad_t, bad_m = bad_t & mask, bad_m & mask
    return -ad.sum_(terms), int(np.count_nonzero(bad_t) + np.count_nonzero(bad_m))


def _resample_indices(log_weights, threshold_ratio, rng):
    K = len(log_weights)
    finite = np.isfinite(log_weights)
    if not np.any(finite):
        return None
    w = np.exp(log_weights - np.max(log_weights[finite]))
    w /= w.sum()
    if effective_sample_size(w) >= threshold_ratio * K:
        return None
    return rng.choice(K, size=K, replace=True, p=w)


def _floored_value(law, r):
    value, _ = _floored(law, r)
    return np.asarray(ad.value_of(value), dtype=float)


def _drop_diverged(model, x_prev, memory, lw, rng, t):
    """Replace particles whose next transition mean is not finite.

    Unstable dynamics can blow a particle up to overflow within a few steps.
    Such particles carry no usable gradient, so they are resampled away from
    the surviving ones before the next proposal is evaluated.
    """
    with np.errstate(all="ignore"):
        f = model.transition_mean(ad.value_of(x_prev))
    alive = np.all(np.isfinite(f), axis=1) & np.isfinite(lw)
    if np.all(alive):
        return x_prev, memory, lw
    if not np.any(alive):
        raise NumericalError(f"every training particle diverged before step {t}")
    w = np.where(alive, np.exp(lw - np.max(lw[alive])), 0.0)
    idx = rng.choice(len(lw), size=len(lw), replace=True, p=w / w.sum())
    if memory is not None:
        memory = tuple(ad.getitem(m, idx) for m in memory)
    return ad.getitem(x_prev, idx), memory, np.zeros(len(lw))


def rollout_loss(model, proposal, ys, params, K, threshold_ratio, rng, detach_states=True):
    """One reparametrized pass over ``y_{0:T}``; returns ``(loss, floor_hits)``.

    With ``detach_states`` the sampled states enter the next step as
    constants, so the step-``t`` term only differentiates the parameters used
    at step ``t`` (recurrent memories still carry gradients through time).
    The importance weights that drive resampling use the same floored
    densities as the loss, so no particle ever has exactly zero weight and
    those furthest off the support are the first to be dropped.  Particles
    that overflow are resampled away; if all of them do, NumericalError.
    """
    T = len(ys) - 1
    x_prev = model.sample_initial(K, rng)
    lw = _floored_value(model.measurement_noise, ys[0] - model.measurement_mean(x_prev))
    memory = proposal.initial_memory(K)
    total, hits = None, 0
    for t in range(T + 1):
        if t > 0:
            x_prev, memory, lw = _drop_diverged(model, x_prev, memory, lw, rng, t)
            x, log_pi, memory = proposal.rsample(t, x_prev, ys[t], memory, params, rng)
            loss_t, h = step_loss(model, x, x_prev, ys[t])
            total = loss_t if total is None else total + loss_t
            hits += h
            xv, pv = ad.value_of(x), ad.value_of(x_prev)
            lw = (lw + _floored_value(model.measurement_noise, ys[t] - model.measurement_mean(xv))
                  + _floored_value(model.state_noise, xv - model.transition_mean(pv)) - log_pi)
            x_prev = ad.detach(x) if detach_states else x
        idx = _resample_indices(lw, threshold_ratio, rng)
        if idx is not None:
            x_prev = ad.getitem(x_prev, idx)
            if memory is not None:
                memory = tuple(ad.getitem(m, idx) for m in memory)
            lw = np.zeros(K)
    return total, hits


def train(model: ModelSpec, measurements, proposal: Union[ProposalConfig, LearnedProposal],
          config: TrainConfig = TrainConfig()):
    """Fit proposal parameters to ``measurements`` (``y_{0:T}``, shape ``(T+1, M)``).

    ``proposal`` is either a :class:`ProposalConfig` (fresh parameters drawn
    from the seed) or an existing proposal whose parameters are the starting
    point.  Returns ``(store, report)``; the input store is not modified.
    """
    if isinstance(measurements, Trajectory):
        raise ContractError("train takes measurements only, not a trajectory")
    ys = np.asarray(measurements, dtype=float)
    if ys.ndim != 2 or ys.shape[1] != model.M:
        raise ContractError(f"measurements must have shape (T+1, {model.M}), got {ys.shape}")
    T = len(ys) - 1
    if T < 1:
        raise ContractError("training needs at least one transition (T >= 1)")
    if isinstance(proposal, ProposalConfig):
        store = init_params(model, T, proposal, make_rng(config.seed, stable_id("init")))
        proposal = build_proposal(model, store, proposal, T)
    else:
        store = proposal.store.copy()
        proposal = build_proposal(model, store, proposal.config, proposal.T)
        if proposal.T < T:
            raise ContractError(f"proposal covers {proposal.T} steps, measurements have {T}")

    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    losses = np.empty(config.epochs)
    norms = np.empty(config.epochs)
    floor_hits = np.zeros(config.epochs, dtype=int)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        rng = make_rng(config.seed, stable_id("epoch"), epoch)
        tape = ad.Tape()
        params = tape.params_from(store)
        loss, hits = rollout_loss(model, proposal, ys, params, config.particles,
                                  config.threshold_ratio, rng, config.detach_states)
        if not np.isfinite(loss.value):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        grads = tape.backward(loss)
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
        if not np.isfinite(norm):
            bad = next(n for n, g in grads.items() if not np.all(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {bad!r} at epoch {epoch}")
        if norm > config.clip_norm:
            grads = {n: g * (config.clip_norm / norm) for n, g in grads.items()}
        adam_step(state, store, grads)
        losses[epoch] = float(loss.value)
        norms[epoch] = norm
        floor_hits[epoch] = hits
    report = TrainReport(
        losses, norms, floor_hits, time.perf_counter() - start, store.checksum(),
        meta={"objective": "sum of per-particle log-joints", "family": proposal.config.family,
              "epochs": config.epochs, "particles": config.particles},
    )
    return store, report


def write_training_log(path, report: TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "grad_norm", "floor_hits"])
        for e in range(len(report.losses)):
            w.writerow([e, repr(float(report.losses[e])), repr(float(report.grad_norms[e])),
                        int(report.floor_hits[e])])


def read_training_log(path) -> dict:
    """Columns of a training log CSV as arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("epoch", "loss", "grad_norm", "floor_hits")}
