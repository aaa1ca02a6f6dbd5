"""Learnable sampling distributions.

Three Gaussian families share one sampling head and differ in how they map
``(x_{t-1}, y_t)`` to a mean and a kernel covariance:

* ``mlp``: per-step mean network, shared covariance network;
* ``rnn``: a single LSTM whose hidden state feeds affine mean/covariance maps;
* ``gnn``: graph convolutional networks on the transition graph.

The fourth family, ``psi``, pushes uniform noise through an invertible
network and evaluates its density by inverting it layer by layer.

Every family can be evaluated on plain arrays (filtering) or on tape
variables (training); ``params`` is any mapping from names to either.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ContractError, DimensionError, NumericalError, StoreError
from ..numerics import autodiff as ad
from ..numerics.nn import (
    affine, glorot_uniform, graph_filter, init_lstm, init_mlp, lstm_step, mlp_forward,
)
from ..ssm import ModelSpec
from .base import Proposal
from .gaussian import GaussianProposalParams, gaussian_sample, kernel_covariance, reparam_sample
from .store import ParamStore

FAMILIES = ("mlp", "rnn", "gnn", "psi")
PSI_RIDGE = 1e-8
PSI_DENSITY_FLOOR = 1e-12
LOG_PSI_FLOOR = float(np.log(PSI_DENSITY_FLOOR))


@dataclass(frozen=True)
class ProposalConfig:
    """Architecture hyperparameters.

    The scales are fixed (not learned) factors that let unit-scale networks
    address states of any magnitude: inputs are divided by ``scale``, the
    mean output is multiplied by ``mean_scale`` (default ``scale``) and the
    covariance by ``cov_scale**2`` (default ``mean_scale**2``).  With ``skip`` the Gaussian
    heads predict the mean as an offset from the transition mean
    ``phi(A x_{t-1})``.
    """

    family: str = "mlp"
    hidden: tuple = (256, 512, 1024)
    rnn_hidden: int = 1024
    gnn_hidden: tuple = (256, 512, 1024)
    gnn_order: int = 3
    psi_layers: int = 9
    scale: float = 1.0
    mean_scale: Optional[float] = None
    cov_scale: Optional[float] = None
    skip: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown proposal family {self.family!r}")
        if not self.scale > 0 or any(v is not None and not v > 0
                                     for v in (self.mean_scale, self.cov_scale)):
            raise ContractError("scales must be positive")


def _get(params, name):
    try:
        return params[name]
    except KeyError:
        raise StoreError(f"no parameter named {name!r}") from None


def _layers(params, prefix, n):
    return [(_get(params, f"{prefix}.l{i}.W"), _get(params, f"{prefix}.l{i}.b")) for i in range(n)]


def _put_mlp(store, prefix, layers):
    for i, (W, b) in enumerate(layers):
        store[f"{prefix}.l{i}.W"] = W
        store[f"{prefix}.l{i}.b"] = b


def _mlp(layers, z):
    # tanh blocks with an affine read-out
    return mlp_forward(layers, z, activate_last=False)


class LearnedProposal(Proposal):
    """Common plumbing: parameter store, input scaling and the time horizon."""

    def __init__(self, model: ModelSpec, store: ParamStore, config: ProposalConfig, T: int):
        self.model = model
        self.store = store
        self.config = config
        self.T = T
        self.name = config.family

    @property
    def scale(self):
        return self.config.scale

    def _inputs(self, x_prev, y):
        s = self.scale
        xs = x_prev if s == 1.0 else x_prev * (1.0 / s)
        ys = np.asarray(y, dtype=float) / s
        ys = np.broadcast_to(ys, np.shape(ad.value_of(x_prev))[:-1] + ys.shape[-1:])
        return xs, ys

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise StoreError(f"no parameters for time step {t} (trained for 1..{self.T})")


class GaussianLearnedProposal(LearnedProposal):

    def head(self, t, x_prev, y, memory, params):
        """Return ``(mean, cov, memory)`` for a batch of particles."""
        raise NotImplementedError

    def gaussian_params(self, t, x_prev, y, memory=None, params=None):
        mean, cov, memory = self.head(t, x_prev, y, memory, self.store if params is None else params)
        return GaussianProposalParams.from_cov(ad.value_of(mean), ad.value_of(cov)), memory

    def sample(self, t, x_prev, y, memory, rng):
        gp, memory = self.gaussian_params(t, x_prev, y, memory)
        x, log_pi = gaussian_sample(gp, rng)
        return x, log_pi, memory

    def rsample(self, t, x_prev, y, memory, params, rng):
        """Reparametrized draw; ``x`` stays on the tape of ``params``."""
        mean, cov, memory = self.head(t, x_prev, y, memory, params)
        u = rng.standard_normal(np.shape(ad.value_of(mean)))
        x, L = reparam_sample(mean, cov, u)
        gp = GaussianProposalParams(ad.value_of(mean), ad.value_of(cov), ad.value_of(L))
        return x, gp.logpdf(ad.value_of(x)), memory

    def _finish(self, mean, z, C, x_prev):
        s = self.scale if self.config.mean_scale is None else self.config.mean_scale
        sc = s if self.config.cov_scale is None else self.config.cov_scale
        cov = kernel_covariance(z, C)
        if s != 1.0:
            mean = mean * s
        if self.config.skip:
            mean = mean + self.model.transition_mean(x_prev)
        if sc != 1.0:
            cov = cov * (sc * sc)
        return mean, cov


class MLPProposal(GaussianLearnedProposal):
    """Per-step mean network ``NN_t^mu`` and a shared covariance network with matrix ``C``."""

    @staticmethod
    def init_params(model, T, config, rng) -> ParamStore:
        widths = [model.N + model.M, *config.hidden, model.N]
        store = ParamStore()
        for t in range(1, T + 1):
            _put_mlp(store, f"mean.t{t}", init_mlp(rng, widths))
        _put_mlp(store, "cov", init_mlp(rng, widths))
        store["cov.C"] = glorot_uniform(rng, model.N, model.N)
        return store

    def head(self, t, x_prev, y, memory, params):
        self._check_t(t)
        n = len(self.config.hidden) + 1
        xs, ys = self._inputs(x_prev, y)
        z_in = ad.concat([xs, ys], axis=-1)
        mean = _mlp(_layers(params, f"mean.t{t}", n), z_in)
        z = _mlp(_layers(params, "cov", n), z_in)
        mean, cov = self._finish(mean, z, _get(params, "cov.C"), x_prev)
        return mean, cov, memory


class RNNProposal(GaussianLearnedProposal):
    """LSTM over ``[x_{t-1}; y_t]``; mean and kernel embedding are affine in ``h_t``."""

    @staticmethod
    def init_params(model, T, config, rng) -> ParamStore:
        H = config.rnn_hidden
        store = ParamStore()
        W, b = init_lstm(rng, model.N + model.M, H)
        store["rnn.W"], store["rnn.b"] = W, b
        store["rnn.mean.W"], store["rnn.mean.b"] = glorot_uniform(rng, model.N, H), np.zeros(model.N)
        store["rnn.cov.W"], store["rnn.cov.b"] = glorot_uniform(rng, model.N, H), np.zeros(model.N)
        store["rnn.C"] = glorot_uniform(rng, model.N, model.N)
        return store

    def initial_memory(self, K):
        H = self.config.rnn_hidden
        return np.zeros((K, H)), np.zeros((K, H))

    def head(self, t, x_prev, y, memory, params):
        H = self.config.rnn_hidden
        if memory is None or len(memory) != 2 or any(np.shape(ad.value_of(m))[-1] != H for m in memory):
            raise ContractError(f"RNN proposal needs an (h, c) memory of size {H}")
        xs, ys = self._inputs(x_prev, y)
        h, c = lstm_step(_get(params, "rnn.W"), _get(params, "rnn.b"), memory,
                         ad.concat([xs, ys], axis=-1))
        mean = affine(_get(params, "rnn.mean.W"), _get(params, "rnn.mean.b"), h)
        z = affine(_get(params, "rnn.cov.W"), _get(params, "rnn.cov.b"), h)
        mean, cov = self._finish(mean, z, _get(params, "rnn.C"), x_prev)
        return mean, cov, (h, c)


class GNNProposal(GaussianLearnedProposal):
    """Graph convolutional mean (per step) and covariance (shared) networks on ``S = A``."""

    def __init__(self, model, store, config, T, S=None):
        super().__init__(model, store, config, T)
        self.S = np.asarray(model.A if S is None else S, dtype=float)
        if self.S.shape != (model.N, model.N):
            raise DimensionError(f"graph matrix must be {model.N}x{model.N}, got {self.S.shape}")

    @staticmethod
    def init_params(model, T, config, rng) -> ParamStore:
        widths = [2, *config.gnn_hidden, 1]
        D = config.gnn_order
        store = ParamStore()

        def put(prefix):
            for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
                for d in range(D + 1):
                    store[f"{prefix}.l{i}.d{d}"] = glorot_uniform(rng, fi, fo)
                store[f"{prefix}.l{i}.b"] = np.zeros(fo)

        for t in range(1, T + 1):
            put(f"gnn.mean.t{t}")
            store[f"gnn.mean.t{t}.adapt"] = glorot_uniform(rng, model.N, model.M)
        put("gnn.cov")
        store["gnn.cov.adapt"] = glorot_uniform(rng, model.N, model.M)
        store["gnn.C"] = glorot_uniform(rng, model.N, model.N)
        return store

    def _gnn(self, params, prefix, X):
        n = len(self.config.gnn_hidden) + 1
        for i in range(n):
            coeffs = [_get(params, f"{prefix}.l{i}.d{d}") for d in range(self.config.gnn_order + 1)]
            X = graph_filter(self.S, X, coeffs) + _get(params, f"{prefix}.l{i}.b")
            if i < n - 1:
                X = ad.tanh(X)
        return X[..., 0]

    def _signal(self, xs, ys, adapt):
        return ad.concat([ad.expand_dims(xs, -1),
                          ad.expand_dims(ad.matmul(ys, ad.transpose(adapt)), -1)], axis=-1)

    def head(self, t, x_prev, y, memory, params):
        self._check_t(t)
        xs, ys = self._inputs(x_prev, y)
        mean = self._gnn(params, f"gnn.mean.t{t}",
                         self._signal(xs, ys, _get(params, f"gnn.mean.t{t}.adapt")))
        z = self._gnn(params, "gnn.cov", self._signal(xs, ys, _get(params, "gnn.cov.adapt")))
        mean, cov = self._finish(mean, z, _get(params, "gnn.C"), x_prev)
        return mean, cov, memory


def _ridge_solve(W, r):
    """Solve ``(W^T W + eps I) w = W^T r`` for a stack of right-hand sides ``r (..., N)``."""
    n = W.shape[0]
    G = W.T @ W + PSI_RIDGE * np.eye(n)
    try:
        return np.linalg.solve(G, (r @ W).T).T if r.ndim > 1 else np.linalg.solve(G, W.T @ r)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular layer matrix in the invertible transform") from exc


def _logabsdet(W, what, strict=True):
    sign, logdet = np.linalg.slogdet(W)
    if sign == 0:
        if strict:
            raise NumericalError(f"singular {what} in the invertible transform")
        return -np.inf
    return logdet


class PsiProposal(LearnedProposal):
    """Invertible transform of ``u ~ U([0,1]^N)``.

    ``z_0 = A u + B x_{t-1} + C y_t``; ``z_l = tanh(W_l z_{l-1}) + b_l``;
    ``x = z_L``.  Each layer inverts as ``z_{l-1} = W_l^{-1} atanh(z_l - b_l)``.
    """

    @staticmethod
    def init_params(model, T, config, rng) -> ParamStore:
        N, M = model.N, model.M
        store = ParamStore()
        for t in range(1, T + 1):
            p = f"psi.t{t}"
            store[f"{p}.A"] = glorot_uniform(rng, N, N)
            store[f"{p}.B"] = glorot_uniform(rng, N, N)
            store[f"{p}.C"] = glorot_uniform(rng, N, M)
            for i in range(config.psi_layers):
                store[f"{p}.l{i}.W"] = glorot_uniform(rng, N, N)
                store[f"{p}.l{i}.b"] = np.zeros(N)
        return store

    def transform(self, t, u, x_prev, y, params=None):
        """Forward map; returns ``(x, log pi(x))`` with the density from the forward log-det."""
        self._check_t(t)
        params = self.store if params is None else params
        p = f"psi.t{t}"
        xs, ys = self._inputs(x_prev, y)
        A = _get(params, f"{p}.A")
        z = (ad.matmul(u, ad.transpose(A)) + ad.matmul(xs, ad.transpose(_get(params, f"{p}.B")))
             + ad.matmul(ys, ad.transpose(_get(params, f"{p}.C"))))
        # a singular map still samples; its density is reported at the floor
        log_pi = -_logabsdet(np.asarray(ad.value_of(A)), "input matrix", strict=False)
        for i in range(self.config.psi_layers):
            W = _get(params, f"{p}.l{i}.W")
            a = ad.tanh(ad.matmul(z, ad.transpose(W)))
            av = np.asarray(ad.value_of(a))
            # d atanh(s)/ds = 1 / (1 - s^2); saturated units give an infinite density
            with np.errstate(divide="ignore"):
                log_pi = log_pi - _logabsdet(np.asarray(ad.value_of(W)), "layer matrix", strict=False) \
                    - np.sum(np.log1p(-av * av), axis=-1)
            z = a + _get(params, f"{p}.l{i}.b")
        s = self.scale
        if s != 1.0:
            z = z * s
            log_pi = log_pi - self.model.N * np.log(s)
        log_pi = np.where(np.isfinite(log_pi), log_pi, LOG_PSI_FLOOR)
        return z, log_pi

    def logpdf(self, t, x_prev, y, x, params=None) -> np.ndarray:
        """Density of ``x`` by layer-wise inversion; the floor outside the image."""
        self._check_t(t)
        params = self.store if params is None else params
        val = lambda name: np.asarray(ad.value_of(_get(params, name)), dtype=float)
        p = f"psi.t{t}"
        s = self.scale
        x = np.asarray(x, dtype=float)
        z = x / s
        xs, ys = self._inputs(np.asarray(x_prev, dtype=float), y)
        logdet = np.zeros(z.shape[:-1]) - self.model.N * np.log(s)
        ok = np.ones(z.shape[:-1], dtype=bool)
        for i in reversed(range(self.config.psi_layers)):
            W = val(f"{p}.l{i}.W")
            a = z - val(f"{p}.l{i}.b")
            inside = np.all(np.abs(a) < 1.0, axis=-1)
            ok &= inside
            a = np.where(inside[..., None], a, 0.0)
            logdet = logdet - _logabsdet(W, "layer matrix") - np.sum(np.log1p(-a * a), axis=-1)
            z = _ridge_solve(W, np.arctanh(a))
        A = val(f"{p}.A")
        r = z - xs @ val(f"{p}.B").T - ys @ val(f"{p}.C").T
        u = _ridge_solve(A, r)
        logdet = logdet - _logabsdet(A, "input matrix")
        ok &= np.all((u >= 0.0) & (u <= 1.0), axis=-1)
        return np.where(ok & np.isfinite(logdet), logdet, LOG_PSI_FLOOR)

    def sample(self, t, x_prev, y, memory, rng):
        u = rng.uniform(0.0, 1.0, size=np.shape(x_prev))
        x, log_pi = self.transform(t, u, x_prev, y)
        return x, log_pi, memory

    def rsample(self, t, x_prev, y, memory, params, rng):
        u = rng.uniform(0.0, 1.0, size=np.shape(ad.value_of(x_prev)))
        x, log_pi = self.transform(t, u, x_prev, y, params)
        return x, log_pi, memory


PROPOSAL_CLASSES = {"mlp": MLPProposal, "rnn": RNNProposal, "gnn": GNNProposal, "psi": PsiProposal}


def init_params(model: ModelSpec, T: int, config: ProposalConfig, rng) -> ParamStore:
    return PROPOSAL_CLASSES[config.family].init_params(model, T, config, rng)


def build_proposal(model: ModelSpec, store: ParamStore, config: ProposalConfig, T: int):
    return PROPOSAL_CLASSES[config.family](model, store, config, T)
