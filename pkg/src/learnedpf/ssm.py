"""Generative state-space models.

Graph diffusion systems ``x_t = phi(A x_{t-1}) + v_t``, ``y_t = C x_t + w_t``
with Gaussian, shifted-exponential or centered-uniform noise, plus the
Euler-discretized SIR epidemic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError
from .numerics import autodiff as ad
from .numerics.linalg import check_finite, spectral_norm
from .numerics.rng import make_rng, stable_id

FAMILIES = ("gaussian", "exponential", "uniform")
PHIS = ("identity", "abs", "sir")
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class NoiseLaw:
    """Zero-mean i.i.d. noise with per-component variance ``variance``.

    ``exponential`` is ``Exp(mean=sigma) - sigma``; ``uniform`` is
    ``U(-sigma*sqrt(3), sigma*sqrt(3))``.
    """

    family: str
    variance: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        if not self.variance > 0 or not np.isfinite(self.variance):
            raise ConfigError(f"noise variance must be positive, got {self.variance}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        s = self.sigma
        if self.family == "gaussian":
            return s * rng.standard_normal(shape)
        if self.family == "exponential":
            return rng.exponential(s, size=shape) - s
        return rng.uniform(-s * SQRT3, s * SQRT3, size=shape)

    def inside(self, r) -> np.ndarray:
        """Componentwise support indicator."""
        r = np.asarray(r, dtype=float)
        if self.family == "gaussian":
            return np.ones(r.shape, dtype=bool)
        if self.family == "exponential":
            return r >= -self.sigma
        return np.abs(r) <= self.sigma * SQRT3

    def logpdf(self, r) -> np.ndarray:
        """Joint log-density of the last axis of ``r``; ``-inf`` outside the support."""
        r = np.asarray(r, dtype=float)
        n = r.shape[-1]
        s = self.sigma
        if self.family == "gaussian":
            return -0.5 * np.einsum("...i,...i->...", r, r) / self.variance - 0.5 * n * np.log(2 * np.pi * self.variance)
        if self.family == "exponential":
            val = -n * np.log(s) - np.sum(r + s, axis=-1) / s
        else:
            val = np.full(r.shape[:-1], -n * np.log(2 * s * SQRT3))
        return np.where(np.all(self.inside(r), axis=-1), val, -np.inf)

    def logpdf_ad(self, r):
        """Differentiable variant of :meth:`logpdf`.

        Returns ``(value, outside)`` where ``outside`` flags rows with any
        component off the support; their ``value`` entries are meaningless
        and must be replaced by the caller.
        """
        rv = np.asarray(ad.value_of(r), dtype=float)
        n = rv.shape[-1]
        s = self.sigma
        outside = ~np.all(self.inside(rv), axis=-1)
        if self.family == "gaussian":
            val = ad.sum_(ad.square(r), axis=-1) * (-0.5 / self.variance) \
                - 0.5 * n * np.log(2 * np.pi * self.variance)
        elif self.family == "exponential":
            val = ad.sum_(r, axis=-1) * (-1.0 / s) - n * np.log(s) - n
        else:
            val = ad.sum_(r, axis=-1) * 0.0 - n * np.log(2 * s * SQRT3)
        return val, outside

    def support_violation(self, r):
        """Differentiable distance of each row of ``r`` to the support, in units of sigma."""
        rv = np.asarray(ad.value_of(r), dtype=float)
        s = self.sigma
        if self.family == "gaussian":
            return np.zeros(rv.shape[:-1])
        if self.family == "exponential":
            gap = (-s - r) * (1.0 / s)
            return ad.sum_(ad.where(rv < -s, gap, 0.0), axis=-1)
        gap = (ad.abs_(r) - s * SQRT3) * (1.0 / s)
        return ad.sum_(ad.where(np.abs(rv) > s * SQRT3, gap, 0.0), axis=-1)


@dataclass(frozen=True)
class SirParams:
    beta: float = 5e-4
    gamma: float = 0.04
    delta: float = 0.7

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0 and self.delta > 0):
            raise ConfigError("SIR rates and step must be positive")


def sir_step(state, params: SirParams, noise=None):
    """Euler step of the SIR dynamics; works on ``(..., 3)`` arrays or tape variables."""
    S, I, R = state[..., 0:1], state[..., 1:2], state[..., 2:3]
    infections = S * I * (params.beta * params.delta)
    removals = I * (params.gamma * params.delta)
    out = ad.concat([S - infections, I + infections - removals, R + removals], axis=-1)
    if noise is not None:
        out = out + noise
    return out


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full generative description of ``x_t = phi(A x_{t-1}) + v_t``, ``y_t = C x_t + w_t``."""

    A: np.ndarray
    C: np.ndarray
    phi: str
    state_noise: NoiseLaw
    measurement_noise: NoiseLaw
    initial_mean: np.ndarray
    initial_noise: NoiseLaw
    sir: Optional[SirParams] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = check_finite("A", self.A)
        C = check_finite("C", self.C)
        mu = check_finite("initial mean", self.initial_mean)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if C.ndim != 2 or C.shape[1] != A.shape[0]:
            raise DimensionError(f"C must be M x {A.shape[0]}, got {C.shape}")
        if C.shape[0] > A.shape[0]:
            raise DimensionError("measurement dimension exceeds state dimension")
        if mu.shape != (A.shape[0],):
            raise DimensionError(f"initial mean must have length {A.shape[0]}")
        if self.phi not in PHIS:
            raise ConfigError(f"unknown nonlinearity {self.phi!r}")
        if self.phi == "sir" and (A.shape[0] != 3 or self.sir is None):
            raise ConfigError("the SIR model needs N=3 and SirParams")
        for arr in (A, C, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "initial_mean", mu)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.C.shape[0]

    @property
    def linear_gaussian(self) -> bool:
        return (self.phi == "identity" and self.state_noise.family == "gaussian"
                and self.measurement_noise.family == "gaussian"
                and self.initial_noise.family == "gaussian")

    @property
    def initial_cov(self) -> np.ndarray:
        return self.initial_noise.variance * np.eye(self.N)

    def apply_phi(self, z):
        if self.phi == "identity":
            return z
        if self.phi == "abs":
            return ad.abs_(z)
        return sir_step(z, self.sir)

    def transition_mean(self, x_prev):
        """``phi(A x_prev)`` for ``x_prev`` of shape ``(..., N)``."""
        return self.apply_phi(ad.matmul(x_prev, self.A.T))

    def measurement_mean(self, x):
        return ad.matmul(x, self.C.T)

    def sample_initial(self, shape, rng) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        return self.initial_mean + self.initial_noise.sample(shape + (self.N,), rng)


def transition_logpdf(model: ModelSpec, x_prev, x) -> np.ndarray:
    return model.state_noise.logpdf(np.asarray(x) - model.transition_mean(np.asarray(x_prev)))


def measurement_logpdf(model: ModelSpec, x, y) -> np.ndarray:
    return model.measurement_noise.logpdf(np.asarray(y) - model.measurement_mean(np.asarray(x)))


def initial_logpdf(model: ModelSpec, x) -> np.ndarray:
    return model.initial_noise.logpdf(np.asarray(x) - model.initial_mean)


def build_geometric_graph(N: int, rng: np.random.Generator, k: int = 3) -> np.ndarray:
    """Weighted k-NN graph on ``N`` uniform points in the unit square, unit spectral norm."""
    if N < 4:
        raise ConfigError(f"geometric graph needs N >= 4, got {N}")
    points = rng.uniform(0.0, 1.0, size=(N, 2))
    return knn_graph(points, k)


def knn_graph(points: np.ndarray, k: int) -> np.ndarray:
    """Union-symmetrized k-nearest-neighbour graph with ``exp(-d^2)`` weights."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k < n:
        raise ConfigError(f"k={k} invalid for {n} points")
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), nearest.ravel()] = True
    mask |= mask.T
    A = np.where(mask, np.exp(-np.where(np.isfinite(d2), d2, 0.0)), 0.0)
    np.fill_diagonal(A, 0.0)
    return A / spectral_norm(A)


def build_measurement_matrix(N: int, M: int) -> np.ndarray:
    """``[I_{MxM} | I_{Mx(N-M)}]`` scaled to unit spectral norm."""
    if not 1 <= M <= N:
        raise ConfigError(f"need 1 <= M <= N, got M={M}, N={N}")
    C = np.concatenate([np.eye(M), np.eye(M, N - M)], axis=1)
    return C / spectral_norm(C)


def variance_from_snr(mu0, snr_db: float) -> float:
    """Noise variance giving ``10 log10(||mu0||^2 / sigma^2) = snr_db``."""
    energy = float(np.sum(np.square(mu0)))
    if energy == 0.0:
        raise ConfigError("SNR is undefined for a zero initial mean")
    return energy / 10.0 ** (snr_db / 10.0)


GRAPH_SCENARIOS = {
    "linear-gaussian": ("identity", "gaussian"),
    "nonlinear-gaussian": ("abs", "gaussian"),
    "linear-exponential": ("identity", "exponential"),
    "linear-uniform": ("identity", "uniform"),
}
SCENARIOS = tuple(GRAPH_SCENARIOS) + ("sir",)


def graph_model(A, M: int, phi="identity", noise="gaussian", snr_db=5.0) -> ModelSpec:
    N = A.shape[0]
    mu0 = np.ones(N)
    var = variance_from_snr(mu0, snr_db)
    return ModelSpec(
        A=A, C=build_measurement_matrix(N, M), phi=phi,
        state_noise=NoiseLaw(noise, var), measurement_noise=NoiseLaw(noise, var),
        initial_mean=mu0, initial_noise=NoiseLaw("gaussian", 1.0),
        meta={"snr_db": snr_db},
    )


def sir_model(params: SirParams = SirParams(), state_var=200.0, measurement_var=2500.0,
              initial_mean=(997.0, 3.0, 0.0), initial_var=500.0) -> ModelSpec:
    return ModelSpec(
        A=np.eye(3), C=np.eye(3)[[0, 2]], phi="sir",
        state_noise=NoiseLaw("exponential", state_var),
        measurement_noise=NoiseLaw("exponential", measurement_var),
        initial_mean=np.asarray(initial_mean, dtype=float),
        initial_noise=NoiseLaw("exponential", initial_var), sir=params,
    )


def make_scenario(tag: str, N: int, seed: int, M: Optional[int] = None,
                  snr_db: float = 5.0) -> ModelSpec:
    """Scenario model as a pure function of ``(tag, N, M, seed)``."""
    if tag == "sir":
        if N != 3 or (M is not None and M != 2):
            raise ConfigError("the SIR scenario fixes N=3, M=2")
        return sir_model()
    if tag not in GRAPH_SCENARIOS:
        raise ConfigError(f"unknown scenario {tag!r}; expected one of {SCENARIOS}")
    M = N - 2 if M is None else M
    if M != N - 2:
        raise ConfigError(f"graph scenarios use M = N - 2, got N={N}, M={M}")
    phi, noise = GRAPH_SCENARIOS[tag]
    A = build_geometric_graph(N, make_rng(seed, stable_id("graph"), N))
    return graph_model(A, M, phi=phi, noise=noise, snr_db=snr_db)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray        # (T+1, N)
    measurements: np.ndarray  # (T+1, M)

    def __post_init__(self):
        if len(self.states) != len(self.measurements):
            raise DimensionError("states and measurements differ in length")

    @property
    def T(self) -> int:
        return len(self.states) - 1


def simulate(model: ModelSpec, T: int, rng: np.random.Generator) -> Trajectory:
    """Draw ``x_{0:T}`` and ``y_{0:T}``; ``y_0`` observes ``x_0``.

    Raises NumericalError if the state overflows, which the SIR dynamics do
    once noise drives the infected count negative.
    """
    if T < 0:
        raise ConfigError("T must be non-negative")
    x = np.empty((T + 1, model.N))
    y = np.empty((T + 1, model.M))
    x[0] = model.sample_initial((), rng)
    y[0] = model.measurement_mean(x[0]) + model.measurement_noise.sample(model.M, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            x[t] = model.transition_mean(x[t - 1]) + model.state_noise.sample(model.N, rng)
            y[t] = model.measurement_mean(x[t]) + model.measurement_noise.sample(model.M, rng)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        bad = int(np.argmin(np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(y), axis=1)))
        raise NumericalError(f"simulated trajectory overflowed at t={bad}")
    return Trajectory(x, y)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    N, M = traj.states.shape[1], traj.measurements.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(N)] + [f"y_{j + 1}" for j in range(M)])
        for t in range(len(traj.states)):
            ys = ["" if np.isnan(v) else repr(float(v)) for v in traj.measurements[t]]
            w.writerow([t] + [repr(float(v)) for v in traj.states[t]] + ys)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    ys = [i for i, h in enumerate(header) if h.startswith("y_")]

    def num(s):
        return float(s) if s != "" else np.nan

    body = rows[1:]
    states = np.array([[num(r[i]) for i in xs] for r in body])
    meas = np.array([[num(r[i]) for i in ys] for r in body])
    return Trajectory(states, meas)
