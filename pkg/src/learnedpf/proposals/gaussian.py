"""Multivariate normal sampling head shared by the Gaussian proposal families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.linalg import cholesky, gaussian_logpdf

JITTER_REL = 1e-9
JITTER_ABS = 1e-6
LOG_2PI = np.log(2 * np.pi)


def head_jitter(Sigma) -> float:
    """Diagonal loading added before factorizing a learned covariance."""
    S = np.asarray(ad.value_of(Sigma))
    n = S.shape[-1]
    trace = np.max(np.abs(np.trace(S, axis1=-2, axis2=-1))) if S.size else 0.0
    return JITTER_REL * trace / n + JITTER_ABS


@dataclass(frozen=True, eq=False)
class GaussianProposalParams:
    """Mean ``(K, N)`` and covariance ``(N, N)`` or ``(K, N, N)`` with its factor."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    jitter: float = 0.0

    @classmethod
    def from_cov(cls, mean, cov, jitter=None):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if jitter is None:
            jitter = head_jitter(cov)
        return cls(mean, cov, cholesky(cov, jitter), jitter)

    def logpdf(self, x) -> np.ndarray:
        return gaussian_logpdf(x, self.mean, self.chol)


def gaussian_sample(params: GaussianProposalParams, rng: np.random.Generator):
    """Draw ``x = mean + L u`` with ``u ~ N(0, I)``; returns ``(x, log pi(x))``."""
    u = rng.standard_normal(params.mean.shape)
    x = params.mean + np.einsum("...ij,...j->...i", params.chol, u)
    return x, params.logpdf(x)


def reparam_sample(mean, cov, u):
    """Differentiable ``mean + chol(cov + jitter I) u``; returns ``(x, L)``."""
    L = ad.cholesky(cov, head_jitter(cov))
    x = mean + ad.matmul(L, ad.expand_dims(u, -1))[..., 0]
    return x, L


def kernel_covariance(z, C):
    """``C K(z) C^T`` with ``K_ij = exp(-(z_i - z_j)^2)``; ``z`` is ``(..., N)``."""
    diff = ad.expand_dims(z, -1) - ad.expand_dims(z, -2)
    K = ad.exp(-ad.square(diff))
    return ad.matmul(ad.matmul(C, K), ad.transpose(C))
