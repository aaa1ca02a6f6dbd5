"""Dense linear algebra helpers."""

import numpy as np

from ..errors import DimensionError, NumericalError

SYMMETRY_RTOL = 1e-10
JITTER_START = 1e-9
JITTER_GROWTH = 10.0
MAX_ESCALATIONS = 3


def check_finite(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return x


def cholesky(M, jitter=0.0):
    """Lower factor ``L`` with ``L @ L.T == M + jitter*I``.

    Works on a single matrix or a stack ``(..., n, n)``.  If the factorization
    fails, jitter starting at ``1e-9 * trace(M) / n`` is added on top and grown
    tenfold, at most three times, before giving up.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionError(f"cholesky needs square matrices, got shape {M.shape}")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    check_finite("cholesky input", M)
    asym = np.abs(M - np.swapaxes(M, -1, -2)).max() if M.size else 0.0
    scale = max(np.abs(M).max() if M.size else 0.0, np.finfo(float).tiny)
    if asym > SYMMETRY_RTOL * scale:
        raise DimensionError(f"cholesky input is not symmetric (max asymmetry {asym:.3g})")

    n = M.shape[-1]
    eye = np.eye(n)
    try:
        return np.linalg.cholesky(M + jitter * eye)
    except np.linalg.LinAlgError:
        pass
    trace = np.trace(M, axis1=-2, axis2=-1)
    extra = JITTER_START * np.max(np.abs(trace)) / n
    if extra == 0.0:
        extra = JITTER_START
    for _ in range(MAX_ESCALATIONS + 1):
        try:
            return np.linalg.cholesky(M + (jitter + extra) * eye)
        except np.linalg.LinAlgError:
            extra *= JITTER_GROWTH
    raise NumericalError(
        f"cholesky failed after {MAX_ESCALATIONS} jitter escalations (last jitter {extra / JITTER_GROWTH:.3g})")


def spectral_norm(A):
    return float(np.linalg.norm(np.asarray(A, dtype=float), 2))


def gaussian_logpdf(x, mean, chol):
    """Log-density of N(mean, L L^T) at ``x``; batched over leading axes."""
    x = np.asarray(x, dtype=float)
    diff = x - mean
    n = diff.shape[-1]
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    logdet = np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)
    return -0.5 * np.sum(z * z, axis=-1) - logdet - 0.5 * n * np.log(2 * np.pi)
