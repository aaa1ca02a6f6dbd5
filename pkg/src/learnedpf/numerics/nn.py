"""Neural building blocks: affine/MLP cascades, LSTM cell, graph convolutional filter.

Everything here is written against :mod:`autodiff` so the same code runs on
plain arrays or on tape variables.  Inputs may carry leading batch axes
(particles); weights follow the ``W @ z`` convention, with ``W`` of shape
``(out_features, in_features)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionError
from . import autodiff as ad


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); shape ``(fan_out, fan_in)``."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_mlp(rng, widths: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Layers mapping ``widths[0] -> widths[1] -> ... -> widths[-1]``; zero biases."""
    return [(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))
            for n_in, n_out in zip(widths[:-1], widths[1:])]


def affine(W, b, z):
    return ad.matmul(z, ad.transpose(W)) + b


def mlp_forward(layers, z, activation=ad.tanh, activate_last=True):
    """Cascade of ``activation(W z + b)`` blocks.

    ``activate_last=False`` leaves the final block affine, which proposal heads
    use so that their outputs are not confined to the range of ``tanh``.
    """
    n = len(layers)
    for i, (W, b) in enumerate(layers):
        W_shape, b_shape = np.shape(ad.value_of(W)), np.shape(ad.value_of(b))
        if len(W_shape) != 2 or b_shape != (W_shape[0],):
            raise DimensionError(f"layer {i}: weight {W_shape} / bias {b_shape} mismatch")
        if np.shape(ad.value_of(z))[-1] != W_shape[1]:
            raise DimensionError(
                f"layer {i} expects {W_shape[1]} inputs, got {np.shape(ad.value_of(z))[-1]}")
        z = affine(W, b, z)
        if activate_last or i < n - 1:
            z = activation(z)
    return z


def init_lstm(rng, input_size: int, hidden_size: int):
    """Stacked gate weights ``(4H, input+H)`` in i, f, g, o order; zero biases."""
    W = np.concatenate([glorot_uniform(rng, hidden_size, input_size + hidden_size)
                        for _ in range(4)], axis=0)
    return W, np.zeros(4 * hidden_size)


def lstm_step(W, b, hidden, x):
    """One step of a standard LSTM cell without peepholes.

    ``hidden`` is the pair ``(h, c)``; ``x`` is the step input.  Gates are
    input, forget, candidate and output, stacked in that order along the rows
    of ``W``.
    """
    h, c = hidden
    H = np.shape(ad.value_of(h))[-1]
    W_shape = np.shape(ad.value_of(W))
    n_in = np.shape(ad.value_of(x))[-1]
    if np.shape(ad.value_of(c))[-1] != H:
        raise DimensionError("h and c sizes differ")
    if W_shape != (4 * H, n_in + H) or np.shape(ad.value_of(b)) != (4 * H,):
        raise DimensionError(f"LSTM weights {W_shape} do not fit input {n_in} / hidden {H}")
    pre = affine(W, b, ad.concat([x, h], axis=-1))
    i = ad.sigmoid(pre[..., 0:H])
    f = ad.sigmoid(pre[..., H:2 * H])
    g = ad.tanh(pre[..., 2 * H:3 * H])
    o = ad.sigmoid(pre[..., 3 * H:4 * H])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def init_graph_filter(rng, f_in: int, f_out: int, order: int):
    return [glorot_uniform(rng, f_in, f_out) for _ in range(order + 1)]


def graph_filter(S, X, coeffs):
    """``sum_d S^d X W_d`` using repeated one-hop shifts.

    ``S`` is ``(N, N)``; ``X`` is ``(..., N, F)``; each coefficient is ``(F, G)``.
    """
    S_shape = np.shape(ad.value_of(S))
    X_shape = np.shape(ad.value_of(X))
    if len(S_shape) != 2 or S_shape[0] != S_shape[1]:
        raise DimensionError(f"graph matrix must be square, got {S_shape}")
    if len(X_shape) < 2 or X_shape[-2] != S_shape[0]:
        raise DimensionError(f"signal shape {X_shape} does not match graph of size {S_shape[0]}")
    if not coeffs:
        raise DimensionError("graph filter needs at least one coefficient matrix")
    G = np.shape(ad.value_of(coeffs[0]))[1]
    for d, W in enumerate(coeffs):
        if np.shape(ad.value_of(W)) != (X_shape[-1], G):
            raise DimensionError(f"coefficient {d} has shape {np.shape(ad.value_of(W))}, "
                                 f"expected {(X_shape[-1], G)}")
    out = ad.matmul(X, coeffs[0])
    Z = X
    for W in coeffs[1:]:
        Z = ad.matmul(S, Z)
        out = out + ad.matmul(Z, W)
    return out
