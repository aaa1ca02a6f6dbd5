"""
The invertible tanh flow and its density
========================================

The arbitrary-distribution proposal pushes uniform noise through a stack of
square tanh layers.  Its density follows from inverting the stack layer by
layer and adding up log-determinants; points outside the image of the unit
cube get a small floor density.  Here the density of a one-dimensional flow
is integrated on a grid and compared with a histogram of its samples.
"""

import numpy as np

from learnedpf import ModelSpec, NoiseLaw, ProposalConfig, build_proposal, init_params
from learnedpf.numerics import make_rng

g = NoiseLaw("gaussian", 1.0)
model = ModelSpec(np.eye(1), np.eye(1), "identity", g, g, np.zeros(1), g)
config = ProposalConfig(family="psi", psi_layers=9)
flow = build_proposal(model, init_params(model, 1, config, make_rng(3)), config, 1)

x_prev, y = np.array([[0.3]]), np.array([-0.2])
n = 200_000
x, log_pi, _ = flow.sample(1, np.repeat(x_prev, n, 0), y, None, make_rng(4))
# nine contracting layers squeeze the image of [0, 1] into a short interval
print(f"sample range [{x.min():.6e}, {x.max():.6e}]")

# the inverse density agrees with the forward log-determinant on the samples
back = flow.logpdf(1, np.repeat(x_prev, 5, 0), y, x[:5])
print("forward log pi:", np.round(log_pi[:5], 6))
print("inverse log pi:", np.round(back, 6))

# grid quadrature over a box around the image
pad = 0.05 * (x.max() - x.min())
grid = np.linspace(x.min() - pad, x.max() + pad, 200_001)[:, None]
dens = np.exp(flow.logpdf(1, np.repeat(x_prev, len(grid), 0), y, grid))
print(f"integral of the density: {dens.sum() * (grid[1, 0] - grid[0, 0]):.5f}")

# histogram of the samples against the density at bin centres
counts, edges = np.histogram(x[:, 0], bins=8)
centres = 0.5 * (edges[1:] + edges[:-1])[:, None]
expected = np.exp(flow.logpdf(1, np.repeat(x_prev, 8, 0), y, centres)) * np.diff(edges) * n
for c, k, e in zip(centres[:, 0], counts, expected):
    print(f"  x={c:+.6e}  samples {k:>7d}  density x width x n {e:>10.0f}")
