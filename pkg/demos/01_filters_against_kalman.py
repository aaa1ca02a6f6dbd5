"""
Particle filters against the Kalman filter
==========================================

On a linear-Gaussian graph system the Kalman filter gives the exact
posterior mean, so it is the reference every particle filter is scored
against.  This demo draws one system and one trajectory, then runs the
bootstrap and the minimum-degeneracy proposals for growing particle counts.
"""

import numpy as np

from learnedpf import (
    BootstrapProposal, MinDegeneracyProposal, kalman_filter, make_scenario, run_filter, simulate,
)
from learnedpf.harness.metrics import nmse
from learnedpf.harness.runner import averaged_estimate
from learnedpf.numerics import make_rng

# a 10-node geometric graph, 8 measurements, 5 dB SNR
model = make_scenario("linear-gaussian", 10, seed=0)
traj = simulate(model, 12, make_rng(0))
print(f"system: N={model.N}, M={model.M}, state noise variance {model.state_noise.variance:.3f}")

# the Kalman means are the ground truth for this scenario
kalman = np.array([s.mean for s in kalman_filter(model, traj.measurements)])

# one filter run: the ESS trace shows when resampling fired
run = run_filter(model, BootstrapProposal(model), traj.measurements, 100, 1 / 3, make_rng(1))
print("bootstrap ESS per step:", np.round(run.ess, 1))
print("resampled at t =", np.flatnonzero(run.resampled))

# averaging 20 runs per estimate, as the experiments do
print(f"\n{'K':>6} {'bootstrap':>12} {'min-degeneracy':>16}")
for K in (10, 30, 100, 300):
    row = []
    for name, prop in (("bootstrap", BootstrapProposal(model)), ("mindeg", MinDegeneracyProposal(model))):
        est = averaged_estimate(model, prop, traj.measurements, K, 1 / 3, 20, (2, K, len(name)))
        row.append(nmse(est, kalman))
    print(f"{K:>6} {row[0]:>12.2e} {row[1]:>16.2e}")

# the min-degeneracy proposal conditions on y_t, so far fewer particles are wasted
