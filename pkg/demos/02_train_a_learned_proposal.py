"""
Training a learned proposal from measurements
=============================================

A proposal network is fitted to one measurement sequence without ever
seeing the states: particles are rolled forward with reparametrized draws
and the summed log-joint of the particles is maximized with Adam.  The
trained proposal is then plugged into the same particle filter as the
baselines.
"""

import numpy as np

from learnedpf import (
    BootstrapProposal, MinDegeneracyProposal, ProposalConfig, TrainConfig, build_proposal,
    kalman_filter, make_scenario, simulate, train,
)
from learnedpf.harness.metrics import nmse
from learnedpf.harness.runner import averaged_estimate
from learnedpf.numerics import make_rng

model = make_scenario("linear-gaussian", 10, seed=1)
traj = simulate(model, 12, make_rng(1))
kalman = np.array([s.mean for s in kalman_filter(model, traj.measurements)])

# a narrower network than the default (256, 512, 1024) keeps the demo to a few seconds
config = ProposalConfig(family="mlp", hidden=(64, 64))
store, report = train(model, traj.measurements, config, TrainConfig(epochs=40, seed=0))
print("loss, first 5 epochs:", np.round(report.losses[:5], 1))
print("loss, last 5 epochs: ", np.round(report.losses[-5:], 1))
print(f"training took {report.wall_clock:.1f}s, parameter checksum {report.checksum[:12]}")

learned = build_proposal(model, store, config, traj.T)
for name, prop in (("bootstrap", BootstrapProposal(model)),
                   ("min-degeneracy", MinDegeneracyProposal(model)),
                   ("mlp", learned)):
    est = averaged_estimate(model, prop, traj.measurements, 10, 1 / 3, 20, (3, len(name)))
    print(f"{name:>15}: NMSE vs Kalman {nmse(est, kalman):.4f}")

# on linear-Gaussian systems the min-degeneracy proposal is the exact optimum,
# so the learned proposal is measured against a very strong baseline here
