"""
Tracking an epidemic
====================

The SIR model moves susceptible people to infected at rate beta*S*I and
infected to removed at rate gamma*I, Euler-discretized with step delta.
Only S and R are measured.  The state noise is a shifted exponential, so
the minimum-degeneracy proposal here is its Gaussian surrogate.
"""

import numpy as np

from learnedpf import BootstrapProposal, MinDegeneracyProposal, run_filter, simulate, sir_model
from learnedpf.errors import DegeneracyError, NumericalError
from learnedpf.harness.metrics import mse
from learnedpf.numerics import make_rng

model = sir_model()

# some noise draws push I below zero, after which the quadratic term explodes;
# simulate refuses to return such a trajectory
for seed in range(20):
    try:
        traj = simulate(model, 200, make_rng(seed))
        break
    except NumericalError as exc:
        print(f"seed {seed}: {exc}")
print(f"using seed {seed}; peak infected {traj.states[:, 1].max():.1f} at t={traj.states[:, 1].argmax()}")

# the measurement noise is bounded below, so a particle cloud that misses the
# measurement loses every weight; such runs abort and are left out of the average
for prop in (BootstrapProposal(model), MinDegeneracyProposal(model)):
    runs, aborted = [], []
    for r in range(10):
        try:
            runs.append(run_filter(model, prop, traj.measurements, 100, 1 / 3, make_rng(seed, r)))
        except DegeneracyError as exc:
            aborted.append(exc.t)
    if not runs:
        print(f"{prop.name:>10}: all runs aborted, at t = {aborted}")
        continue
    est = np.mean([r.estimates for r in runs], axis=0)
    s, i, r = mse(est, traj.states)
    print(f"{prop.name:>10}: MSE S {s:8.1f}  I {i:8.1f}  R {r:8.1f}  ({len(aborted)} of 10 runs aborted;"
          f" Gaussian surrogate: {runs[0].meta['gaussian_surrogate']})")

# with zero noise the population is conserved up to rounding
x = np.array([997.0, 3.0, 0.0])
for _ in range(200):
    x = model.transition_mean(x[None])[0]
print(f"noise-free S+I+R after 200 steps: {x.sum():.12f}")
