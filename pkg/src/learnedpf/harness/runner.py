"""Experiment runner: sweeps, repetitions, metrics and result files.

For every outer seed the runner draws a system and one trajectory, trains
each learnable proposal on the measurements, and for every ``(K, proposal)``
cell averages ``inner`` independent filter runs into one estimate.  Errors
are confined to the cell (or seed) that raised them and recorded as failed
rows.  Every random stream is derived from the config seed and the cell's
coordinates, so the output files depend on nothing else.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import __version__
from ..errors import ContractError, LearnedPFError
from ..filtering import BootstrapProposal, MinDegeneracyProposal, kalman_filter, run_filter
from ..numerics.rng import make_rng, stable_id
from ..proposals.learned import ProposalConfig, build_proposal
from ..ssm import ModelSpec, make_scenario, simulate
from ..training import write_training_log, train
from .config import BASELINES, ArchitectureConfig, ExperimentConfig, dump_config
from .metrics import ResultRow, aggregate, mse, nmse

RESULT_HEADER = ["scenario", "proposal", "N", "M", "T", "K", "seed", "metric", "value", "failed"]
AGGREGATE_HEADER = ["scenario", "proposal", "N", "M", "T", "K", "metric", "median", "std", "count", "failed"]
SIR_COMPONENTS = ("S", "I", "R")


def proposal_config(arch: ArchitectureConfig, family: str, model: ModelSpec, measurements) -> ProposalConfig:
    """Resolve ``auto`` scales against the model and the training measurements."""
    sigma = model.state_noise.sigma

    def resolve(v, auto):
        return auto if v == "auto" else v

    scale = resolve(arch.scale, float(np.sqrt(np.mean(np.square(measurements)))) or 1.0)
    return ProposalConfig(
        family=family, hidden=tuple(arch.hidden), rnn_hidden=arch.rnn_hidden,
        gnn_hidden=tuple(arch.gnn_hidden), gnn_order=arch.gnn_order, psi_layers=arch.psi_layers,
        scale=scale, mean_scale=resolve(arch.mean_scale, sigma),
        cov_scale=resolve(arch.cov_scale, sigma), skip=arch.skip,
    )


def reference_for(model: ModelSpec, traj):
    """Kalman means for linear-Gaussian systems, simulated states otherwise."""
    if model.linear_gaussian:
        return np.array([s.mean for s in kalman_filter(model, traj.measurements)]), "kalman"
    return traj.states, "states"


def averaged_estimate(model, proposal, measurements, K, threshold_ratio, inner, rng_ids):
    """Mean of ``inner`` independent filter estimates."""
    acc = None
    for r in range(inner):
        res = run_filter(model, proposal, measurements, K, threshold_ratio, make_rng(*rng_ids, r))
        acc = res.estimates if acc is None else acc + res.estimates
    return acc / inner


@dataclass
class RunSummary:
    out: str
    rows: list
    aggregates: list
    failures: list = field(default_factory=list)


def _failed_rows(base, metrics):
    return [ResultRow(**base, metric=m, value=float("nan"), failed=True) for m in metrics]


def run_experiment(config: ExperimentConfig, out=None) -> RunSummary:
    out = config.out if out is None else out
    os.makedirs(os.path.join(out, "training"), exist_ok=True)
    sir = config.scenario == "sir"
    metrics = ("nmse",) + (tuple(f"mse_{c}" for c in SIR_COMPONENTS) if sir else ())
    learned = [p for p in config.proposals if p not in BASELINES]
    rows, failures, traces, trainings, references = [], [], [], [], []

    for N in config.N:
        M = config.M_for(N)
        for T in config.T:
            for s in range(config.seeds):
                seed_ids = (config.seed, N, T, s)
                cell = dict(scenario=config.scenario, N=N, M=M, T=T, seed=s)
                try:
                    model = make_scenario(config.scenario, N, config.seed * 1_000_003 + s, M=M,
                                          snr_db=config.snr_db)
                    traj = simulate(model, T, make_rng(*seed_ids, stable_id("trajectory")))
                    ref, ref_kind = reference_for(model, traj)
                except LearnedPFError as exc:
                    failures.append({**cell, "stage": "system", "error": f"{exc.category}: {exc}"})
                    for p in config.proposals:
                        for K in config.K:
                            rows += _failed_rows({**cell, "proposal": p, "K": K}, metrics)
                    continue
                if ref_kind != ("kalman" if config.scenario == "linear-gaussian" else "states"):
                    raise ContractError(f"reference rule violated for {config.scenario}")
                references.append({**cell, "reference": ref_kind})

                proposals = {"bootstrap": BootstrapProposal(model),
                             "min-degeneracy": MinDegeneracyProposal(model)}
                for family in learned:
                    pcfg = proposal_config(config.architecture, family, model, traj.measurements)
                    tcfg = replace(config.training, seed=int(make_rng(*seed_ids, stable_id(family))
                                                              .integers(2**31)))
                    try:
                        store, report = train(model, traj.measurements, pcfg, tcfg)
                    except LearnedPFError as exc:
                        failures.append({**cell, "proposal": family, "stage": "training",
                                         "error": f"{exc.category}: {exc}"})
                        continue
                    proposals[family] = build_proposal(model, store, pcfg, T)
                    name = f"{family}_N{N}_T{T}_seed{s}"
                    write_training_log(os.path.join(out, "training", f"{name}.csv"), report)
                    trainings.append({**cell, "proposal": family, "checksum": report.checksum,
                                      "final_loss": float(report.losses[-1]) if len(report.losses) else None,
                                      "floor_hits": int(report.floor_hits.sum())})

                for K in config.K:
                    for p in config.proposals:
                        base = {**cell, "proposal": p, "K": K}
                        if p not in proposals:
                            rows += _failed_rows(base, metrics)
                            continue
                        try:
                            est = averaged_estimate(model, proposals[p], traj.measurements, K,
                                                    config.threshold_ratio, config.inner,
                                                    (*seed_ids, stable_id("filter"), stable_id(p), K))
                            values = [nmse(est, ref)]
                            if sir:
                                values += list(mse(est, traj.states))
                        except LearnedPFError as exc:
                            failures.append({**base, "stage": "filter", "error": f"{exc.category}: {exc}"})
                            rows += _failed_rows(base, metrics)
                            continue
                        rows += [ResultRow(**base, metric=m, value=float(v), failed=not np.isfinite(v))
                                 for m, v in zip(metrics, values)]
                        if sir:
                            traces += [(p, s, K, t, float(est[t, 1]), float(traj.states[t, 1]))
                                       for t in range(T + 1)]

    aggs = aggregate(rows)
    _write_results(out, rows, aggs, traces if sir else None)
    meta = {
        "version": __version__,
        "config": dump_config(config),
        "references": references,
        "training": trainings,
        "failures": failures,
    }
    with open(os.path.join(out, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunSummary(out, rows, aggs, failures)


def _num(v) -> str:
    return repr(float(v))


def _write_results(out, rows, aggs, traces):
    with open(os.path.join(out, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_HEADER)
        for r in rows:
            w.writerow([r.scenario, r.proposal, r.N, r.M, r.T, r.K, r.seed, r.metric,
                        _num(r.value), int(r.failed)])
    write_aggregates(os.path.join(out, "aggregate.csv"), aggs)
    nmse_rows = [a for a in aggs if a.metric == "nmse"]
    for axis in ("K", "T", "N"):
        others = [k for k in ("N", "T", "K") if k != axis]
        ordered = sorted(nmse_rows, key=lambda a: (a.proposal, *(getattr(a, k) for k in others),
                                                   getattr(a, axis)))
        with open(os.path.join(out, f"fig_nmse_vs_{axis}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["proposal", *others, axis, "median", "std", "count", "failed"])
            for a in ordered:
                w.writerow([a.proposal, *(getattr(a, k) for k in others), getattr(a, axis),
                            _num(a.median), _num(a.std), a.count, a.failed])
    if traces is not None:
        with open(os.path.join(out, "fig_sir_infected.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["proposal", "seed", "K", "t", "estimate", "truth"])
            for p, s, K, t, e, x in traces:
                w.writerow([p, s, K, t, _num(e), _num(x)])


def write_aggregates(path, aggs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_HEADER)
        for a in aggs:
            d = asdict(a)
            w.writerow([d[k] if k not in ("median", "std") else _num(d[k]) for k in AGGREGATE_HEADER])


def read_results(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER:
            raise ContractError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow(r["scenario"], r["proposal"], int(r["N"]), int(r["M"]), int(r["T"]),
                          int(r["K"]), int(r["seed"]), r["metric"], float(r["value"]),
                          bool(int(r["failed"]))) for r in reader]
