"""Command-line entry point: ``learnedpf <command> [options]``.

Commands
    simulate    draw one trajectory and write it as CSV
    train       fit a learned proposal to a trajectory's measurements
    filter      run one particle filter and write per-step diagnostics
    experiment  run a full sweep from a config file
    report      aggregate one or more results.csv files

The system for ``simulate``/``train``/``filter`` is the first grid point of
the config (or ``--scenario``/``--N``/``--T``), drawn from ``--seed``; using
the same seed across the three commands refers to the same system.
Errors exit with the code of their category (see ``learnedpf.errors``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from ..errors import ConfigError, LearnedPFError
from ..filtering import BootstrapProposal, MinDegeneracyProposal, run_filter, write_diagnostics_csv
from ..numerics.rng import make_rng, stable_id
from ..proposals.learned import ProposalConfig, build_proposal
from ..proposals.store import ParamStore
from ..ssm import make_scenario, read_trajectory_csv, simulate, write_trajectory_csv
from ..training import train, write_training_log
from .config import (
    BASELINES, PRESETS, PROPOSALS, ExperimentConfig, apply_preset, load_config, parse_config,
)
from .metrics import aggregate
from .runner import proposal_config, read_results, run_experiment, write_aggregates


def _common(p):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--preset", choices=PRESETS, help="scale preset")
    p.add_argument("--out", help="output path")


def _system_args(p):
    p.add_argument("--scenario", help="scenario tag when no config is given")
    p.add_argument("--N", type=int, help="state dimension")
    p.add_argument("--T", type=int, help="horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnedpf", description="Particle filters with learned proposals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit a trajectory CSV")
    _common(p)
    _system_args(p)

    p = sub.add_parser("train", help="emit a checkpoint and a training log")
    _common(p)
    _system_args(p)
    p.add_argument("--trajectory", required=True, help="trajectory CSV; only measurements are used")
    p.add_argument("--family", default="mlp", choices=[f for f in PROPOSALS if f not in BASELINES])

    p = sub.add_parser("filter", help="run one filter, emit diagnostics CSV")
    _common(p)
    _system_args(p)
    p.add_argument("--trajectory", required=True, help="trajectory CSV")
    p.add_argument("--proposal", default="bootstrap", choices=PROPOSALS)
    p.add_argument("--checkpoint", help="directory written by 'train' (learned proposals)")
    p.add_argument("--K", type=int, default=100, help="number of particles")

    p = sub.add_parser("experiment", help="run a full sweep")
    _common(p)

    p = sub.add_parser("report", help="aggregate results CSVs")
    _common(p)
    p.add_argument("results", nargs="+", help="results.csv files")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "scenario", None):
        cfg = parse_config(f"[experiment]\nscenario = {args.scenario}\n")
    else:
        raise ConfigError("need --config or --scenario")
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _system(args, cfg):
    N = getattr(args, "N", None) or cfg.N[0]
    T = getattr(args, "T", None) or cfg.T[0]
    seed = cfg.seed
    model = make_scenario(cfg.scenario, N, seed, snr_db=cfg.snr_db)
    return model, N, T, seed


def cmd_simulate(args):
    cfg = _experiment_config(args)
    model, N, T, seed = _system(args, cfg)
    traj = simulate(model, T, make_rng(seed, stable_id("trajectory")))
    out = args.out or "trajectory.csv"
    write_trajectory_csv(out, traj)
    print(f"wrote {out} ({cfg.scenario}, N={N}, T={T}, seed={seed})")


def cmd_train(args):
    cfg = _experiment_config(args)
    model, N, _, seed = _system(args, cfg)
    ys = read_trajectory_csv(args.trajectory).measurements
    T = len(ys) - 1
    pcfg = proposal_config(cfg.architecture, args.family, model, ys)
    store, report = train(model, ys, pcfg, replace(cfg.training, seed=seed))
    out = args.out or "checkpoint"
    os.makedirs(out, exist_ok=True)
    store.save(os.path.join(out, "params.npz"))
    write_training_log(os.path.join(out, "training_log.csv"), report)
    with open(os.path.join(out, "proposal.json"), "w") as fh:
        json.dump({"proposal": asdict(pcfg), "scenario": cfg.scenario, "N": N, "T": T,
                   "seed": seed, "checksum": report.checksum}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out}: {len(report.losses)} epochs, final loss {report.losses[-1]:.6g}"
          if len(report.losses) else f"wrote {out}: no epochs")


def cmd_filter(args):
    cfg = _experiment_config(args)
    model, N, _, seed = _system(args, cfg)
    ys = read_trajectory_csv(args.trajectory).measurements
    if args.proposal == "bootstrap":
        proposal = BootstrapProposal(model)
    elif args.proposal == "min-degeneracy":
        proposal = MinDegeneracyProposal(model)
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for learned proposals")
        with open(os.path.join(args.checkpoint, "proposal.json")) as fh:
            info = json.load(fh)
        pc = info["proposal"]
        for key in ("hidden", "gnn_hidden"):
            pc[key] = tuple(pc[key])
        pcfg = ProposalConfig(**pc)
        if pcfg.family != args.proposal:
            raise ConfigError(f"checkpoint holds a {pcfg.family!r} proposal, not {args.proposal!r}")
        store = ParamStore.load(os.path.join(args.checkpoint, "params.npz"))
        proposal = build_proposal(model, store, pcfg, info["T"])
    result = run_filter(model, proposal, ys, args.K, cfg.threshold_ratio,
                        make_rng(seed, stable_id("filter"), args.K))
    out = args.out or "diagnostics.csv"
    write_diagnostics_csv(out, result)
    print(f"wrote {out}: mean ESS {np.mean(result.ess):.3f}, {int(result.resampled.sum())} resamples")


def cmd_experiment(args):
    if not args.config:
        raise ConfigError("experiment needs --config")
    cfg = _experiment_config(args)
    summary = run_experiment(cfg, args.out)
    _print_aggregates(summary.aggregates)
    print(f"wrote {summary.out} ({len(summary.rows)} rows, {len(summary.failures)} failures)")


def cmd_report(args):
    rows = [r for path in args.results for r in read_results(path)]
    aggs = aggregate(rows)
    if args.out:
        write_aggregates(args.out, aggs)
    _print_aggregates(aggs)


def _print_aggregates(aggs):
    print(f"{'proposal':<16}{'N':>4}{'T':>5}{'K':>6}  {'metric':<8}{'median':>14}{'std':>14}{'n':>4}{'fail':>5}")
    for a in aggs:
        print(f"{a.proposal:<16}{a.N:>4}{a.T:>5}{a.K:>6}  {a.metric:<8}{a.median:>14.6g}{a.std:>14.6g}"
              f"{a.count:>4}{a.failed:>5}")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "filter": cmd_filter,
            "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except LearnedPFError as exc:
        print(f"learnedpf: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"learnedpf: io error: {exc}", file=sys.stderr)
        return 10
    return 0


if __name__ == "__main__":
    sys.exit(main())
