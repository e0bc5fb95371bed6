"""Command-line entry point.

    splitvote run <config> [--seed N] [--out DIR]
    splitvote compare <summaryA> <summaryB> [--out FILE]
    splitvote probe <config> [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric or
protocol failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import load_config
from .errors import (ConfigError, IngestError, NumericsError, ProtocolError,
                     UsageError)
from .metrics import (compare_runs, emit_metrics, preflight_output,
                      read_summary, write_summary)
from .privacy import reconstruction_sweep, track_leakage
from .protocol import run_experiment


def _preflight(cfg) -> None:
    preflight_output(cfg.out)
    if cfg.dataset.kind == "idx":
        for path in (cfg.dataset.images, cfg.dataset.labels,
                     cfg.dataset.test_images, cfg.dataset.test_labels):
            if path and not os.path.exists(path):
                raise IngestError(f"dataset file not found: {path}")


def _run_once(cfg, csv_name: str, summary_name: str) -> dict:
    result = run_experiment(cfg)
    emit_metrics(result.records, result.summary,
                 os.path.join(cfg.out, csv_name),
                 os.path.join(cfg.out, summary_name))
    return result.summary.to_dict()


def cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    _preflight(cfg)
    if cfg.repeats == 1:
        summary = _run_once(cfg, "metrics.csv", "summary.txt")
        print(f"run complete: final_accuracy={summary['final_accuracy']:.4f} "
              f"payload_bits={summary['total_payload_bits']}")
        return 0
    finals, rounds_to, totals = [], [], []
    base = None
    for rep in range(cfg.repeats):
        rep_cfg = dataclasses.replace(cfg, seed=cfg.seed + rep, repeats=1)
        summary = _run_once(rep_cfg, f"metrics_r{rep}.csv", f"summary_r{rep}.txt")
        base = summary
        finals.append(summary["final_accuracy"])
        rounds_to.append(summary["rounds_to_target"])
        totals.append(summary["total_payload_bits"])
    agg = {
        "task": base["task"],
        "algorithm": base["algorithm"],
        "repeats": cfg.repeats,
        "base_seed": cfg.seed,
        "final_accuracy_mean": float(np.mean(finals)),
        "final_accuracy_std": float(np.std(finals, ddof=1)),
        "rounds_to_target_mean": float(np.mean(rounds_to)),
        "total_payload_bits_mean": float(np.mean(totals)),
    }
    write_summary(os.path.join(cfg.out, "summary.txt"), agg)
    print(f"{cfg.repeats} repeats: final_accuracy="
          f"{agg['final_accuracy_mean']:.4f} +- {agg['final_accuracy_std']:.4f}")
    return 0


def cmd_compare(args) -> int:
    report = compare_runs(read_summary(args.summary_a), read_summary(args.summary_b))
    lines = [f"{key} = {value}" for key, value in report.items()]
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_probe(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    cfg = dataclasses.replace(
        cfg, probe=dataclasses.replace(cfg.probe, enabled=True)
    )
    _preflight(cfg)
    trace, result = track_leakage(cfg)
    trace.to_csv(os.path.join(cfg.out, "leakage.csv"))
    emit_metrics(result.records, result.summary,
                 os.path.join(cfg.out, "metrics.csv"),
                 os.path.join(cfg.out, "summary.txt"))
    print(f"leakage trace: dcor {trace.dcor[0]:.4f} -> {trace.dcor[-1]:.4f} "
          f"over {trace.rounds[-1]} rounds")
    if cfg.algorithm != "two_stage":
        return 0
    reports = reconstruction_sweep(cfg)
    with open(os.path.join(cfg.out, "reconstruction.csv"), "w") as fh:
        fh.write("alpha1,seed,test_mse,diverged\n")
        for rep in reports:
            fh.write(f"{rep.alpha1},{rep.seed},{format(rep.test_mse, '.12g')},"
                     f"{'true' if rep.diverged else 'false'}\n")
    side = int(round(np.sqrt(reports[0].originals.shape[1])))
    if side * side == reports[0].originals.shape[1]:
        for rep in reports:
            if rep.seed == cfg.seed and not rep.diverged:
                rep.export_grids(
                    os.path.join(cfg.out, f"recon_alpha{rep.alpha1:g}")
                )
    print(f"reconstruction sweep: {len(reports)} attacks written")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitvote",
        description="federated split-learning simulator with sign-vote aggregation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare two run summaries")
    p_cmp.add_argument("summary_a")
    p_cmp.add_argument("summary_b")
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_probe = sub.add_parser("probe", help="leakage trace and reconstruction sweep")
    p_probe.add_argument("config")
    p_probe.add_argument("--seed", type=int, default=None)
    p_probe.add_argument("--out", default=None)
    p_probe.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericsError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
