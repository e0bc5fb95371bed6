"""Round records, metrics CSV, run summaries, and run-to-run comparison.

Emitted files are byte-deterministic for a given config and seed: floats are
formatted with a fixed %.12g, row order is round order, and the wall-time
column is pinned to 0 (measured timings stay on the in-memory records and
the run log only, so re-runs produce identical bytes).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import UsageError

CSV_COLUMNS = ("round", "acc", "l1", "l2", "lg", "loss",
               "up_bits", "down_bits", "cum_bits", "dcor", "ms")


@dataclass
class RoundRecord:
    """Everything measured in one federation round."""

    round: int
    l1: float = 0.0
    l2: float = 0.0
    lg: float = 0.0
    loss: float = 0.0
    accuracy: Optional[float] = None
    up_bits: int = 0
    down_bits: int = 0
    cum_bits: int = 0
    dcor: Optional[float] = None
    wall_ms: float = 0.0


@dataclass
class RunSummary:
    """Flat key=value summary persisted next to the metrics CSV."""

    task: str
    algorithm: str
    seed: int
    rounds: int
    clients: int
    initial_accuracy: float
    final_accuracy: float
    target_accuracy: float
    rounds_to_target: int  # -1 when never reached
    bits_to_target: int  # payload bits accumulated by that round; -1 when never
    total_payload_bits: int
    total_header_bits: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "rounds": self.rounds,
            "clients": self.clients,
            "initial_accuracy": self.initial_accuracy,
            "final_accuracy": self.final_accuracy,
            "target_accuracy": self.target_accuracy,
            "rounds_to_target": self.rounds_to_target,
            "bits_to_target": self.bits_to_target,
            "total_payload_bits": self.total_payload_bits,
            "total_header_bits": self.total_header_bits,
        }
        out.update(self.extra)
        return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def emit_metrics(records, summary: RunSummary, csv_path, summary_path) -> None:
    """Write the fixed-column CSV and the flat summary file."""
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join([
            _fmt(rec.round),
            _fmt(rec.accuracy),
            _fmt(rec.l1),
            _fmt(rec.l2),
            _fmt(rec.lg),
            _fmt(rec.loss),
            _fmt(rec.up_bits),
            _fmt(rec.down_bits),
            _fmt(rec.cum_bits),
            _fmt(rec.dcor),
            _fmt(0),  # wall time stays off disk to keep output byte-deterministic
        ]))
    with open(csv_path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    write_summary(summary_path, summary.to_dict())


def write_summary(path, mapping: dict) -> None:
    with open(path, "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {_fmt(value)}\n")


def read_summary(path) -> dict:
    """Parse a flat key=value summary back into strings/numbers."""
    out = {}
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, raw = (part.strip() for part in line.split("=", 1))
            try:
                out[key] = int(raw)
            except ValueError:
                try:
                    out[key] = float(raw)
                except ValueError:
                    out[key] = raw
    return out


def compare_runs(summary_a: dict, summary_b: dict) -> dict:
    """Accuracy delta and communication ratios between two finished runs.

    Both summaries must describe the same task. The payload ratio prefers
    bits-to-target (the equal-accuracy comparison) and falls back to run
    totals when either run never reached its target.
    """
    for key in ("task", "final_accuracy", "total_payload_bits", "rounds_to_target"):
        if key not in summary_a or key not in summary_b:
            raise UsageError(f"summary missing key {key!r}")
    if summary_a["task"] != summary_b["task"]:
        raise UsageError(
            f"runs describe different tasks:\n  a: {summary_a['task']}\n  b: {summary_b['task']}"
        )
    rt_a, rt_b = summary_a["rounds_to_target"], summary_b["rounds_to_target"]
    both_reached = rt_a > 0 and rt_b > 0
    if both_reached:
        bits_a, bits_b = summary_a["bits_to_target"], summary_b["bits_to_target"]
        rounds_ratio = rt_a / rt_b
    else:
        bits_a, bits_b = summary_a["total_payload_bits"], summary_b["total_payload_bits"]
        rounds_ratio = math.nan
    return {
        "accuracy_delta": summary_a["final_accuracy"] - summary_b["final_accuracy"],
        "payload_bit_ratio": (bits_a / bits_b) if bits_b else math.nan,
        "rounds_to_target_ratio": rounds_ratio,
        "payload_basis": "bits_to_target" if both_reached else "total_payload_bits",
    }


def preflight_output(out_dir) -> None:
    """Fail before any training if the output directory cannot be written."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise OSError(f"output path {out_dir!r} is not writable: {exc}") from exc
