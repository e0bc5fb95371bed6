"""Representation-leakage probes: dcor tracking and a reconstruction attack.

The tracker measures, on a fixed held-out probe batch, how much dependence
the transmitted representation keeps on the raw inputs as training runs.
The attack trains a decoder on (representation, raw) pairs from an
attack-train split and reports held-out reconstruction error; the encoder is
only ever touched through a black-box forward function.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import FederationConfig
from .data import child_rng
from .dcor import distance_correlation
from .errors import UsageError
from .nn import Network, new_network
from .protocol import Experiment, run_experiment


@dataclass
class LeakageTrace:
    """Per-round dcor between probe inputs and their transmitted representation."""

    algorithm: str
    probe_size: int
    seed: int
    rounds: list = field(default_factory=list)
    dcor: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "algorithm", "dcor"])
            for r, v in zip(self.rounds, self.dcor):
                writer.writerow([r, self.algorithm, format(v, ".12g")])


def representation_dcor(exp: Experiment, probe_x: np.ndarray) -> float:
    """dcor(probe, representation) for the current model state.

    two_stage: mean over clients of dcor(probe, encoder_k(probe)) — the
    smashed data is what leaves each device. Baselines have no cut layer, so
    the first dense layer's post-activation output stands in.
    """
    if exp.cfg.algorithm == "two_stage":
        values = []
        for client in exp.clients:
            z, _ = client.local.encoder.forward(probe_x)
            values.append(distance_correlation(probe_x, z).dcor)
        return float(np.mean(values))
    net = exp.head_template.copy()
    net.unflatten_params(exp.server.global_params)
    first = Network(net.layers[:1])
    rep, _ = first.forward(probe_x)
    return distance_correlation(probe_x, rep).dcor


def track_leakage(cfg: FederationConfig,
                  probe_x: Optional[np.ndarray] = None):
    """Run the configured experiment while recording the leakage trace.

    The probe batch defaults to the first ``probe.batch`` held-out test rows
    and is never trained on. Returns (LeakageTrace, ExperimentResult); the
    trace starts at round 0 (untrained model) and the dcor value is also
    attached to each round's record.
    """
    trace = LeakageTrace(algorithm=cfg.algorithm, probe_size=0, seed=cfg.seed)
    state = {"probe": probe_x}

    def setup_hook(exp: Experiment):
        if state["probe"] is None:
            state["probe"] = exp.test.x[: cfg.probe.batch]
        if state["probe"].shape[0] < 2:
            raise UsageError("probe batch needs at least 2 samples")
        trace.probe_size = int(state["probe"].shape[0])
        trace.rounds.append(0)
        trace.dcor.append(representation_dcor(exp, state["probe"]))

    def round_hook(exp: Experiment, rec):
        if rec.round % cfg.probe.interval == 0 or rec.round == cfg.rounds:
            value = representation_dcor(exp, state["probe"])
            trace.rounds.append(rec.round)
            trace.dcor.append(value)
            rec.dcor = value

    result = run_experiment(cfg, round_hook=round_hook, setup_hook=setup_hook)
    return trace, result


@dataclass
class ReconstructionReport:
    """Decoder attack outcome for one trained encoder."""

    alpha1: float
    seed: int
    test_mse: float
    diverged: bool
    reconstructions: np.ndarray  # (k, d) decoder outputs for inspection
    originals: np.ndarray  # matching raw rows

    def export_grids(self, out_dir, side: Optional[int] = None) -> None:
        """Write each sample as original/reconstruction PGM pair plus an index."""
        os.makedirs(out_dir, exist_ok=True)
        d = self.originals.shape[1]
        if side is None:
            side = int(round(np.sqrt(d)))
        if side * side != d:
            raise UsageError(f"features of width {d} are not square images")
        rows = []
        for i, (orig, recon) in enumerate(zip(self.originals, self.reconstructions)):
            for kind, img in (("orig", orig), ("recon", recon)):
                name = f"{kind}_{i:03d}.pgm"
                write_pgm(os.path.join(out_dir, name), img.reshape(side, side))
                rows.append((name, kind, i))
        with open(os.path.join(out_dir, "index.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "kind", "sample"])
            writer.writerows(rows)


def write_pgm(path, img: np.ndarray) -> None:
    """Binary portable graymap (P5), min-max scaled to 0..255."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.clip((img - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def _mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def reconstruction_attack(encode: Callable[[np.ndarray], np.ndarray],
                          train_x: np.ndarray, test_x: np.ndarray, *,
                          width_factor: int = 4, epochs: int = 300,
                          lr: float = 0.05, batch_size: int = 32,
                          seed: int = 0, alpha1: float = 0.0,
                          keep_samples: int = 16) -> ReconstructionReport:
    """Train a dense decoder on (encode(x), x) pairs; report held-out MSE.

    The decoder is two layers (tanh then identity, hidden width
    ``width_factor`` times the representation size) trained by plain
    minibatch SGD on mean squared error. Inputs and targets are standardized
    with attack-train statistics (attacker-side preprocessing); the reported
    MSE is in raw units. A NaN loss marks the attack diverged instead of
    raising.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    z_train = np.asarray(encode(train_x), dtype=np.float64)
    z_test = np.asarray(encode(test_x), dtype=np.float64)
    q, d = z_train.shape[1], train_x.shape[1]

    z_mu, z_sd = z_train.mean(axis=0), z_train.std(axis=0)
    z_sd = np.where(z_sd > 0, z_sd, 1.0)
    x_mu, x_sd = train_x.mean(axis=0), train_x.std(axis=0)
    x_sd = np.where(x_sd > 0, x_sd, 1.0)
    zs_train = (z_train - z_mu) / z_sd
    xs_train = (train_x - x_mu) / x_sd

    rng = child_rng(seed, "attack")
    decoder = new_network([q, width_factor * q, d], "tanh", "identity", rng)
    n = zs_train.shape[0]
    diverged = False
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            pred, cache = decoder.forward(zs_train[idx])
            err = pred - xs_train[idx]
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                diverged = True
                break
            grad = 2.0 * err / err.size
            flat, _ = decoder.backward(cache, grad)
            decoder.unflatten_params(decoder.flatten_params() - lr * flat)
        if diverged:
            break

    if diverged:
        test_mse = float("nan")
        recon = np.full((min(keep_samples, test_x.shape[0]), d), np.nan)
    else:
        pred_std, _ = decoder.forward((z_test - z_mu) / z_sd)
        pred = pred_std * x_sd + x_mu
        test_mse = _mse(pred, test_x)
        recon = pred[:keep_samples]
    return ReconstructionReport(
        alpha1=alpha1,
        seed=seed,
        test_mse=test_mse,
        diverged=diverged,
        reconstructions=recon,
        originals=test_x[: recon.shape[0]],
    )


def encoder_black_box(exp: Experiment, client_id: int = 0) -> Callable:
    """Forward-only access to one trained encoder, as an attacker would have."""
    encoder = exp.clients[client_id].local.encoder

    def encode(x: np.ndarray) -> np.ndarray:
        z, _ = encoder.forward(x)
        return z

    return encode


def reconstruction_sweep(base_cfg: FederationConfig, alphas=None,
                         attack_seeds: Optional[int] = None):
    """Train with each leakage weight and attack the resulting encoders.

    Per (alpha1, repetition) one experiment runs with seed base+rep, client
    0's encoder is attacked on a held-out split, and one report is returned
    per run, ordered by alpha then repetition.
    """
    alphas = tuple(alphas if alphas is not None else base_cfg.probe.alphas)
    reps = attack_seeds if attack_seeds is not None else base_cfg.probe.attack_seeds
    reports = []
    for alpha in alphas:
        for rep in range(reps):
            cfg = dataclasses.replace(base_cfg, alpha1=float(alpha),
                                      seed=base_cfg.seed + rep)
            result = run_experiment(cfg)
            exp = result.experiment
            half = exp.test.n // 2
            report = reconstruction_attack(
                encoder_black_box(exp),
                exp.test.x[:half], exp.test.x[half:],
                width_factor=cfg.probe.decoder_width_factor,
                epochs=cfg.probe.decoder_epochs,
                lr=cfg.probe.decoder_lr,
                batch_size=cfg.batch_size,
                seed=cfg.seed,
                alpha1=float(alpha),
                keep_samples=cfg.probe.grid_samples,
            )
            reports.append(report)
    return reports
