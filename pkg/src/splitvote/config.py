"""Experiment configuration: strict flat ``key = value`` grammar with sections.

Grammar: one ``key = value`` pair per line; ``[section]`` lines switch the
active section (top-level keys come before any section header); ``#`` or
``;`` start comments; blank lines are ignored. Unknown keys, duplicate keys,
missing required keys, and out-of-range values all fail with the offending
line number before any computation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ConfigError

ALGORITHMS = ("two_stage", "fedavg", "fedprox", "signsgd_only")
ESTIMATORS = ("standard", "trace")
ENSEMBLE_MODES = ("global_head", "aux_heads")
BROADCAST_SCOPES = ("all", "participants")
LR_DECAYS = ("constant", "inv_sqrt")
DATASET_KINDS = ("blobs", "image_blobs", "idx")
PARTITION_SCHEMES = ("iid", "shard")
ACTIVATION_CHOICES = ("tanh", "relu")


@dataclass
class DatasetSpec:
    kind: str = ""
    classes: int = 4
    per_class: int = 400
    dim: int = 32
    side: int = 6
    spread: float = 0.3
    ring_amp: float = 3.0
    pattern_amp: float = 3.0
    test_fraction: float = 0.25
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0


@dataclass
class PartitionSpec:
    scheme: str = "iid"
    shard_count: int = 0
    shard_size: int = 0
    shards_per_client: int = 2


@dataclass
class ModelSpec:
    encoder_hidden: tuple = (16,)
    aux_hidden: tuple = ()
    global_hidden: tuple = ()
    activation: str = "tanh"


@dataclass
class ProbeSpec:
    enabled: bool = False
    batch: int = 256
    interval: int = 1
    alphas: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    attack_seeds: int = 3
    decoder_epochs: int = 300
    decoder_width_factor: int = 4
    decoder_lr: float = 0.05
    grid_samples: int = 16


@dataclass
class FederationConfig:
    """Everything a run needs; defaults match the desk-scale blob task."""

    algorithm: str = "two_stage"
    clients: int = 10
    participation: float = 1.0
    batch_size: int = 32
    delta: float = 0.01
    rounds: int = 100
    alpha1: float = 0.0
    alpha2: float = 1.0
    lam: float = 1.0
    mu: float = 0.0
    smashed_dim: int = 0  # 0 = auto: ceil(raw_dim / 8)
    seed: int = 0
    eval_interval: int = 1
    dcor_estimator: str = "standard"
    ensemble_mode: str = "global_head"
    broadcast_scope: str = "all"
    require_odd_participants: bool = False
    lr_decay: str = "constant"
    warmup_rounds: int = 0
    repeats: int = 1
    target_accuracy: float = 0.9
    out: str = "out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out is not None:
            cfg = replace(cfg, out=out)
        return cfg


def participant_count(participation: float, clients: int) -> int:
    """max(C * m, 1) with floor semantics, tolerant of float dust."""
    return max(int(math.floor(participation * clients + 1e-9)), 1)


# --- parsing ------------------------------------------------------------------


def _parse_bool(raw, line, key):
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ConfigError(f"line {line}: key {key!r} wants true or false, got {raw!r}")


def _parse_int(raw, line, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"line {line}: key {key!r} wants an integer, got {raw!r}")


def _parse_float(raw, line, key):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"line {line}: key {key!r} wants a number, got {raw!r}")
    if math.isnan(value) or math.isinf(value):
        raise ConfigError(f"line {line}: key {key!r} must be finite")
    return value


def _parse_int_list(raw, line, key):
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_parse_int(part.strip(), line, key) for part in raw.split(","))


def _parse_float_list(raw, line, key):
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_parse_float(part.strip(), line, key) for part in raw.split(","))


def _parse_str(raw, line, key):
    return raw


def _choice(options):
    def parse(raw, line, key):
        if raw not in options:
            raise ConfigError(
                f"line {line}: key {key!r} must be one of {', '.join(options)}, got {raw!r}"
            )
        return raw

    return parse


# (section, key) -> (attribute path, parser)
_SCHEMA = {
    ("", "algorithm"): ("algorithm", _choice(ALGORITHMS)),
    ("", "clients"): ("clients", _parse_int),
    ("", "participation"): ("participation", _parse_float),
    ("", "batch_size"): ("batch_size", _parse_int),
    ("", "delta"): ("delta", _parse_float),
    ("", "rounds"): ("rounds", _parse_int),
    ("", "alpha1"): ("alpha1", _parse_float),
    ("", "alpha2"): ("alpha2", _parse_float),
    ("", "lambda"): ("lam", _parse_float),
    ("", "mu"): ("mu", _parse_float),
    ("", "smashed_dim"): ("smashed_dim", _parse_int),
    ("", "seed"): ("seed", _parse_int),
    ("", "eval_interval"): ("eval_interval", _parse_int),
    ("", "dcor_estimator"): ("dcor_estimator", _choice(ESTIMATORS)),
    ("", "ensemble_mode"): ("ensemble_mode", _choice(ENSEMBLE_MODES)),
    ("", "broadcast_scope"): ("broadcast_scope", _choice(BROADCAST_SCOPES)),
    ("", "require_odd_participants"): ("require_odd_participants", _parse_bool),
    ("", "lr_decay"): ("lr_decay", _choice(LR_DECAYS)),
    ("", "warmup_rounds"): ("warmup_rounds", _parse_int),
    ("", "repeats"): ("repeats", _parse_int),
    ("", "target_accuracy"): ("target_accuracy", _parse_float),
    ("", "out"): ("out", _parse_str),
    ("dataset", "kind"): ("dataset.kind", _choice(DATASET_KINDS)),
    ("dataset", "classes"): ("dataset.classes", _parse_int),
    ("dataset", "per_class"): ("dataset.per_class", _parse_int),
    ("dataset", "dim"): ("dataset.dim", _parse_int),
    ("dataset", "side"): ("dataset.side", _parse_int),
    ("dataset", "spread"): ("dataset.spread", _parse_float),
    ("dataset", "ring_amp"): ("dataset.ring_amp", _parse_float),
    ("dataset", "pattern_amp"): ("dataset.pattern_amp", _parse_float),
    ("dataset", "test_fraction"): ("dataset.test_fraction", _parse_float),
    ("dataset", "images"): ("dataset.images", _parse_str),
    ("dataset", "labels"): ("dataset.labels", _parse_str),
    ("dataset", "test_images"): ("dataset.test_images", _parse_str),
    ("dataset", "test_labels"): ("dataset.test_labels", _parse_str),
    ("dataset", "limit"): ("dataset.limit", _parse_int),
    ("partition", "scheme"): ("partition.scheme", _choice(PARTITION_SCHEMES)),
    ("partition", "shard_count"): ("partition.shard_count", _parse_int),
    ("partition", "shard_size"): ("partition.shard_size", _parse_int),
    ("partition", "shards_per_client"): ("partition.shards_per_client", _parse_int),
    ("model", "encoder_hidden"): ("model.encoder_hidden", _parse_int_list),
    ("model", "aux_hidden"): ("model.aux_hidden", _parse_int_list),
    ("model", "global_hidden"): ("model.global_hidden", _parse_int_list),
    ("model", "activation"): ("model.activation", _choice(ACTIVATION_CHOICES)),
    ("probe", "enabled"): ("probe.enabled", _parse_bool),
    ("probe", "batch"): ("probe.batch", _parse_int),
    ("probe", "interval"): ("probe.interval", _parse_int),
    ("probe", "alphas"): ("probe.alphas", _parse_float_list),
    ("probe", "attack_seeds"): ("probe.attack_seeds", _parse_int),
    ("probe", "decoder_epochs"): ("probe.decoder_epochs", _parse_int),
    ("probe", "decoder_width_factor"): ("probe.decoder_width_factor", _parse_int),
    ("probe", "decoder_lr"): ("probe.decoder_lr", _parse_float),
    ("probe", "grid_samples"): ("probe.grid_samples", _parse_int),
}

_SECTIONS = {"dataset", "partition", "model", "probe"}


def parse_config(text: str) -> FederationConfig:
    """Parse and validate configuration text; raises ConfigError with line info."""
    cfg = FederationConfig()
    seen = {}
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        slot = _SCHEMA.get((section, key))
        if slot is None:
            where = f"section [{section}]" if section else "top level"
            raise ConfigError(f"line {lineno}: unknown key {key!r} at {where}")
        if (section, key) in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first on line {seen[(section, key)]})"
            )
        seen[(section, key)] = lineno
        path, parser = slot
        value = parser(raw_value, lineno, key)
        if "." in path:
            obj_name, attr = path.split(".")
            setattr(getattr(cfg, obj_name), attr, value)
        else:
            setattr(cfg, path, value)
    validate_config(cfg)
    return cfg


def load_config(path) -> FederationConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return parse_config(text)


def validate_config(cfg: FederationConfig) -> None:
    """Range and consistency checks shared by the parser and direct API use."""
    def bad(key, why):
        raise ConfigError(f"key {key!r}: {why}")

    if cfg.algorithm not in ALGORITHMS:
        bad("algorithm", f"must be one of {ALGORITHMS}")
    if cfg.clients < 1:
        bad("clients", "must be >= 1")
    if not 0.0 < cfg.participation <= 1.0:
        bad("participation", f"must lie in (0, 1], got {cfg.participation}")
    if cfg.batch_size < 1:
        bad("batch_size", "must be >= 1")
    if not cfg.delta > 0.0:
        bad("delta", f"must be > 0, got {cfg.delta}")
    if cfg.rounds < 0:
        bad("rounds", "must be >= 0")
    for key, value in (("alpha1", cfg.alpha1), ("alpha2", cfg.alpha2),
                       ("lambda", cfg.lam), ("mu", cfg.mu)):
        if value < 0.0:
            bad(key, f"must be >= 0, got {value}")
    if cfg.smashed_dim < 0:
        bad("smashed_dim", "must be >= 1, or omitted for the automatic default")
    if cfg.eval_interval < 1:
        bad("eval_interval", "must be >= 1")
    if cfg.warmup_rounds < 0:
        bad("warmup_rounds", "must be >= 0")
    if cfg.repeats < 1:
        bad("repeats", "must be >= 1")
    if not 0.0 <= cfg.target_accuracy <= 1.0:
        bad("target_accuracy", "must lie in [0, 1]")
    if not cfg.dataset.kind:
        bad("kind", "section [dataset] must set kind")
    if cfg.dataset.kind == "idx" and (not cfg.dataset.images or not cfg.dataset.labels):
        bad("images", "idx datasets need images and labels paths")
    if cfg.dataset.kind != "idx" and not 0.0 < cfg.dataset.test_fraction < 1.0:
        bad("test_fraction", "must lie in (0, 1)")
    if cfg.partition.scheme == "shard":
        if cfg.partition.shard_count < 1 or cfg.partition.shard_size < 1:
            bad("shard_count", "shard partitions need shard_count and shard_size >= 1")
        if cfg.partition.shards_per_client < 1:
            bad("shards_per_client", "must be >= 1")
    if cfg.require_odd_participants:
        n = participant_count(cfg.participation, cfg.clients)
        if n % 2 == 0:
            bad("require_odd_participants",
                f"participation {cfg.participation} of {cfg.clients} clients "
                f"selects {n} participants, which is even")
    if any(h < 1 for h in (*cfg.model.encoder_hidden, *cfg.model.aux_hidden,
                           *cfg.model.global_hidden)):
        bad("encoder_hidden", "hidden sizes must be >= 1")
    if cfg.probe.batch < 2:
        bad("batch", "probe batch must be >= 2")
    if cfg.probe.interval < 1:
        bad("interval", "probe interval must be >= 1")
