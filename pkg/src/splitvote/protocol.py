"""Round orchestration, message accounting, and the analytic cost model.

One round: the server samples max(C*m, 1) participants, broadcasts the most
recent vote (every client applies it once, so all global-head replicas stay
bit-identical), participants run one local pass and upload the sign of their
accumulated global-head gradient, and the server majority-votes those signs
into the next broadcast. Parameters travel as 32-bit floats on the wire,
sign messages as 1 bit per coordinate; a fixed 64-bit header per message is
ledgered separately so payload totals can be checked against the analytic
predictor exactly.

FedAvg and FedProx rounds exchange full parameter vectors both ways with the
sampled participants only; the sign algorithms broadcast the vote to every
client by default (``broadcast_scope = participants`` restricts delivery to
the sampled clients, who then receive the votes they missed as a catch-up
bundle; the predictor does not model that mode).
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .config import FederationConfig, participant_count, validate_config
from .data import (Dataset, child_rng, load_idx, partition_iid,
                   partition_shard_noniid, synth_blobs, synth_image_blobs,
                   train_test_split)
from .errors import ConfigError, ProtocolError, UsageError
from .metrics import RoundRecord, RunSummary
from .model import (GlobalHead, LocalModel, ensemble_infer, two_stage_backward)
from .nn import Network, new_network, softmax_cross_entropy
from .signopt import (SignVector, apply_vote, fedavg_aggregate,
                      fedprox_local_grad, majority_vote, sign_compress)

HEADER_BITS = 64
PARAM_WIRE_BITS = 32


class MessageKind(Enum):
    MODEL_INIT = "ModelInit"
    SIGN_UP = "SignUp"
    VOTE_DOWN = "VoteDown"
    PARAMS_UP = "ParamsUp"
    PARAMS_DOWN = "ParamsDown"


@dataclass(frozen=True)
class Message:
    """Logical wire record: payload bits are 1/coordinate for signs and
    32/coordinate for parameters; every message carries a fixed 64-bit header."""

    kind: MessageKind
    round: int
    client: int
    direction: str  # "up" | "down"
    payload_bits: int
    header_bits: int = HEADER_BITS


def encode_params(vec: np.ndarray) -> bytes:
    """4-byte little-endian count, then little-endian float32 coordinates."""
    vec = np.asarray(vec, dtype=np.float64)
    return struct.pack("<I", vec.size) + vec.astype("<f4").tobytes()


def decode_params(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise ProtocolError("parameter message shorter than its length prefix")
    (count,) = struct.unpack_from("<I", buf, 0)
    if len(buf) - 4 != 4 * count:
        raise ProtocolError(
            f"parameter message payload is {len(buf) - 4} bytes, expected {4 * count}"
        )
    return np.frombuffer(buf, dtype="<f4", count=count, offset=4).astype(np.float64)


def quantize_params(vec: np.ndarray) -> np.ndarray:
    """The float64 values a receiver sees after one wire round-trip."""
    return decode_params(encode_params(vec))


class CommLedger:
    """Bit-exact accounting of every message, payload and header separately."""

    def __init__(self):
        self.messages: list[Message] = []

    def record(self, kind: MessageKind, round_: int, client: int,
               direction: str, payload_bits: int) -> None:
        self.messages.append(Message(kind, round_, client, direction, payload_bits))

    def round_payload(self, round_: int):
        up = sum(m.payload_bits for m in self.messages
                 if m.round == round_ and m.direction == "up")
        down = sum(m.payload_bits for m in self.messages
                   if m.round == round_ and m.direction == "down")
        return up, down

    @property
    def total_payload_bits(self) -> int:
        return sum(m.payload_bits for m in self.messages)

    @property
    def total_header_bits(self) -> int:
        return sum(m.header_bits for m in self.messages)

    def device_payload(self, client: int):
        up = sum(m.payload_bits for m in self.messages
                 if m.client == client and m.direction == "up")
        down = sum(m.payload_bits for m in self.messages
                   if m.client == client and m.direction == "down")
        return up, down


@dataclass
class ServerState:
    """Round counter, reference parameters, vote history, sampling stream."""

    m: int
    global_params: np.ndarray
    rng: np.random.Generator
    t: int = 0
    last_vote: Optional[SignVector] = None
    broadcast_log: list = field(default_factory=list)  # (SignVector, delta) per round


@dataclass
class ClientState:
    """One device: data shard plus whichever model parts its algorithm uses."""

    cid: int
    x: np.ndarray
    y: np.ndarray
    local: Optional[LocalModel] = None  # two_stage
    head: Optional[GlobalHead] = None  # voted network (global head or full model)
    model: Optional[Network] = None  # fedavg / fedprox local model

    @property
    def samples(self) -> int:
        return int(self.y.shape[0])


def delta_for_round(cfg: FederationConfig, t: int) -> float:
    if cfg.lr_decay == "inv_sqrt":
        return cfg.delta / math.sqrt(t)
    return cfg.delta


def sample_participants(rng: np.random.Generator, m: int, participation: float) -> list:
    """Uniform without replacement; sorted so aggregation ignores arrival order."""
    n = participant_count(participation, m)
    return sorted(int(i) for i in rng.choice(m, size=n, replace=False))


def _batches(n_samples: int, batch_size: int, rng: np.random.Generator):
    """Shuffled batch index lists; a trailing batch of one sample is dropped."""
    order = rng.permutation(n_samples)
    out = []
    for start in range(0, n_samples, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= 2:
            out.append(idx)
    if not out and n_samples >= 1:
        out = [order]
    return out


def _deliver_votes(server: ServerState, client: ClientState, t: int,
                   ledger: CommLedger) -> None:
    """Send every vote the client has not applied yet (exactly one in the
    default all-clients broadcast) through the wire codec and apply in order."""
    head = client.head
    for r in range(head.replica_version + 1, t + 1):
        vote, delta_r = server.broadcast_log[r - 1]
        received = SignVector.decode(vote.encode())
        params = head.net.flatten_params()
        head.net.unflatten_params(apply_vote(params, received, delta_r))
        ledger.record(MessageKind.VOTE_DOWN, t, client.cid, "down", received.payload_bits)
    head.replica_version = t


def _client_sign_pass(client: ClientState, cfg: FederationConfig, t: int,
                      head_frozen: GlobalHead):
    """One local epoch; local parts take sign steps, head gradient accumulates."""
    rng = child_rng(cfg.seed, "batch", client.cid, t)
    delta_t = delta_for_round(cfg, t)
    head_accum = np.zeros(head_frozen.net.parameter_count)
    sums = np.zeros(4)  # l1, l2, lg, total
    count = 0
    for idx in _batches(client.samples, cfg.batch_size, rng):
        xb, yb = client.x[idx], client.y[idx]
        if client.local is not None:
            grads, brk = two_stage_backward(
                client.local, head_frozen, xb, yb,
                cfg.alpha1, cfg.alpha2, cfg.lam, estimator=cfg.dcor_estimator,
            )
            enc = client.local.encoder
            enc.unflatten_params(
                apply_vote(enc.flatten_params(), sign_compress(grads.encoder), delta_t)
            )
            aux = client.local.aux_head
            aux.unflatten_params(
                apply_vote(aux.flatten_params(), sign_compress(grads.aux_head), delta_t)
            )
            head_accum += grads.global_head
            sums += (brk.leak, brk.fit, brk.global_fit, brk.total)
        else:
            logits, cache = head_frozen.net.forward(xb)
            lg, glogits = softmax_cross_entropy(logits, yb)
            flat, _ = head_frozen.net.backward(cache, glogits)
            head_accum += flat
            sums += (0.0, 0.0, lg, lg)
        count += 1
    return sign_compress(head_accum), sums / max(count, 1)


def _sign_round(server: ServerState, clients, cfg: FederationConfig,
                ledger: CommLedger) -> RoundRecord:
    t = server.t + 1
    participants = sample_participants(server.rng, server.m, cfg.participation)
    delta_t = delta_for_round(cfg, t)

    if t == 1:
        # the one-time model download every device already holds
        for client in clients:
            ledger.record(MessageKind.MODEL_INIT, t, client.cid, "down",
                          server.global_params.size * PARAM_WIRE_BITS)

    server.broadcast_log.append((server.last_vote, delta_t))
    targets = clients if cfg.broadcast_scope == "all" else [clients[p] for p in participants]
    for client in targets:
        _deliver_votes(server, client, t, ledger)
    server.global_params = apply_vote(server.global_params, server.last_vote, delta_t)

    uploads = []
    sums = np.zeros(4)
    for pid in participants:
        client = clients[pid]
        sv, losses = _client_sign_pass(client, cfg, t, client.head)
        received = SignVector.decode(sv.encode())
        if received.length != server.global_params.size:
            raise ProtocolError(
                f"client {pid} returned {received.length} sign coordinates, "
                f"expected {server.global_params.size}; round {t} aborted"
            )
        ledger.record(MessageKind.SIGN_UP, t, client.cid, "up", received.payload_bits)
        uploads.append(received)
        sums += losses
    server.last_vote = majority_vote(uploads).decision
    server.t = t

    up, down = ledger.round_payload(t)
    l1, l2, lg, total = sums / len(participants)
    return RoundRecord(round=t, l1=l1, l2=l2, lg=lg, loss=total,
                       up_bits=up, down_bits=down,
                       cum_bits=ledger.total_payload_bits)


def _avg_round(server: ServerState, clients, cfg: FederationConfig,
               ledger: CommLedger) -> RoundRecord:
    t = server.t + 1
    participants = sample_participants(server.rng, server.m, cfg.participation)
    delta_t = delta_for_round(cfg, t)

    uploads = []
    loss_sum = 0.0
    for pid in participants:
        client = clients[pid]
        received = decode_params(encode_params(server.global_params))
        ledger.record(MessageKind.PARAMS_DOWN, t, pid, "down",
                      received.size * PARAM_WIRE_BITS)
        client.model.unflatten_params(received)
        anchor = received
        rng = child_rng(cfg.seed, "batch", pid, t)
        batch_losses = []
        for idx in _batches(client.samples, cfg.batch_size, rng):
            xb, yb = client.x[idx], client.y[idx]
            logits, cache = client.model.forward(xb)
            loss, glogits = softmax_cross_entropy(logits, yb)
            flat, _ = client.model.backward(cache, glogits)
            if cfg.algorithm == "fedprox":
                flat = fedprox_local_grad(flat, client.model.flatten_params(),
                                          anchor, cfg.mu)
            client.model.unflatten_params(
                client.model.flatten_params() - delta_t * flat
            )
            batch_losses.append(loss)
        loss_sum += float(np.mean(batch_losses))
        sent = decode_params(encode_params(client.model.flatten_params()))
        ledger.record(MessageKind.PARAMS_UP, t, pid, "up",
                      sent.size * PARAM_WIRE_BITS)
        uploads.append((sent, client.samples))
    server.global_params = fedavg_aggregate(uploads)
    server.t = t

    up, down = ledger.round_payload(t)
    lg = loss_sum / len(participants)
    return RoundRecord(round=t, l1=0.0, l2=0.0, lg=lg, loss=lg,
                       up_bits=up, down_bits=down,
                       cum_bits=ledger.total_payload_bits)


def run_round(server: ServerState, clients, cfg: FederationConfig,
              ledger: CommLedger) -> RoundRecord:
    """Advance the federation by one round of the configured algorithm."""
    started = time.perf_counter()
    if cfg.algorithm in ("two_stage", "signsgd_only"):
        rec = _sign_round(server, clients, cfg, ledger)
    elif cfg.algorithm in ("fedavg", "fedprox"):
        rec = _avg_round(server, clients, cfg, ledger)
    else:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}")
    rec.wall_ms = (time.perf_counter() - started) * 1000.0
    return rec


def predict_total_bits(algorithm: str, *, m: int, rounds: int,
                       grad_size: Optional[int] = None,
                       param_count: Optional[int] = None,
                       c: float = 1.0, mode: str = "init_once",
                       scope: str = "all") -> int:
    """Analytic payload-bit total for a run (headers excluded).

    ``init_once``: one 32-bit-per-parameter model download per device before
    round 1, then each round moves 1 bit per gradient coordinate down to the
    broadcast scope and up from each participant. ``table2_literal`` instead
    charges the model download every round and full-client traffic both ways.
    FedAvg/FedProx move 32-bit parameter vectors both ways for participants
    only. Assumes broadcast_scope="all" for the sign algorithms.
    """
    if rounds < 0 or m < 1:
        raise UsageError("need m >= 1 and rounds >= 0")
    n = participant_count(c, m)
    if algorithm in ("fedavg", "fedprox"):
        if param_count is None:
            raise UsageError("fedavg prediction needs param_count")
        return rounds * n * 2 * param_count * PARAM_WIRE_BITS
    if algorithm in ("two_stage", "signsgd_only"):
        if grad_size is None:
            raise UsageError("sign prediction needs grad_size")
        params = param_count if param_count is not None else grad_size
        if mode == "table2_literal":
            return rounds * (m * params * PARAM_WIRE_BITS + 2 * m * grad_size)
        if mode != "init_once":
            raise UsageError(f"unknown predictor mode {mode!r}")
        if scope != "all":
            raise UsageError("predictor models broadcast_scope='all' only")
        init = m * params * PARAM_WIRE_BITS if rounds >= 1 else 0
        return init + rounds * (m * grad_size + n * grad_size)
    raise UsageError(f"unknown algorithm {algorithm!r}")


# --- experiment wiring --------------------------------------------------------


def build_dataset(cfg: FederationConfig):
    """Materialize (train, test) per the dataset spec."""
    ds = cfg.dataset
    if ds.kind == "blobs":
        full = synth_blobs(ds.classes, ds.per_class, ds.dim, ds.spread, cfg.seed)
        return train_test_split(full, ds.test_fraction, cfg.seed)
    if ds.kind == "image_blobs":
        full = synth_image_blobs(ds.classes, ds.per_class, ds.side, ds.spread,
                                 cfg.seed, ring_amp=ds.ring_amp,
                                 pattern_amp=ds.pattern_amp)
        return train_test_split(full, ds.test_fraction, cfg.seed)
    if ds.kind == "idx":
        full = load_idx(ds.images, ds.labels)
        if ds.limit:
            full = full.subset(np.arange(min(ds.limit, full.n)))
        if ds.test_images and ds.test_labels:
            test = load_idx(ds.test_images, ds.test_labels)
            if ds.limit:
                test = test.subset(np.arange(min(ds.limit, test.n)))
            return full, test
        return train_test_split(full, ds.test_fraction, cfg.seed)
    raise ConfigError(f"unknown dataset kind {ds.kind!r}")


def build_partition(cfg: FederationConfig, train: Dataset):
    part = cfg.partition
    if part.scheme == "iid":
        return partition_iid(train, cfg.clients, cfg.seed)
    plan = partition_shard_noniid(train, part.shard_count, part.shard_size,
                                  part.shards_per_client, cfg.seed)
    if len(plan.assignment) != cfg.clients:
        raise ConfigError(
            f"shard plan yields {len(plan.assignment)} clients, config says {cfg.clients}"
        )
    return plan


def smashed_dim_for(cfg: FederationConfig, raw_dim: int) -> int:
    q = cfg.smashed_dim if cfg.smashed_dim else math.ceil(raw_dim / 8)
    if not 1 <= q < raw_dim:
        raise ConfigError(
            f"smashed_dim must lie in [1, raw dim); got {q} for raw dim {raw_dim}"
        )
    return q


def _full_model_dims(cfg: FederationConfig, raw_dim: int, q: int, classes: int):
    return [raw_dim, *cfg.model.encoder_hidden, q, *cfg.model.global_hidden, classes]


@dataclass
class Experiment:
    """A wired, ready-to-run federation."""

    cfg: FederationConfig
    server: ServerState
    clients: list
    ledger: CommLedger
    train: Dataset
    test: Dataset
    head_template: Optional[Network]
    q: int
    task: str


@dataclass
class ExperimentResult:
    records: list
    summary: RunSummary
    experiment: Experiment

    @property
    def ledger(self) -> CommLedger:
        return self.experiment.ledger


def _task_tag(cfg: FederationConfig, train: Dataset, plan_scheme: str) -> str:
    ds = cfg.dataset
    if ds.kind == "idx":
        data = f"idx({ds.images},n={train.n})"
    elif ds.kind == "image_blobs":
        data = (f"image_blobs(classes={ds.classes},per_class={ds.per_class},"
                f"side={ds.side},spread={ds.spread})")
    else:
        data = (f"blobs(classes={ds.classes},per_class={ds.per_class},"
                f"dim={ds.dim},spread={ds.spread})")
    return f"{data}|{plan_scheme}|m={cfg.clients}"


def build_experiment(cfg: FederationConfig) -> Experiment:
    """Validate the config, build data + models, and seed all state."""
    validate_config(cfg)
    train, test = build_dataset(cfg)
    plan = build_partition(cfg, train)
    classes = train.classes
    act = cfg.model.activation
    q = smashed_dim_for(cfg, train.dim)

    clients = []
    if cfg.algorithm == "two_stage":
        head_template = new_network([q, *cfg.model.global_hidden, classes],
                                    act, "identity", child_rng(cfg.seed, "init", "head"))
        head_params = quantize_params(head_template.flatten_params())
        for cid in range(cfg.clients):
            shard = train.subset(plan.assignment[cid])
            encoder = new_network([train.dim, *cfg.model.encoder_hidden, q], act,
                                  "identity", child_rng(cfg.seed, "init", "enc", cid))
            aux = new_network([q, *cfg.model.aux_hidden, classes], act,
                              "identity", child_rng(cfg.seed, "init", "aux", cid))
            head = GlobalHead(head_template.copy())
            head.net.unflatten_params(head_params)
            clients.append(ClientState(cid=cid, x=shard.x, y=shard.y,
                                       local=LocalModel(encoder, aux), head=head))
        global_params = head_params
    elif cfg.algorithm == "signsgd_only":
        head_template = new_network(_full_model_dims(cfg, train.dim, q, classes),
                                    act, "identity", child_rng(cfg.seed, "init", "global"))
        head_params = quantize_params(head_template.flatten_params())
        for cid in range(cfg.clients):
            shard = train.subset(plan.assignment[cid])
            head = GlobalHead(head_template.copy())
            head.net.unflatten_params(head_params)
            clients.append(ClientState(cid=cid, x=shard.x, y=shard.y, head=head))
        global_params = head_params
    else:
        head_template = new_network(_full_model_dims(cfg, train.dim, q, classes),
                                    act, "identity", child_rng(cfg.seed, "init", "global"))
        for cid in range(cfg.clients):
            shard = train.subset(plan.assignment[cid])
            clients.append(ClientState(cid=cid, x=shard.x, y=shard.y,
                                       model=head_template.copy()))
        global_params = head_template.flatten_params()

    server = ServerState(
        m=cfg.clients,
        global_params=global_params,
        rng=child_rng(cfg.seed, "sample"),
        last_vote=SignVector.from_signs(np.ones(global_params.size, dtype=np.int8)),
    )
    return Experiment(cfg=cfg, server=server, clients=clients,
                      ledger=CommLedger(), train=train, test=test,
                      head_template=head_template, q=q,
                      task=_task_tag(cfg, train, plan.scheme))


def evaluate(exp: Experiment) -> float:
    """Test accuracy of the current global state."""
    cfg, server = exp.cfg, exp.server
    if cfg.algorithm == "two_stage":
        head = GlobalHead(exp.head_template.copy())
        head.net.unflatten_params(server.global_params)
        preds = ensemble_infer(exp.test.x, [c.local for c in exp.clients],
                               head, mode=cfg.ensemble_mode)
    else:
        net = exp.head_template.copy()
        net.unflatten_params(server.global_params)
        logits, _ = net.forward(exp.test.x)
        preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == exp.test.y))


def _warmup(exp: Experiment) -> None:
    """Optional local-only epochs before any federation round (two_stage)."""
    cfg = exp.cfg
    if cfg.warmup_rounds == 0 or cfg.algorithm != "two_stage":
        return
    import dataclasses

    local_cfg = dataclasses.replace(cfg, lam=0.0)
    for w in range(1, cfg.warmup_rounds + 1):
        for client in exp.clients:
            _client_sign_pass(client, local_cfg, -w, client.head)


def run_experiment(cfg: FederationConfig, round_hook=None,
                   setup_hook=None) -> ExperimentResult:
    """Run the configured number of rounds; deterministic given the config.

    ``setup_hook(experiment)`` fires once before round 1 and
    ``round_hook(experiment, record)`` after every round, both with
    read-only intent (probes may attach a dcor value to the record).
    """
    exp = build_experiment(cfg)
    initial_accuracy = evaluate(exp)
    _warmup(exp)
    if setup_hook is not None:
        setup_hook(exp)

    records = []
    final_accuracy = initial_accuracy
    rounds_to_target = -1
    bits_to_target = -1
    for t in range(1, cfg.rounds + 1):
        rec = run_round(exp.server, exp.clients, cfg, exp.ledger)
        if t % cfg.eval_interval == 0 or t == cfg.rounds:
            rec.accuracy = evaluate(exp)
            final_accuracy = rec.accuracy
            if (rounds_to_target < 0 and cfg.target_accuracy > 0.0
                    and rec.accuracy >= cfg.target_accuracy):
                rounds_to_target = t
                bits_to_target = rec.cum_bits
        if round_hook is not None:
            round_hook(exp, rec)
        records.append(rec)

    summary = RunSummary(
        task=exp.task,
        algorithm=cfg.algorithm,
        seed=cfg.seed,
        rounds=cfg.rounds,
        clients=cfg.clients,
        initial_accuracy=initial_accuracy,
        final_accuracy=final_accuracy,
        target_accuracy=cfg.target_accuracy,
        rounds_to_target=rounds_to_target,
        bits_to_target=bits_to_target,
        total_payload_bits=exp.ledger.total_payload_bits,
        total_header_bits=exp.ledger.total_header_bits,
    )
    return ExperimentResult(records=records, summary=summary, experiment=exp)
