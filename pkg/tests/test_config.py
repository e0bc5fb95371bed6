import pytest

from splitvote import ConfigError, parse_config

MINIMAL = """
[dataset]
kind = blobs
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.algorithm == "two_stage"
    assert cfg.clients == 10
    assert cfg.participation == 1.0
    assert cfg.batch_size == 32
    assert cfg.delta == 0.01
    assert cfg.dataset.kind == "blobs"
    assert cfg.partition.scheme == "iid"
    assert cfg.probe.alphas == (0.1, 0.3, 0.5, 0.7, 0.9)


def test_full_config_parses():
    cfg = parse_config("""
algorithm = fedprox
clients = 5
participation = 0.4
batch_size = 16
delta = 0.05
rounds = 12
alpha1 = 0.3
alpha2 = 0.9
lambda = 1.5
mu = 0.1
smashed_dim = 3
seed = 99
eval_interval = 2
dcor_estimator = trace
ensemble_mode = aux_heads
broadcast_scope = participants
lr_decay = inv_sqrt
out = /tmp/some-run

[dataset]
kind = blobs
classes = 3
per_class = 100
dim = 16
spread = 0.25

[partition]
scheme = shard
shard_count = 10
shard_size = 20
shards_per_client = 2

[model]
encoder_hidden = 8,4
activation = relu
""")
    assert cfg.algorithm == "fedprox"
    assert cfg.lam == 1.5
    assert cfg.dcor_estimator == "trace"
    assert cfg.model.encoder_hidden == (8, 4)
    assert cfg.partition.shard_count == 10
    assert cfg.out == "/tmp/some-run"


def test_out_of_range_participation_names_key():
    with pytest.raises(ConfigError, match="participation"):
        parse_config("participation = 1.5\n" + MINIMAL)


def test_duplicate_key_reports_line():
    text = "rounds = 5\nrounds = 6\n" + MINIMAL
    with pytest.raises(ConfigError, match="line 2.*duplicate"):
        parse_config(text)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="line 1.*unknown key 'rouns'"):
        parse_config("rouns = 5\n" + MINIMAL)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(MINIMAL + "[nonsense]\nx = 1\n")


def test_bad_value_type_reports_line():
    with pytest.raises(ConfigError, match="integer"):
        parse_config("rounds = soon\n" + MINIMAL)


def test_missing_dataset_kind():
    with pytest.raises(ConfigError, match="kind"):
        parse_config("rounds = 5\n")


def test_negative_weight_rejected():
    with pytest.raises(ConfigError, match="alpha1"):
        parse_config("alpha1 = -0.5\n" + MINIMAL)


def test_zero_delta_rejected():
    with pytest.raises(ConfigError, match="delta"):
        parse_config("delta = 0\n" + MINIMAL)


def test_shard_scheme_needs_sizes():
    with pytest.raises(ConfigError, match="shard_count"):
        parse_config(MINIMAL + "[partition]\nscheme = shard\n")


def test_require_odd_participants_check():
    text = """
clients = 10
participation = 1.0
require_odd_participants = true
""" + MINIMAL
    with pytest.raises(ConfigError, match="even"):
        parse_config(text)
    ok = parse_config(text.replace("clients = 10", "clients = 9"))
    assert ok.clients == 9


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("""
# leading comment
rounds = 3  # trailing comment
; alt comment style

[dataset]
kind = blobs
""")
    assert cfg.rounds == 3


def test_idx_requires_paths():
    with pytest.raises(ConfigError, match="images"):
        parse_config("[dataset]\nkind = idx\n")
