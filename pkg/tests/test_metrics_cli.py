import numpy as np
import pytest

from splitvote import UsageError, compare_runs
from splitvote.cli import main
from splitvote.metrics import (CSV_COLUMNS, RoundRecord, RunSummary,
                               emit_metrics, read_summary, write_summary)


def summary(**overrides):
    base = dict(task="blobs|iid|m=2", algorithm="two_stage", seed=0, rounds=5,
                clients=2, initial_accuracy=0.5, final_accuracy=0.9,
                target_accuracy=0.8, rounds_to_target=3, bits_to_target=300,
                total_payload_bits=500, total_header_bits=640)
    base.update(overrides)
    return RunSummary(**base)


def test_zero_rounds_header_only(tmp_path):
    csv_path = tmp_path / "m.csv"
    emit_metrics([], summary(rounds=0), csv_path, tmp_path / "s.txt")
    lines = csv_path.read_text().splitlines()
    assert lines == [",".join(CSV_COLUMNS)]
    loaded = read_summary(tmp_path / "s.txt")
    assert loaded["initial_accuracy"] == 0.5


def test_cumulative_column_is_prefix_sum(tmp_path):
    records = []
    cum = 0
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        up, down = int(rng.integers(10, 100)), int(rng.integers(10, 100))
        cum += up + down
        records.append(RoundRecord(round=t, up_bits=up, down_bits=down,
                                   cum_bits=cum))
    csv_path = tmp_path / "m.csv"
    emit_metrics(records, summary(), csv_path, tmp_path / "s.txt")
    rows = [line.split(",") for line in csv_path.read_text().splitlines()[1:]]
    running = 0
    for row in rows:
        running += int(row[6]) + int(row[7])
        assert int(row[8]) == running


def test_summary_roundtrip(tmp_path):
    path = tmp_path / "s.txt"
    write_summary(path, {"a": 1, "b": 2.5, "c": "text", "d": True})
    loaded = read_summary(path)
    assert loaded == {"a": 1, "b": 2.5, "c": "text", "d": "true"}


def test_compare_identical_runs_unity():
    report = compare_runs(summary().to_dict(), summary().to_dict())
    assert report["accuracy_delta"] == 0.0
    assert report["payload_bit_ratio"] == 1.0
    assert report["rounds_to_target_ratio"] == 1.0


def test_compare_mismatched_tasks_rejected():
    with pytest.raises(UsageError):
        compare_runs(summary().to_dict(), summary(task="other|iid|m=2").to_dict())


def test_compare_paper_reference_ratio():
    # reference ratio from the efficiency table: 4.526e9 / 2.292e10 ~ 0.197
    a = summary(rounds_to_target=437, bits_to_target=4_526_000_000,
                total_payload_bits=4_526_000_000)
    b = summary(rounds_to_target=689, bits_to_target=22_920_000_000,
                total_payload_bits=22_920_000_000)
    report = compare_runs(a.to_dict(), b.to_dict())
    assert report["payload_bit_ratio"] == pytest.approx(0.1975, abs=1e-3)


def test_compare_falls_back_to_totals():
    a = summary(rounds_to_target=-1, bits_to_target=-1, total_payload_bits=100)
    b = summary(total_payload_bits=400)
    report = compare_runs(a.to_dict(), b.to_dict())
    assert report["payload_bit_ratio"] == 0.25
    assert report["payload_basis"] == "total_payload_bits"


CONFIG = """
algorithm = two_stage
clients = 2
rounds = 3
batch_size = 16
smashed_dim = 2
seed = 4

[dataset]
kind = blobs
classes = 2
per_class = 40
dim = 6
spread = 0.1

[model]
encoder_hidden =
"""


def write_config(tmp_path, text=CONFIG):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_cli_run_writes_outputs(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert (out / "summary.txt").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "round,acc,l1,l2,lg,loss,up_bits,down_bits,cum_bits,dcor,ms"


def test_cli_rerun_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg_path), "--out", str(out_a)]) == 0
    assert main(["run", str(cfg_path), "--out", str(out_b)]) == 0
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
    assert (out_a / "summary.txt").read_bytes() == (out_b / "summary.txt").read_bytes()


def test_cli_seed_override_changes_output(tmp_path):
    cfg_path = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg_path), "--out", str(out_a)]) == 0
    assert main(["run", str(cfg_path), "--out", str(out_b), "--seed", "123"]) == 0
    assert (out_a / "metrics.csv").read_bytes() != (out_b / "metrics.csv").read_bytes()


def test_cli_config_error_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("participation = 2.0\n[dataset]\nkind = blobs\n")
    assert main(["run", str(path)]) == 2
    assert "participation" in capsys.readouterr().err


def test_cli_missing_dataset_exit_3(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(
        "[dataset]\nkind = idx\nimages = /nope/img\nlabels = /nope/lab\n"
    )
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 3


def test_cli_compare_runs(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["run", str(cfg_path), "--out", str(out_a)])
    main(["run", str(cfg_path), "--out", str(out_b)])
    code = main(["compare", str(out_a / "summary.txt"), str(out_b / "summary.txt"),
                 "--out", str(tmp_path / "cmp.txt")])
    assert code == 0
    text = (tmp_path / "cmp.txt").read_text()
    assert "payload_bit_ratio = 1.0" in text


def test_cli_repeats(tmp_path):
    cfg_path = write_config(tmp_path, "repeats = 2\n" + CONFIG)
    out = tmp_path / "rep"
    assert main(["run", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "metrics_r0.csv").exists()
    assert (out / "metrics_r1.csv").exists()
    agg = read_summary(out / "summary.txt")
    assert agg["repeats"] == 2
    assert "final_accuracy_mean" in agg


def test_cli_probe(tmp_path):
    cfg_path = write_config(tmp_path, CONFIG + "\nalpha1 = 0.5\n\n[probe]\nbatch = 24\nattack_seeds = 1\ndecoder_epochs = 20\nalphas = 0.1,0.9\n")
    out = tmp_path / "probe"
    assert main(["probe", str(cfg_path), "--out", str(out)]) == 0
    leak = (out / "leakage.csv").read_text().splitlines()
    assert leak[0] == "round,algorithm,dcor"
    assert len(leak) == 2 + 3  # header + round 0 + 3 rounds
    recon = (out / "reconstruction.csv").read_text().splitlines()
    assert recon[0] == "alpha1,seed,test_mse,diverged"
    assert len(recon) == 3
