"""
Tests for argument parsing, config precedence and exit statuses.
"""
import csv
import io
import json

import pytest

from coded_backoff import cli
from coded_backoff.config import SEED_ENV_VAR
from coded_backoff.errors import ConfigError, LemmaViolationError
from coded_backoff.models import CSV_FIELDS, parse_csv_row
from coded_backoff.services import simcore


def _main(argv):
    stdout = io.StringIO()
    status = cli.main(argv, stdout=stdout)
    return status, stdout.getvalue()


def test_parse_batch():
    command = cli.parse_args(["batch", "--n", "100", "--kappa", "16", "--strict-lemmas"])
    assert command.verb == "batch"
    assert command.config.schedule.n == 100
    assert command.config.kappa == 16
    assert command.config.strict_lemmas
    assert command.format == "human"


def test_parse_run_smooth():
    command = cli.parse_args([
        "run", "--kappa", "16", "--schedule", "smooth", "--w", "4096", "--rate", "0.5",
        "--horizon", "1000", "--seed", "7", "--format", "jsonl",
    ])
    config = command.config
    assert (config.schedule.kind, config.schedule.w, config.schedule.rate) == ("smooth", 4096, 0.5)
    assert (config.horizon, config.seed) == (1000, 7)
    assert command.format == "jsonl"


def test_parse_sweep_lists():
    command = cli.parse_args(["sweep", "--kappas", "16,64", "--seeds", "1-3,9", "--n", "10"])
    assert command.options["kappas"] == [16, 64]
    assert command.options["seeds"] == [1, 2, 3, 9]
    assert command.options["base"]["horizon"] is None


def test_batch_requires_nonzero_n():
    with pytest.raises(ConfigError):
        cli.parse_args(["batch", "--n", "0"])


@pytest.mark.parametrize("argv", [
    ["batch", "--n", "0"],
    ["batch"],
    ["run", "--kappa", "4", "--n", "10"],
    ["run", "--kappa", "16", "--schedule", "smooth", "--w", "100", "--horizon", "10"],
    ["run", "--kappa", "16", "--schedule", "smooth", "--w", "4096"],
    ["run", "--bogus"],
    ["sweep", "--seeds", "x", "--n", "5"],
    ["validate", "--w", "10"],
    ["verify-coding", "--kappa", "3"],
])
def test_bad_command_lines_exit_one(argv, capsys):
    status, _ = _main(argv)
    assert status == 1
    assert "error" in capsys.readouterr().err


def test_failed_bound_exits_two(monkeypatch, capsys):
    def fail(config, recorder=None):
        raise LemmaViolationError("successful epoch delta=1 bound=-3")

    monkeypatch.setattr(simcore, "run", fail)
    status, _ = _main(["batch", "--n", "5", "--kappa", "16", "--strict-lemmas"])
    assert status == 2
    assert "check failed" in capsys.readouterr().err


def test_batch_human_report():
    status, out = _main(["batch", "--n", "10", "--kappa", "16", "--seed", "2"])
    assert status == 0
    assert out.startswith("coded backoff run: kappa=16 seed=2")
    assert "batch bound" in out


def test_batch_csv_parses_back():
    status, out = _main(["batch", "--n", "10", "--kappa", "16", "--format", "csv"])
    assert status == 0
    header, row = list(csv.reader(io.StringIO(out)))
    assert tuple(header) == CSV_FIELDS
    assert parse_csv_row(header, row)["arrivals"] == 10


def test_batch_writes_jsonl_stream(tmp_path):
    path = tmp_path / "run.jsonl"
    status, _ = _main(["batch", "--n", "10", "--kappa", "16", "--out", str(path)])
    assert status == 0
    kinds = {json.loads(line)["kind"] for line in path.read_text().splitlines()}
    assert {"slot", "epoch", "verdict", "report"} <= kinds


def test_sweep_csv_rows():
    status, out = _main(["sweep", "--kappas", "6,8", "--seeds", "1-2", "--n", "10", "--format", "csv"])
    assert status == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert len(rows) == 5
    assert [row[0] for row in rows[1:]] == ["6", "6", "8", "8"]


def test_replay_prints_events(staircase_trace):
    status, out = _main(["replay", "--trace", staircase_trace, "--kappa", "3"])
    assert status == 0
    assert "DecodingEvent(size=3, window=[1,3], packets={a,b,c})" in out
    assert out.rstrip().endswith("1 decoding events over 3 slots")


def test_validate_ok(write_file):
    path = write_file("arrivals.csv", "0,1\n10,1\n")
    status, out = _main(["validate", "--trace", path, "--w", "4", "--kappa", "6", "--rate", "0.5"])
    assert status == 0
    assert out.startswith("ok")


def test_validate_violation_still_exits_zero(write_file):
    path = write_file("arrivals.csv", "0,5\n1,5\n")
    status, out = _main(["validate", "--trace", path, "--w", "4", "--kappa", "6", "--rate", "0.5",
                         "--format", "jsonl"])
    assert status == 0
    record = json.loads(out)
    assert record["ok"] is False
    assert (record["slot"], record["window_sum"], record["cap"]) == (0, 10, 2)


def test_verify_coding_jsonl():
    status, out = _main(["verify-coding", "--kappa", "6", "--trials", "5", "--payload-len", "2",
                         "--format", "jsonl"])
    assert status == 0
    record = json.loads(out)
    assert record["kind"] == "coding"
    assert record["trials"] == 5
    assert record["roundtrip_failures"] == 0


def test_config_file_and_env_precedence(write_file, monkeypatch):
    path = write_file("run.conf", "# defaults\nkappa = 8\nseed = 5\nstrict-lemmas = yes\n")
    monkeypatch.setenv(SEED_ENV_VAR, "9")
    from_file = cli.parse_args(["batch", "--n", "5", "--config", path])
    assert (from_file.config.kappa, from_file.config.seed) == (8, 5)
    assert from_file.config.strict_lemmas
    from_flag = cli.parse_args(["batch", "--n", "5", "--config", path, "--seed", "11"])
    assert from_flag.config.seed == 11
    from_env = cli.parse_args(["batch", "--n", "5"])
    assert from_env.config.seed == 9


def test_config_file_unknown_key(write_file):
    path = write_file("run.conf", "kappa = 8\ncolour = blue\n")
    with pytest.raises(ConfigError, match=":2:"):
        cli.parse_args(["batch", "--n", "5", "--config", path])


def test_bad_env_seed(monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "abc")
    with pytest.raises(ConfigError):
        cli.parse_args(["batch", "--n", "5"])


def test_parse_theorem_rate_run_is_valid():
    command = cli.parse_args([
        "run", "--kappa", "64", "--schedule", "smooth", "--w", "65536", "--horizon", "1000000", "--seed", "7",
    ])
    assert command.config.schedule.rate is None
    assert command.config.effective_stride == 1
    assert command.config.effective_lookback == 128


def test_sweep_human_table():
    status, out = _main(["sweep", "--kappas", "6", "--n", "5"])
    assert status == 0
    assert out.rstrip().endswith("1 cells, 0 failed")


def test_sweep_jsonl_reports():
    status, out = _main(["sweep", "--kappas", "6,8", "--n", "5", "--format", "jsonl"])
    assert status == 0
    records = [json.loads(line) for line in out.splitlines()]
    assert [record["kappa"] for record in records] == [6, 8]
    assert all(record["check_failed"] is False for record in records)


def test_sweep_failed_check_exits_two(monkeypatch, capsys):
    def fail(config, recorder=None):
        raise LemmaViolationError("successful epoch delta=1 bound=-3")

    monkeypatch.setattr(simcore, "run", fail)
    status, out = _main(["sweep", "--kappas", "16", "--n", "5", "--strict-lemmas"])
    assert status == 2
    assert "1 cells, 1 failed" in out
    assert "check failed" in out


def test_sweep_failed_cell_exits_one(tmp_path):
    missing = str(tmp_path / "missing.csv")
    status, out = _main(["sweep", "--kappas", "16", "--schedule", "trace", "--trace", missing])
    assert status == 1
    assert "1 cells, 1 failed" in out


@pytest.mark.parametrize("argv", [
    ["batch", "--n", "5", "--kappa", "16", "--seed", "-1"],
    ["verify-coding", "--kappa", "6", "--trials", "5", "--seed", "-1"],
    ["batch", "--n", "5", "--seed", str(2 ** 128)],
])
def test_out_of_range_seed_exits_one(argv, capsys):
    status, _ = _main(argv)
    assert status == 1
    assert "seed must be in [0, 2**128)" in capsys.readouterr().err


def test_negative_env_seed(monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "-3")
    with pytest.raises(ConfigError, match="must be in"):
        cli.parse_args(["batch", "--n", "5"])


def test_verify_coding_human_names_the_estimate():
    status, out = _main(["verify-coding", "--kappa", "6", "--trials", "5", "--payload-len", "2"])
    assert status == 0
    assert "Monte Carlo estimate" in out
