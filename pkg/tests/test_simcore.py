"""
End-to-end tests of the run loop, sweeps and the coding verification driver.
"""
import csv
import io

import pytest

from coded_backoff.errors import ConfigError, InvariantError
from coded_backoff.models import CSV_FIELDS, parse_csv_row
from coded_backoff.recorder import Recorder, write_csv
from coded_backoff.services import simcore
from coded_backoff.services.seeding import mix_seed


def test_single_packet_is_delivered(make_config):
    report = simcore.run(make_config(kappa=64, schedule={"kind": "batch", "n": 1}))
    assert report.all_delivered
    assert report.delivered == 1
    assert report.max_latency >= 1
    assert report.completion_slot <= report.batch_bound


def test_batch_horizon_defaults_to_bound_plus_one(make_config):
    config = make_config()
    assert config.horizon == int(4 * 16 + 50 * (1 + 10 / 16)) + 1


def test_strict_batch_holds_every_bound(make_config):
    recorder = Recorder(keep=True)
    report = simcore.run(make_config(strict_lemmas=True), recorder)
    assert report.verdict_violations == 0
    assert report.activation_violations == 0
    assert report.decoder_mismatches == 0
    assert report.verdicts_checked == report.epochs
    assert report.decoder_events == report.successful
    assert len(recorder.of_kind("verdict")) >= report.verdicts_checked
    assert recorder.of_kind("report")[0]["delivered"] == report.delivered


def test_successful_epochs_keep_monotone_terms(make_config):
    recorder = Recorder(keep=True)
    config = make_config(horizon=8_000, strict_lemmas=True, schedule={"kind": "smooth", "w": 4096, "rate": 0.5})
    simcore.run(config, recorder)
    successful = [v for v in recorder.of_kind("verdict") if v.get("epoch") == "successful"]
    assert successful
    assert all(v["terms_ok"] for v in successful)
    assert any(v["arrivals"] > 0 for v in successful)


def test_strict_smooth_schedule(make_config):
    config = make_config(
        horizon=20_000, strict_lemmas=True,
        schedule={"kind": "smooth", "w": 4096, "rate": 0.5},
    )
    report = simcore.run(config)
    assert report.arrivals == 10_000
    assert report.verdict_violations == 0
    assert report.decoder_mismatches == 0
    assert report.delivered > 0


def test_runs_are_byte_identical(make_config, tmp_path):
    outputs = []
    for name in ("first.jsonl", "second.jsonl"):
        path = tmp_path / name
        with Recorder(str(path)) as recorder:
            simcore.run(make_config(seed=21), recorder)
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    assert b'"kind":"report"' in outputs[0]


def test_fixed_baseline_skips_potential_checks(make_config):
    report = simcore.run(make_config(protocol="fixed", fixed_p=0.25))
    assert report.protocol == "fixed"
    assert report.verdicts_checked == 0
    assert report.arrivals == 50


def test_sparse_detection_reports_slots(make_config):
    report = simcore.run(make_config(detect_sparse=True, schedule={"kind": "batch", "n": 1}))
    assert report.sparse_events > 0
    assert report.sampled_slots == report.horizon


def test_trace_schedule_horizon(make_config, write_file):
    path = write_file("arrivals.csv", "0,2\n5,1\n")
    report = simcore.run(make_config(schedule={"kind": "trace", "trace": path}))
    assert report.arrivals == 3
    assert report.horizon == 6 + int(4 * 16 + 3 * (1 + 10 / 16)) + 1


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError):
        simcore.sweep([])


def test_sweep_over_kappas():
    grid = simcore.build_grid({"schedule": {"kind": "batch", "n": 20}}, kappas=[6, 8, 16], seeds=[4])
    reports = simcore.sweep(grid)
    assert [report.kappa for report in reports] == [6, 8, 16]
    assert all(report.seed == 4 for report in reports)
    assert all(report.error is None for report in reports)


def test_sweep_records_failing_cell(tmp_path):
    grid = simcore.build_grid(
        {"schedule": {"kind": "trace", "trace": str(tmp_path / "missing.csv")}}, kappas=[16],
    )
    reports = simcore.sweep(grid)
    assert len(reports) == 1
    assert "cannot read trace" in reports[0].error
    assert not reports[0].check_failed


def test_sweep_marks_failed_checks(monkeypatch):
    def fail(config, recorder=None):
        raise InvariantError("decoder and protocol disagree at slot 3")

    monkeypatch.setattr(simcore, "run", fail)
    grid = simcore.build_grid({"schedule": {"kind": "batch", "n": 5}, "strict_lemmas": True}, kappas=[16, 64])
    reports = simcore.sweep(grid)
    assert all(report.check_failed for report in reports)
    assert "disagree" in reports[0].error
    assert reports[1].kappa == 64


def test_negative_seed_rejected(make_config):
    with pytest.raises(ConfigError, match="seed"):
        make_config(seed=-1)


def test_grid_seeds_are_mixed():
    grid = simcore.build_grid({"seed": 5, "schedule": {"kind": "batch", "n": 10}}, ns=[10, 20])
    assert [cell.seed for cell in grid] == [mix_seed(5, 0), mix_seed(5, 1)]
    assert [cell.schedule.n for cell in grid] == [10, 20]


def test_mix_seed_is_stable():
    assert mix_seed(1, 0) == mix_seed(1, 0)
    assert mix_seed(1, 0) != mix_seed(1, 1)
    assert 0 <= mix_seed(1, 2) < 2 ** 32


def test_verify_coding_round_trips():
    stats = simcore.verify_coding(6, 30, seed=0, payload_len=4)
    assert stats.trials == 30
    assert stats.roundtrip_failures == 0
    assert sum(stats.sizes.values()) == 30


def test_verify_coding_rejects_zero_trials():
    with pytest.raises(ConfigError):
        simcore.verify_coding(6, 0)


def test_run_with_coding_verification(make_config):
    report = simcore.run(make_config(verify_coding=True, payload_len=2))
    assert report.coding.trials == report.decoder_events
    assert report.coding.roundtrip_failures == 0


def test_csv_row_parses_back(make_config):
    report = simcore.run(make_config())
    stream = io.StringIO()
    write_csv([report], stream)
    header, row = list(csv.reader(io.StringIO(stream.getvalue())))
    assert tuple(header) == CSV_FIELDS
    parsed = parse_csv_row(header, row)
    assert parsed["kappa"] == 16
    assert parsed["arrivals"] == report.arrivals
    assert parsed["throughput"] == report.throughput
    assert parsed["w"] is None
