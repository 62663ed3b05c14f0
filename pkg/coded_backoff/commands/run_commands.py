"""
Handlers for the run, batch and sweep verbs.
"""
import logging

from coded_backoff.commands.rendering import render
from coded_backoff.recorder import Recorder, encode_record, write_csv
from coded_backoff.services import simcore

logger = logging.getLogger(__name__)


def _emit_reports(rows, command, stdout, template: str, **context) -> None:
    if command.format == "csv":
        write_csv(rows, stdout)
    elif command.format == "jsonl":
        for report in rows:
            stdout.write(encode_record(report.to_record()) + "\n")
    else:
        stdout.write(render(template, **context))


def sweep_status(reports) -> int:
    """2 when any cell failed a strict check, 1 when any cell failed otherwise."""
    if any(report.check_failed for report in reports):
        return 2
    if any(report.error is not None for report in reports):
        return 1
    return 0


def handle_run(command, stdout) -> int:
    """Run one configuration; the JSONL stream goes to --out, the report to stdout."""
    with Recorder(command.out) as recorder:
        report = simcore.run(command.config, recorder)
    _emit_reports([report], command, stdout, "report.txt.j2", r=report)
    return 0


def handle_sweep(command, stdout) -> int:
    options = command.options
    grid = simcore.build_grid(options["base"], options["kappas"], options["seeds"], options["ns"])
    logger.info("sweep: %d cells, jobs=%s", len(grid), options["jobs"])
    reports = simcore.sweep(grid, jobs=options["jobs"])
    if command.out:
        with Recorder(command.out) as recorder:
            for report in reports:
                recorder.write(report.to_record())
    _emit_reports(reports, command, stdout, "sweep.txt.j2", reports=reports)
    status = sweep_status(reports)
    if status:
        logger.warning("sweep: %d of %d cells failed", sum(r.error is not None for r in reports), len(reports))
    return status
