"""
Run output streams: JSONL trace records and CSV summary rows.
Records carry a `kind` field: slot, epoch, event, verdict, sparse or report.
"""
import csv
import json
from pathlib import Path
from typing import IO, Iterable, Optional

from coded_backoff.errors import ConfigError
from coded_backoff.models import CSV_FIELDS, RunReport


def encode_record(record: dict) -> str:
    """One canonical JSON line: sorted keys, no spaces."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


class Recorder:
    """
    JSONL sink with an explicit open/close lifecycle. Without a path every write is
    dropped; `keep` retains records in memory (used by tests and sweeps).
    """

    def __init__(self, path: Optional[str] = None, keep: bool = False):
        self.path = path
        self.keep = keep
        self.records: list[dict] = []
        self.count = 0
        self._stream: Optional[IO[str]] = None

    def open(self) -> "Recorder":
        if self.path is not None and self._stream is None:
            try:
                Path(self.path).parent.mkdir(parents=True, exist_ok=True)
                self._stream = open(self.path, "w", encoding="utf-8", newline="\n")
            except OSError as e:
                raise ConfigError(f"cannot open output {self.path}: {e.strerror}") from None
        return self

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()
            self._stream = None

    def __enter__(self) -> "Recorder":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def active(self) -> bool:
        """True when writes go somewhere."""
        return self._stream is not None or self.keep

    def write(self, record: dict) -> None:
        self.count += 1
        if self.keep:
            self.records.append(record)
        if self._stream is not None:
            self._stream.write(encode_record(record))
            self._stream.write("\n")

    def of_kind(self, kind: str) -> list[dict]:
        return [record for record in self.records if record["kind"] == kind]


def write_csv(reports: Iterable[RunReport], stream: IO[str]) -> None:
    """Header plus one row per report, '\\n' line endings."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for report in reports:
        writer.writerow(report.csv_row())
