"""
Pydantic models for run configuration and results.
RunConfig is validated on construction; RunReport is what every run hands back,
serialized as the JSONL `report` record, a CSV row, or the human summary.
"""
import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from coded_backoff.config import (
    DEFAULT_KAPPA,
    DEFAULT_PAYLOAD_LEN,
    DEFAULT_SEED,
    MIN_KAPPA,
    default_lookback,
    default_stride,
    seed_in_range,
)
from coded_backoff.errors import ConfigError

ScheduleKind = Literal["batch", "smooth", "bursts", "spread", "trace"]
WINDOWED_KINDS = ("smooth", "bursts", "spread")

CSV_FIELDS = (
    "kappa", "w", "seed", "horizon", "arrivals", "delivered", "max_backlog",
    "p50", "p99", "max_latency", "silent", "successful", "overfull", "error_epochs", "throughput",
)


def batch_bound(kappa: int, n: int) -> float:
    """Slot by which a batch of n should be fully delivered: 4 kappa + n(1 + 10/kappa)."""
    return 4 * kappa + n * (1 + 10 / kappa)


class ScheduleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ScheduleKind = "batch"
    n: Optional[int] = None
    w: Optional[int] = None
    rate: Optional[float] = None
    trace: Optional[str] = None


class RunConfig(BaseModel):
    kappa: int = DEFAULT_KAPPA
    horizon: Optional[int] = None
    seed: int = DEFAULT_SEED
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    strict_lemmas: bool = False
    verify_coding: bool = False
    stride: Optional[int] = None
    decoder_lookback: Optional[int] = None
    payload_len: int = DEFAULT_PAYLOAD_LEN
    protocol: Literal["decodable", "fixed"] = "decodable"
    fixed_p: Optional[float] = None
    continuous_backlog: bool = False
    detect_sparse: bool = False

    @field_validator("kappa")
    @classmethod
    def _kappa_floor(cls, value: int) -> int:
        if value < MIN_KAPPA:
            raise ValueError(f"kappa must be >= {MIN_KAPPA}, got {value}")
        return value

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value: int) -> int:
        if not seed_in_range(value):
            raise ValueError(f"seed must be in [0, 2**128), got {value}")
        return value

    @field_validator("horizon")
    @classmethod
    def _horizon_positive(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"horizon must be >= 1, got {value}")
        return value

    @field_validator("stride", "decoder_lookback", "payload_len")
    @classmethod
    def _positive(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("fixed_p")
    @classmethod
    def _probability(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0.0 < value <= 1.0:
            raise ValueError(f"fixed_p must be in (0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _schedule_consistent(self) -> "RunConfig":
        spec = self.schedule
        if spec.kind == "batch":
            if spec.n is None or spec.n < 1:
                raise ValueError(f"batch schedule needs n >= 1 (n != 0), got {spec.n}")
            if self.horizon is None:
                self.horizon = math.floor(batch_bound(self.kappa, spec.n)) + 1
        elif spec.kind in WINDOWED_KINDS:
            if spec.w is None:
                raise ValueError(f"{spec.kind} schedule needs --w")
            if spec.w < 16 * self.kappa ** 2:
                raise ValueError(f"w must be >= 16*kappa^2 = {16 * self.kappa ** 2}, got {spec.w}")
            if spec.rate is not None and not 0.0 < spec.rate < 1.0:
                raise ValueError(f"rate must be in (0, 1), got {spec.rate}")
            if self.horizon is None:
                raise ValueError(f"{spec.kind} schedule needs --horizon")
        elif spec.kind == "trace" and not spec.trace:
            raise ValueError("trace schedule needs --trace")
        return self

    @property
    def effective_stride(self) -> int:
        """Snapshot sampling stride; sparse detection reads every slot."""
        if self.detect_sparse:
            return 1
        if self.stride is not None:
            return self.stride
        return default_stride(self.horizon or 0)

    @property
    def effective_lookback(self) -> int:
        return self.decoder_lookback or default_lookback(self.kappa)


def build_run_config(**values) -> RunConfig:
    """RunConfig from plain values, with validation failures as one-line ConfigErrors."""
    try:
        return RunConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        message = first["msg"].removeprefix("Value error, ")
        raise ConfigError(f"{where}: {message}" if where else message) from None


class CodingStats(BaseModel):
    trials: int = 0
    singular: int = 0
    roundtrip_failures: int = 0
    empirical_rate: float = 0.0
    predicted_rate: float = 0.0
    z_score: Optional[float] = 0.0
    sizes: dict[int, int] = Field(default_factory=dict)

    @classmethod
    def from_tally(cls, tally) -> "CodingStats":
        return cls(
            trials=tally.trials,
            singular=tally.singular,
            roundtrip_failures=tally.roundtrip_failures,
            empirical_rate=tally.empirical_rate,
            predicted_rate=tally.predicted_rate,
            z_score=tally.z_score if math.isfinite(tally.z_score) else None,
            sizes=dict(sorted(tally.sizes.items())),
        )


class RunReport(BaseModel):
    kappa: int
    w: Optional[int] = None
    seed: int
    horizon: int
    protocol: str = "decodable"
    schedule: str = "batch"
    arrivals: int = 0
    delivered: int = 0
    final_backlog: int = 0
    max_backlog: int = 0
    mean_backlog: float = 0.0
    sampled_slots: int = 0
    p50: Optional[int] = None
    p99: Optional[int] = None
    max_latency: Optional[int] = None
    censored: int = 0
    silent: int = 0
    successful: int = 0
    overfull: int = 0
    error_epochs: int = 0
    error_rate: float = 0.0
    sparse_events: int = 0
    verdicts_checked: int = 0
    verdict_violations: int = 0
    activation_checks: int = 0
    activation_violations: int = 0
    decoder_events: int = 0
    decoder_mismatches: int = 0
    throughput: float = 0.0
    completion_slot: Optional[int] = None
    batch_bound: Optional[float] = None
    all_delivered: bool = False
    latency_ratio: Optional[float] = None
    coding: Optional[CodingStats] = None
    error: Optional[str] = None
    check_failed: bool = False
    wall_clock: float = 0.0

    @property
    def epochs(self) -> int:
        return self.silent + self.successful + self.overfull

    def to_record(self) -> dict:
        """JSONL `report` record; wall clock is left out so reruns stay byte-identical."""
        record = self.model_dump(mode="json", exclude={"wall_clock"})
        record["kind"] = "report"
        return record

    def csv_row(self) -> list[str]:
        return [_csv_value(getattr(self, name)) for name in CSV_FIELDS]


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_csv_row(header: list[str], row: list[str]) -> dict:
    """Typed report fields from one CSV row written by RunReport.csv_row."""
    if list(header) != list(CSV_FIELDS):
        raise ValueError(f"unexpected CSV header: {','.join(header)}")
    if len(row) != len(CSV_FIELDS):
        raise ValueError(f"expected {len(CSV_FIELDS)} columns, got {len(row)}")
    parsed = {}
    for name, raw in zip(CSV_FIELDS, row):
        if raw == "":
            parsed[name] = None
        elif name == "throughput":
            parsed[name] = float(raw)
        else:
            parsed[name] = int(raw)
    return parsed
