"""
Arrival schedules: batches, window-rate-limited generators, trace files, and the sliding-window validator.
All schedules are oblivious: fixed before the run starts.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from coded_backoff.errors import ScheduleError, TraceParseError
from coded_backoff.services.seeding import STREAM_ADVERSARY, derive_rng

logger = logging.getLogger(__name__)

PATTERN_SMOOTH = "smooth"
PATTERN_BURSTS = "frontloaded-bursts"
PATTERN_SPREAD = "random-spread"
PATTERNS = (PATTERN_SMOOTH, PATTERN_BURSTS, PATTERN_SPREAD)

# CLI schedule names -> generator patterns
SCHEDULE_PATTERNS = {
    "smooth": PATTERN_SMOOTH,
    "bursts": PATTERN_BURSTS,
    "spread": PATTERN_SPREAD,
}

# Proposal intensity of the random-spread pattern, relative to the capped per-slot rate
SPREAD_INTENSITY = 1.5


@dataclass(frozen=True)
class ArrivalSchedule:
    """Sparse arrivals: sorted slots with positive counts, all below `horizon`."""
    slots: np.ndarray
    counts: np.ndarray
    horizon: int
    window_w: Optional[int] = None
    declared_rate: Optional[float] = None

    @classmethod
    def from_dense(cls, dense: np.ndarray, window_w: Optional[int] = None,
                   declared_rate: Optional[float] = None) -> "ArrivalSchedule":
        dense = np.asarray(dense, dtype=np.int64)
        slots = np.flatnonzero(dense).astype(np.int64)
        return cls(slots, dense[slots], int(dense.size), window_w, declared_rate)

    @classmethod
    def from_mapping(cls, arrivals: dict, horizon: Optional[int] = None,
                     window_w: Optional[int] = None, declared_rate: Optional[float] = None) -> "ArrivalSchedule":
        items = sorted((int(slot), int(count)) for slot, count in arrivals.items() if count)
        for slot, count in items:
            if slot < 0 or count < 0:
                raise ScheduleError(f"invalid arrival {slot}->{count}")
        last = items[-1][0] + 1 if items else 0
        if horizon is None:
            horizon = last
        elif horizon < last:
            raise ScheduleError(f"arrival at slot {last - 1} lies beyond horizon {horizon}")
        slots = np.array([slot for slot, _ in items], dtype=np.int64)
        counts = np.array([count for _, count in items], dtype=np.int64)
        return cls(slots, counts, horizon, window_w, declared_rate)

    @property
    def arrivals(self) -> dict:
        return dict(zip(self.slots.tolist(), self.counts.tolist()))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def dense(self, length: Optional[int] = None) -> np.ndarray:
        """Per-slot counts over [0, length), default the horizon."""
        length = self.horizon if length is None else length
        out = np.zeros(length, dtype=np.int64)
        inside = self.slots < length
        out[self.slots[inside]] = self.counts[inside]
        return out


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    cap: int
    slot: Optional[int] = None
    window_sum: Optional[int] = None

    def describe(self) -> str:
        if self.ok:
            return f"ok (cap {self.cap} per window)"
        return f"violation at slot {self.slot}: window sum {self.window_sum} > cap {self.cap}"


def theorem_rate(kappa: int) -> float:
    """Per-window arrival fraction 1 - 5/ln(kappa); non-positive for kappa <= e^5."""
    return 1.0 - 5.0 / math.log(kappa)


def window_cap(w: int, kappa: int, rate: Optional[float] = None) -> int:
    """Most arrivals any window of w slots may hold: floor(rate * w), never below 0."""
    rate = theorem_rate(kappa) if rate is None else rate
    return max(0, math.floor(rate * w))


def batch_schedule(n: int) -> ArrivalSchedule:
    """n packets at slot 0 and nothing else."""
    if n == 0:
        raise ScheduleError("batch size must be nonzero")
    if n < 0:
        raise ScheduleError(f"batch size must be positive, got {n}")
    return ArrivalSchedule(np.array([0], dtype=np.int64), np.array([n], dtype=np.int64), horizon=1)


def windowed_rate_schedule(w: int, kappa: int, horizon: int, pattern: str = PATTERN_SMOOTH,
                           seed: int = 0, rate: Optional[float] = None) -> ArrivalSchedule:
    """
    Arrivals over [0, horizon) such that every window of w slots holds at most the cap.
    `rate` overrides 1 - 5/ln(kappa), which is non-positive below kappa = e^5.
    """
    if w < 16 * kappa * kappa:
        raise ScheduleError(f"window w={w} is below 16*kappa^2={16 * kappa * kappa}")
    if pattern not in PATTERNS:
        raise ScheduleError(f"unknown pattern '{pattern}' (expected one of {', '.join(PATTERNS)})")
    if rate is not None and not 0.0 < rate < 1.0:
        raise ScheduleError(f"rate must lie in (0, 1), got {rate}")
    declared = theorem_rate(kappa) if rate is None else rate
    cap = window_cap(w, kappa, rate)
    if cap == 0:
        logger.warning("window cap is 0 for kappa=%d (rate %.4f); schedule is empty", kappa, declared)
    if horizon <= 0 or cap == 0:
        return ArrivalSchedule.from_dense(np.zeros(max(horizon, 0), dtype=np.int64), w, declared)

    t = np.arange(horizon, dtype=np.int64)
    if pattern == PATTERN_SMOOTH:
        # integer staircase: every w consecutive slots sum to exactly cap
        dense = ((t + 1) * cap) // w - (t * cap) // w
    elif pattern == PATTERN_BURSTS:
        dense = np.where(t % w == 0, cap, 0)
    else:
        dense = _random_spread(w, cap, horizon, seed)

    schedule = ArrivalSchedule.from_dense(dense, w, declared)
    result = validate_schedule(schedule, w, kappa, rate)
    if not result.ok:
        raise ScheduleError(f"generated schedule fails its own cap: {result.describe()}")
    return schedule


def _random_spread(w: int, cap: int, horizon: int, seed: int) -> np.ndarray:
    """Poisson proposals admitted greedily against a sliding window, like a rate limiter."""
    rng = derive_rng(seed, STREAM_ADVERSARY)
    proposals = rng.poisson(SPREAD_INTENSITY * cap / w, size=horizon)
    admitted = np.zeros(horizon, dtype=np.int64)
    in_window = 0
    for slot in range(horizon):
        if slot >= w:
            in_window -= admitted[slot - w]
        take = min(int(proposals[slot]), cap - in_window)
        if take > 0:
            admitted[slot] = take
            in_window += take
    return admitted


def window_sums(schedule: ArrivalSchedule, w: int) -> np.ndarray:
    """Arrivals in [t, t + w) for every t in [0, horizon)."""
    if w < 1:
        raise ValueError(f"window must be >= 1, got {w}")
    dense = schedule.dense(schedule.horizon + w)
    prefix = np.concatenate([[0], np.cumsum(dense)])
    return prefix[w:w + schedule.horizon] - prefix[:schedule.horizon]


def validate_schedule(schedule: ArrivalSchedule, w: int, kappa: int,
                      rate: Optional[float] = None) -> ValidationResult:
    """First window [t, t + w) whose arrivals exceed the cap, or ok."""
    cap = window_cap(w, kappa, rate)
    if schedule.horizon == 0:
        return ValidationResult(ok=True, cap=cap)
    sums = window_sums(schedule, w)
    over = np.flatnonzero(sums > cap)
    if over.size == 0:
        return ValidationResult(ok=True, cap=cap)
    first = int(over[0])
    return ValidationResult(ok=False, cap=cap, slot=first, window_sum=int(sums[first]))


def load_trace(path: str) -> ArrivalSchedule:
    """
    Read `slot,count` lines. '#' comments and blank lines are skipped,
    repeated slots are summed.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TraceParseError(f"cannot read trace: {e.strerror}", path) from None

    arrivals: dict = {}
    for line_number, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [part.strip() for part in stripped.split(",")]
        if len(parts) != 2:
            raise TraceParseError("expected 'slot,count'", path, line_number)
        try:
            slot, count = int(parts[0]), int(parts[1])
        except ValueError:
            raise TraceParseError(f"non-integer field in '{stripped}'", path, line_number) from None
        if slot < 0:
            raise TraceParseError(f"negative slot {slot}", path, line_number)
        if count < 0:
            raise TraceParseError(f"negative count {count}", path, line_number)
        arrivals[slot] = arrivals.get(slot, 0) + count
    schedule = ArrivalSchedule.from_mapping(arrivals)
    logger.info("loaded %d arrivals over %d slots from %s", schedule.total, schedule.horizon, path)
    return schedule
