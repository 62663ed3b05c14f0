"""
Coded radio channel: slot classification and the online decoding-event detector.
Knows nothing about the protocol; the run loop feeds it one SlotRecord per slot.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from coded_backoff.errors import TraceParseError

logger = logging.getLogger(__name__)


class SlotClass(str, Enum):
    SILENT = "silent"
    GOOD = "good"
    BAD = "bad"


@dataclass(frozen=True)
class SlotRecord:
    slot_index: int
    transmitters: frozenset
    slot_class: SlotClass


@dataclass(frozen=True)
class DecodingEvent:
    size: int
    window_start: int
    window_end: int
    decoded_packets: frozenset
    # Good slots of the window, oldest first
    good_slots: tuple = ()

    def to_record(self) -> dict:
        return {
            "kind": "event",
            "size": self.size,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "packets": sorted(self.decoded_packets),
        }


@dataclass
class DecoderState:
    kappa: int
    lookback: Optional[int] = None
    pending_good_slots: list = field(default_factory=list)
    last_event_end: int = -1
    last_slot_index: int = -1

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.lookback is None:
            self.lookback = 2 * self.kappa
        if self.lookback < 1:
            raise ValueError(f"decoder lookback must be >= 1, got {self.lookback}")


def classify_slot(transmitters, kappa: int) -> SlotClass:
    """Silent with no transmitter, Good with 1..kappa, Bad above kappa."""
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    count = len(transmitters)
    if count == 0:
        return SlotClass.SILENT
    if count <= kappa:
        return SlotClass.GOOD
    return SlotClass.BAD


def make_slot(slot_index: int, transmitters: Iterable, kappa: int) -> SlotRecord:
    """Build a SlotRecord with its class computed from the transmitter count."""
    members = transmitters if isinstance(transmitters, frozenset) else frozenset(transmitters)
    return SlotRecord(slot_index, members, classify_slot(members, kappa))


def _earliest_window(pending: list) -> tuple[Optional[int], frozenset]:
    """
    Scan windows ending at the newest pending slot, newest start first.
    Returns the earliest start index whose union fits in its good-slot count.
    """
    union: set = set()
    previous = None
    best_start = None
    best_union: frozenset = frozenset()
    total = len(pending)
    for index in range(total - 1, -1, -1):
        members = pending[index].transmitters
        # protocol epochs repeat one joiner set; skip the union when nothing is new
        if members is not previous:
            union |= members
            previous = members
        good = total - index
        if len(union) <= good:
            best_start = index
            best_union = frozenset(union)
        elif len(union) > total:
            break
    return best_start, best_union


def advance_decoder(state: DecoderState, slot: SlotRecord) -> tuple[DecoderState, Optional[DecodingEvent]]:
    """
    Feed one slot to the detector. The state is updated in place and handed back.
    Emits a DecodingEvent at the first slot where a qualifying window ends.
    """
    if slot.slot_index <= state.last_slot_index:
        raise ValueError(
            f"slot indices must strictly increase: {slot.slot_index} after {state.last_slot_index}"
        )
    state.last_slot_index = slot.slot_index
    if slot.slot_class is not SlotClass.GOOD:
        return state, None

    pending = state.pending_good_slots
    pending.append(slot)
    if len(pending) > state.lookback:
        dropped = len(pending) - state.lookback
        del pending[:dropped]

    start, decoded = _earliest_window(pending)
    if start is None:
        return state, None

    window = tuple(pending[start:])
    event = DecodingEvent(
        size=len(decoded),
        window_start=window[0].slot_index,
        window_end=slot.slot_index,
        decoded_packets=decoded,
        good_slots=window,
    )
    # everything up to the window end is consumed; slots before the window are lost
    pending.clear()
    state.last_event_end = slot.slot_index
    return state, event


def replay(slots: Iterable[SlotRecord], kappa: int, lookback: Optional[int] = None) -> list[DecodingEvent]:
    """Run the detector over a whole slot sequence and collect its events."""
    state = DecoderState(kappa=kappa, lookback=lookback)
    events = []
    for slot in slots:
        state, event = advance_decoder(state, slot)
        if event is not None:
            events.append(event)
    return events


def parse_slot_line(line: str, kappa: int, path: Optional[str] = None, line_number: Optional[int] = None) -> SlotRecord:
    """Parse one `t,<id;id;...>` line."""
    if "," not in line:
        raise TraceParseError("expected 't,<id;id;...>'", path, line_number)
    raw_slot, raw_ids = line.split(",", 1)
    try:
        slot_index = int(raw_slot.strip())
    except ValueError:
        raise TraceParseError(f"slot index '{raw_slot.strip()}' is not an integer", path, line_number) from None
    if slot_index < 0:
        raise TraceParseError(f"slot index {slot_index} is negative", path, line_number)
    ids = [part.strip() for part in raw_ids.split(";") if part.strip()]
    if len(set(ids)) != len(ids):
        raise TraceParseError("packet listed twice in one slot", path, line_number)
    return make_slot(slot_index, ids, kappa)


def load_slot_trace(path: str, kappa: int) -> list[SlotRecord]:
    """
    Read a slot trace: one `t,<id;id;...>` line per slot, empty id field for silence.
    Blank lines and '#' comments are skipped; slot indices must strictly increase.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TraceParseError(f"cannot read trace: {e.strerror}", path) from None

    slots = []
    last_index = -1
    for line_number, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        slot = parse_slot_line(stripped, kappa, path, line_number)
        if slot.slot_index <= last_index:
            raise TraceParseError(
                f"slot {slot.slot_index} does not follow slot {last_index}", path, line_number
            )
        last_index = slot.slot_index
        slots.append(slot)
    logger.info("loaded %d slots from %s", len(slots), path)
    return slots
