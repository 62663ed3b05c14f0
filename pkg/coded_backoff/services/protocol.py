"""
Decodable backoff: packet lifecycle, epoch state machine and joining-probability updates.

Joining probabilities live on an exact lattice: an active packet stores an integer
level e and joins with probability kappa ** (e / 4). Activation sets e = -2
(1/sqrt(kappa)), a silent epoch raises e by one up to 0 (probability 1), an overfull
epoch lowers it by one.
"""
import logging
import math
from array import array
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from coded_backoff.config import MIN_KAPPA
from coded_backoff.errors import ConfigError

logger = logging.getLogger(__name__)

ACTIVATION_LEVEL = -2
MAX_LEVEL = 0

VARIANT_DECODABLE = "decodable"
VARIANT_FIXED = "fixed"
VARIANTS = (VARIANT_DECODABLE, VARIANT_FIXED)


class PacketStatus(str, Enum):
    INACTIVE = "inactive"
    ACTIVE = "active"
    DELIVERED = "delivered"


class EpochTag(str, Enum):
    SILENT = "silent"
    SUCCESSFUL = "successful"
    OVERFULL = "overfull"


@dataclass(frozen=True)
class Packet:
    id: int
    arrival_slot: int
    status: PacketStatus
    join_prob: float
    delivery_slot: Optional[int] = None


@dataclass(frozen=True)
class EpochOutcome:
    tag: EpochTag
    length: int
    joiners: frozenset
    arrivals_during: int
    start_slot: int = 0

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.length - 1

    def to_record(self) -> dict:
        return {
            "kind": "epoch",
            "tag": self.tag.value,
            "start": self.start_slot,
            "end": self.end_slot,
            "length": self.length,
            "joiners": len(self.joiners),
            "arrivals": self.arrivals_during,
        }


@dataclass
class Epoch:
    """An epoch in progress: frozen joiner set plus counters the run loop advances."""
    start_slot: int
    joiners: frozenset
    contention: float
    slots_elapsed: int = 0
    arrivals: int = 0


def level_probability(kappa: int, level: int) -> float:
    """Joining probability of a lattice level."""
    if level >= MAX_LEVEL:
        return 1.0
    if level == ACTIVATION_LEVEL:
        return 1.0 / math.sqrt(kappa)
    return math.pow(kappa, level / 4.0)


@dataclass
class ProtocolState:
    kappa: int
    rng: np.random.Generator
    variant: str = VARIANT_DECODABLE
    fixed_p: Optional[float] = None
    # per-packet columns, indexed by packet id
    arrival_slots: array = field(default_factory=lambda: array("q"))
    delivery_slots: array = field(default_factory=lambda: array("q"))
    # active packets in id order, with their lattice levels
    active_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    active_levels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    # inactive packets are always the id range [inactive_start, next_id)
    inactive_start: int = 0
    next_id: int = 0
    delivered: int = 0
    latencies: array = field(default_factory=lambda: array("q"))
    current_epoch: Optional[Epoch] = None
    last_activation_count: int = 0
    _contention: Optional[float] = None
    _min_level: Optional[int] = None

    @classmethod
    def create(cls, kappa: int, seed: int = 0, variant: str = VARIANT_DECODABLE,
               fixed_p: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> "ProtocolState":
        """Fresh state with an empty system and a Philox stream keyed by the seed."""
        if kappa < MIN_KAPPA:
            raise ConfigError(f"kappa must be >= {MIN_KAPPA}, got {kappa}")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown protocol '{variant}' (expected one of {', '.join(VARIANTS)})")
        if variant == VARIANT_FIXED:
            fixed_p = 1.0 / math.sqrt(kappa) if fixed_p is None else fixed_p
            if not 0.0 < fixed_p <= 1.0:
                raise ConfigError(f"fixed_p must be in (0, 1], got {fixed_p}")
        if rng is None:
            rng = np.random.Generator(np.random.Philox(key=seed))
        return cls(kappa=kappa, rng=rng, variant=variant, fixed_p=fixed_p)

    # --- state quantities -------------------------------------------------

    @property
    def n_t(self) -> int:
        """Packets in the system, active and inactive."""
        return self.next_id - self.delivered

    @property
    def m_t(self) -> int:
        """Inactive packets."""
        return self.next_id - self.inactive_start

    @property
    def active_count(self) -> int:
        return int(self.active_ids.size)

    @property
    def total_arrivals(self) -> int:
        return self.next_id

    def join_probabilities(self) -> np.ndarray:
        """Joining probability of every active packet, in id order."""
        if self.variant == VARIANT_FIXED:
            return np.full(self.active_ids.size, self.fixed_p)
        probs = np.power(float(self.kappa), self.active_levels / 4.0)
        probs[self.active_levels == ACTIVATION_LEVEL] = 1.0 / math.sqrt(self.kappa)
        probs[self.active_levels >= MAX_LEVEL] = 1.0
        return probs

    @property
    def contention(self) -> float:
        """c_t: sum of joining probabilities; inactive packets contribute nothing."""
        if self._contention is None:
            self._contention = float(self.join_probabilities().sum()) if self.active_ids.size else 0.0
        return self._contention

    @property
    def min_level(self) -> int:
        """Lowest active lattice level, 0 when nothing is active."""
        if self.active_ids.size == 0:
            return MAX_LEVEL
        if self._min_level is None:
            self._min_level = int(self.active_levels.min())
        return self._min_level

    @property
    def p_min(self) -> float:
        """Minimum active joining probability, 1 when nothing is active."""
        if self.active_ids.size == 0:
            return 1.0
        if self.variant == VARIANT_FIXED:
            return float(self.fixed_p)
        return level_probability(self.kappa, self.min_level)

    def _invalidate(self) -> None:
        self._contention = None
        self._min_level = None


def inject(state: ProtocolState, count: int, slot: int) -> ProtocolState:
    """Add `count` inactive packets arriving at `slot`."""
    if count < 0:
        raise ValueError(f"arrival count must be >= 0, got {count}")
    if count == 0:
        return state
    state.arrival_slots.extend([slot] * count)
    state.delivery_slots.extend([-1] * count)
    state.next_id += count
    return state


def begin_epoch(state: ProtocolState, slot: int) -> tuple[ProtocolState, frozenset]:
    """
    Each active packet joins with its probability, one draw per packet in id order.
    The joiner set stays frozen until the epoch ends.
    """
    if state.current_epoch is not None:
        raise RuntimeError(f"epoch started at slot {state.current_epoch.start_slot} is still running")
    if state.active_ids.size:
        draws = state.rng.random(state.active_ids.size)
        joined = state.active_ids[draws < state.join_probabilities()]
        joiners = frozenset(joined.tolist())
    else:
        joiners = frozenset()
    state.current_epoch = Epoch(start_slot=slot, joiners=joiners, contention=state.contention)
    return state, joiners


def end_epoch_classify(joiners, slots_elapsed: int, kappa: int) -> Optional[EpochTag]:
    """
    Epoch-ending trigger after `slots_elapsed` slots, or None if the epoch goes on.
    The decoding check runs before the kappa-slot limit, so exactly kappa joiners succeed.
    """
    count = len(joiners)
    if count == 0:
        return EpochTag.SILENT if slots_elapsed >= 1 else None
    if count <= kappa:
        return EpochTag.SUCCESSFUL if slots_elapsed >= count else None
    return EpochTag.OVERFULL if slots_elapsed >= kappa else None


def update_probabilities(state: ProtocolState, outcome: EpochOutcome, slot: int) -> ProtocolState:
    """First half of the epoch-end update: deliveries and the multiplicative rule."""
    if outcome.tag is EpochTag.SUCCESSFUL:
        _deliver(state, outcome.joiners, slot)
    elif state.variant == VARIANT_DECODABLE and state.active_ids.size:
        if outcome.tag is EpochTag.SILENT:
            state.active_levels = np.minimum(state.active_levels + 1, MAX_LEVEL)
        else:
            state.active_levels = state.active_levels - 1
    state.current_epoch = None
    state._invalidate()
    return state


def activate_inactive(state: ProtocolState, slot: int, include_current: bool = False) -> int:
    """
    Activate inactive packets that heard `slot`: those that arrived strictly before it
    (or at it, with include_current). Returns how many activated.
    """
    end = state.next_id
    if include_current:
        while end > state.inactive_start and state.arrival_slots[end - 1] > slot:
            end -= 1
    else:
        while end > state.inactive_start and state.arrival_slots[end - 1] >= slot:
            end -= 1
    count = end - state.inactive_start
    state.last_activation_count = count
    if count == 0:
        return 0
    new_ids = np.arange(state.inactive_start, end, dtype=np.int64)
    state.active_ids = np.concatenate([state.active_ids, new_ids])
    state.active_levels = np.concatenate(
        [state.active_levels, np.full(count, ACTIVATION_LEVEL, dtype=np.int64)]
    )
    state.inactive_start = end
    state._invalidate()
    return count


def apply_updates(state: ProtocolState, outcome: EpochOutcome, slot: int) -> ProtocolState:
    """Epoch-end update: deliveries, probability rule, then activations on silence."""
    update_probabilities(state, outcome, slot)
    if state.variant == VARIANT_FIXED:
        activate_inactive(state, slot, include_current=True)
    elif outcome.tag is EpochTag.SILENT:
        activate_inactive(state, slot)
    else:
        state.last_activation_count = 0
    return state


def _deliver(state: ProtocolState, joiners: frozenset, slot: int) -> None:
    if not joiners:
        return
    delivered_ids = np.fromiter(joiners, dtype=np.int64, count=len(joiners))
    delivered_ids.sort()
    keep = ~np.isin(state.active_ids, delivered_ids, assume_unique=True)
    state.active_ids = state.active_ids[keep]
    state.active_levels = state.active_levels[keep]
    for packet_id in delivered_ids.tolist():
        state.delivery_slots[packet_id] = slot
        state.latencies.append(slot - state.arrival_slots[packet_id])
    state.delivered += len(delivered_ids)


def packet(state: ProtocolState, packet_id: int) -> Packet:
    """Read-only view of one packet."""
    if not 0 <= packet_id < state.next_id:
        raise KeyError(packet_id)
    arrival = state.arrival_slots[packet_id]
    delivery = state.delivery_slots[packet_id]
    if delivery >= 0:
        return Packet(packet_id, arrival, PacketStatus.DELIVERED, 0.0, delivery)
    if packet_id >= state.inactive_start:
        return Packet(packet_id, arrival, PacketStatus.INACTIVE, 0.0)
    index = int(np.searchsorted(state.active_ids, packet_id))
    if state.variant == VARIANT_FIXED:
        prob = float(state.fixed_p)
    else:
        prob = level_probability(state.kappa, int(state.active_levels[index]))
    return Packet(packet_id, arrival, PacketStatus.ACTIVE, prob)
