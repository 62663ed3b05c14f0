"""
Potential function Phi(t) = N_t + logC(t) + s(t) + u(t) and the per-epoch bounds it obeys.

    logC(t) = max(0, 4 kappa log_kappa(c_t / sqrt(kappa)))
    s(t)    = 4 log_kappa(1 / p_min(t))
    u(t)    = 5 M_t / ln kappa

The run loop takes one snapshot before an epoch's first slot and one after its last,
then asks check_epoch_delta whether the change respects the bound of the epoch's case.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

from coded_backoff.services.protocol import VARIANT_DECODABLE, EpochOutcome, EpochTag, ProtocolState

logger = logging.getLogger(__name__)

REL_TOL = 1e-9
ABS_TOL = 1e-12

CASE_SUCCESSFUL = "successful"
CASE_FAR = "far"
CASE_NEAR = "near"
CASE_NEAR_EMPTY = "near-empty"
CASE_ERROR = "error"


@dataclass(frozen=True)
class PotentialSnapshot:
    slot: int
    n_term: int
    logc_term: float
    s_term: float
    u_term: float
    phi: float
    c_t: float
    p_min: float
    m_t: int
    active_count: int = 0
    # lattice level of p_min; None when probabilities are not on the lattice
    min_level: Optional[int] = None

    def to_record(self) -> dict:
        record = asdict(self)
        record["kind"] = "slot"
        return record


@dataclass(frozen=True)
class EpochDeltaVerdict:
    epoch_kind: EpochTag
    is_error_epoch: bool
    case: str
    delta_phi: float
    bound: float
    satisfied: bool
    length: int
    arrivals: int
    phi_before: float
    c_before: float
    p_min_before: float
    start_slot: int = 0
    end_slot: int = 0
    # successful epochs only: logC and s did not rise, u moved by arrivals alone
    terms_ok: bool = True

    def to_record(self) -> dict:
        return {
            "kind": "verdict",
            "check": "epoch",
            "epoch": self.epoch_kind.value,
            "error": self.is_error_epoch,
            "case": self.case,
            "delta": self.delta_phi,
            "bound": self.bound,
            "ok": self.satisfied,
            "length": self.length,
            "arrivals": self.arrivals,
            "phi_before": self.phi_before,
            "c_before": self.c_before,
            "p_min_before": self.p_min_before,
            "start": self.start_slot,
            "end": self.end_slot,
            "terms_ok": self.terms_ok,
        }

    def __str__(self) -> str:
        return (
            f"{self.epoch_kind.value} epoch [{self.start_slot}, {self.end_slot}] case={self.case} "
            f"error={self.is_error_epoch} delta={self.delta_phi:.6g} bound={self.bound:.6g} "
            f"l={self.length} i={self.arrivals} phi_before={self.phi_before:.6g} "
            f"c_before={self.c_before:.6g} p_min_before={self.p_min_before:.6g}"
            + ("" if self.terms_ok else " terms_ok=False")
        )


@dataclass(frozen=True)
class ActivationVerdict:
    """Change of logC + s + u caused by the activations of one silent epoch."""
    slot: int
    activated: int
    delta: float
    phi_heard: float
    is_error_epoch: bool
    must_not_increase: bool
    satisfied: bool

    def to_record(self) -> dict:
        return {
            "kind": "verdict",
            "check": "activation",
            "slot": self.slot,
            "activated": self.activated,
            "delta": self.delta,
            "phi_heard": self.phi_heard,
            "error": self.is_error_epoch,
            "must_not_increase": self.must_not_increase,
            "ok": self.satisfied,
        }

    def __str__(self) -> str:
        return (
            f"activation at slot {self.slot}: r={self.activated} delta={self.delta:.6g} "
            f"phi={self.phi_heard:.6g} error={self.is_error_epoch}"
        )


@dataclass(frozen=True)
class SparseEvent:
    slot: int
    phi: float
    contention: float
    p_min: float

    def to_record(self) -> dict:
        return {"kind": "sparse", "slot": self.slot, "phi": self.phi,
                "contention": self.contention, "p_min": self.p_min}


def arrival_weight(kappa: int) -> float:
    """Potential added by one arriving packet: 1 + 5/ln(kappa)."""
    return 1.0 + 5.0 / math.log(kappa)


def logc_term(c_t: float, kappa: int) -> float:
    if c_t <= 0.0:
        return 0.0
    return max(0.0, 4.0 * kappa * (math.log(c_t) / math.log(kappa) - 0.5))


def snapshot(state: ProtocolState, slot: int) -> PotentialSnapshot:
    """All four terms of Phi for the current state."""
    kappa = state.kappa
    ln_kappa = math.log(kappa)
    c_t = state.contention
    p_min = state.p_min
    if state.variant == VARIANT_DECODABLE:
        min_level = state.min_level
        s_term = float(-min_level)
    else:
        min_level = None
        s_term = 4.0 * math.log(1.0 / p_min) / ln_kappa
    n_term = state.n_t
    m_t = state.m_t
    logc = logc_term(c_t, kappa)
    u_term = 5.0 * m_t / ln_kappa
    return PotentialSnapshot(
        slot=slot,
        n_term=n_term,
        logc_term=logc,
        s_term=s_term,
        u_term=u_term,
        phi=n_term + logc + s_term + u_term,
        c_t=c_t,
        p_min=p_min,
        m_t=m_t,
        active_count=state.active_count,
        min_level=min_level,
    )


def empty_snapshot(slot: int = -1) -> PotentialSnapshot:
    """Snapshot of a system that has never seen a packet."""
    return PotentialSnapshot(slot, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0, 0, 0)


def potential_delta(before: PotentialSnapshot, after: PotentialSnapshot, kappa: int) -> float:
    """
    Phi(after) - Phi(before), summed term by term so the integer parts stay exact.
    """
    dn = after.n_term - before.n_term
    ds = after.s_term - before.s_term
    du = 5.0 * (after.m_t - before.m_t) / math.log(kappa)
    dlogc = after.logc_term - before.logc_term
    return dn + ds + du + dlogc


def within(value: float, bound: float) -> bool:
    return value <= bound + REL_TOL * abs(bound) + ABS_TOL


def classify_error_epoch(c_before: float, outcome: EpochOutcome, kappa: int) -> bool:
    """Silent at contention >= kappa^(1/4), or overfull at contention <= kappa^(3/4)."""
    if outcome.tag is EpochTag.SILENT:
        return c_before >= kappa ** 0.25
    if outcome.tag is EpochTag.OVERFULL:
        return c_before <= kappa ** 0.75
    return False


def far_from_target(before: PotentialSnapshot, kappa: int) -> bool:
    """Phi > 6 kappa, or p_min < 1/sqrt(kappa), or contention >= kappa^(1/4), at the epoch start."""
    return (
        before.phi > 6 * kappa
        or before.p_min < 1.0 / math.sqrt(kappa)
        or before.c_t >= kappa ** 0.25
    )


def select_bound(before: PotentialSnapshot, outcome: EpochOutcome, is_error: bool, kappa: int) -> tuple[str, float]:
    arrivals = outcome.arrivals_during * arrival_weight(kappa)
    length = outcome.length
    if is_error:
        return CASE_ERROR, kappa + 2.0 + arrivals
    if outcome.tag is EpochTag.SUCCESSFUL:
        return CASE_SUCCESSFUL, -length + arrivals
    shrink = -length * (1.0 - 1.0 / kappa) + arrivals
    if far_from_target(before, kappa):
        return CASE_FAR, shrink
    if before.active_count == 0:
        # nothing to raise: only the activation allowance remains
        return CASE_NEAR_EMPTY, 2.0 + arrivals
    return CASE_NEAR, shrink + 2.0


def successful_terms_hold(before: PotentialSnapshot, after: PotentialSnapshot, outcome: EpochOutcome) -> bool:
    """
    A successful epoch only removes joiners and takes arrivals: logC and s cannot rise,
    and the inactive count grows by exactly the arrivals. True for other epoch kinds.
    """
    if outcome.tag is not EpochTag.SUCCESSFUL:
        return True
    return (
        within(after.logc_term, before.logc_term)
        and within(after.s_term, before.s_term)
        and after.m_t - before.m_t == outcome.arrivals_during
    )


def check_epoch_delta(before: PotentialSnapshot, after: PotentialSnapshot, outcome: EpochOutcome,
                      is_error: bool, kappa: int) -> EpochDeltaVerdict:
    """Compare Phi's change over one epoch with the bound for its case."""
    case, bound = select_bound(before, outcome, is_error, kappa)
    delta = potential_delta(before, after, kappa)
    terms_ok = successful_terms_hold(before, after, outcome)
    return EpochDeltaVerdict(
        epoch_kind=outcome.tag,
        is_error_epoch=is_error,
        case=case,
        delta_phi=delta,
        bound=bound,
        satisfied=within(delta, bound) and terms_ok,
        length=outcome.length,
        arrivals=outcome.arrivals_during,
        phi_before=before.phi,
        c_before=before.c_t,
        p_min_before=before.p_min,
        start_slot=outcome.start_slot,
        end_slot=outcome.end_slot,
        terms_ok=terms_ok,
    )


def check_activation(pre: PotentialSnapshot, post: PotentialSnapshot, activated: int,
                     is_error: bool, kappa: int) -> ActivationVerdict:
    """
    `pre` is taken after the silent update and before activation, `post` right after.
    Packets that arrived in the silent slot itself stay inactive and are left out of the
    potential the no-increase condition reads.
    """
    delta = (post.logc_term - pre.logc_term) + (post.s_term - pre.s_term) + (post.u_term - pre.u_term)
    held_back = pre.m_t - activated
    phi_heard = pre.phi - held_back * arrival_weight(kappa)
    must_not_increase = phi_heard > 6 * kappa and not is_error
    if activated == 0:
        satisfied = within(delta, 0.0)
    elif must_not_increase:
        satisfied = within(delta, 0.0)
    else:
        satisfied = delta < 2.0
    return ActivationVerdict(
        slot=post.slot,
        activated=activated,
        delta=delta,
        phi_heard=phi_heard,
        is_error_epoch=is_error,
        must_not_increase=must_not_increase,
        satisfied=satisfied,
    )


def is_sparse(snap: PotentialSnapshot, kappa: int) -> bool:
    """Phi <= 6 kappa, contention < kappa^(1/4) and p_min >= 1/sqrt(kappa)."""
    if snap.min_level is not None and snap.active_count:
        p_ok = snap.min_level >= -2
    else:
        p_ok = snap.p_min >= 1.0 / math.sqrt(kappa)
    return snap.phi <= 6 * kappa and snap.c_t < kappa ** 0.25 and p_ok


def detect_sparse_events(snapshots: Iterable[PotentialSnapshot], kappa: int) -> list[SparseEvent]:
    return [
        SparseEvent(snap.slot, snap.phi, snap.c_t, snap.p_min)
        for snap in snapshots
        if is_sparse(snap, kappa)
    ]
