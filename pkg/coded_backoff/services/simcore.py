"""
Run loop: adversary -> protocol -> channel -> potential, one slot at a time.

Within a slot: arrivals are injected, an epoch begins if none is running, the slot's
transmitters go to the decoder, and when the epoch ends the probability update,
activations and potential checks run before the next slot.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np

from coded_backoff.errors import CodedBackoffError, ConfigError, InvariantError, LemmaViolationError
from coded_backoff.models import CodingStats, RunConfig, RunReport, batch_bound, build_run_config
from coded_backoff.recorder import Recorder
from coded_backoff.services import adversary, coding, potential, protocol
from coded_backoff.services.channel import DecoderState, SlotRecord, advance_decoder, classify_slot
from coded_backoff.services.protocol import EpochOutcome, EpochTag, ProtocolState
from coded_backoff.services.seeding import STREAM_COEFFICIENTS, STREAM_PAYLOADS, derive_rng, mix_seed, protocol_rng

logger = logging.getLogger(__name__)


def build_schedule(config: RunConfig) -> adversary.ArrivalSchedule:
    spec = config.schedule
    if spec.kind == "batch":
        return adversary.batch_schedule(spec.n)
    if spec.kind == "trace":
        return adversary.load_trace(spec.trace)
    return adversary.windowed_rate_schedule(
        spec.w, config.kappa, config.horizon,
        pattern=adversary.SCHEDULE_PATTERNS[spec.kind],
        seed=config.seed,
        rate=spec.rate,
    )


def resolve_horizon(config: RunConfig, schedule: adversary.ArrivalSchedule) -> int:
    """Configured horizon, or for traces the last arrival plus the batch allowance for all of them."""
    if config.horizon is not None:
        return config.horizon
    return schedule.horizon + math.floor(batch_bound(config.kappa, schedule.total)) + 1


class Simulation:
    """
    One seeded run. `step()` advances a single slot; `run()` goes to the horizon and
    returns the report. Everything random comes from streams keyed by config.seed.
    """

    def __init__(self, config: RunConfig, schedule: Optional[adversary.ArrivalSchedule] = None,
                 recorder: Optional[Recorder] = None, tally: Optional[coding.CodingTally] = None,
                 coding_limit: Optional[int] = None):
        self.config = config
        self.kappa = config.kappa
        self.schedule = schedule if schedule is not None else build_schedule(config)
        self.horizon = resolve_horizon(config, self.schedule)
        self.recorder = recorder if recorder is not None else Recorder()
        self.stride = config.effective_stride
        self.state = ProtocolState.create(
            config.kappa, variant=config.protocol, fixed_p=config.fixed_p, rng=protocol_rng(config.seed)
        )
        self.decoder = DecoderState(kappa=config.kappa, lookback=config.effective_lookback)
        self.checks_on = config.protocol == protocol.VARIANT_DECODABLE

        self.tally = tally
        self.coding_limit = coding_limit
        if config.verify_coding and self.tally is None:
            self.tally = coding.CodingTally()
        self._coefficient_rng = derive_rng(config.seed, STREAM_COEFFICIENTS)
        self._payload_rng = derive_rng(config.seed, STREAM_PAYLOADS)

        self.slot = 0
        self._next_arrival = 0
        self._epoch_start_snapshot = potential.empty_snapshot()

        self.epoch_counts = {tag: 0 for tag in EpochTag}
        self.error_epochs = 0
        self.verdicts_checked = 0
        self.verdict_violations = 0
        self.activation_checks = 0
        self.activation_violations = 0
        self.decoder_events = 0
        self.decoder_mismatches = 0
        self.sparse_events = 0
        self.max_backlog = 0
        self.backlog_total = 0
        self.sampled_slots = 0

    # --- slot loop ----------------------------------------------------------

    def _arrivals_at(self, slot: int) -> int:
        index = self._next_arrival
        slots = self.schedule.slots
        if index < slots.size and slots[index] == slot:
            self._next_arrival += 1
            return int(self.schedule.counts[index])
        return 0

    def step(self) -> None:
        slot = self.slot
        state = self.state
        count = self._arrivals_at(slot)
        protocol.inject(state, count, slot)

        if state.current_epoch is None:
            protocol.begin_epoch(state, slot)
        epoch = state.current_epoch
        epoch.slots_elapsed += 1
        epoch.arrivals += count

        record = SlotRecord(slot, epoch.joiners, classify_slot(epoch.joiners, self.kappa))
        _, event = advance_decoder(self.decoder, record)
        tag = protocol.end_epoch_classify(epoch.joiners, epoch.slots_elapsed, self.kappa)
        self._compare_decoder(record, event, tag)

        if tag is not None:
            self._finish_epoch(tag, slot)
        if state.variant == protocol.VARIANT_FIXED:
            protocol.activate_inactive(state, slot, include_current=True)

        self._sample(slot)
        self.slot += 1

    def _compare_decoder(self, record: SlotRecord, event, tag: Optional[EpochTag]) -> None:
        """The detector's events must be exactly the successful epochs."""
        epoch = self.state.current_epoch
        if event is not None:
            self.decoder_events += 1
            self.recorder.write(event.to_record())
            if self.tally is not None and (self.coding_limit is None or self.tally.trials < self.coding_limit):
                coding.verify_window(event, self.tally, self._coefficient_rng, self._payload_rng,
                                     self.config.payload_len)
        agrees = (
            (event is None and tag is not EpochTag.SUCCESSFUL)
            or (
                event is not None
                and tag is EpochTag.SUCCESSFUL
                and event.decoded_packets == epoch.joiners
                and event.window_start == epoch.start_slot
                and event.window_end == record.slot_index
            )
        )
        if not agrees:
            self.decoder_mismatches += 1
            logger.error("decoder/epoch disagreement at slot %d: event=%s tag=%s",
                         record.slot_index, event, tag)
            if self.config.strict_lemmas:
                raise InvariantError(f"decoder and protocol disagree at slot {record.slot_index}")

    def _finish_epoch(self, tag: EpochTag, slot: int) -> None:
        state = self.state
        epoch = state.current_epoch
        outcome = EpochOutcome(tag, epoch.slots_elapsed, epoch.joiners, epoch.arrivals, epoch.start_slot)
        is_error = potential.classify_error_epoch(epoch.contention, outcome, self.kappa)
        self.epoch_counts[tag] += 1
        self.error_epochs += int(is_error)

        protocol.update_probabilities(state, outcome, slot)
        if not self.checks_on:
            self.recorder.write(outcome.to_record() | {"error": is_error})
            return

        if tag is EpochTag.SILENT:
            pre = potential.snapshot(state, slot)
            activated = protocol.activate_inactive(state, slot)
            after = potential.snapshot(state, slot)
            self._check_activation(pre, after, activated, is_error)
        else:
            state.last_activation_count = 0
            after = potential.snapshot(state, slot)

        verdict = potential.check_epoch_delta(self._epoch_start_snapshot, after, outcome, is_error, self.kappa)
        self._epoch_start_snapshot = after
        self.verdicts_checked += 1
        self.recorder.write(outcome.to_record() | {"error": is_error})
        self.recorder.write(verdict.to_record())
        if not verdict.satisfied:
            self.verdict_violations += 1
            logger.error("potential bound violated: %s", verdict)
            if self.config.strict_lemmas:
                raise LemmaViolationError(verdict)

    def _check_activation(self, pre, post, activated: int, is_error: bool) -> None:
        verdict = potential.check_activation(pre, post, activated, is_error, self.kappa)
        self.activation_checks += 1
        if activated or not verdict.satisfied:
            self.recorder.write(verdict.to_record())
        if not verdict.satisfied:
            self.activation_violations += 1
            logger.error("activation bound violated: %s", verdict)
            if self.config.strict_lemmas:
                raise LemmaViolationError(verdict)

    def _sample(self, slot: int) -> None:
        state = self.state
        backlog = state.n_t
        if self.config.continuous_backlog:
            self.max_backlog = max(self.max_backlog, backlog)

        snap = None
        if self.config.detect_sparse:
            snap = potential.snapshot(state, slot)
            if potential.is_sparse(snap, self.kappa):
                self.sparse_events += 1
                self.recorder.write(potential.SparseEvent(slot, snap.phi, snap.c_t, snap.p_min).to_record())

        if slot % self.stride:
            return
        if state.active_count + state.m_t != backlog:
            raise InvariantError(
                f"slot {slot}: {state.active_count} active + {state.m_t} inactive != {backlog} in system"
            )
        self.sampled_slots += 1
        self.backlog_total += backlog
        self.max_backlog = max(self.max_backlog, backlog)
        if self.recorder.active:
            snap = snap or potential.snapshot(state, slot)
            self.recorder.write(snap.to_record() | {"delivered": state.delivered, "arrivals": state.total_arrivals})

    def run(self) -> RunReport:
        config = self.config
        logger.info("run start: kappa=%d horizon=%d seed=%d schedule=%s protocol=%s",
                    self.kappa, self.horizon, config.seed, config.schedule.kind, config.protocol)
        started = time.perf_counter()
        while self.slot < self.horizon:
            self.step()
            if self.coding_limit is not None and self.tally.trials >= self.coding_limit:
                break
        report = self.report(wall_clock=time.perf_counter() - started)
        self.recorder.write(report.to_record())
        logger.info("run end: delivered %d/%d, max backlog %d, %d error epochs",
                    report.delivered, report.arrivals, report.max_backlog, report.error_epochs)
        return report

    # --- report -------------------------------------------------------------

    def report(self, wall_clock: float = 0.0) -> RunReport:
        state = self.state
        config = self.config
        latencies = np.asarray(state.latencies, dtype=np.int64)
        p50 = p99 = max_latency = completion = None
        if latencies.size:
            if latencies.min() < 1:
                raise InvariantError("a packet was delivered in its arrival slot")
            p50 = int(np.quantile(latencies, 0.5, method="inverted_cdf"))
            p99 = int(np.quantile(latencies, 0.99, method="inverted_cdf"))
            max_latency = int(latencies.max())
            completion = int(np.asarray(state.delivery_slots, dtype=np.int64).max())
        if state.delivered > state.total_arrivals:
            raise InvariantError("more packets delivered than arrived")

        w = config.schedule.w
        ratio = None
        if w and max_latency is not None:
            ratio = max_latency / (w * math.sqrt(self.kappa) * math.log(w) ** 3)
        epochs = sum(self.epoch_counts.values())
        return RunReport(
            kappa=self.kappa,
            w=w,
            seed=config.seed,
            horizon=self.horizon,
            protocol=config.protocol,
            schedule=config.schedule.kind,
            arrivals=state.total_arrivals,
            delivered=state.delivered,
            final_backlog=state.n_t,
            max_backlog=self.max_backlog,
            mean_backlog=self.backlog_total / self.sampled_slots if self.sampled_slots else 0.0,
            sampled_slots=self.sampled_slots,
            p50=p50,
            p99=p99,
            max_latency=max_latency,
            censored=state.n_t,
            silent=self.epoch_counts[EpochTag.SILENT],
            successful=self.epoch_counts[EpochTag.SUCCESSFUL],
            overfull=self.epoch_counts[EpochTag.OVERFULL],
            error_epochs=self.error_epochs,
            error_rate=self.error_epochs / epochs if epochs else 0.0,
            sparse_events=self.sparse_events,
            verdicts_checked=self.verdicts_checked,
            verdict_violations=self.verdict_violations,
            activation_checks=self.activation_checks,
            activation_violations=self.activation_violations,
            decoder_events=self.decoder_events,
            decoder_mismatches=self.decoder_mismatches,
            throughput=state.delivered / self.horizon,
            completion_slot=completion,
            batch_bound=batch_bound(self.kappa, config.schedule.n) if config.schedule.kind == "batch" else None,
            all_delivered=state.delivered == state.total_arrivals,
            latency_ratio=ratio,
            coding=CodingStats.from_tally(self.tally) if self.tally is not None else None,
            wall_clock=wall_clock,
        )


def run(config: RunConfig, recorder: Optional[Recorder] = None) -> RunReport:
    """Execute one configured run to its horizon."""
    return Simulation(config, recorder=recorder).run()


# --- sweeps -----------------------------------------------------------------

def build_grid(base: dict, kappas: Sequence[int] = (), seeds: Sequence[int] = (),
               ns: Sequence[int] = ()) -> list[RunConfig]:
    """
    Cartesian grid over kappa, batch size and seed, built from raw RunConfig values.
    Without explicit seeds each cell gets mix_seed(base seed, cell index).
    """
    base_seed = base.get("seed", 0)
    cells = []
    for index, (kappa, n, seed) in enumerate(product(kappas or [None], ns or [None], seeds or [None])):
        values = dict(base)
        if kappa is not None:
            values["kappa"] = kappa
        if n is not None:
            values["schedule"] = dict(values.get("schedule") or {}, n=n)
        values["seed"] = seed if seed is not None else mix_seed(base_seed, index)
        cells.append(build_run_config(**values))
    return cells


def _run_cell(config: RunConfig) -> RunReport:
    try:
        return run(config)
    except (LemmaViolationError, InvariantError) as e:
        logger.error("sweep cell kappa=%d seed=%d check failed: %s", config.kappa, config.seed, e)
        return _failed_cell(config, e, check_failed=True)
    except CodedBackoffError as e:
        logger.error("sweep cell kappa=%d seed=%d failed: %s", config.kappa, config.seed, e)
        return _failed_cell(config, e, check_failed=False)


def _failed_cell(config: RunConfig, error: Exception, check_failed: bool) -> RunReport:
    return RunReport(kappa=config.kappa, w=config.schedule.w, seed=config.seed,
                     horizon=config.horizon or 0, protocol=config.protocol,
                     schedule=config.schedule.kind, error=str(error), check_failed=check_failed)


def sweep(grid: Iterable[RunConfig], jobs: Optional[int] = None) -> list[RunReport]:
    """One report per cell, in grid order. A failing cell records its error and the rest go on."""
    cells = list(grid)
    if not cells:
        raise ConfigError("sweep grid is empty")
    if jobs is None or jobs <= 1:
        return [_run_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, cells))


# --- coding verification -----------------------------------------------------

def verify_coding(kappa: int, trials: int, seed: int = 0, payload_len: int = 32) -> CodingStats:
    """
    Check `trials` random-mode matrices taken from successful epochs of batch runs,
    each batch seeded from (seed, round).
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    tally = coding.CodingTally()
    batch = 8 * kappa
    round_index = 0
    while tally.trials < trials:
        config = build_run_config(
            kappa=kappa, seed=mix_seed(seed, round_index), payload_len=payload_len,
            verify_coding=True, schedule={"kind": "batch", "n": batch},
        )
        before = tally.trials
        Simulation(config, tally=tally, coding_limit=trials).run()
        if tally.trials == before:
            raise InvariantError(f"batch round {round_index} produced no decoding events")
        round_index += 1
    logger.info("coding: %d trials, %d singular (predicted rate %.3g)",
                tally.trials, tally.singular, tally.predicted_rate)
    return CodingStats.from_tally(tally)
