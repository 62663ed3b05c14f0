"""
Tests for slot classification and the decoding-event detector.
"""
import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from coded_backoff.errors import TraceParseError
from coded_backoff.services.channel import (
    DecoderState,
    SlotClass,
    advance_decoder,
    classify_slot,
    load_slot_trace,
    make_slot,
    replay,
)


def test_classify_slot_boundaries():
    assert classify_slot(set(), 3) is SlotClass.SILENT
    assert classify_slot({"a"}, 3) is SlotClass.GOOD
    assert classify_slot({"a", "b", "c"}, 3) is SlotClass.GOOD
    assert classify_slot({"a", "b", "c", "d"}, 3) is SlotClass.BAD


def test_classify_slot_rejects_kappa_below_one():
    with pytest.raises(ValueError):
        classify_slot({"a"}, 0)


def test_simultaneous_broadcasts_decode_after_three_slots(slots):
    trace = slots([(1, "abc"), (2, "abc"), (3, "abc")], kappa=3)
    state = DecoderState(kappa=3)
    fired = []
    for slot in trace:
        state, event = advance_decoder(state, slot)
        fired.append(event)
    assert fired[0] is None and fired[1] is None
    event = fired[2]
    assert event.size == 3
    assert (event.window_start, event.window_end) == (1, 3)
    assert event.decoded_packets == frozenset("abc")


def test_staircase_decodes_all_three(slots):
    events = replay(slots([(1, "abc"), (2, "bc"), (3, "c")], kappa=3), kappa=3)
    assert len(events) == 1
    assert events[0].size == 3
    assert (events[0].window_start, events[0].window_end) == (1, 3)


def test_interleaving_loses_first_slot(slots):
    trace = slots([(1, "ab"), (2, "c"), (3, "ab")], kappa=2)
    state = DecoderState(kappa=2)
    results = []
    for slot in trace:
        state, event = advance_decoder(state, slot)
        results.append(event)
    assert results[0] is None
    assert results[1].size == 1
    assert results[1].decoded_packets == frozenset("c")
    assert (results[1].window_start, results[1].window_end) == (2, 2)
    # slot 1 was discarded with the event; slot 3 alone cannot decode two packets
    assert results[2] is None


def test_bad_and_silent_slots_never_pend(slots):
    state = DecoderState(kappa=2)
    for slot in slots([(0, ""), (1, "abc"), (2, "")], kappa=2):
        state, event = advance_decoder(state, slot)
        assert event is None
    assert state.pending_good_slots == []


def test_lookback_discards_oldest_good_slots(slots):
    pairs = [(0, "ab"), (1, "cd"), (2, "ab"), (3, "ab")]
    short = replay(slots(pairs, kappa=2), kappa=2, lookback=2)
    assert [(e.window_start, e.window_end, e.size) for e in short] == [(2, 3, 2)]
    long = replay(slots(pairs, kappa=2), kappa=2, lookback=10)
    assert [(e.window_start, e.window_end, e.size) for e in long] == [(0, 3, 4)]


def test_default_lookback_is_two_kappa():
    assert DecoderState(kappa=5).lookback == 10


def test_slot_indices_must_increase():
    state = DecoderState(kappa=2)
    state, _ = advance_decoder(state, make_slot(4, "a", 2))
    with pytest.raises(ValueError):
        advance_decoder(state, make_slot(4, "b", 2))


slot_sets = st.lists(st.frozensets(st.sampled_from("abcdef"), max_size=4), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(sets=slot_sets, kappa=st.integers(min_value=1, max_value=4))
def test_events_are_disjoint_and_decodable(sets, kappa):
    trace = [make_slot(index, members, kappa) for index, members in enumerate(sets)]
    events = replay(trace, kappa)
    last_end = -1
    for event in events:
        assert event.window_start > last_end
        last_end = event.window_end
        assert event.good_slots[0].slot_index == event.window_start
        assert all(slot.slot_class is SlotClass.GOOD for slot in event.good_slots)
        assert event.size <= len(event.good_slots)
        assert event.decoded_packets == frozenset().union(*(s.transmitters for s in event.good_slots))


@settings(max_examples=100, deadline=None)
@given(sets=slot_sets, cut=st.integers(min_value=0, max_value=40))
def test_events_are_prefix_stable(sets, cut):
    trace = [make_slot(index, members, 3) for index, members in enumerate(sets)]
    full = replay(trace, 3)
    prefix = replay(trace[:cut], 3)
    assert prefix == [event for event in full if event.window_end < cut]


def test_load_slot_trace(staircase_trace):
    trace = load_slot_trace(staircase_trace, 3)
    assert [slot.slot_index for slot in trace] == [1, 2, 3]
    assert trace[0].transmitters == frozenset({"a", "b", "c"})


def test_load_slot_trace_silent_line(write_file):
    path = write_file("silent.csv", "0,\n1,x\n")
    trace = load_slot_trace(path, 2)
    assert trace[0].slot_class is SlotClass.SILENT


def test_load_slot_trace_rejects_out_of_order(write_file):
    path = write_file("bad.csv", "2,a\n\n1,b\n")
    with pytest.raises(TraceParseError) as info:
        load_slot_trace(path, 2)
    assert info.value.line_number == 3


def test_load_slot_trace_rejects_bad_index(write_file):
    path = write_file("bad.csv", "x,a\n")
    with pytest.raises(TraceParseError, match=":1:"):
        load_slot_trace(path, 2)
