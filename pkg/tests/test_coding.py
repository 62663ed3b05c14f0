"""
Tests for the GF(2^8) coding oracle.
"""
import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from coded_backoff.errors import SingularMatrixError
from coded_backoff.services.channel import replay
from coded_backoff.services.coding import (
    GF,
    MODE_BINARY,
    MODE_RANDOM,
    PREDICTION_MAX_SIZE,
    CodingTally,
    Gf256Tables,
    build_matrix,
    decode,
    estimate_singular_probability,
    gf2_rank,
    incidence_masks,
    predicted_singular_probability,
    random_payloads,
    rank,
    received_sums,
    singular_mask,
    verify_window,
)

STAIRCASE = [{"a", "b", "c"}, {"b", "c"}, {"c"}]


@pytest.fixture(scope="module")
def tables():
    return Gf256Tables()


def test_staircase_binary_matrix_is_invertible():
    transmission = build_matrix(STAIRCASE, MODE_BINARY)
    assert transmission.packets == ("a", "b", "c")
    assert transmission.is_square
    assert rank(transmission) == 3
    assert transmission.matrix.tolist() == [[1, 0, 0], [1, 1, 0], [1, 1, 1]]


def test_repeated_pair_binary_matrix_is_singular():
    transmission = build_matrix([{"a", "b"}, {"a", "b"}], MODE_BINARY)
    sums = received_sums(GF([[1, 2], [3, 4]]), transmission)
    with pytest.raises(SingularMatrixError):
        decode(sums, transmission)


def test_decode_rejects_non_square():
    transmission = build_matrix([{"a", "b"}], MODE_BINARY)
    with pytest.raises(ValueError):
        decode(GF([[1]]), transmission)


def test_random_pairs_rarely_singular():
    singular = 0
    for seed in range(1000):
        transmission = build_matrix([{"a", "b"}, {"a", "b"}], MODE_RANDOM, seed=seed)
        singular += rank(transmission) < 2
    assert singular <= 20


def test_random_mode_only_fills_incidence():
    transmission = build_matrix(STAIRCASE, MODE_RANDOM, seed=4)
    values = np.array(transmission.matrix)
    assert np.all(values[np.triu_indices(3, k=1)] == 0)
    assert np.all(values[np.tril_indices(3)] != 0)


def test_identity_sums_are_the_payloads():
    transmission = build_matrix([{"a"}, {"b"}], MODE_BINARY)
    messages = GF([[7, 8, 9], [10, 11, 12]])
    assert np.array_equal(received_sums(messages, transmission), messages)


def test_received_sums_match_table_arithmetic(tables):
    transmission = build_matrix(STAIRCASE, MODE_RANDOM, seed=11)
    messages = random_payloads(3, 5, np.random.default_rng(0))
    expected = tables.matmul(np.array(transmission.matrix).T.tolist(), np.array(messages).tolist())
    assert np.array(received_sums(messages, transmission)).tolist() == expected


def test_received_sums_rejects_row_mismatch():
    transmission = build_matrix(STAIRCASE, MODE_BINARY)
    with pytest.raises(ValueError):
        received_sums(GF([[1], [2]]), transmission)


def test_decode_round_trip():
    transmission = build_matrix(STAIRCASE, MODE_RANDOM, seed=2)
    messages = random_payloads(3, 16, np.random.default_rng(1))
    recovered = decode(received_sums(messages, transmission), transmission)
    assert np.array_equal(recovered, messages)


def test_decode_events_from_replay(slots):
    events = replay(slots([(1, "abc"), (2, "bc"), (3, "c")], kappa=3), kappa=3)
    transmission = build_matrix(events[0], MODE_BINARY)
    assert transmission.slots == (1, 2, 3)
    messages = random_payloads(3, 4, np.random.default_rng(3))
    assert np.array_equal(decode(received_sums(messages, transmission), transmission), messages)


def test_tables_agree_with_galois(tables):
    a = np.repeat(np.arange(256), 256)
    b = np.tile(np.arange(256), 256)
    expected = np.array(GF(a) * GF(b))
    actual = np.array([tables.mul(int(x), int(y)) for x, y in zip(a, b)])
    assert np.array_equal(actual, expected)


def test_table_inverse(tables):
    for value in range(1, 256):
        assert tables.mul(value, tables.inv(value)) == 1
    with pytest.raises(ZeroDivisionError):
        tables.inv(0)


def test_table_rank_matches_galois(tables):
    rng = np.random.default_rng(8)
    for _ in range(20):
        values = rng.integers(0, 4, size=(4, 4))
        assert tables.rank(values.tolist()) == int(np.linalg.matrix_rank(GF(values)))


@settings(max_examples=100, deadline=None)
@given(order=st.integers(min_value=1, max_value=8).flatmap(lambda j: st.permutations(range(j))))
def test_nested_chains_have_full_rank(order):
    size = len(order)
    chain = [frozenset(range(k + 1)) for k in range(size)]
    columns = [chain[index] for index in order]
    assert gf2_rank(incidence_masks(columns)) == size
    assert rank(build_matrix(columns, MODE_BINARY)) == size


def test_gf2_rank_of_pair_and_sum():
    columns = [{"a"}, {"b"}, {"a", "b"}]
    assert incidence_masks(columns) == [1, 2, 3]
    assert gf2_rank(incidence_masks(columns)) == 2


def test_predicted_singular_probability():
    assert predicted_singular_probability(1) == 0.0
    assert predicted_singular_probability(2) == 1 / 255
    # a nonzero third row lands in the span of the first two about once in 256 draws
    assert 0.003 < predicted_singular_probability(3) < 0.005
    assert predicted_singular_probability(3) == predicted_singular_probability(3)
    with pytest.raises(ValueError):
        predicted_singular_probability(0)


def test_large_sizes_reuse_capped_estimate():
    assert predicted_singular_probability(PREDICTION_MAX_SIZE + 5) == predicted_singular_probability(PREDICTION_MAX_SIZE)


def test_singular_mask_agrees_with_tables(tables):
    rng = np.random.default_rng(8)
    # small entries make singular draws common
    values = rng.integers(0, 3, size=(300, 3, 3))
    mask = singular_mask(GF(values))
    expected = [tables.rank(matrix.tolist()) < 3 for matrix in values]
    assert mask.tolist() == expected
    assert 0 < mask.sum() < 300


def test_singular_mask_leaves_input_alone():
    matrices = GF(np.random.default_rng(2).integers(0, 256, size=(5, 4, 4)))
    before = matrices.copy()
    singular_mask(matrices)
    assert np.array_equal(matrices, before)


def test_two_by_two_estimate_matches_exact_rate():
    samples = 200_000
    estimate = estimate_singular_probability(2, samples, np.random.default_rng(11))
    sigma = math.sqrt((1 / 255) * (254 / 255) / samples)
    assert abs(estimate - 1 / 255) <= 5 * sigma


def test_tally_z_score():
    tally = CodingTally()
    for _ in range(10):
        tally.record(2, singular=False)
    assert tally.empirical_rate == 0.0
    assert tally.predicted_rate == pytest.approx(1 / 255)
    expected = -(10 / 255) / math.sqrt(10 * (1 / 255) * (254 / 255))
    assert tally.z_score == pytest.approx(expected)
    assert tally.sizes == {2: 10}


def test_tally_singular_size_one_is_infinite():
    tally = CodingTally()
    tally.record(1, singular=True)
    assert tally.z_score == math.inf


def test_verify_window_counts_trials():
    tally = CodingTally()
    coefficients = np.random.default_rng(5)
    payloads = np.random.default_rng(6)
    for _ in range(50):
        verify_window([{"x", "y", "z"}] * 3, tally, coefficients, payloads, payload_len=8)
    assert tally.trials == 50
    assert tally.roundtrip_failures == 0
    assert tally.singular <= 5
