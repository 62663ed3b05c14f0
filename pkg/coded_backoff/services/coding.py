"""
Random linear coding oracle over GF(2^8).

Builds the transmission matrix of a decoding window (one row per packet, one column per
Good slot), forms the sums the base station receives and inverts them. Delivery in the
simulator never depends on this module; it only reports how often coefficient draws
realize the decoding events the channel detects.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import galois
import numpy as np

from coded_backoff.errors import SingularMatrixError
from coded_backoff.services.channel import DecodingEvent

logger = logging.getLogger(__name__)

AES_POLY = "x^8 + x^4 + x^3 + x + 1"
AES_POLY_INT = 0x11B
GF = galois.GF(2**8, irreducible_poly=AES_POLY)

MODE_BINARY = "binary"
MODE_RANDOM = "random"
MODES = (MODE_BINARY, MODE_RANDOM)

# Monte Carlo settings for the singular-probability estimate of sizes >= 3
PREDICTION_SEED = 2024
PREDICTION_SAMPLES = 100_000
PREDICTION_CHUNK = 20_000
# the estimate is flat past this size and larger sizes reuse it
PREDICTION_MAX_SIZE = 12


@dataclass(frozen=True)
class TransmissionMatrix:
    """T[p, s] is the coefficient packet `packets[p]` used in Good slot `slots[s]`, zero if silent there."""
    matrix: galois.FieldArray
    packets: tuple
    slots: tuple
    mode: str

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    @property
    def is_square(self) -> bool:
        rows, cols = self.matrix.shape
        return rows == cols


def _columns_of(window) -> tuple[tuple, list]:
    if isinstance(window, DecodingEvent):
        if not window.good_slots:
            raise ValueError("decoding event carries no good slots")
        return (tuple(slot.slot_index for slot in window.good_slots),
                [slot.transmitters for slot in window.good_slots])
    columns = [frozenset(members) for members in window]
    return tuple(range(len(columns))), columns


def build_matrix(window: Union[DecodingEvent, Sequence], mode: str = MODE_RANDOM,
                 seed: int = 0, rng: Optional[np.random.Generator] = None) -> TransmissionMatrix:
    """
    Transmission matrix of a window, given as a DecodingEvent or as a list of per-slot
    transmitter sets. Binary mode puts 1 wherever a packet transmitted; random mode
    draws a uniform nonzero coefficient from `rng` (or a Philox stream keyed by `seed`).
    """
    if mode not in MODES:
        raise ValueError(f"unknown coefficient mode '{mode}'")
    slots, columns = _columns_of(window)
    packets = tuple(sorted(frozenset().union(*columns))) if columns else ()
    row_of = {packet_id: row for row, packet_id in enumerate(packets)}

    incidence = np.zeros((len(packets), len(columns)), dtype=bool)
    for col, members in enumerate(columns):
        for packet_id in members:
            incidence[row_of[packet_id], col] = True

    if mode == MODE_BINARY:
        values = incidence.astype(np.uint8)
    else:
        if rng is None:
            rng = np.random.Generator(np.random.Philox(key=seed))
        coefficients = rng.integers(1, 256, size=incidence.shape, dtype=np.uint8)
        values = np.where(incidence, coefficients, 0).astype(np.uint8)
    return TransmissionMatrix(GF(values), packets, slots, mode)


def random_payloads(count: int, payload_len: int, rng: np.random.Generator) -> galois.FieldArray:
    """`count` payloads of `payload_len` symbols, one row each."""
    if payload_len < 1:
        raise ValueError(f"payload length must be >= 1, got {payload_len}")
    return GF(rng.integers(0, 256, size=(count, payload_len), dtype=np.uint8))


def received_sums(messages: galois.FieldArray, transmission: TransmissionMatrix) -> galois.FieldArray:
    """Row s is what the base station hears in slot s: sum over p of T[p, s] * m[p]."""
    matrix = transmission.matrix
    if messages.ndim != 2 or messages.shape[0] != matrix.shape[0]:
        raise ValueError(
            f"payload rows {messages.shape[0] if messages.ndim else 0} do not match "
            f"{matrix.shape[0]} matrix rows"
        )
    return matrix.T @ messages


def rank(transmission: TransmissionMatrix) -> int:
    return int(np.linalg.matrix_rank(transmission.matrix))


def decode(sums: galois.FieldArray, transmission: TransmissionMatrix) -> galois.FieldArray:
    """Recover the payloads from the received sums; raises SingularMatrixError when T has no inverse."""
    matrix = transmission.matrix
    if not transmission.is_square:
        raise ValueError(f"transmission matrix must be square, got {matrix.shape}")
    if sums.shape[0] != matrix.shape[1]:
        raise ValueError(f"{sums.shape[0]} received rows for {matrix.shape[1]} slots")
    size = matrix.shape[0]
    if size == 0:
        return sums
    if int(np.linalg.matrix_rank(matrix)) < size:
        raise SingularMatrixError(f"{size}x{size} transmission matrix is singular")
    return np.linalg.inv(matrix.T) @ sums


def singular_mask(matrices: galois.FieldArray) -> np.ndarray:
    """
    Batched Gaussian elimination over a stack of square GF(2^8) matrices, shape (batch, n, n).
    Returns True where the matrix is singular. The input is left untouched.
    """
    work = matrices.copy()
    batch, size = work.shape[0], work.shape[1]
    rows = np.arange(batch)
    singular = np.zeros(batch, dtype=bool)
    for col in range(size):
        nonzero = work[:, col:, col] != 0
        singular |= ~nonzero.any(axis=1)
        pivot_rows = col + np.argmax(nonzero, axis=1)
        top = work[rows, col].copy()
        work[rows, col] = work[rows, pivot_rows]
        work[rows, pivot_rows] = top
        pivots = np.asarray(work[:, col, col]).copy()
        # zero pivots belong to matrices already marked singular
        pivots[pivots == 0] = 1
        pivot_row = work[:, col, :] * (GF(pivots) ** -1)[:, None]
        factors = work[:, col + 1:, col]
        work[:, col + 1:, :] = work[:, col + 1:, :] - factors[:, :, None] * pivot_row[:, None, :]
    return singular


def estimate_singular_probability(size: int, samples: int, rng: np.random.Generator,
                                  chunk: int = PREDICTION_CHUNK) -> float:
    """Fraction of singular size x size matrices with independent uniform nonzero entries."""
    singular = 0
    remaining = samples
    while remaining > 0:
        count = min(chunk, remaining)
        draws = GF(rng.integers(1, 256, size=(count, size, size)))
        singular += int(singular_mask(draws).sum())
        remaining -= count
    return singular / samples


@functools.lru_cache(maxsize=None)
def predicted_singular_probability(size: int) -> float:
    """
    Probability that a random-mode matrix of a protocol epoch is singular.
    Epoch matrices are full: every joiner transmits in every slot with a nonzero coefficient.
    Exact for sizes 1 and 2; larger sizes are a fixed-seed Monte Carlo estimate over
    PREDICTION_SAMPLES nonzero-entry matrices, taken at PREDICTION_MAX_SIZE for anything bigger.
    """
    if size < 1:
        raise ValueError(f"matrix size must be >= 1, got {size}")
    if size == 1:
        return 0.0
    if size == 2:
        # ad = bc: given a, b, c there is exactly one nonzero d
        return 1.0 / 255.0
    if size > PREDICTION_MAX_SIZE:
        return predicted_singular_probability(PREDICTION_MAX_SIZE)
    rng = np.random.Generator(np.random.Philox(key=PREDICTION_SEED + size))
    estimate = estimate_singular_probability(size, PREDICTION_SAMPLES, rng)
    logger.debug("singular probability for size %d estimated at %.6g", size, estimate)
    return estimate


def gf2_rank(columns: Sequence[int]) -> int:
    """Rank over GF(2) of column vectors given as integer bitmasks."""
    basis: list[int] = []
    for column in columns:
        reduced = column
        for vector in basis:
            reduced = min(reduced, reduced ^ vector)
        if reduced:
            basis.append(reduced)
            basis.sort(reverse=True)
    return len(basis)


def incidence_masks(columns: Sequence, packets: Optional[Sequence] = None) -> list[int]:
    """Bitmask per column: bit p is set when packets[p] transmitted in that slot."""
    if packets is None:
        packets = sorted(frozenset().union(*columns)) if columns else []
    bit_of = {packet_id: bit for bit, packet_id in enumerate(packets)}
    return [sum(1 << bit_of[packet_id] for packet_id in members) for members in columns]


class Gf256Tables:
    """Log/antilog GF(2^8) arithmetic, kept independent of galois for cross-checks."""

    GENERATOR = 3

    def __init__(self, poly: int = AES_POLY_INT):
        self.poly = poly
        self.exp = [0] * 512
        self.log = [0] * 256
        value = 1
        for power in range(255):
            self.exp[power] = value
            self.log[value] = power
            value = self._slow_mul(value, self.GENERATOR)
        if value != 1 or len(set(self.exp[:255])) != 255:
            raise ValueError(f"{self.GENERATOR} does not generate GF(2^8) under {poly:#x}")
        for power in range(255, 512):
            self.exp[power] = self.exp[power - 255]

    def _slow_mul(self, a: int, b: int) -> int:
        result = 0
        while b:
            if b & 1:
                result ^= a
            a <<= 1
            if a & 0x100:
                a ^= self.poly
            b >>= 1
        return result

    @staticmethod
    def add(a: int, b: int) -> int:
        return a ^ b

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^8)")
        return self.exp[255 - self.log[a]]

    def matmul(self, left: list, right: list) -> list:
        rows, inner, cols = len(left), len(right), len(right[0]) if right else 0
        out = [[0] * cols for _ in range(rows)]
        for r in range(rows):
            for c in range(cols):
                acc = 0
                for k in range(inner):
                    acc ^= self.mul(left[r][k], right[k][c])
                out[r][c] = acc
        return out

    def rank(self, matrix: list) -> int:
        """Gaussian elimination on a copy of a list-of-rows matrix."""
        rows = [list(row) for row in matrix]
        if not rows:
            return 0
        n_cols = len(rows[0])
        rank = 0
        for col in range(n_cols):
            pivot = next((r for r in range(rank, len(rows)) if rows[r][col]), None)
            if pivot is None:
                continue
            rows[rank], rows[pivot] = rows[pivot], rows[rank]
            scale = self.inv(rows[rank][col])
            rows[rank] = [self.mul(scale, v) for v in rows[rank]]
            for r in range(len(rows)):
                if r != rank and rows[r][col]:
                    factor = rows[r][col]
                    rows[r] = [v ^ self.mul(factor, p) for v, p in zip(rows[r], rows[rank])]
            rank += 1
        return rank


@dataclass
class CodingTally:
    """Running counts for --verify-coding."""
    trials: int = 0
    singular: int = 0
    roundtrip_failures: int = 0
    predicted_total: float = 0.0
    predicted_variance: float = 0.0
    sizes: dict = field(default_factory=dict)

    def record(self, size: int, singular: bool, roundtrip_ok: bool = True) -> None:
        probability = predicted_singular_probability(size)
        self.trials += 1
        self.singular += int(singular)
        self.roundtrip_failures += int(not singular and not roundtrip_ok)
        self.predicted_total += probability
        self.predicted_variance += probability * (1.0 - probability)
        self.sizes[size] = self.sizes.get(size, 0) + 1

    @property
    def empirical_rate(self) -> float:
        return self.singular / self.trials if self.trials else 0.0

    @property
    def predicted_rate(self) -> float:
        return self.predicted_total / self.trials if self.trials else 0.0

    @property
    def z_score(self) -> float:
        """Standard deviations between observed and expected singular counts."""
        if self.predicted_variance == 0.0:
            return 0.0 if self.singular == 0 else math.inf
        return (self.singular - self.predicted_total) / math.sqrt(self.predicted_variance)


def verify_window(window: Union[DecodingEvent, Sequence], tally: CodingTally,
                  coefficient_rng: np.random.Generator, payload_rng: np.random.Generator,
                  payload_len: int, mode: str = MODE_RANDOM) -> bool:
    """Encode random payloads over one window and decode them. Returns True on exact recovery."""
    transmission = build_matrix(window, mode, rng=coefficient_rng)
    size = len(transmission.packets)
    messages = random_payloads(size, payload_len, payload_rng)
    sums = received_sums(messages, transmission)
    try:
        recovered = decode(sums, transmission)
    except SingularMatrixError:
        logger.debug("singular %dx%d draw at slots %s", size, size, transmission.slots)
        tally.record(size, singular=True)
        return False
    ok = bool(np.array_equal(recovered, messages))
    tally.record(size, singular=False, roundtrip_ok=ok)
    return ok
