"""
Seed derivation. Every random stream in a run comes from the run seed; nothing reads ambient entropy.
"""
import numpy as np

# Sub-stream identifiers; the protocol's join stream uses the run seed directly
STREAM_ADVERSARY = 1
STREAM_COEFFICIENTS = 2
STREAM_PAYLOADS = 3


def protocol_rng(seed: int) -> np.random.Generator:
    """Counter-based stream for join decisions."""
    return np.random.Generator(np.random.Philox(key=seed))


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent Philox stream for a named purpose within one run."""
    key = np.random.SeedSequence([seed, stream]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def mix_seed(base_seed: int, cell_index: int) -> int:
    """
    Per-cell seed for sweeps: the first 32-bit word SeedSequence([base_seed, cell_index])
    generates. Cells stay reproducible on their own.
    """
    return int(np.random.SeedSequence([base_seed, cell_index]).generate_state(1, np.uint32)[0])
