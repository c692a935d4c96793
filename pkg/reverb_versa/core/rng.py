"""
Seeded random streams.

Every stream is numpy's Philox4x64-10 counter-based generator keyed through
a SeedSequence. numpy guarantees the bit stream of a BitGenerator for a
given seed across releases and platforms, and Philox has a published
reference sequence (Salmon et al., Random123). The first u64 draws for
seed 42 are frozen in tests/fixtures/rng_seed42.json.
"""
import numpy as np

from reverb_versa.models import PreconditionError

U64 = 2**64


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < U64:
        raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def seed_rng(seed: int) -> np.random.Generator:
    """Deterministic stream for `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_check_seed(seed))))


def derive_seed(root: int, *keys: int) -> int:
    """Child seed for a worker, batch or branch, independent of worker count."""
    seq = np.random.SeedSequence(_check_seed(root), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derived_rng(root: int, *keys: int) -> np.random.Generator:
    return seed_rng(derive_seed(root, *keys))


def draw_u64(rng: np.random.Generator, n: int) -> list:
    """Raw 64-bit outputs of the underlying bit generator."""
    return [int(x) for x in rng.bit_generator.random_raw(n)]
