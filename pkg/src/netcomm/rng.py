"""Counter-based 64-bit random streams shared by both simulation engines.

Every stream is a SplitMix64 generator. The native kernel re-implements the
exact same arithmetic, so a stream's state can be handed to it as a plain
``uint64`` and the draws continue bit-for-bit.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0

# stream purposes used by derive_stream
GRAPH = 1
PAIRING = 2
ROLES = 3
CHANNEL = 4
AGENT_INIT = 5
AGENT_POLICY = 6
AGENT_MEMORY = 7


def mix64(z: int) -> int:
    """SplitMix64 finalizer (a bijection on 64-bit words)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, cell: int, rep: int) -> int:
    """Mix ``(master, cell, rep)`` into one 64-bit seed.

    Each stage is a bijection in its running hash for a fixed input and in the
    input for a fixed hash, so distinct repetitions of one cell never collide.
    The construction is part of the results format and must not change.
    """
    h = mix64((master + GOLDEN) & MASK64)
    h = mix64(((h ^ (cell & MASK64)) + GOLDEN) & MASK64)
    h = mix64(((h ^ (rep & MASK64)) + GOLDEN) & MASK64)
    return h


class Stream:
    """A SplitMix64 random stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by 32-bit multiply-shift (bias below 2**-32 * n)."""
        return ((self.next_u64() >> 32) * n) >> 32

    def sample_without_replacement(self, population: int, k: int) -> list[int]:
        """Floyd's algorithm; returns ``k`` distinct indices in ascending order."""
        chosen: set[int] = set()
        for j in range(population - k, population):
            t = self.randbelow(j + 1)
            chosen.add(j if t in chosen else t)
        return sorted(chosen)

    def __repr__(self) -> str:
        return f"Stream(state={self.state:#018x})"


def derive_stream(run_seed: int, purpose: int, index: int = 0) -> Stream:
    return Stream(derive_seed(run_seed, purpose, index))
