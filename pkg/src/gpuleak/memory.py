"""Global and shared memory with residue semantics.

The global store is a flat array of 32-bit words. The low ``heap_words`` are
managed by the allocator; the remaining tail is the private spill arena,
which the allocator never hands out. Freeing never touches store contents
unless a scrub mode is installed, which is exactly what lets a later
allocation observe the previous owner's data.

Placement rule (invented, the real allocator is a black box): every region
is aligned to ``alignment`` bytes and rounded up to it. In ``exact-reuse``
mode a free extent whose length equals the request is reissued, most
recently freed first; otherwise first fit. ``randomized`` mode picks a
uniformly random aligned start among all positions where the request fits.
Adjacent free extents coalesce.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    BoundsError,
    DoubleFreeError,
    OutOfMemoryError,
    OwnershipError,
)
from .trace import RUNTIME, Space, Trace

WORD_BYTES = 4
EXACT_REUSE = "exact-reuse"
RANDOMIZED = "randomized"
ALLOC_MODES = (EXACT_REUSE, RANDOMIZED)


def words_for(nbytes: int) -> int:
    return -(-nbytes // WORD_BYTES)


@dataclass
class Allocation:
    id: int
    owner: int
    offset: int  # word index into the store
    length: int  # requested words
    reserved: int  # words actually carved out (alignment rounded)
    state: str = "live"

    @property
    def nbytes(self) -> int:
        return self.length * WORD_BYTES

    @property
    def live(self) -> bool:
        return self.state == "live"

    @property
    def words(self) -> range:
        return range(self.offset, self.offset + self.length)

    @property
    def span(self) -> range:
        return range(self.offset, self.offset + self.reserved)


class GlobalMemory:
    def __init__(self, heap_bytes: int, arena_bytes: int = 1 << 20,
                 alignment: int = 256, trace: Trace | None = None):
        if heap_bytes <= 0 or heap_bytes % alignment:
            raise ValueError("heap_bytes must be a positive multiple of the alignment")
        if alignment % WORD_BYTES:
            raise ValueError("alignment must be a multiple of 4 bytes")
        self.align_words = alignment // WORD_BYTES
        self.heap_words = heap_bytes // WORD_BYTES
        self.arena_words = words_for(arena_bytes)
        self.store = Space("global", self.heap_words + self.arena_words, trace)
        self.allocations: dict[int, Allocation] = {}
        self._next_id = 1
        self._stamp = 0
        # free extents: start -> (length, freed stamp); _starts kept sorted
        self._free: dict[int, tuple[int, int]] = {0: (self.heap_words, 0)}
        self._starts: list[int] = [0]
        # "on_free" | "on_alloc" | None
        self.scrub: str | None = None
        self.on_scrub: Callable[[int], None] | None = None

    # ------------------------------------------------------------------ views

    @property
    def size_words(self) -> int:
        return self.store.size

    @property
    def arena(self) -> range:
        return range(self.heap_words, self.heap_words + self.arena_words)

    def free_extents(self) -> list[tuple[int, int]]:
        return [(s, self._free[s][0]) for s in self._starts]

    def free_words(self) -> int:
        return sum(length for length, _ in self._free.values())

    def allocable_words(self) -> int:
        """Largest single request that can currently succeed."""
        return max((length for length, _ in self._free.values()), default=0)

    def live_allocations(self, ctx: int | None = None) -> list[Allocation]:
        return [a for a in self.allocations.values()
                if a.live and (ctx is None or a.owner == ctx)]

    def fitting_positions(self, reserved: int) -> list[int]:
        """Every aligned start where a region of ``reserved`` words fits."""
        out = []
        for start in self._starts:
            length = self._free[start][0]
            if length >= reserved:
                out.extend(range(start, start + length - reserved + 1, self.align_words))
        return out

    # ------------------------------------------------------------- allocator

    def reserve_for(self, nwords: int) -> int:
        """Words actually carved out for a request of ``nwords``."""
        a = self.align_words
        return -(-nwords // a) * a

    def alloc(self, ctx: int, nbytes: int, mode: str = EXACT_REUSE,
              rng: random.Random | None = None) -> Allocation:
        if nbytes <= 0:
            raise ValueError("allocation size must be positive")
        if mode not in ALLOC_MODES:
            raise ValueError(f"unknown allocation mode {mode!r}")
        length = words_for(nbytes)
        reserved = self.reserve_for(length)
        if mode == RANDOMIZED:
            if rng is None:
                raise ValueError("randomized mode needs a seeded rng")
            positions = self.fitting_positions(reserved)
            if not positions:
                raise OutOfMemoryError(f"cannot place {nbytes} bytes")
            pos = positions[rng.randrange(len(positions))]
        else:
            pos = self._place_exact(reserved)
            if pos is None:
                raise OutOfMemoryError(
                    f"cannot place {nbytes} bytes (largest free extent "
                    f"{self.allocable_words() * WORD_BYTES} bytes)"
                )
        self._carve(pos, reserved)
        alloc = Allocation(self._next_id, ctx, pos, length, reserved)
        self._next_id += 1
        self.allocations[alloc.id] = alloc
        if self.scrub == "on_alloc":
            self._scrub(alloc.span, "zero_on_alloc")
        return alloc

    def _place_exact(self, reserved: int) -> int | None:
        exact = [s for s in self._starts if self._free[s][0] == reserved]
        if exact:
            return max(exact, key=lambda s: self._free[s][1])
        for s in self._starts:
            if self._free[s][0] >= reserved:
                return s
        return None

    def _carve(self, pos: int, reserved: int) -> None:
        i = bisect.bisect_right(self._starts, pos) - 1
        start = self._starts[i]
        length, stamp = self._free[start]
        assert start <= pos and pos + reserved <= start + length
        del self._free[start]
        self._starts.pop(i)
        end = start + length
        if pos > start:
            self._insert_extent(start, pos - start, stamp)
        if pos + reserved < end:
            self._insert_extent(pos + reserved, end - pos - reserved, stamp)

    def _insert_extent(self, start: int, length: int, stamp: int) -> None:
        bisect.insort(self._starts, start)
        self._free[start] = (length, stamp)

    def free(self, ctx: int, alloc: Allocation) -> None:
        current = self.allocations.get(alloc.id)
        if current is None:
            raise OwnershipError(f"allocation {alloc.id} unknown to this memory")
        if not current.live:
            raise DoubleFreeError(f"allocation {alloc.id} already freed")
        if current.owner != ctx:
            raise OwnershipError(
                f"context {ctx} cannot free allocation {alloc.id} owned by {current.owner}"
            )
        current.state = "freed"
        alloc.state = "freed"
        if self.scrub == "on_free":
            self._scrub(current.span, "zero_on_free")
        self._stamp += 1
        self._release(current.offset, current.reserved, self._stamp)

    def _release(self, start: int, length: int, stamp: int) -> None:
        i = bisect.bisect_left(self._starts, start)
        # merge with predecessor
        if i > 0:
            prev = self._starts[i - 1]
            plen, _ = self._free[prev]
            if prev + plen == start:
                del self._free[prev]
                self._starts.pop(i - 1)
                start, length = prev, plen + length
                i -= 1
        # merge with successor
        if i < len(self._starts) and self._starts[i] == start + length:
            nxt = self._starts[i]
            nlen, _ = self._free.pop(nxt)
            self._starts.pop(i)
            length += nlen
        self._insert_extent(start, length, stamp)

    def _scrub(self, region: range, cause: str) -> None:
        self.store.zero(region, RUNTIME, cause=f"policy:{cause}")
        if self.on_scrub is not None:
            self.on_scrub(len(region))

    # --------------------------------------------------------- checked path

    def _checked(self, ctx: int, alloc: Allocation, offset: int, count: int) -> range:
        current = self.allocations.get(alloc.id)
        if current is None or not current.live:
            raise OwnershipError(f"allocation {alloc.id} is not live")
        if current.owner != ctx:
            raise OwnershipError(
                f"context {ctx} cannot access allocation {alloc.id} owned by {current.owner}"
            )
        if offset < 0 or count < 0 or offset + count > current.length:
            raise BoundsError(
                f"access [{offset}, {offset + count}) outside allocation of {current.length} words"
            )
        return range(current.offset + offset, current.offset + offset + count)

    def checked_read(self, ctx: int, alloc: Allocation, offset: int = 0,
                     count: int | None = None) -> np.ndarray:
        if count is None:
            count = alloc.length - offset
        return self.store.read(ctx, self._checked(ctx, alloc, offset, count), cause="memcpy")

    def checked_write(self, ctx: int, alloc: Allocation, offset: int, data) -> None:
        data = np.asarray(data, dtype=np.uint32).ravel()
        addrs = self._checked(ctx, alloc, offset, len(data))
        self.store.write(ctx, addrs, data, cause="memcpy")

    def checked_fill(self, ctx: int, alloc: Allocation, value: int = 0) -> None:
        """cudaMemset analogue over the whole allocation."""
        addrs = self._checked(ctx, alloc, 0, alloc.length)
        if value == 0:
            self.store.zero(addrs, ctx, cause="memset")
        else:
            self.store.write(ctx, addrs, value, cause="memset")

    # ------------------------------------------------------------- raw path

    def raw_read(self, offset: int, count: int) -> np.ndarray:
        """Read the store ignoring the allocation map (verifier access)."""
        if offset < 0 or count < 0 or offset + count > self.size_words:
            raise BoundsError(f"raw read [{offset}, {offset + count}) outside store")
        return self.store.peek(range(offset, offset + count))

    def raw_write(self, offset: int, data, ctx: int = RUNTIME) -> None:
        """Seed store contents directly (test setup only)."""
        data = np.asarray(data, dtype=np.uint32).ravel()
        if offset < 0 or offset + len(data) > self.size_words:
            raise BoundsError("raw write outside store")
        self.store.write(ctx, range(offset, offset + len(data)), data, cause="raw")

    def check_invariants(self) -> list[str]:
        problems = []
        spans = sorted((a.offset, a.offset + a.reserved, a.id) for a in self.live_allocations())
        for (s1, e1, i1), (s2, e2, i2) in zip(spans, spans[1:]):
            if s2 < e1:
                problems.append(f"allocations {i1} and {i2} overlap")
        covered = sorted(spans + [(s, s + n, -1) for s, n in self.free_extents()])
        cursor = 0
        for s, e, ident in covered:
            if s != cursor:
                problems.append(f"gap or overlap at word {cursor} (next region starts {s})")
            cursor = max(cursor, e)
        if cursor != self.heap_words:
            problems.append("free list and live allocations do not cover the heap")
        for s, e, _ in spans:
            if e > self.heap_words:
                problems.append("allocation extends into the spill arena")
        return problems


class SharedMemory:
    """One bank per multiprocessor, flattened into a single space."""

    def __init__(self, num_mps: int, bank_words: int, trace: Trace | None = None):
        self.num_mps = num_mps
        self.bank_words = bank_words
        self.space = Space("shared", num_mps * bank_words, trace)

    def bank(self, mp: int, offset: int = 0, count: int | None = None) -> range:
        if not 0 <= mp < self.num_mps:
            raise BoundsError(f"no multiprocessor {mp}")
        if count is None:
            count = self.bank_words - offset
        if offset < 0 or count < 0 or offset + count > self.bank_words:
            raise BoundsError(
                f"shared access [{offset}, {offset + count}) outside bank of {self.bank_words} words"
            )
        base = mp * self.bank_words
        return range(base + offset, base + offset + count)

    def zero_all(self, ctx: int = RUNTIME, cause: str = "") -> None:
        self.space.zero(range(0, self.space.size), ctx, cause=cause)

    def snapshot(self, mp: int) -> np.ndarray:
        return self.space.peek(self.bank(mp))

