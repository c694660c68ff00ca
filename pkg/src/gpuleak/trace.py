"""Memory spaces with per-word provenance and the event log that records every effect.

Each word carries the id of the context whose data it holds (0 means runtime
or never written). Copies propagate provenance, so a verifier can tell which
process's data a reader actually saw. The event log is what the test oracles
replay independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BoundsError

RUNTIME = 0

Addrs = Union[range, np.ndarray]


@dataclass
class Event:
    kind: str  # "write" | "zero" | "copy" | "read"
    ctx: int
    space: str | None = None
    addrs: Addrs | None = None
    src_space: str | None = None
    src_addrs: Addrs | None = None
    src_owners: np.ndarray | None = None
    cause: str = ""
    ticket: int | None = None
    instr_index: int | None = None


class Trace:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.events: list[Event] = []
        self.ticket: int | None = None
        self.instr_index: int | None = None

    def record(self, event: Event) -> None:
        if self.enabled:
            event.ticket = self.ticket
            event.instr_index = self.instr_index
            self.events.append(event)

    def __len__(self):
        return len(self.events)


def _ix(addrs: Addrs):
    if isinstance(addrs, range):
        return slice(addrs.start, addrs.stop)
    return addrs


def addr_count(addrs: Addrs) -> int:
    return len(addrs)


def as_array(addrs: Addrs) -> np.ndarray:
    if isinstance(addrs, range):
        return np.arange(addrs.start, addrs.stop, dtype=np.int64)
    return np.asarray(addrs, dtype=np.int64)


class Space:
    """A flat word-addressed memory with a parallel provenance array."""

    def __init__(self, name: str, nwords: int, trace: Trace | None = None):
        self.name = name
        self.size = nwords
        self.words = np.zeros(nwords, dtype=np.uint32)
        self.owner = np.zeros(nwords, dtype=np.int32)
        self.trace = trace if trace is not None else Trace(enabled=False)

    def check(self, addrs: Addrs) -> None:
        if isinstance(addrs, range):
            if len(addrs) and (addrs.start < 0 or addrs.stop > self.size):
                raise BoundsError(
                    f"{self.name} access [{addrs.start}, {addrs.stop}) outside [0, {self.size})"
                )
        elif len(addrs) and (addrs.min() < 0 or addrs.max() >= self.size):
            raise BoundsError(f"{self.name} access outside [0, {self.size})")

    def read(self, ctx: int, addrs: Addrs, cause: str = "") -> np.ndarray:
        self.check(addrs)
        ix = _ix(addrs)
        if self.trace.enabled:
            self.trace.record(Event("read", ctx, src_space=self.name, src_addrs=addrs,
                                    src_owners=self.owner[ix].copy(), cause=cause))
        return self.words[ix].copy()

    def peek(self, addrs: Addrs) -> np.ndarray:
        """Untraced read for verifiers."""
        self.check(addrs)
        return self.words[_ix(addrs)].copy()

    def write(self, ctx: int, addrs: Addrs, values, cause: str = "") -> None:
        self.check(addrs)
        ix = _ix(addrs)
        self.words[ix] = np.asarray(values, dtype=np.uint32) if not np.isscalar(values) else values
        self.owner[ix] = ctx
        self.trace.record(Event("write", ctx, self.name, addrs, cause=cause))

    def zero(self, addrs: Addrs, ctx: int = RUNTIME, cause: str = "") -> None:
        self.check(addrs)
        ix = _ix(addrs)
        # skip the store when already clear so huge fresh buffers stay untouched
        if self.words[ix].any() or self.owner[ix].any():
            self.words[ix] = 0
            self.owner[ix] = RUNTIME
        self.trace.record(Event("zero", ctx, self.name, addrs, cause=cause))

    def copy_from(self, src: "Space", src_addrs: Addrs, dst_addrs: Addrs, ctx: int,
                  cause: str = "") -> None:
        """Copy words and their provenance from ``src`` into this space."""
        if addr_count(src_addrs) != addr_count(dst_addrs):
            raise BoundsError("copy source and destination lengths differ")
        src.check(src_addrs)
        self.check(dst_addrs)
        sx, dx = _ix(src_addrs), _ix(dst_addrs)
        values = src.words[sx].copy()
        owners = src.owner[sx].copy()
        self.words[dx] = values
        self.owner[dx] = owners
        self.trace.record(Event("copy", ctx, self.name, dst_addrs, src.name, src_addrs,
                                src_owners=owners if self.trace.enabled else None,
                                cause=cause))
