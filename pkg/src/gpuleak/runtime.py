"""Contexts and the exclusive-access FIFO kernel queue.

One ``Simulator`` owns all device state. Launches from any context are
appended to a single queue and executed one at a time, to completion, in
submission order; nothing preempts a running kernel. Destroying a context
zeroes every shared-memory bank but leaves its global allocations' contents
in place.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .device import MB, DeviceConfig, sm_assignment
from .errors import ContextStateError, KernelFault, LaunchError, OwnershipError
from .kernel_vm import ExecutionTrace, KernelProgram, VMOptions, execute
from .memory import EXACT_REUSE, Allocation, GlobalMemory, SharedMemory
from .trace import RUNTIME, Trace

__all__ = [
    "Clock", "Context", "KernelLaunch", "Simulator", "sm_assignment",
    "DEFAULT_SIM_GLOBAL_BYTES",
]

DEFAULT_SIM_GLOBAL_BYTES = 64 * MB


@dataclass
class Context:
    id: int
    state: str = "running"
    allocations: set[int] = field(default_factory=set)
    launch_count: int = 0

    @property
    def running(self) -> bool:
        return self.state == "running"


@dataclass
class KernelLaunch:
    ctx: int
    program: KernelProgram
    grid_size: int = 1
    block_size: int = 32
    args: list[Any] = field(default_factory=list)
    seed: int | None = None
    ticket: int | None = None


@dataclass
class Clock:
    """Simulated time, split into baseline work and countermeasure charges."""

    launch_cost: float = 0.01
    word_cost: float = 1e-7
    baseline: float = 0.0
    policy: float = 0.0
    policy_log: list[tuple[str, float]] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.baseline + self.policy

    def charge_launch(self, words_moved: int) -> None:
        self.baseline += self.launch_cost + self.word_cost * words_moved

    def charge_policy(self, what: str, amount: float) -> None:
        self.policy += amount
        self.policy_log.append((what, amount))


class Simulator:
    def __init__(self, device: DeviceConfig, *, global_mem_bytes: int | None = None,
                 arena_bytes: int = 1 * MB, alignment: int = 256, seed: int = 0,
                 allocator_mode: str = EXACT_REUSE, trace: bool = True):
        if global_mem_bytes is None:
            global_mem_bytes = min(device.global_mem_size, DEFAULT_SIM_GLOBAL_BYTES)
        self.device = device
        self.trace = Trace(enabled=trace)
        self.memory = GlobalMemory(global_mem_bytes, arena_bytes, alignment, self.trace)
        self.shared = SharedMemory(device.num_multiprocessors, device.shared_words_per_mp,
                                   self.trace)
        self.contexts: dict[int, Context] = {}
        self.queue: deque[KernelLaunch] = deque()
        self.completed: list[int] = []
        self.executions: dict[int, ExecutionTrace] = {}
        self.allocator_mode = allocator_mode
        self.rng = random.Random(seed)
        self.clock = Clock()
        self.vm_options = VMOptions()
        # countermeasure hooks, configured by countermeasures.install_policy
        self.policy = None
        self.kernel_tail: tuple = ()
        self.tail_charge: float = 0.0
        self._next_ctx = 1
        self._next_ticket = 1

    # ------------------------------------------------------------ contexts

    def create_context(self) -> Context:
        ctx = Context(self._next_ctx)
        self._next_ctx += 1
        self.contexts[ctx.id] = ctx
        return ctx

    def _running(self, ctx: Context | int) -> Context:
        cid = ctx.id if isinstance(ctx, Context) else ctx
        c = self.contexts.get(cid)
        if c is None:
            raise ContextStateError(f"unknown context {cid}")
        if not c.running:
            raise ContextStateError(f"context {cid} is terminated")
        return c

    def destroy_context(self, ctx: Context | int) -> None:
        c = self._running(ctx)
        if any(l.ctx == c.id for l in self.queue):
            raise ContextStateError(f"context {c.id} still has queued launches")
        self.shared.zero_all(RUNTIME, cause="context_exit")
        for aid in sorted(c.allocations):
            a = self.memory.allocations[aid]
            if a.live:
                self.memory.free(c.id, a)
        c.allocations.clear()
        c.state = "terminated"

    def is_idle(self) -> bool:
        return not self.queue and not any(c.running for c in self.contexts.values())

    # -------------------------------------------------------------- memory

    def alloc(self, ctx: Context | int, nbytes: int, mode: str | None = None) -> Allocation:
        c = self._running(ctx)
        a = self.memory.alloc(c.id, nbytes, mode or self.allocator_mode, self.rng)
        c.allocations.add(a.id)
        return a

    def free(self, ctx: Context | int, alloc: Allocation) -> None:
        c = self._running(ctx)
        self.memory.free(c.id, alloc)
        c.allocations.discard(alloc.id)

    def write(self, ctx: Context | int, alloc: Allocation, data, offset: int = 0) -> None:
        self.memory.checked_write(self._running(ctx).id, alloc, offset, data)

    def read(self, ctx: Context | int, alloc: Allocation, offset: int = 0,
             count: int | None = None) -> np.ndarray:
        return self.memory.checked_read(self._running(ctx).id, alloc, offset, count)

    def memset(self, ctx: Context | int, alloc: Allocation, value: int = 0) -> None:
        self.memory.checked_fill(self._running(ctx).id, alloc, value)

    # ------------------------------------------------------------- kernels

    def launch(self, launch: KernelLaunch | Context | int, program: KernelProgram | None = None,
               *, grid_size: int = 1, block_size: int | None = None,
               args: Iterable[Any] = (), seed: int | None = None) -> int:
        """Queue a kernel; returns its ticket. Accepts a KernelLaunch or its fields."""
        if not isinstance(launch, KernelLaunch):
            cid = launch.id if isinstance(launch, Context) else launch
            launch = KernelLaunch(cid, program, grid_size,
                                  block_size if block_size is not None else self.device.warp_size,
                                  list(args), seed)
        c = self._running(launch.ctx)
        if launch.grid_size < 1:
            raise LaunchError("grid_size must be >= 1")
        if launch.block_size < 1 or launch.block_size % self.device.warp_size:
            raise LaunchError(
                f"block_size {launch.block_size} is not a multiple of warp size "
                f"{self.device.warp_size}"
            )
        problems = launch.program.validate(len(launch.args))
        if problems:
            raise LaunchError("; ".join(problems))
        for a in launch.args:
            if isinstance(a, Allocation):
                current = self.memory.allocations.get(a.id)
                if current is None or not current.live:
                    raise LaunchError(f"argument allocation {a.id} is not live")
                if current.owner != c.id:
                    raise LaunchError(
                        f"argument allocation {a.id} belongs to context {current.owner}, "
                        f"not {c.id}"
                    )
        launch.ticket = self._next_ticket
        self._next_ticket += 1
        self.queue.append(launch)
        return launch.ticket

    def run_until_idle(self) -> list[int]:
        done = []
        while self.queue:
            launch = self.queue[0]
            if self.kernel_tail:
                launch = KernelLaunch(launch.ctx, launch.program.with_tail(*self.kernel_tail),
                                      launch.grid_size, launch.block_size, launch.args,
                                      launch.seed, launch.ticket)
            self.trace.ticket = launch.ticket
            try:
                result = execute(launch, self.device, self.memory, self.shared,
                                 self.vm_options)
            except KernelFault as exc:
                exc.ticket = launch.ticket
                raise
            except (LaunchError, OwnershipError) as exc:
                raise KernelFault(str(exc), None, launch.ticket) from exc
            finally:
                self.trace.ticket = None
            self.queue.popleft()
            self.clock.charge_launch(result.words_moved)
            if self.kernel_tail:
                self.clock.charge_policy("in_kernel_shared", self.tail_charge)
            self.contexts[launch.ctx].launch_count += 1
            self.executions[launch.ticket] = result
            self.completed.append(launch.ticket)
            done.append(launch.ticket)
        return done

    # ----------------------------------------------------------- utilities

    def set_scrub_charge(self, charge: Callable[[int], float] | None) -> None:
        if charge is None:
            self.memory.on_scrub = None
        else:
            self.memory.on_scrub = lambda words: self.clock.charge_policy(
                "global_zeroing", charge(words))
