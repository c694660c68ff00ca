"""A minimal kernel instruction set and its interpreter.

Thread-level SIMD is collapsed: each instruction states its whole memory
effect for a block, and blocks run in ``sm_assignment`` order. Register
counts are per-block totals; registers past the physical file spill to
global memory according to ``build_spill_map``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from . import crypto
from .device import DeviceConfig, sm_assignment
from .errors import BoundsError, KernelFault, LaunchError, SpillArenaExhausted
from .memory import Allocation, GlobalMemory, SharedMemory
from .trace import RUNTIME, Event

WORD_MASK = 0xFFFFFFFF


# ------------------------------------------------------------- instructions

@dataclass(frozen=True)
class CopyGlobalToShared:
    """Block b copies words [b*length, (b+1)*length) of an argument into its bank."""
    dst_off: int
    src_arg: int
    length: int


@dataclass(frozen=True)
class CopySharedToGlobal:
    dst_arg: int
    src_off: int
    length: int


@dataclass(frozen=True)
class CopyGlobal:
    dst_arg: int
    src_arg: int
    length: int | None = None


@dataclass(frozen=True)
class WriteGlobal:
    """Writes ``base + step*j`` at word ``off + j`` of an argument."""
    arg: int
    off: int = 0
    base: int = 0
    step: int = 1
    count: int | None = None


@dataclass(frozen=True)
class ReadSmid:
    dst_arg: int
    idx: int = 0


@dataclass(frozen=True)
class ReserveRegisters:
    n: int


@dataclass(frozen=True)
class DumpRegisters:
    dst_arg: int
    count: int | None = None


@dataclass(frozen=True)
class WriteRegisters:
    value: int


@dataclass(frozen=True)
class ZeroShared:
    length: int | None = None


@dataclass(frozen=True)
class Sha1Digest:
    """Hash ``nbytes`` of an argument and store the digest in ``count`` slots."""
    src_arg: int
    nbytes: int
    dst_arg: int
    count: int = 1
    dst_slot: int = 0


@dataclass(frozen=True)
class AesEncrypt:
    """ECB-encrypt an argument with a device-resident 44-word schedule."""
    src_arg: int
    rk_arg: int
    dst_arg: int
    nbytes: int | None = None


INSTRUCTIONS = {cls.__name__: cls for cls in (
    CopyGlobalToShared, CopySharedToGlobal, CopyGlobal, WriteGlobal, ReadSmid,
    ReserveRegisters, DumpRegisters, WriteRegisters, ZeroShared, Sha1Digest, AesEncrypt,
)}

_ARG_FIELDS = ("src_arg", "dst_arg", "arg", "rk_arg")


def instruction_from_dict(data: dict[str, Any]):
    data = dict(data)
    op = data.pop("op", None)
    if op not in INSTRUCTIONS:
        raise ValueError(f"unknown instruction {op!r}")
    cls = INSTRUCTIONS[op]
    known = {f.name for f in fields(cls)}
    bad = [k for k in data if k not in known]
    if bad:
        # YAML 1.1 turns bare keys like off/on into booleans
        raise ValueError(f"{op}: unknown fields {bad!r} (expected {sorted(known)}; "
                         f"quote keys such as 'off' in YAML)")
    return cls(**data)


def instruction_to_dict(ins) -> dict[str, Any]:
    d = {"op": type(ins).__name__}
    d.update({f.name: getattr(ins, f.name) for f in fields(ins)})
    return d


@dataclass(frozen=True)
class KernelProgram:
    instructions: tuple = ()
    declared_registers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))

    def with_tail(self, *extra) -> "KernelProgram":
        return KernelProgram(self.instructions + tuple(extra), self.declared_registers)

    def arg_indices(self) -> set[int]:
        used = set()
        for ins in self.instructions:
            for name in _ARG_FIELDS:
                if hasattr(ins, name):
                    used.add(getattr(ins, name))
        return used

    def validate(self, n_args: int) -> list[str]:
        problems = []
        if self.declared_registers < 0:
            problems.append("declared_registers must be >= 0")
        for i, ins in enumerate(self.instructions):
            if type(ins).__name__ not in INSTRUCTIONS:
                problems.append(f"instruction {i}: unknown op {ins!r}")
                continue
            for name in _ARG_FIELDS:
                if hasattr(ins, name) and not 0 <= getattr(ins, name) < n_args:
                    problems.append(f"instruction {i}: {name} refers to missing argument")
        return problems

    @classmethod
    def from_list(cls, items, declared_registers: int = 0) -> "KernelProgram":
        return cls(tuple(instruction_from_dict(i) for i in items), declared_registers)


# ----------------------------------------------------------------- registers

def build_spill_map(n_declared: int, device: DeviceConfig, memory: GlobalMemory,
                    seed: int) -> np.ndarray:
    """Global word offset backing each register beyond the physical file.

    With ``spill_isolation`` the targets are consecutive words of the private
    arena. Without it they form a window of the device heap at
    ``leak_stride`` spacing whose start is ``seed * n_spilled * stride``
    (mod heap size), regardless of who owns that memory; consecutive seeds
    therefore expose adjacent, non-overlapping windows.
    """
    n_spilled = n_declared - device.registers_per_block
    if n_spilled <= 0:
        return np.zeros(0, dtype=np.int64)
    if device.spill_isolation:
        if n_spilled > memory.arena_words:
            raise SpillArenaExhausted(
                f"{n_spilled} spilled registers exceed the {memory.arena_words}-word spill arena"
            )
        return np.arange(memory.heap_words, memory.heap_words + n_spilled, dtype=np.int64)
    stride = device.leak_stride // 4
    span = n_spilled * stride
    if span > memory.heap_words:
        raise SpillArenaExhausted(
            f"spill window of {span} words exceeds the {memory.heap_words}-word heap"
        )
    start = (seed * span) % memory.heap_words
    return (start + np.arange(n_spilled, dtype=np.int64) * stride) % memory.heap_words


class RegisterFile:
    def __init__(self, declared: int, capacity: int, spill_map: np.ndarray):
        self.declared = declared
        self.physical = np.zeros(min(declared, capacity), dtype=np.uint32)
        self.spill_map = spill_map
        self.shadow = np.zeros(len(spill_map), dtype=np.uint32)
        self.shadowed = np.zeros(len(spill_map), dtype=bool)

    @classmethod
    def reserve(cls, n: int, device: DeviceConfig, memory: GlobalMemory, seed: int):
        spill = build_spill_map(n, device, memory, seed)
        return cls(n, device.registers_per_block, spill)

    @property
    def n_physical(self) -> int:
        return len(self.physical)

    @property
    def n_spilled(self) -> int:
        return len(self.spill_map)


def dump_registers(regs: RegisterFile, n: int, memory: GlobalMemory,
                   ctx: int = RUNTIME) -> np.ndarray:
    """Register values 0..n-1; a spilled register reads its global target."""
    if n > regs.declared:
        raise ValueError(f"cannot dump {n} of {regs.declared} declared registers")
    n_phys = min(n, regs.n_physical)
    out = np.empty(n, dtype=np.uint32)
    out[:n_phys] = regs.physical[:n_phys]
    k = n - n_phys
    if k:
        targets = regs.spill_map[:k]
        live = memory.store.read(ctx, targets, cause="spill")
        out[n_phys:] = np.where(regs.shadowed[:k], regs.shadow[:k], live)
    return out


# ------------------------------------------------------------------ execute

@dataclass
class VMOptions:
    # test hook: let spilled-register writes reach the global store
    spill_write_through: bool = False
    # reset spill targets when the register file is released
    reset_spills: bool = False


@dataclass
class ExecutionTrace:
    ticket: int | None
    ctx: int
    block_mp: list[int]
    smid: list[tuple[int, int]] = field(default_factory=list)
    spill_map: np.ndarray | None = None
    events: list[Event] = field(default_factory=list)
    words_moved: int = 0


class _Run:
    def __init__(self, launch, device, memory, shared, options):
        self.launch = launch
        self.ctx = launch.ctx
        self.device = device
        self.memory = memory
        self.shared = shared
        self.options = options
        self.store = memory.store
        self.blocks = sm_assignment(launch.grid_size, device)
        self.regs: RegisterFile | None = None
        self.out = ExecutionTrace(launch.ticket, launch.ctx, self.blocks)

    def arg(self, i: int) -> Allocation:
        args = self.launch.args
        if not 0 <= i < len(args) or not isinstance(args[i], Allocation):
            raise BoundsError(f"argument {i} is not an allocation")
        return args[i]

    def arg_words(self, i: int, off: int, count: int) -> range:
        a = self.arg(i)
        if off < 0 or count < 0 or off + count > a.length:
            raise BoundsError(
                f"argument {i}: access [{off}, {off + count}) outside {a.length} words"
            )
        return range(a.offset + off, a.offset + off + count)

    def registers(self) -> RegisterFile:
        if self.regs is None:
            self.regs = RegisterFile.reserve(self.launch.program.declared_registers,
                                             self.device, self.memory, self.seed)
            self.out.spill_map = self.regs.spill_map
        return self.regs

    @property
    def seed(self) -> int:
        s = self.launch.seed
        return s if s is not None else (self.launch.ticket or 0)

    # handlers -----------------------------------------------------------

    def op_CopyGlobalToShared(self, ins):
        for b, mp in enumerate(self.blocks):
            src = self.arg_words(ins.src_arg, b * ins.length, ins.length)
            dst = self.shared.bank(mp, ins.dst_off, ins.length)
            self.shared.space.copy_from(self.store, src, dst, self.ctx, cause="kernel")
            self.out.words_moved += ins.length

    def op_CopySharedToGlobal(self, ins):
        for b, mp in enumerate(self.blocks):
            src = self.shared.bank(mp, ins.src_off, ins.length)
            dst = self.arg_words(ins.dst_arg, b * ins.length, ins.length)
            self.store.copy_from(self.shared.space, src, dst, self.ctx, cause="kernel")
            self.out.words_moved += ins.length

    def op_CopyGlobal(self, ins):
        n = ins.length if ins.length is not None else self.arg(ins.src_arg).length
        src = self.arg_words(ins.src_arg, 0, n)
        dst = self.arg_words(ins.dst_arg, 0, n)
        self.store.copy_from(self.store, src, dst, self.ctx, cause="kernel")
        self.out.words_moved += n

    def op_WriteGlobal(self, ins):
        a = self.arg(ins.arg)
        n = ins.count if ins.count is not None else a.length - ins.off
        dst = self.arg_words(ins.arg, ins.off, n)
        j = np.arange(n, dtype=np.uint64)
        values = ((ins.base + ins.step * j) & WORD_MASK).astype(np.uint32)
        self.store.write(self.ctx, dst, values, cause="kernel")
        self.out.words_moved += n

    def op_ReadSmid(self, ins):
        for b, mp in enumerate(self.blocks):
            dst = self.arg_words(ins.dst_arg, ins.idx + b, 1)
            self.store.write(self.ctx, dst, [mp], cause="kernel")
            self.out.smid.append((b, mp))

    def op_ReserveRegisters(self, ins):
        if ins.n < 0:
            raise BoundsError("cannot reserve a negative register count")
        self.regs = RegisterFile.reserve(ins.n, self.device, self.memory, self.seed)
        self.out.spill_map = self.regs.spill_map

    def op_DumpRegisters(self, ins):
        regs = self.registers()
        n = ins.count if ins.count is not None else regs.declared
        if n > regs.declared:
            raise BoundsError(f"cannot dump {n} of {regs.declared} declared registers")
        dst = self.arg_words(ins.dst_arg, 0, n)
        n_phys = min(n, regs.n_physical)
        if n_phys:
            self.store.write(self.ctx, range(dst.start, dst.start + n_phys),
                             regs.physical[:n_phys], cause="kernel")
        k = n - n_phys
        if k:
            slots = np.arange(dst.start + n_phys, dst.stop, dtype=np.int64)
            shadowed = regs.shadowed[:k]
            loaded = ~shadowed
            if loaded.any():
                # the leak: spilled registers are loaded from whatever the target holds
                self.store.copy_from(self.store, regs.spill_map[:k][loaded], slots[loaded],
                                     self.ctx, cause="spill")
            if shadowed.any():
                self.store.write(self.ctx, slots[shadowed], regs.shadow[:k][shadowed],
                                 cause="kernel")
        self.out.words_moved += n

    def op_WriteRegisters(self, ins):
        regs = self.registers()
        value = ins.value & WORD_MASK
        regs.physical[:] = value
        if regs.n_spilled:
            if self.options.spill_write_through:
                self.store.write(self.ctx, regs.spill_map, value, cause="spill")
            else:
                regs.shadow[:] = value
                regs.shadowed[:] = True

    def op_ZeroShared(self, ins):
        for mp in dict.fromkeys(self.blocks):
            region = self.shared.bank(mp, 0, ins.length)
            self.shared.space.zero(region, self.ctx, cause="kernel:zero_shared")

    def op_Sha1Digest(self, ins):
        words = self.store.read(self.ctx, self.arg_words(ins.src_arg, 0, -(-ins.nbytes // 4)),
                                cause="kernel")
        digest = crypto.sha1_cached(crypto.words_to_bytes(words)[:ins.nbytes])
        dwords = crypto.bytes_to_words(digest)
        dst = self.arg_words(ins.dst_arg, ins.dst_slot * 5, ins.count * 5)
        self.store.write(self.ctx, dst, np.tile(dwords, ins.count), cause="kernel")
        self.out.words_moved += len(words) + len(dst)

    def op_AesEncrypt(self, ins):
        n = ins.nbytes if ins.nbytes is not None else self.arg(ins.src_arg).nbytes
        pt = self.store.read(self.ctx, self.arg_words(ins.src_arg, 0, n // 4), cause="kernel")
        rk = self.store.read(self.ctx, self.arg_words(ins.rk_arg, 0, 44), cause="kernel")
        try:
            ct = crypto.encrypt_with_schedule(crypto.words_to_bytes(pt), rk)
        except ValueError as exc:
            raise BoundsError(str(exc)) from exc
        dst = self.arg_words(ins.dst_arg, 0, n // 4)
        self.store.write(self.ctx, dst, crypto.bytes_to_words(ct), cause="kernel")
        self.out.words_moved += 2 * (n // 4)

    def finish(self):
        regs = self.regs
        if regs is not None and regs.n_spilled and self.options.reset_spills:
            self.store.zero(regs.spill_map, RUNTIME, cause="policy:spill_reset")
        self.regs = None


def execute(launch, device: DeviceConfig, memory: GlobalMemory, shared: SharedMemory,
            options: VMOptions | None = None) -> ExecutionTrace:
    """Apply every instruction of ``launch.program`` and return what it touched.

    ``launch`` needs ``ctx``, ``program``, ``grid_size``, ``args``, ``seed``
    and ``ticket`` attributes. Args must be live allocations owned by the
    launching context (or plain integers).
    """
    options = options or VMOptions()
    for a in launch.args:
        if isinstance(a, Allocation):
            current = memory.allocations.get(a.id)
            if current is None or not current.live or current.owner != launch.ctx:
                raise LaunchError(f"argument allocation {a.id} is not live and owned by "
                                  f"context {launch.ctx}")
    trace = memory.store.trace
    first_event = len(trace.events)
    run = _Run(launch, device, memory, shared, options)
    try:
        for idx, ins in enumerate(launch.program.instructions):
            trace.instr_index = idx
            handler = getattr(run, "op_" + type(ins).__name__, None)
            if handler is None:
                raise KernelFault(f"unknown instruction {ins!r}", idx, launch.ticket)
            try:
                handler(ins)
            except (BoundsError, SpillArenaExhausted) as exc:
                raise KernelFault(f"{type(ins).__name__}: {exc}", idx, launch.ticket) from exc
        trace.instr_index = None
        run.finish()
    finally:
        trace.instr_index = None
    run.out.events = trace.events[first_event:]
    return run.out
