"""Zeroing countermeasures and their simulated cost.

Time is in simulated units. The shared-memory profile of each preset is
calibrated so that in-kernel zeroing costs 1.66 units on the GT 640 and 0.27
on the C2050, the mean overheads measured on those cards. Global zeroing
costs a fixed launch charge plus a per-word charge that shrinks with the
number of multiprocessors; those two numbers are illustrative, not measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .device import DeviceConfig, preset
from .errors import PolicyError
from .kernel_vm import CopyGlobalToShared, KernelProgram, ZeroShared
from .memory import words_for
from .runtime import Simulator

NONE = "none"
ZERO_ON_FREE = "zero_on_free"
ZERO_ON_ALLOC = "zero_on_alloc"
IN_KERNEL_SHARED = "in_kernel_shared"
SPILL_ISOLATION = "spill_isolation"
POLICY_MODES = (NONE, ZERO_ON_FREE, ZERO_ON_ALLOC, IN_KERNEL_SHARED, SPILL_ISOLATION)
GLOBAL_MODES = (ZERO_ON_FREE, ZERO_ON_ALLOC)


@dataclass(frozen=True)
class CostModel:
    fixed_cost: float = 0.0
    per_word_cost: float = 0.0

    def __post_init__(self):
        if self.fixed_cost < 0 or self.per_word_cost < 0:
            raise ValueError("costs must be non-negative")


@dataclass(frozen=True)
class ZeroingPolicy:
    mode: str
    cost_model: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy {self.mode!r}; choose from {POLICY_MODES}")

    def charge(self, words: int) -> float:
        if self.mode == IN_KERNEL_SHARED:
            # size-independent by construction
            return self.cost_model.fixed_cost
        return self.cost_model.fixed_cost + self.cost_model.per_word_cost * words


@dataclass(frozen=True)
class CostProfile:
    shared_fixed: float
    global_fixed: float
    global_per_word: float


def cost_profile(device: DeviceConfig) -> CostProfile:
    calibrated = {"geforce-gt640": 1.66, "tesla-c2050": 0.27}
    shared = calibrated.get(device.name, 1.66 * 2 / device.num_multiprocessors)
    return CostProfile(
        shared_fixed=shared,
        global_fixed=0.02,
        global_per_word=3.36e-6 / device.num_multiprocessors,
    )


def default_policy(mode: str, device: DeviceConfig | str) -> ZeroingPolicy:
    if isinstance(device, str):
        device = preset(device)
    prof = cost_profile(device)
    if mode == IN_KERNEL_SHARED:
        return ZeroingPolicy(mode, CostModel(prof.shared_fixed, 0.0))
    if mode in GLOBAL_MODES:
        return ZeroingPolicy(mode, CostModel(prof.global_fixed, prof.global_per_word))
    return ZeroingPolicy(mode)


def install_policy(sim: Simulator, policy: ZeroingPolicy | str | None) -> None:
    """Configure ``sim`` for ``policy``; only allowed while nothing is running."""
    if policy is None:
        return
    if isinstance(policy, str):
        policy = default_policy(policy, sim.device)
    if not sim.is_idle():
        raise PolicyError("policies can only be installed on an idle simulator")
    if sim.policy is not None and sim.policy != policy:
        raise PolicyError(f"policy {sim.policy.mode} already installed")
    sim.policy = policy
    if policy.mode in GLOBAL_MODES:
        sim.memory.scrub = "on_free" if policy.mode == ZERO_ON_FREE else "on_alloc"
        sim.set_scrub_charge(policy.charge)
    elif policy.mode == IN_KERNEL_SHARED:
        sim.kernel_tail = (ZeroShared(),)
        sim.tail_charge = policy.charge(0)
    elif policy.mode == SPILL_ISOLATION:
        sim.device = sim.device.with_overrides(spill_isolation=True)
        sim.vm_options.reset_spills = True


@dataclass(frozen=True)
class OverheadRecord:
    policy: str
    buffer_bytes: int
    elapsed: float


def parse_sizes(text: str) -> list[int]:
    """Parse ``16MB:512MB:16MB`` or a comma list like ``1KB,2KB``."""
    units = {"": 1, "B": 1, "KB": 1024, "MB": 1024 ** 2, "GB": 1024 ** 3}

    def one(tok: str) -> int:
        tok = tok.strip().upper()
        num = tok.rstrip("KMGB")
        unit = tok[len(num):]
        if unit not in units or not num:
            raise ValueError(f"bad size {tok!r}")
        return int(float(num) * units[unit])

    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:step")
        start, stop, step = (one(p) for p in parts)
        if step <= 0:
            raise ValueError("step must be positive")
        return list(range(start, stop + 1, step))
    return [one(p) for p in text.split(",") if p.strip()]


def measure_overhead(policy: ZeroingPolicy | str, sizes: list[int],
                     device: DeviceConfig | str = "geforce-gt640") -> list[OverheadRecord]:
    """Simulated zeroing overhead for each buffer size.

    Global policies allocate (and, for zero_on_free, release) a buffer of
    each size on a fresh simulator. The shared policy runs a kernel that
    touches ``size`` bytes of shared memory spread over every multiprocessor
    and lets the policy append its zeroing tail.
    """
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if isinstance(device, str):
        device = preset(device)
    if isinstance(policy, str):
        policy = default_policy(policy, device)
    records = []
    for size in sizes:
        if policy.mode in GLOBAL_MODES:
            heap = -(-size // 256) * 256 + 256
            sim = Simulator(device, global_mem_bytes=heap, arena_bytes=256, trace=False)
            install_policy(sim, policy)
            ctx = sim.create_context()
            before = sim.clock.policy
            buf = sim.alloc(ctx, size)
            if policy.mode == ZERO_ON_FREE:
                sim.free(ctx, buf)
            elapsed = sim.clock.policy - before
        elif policy.mode == IN_KERNEL_SHARED:
            if size > device.total_shared_mem:
                raise ValueError(f"{size} bytes exceeds total shared memory "
                                 f"{device.total_shared_mem}")
            grid = device.num_multiprocessors
            per_block = max(1, -(-words_for(size) // grid))
            sim = Simulator(device, global_mem_bytes=1 << 20, arena_bytes=256, trace=False)
            install_policy(sim, policy)
            ctx = sim.create_context()
            a = sim.alloc(ctx, per_block * grid * 4)
            before = sim.clock.policy
            sim.launch(ctx, KernelProgram((CopyGlobalToShared(0, 0, per_block),)),
                       grid_size=grid, args=[a])
            sim.run_until_idle()
            elapsed = sim.clock.policy - before
        else:
            elapsed = 0.0
        records.append(OverheadRecord(policy.mode, size, elapsed))
    return records
