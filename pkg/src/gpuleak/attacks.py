"""Attack scenarios against the simulator and the leakage scan used on AES.

Every scenario decides what leaked from the event log, not from values: a
victim word counts as leaked when an attacker-context read or copy touched
it while it still carried the victim's provenance. Values are used only for
``ordered_match``, the check that the attacker's readback reproduces what
the victim wrote, in order.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np

from . import crypto
from .countermeasures import ZeroingPolicy, install_policy
from .device import KB, MB, DeviceConfig
from .kernel_vm import (
    AesEncrypt,
    CopyGlobal,
    CopyGlobalToShared,
    CopySharedToGlobal,
    DumpRegisters,
    KernelProgram,
    ReserveRegisters,
    Sha1Digest,
    WriteGlobal,
    WriteRegisters,
)
from .memory import EXACT_REUSE, RANDOMIZED, Allocation, words_for
from .runtime import Simulator
from .trace import Event, as_array

NONE, KEY_LEAK, PLAINTEXT_LEAK, FULL, PARTIAL = (
    "none", "key_leak", "plaintext_leak", "full", "partial")

SPILL_PATTERN_BASE = 0xDEADBEEF


@dataclass
class LeakReport:
    scenario: str
    leaked_words: int
    leaked_addresses: list[int]
    total_victim_words: int
    recovery_fraction: float
    ordered_match: bool
    classification: str
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class IntegrityReport:
    scenario: str
    runs: int
    digests_checked: int
    violations: int
    spill_hits: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def attacker_observed(events: Iterable[Event], attacker: int, victim: int,
                      space: str) -> np.ndarray:
    """Sorted unique addresses of ``space`` the attacker read while victim-owned."""
    hits = []
    for ev in events:
        if ev.ctx != attacker or ev.kind not in ("copy", "read") or ev.src_space != space:
            continue
        addrs = as_array(ev.src_addrs)
        hits.append(addrs[np.asarray(ev.src_owners) == victim])
    if not hits:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(hits))


def _classify(fraction: float) -> str:
    if fraction >= 1.0:
        return FULL
    return PARTIAL if fraction > 0 else NONE


def _report(scenario: str, leaked: np.ndarray, region: np.ndarray, ordered: bool,
            details: dict[str, Any]) -> LeakReport:
    leaked = np.intersect1d(leaked, region)
    total = int(len(region))
    fraction = len(leaked) / total if total else 0.0
    return LeakReport(scenario, int(len(leaked)), [int(a) for a in leaked], total,
                      fraction, bool(ordered), _classify(fraction), details)


def _new_sim(device: DeviceConfig, policy, **kwargs) -> Simulator:
    sim = Simulator(device, **kwargs)
    install_policy(sim, policy)
    return sim


def _policy_name(policy) -> str:
    if policy is None:
        return "none"
    return policy.mode if isinstance(policy, ZeroingPolicy) else str(policy)


# ------------------------------------------------------------- shared memory

def shared_leak_scenario(device: DeviceConfig, k_iterations: int = 50, *,
                         destroy_victim_first: bool = False,
                         policy: ZeroingPolicy | str | None = None) -> LeakReport:
    """Victim and attacker kernels alternate on the shared banks ``k`` times.

    Both use one block per multiprocessor and a full bank per block, so the
    victim vector spans the whole shared memory of the device.
    """
    if k_iterations < 1:
        raise ValueError("k_iterations must be >= 1")
    sim = _new_sim(device, policy, global_mem_bytes=4 * MB + 2 * device.total_shared_mem,
                   arena_bytes=4 * KB)
    grid = device.num_multiprocessors
    per_block = device.shared_words_per_mp
    n = grid * per_block
    victim, attacker = sim.create_context(), sim.create_context()
    v_g = sim.alloc(victim, n * 4)
    sim.write(victim, v_g, np.arange(n, dtype=np.uint32))
    a_out = sim.alloc(attacker, n * 4)
    load = KernelProgram((CopyGlobalToShared(0, 0, per_block),))
    dump = KernelProgram((CopySharedToGlobal(0, 0, per_block),))
    for _ in range(k_iterations):
        sim.launch(victim, load, grid_size=grid, args=[v_g])
        if destroy_victim_first:
            sim.run_until_idle()
            victim_values = sim.read(victim, v_g)
            sim.destroy_context(victim)
        sim.launch(attacker, dump, grid_size=grid, args=[a_out])
        sim.run_until_idle()
        if destroy_victim_first:
            break
    if not destroy_victim_first:
        victim_values = sim.read(victim, v_g)
    recovered = sim.read(attacker, a_out)
    # block b of both kernels ran on the same multiprocessor, so positions line up
    region = np.arange(sim.shared.space.size, dtype=np.int64)
    leaked = attacker_observed(sim.trace.events, attacker.id, victim.id, "shared")
    report = _report("shared-leak", leaked, region,
                     bool(np.array_equal(recovered, victim_values)),
                     {"device": device.name, "k_iterations": k_iterations,
                      "victim_destroyed_first": destroy_victim_first,
                      "policy": _policy_name(policy),
                      "block_mp": sim.executions[sim.completed[0]].block_mp})
    return report


# ------------------------------------------------------------- global memory

def global_leak_scenario(device: DeviceConfig, d_bytes: int = 64 * KB,
                         attacker_sizes: list[int] | None = None, *,
                         policy: ZeroingPolicy | str | None = None,
                         global_mem_bytes: int | None = None) -> LeakReport:
    """Victim leaves four vectors behind; attacker reallocates and copies them out."""
    if d_bytes <= 0 or d_bytes % 4:
        raise ValueError("d_bytes must be a positive multiple of 4")
    sizes = list(attacker_sizes) if attacker_sizes is not None else [d_bytes] * 4
    if len(sizes) != 4:
        raise ValueError("attacker_sizes needs four entries")
    if global_mem_bytes is None:
        need = 4 * d_bytes + sum(sizes) + 16 * KB
        global_mem_bytes = max(1 * MB, -(-need // (64 * KB)) * 64 * KB)
    sim = _new_sim(device, policy, global_mem_bytes=global_mem_bytes, arena_bytes=4 * KB)
    n = d_bytes // 4

    victim = sim.create_context()
    vs = [sim.alloc(victim, d_bytes) for _ in range(4)]
    sim.write(victim, vs[0], np.arange(n, dtype=np.uint32))
    sim.write(victim, vs[1], (d_bytes + np.arange(n, dtype=np.uint64)).astype(np.uint32))
    copy = KernelProgram((CopyGlobal(2, 0), CopyGlobal(3, 1)))
    sim.launch(victim, copy, args=vs)
    sim.run_until_idle()
    victim_out = np.concatenate([sim.read(victim, vs[2]), sim.read(victim, vs[3])])
    region = np.concatenate([as_array(v.words) for v in vs])
    sim.destroy_context(victim)

    attacker = sim.create_context()
    xs = [sim.alloc(attacker, s) for s in sizes]
    m1 = min(xs[0].length, xs[2].length)
    m2 = min(xs[1].length, xs[3].length)
    sim.launch(attacker, KernelProgram((CopyGlobal(2, 0, m1), CopyGlobal(3, 1, m2))), args=xs)
    sim.run_until_idle()
    readback = np.concatenate([sim.read(attacker, xs[2]), sim.read(attacker, xs[3])])
    leaked = attacker_observed(sim.trace.events, attacker.id, victim.id, "global")
    return _report("global-leak", leaked, region,
                   bool(np.array_equal(readback, victim_out)),
                   {"device": device.name, "d_bytes": d_bytes, "attacker_sizes": sizes,
                    "policy": _policy_name(policy)})


# ---------------------------------------------------------- register spill

def spill_count(device: DeviceConfig, reg_bytes: int) -> int:
    """Registers beyond the physical file when a kernel declares ``reg_bytes`` extra."""
    return reg_bytes // 4


def register_spill_scenario(device: DeviceConfig, reg_bytes: int = 32 * KB,
                            victim_bytes: int = 32 * MB, rounds: int = 2, seed: int = 0, *,
                            policy: ZeroingPolicy | str | None = None,
                            checkpoints: Iterable[int] | None = None,
                            global_mem_bytes: int | None = None) -> LeakReport:
    """A live victim holds a pattern; the attacker dumps over-declared registers.

    The attacker declares the full physical register budget plus
    ``reg_bytes`` more, so exactly ``reg_bytes / 4`` registers spill each
    round. ``details["curve"]`` holds (round, distinct words) at each
    checkpoint.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if reg_bytes <= 0 or reg_bytes % 4 or victim_bytes <= 0 or victim_bytes % 4:
        raise ValueError("reg_bytes and victim_bytes must be positive multiples of 4")
    n_spill = spill_count(device, reg_bytes)
    declared = device.registers_per_block + n_spill
    if global_mem_bytes is None:
        need = victim_bytes + declared * 4
        global_mem_bytes = -(-need // MB) * MB + MB
    sim = _new_sim(device, policy, global_mem_bytes=global_mem_bytes,
                   arena_bytes=max(4 * KB, reg_bytes))
    victim = sim.create_context()
    buf = sim.alloc(victim, victim_bytes)
    sim.launch(victim, KernelProgram((WriteGlobal(0, base=SPILL_PATTERN_BASE),)), args=[buf])
    sim.run_until_idle()

    attacker = sim.create_context()
    out = sim.alloc(attacker, declared * 4)
    program = KernelProgram((ReserveRegisters(declared), DumpRegisters(0)))
    seen = np.zeros(buf.length, dtype=bool)
    decoded_ok = True
    checks = set(checkpoints or ()) | {rounds}
    curve = []
    for r in range(rounds):
        ticket = sim.launch(attacker, program, args=[out], seed=seed + r)
        sim.run_until_idle()
        ex = sim.executions[ticket]
        hit = attacker_observed(ex.events, attacker.id, victim.id, "global")
        hit = hit[(hit >= buf.offset) & (hit < buf.offset + buf.length)]
        seen[hit - buf.offset] = True
        # attacker-side view: decode the spilled part of the dump
        spilled = sim.read(attacker, out, device.registers_per_block, n_spill)
        j = (spilled.astype(np.int64) - SPILL_PATTERN_BASE) % (1 << 32)
        src = ex.spill_map - buf.offset
        inside = (src >= 0) & (src < buf.length)
        if not np.array_equal(j[inside], src[inside]):
            decoded_ok = False
        if r + 1 in checks:
            curve.append([r + 1, int(seen.sum())])
    leaked = np.flatnonzero(seen).astype(np.int64) + buf.offset
    region = np.arange(buf.offset, buf.offset + buf.length, dtype=np.int64)
    gaps = np.diff(leaked) * 4
    report = _report("register-spill", leaked, region, decoded_ok and len(leaked) > 0,
                     {"device": device.name, "reg_bytes": reg_bytes,
                      "victim_bytes": victim_bytes, "rounds": rounds, "seed": seed,
                      "spilled_registers": n_spill, "leaked_bytes": int(len(leaked)) * 4,
                      "min_spacing_bytes": int(gaps.min()) if len(gaps) else None,
                      "policy": _policy_name(policy), "curve": curve})
    return report


# ------------------------------------------------------------- write attack

def write_attack_scenario(device: DeviceConfig, runs: int = 1000, *,
                          hashes: int = 4096, plaintext_bytes: int = 16 * KB,
                          reg_bytes: int = 32 * KB, value: int = 0x41414141,
                          write_through: bool = False, seed: int = 0,
                          policy: ZeroingPolicy | str | None = None,
                          global_mem_bytes: int = 4 * MB) -> IntegrityReport:
    """A hashing victim runs while an attacker writes through spilled registers.

    ``write_through`` is a test hook that lets spilled-register writes reach
    memory, so the digest check can be shown to catch corruption.
    """
    if runs < 1 or hashes < 2:
        raise ValueError("runs must be >= 1 and hashes >= 2")
    sim = _new_sim(device, policy, global_mem_bytes=global_mem_bytes,
                   arena_bytes=max(4 * KB, reg_bytes))
    sim.vm_options.spill_write_through = write_through
    plaintext = crypto.integrity_plaintext(plaintext_bytes)
    pt_words = crypto.bytes_to_words(plaintext)
    expected = crypto.bytes_to_words(crypto.sha1_cached(plaintext))
    declared = device.registers_per_block + spill_count(device, reg_bytes)
    writer = KernelProgram((ReserveRegisters(declared), WriteRegisters(value)))
    half = hashes // 2
    attacker = sim.create_context()
    violations = checked = spill_hits = 0
    for run in range(runs):
        victim = sim.create_context()
        pt = sim.alloc(victim, plaintext_bytes)
        digests = sim.alloc(victim, hashes * 20)
        sim.write(victim, pt, pt_words)
        spans = [pt.words, digests.words]
        tickets = []
        for part in range(2):
            slot, count = part * half, half if part == 0 else hashes - half
            sim.launch(victim, KernelProgram((Sha1Digest(0, plaintext_bytes, 1, count, slot),)),
                       args=[pt, digests])
            tickets.append(sim.launch(attacker, writer, seed=seed + 2 * run + part))
        sim.run_until_idle()
        for t in tickets:
            targets = sim.executions[t].spill_map
            spill_hits += int(sum(((targets >= s.start) & (targets < s.stop)).sum()
                                  for s in spans))
        got = sim.read(victim, digests).reshape(hashes, 5)
        violations += int((got != expected).any(axis=1).sum())
        checked += hashes
        sim.destroy_context(victim)
        sim.trace.events.clear()
    return IntegrityReport("write-attack", runs, checked, violations, spill_hits)


# ------------------------------------------------------------ leakage scan

@dataclass
class ScanResult:
    found: bool
    classification: str
    offset: int | None = None  # absolute word offset of the decisive word
    regions: list[tuple[int, int]] = field(default_factory=list)


def scan_words(words: np.ndarray, m: np.ndarray, key: np.ndarray) -> tuple[str, int | None]:
    """Classify one buffer: first key word or plaintext match, in address order.

    Returns the classification and the index of the decisive word. A word
    equal to ``m[0]`` ends the scan either way; only a full match counts.
    """
    hits = np.flatnonzero(np.isin(words, key) | (words == m[0]))
    if not len(hits):
        return NONE, None
    j = int(hits[0])
    if np.isin(words[j], key):
        return KEY_LEAK, j
    end = j + len(m)
    if end <= len(words) and np.array_equal(words[j:end], m):
        return PLAINTEXT_LEAK, j
    return "mismatch", j


def find_leakage(sim: Simulator, ctx, plaintext: bytes, key_words, length: int | None = None,
                 *, request_bytes: int | None = None) -> ScanResult:
    """Allocate, scan for key words or the plaintext, zero what was scanned.

    With ``request_bytes`` unset every free extent is claimed (largest
    first, until nothing is left); otherwise a single buffer of that size is
    requested from the simulator's allocator.
    """
    length = len(plaintext) if length is None else length
    if length <= 0 or length % 4 or length > len(plaintext):
        raise ValueError("length must be a positive multiple of 4 within the plaintext")
    m = crypto.bytes_to_words(plaintext[:length])
    key = np.asarray(list(key_words), dtype=np.uint32)
    held: list[Allocation] = []
    if request_bytes is None:
        while sim.memory.allocable_words() > 0:
            held.append(sim.alloc(ctx, sim.memory.allocable_words() * 4, mode=EXACT_REUSE))
    else:
        held.append(sim.alloc(ctx, request_bytes))
    held.sort(key=lambda a: a.offset)
    result = ScanResult(False, NONE, regions=[(a.offset, a.length) for a in held])
    try:
        for a in held:
            kind, j = scan_words(sim.read(ctx, a), m, key)
            if kind == NONE:
                continue
            result.offset = a.offset + j
            if kind != "mismatch":
                result.found, result.classification = True, kind
            break
    finally:
        for a in held:
            sim.memset(ctx, a, 0)
            sim.free(ctx, a)
    return result


# ---------------------------------------------------------------- AES case

@dataclass(frozen=True)
class AesCaseParams:
    """Knobs of the AES residue experiment.

    ``global_mem_bytes`` and ``scan_bytes`` set the placement distribution:
    the attacker's single buffer lands uniformly over every aligned position
    where it fits. ``scan_bytes=None`` claims all free memory instead.
    """
    rounds: int = 50
    runs_per_round: int = 100
    seed: int = 0
    allocator_mode: str = RANDOMIZED
    global_mem_bytes: int = 32 * KB
    scan_bytes: int | None = 16 * KB
    plaintext_bytes: int = 4 * KB

    def __post_init__(self):
        if self.rounds < 1 or self.runs_per_round < 1:
            raise ValueError("rounds and runs_per_round must be >= 1")


@dataclass
class AesCaseReport:
    per_round_success: list[float]
    mean: float
    stddev: float
    key_leaks: int
    plaintext_leaks: int
    trials: int
    successes: int
    expected_rate: float | None = None
    ciphertext_ok: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _aes_victim(sim: Simulator, plaintext: bytes, key: crypto.AesKey128) -> np.ndarray:
    ctx = sim.create_context()
    # victim buffers always land deterministically; only the attacker is randomized
    p = sim.alloc(ctx, len(plaintext), mode=EXACT_REUSE)
    rk = sim.alloc(ctx, 44 * 4, mode=EXACT_REUSE)
    c = sim.alloc(ctx, len(plaintext), mode=EXACT_REUSE)
    sim.write(ctx, p, crypto.bytes_to_words(plaintext))
    sim.write(ctx, rk, np.array(key.round_keys, dtype=np.uint32))
    sim.launch(ctx, KernelProgram((AesEncrypt(0, 1, 2),)), args=[p, rk, c])
    sim.run_until_idle()
    out = sim.read(ctx, c)
    sim.destroy_context(ctx)
    return out


def _aes_sim(device: DeviceConfig, params: AesCaseParams, seed: int, policy) -> Simulator:
    return _new_sim(device, policy, global_mem_bytes=params.global_mem_bytes,
                    arena_bytes=4 * KB, seed=seed, allocator_mode=params.allocator_mode,
                    trace=False)


def aes_case_study(device: DeviceConfig, params: AesCaseParams = AesCaseParams(), *,
                   policy: ZeroingPolicy | str | None = None) -> AesCaseReport:
    plaintext = crypto.case_study_plaintext()[:params.plaintext_bytes]
    key = crypto.AesKey128.from_words(crypto.CASE_STUDY_KEY)
    reference = crypto.bytes_to_words(crypto.encrypt_with_schedule(plaintext, key.round_keys))
    seeds = random.Random(params.seed)
    per_round, key_leaks, pt_leaks, ct_ok = [], 0, 0, True
    for _ in range(params.rounds):
        sim = _aes_sim(device, params, seeds.getrandbits(32), policy)
        wins = 0
        for _ in range(params.runs_per_round):
            ct = _aes_victim(sim, plaintext, key)
            ct_ok &= bool(np.array_equal(ct, reference))
            attacker = sim.create_context()
            res = find_leakage(sim, attacker, plaintext, key.key, request_bytes=params.scan_bytes)
            sim.destroy_context(attacker)
            if res.found:
                wins += 1
                key_leaks += res.classification == KEY_LEAK
                pt_leaks += res.classification == PLAINTEXT_LEAK
        per_round.append(wins / params.runs_per_round)
    trials = params.rounds * params.runs_per_round
    expected = None
    if params.allocator_mode == RANDOMIZED and policy is None:
        expected = expected_success_rate(device, params)
    return AesCaseReport(
        per_round_success=per_round,
        mean=statistics.fmean(per_round),
        stddev=statistics.pstdev(per_round),
        key_leaks=key_leaks,
        plaintext_leaks=pt_leaks,
        trials=trials,
        successes=key_leaks + pt_leaks,
        expected_rate=expected,
        ciphertext_ok=ct_ok,
    )


def expected_success_rate(device: DeviceConfig, params: AesCaseParams) -> float:
    """Success probability of one trial, by enumerating every attacker placement.

    Victim placement is deterministic, so the memory image the attacker
    meets is the same every trial; each aligned fitting position is equally
    likely under the randomized allocator.
    """
    plaintext = crypto.case_study_plaintext()[:params.plaintext_bytes]
    key = crypto.AesKey128.from_words(crypto.CASE_STUDY_KEY)
    sim = _aes_sim(device, params, 0, None)
    _aes_victim(sim, plaintext, key)
    m = crypto.bytes_to_words(plaintext)
    kw = np.asarray(key.key, dtype=np.uint32)
    if params.scan_bytes is None:
        probe = sim.create_context()
        return 1.0 if find_leakage(sim, probe, plaintext, key.key).found else 0.0
    n = words_for(params.scan_bytes)
    reserved = sim.memory.reserve_for(n)
    positions = sim.memory.fitting_positions(reserved)
    image = sim.memory.raw_read(0, sim.memory.heap_words)
    wins = sum(scan_words(image[p:p + n], m, kw)[0] in (KEY_LEAK, PLAINTEXT_LEAK)
               for p in positions)
    return wins / len(positions)


def binomial_band(p: float, trials: int, sigmas: float = 3.0) -> tuple[float, float]:
    half = sigmas * math.sqrt(p * (1 - p) / trials)
    return p - half, p + half
