"""Command-line front end.

Reports are JSON (sorted keys, so a replay with the same flags is
byte-identical); curves and overhead sweeps are CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Any

from . import attacks, countermeasures
from .device import load_device, preset, preset_names
from .errors import ConfigError, KernelFault, SimulatorError
from .memory import ALLOC_MODES, RANDOMIZED
from .schedule import load_schedule, run_schedule

SCHEMA_VERSION = 1
DEVICE_ENV = "GPULEAK_DEVICE"
DEFAULT_DEVICE = "geforce-gt640"
SCENARIOS = ("shared-leak", "global-leak", "register-spill", "write-attack")


def _size(text: str) -> int:
    try:
        sizes = countermeasures.parse_sizes(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if len(sizes) != 1:
        raise argparse.ArgumentTypeError(f"expected a single size, got {text!r}")
    return sizes[0]


def _sizes(text: str) -> list[int]:
    try:
        sizes = countermeasures.parse_sizes(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not sizes:
        raise argparse.ArgumentTypeError("no sizes given")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", default=None,
                        help=f"preset id or config file (default: ${DEVICE_ENV} or {DEFAULT_DEVICE})")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--policy", choices=countermeasures.POLICY_MODES, default="none")
    common.add_argument("--output", "-o", default=None, help="write to this file instead of stdout")

    parser = argparse.ArgumentParser(prog="gpuleak",
                                     description="GPU memory residue leak simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    rs = sub.add_parser("run-scenario", parents=[common], help="run one attack scenario")
    rs.add_argument("scenario", choices=SCENARIOS)
    rs.add_argument("--k", type=int, default=50, help="shared-leak iterations")
    rs.add_argument("--destroy-first", action="store_true",
                    help="shared-leak: destroy the victim before the attacker reads")
    rs.add_argument("--d-bytes", type=_size, default=64 * 1024)
    rs.add_argument("--attacker-sizes", type=_sizes, default=None,
                    help="global-leak: four comma-separated sizes")
    rs.add_argument("--reg-bytes", type=_size, default=32 * 1024)
    rs.add_argument("--victim-bytes", type=_size, default=32 * 1024 * 1024)
    rs.add_argument("--rounds", type=int, default=2)
    rs.add_argument("--checkpoints", type=_sizes, default=None,
                    help="register-spill rounds to sample, e.g. 1000:10000:1000")
    rs.add_argument("--curve-csv", default=None, help="register-spill: write (round,distinct)")
    rs.add_argument("--runs", type=int, default=1000, help="write-attack runs")
    rs.add_argument("--write-through", action="store_true",
                    help="write-attack test hook: let spilled writes reach memory")

    sched = sub.add_parser("run-schedule", parents=[common], help="run a schedule script")
    sched.add_argument("file")

    aes = sub.add_parser("aes-case", parents=[common], help="AES residue experiment")
    aes.add_argument("--rounds", type=int, default=50)
    aes.add_argument("--runs-per-round", type=int, default=100)
    aes.add_argument("--allocator-mode", choices=ALLOC_MODES, default=RANDOMIZED)
    aes.add_argument("--heap-bytes", type=_size, default=32 * 1024)
    aes.add_argument("--scan-bytes", default="16KB",
                     help="attacker buffer size, or 'all' to claim every free extent")

    mo = sub.add_parser("measure-overhead", parents=[common], help="zeroing cost sweep (CSV)")
    mo.add_argument("--sizes", type=_sizes, default=_sizes("16MB:512MB:16MB"))

    dm = sub.add_parser("dump-memory", parents=[common],
                        help="run a schedule and dump raw memory afterwards")
    dm.add_argument("file")
    dm.add_argument("--space", choices=("global", "shared"), default="global")
    dm.add_argument("--offset", type=int, default=0, help="first word")
    dm.add_argument("--count", type=int, default=64, help="number of words")
    dm.add_argument("--format", choices=("hex", "raw"), default="hex")

    ld = sub.add_parser("list-devices", parents=[common], help="show the presets")
    ld.add_argument("--json", action="store_true")
    return parser


def _device(args):
    return load_device(args.device or os.environ.get(DEVICE_ENV) or DEFAULT_DEVICE)


def _policy(args):
    return None if args.policy == "none" else args.policy


def _envelope(command: str, args, device, result: dict[str, Any]) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "device": device.name,
        "seed": args.seed,
        "policy": args.policy,
        "result": result,
    }


def _emit(text: str, args) -> None:
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_json(doc: dict[str, Any], args) -> None:
    _emit(json.dumps(doc, sort_keys=True, indent=2) + "\n", args)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_run_scenario(args, parser) -> int:
    device, policy = _device(args), _policy(args)
    seed = args.seed = args.seed if args.seed is not None else 0
    if args.scenario == "shared-leak":
        result = attacks.shared_leak_scenario(device, args.k,
                                              destroy_victim_first=args.destroy_first,
                                              policy=policy)
    elif args.scenario == "global-leak":
        if args.attacker_sizes is not None and len(args.attacker_sizes) != 4:
            parser.error("--attacker-sizes needs four sizes")
        result = attacks.global_leak_scenario(device, args.d_bytes, args.attacker_sizes,
                                              policy=policy)
    elif args.scenario == "register-spill":
        result = attacks.register_spill_scenario(device, args.reg_bytes, args.victim_bytes,
                                                 args.rounds, seed, policy=policy,
                                                 checkpoints=args.checkpoints)
        if args.curve_csv:
            Path(args.curve_csv).write_text(
                _csv(("round", "distinct_leaked"), result.details["curve"]), encoding="utf-8")
    else:
        result = attacks.write_attack_scenario(device, args.runs, seed=seed, policy=policy,
                                               write_through=args.write_through)
    _emit_json(_envelope(args.scenario, args, device, result.to_dict()), args)
    return 0


def cmd_run_schedule(args, parser) -> int:
    schedule = load_schedule(args.file)
    if args.seed is not None:
        schedule.seed = args.seed
    if args.policy != "none":
        schedule.policy = args.policy
    device = load_device(args.device or schedule.device or os.environ.get(DEVICE_ENV)
                         or DEFAULT_DEVICE)
    run = run_schedule(schedule, device)
    args.seed = schedule.seed
    _emit_json(_envelope("run-schedule", args, device, run.summary()), args)
    return 0


def cmd_aes_case(args, parser) -> int:
    if args.allocator_mode == RANDOMIZED and args.seed is None:
        parser.error("--seed is required with the randomized allocator")
    scan = None if args.scan_bytes == "all" else _size(args.scan_bytes)
    params = attacks.AesCaseParams(rounds=args.rounds, runs_per_round=args.runs_per_round,
                                   seed=args.seed or 0, allocator_mode=args.allocator_mode,
                                   global_mem_bytes=args.heap_bytes, scan_bytes=scan)
    device = _device(args)
    report = attacks.aes_case_study(device, params, policy=_policy(args))
    _emit_json(_envelope("aes-case", args, device, report.to_dict()), args)
    return 0


def cmd_measure_overhead(args, parser) -> int:
    if args.policy == "none":
        parser.error("measure-overhead needs --policy")
    device = _device(args)
    records = countermeasures.measure_overhead(args.policy, args.sizes, device)
    _emit(_csv(("size", "elapsed"), [(r.buffer_bytes, repr(r.elapsed)) for r in records]), args)
    return 0


def cmd_dump_memory(args, parser) -> int:
    schedule = load_schedule(args.file)
    if args.seed is not None:
        schedule.seed = args.seed
    device = load_device(args.device or schedule.device or os.environ.get(DEVICE_ENV)
                         or DEFAULT_DEVICE)
    run = run_schedule(schedule, device)
    space = run.sim.memory.store if args.space == "global" else run.sim.shared.space
    words = space.peek(range(args.offset, args.offset + args.count))
    if args.format == "raw":
        data = words.astype("<u4").tobytes()
        if args.output:
            Path(args.output).write_bytes(data)
        else:
            sys.stdout.buffer.write(data)
        return 0
    lines = []
    for i in range(0, len(words), 8):
        chunk = " ".join(f"{int(w):08x}" for w in words[i:i + 8])
        lines.append(f"{args.offset + i:08x}: {chunk}")
    _emit("\n".join(lines) + "\n", args)
    return 0


def cmd_list_devices(args, parser) -> int:
    devices = [preset(n) for n in preset_names()]
    if args.json:
        _emit_json({"schema_version": SCHEMA_VERSION, "command": "list-devices",
                    "devices": [d.to_dict() for d in devices]}, args)
        return 0
    rows = [f"{d.name:15s} mps={d.num_multiprocessors:<3d} shared={d.shared_mem_per_mp // 1024}KB "
            f"regs={d.registers_per_block} spill_isolation={str(d.spill_isolation).lower()}"
            for d in devices]
    _emit("\n".join(rows) + "\n", args)
    return 0


COMMANDS = {
    "run-scenario": cmd_run_scenario,
    "run-schedule": cmd_run_schedule,
    "aes-case": cmd_aes_case,
    "measure-overhead": cmd_measure_overhead,
    "dump-memory": cmd_dump_memory,
    "list-devices": cmd_list_devices,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except ConfigError as exc:
        print(f"gpuleak: error: {exc}", file=sys.stderr)
        return 2
    except KernelFault as exc:
        print(f"gpuleak: kernel fault: {exc}", file=sys.stderr)
        return 1
    except (SimulatorError, ValueError, OSError) as exc:
        print(f"gpuleak: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
