"""Schedule scripts: a declarative list of context actions run on one simulator.

Example (YAML)::

    device: geforce-gt640
    seed: 3
    steps:
      - {context: a, action: create}
      - {context: a, action: alloc, buffer: v, bytes: 1024}
      - {context: a, action: write, buffer: v, pattern: {base: 7, step: 1}}
      - {context: a, action: destroy}
      - {context: b, action: create}
      - {context: b, action: alloc, buffer: w, bytes: 1024}
      - {context: b, action: read, buffer: w}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .countermeasures import install_policy
from .device import DeviceConfig, load_device
from .errors import ConfigError
from .kernel_vm import KernelProgram
from .memory import EXACT_REUSE
from .runtime import Simulator

ACTIONS = ("create", "alloc", "write", "launch", "run", "read", "free", "destroy")


@dataclass
class Schedule:
    device: str | None = None
    seed: int = 0
    policy: str | None = None
    allocator_mode: str = EXACT_REUSE
    global_mem_bytes: int | None = 1 << 20
    steps: list[dict[str, Any]] = field(default_factory=list)


def load_schedule(path: str | Path) -> Schedule:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict) or not isinstance(data.get("steps"), list):
        raise ConfigError(f"{path}: a schedule needs a 'steps' list")
    unknown = set(data) - set(Schedule.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{path}: unknown schedule keys {sorted(unknown)}")
    for i, step in enumerate(data["steps"]):
        if not isinstance(step, dict) or step.get("action") not in ACTIONS:
            raise ConfigError(f"{path}: step {i} needs an action from {ACTIONS}")
        if step["action"] != "run" and "context" not in step:
            raise ConfigError(f"{path}: step {i} needs a context")
    return Schedule(**data)


@dataclass
class ScheduleRun:
    sim: Simulator
    contexts: dict[str, int]
    buffers: dict[str, Any]
    reads: dict[str, list[int]]
    tickets: list[int]

    def summary(self) -> dict[str, Any]:
        """Cross-context observations plus everything read back."""
        names = {cid: name for name, cid in self.contexts.items()}
        observed: dict[tuple[int, int], set[int]] = {}
        for ev in self.sim.trace.events:
            if ev.kind not in ("read", "copy") or ev.src_owners is None:
                continue
            owners = np.asarray(ev.src_owners)
            addrs = (np.arange(ev.src_addrs.start, ev.src_addrs.stop)
                     if isinstance(ev.src_addrs, range) else np.asarray(ev.src_addrs))
            for owner in np.unique(owners):
                if owner and owner != ev.ctx:
                    key = (ev.ctx, int(owner))
                    observed.setdefault(key, set()).update(
                        f"{ev.src_space}:{a}" for a in addrs[owners == owner])
        cross = [{"reader": names.get(r, str(r)), "owner": names.get(o, str(o)),
                  "words": len(words)}
                 for (r, o), words in sorted(observed.items())]
        return {
            "contexts": dict(sorted(self.contexts.items())),
            "tickets": self.tickets,
            "reads": dict(sorted(self.reads.items())),
            "cross_context_reads": cross,
            "clock": {"baseline": self.sim.clock.baseline, "policy": self.sim.clock.policy},
        }


def run_schedule(schedule: Schedule, device: DeviceConfig | None = None) -> ScheduleRun:
    if device is None:
        device = load_device(schedule.device or "geforce-gt640")
    sim = Simulator(device, global_mem_bytes=schedule.global_mem_bytes,
                    seed=schedule.seed, allocator_mode=schedule.allocator_mode,
                    arena_bytes=64 * 1024)
    if schedule.policy and schedule.policy != "none":
        install_policy(sim, schedule.policy)
    run = ScheduleRun(sim, {}, {}, {}, [])

    def ctx_of(step):
        try:
            return run.contexts[step["context"]]
        except KeyError:
            raise ConfigError(f"context {step['context']!r} was never created") from None

    def buf_of(name):
        try:
            return run.buffers[name]
        except KeyError:
            raise ConfigError(f"buffer {name!r} was never allocated") from None

    for step in schedule.steps:
        action = step["action"]
        if action == "create":
            run.contexts[step["context"]] = sim.create_context().id
        elif action == "alloc":
            run.buffers[step["buffer"]] = sim.alloc(ctx_of(step), int(step["bytes"]),
                                                    mode=step.get("mode"))
        elif action == "write":
            buf = buf_of(step["buffer"])
            if "values" in step:
                values = np.asarray(step["values"], dtype=np.uint64).astype(np.uint32)
            else:
                pat = step.get("pattern", {})
                j = np.arange(buf.length, dtype=np.uint64)
                values = ((pat.get("base", 0) + pat.get("step", 1) * j)
                          & 0xFFFFFFFF).astype(np.uint32)
            sim.write(ctx_of(step), buf, values, offset=int(step.get("offset", 0)))
        elif action == "launch":
            program = KernelProgram.from_list(step.get("program", []),
                                              int(step.get("declared_registers", 0)))
            args = [buf_of(a) if isinstance(a, str) else a for a in step.get("args", [])]
            run.tickets.append(sim.launch(ctx_of(step), program,
                                          grid_size=int(step.get("grid", 1)),
                                          block_size=step.get("block"),
                                          args=args, seed=step.get("seed")))
        elif action == "run":
            sim.run_until_idle()
        elif action == "read":
            label = step.get("label", f"{step['context']}.{step['buffer']}")
            run.reads[label] = [int(v) for v in sim.read(ctx_of(step), buf_of(step["buffer"]))]
        elif action == "free":
            sim.free(ctx_of(step), buf_of(step["buffer"]))
        elif action == "destroy":
            if sim.queue:
                sim.run_until_idle()
            sim.destroy_context(ctx_of(step))
    sim.run_until_idle()
    return run
