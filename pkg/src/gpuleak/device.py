"""Simulated GPU hardware parameters and the two shipped testbed presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, UnknownPresetError

WORD_BYTES = 4
KB = 1024
MB = 1024 * KB
GB = 1024 * MB


@dataclass(frozen=True)
class DeviceConfig:
    """Hardware parameters of one simulated card.

    ``shared_mem_per_mp`` and ``registers_per_block`` are per-block budgets,
    as reported for the testbed cards. ``spill_isolation`` selects whether
    spilled registers land in a private arena (True) or anywhere in the
    device heap (False). ``leak_stride`` is the byte distance between
    consecutive spill targets.
    """

    name: str
    num_multiprocessors: int
    shared_mem_per_mp: int
    registers_per_block: int
    warp_size: int
    global_mem_size: int
    sm_schedule_order: tuple[int, ...]
    spill_isolation: bool
    leak_stride: int = 32

    def __post_init__(self):
        # accept lists from JSON/YAML loaders
        object.__setattr__(self, "sm_schedule_order", tuple(self.sm_schedule_order))

    @property
    def shared_words_per_mp(self) -> int:
        return self.shared_mem_per_mp // WORD_BYTES

    @property
    def total_shared_mem(self) -> int:
        return self.shared_mem_per_mp * self.num_multiprocessors

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["sm_schedule_order"] = list(self.sm_schedule_order)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DeviceConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown device config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **changes) -> "DeviceConfig":
        return replace(self, **changes)


_PRESETS = {
    "tesla-c2050": DeviceConfig(
        name="tesla-c2050",
        num_multiprocessors=14,
        shared_mem_per_mp=48 * KB,
        registers_per_block=32768,
        warp_size=32,
        global_mem_size=5 * GB,
        # multiprocessor IDs observed for the first 14 blocks on Fermi
        sm_schedule_order=(0, 4, 8, 12, 2, 6, 10, 13, 1, 5, 9, 3, 7, 11),
        spill_isolation=True,
    ),
    "geforce-gt640": DeviceConfig(
        name="geforce-gt640",
        num_multiprocessors=2,
        shared_mem_per_mp=16 * KB,
        registers_per_block=65536,
        warp_size=32,
        global_mem_size=2 * GB,
        sm_schedule_order=(0, 1),
        spill_isolation=False,
    ),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> DeviceConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown device preset {name!r}; choose from {', '.join(preset_names())}"
        ) from None


def validate(config: DeviceConfig) -> list[str]:
    """Return every violated invariant of ``config``; an empty list means valid."""
    problems = []
    if config.num_multiprocessors < 1:
        problems.append("num_multiprocessors must be >= 1")
    if config.warp_size < 1:
        problems.append("warp_size must be >= 1")
    for attr in ("shared_mem_per_mp", "registers_per_block", "global_mem_size"):
        if getattr(config, attr) <= 0:
            problems.append(f"{attr} must be > 0")
    if config.shared_mem_per_mp % WORD_BYTES:
        problems.append("shared_mem_per_mp must be a multiple of 4 bytes")
    if sorted(config.sm_schedule_order) != list(range(max(config.num_multiprocessors, 0))):
        problems.append(
            "sm_schedule_order is not a permutation of 0..num_multiprocessors-1"
        )
    if config.leak_stride <= 0 or config.leak_stride % WORD_BYTES:
        problems.append("leak_stride must be a positive multiple of 4 bytes")
    return problems


def load_device(ref: str | Path) -> DeviceConfig:
    """Resolve ``ref`` as a preset id, or else as a JSON/YAML config file.

    A file may name a ``base`` preset and override individual fields.
    """
    ref_str = str(ref)
    if ref_str in _PRESETS:
        return _PRESETS[ref_str]
    path = Path(ref_str)
    if not path.exists():
        raise UnknownPresetError(
            f"{ref_str!r} is neither a preset ({', '.join(preset_names())}) nor a file"
        )
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: device config must be a mapping")
    base = data.pop("base", None)
    if base is not None:
        config = preset(base).to_dict()
        config.update(data)
        data = config
    config = DeviceConfig.from_dict(data)
    problems = validate(config)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return config


def sm_assignment(grid_size: int, device: DeviceConfig) -> list[int]:
    """Multiprocessor hosting each block of a ``grid_size`` launch.

    The first ``num_multiprocessors`` blocks follow ``sm_schedule_order``;
    later blocks wrap round-robin over the same order.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    order = device.sm_schedule_order
    return [order[b % len(order)] for b in range(grid_size)]
