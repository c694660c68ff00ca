import json

import pytest

from gpuleak.device import (
    KB,
    DeviceConfig,
    load_device,
    preset,
    preset_names,
    sm_assignment,
    validate,
)
from gpuleak.errors import ConfigError, UnknownPresetError


def test_presets_listed():
    assert preset_names() == ["geforce-gt640", "tesla-c2050"]


def test_tesla_parameters(tesla):
    assert tesla.num_multiprocessors == 14
    assert tesla.shared_mem_per_mp == 48 * KB
    assert tesla.registers_per_block == 32768
    assert tesla.spill_isolation is True
    assert validate(tesla) == []


def test_kepler_parameters(gt640):
    assert gt640.num_multiprocessors == 2
    assert gt640.shared_mem_per_mp == 16 * KB
    assert gt640.registers_per_block == 65536
    assert gt640.spill_isolation is False
    assert gt640.sm_schedule_order == (0, 1)
    assert validate(gt640) == []


def test_fermi_block_order(tesla):
    assert sm_assignment(14, tesla) == [0, 4, 8, 12, 2, 6, 10, 13, 1, 5, 9, 3, 7, 11]


def test_assignment_wraps(tesla, gt640):
    order = list(tesla.sm_schedule_order)
    assert sm_assignment(20, tesla) == order + order[:6]
    assert sm_assignment(1, gt640) == [0]
    assert sm_assignment(5, gt640) == [0, 1, 0, 1, 0]


def test_assignment_rejects_empty_grid(gt640):
    with pytest.raises(ValueError):
        sm_assignment(0, gt640)


def test_unknown_preset():
    with pytest.raises(UnknownPresetError, match="geforce-gt640"):
        preset("voodoo-2")
    with pytest.raises(KeyError):
        preset("voodoo-2")


def test_validate_reports_every_problem(gt640):
    bad = gt640.with_overrides(warp_size=0, sm_schedule_order=(0, 0), leak_stride=6)
    problems = validate(bad)
    assert "warp_size must be >= 1" in problems
    assert any("permutation" in p for p in problems)
    assert any("leak_stride" in p for p in problems)


def test_dict_round_trip(tesla):
    assert DeviceConfig.from_dict(json.loads(json.dumps(tesla.to_dict()))) == tesla


def test_from_dict_rejects_unknown_keys(gt640):
    data = gt640.to_dict() | {"clock_mhz": 900}
    with pytest.raises(ConfigError, match="clock_mhz"):
        DeviceConfig.from_dict(data)


def test_load_device_file_with_base(tmp_path):
    path = tmp_path / "dev.yaml"
    path.write_text("base: geforce-gt640\nname: tiny\nglobal_mem_size: 1048576\n")
    dev = load_device(path)
    assert dev.name == "tiny"
    assert dev.global_mem_size == 1 << 20
    assert dev.registers_per_block == 65536


def test_load_device_json(tmp_path, tesla):
    path = tmp_path / "dev.json"
    path.write_text(json.dumps(tesla.to_dict()))
    assert load_device(path) == tesla


def test_load_device_invalid_file(tmp_path):
    path = tmp_path / "dev.yaml"
    path.write_text("base: geforce-gt640\nnum_multiprocessors: 3\n")
    with pytest.raises(ConfigError, match="permutation"):
        load_device(path)


def test_load_device_missing():
    with pytest.raises(UnknownPresetError):
        load_device("/nonexistent/device.yaml")
