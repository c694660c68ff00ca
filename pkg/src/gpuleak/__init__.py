"""Deterministic simulator of GPU memory residue leaks and their fixes."""

from .device import DeviceConfig, load_device, preset, preset_names, sm_assignment
from .errors import KernelFault, SimulatorError
from .runtime import KernelLaunch, Simulator

__version__ = "0.1.0"

__all__ = [
    "DeviceConfig", "KernelFault", "KernelLaunch", "Simulator", "SimulatorError",
    "load_device", "preset", "preset_names", "sm_assignment",
]
