"""Exception hierarchy shared by every simulator layer."""


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimulatorError):
    pass


class UnknownPresetError(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class OutOfMemoryError(SimulatorError):
    pass


class BoundsError(SimulatorError, IndexError):
    pass


class OwnershipError(SimulatorError):
    pass


class DoubleFreeError(SimulatorError):
    pass


class ContextStateError(SimulatorError):
    pass


class LaunchError(SimulatorError):
    pass


class SpillArenaExhausted(SimulatorError):
    pass


class PolicyError(SimulatorError):
    pass


class KernelFault(SimulatorError):
    """Raised when a kernel instruction faults; carries ticket and instruction index."""

    def __init__(self, message, instr_index=None, ticket=None):
        super().__init__(message)
        self.instr_index = instr_index
        self.ticket = ticket

    def __str__(self):
        parts = [super().__str__()]
        if self.ticket is not None:
            parts.append(f"ticket={self.ticket}")
        if self.instr_index is not None:
            parts.append(f"instruction={self.instr_index}")
        return " ".join(parts)
