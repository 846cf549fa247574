class OverlapSimError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(OverlapSimError, ValueError):
    """Invalid scenario, parameter or precondition."""


class SimulationError(OverlapSimError, RuntimeError):
    """Runtime logic error detected while a simulation is running."""


class LivelockError(SimulationError):
    def __init__(self, message: str, entity: str) -> None:
        super().__init__(message)
        self.entity = entity


class OracleMismatchError(OverlapSimError):
    """Simulated grid differs from the serial reference."""


class SweepAborted(OverlapSimError):
    """A sweep point failed; completed points are kept on `partial`."""

    def __init__(self, message: str, cause: OverlapSimError, partial) -> None:
        super().__init__(message)
        self.cause = cause
        self.partial = partial
