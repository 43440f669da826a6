"""Exception types shared across the package.

The CLI maps ValidationError (and argparse usage errors) to exit code 1
and everything else raised by the library to exit code 2.
"""


class ParconvError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ParconvError):
    """Bad configuration, shapes that do not compose, or invalid input files."""


class ShapeError(ValidationError):
    """Tensor arguments whose dimensions do not match an operation's contract."""


class PartitionError(ValidationError):
    """A network cannot be split into the requested number of columns."""


class DatasetError(ValidationError):
    """Malformed dataset file or dataset/network mismatch."""


class DeadlockError(ParconvError):
    """The fabric detected that blocked workers can never make progress."""

    def __init__(self, message: str, waiting: dict | None = None):
        super().__init__(message)
        self.waiting = waiting or {}


class CapacityError(ParconvError):
    """A worker's accounted resident bytes exceed its device capacity."""

    def __init__(self, worker: int, resident: int, capacity: int):
        self.worker = worker
        self.resident = resident
        self.capacity = capacity
        overshoot = resident - capacity
        super().__init__(
            f"worker {worker}: resident {resident} B exceeds capacity "
            f"{capacity} B (overshoot {overshoot} B)"
        )


class InfeasiblePlanError(ParconvError):
    """A plan cannot run because some worker's footprint exceeds device memory."""

    def __init__(self, worker: int, required: int, capacity: int):
        self.worker = worker
        self.required = required
        self.capacity = capacity
        super().__init__(
            f"plan infeasible: worker {worker} needs {required} B "
            f"but device capacity is {capacity} B"
        )


class CalibrationError(ParconvError):
    """Cost-model calibration cannot proceed (too few or infeasible observations)."""
