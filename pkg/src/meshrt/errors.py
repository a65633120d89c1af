"""Exception hierarchy for the simulator.

Validation errors (bad configs, manifests, addresses known bad up front) and
runtime errors (raised mid-simulation) are kept distinct so the CLI can map
them to different exit codes.
"""


class MeshrtError(Exception):
    """Base class for all simulator errors."""


class ConfigError(MeshrtError):
    """Invalid machine or scenario configuration."""


class InvalidAddress(MeshrtError):
    """An address (or some byte of a range) lies outside every valid region."""


class RangeStraddle(MeshrtError):
    """A byte range crosses from one valid region into another."""


class NotInWaitState(MeshrtError):
    """Operation requires cores parked in the syscore wait loop."""


class AlreadyInitialized(MeshrtError):
    """System segments were already loaded onto this machine."""


class NoImageLoaded(MeshrtError):
    """Execution requested before any user image was loaded."""


class DeadlockError(MeshrtError):
    """No core can make progress (e.g. host-call spin with no daemon)."""


class StackOverflow(MeshrtError):
    """Declared stack usage of the active call chain exceeds the stack segment."""


class LayoutError(MeshrtError):
    """Base for image-building failures."""


class LocalOverflow(LayoutError):
    """Local segments exceed per-core memory; carries the overflow byte count."""

    def __init__(self, overflow_bytes: int):
        super().__init__(f"local memory overflow by {overflow_bytes} bytes")
        self.overflow_bytes = overflow_bytes


class DuplicateSymbol(LayoutError):
    pass


class UnknownEntry(LayoutError):
    pass


class MalformedImage(MeshrtError):
    """Image byte stream failed to parse; carries the offending offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DcRegionExhausted(MeshrtError):
    """Loading a dynamic call body would overflow the reserved region."""


class UnknownDynamicFunction(MeshrtError):
    pass


class ReservedNumber(MeshrtError):
    """User host-call registration attempted inside a reserved number range."""


class DuplicateNumber(MeshrtError):
    pass


class UnknownCallNumber(MeshrtError):
    pass


class SpecTooLarge(MeshrtError):
    """Workload does not fit the machine; carries the limiting term."""

    def __init__(self, message: str, limiting_term: str):
        super().__init__(message)
        self.limiting_term = limiting_term


class ScenarioError(MeshrtError):
    """Scenario file invalid or references missing inputs."""
