"""Exception hierarchy shared by all pimsim modules.

Three branches matter for exit-code mapping in the CLI: validation errors
(bad arguments, malformed input, alignment violations), capacity errors
(anything that does not fit a memory or the device pool), and kernel faults
(out-of-range accesses detected while a kernel runs).
"""


class PimError(Exception):
    """Base class for all simulator errors."""


class ValidationError(PimError):
    """Malformed or inconsistent request; nothing was executed."""


class CapacityError(PimError):
    """Request does not fit a memory region or the device pool."""


class MisalignedError(ValidationError):
    """Transfer length is not a multiple of the DMA alignment."""


class UnequalBlocksError(ValidationError):
    """Parallel host transfer with differing per-DPU block lengths."""


class DimMismatchError(ValidationError):
    """Matrix dimensions or element types do not agree."""


class DimError(ValidationError):
    """Non-positive matrix dimensions requested."""


class ParseError(ValidationError):
    """Malformed input file; carries the offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class OverAllocationError(CapacityError):
    """More DPUs requested than the system provides."""


class MramOverflowError(CapacityError):
    """Access beyond the MRAM capacity of a DPU."""


class WramOverflowError(CapacityError):
    """Access beyond the WRAM capacity of a DPU."""


class IramOverflowError(CapacityError):
    """Kernel instruction footprint exceeds the IRAM budget."""


class BlockTooLargeError(CapacityError):
    """Partition blocks do not fit the target memory of one DPU.

    Carries the name of the violated capacity so callers can report
    which memory (MRAM or WRAM) rejected the plan.
    """

    def __init__(self, capacity_name: str, required: int, available: int, detail: str = ""):
        self.capacity_name = capacity_name
        self.required = required
        self.available = available
        msg = (f"{capacity_name} capacity exceeded: block set needs {required} bytes, "
               f"{available} bytes available")
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BusyError(PimError):
    """Host touched an MRAM region declared in-use by a pending launch."""


class KernelFault(PimError):
    """Out-of-range access inside a kernel, with the faulting DPU and offset."""

    def __init__(self, dpu_id: int, offset: int, detail: str = ""):
        self.dpu_id = dpu_id
        self.offset = offset
        msg = f"kernel fault on dpu {dpu_id} at offset {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
