"""Functional simulation of an UPMEM-style PIM device set.

Models a pool of DPUs, each owning a private MRAM bank and a WRAM
scratchpad, with host<->MRAM parallel transfers, per-DPU MRAM<->WRAM DMA,
and kernel launches over logical tasklets. Every transfer is validated
against the 8-byte DMA alignment rule and appended to a transfer log;
capacities are enforced on every access.

The simulation is functional, not cycle-accurate: kernels are registered
host-side routines that may touch exactly one DPU's memories through a
checked accessor (`DpuView`). WRAM is never writable from the host; the
only write paths into WRAM are DMA from MRAM and kernel stores.
"""

from __future__ import annotations

import csv
import io
from array import array
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, NamedTuple, Protocol, Sequence

from .errors import (
    BusyError,
    IramOverflowError,
    KernelFault,
    MisalignedError,
    MramOverflowError,
    OverAllocationError,
    UnequalBlocksError,
    ValidationError,
    WramOverflowError,
)


@dataclass(frozen=True)
class SystemConfig:
    """Capacities and limits of the simulated device set.

    Defaults describe one full server: 2560 DPUs at 350 MHz, each with
    64 MB MRAM, 64 KB WRAM, 24 KB IRAM, up to 24 tasklets, and a DMA
    engine requiring 8-byte transfer granularity.
    """

    total_dpus: int = 2560
    mram_capacity: int = 64 * 2**20
    wram_capacity: int = 64 * 2**10
    iram_capacity: int = 24 * 2**10
    dma_alignment: int = 8
    max_tasklets: int = 24
    dpu_clock_hz: float = 350e6

    def __post_init__(self):
        for name in ("mram_capacity", "wram_capacity", "iram_capacity", "dma_alignment"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.dma_alignment & (self.dma_alignment - 1):
            raise ValidationError("dma_alignment must be a power of two")
        if self.max_tasklets < 1:
            raise ValidationError("max_tasklets must be >= 1")
        if self.total_dpus < 1:
            raise ValidationError("total_dpus must be >= 1")
        if self.dpu_clock_hz <= 0:
            raise ValidationError("dpu_clock_hz must be positive")


class LaunchMode(Enum):
    SYNC = "sync"
    ASYNC = "async"


class TransferKind(Enum):
    HOST_TO_MRAM = "HOST_TO_MRAM"
    MRAM_TO_HOST = "MRAM_TO_HOST"
    MRAM_TO_WRAM = "MRAM_TO_WRAM"
    WRAM_TO_MRAM = "WRAM_TO_MRAM"


_KIND_BY_INDEX = list(TransferKind)
_INDEX_BY_KIND = {k: i for i, k in enumerate(_KIND_BY_INDEX)}


class TransferRecord(NamedTuple):
    batch_id: int
    kind: TransferKind
    dpu_id: int
    offset: int
    length: int


class TransferLog:
    """Append-only transfer log, stored column-wise to stay compact.

    Benchmark runs log millions of records; parallel int arrays keep that
    at ~40 bytes per record instead of one object each.
    """

    __slots__ = ("_batch", "_kind", "_dpu", "_offset", "_length")

    def __init__(self):
        self._batch = array("q")
        self._kind = array("b")
        self._dpu = array("q")
        self._offset = array("q")
        self._length = array("q")

    def append(self, batch_id: int, kind: TransferKind, dpu_id: int, offset: int, length: int):
        self._batch.append(batch_id)
        self._kind.append(_INDEX_BY_KIND[kind])
        self._dpu.append(dpu_id)
        self._offset.append(offset)
        self._length.append(length)

    def __len__(self) -> int:
        return len(self._batch)

    def __getitem__(self, i: int) -> TransferRecord:
        return TransferRecord(
            self._batch[i], _KIND_BY_INDEX[self._kind[i]], self._dpu[i],
            self._offset[i], self._length[i],
        )

    def __iter__(self) -> Iterator[TransferRecord]:
        for i in range(len(self)):
            yield self[i]

    def records(self, kind: TransferKind | None = None) -> Iterator[TransferRecord]:
        for rec in self:
            if kind is None or rec.kind is kind:
                yield rec

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream)
        writer.writerow(["batch_id", "kind", "dpu_id", "offset", "length"])
        for rec in self:
            writer.writerow([rec.batch_id, rec.kind.value, rec.dpu_id, rec.offset, rec.length])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


class _LazyBuffer:
    """Zero-initialized byte buffer materialized on first write.

    Lets a 2560-DPU system (160 GB of nominal MRAM) exist on a desktop:
    storage grows to the highest written offset only. Callers perform all
    bounds checking; this class assumes in-range accesses.
    """

    __slots__ = ("capacity", "_data")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data = bytearray()

    def read(self, offset: int, length: int) -> bytes:
        end = offset + length
        have = len(self._data)
        if offset >= have:
            return bytes(length)
        if end <= have:
            return bytes(self._data[offset:end])
        return bytes(self._data[offset:have]) + bytes(end - have)

    def write(self, offset: int, data: bytes) -> None:
        end = offset + len(data)
        if end > len(self._data):
            self._data.extend(bytes(end - len(self._data)))
        self._data[offset:end] = data


@dataclass
class DpuState:
    """One simulated DPU: id, private memories, and its tasklet count."""

    id: int
    mram: _LazyBuffer
    wram: _LazyBuffer
    tasklet_count: int

    def peek_mram(self, offset: int, length: int) -> bytes:
        """Debug/test read that bypasses the transfer log."""
        return self.mram.read(offset, length)

    def peek_wram(self, offset: int, length: int) -> bytes:
        """Debug/test read; the host has no write path into WRAM."""
        return self.wram.read(offset, length)


@dataclass(frozen=True)
class DpuSet:
    """An ordered selection of allocated DPUs plus the launch mode."""

    dpu_ids: tuple[int, ...]
    launch_mode: LaunchMode = LaunchMode.SYNC

    def __post_init__(self):
        if len(set(self.dpu_ids)) != len(self.dpu_ids):
            raise ValidationError("dpu_ids must be distinct")

    def __len__(self) -> int:
        return len(self.dpu_ids)


@dataclass(frozen=True)
class KernelRef:
    """A registered kernel: entry point plus its IRAM footprint estimate.

    The entry point is called once per DPU as ``fn(view, args, n_tasklets)``
    and must partition its work into ``n_tasklets`` disjoint row ranges so
    that results do not depend on the tasklet count.
    """

    name: str
    fn: Callable
    iram_bytes: int


class KernelArgsLike(Protocol):
    """Launch arguments must declare every memory region the kernel touches."""

    def mram_regions(self) -> Sequence[tuple[int, int]]: ...

    def wram_regions(self) -> Sequence[tuple[int, int]]: ...


class DpuView:
    """Checked accessor handed to kernels; scoped to a single DPU.

    Every access must fall inside one of the regions declared by the
    launch arguments; anything else raises `KernelFault` with the DPU id
    and offending offset. DMA issued through the view is logged like any
    other transfer.
    """

    __slots__ = ("_system", "_dpu", "_mram_regions", "_wram_regions")

    def __init__(self, system: "PimSystem", dpu: DpuState,
                 mram_regions: Sequence[tuple[int, int]],
                 wram_regions: Sequence[tuple[int, int]]):
        self._system = system
        self._dpu = dpu
        self._mram_regions = tuple(mram_regions)
        self._wram_regions = tuple(wram_regions)

    @property
    def dpu_id(self) -> int:
        return self._dpu.id

    def _check(self, regions, offset: int, length: int, space: str):
        if length < 0 or offset < 0:
            raise KernelFault(self._dpu.id, offset, f"negative {space} range")
        end = offset + length
        for start, rlen in regions:
            if offset >= start and end <= start + rlen:
                return
        raise KernelFault(self._dpu.id, offset,
                          f"{space} access [{offset}, {end}) outside declared blocks")

    def read_mram(self, offset: int, length: int) -> bytes:
        self._check(self._mram_regions, offset, length, "mram")
        return self._dpu.mram.read(offset, length)

    def write_mram(self, offset: int, data: bytes) -> None:
        self._check(self._mram_regions, offset, len(data), "mram")
        self._dpu.mram.write(offset, bytes(data))

    def read_wram(self, offset: int, length: int) -> bytes:
        self._check(self._wram_regions, offset, length, "wram")
        return self._dpu.wram.read(offset, length)

    def write_wram(self, offset: int, data: bytes) -> None:
        self._check(self._wram_regions, offset, len(data), "wram")
        self._dpu.wram.write(offset, bytes(data))

    def dma(self, direction: TransferKind, mram_offset: int, wram_offset: int, length: int) -> None:
        """MRAM<->WRAM DMA on behalf of the kernel; range faults become KernelFault."""
        self._check(self._mram_regions, mram_offset, length, "mram")
        self._check(self._wram_regions, wram_offset, length, "wram")
        try:
            self._system.dpu_dma(self._dpu.id, direction, mram_offset, wram_offset, length)
        except (MramOverflowError, WramOverflowError) as exc:
            raise KernelFault(self._dpu.id, mram_offset, str(exc)) from exc


class LaunchHandle:
    """Completion handle for a kernel launch; `wait()` runs and settles it."""

    def __init__(self, system: "PimSystem", dpu_set: DpuSet, kernel: KernelRef,
                 args_by_dpu: dict[int, KernelArgsLike]):
        self._system = system
        self._set = dpu_set
        self._kernel = kernel
        self._args_by_dpu = args_by_dpu
        self._done = False

    @property
    def done(self) -> bool:
        return self._done

    def wait(self) -> None:
        if self._done:
            return
        try:
            for dpu_id in self._set.dpu_ids:
                dpu = self._system.dpus[dpu_id]
                args = self._args_by_dpu[dpu_id]
                view = DpuView(self._system, dpu,
                               args.mram_regions(), args.wram_regions())
                self._kernel.fn(view, args, dpu.tasklet_count)
        finally:
            self._done = True
            self._system._release_launch(self)


@dataclass
class PimSystem:
    """An allocated set of DPUs plus the transfer log and busy-region tracking."""

    config: SystemConfig
    dpus: list[DpuState]
    log: TransferLog = field(default_factory=TransferLog)
    alloc_events: list[int] = field(default_factory=list)
    _next_batch: int = 0
    _pending: list[LaunchHandle] = field(default_factory=list)

    # -- helpers ---------------------------------------------------------

    def full_set(self, mode: LaunchMode = LaunchMode.SYNC) -> DpuSet:
        return DpuSet(tuple(d.id for d in self.dpus), mode)

    def subset(self, n: int, mode: LaunchMode = LaunchMode.SYNC) -> DpuSet:
        if n < 1 or n > len(self.dpus):
            raise ValidationError(f"subset of {n} DPUs not available from {len(self.dpus)}")
        return DpuSet(tuple(range(n)), mode)

    def _new_batch(self) -> int:
        self._next_batch += 1
        return self._next_batch

    def _dpu(self, dpu_id: int) -> DpuState:
        if not (0 <= dpu_id < len(self.dpus)):
            raise ValidationError(f"dpu {dpu_id} not allocated")
        return self.dpus[dpu_id]

    def _check_not_busy(self, dpu_id: int, offset: int, length: int):
        for handle in self._pending:
            if dpu_id not in handle._set.dpu_ids:
                continue
            for start, rlen in handle._args_by_dpu[dpu_id].mram_regions():
                if offset < start + rlen and start < offset + length:
                    raise BusyError(
                        f"mram [{offset}, {offset + length}) of dpu {dpu_id} is in use "
                        f"by a pending launch of '{handle._kernel.name}'")

    def _release_launch(self, handle: LaunchHandle):
        if handle in self._pending:
            self._pending.remove(handle)

    # -- host <-> MRAM ----------------------------------------------------

    def push_to_mram(self, dpu_set: DpuSet, blocks: Iterable[tuple[int, int, bytes]]) -> int:
        """Parallel host->MRAM write: one equal-length block per DPU.

        Each entry is ``(dpu_id, offset, data)``. The whole batch is
        validated before any byte is written, so a rejected batch leaves
        no trace in the log or in memory.
        """
        blocks = list(blocks)
        align = self.config.dma_alignment
        ids = set(dpu_set.dpu_ids)
        for dpu_id, offset, data in blocks:
            if dpu_id not in ids:
                raise ValidationError(f"dpu {dpu_id} not in the target set")
            self._dpu(dpu_id)
            if len(data) % align != 0:
                raise MisalignedError(
                    f"transfer length {len(data)} is not a multiple of {align}")
        lengths = {len(data) for _, _, data in blocks}
        if len(lengths) > 1:
            raise UnequalBlocksError(
                f"parallel transfer blocks must be equal-length, got {sorted(lengths)}")
        for dpu_id, offset, data in blocks:
            if offset < 0 or offset + len(data) > self.config.mram_capacity:
                raise MramOverflowError(
                    f"mram write [{offset}, {offset + len(data)}) exceeds capacity "
                    f"{self.config.mram_capacity}")
            self._check_not_busy(dpu_id, offset, len(data))
        batch = self._new_batch()
        for dpu_id, offset, data in blocks:
            self.dpus[dpu_id].mram.write(offset, bytes(data))
            self.log.append(batch, TransferKind.HOST_TO_MRAM, dpu_id, offset, len(data))
        return batch

    def pull_from_mram(self, dpu_set: DpuSet,
                       ranges: Iterable[tuple[int, int, int]]) -> list[bytes]:
        """Parallel MRAM->host read, symmetric to `push_to_mram`.

        Each entry is ``(dpu_id, offset, length)``; returns blocks in
        request order.
        """
        ranges = list(ranges)
        align = self.config.dma_alignment
        ids = set(dpu_set.dpu_ids)
        for dpu_id, offset, length in ranges:
            if dpu_id not in ids:
                raise ValidationError(f"dpu {dpu_id} not in the target set")
            self._dpu(dpu_id)
            if length % align != 0:
                raise MisalignedError(
                    f"transfer length {length} is not a multiple of {align}")
        lengths = {length for _, _, length in ranges}
        if len(lengths) > 1:
            raise UnequalBlocksError(
                f"parallel transfer blocks must be equal-length, got {sorted(lengths)}")
        for dpu_id, offset, length in ranges:
            if offset < 0 or offset + length > self.config.mram_capacity:
                raise MramOverflowError(
                    f"mram read [{offset}, {offset + length}) exceeds capacity "
                    f"{self.config.mram_capacity}")
            self._check_not_busy(dpu_id, offset, length)
        batch = self._new_batch()
        out = []
        for dpu_id, offset, length in ranges:
            out.append(self.dpus[dpu_id].mram.read(offset, length))
            self.log.append(batch, TransferKind.MRAM_TO_HOST, dpu_id, offset, length)
        return out

    # -- MRAM <-> WRAM -----------------------------------------------------

    def dpu_dma(self, dpu_id: int, direction: TransferKind,
                mram_offset: int, wram_offset: int, length: int) -> None:
        """Move bytes between one DPU's MRAM and WRAM through its DMA engine."""
        if direction not in (TransferKind.MRAM_TO_WRAM, TransferKind.WRAM_TO_MRAM):
            raise ValidationError(f"{direction} is not an MRAM<->WRAM direction")
        dpu = self._dpu(dpu_id)
        if length % self.config.dma_alignment != 0:
            raise MisalignedError(
                f"transfer length {length} is not a multiple of {self.config.dma_alignment}")
        if mram_offset < 0 or mram_offset + length > self.config.mram_capacity:
            raise MramOverflowError(
                f"mram range [{mram_offset}, {mram_offset + length}) exceeds capacity "
                f"{self.config.mram_capacity}")
        if wram_offset < 0 or wram_offset + length > self.config.wram_capacity:
            raise WramOverflowError(
                f"wram range [{wram_offset}, {wram_offset + length}) exceeds capacity "
                f"{self.config.wram_capacity}")
        self._check_not_busy(dpu_id, mram_offset, length)
        if direction is TransferKind.MRAM_TO_WRAM:
            dpu.wram.write(wram_offset, dpu.mram.read(mram_offset, length))
        else:
            dpu.mram.write(mram_offset, dpu.wram.read(wram_offset, length))
        self.log.append(self._new_batch(), direction, dpu_id, mram_offset, length)

    # -- kernel launch -----------------------------------------------------

    def launch(self, dpu_set: DpuSet, kernel: KernelRef,
               args, mode: LaunchMode | None = None) -> LaunchHandle:
        """Run a registered kernel over every DPU in the set.

        ``args`` is either one `KernelArgs` shared by all DPUs or a
        mapping ``dpu_id -> KernelArgs``. SYNC launches complete before
        returning; ASYNC launches return a handle whose declared MRAM
        regions stay off-limits to the host until `wait()`.
        """
        if not isinstance(kernel, KernelRef):
            raise ValidationError("kernel must be a registered KernelRef")
        if kernel.iram_bytes > self.config.iram_capacity:
            raise IramOverflowError(
                f"kernel '{kernel.name}' needs {kernel.iram_bytes} B of IRAM, "
                f"capacity is {self.config.iram_capacity} B")
        mode = mode or dpu_set.launch_mode
        if isinstance(args, dict):
            args_by_dpu = dict(args)
        else:
            args_by_dpu = {dpu_id: args for dpu_id in dpu_set.dpu_ids}
        for dpu_id in dpu_set.dpu_ids:
            if dpu_id not in args_by_dpu:
                raise ValidationError(f"no kernel args for dpu {dpu_id}")
            self._dpu(dpu_id)
            for start, length in args_by_dpu[dpu_id].mram_regions():
                self._check_not_busy(dpu_id, start, length)
        handle = LaunchHandle(self, dpu_set, kernel, args_by_dpu)
        if mode is LaunchMode.SYNC:
            handle.wait()
        else:
            self._pending.append(handle)
        return handle


def allocate_dpus(n: int, config: SystemConfig | None = None, tasklets: int = 16) -> PimSystem:
    """Allocate ``n`` zero-initialized DPUs from a system of `config.total_dpus`.

    Allocation happens once per experiment and is recorded for cost
    accounting. Raises `OverAllocationError` when the pool is smaller
    than the request.
    """
    config = config or SystemConfig()
    if n < 1:
        raise ValidationError("must allocate at least one DPU")
    if n > config.total_dpus:
        raise OverAllocationError(
            f"requested {n} DPUs, system has {config.total_dpus}")
    if not (1 <= tasklets <= config.max_tasklets):
        raise ValidationError(
            f"tasklets must be in [1, {config.max_tasklets}], got {tasklets}")
    dpus = [
        DpuState(i, _LazyBuffer(config.mram_capacity), _LazyBuffer(config.wram_capacity),
                 tasklets)
        for i in range(n)
    ]
    system = PimSystem(config=config, dpus=dpus)
    system.alloc_events.append(n)
    return system
