"""The simulated core array: per-core state machines and the copy cost model.

Time is continuous microseconds.  Copies are charged

    elapsed = copy_setup_latency + bytes / bandwidth

with the off-chip (host link) or on-chip (NoC) bandwidth as appropriate.  Link
contention is ignored: copies scheduled in the same round proceed in parallel
at full bandwidth and compose by maximum, while serial sequences compose by
sum.  The simulator itself is single-threaded; the concurrency being modeled
is virtual, expressed through deterministic row-major stepping of cores.
"""

import enum
import hashlib
from dataclasses import dataclass, field

from . import hostcall as hc
from .dyncall import DcCoreState
from .errors import ConfigError, InvalidAddress, NotInWaitState
from .memspace import CoreLocal, DeviceAddress, MemoryMap, SharedGlobal


@dataclass
class MeshConfig:
    """Machine geometry plus every cost constant the simulation uses."""

    rows: int = 4
    cols: int = 4
    local_mem_bytes: int = 32 * 1024
    shared_base: int = 0x8E000000
    shared_size: int = 32 * 1024 * 1024
    row_base: int = 1
    col_base: int = 0
    offchip_bandwidth: float = 100.0  # bytes per microsecond
    onchip_bandwidth: float = 1000.0
    copy_setup_latency: float = 10.0  # microseconds per copy operation
    hostcall_roundtrip: float = 41.0
    globalmem_fetch_penalty: float = 15.0  # compute multiplier for global-resident code
    dc_indirection_latency: float = 0.01

    def __post_init__(self):
        if self.rows * self.cols < 1:
            raise ConfigError("mesh needs at least one core")
        if not (self.onchip_bandwidth >= self.offchip_bandwidth > 0):
            raise ConfigError("bandwidths must satisfy onchip >= offchip > 0")
        if self.globalmem_fetch_penalty < 1:
            raise ConfigError("globalmem_fetch_penalty must be >= 1")

    @property
    def core_count(self) -> int:
        return self.rows * self.cols

    def offchip_elapsed(self, nbytes: int) -> float:
        return self.copy_setup_latency + nbytes / self.offchip_bandwidth

    def onchip_elapsed(self, nbytes: int) -> float:
        return self.copy_setup_latency + nbytes / self.onchip_bandwidth


def mesh_shape(n: int) -> tuple[int, int]:
    """Most-square rows x cols factorization for an n-core machine."""
    r = int(n**0.5)
    while n % r:
        r -= 1
    return r, n // r


class CoreState(enum.Enum):
    OFF = 0
    SYSCORE_WAIT = 1
    RUNNING = 2
    HOSTCALL_SPIN = 3


HOSTCALL_REQ_BIT = 0x80000000
_RUNSTATE_LOW = {
    CoreState.OFF: 0,
    CoreState.SYSCORE_WAIT: 1,
    CoreState.RUNNING: 2,
    CoreState.HOSTCALL_SPIN: 2,  # spinning core is still inside the kernel
}


@dataclass
class CoreLedger:
    """Per-core cost accounting for one execution episode."""

    compute_us: float = 0.0
    bytes_read: int = 0
    bytes_written: int = 0
    onchip_copies: int = 0
    onchip_bytes: int = 0
    dc_copies: int = 0
    dc_bytes: int = 0
    dc_indirections: int = 0
    hostcalls: int = 0
    hostcall_wait_us: float = 0.0

    def moved_bytes(self) -> int:
        return self.bytes_read + self.bytes_written + self.onchip_bytes + self.dc_bytes


@dataclass
class Core:
    """One mesh node; row/col are mesh coordinates (0-based, row-major)."""

    row: int
    col: int
    state: CoreState = CoreState.OFF
    clock: float = 0.0
    mailbox: hc.Mailbox = field(default_factory=hc.Mailbox)
    dc: DcCoreState = field(default_factory=DcCoreState)
    ledger: CoreLedger = field(default_factory=CoreLedger)
    interp: object = None  # kernel_vm.InterpState while executing
    barrier_group: int | None = None
    last_return: int = 0

    @property
    def runstate(self) -> int:
        """32-bit run-state register; top bit signals a host-call request."""
        value = _RUNSTATE_LOW[self.state]
        if self.state is CoreState.HOSTCALL_SPIN:
            value |= HOSTCALL_REQ_BIT
        return value

    def enter_wait(self) -> None:
        if self.state is not CoreState.OFF and self.state is not CoreState.RUNNING:
            raise NotInWaitState(f"core ({self.row},{self.col}) cannot park from {self.state.name}")
        self.state = CoreState.SYSCORE_WAIT
        self.interp = None
        self.barrier_group = None

    def begin_hostcall(self, number: int, args: tuple[int, int, int, int], stack_ptr: int) -> None:
        if self.state is not CoreState.RUNNING:
            raise NotInWaitState(f"host call from core in {self.state.name}")
        self.mailbox.fill(number, args, stack_ptr)
        self.state = CoreState.HOSTCALL_SPIN

    def finish_hostcall(self, wait_us: float) -> None:
        self.clock += wait_us
        self.ledger.hostcall_wait_us += wait_us
        self.state = CoreState.RUNNING


@dataclass
class CopyReport:
    """Measurements for a copy operation or a whole load schedule."""

    bytes_moved: int = 0
    offchip_copies: int = 0
    onchip_copies: int = 0
    elapsed: float = 0.0
    rounds: int = 0


class Machine:
    """Whole simulated platform: memory map, core array, host-side services."""

    def __init__(self, config: MeshConfig):
        self.config = config
        self.memory = MemoryMap(
            config.rows,
            config.cols,
            local_mem_bytes=config.local_mem_bytes,
            shared_base=config.shared_base,
            shared_size=config.shared_size,
            row_base=config.row_base,
            col_base=config.col_base,
        )
        self.cores = {
            (r, c): Core(r, c) for r in range(config.rows) for c in range(config.cols)
        }
        self.call_vector = hc.CallVector()
        hc.install_builtins(self.call_vector)
        self.daemon: hc.HostDaemon | None = hc.HostDaemon(self.call_vector)
        self.hostfs = hc.HostFs()
        self.print_log = hc.PrintLog()
        self.shared_alloc = hc.SharedAllocator(config.shared_base, config.shared_size)
        self.initialized = False
        self.user_loaded = False
        self.image = None  # layout.ProgramImage once loaded
        self.last_argv: DeviceAddress | None = None
        self.barriers: dict[int, set[tuple[int, int]]] = {}
        self.episode_bytes_moved = 0
        self.episode_copy = CopyReport()

    # -- core access ----------------------------------------------------

    def cores_rowmajor(self) -> list[Core]:
        return [self.cores[(r, c)] for r in range(self.config.rows) for c in range(self.config.cols)]

    def core_index(self, core: Core) -> int:
        return core.row * self.config.cols + core.col

    def core_by_index(self, index: int) -> Core:
        return self.cores[(index // self.config.cols, index % self.config.cols)]

    # -- copy operations --------------------------------------------------

    def offchip_copy(self, dst: DeviceAddress, data: bytes) -> CopyReport:
        """Host-link copy to any valid destination range."""
        try:
            self.memory.write_bytes(dst, data)
        except Exception as exc:
            raise InvalidAddress(str(exc)) from None
        return CopyReport(
            bytes_moved=len(data),
            offchip_copies=1,
            elapsed=self.config.offchip_elapsed(len(data)),
        )

    def onchip_copy(self, src: DeviceAddress, dst: DeviceAddress, length: int) -> CopyReport:
        """NoC copy; at least one endpoint must be core-local."""
        src_region = self.memory.decode(src)
        dst_region = self.memory.decode(dst)
        if not (isinstance(src_region, CoreLocal) or isinstance(dst_region, CoreLocal)):
            raise InvalidAddress("on-chip copy needs a core-local endpoint")
        data = self.memory.read_bytes(src, length)
        self.memory.write_bytes(dst, data)
        return CopyReport(
            bytes_moved=length,
            onchip_copies=1,
            elapsed=self.config.onchip_elapsed(length),
        )

    # Loader-side delivery by coordinate.  Cores always reach their own
    # memory and the loader its targets even when a page is shadowed out of
    # the UVA (reserved id (0,0) or under the shared window on a full-plane
    # mesh); reports are identical to the address-based operations.

    def offchip_copy_to_core(self, row: int, col: int, offset: int, data: bytes) -> CopyReport:
        self.memory.core_write(row, col, offset, data)
        return CopyReport(
            bytes_moved=len(data),
            offchip_copies=1,
            elapsed=self.config.offchip_elapsed(len(data)),
        )

    def onchip_copy_between_cores(
        self, src: tuple[int, int], dst: tuple[int, int], offset: int, length: int
    ) -> CopyReport:
        data = self.memory.core_read(src[0], src[1], offset, length)
        self.memory.core_write(dst[0], dst[1], offset, data)
        return CopyReport(
            bytes_moved=length,
            onchip_copies=1,
            elapsed=self.config.onchip_elapsed(length),
        )

    # -- signaling --------------------------------------------------------

    def signal_start(self, core: Core, entry: DeviceAddress, argv: DeviceAddress) -> None:
        """Kick a waiting core into its kernel at the given entry address."""
        if core.state is not CoreState.SYSCORE_WAIT:
            raise NotInWaitState(
                f"core ({core.row},{core.col}) is {core.state.name}, not SYSCORE_WAIT"
            )
        from . import kernel_vm  # interpreter state; deferred to keep modules acyclic

        fn = self._function_at(entry)
        core.state = CoreState.RUNNING
        core.ledger = CoreLedger()
        core.interp = kernel_vm.InterpState.for_entry(self, fn, argv)

    def _function_at(self, entry: DeviceAddress):
        from .errors import NoImageLoaded

        if self.image is None:
            raise NoImageLoaded("no program image loaded")
        fn = self.image.function_by_address(entry)
        if fn is None:
            raise InvalidAddress(f"entry {entry:#010x} is not a kernel entry point")
        return fn

    # -- kernel-side memory traffic ----------------------------------------
    #
    # All reads/writes/copies issued by executing kernels come through here,
    # so the mesh-level episode byte count is tallied independently of the
    # per-core ledgers kept by the interpreter.

    def vm_read(self, addr: DeviceAddress, length: int) -> bytes:
        data = self.memory.read_bytes(addr, length)
        self.count_episode_bytes(length)
        return data

    def vm_write(self, addr: DeviceAddress, data: bytes) -> None:
        self.memory.write_bytes(addr, data)
        self.count_episode_bytes(len(data))

    def vm_copy(self, src: DeviceAddress, dst: DeviceAddress, length: int) -> CopyReport:
        report = self.onchip_copy(src, dst, length)
        self.count_episode_bytes(length)
        self.episode_copy.onchip_copies += 1
        self.episode_copy.bytes_moved += length
        return report

    # -- episode accounting ------------------------------------------------

    def begin_episode(self) -> None:
        self.episode_bytes_moved = 0
        self.episode_copy = CopyReport()
        self.barriers.clear()
        for core in self.cores.values():
            core.ledger = CoreLedger()

    def count_episode_bytes(self, nbytes: int) -> None:
        self.episode_bytes_moved += nbytes

    # -- state digests ------------------------------------------------------

    def memory_state_hash(self) -> str:
        """SHA-256 over every core-local store (row-major) plus shared memory."""
        digest = hashlib.sha256()
        for r in range(self.config.rows):
            for c in range(self.config.cols):
                digest.update(self.memory.core_store(r, c))
        digest.update(self.memory._shared)
        return digest.hexdigest()

    def syscore_hashes(self) -> list[str]:
        """Per-core hash of the syscore segment bytes (hot-load isolation checks)."""
        if self.image is None:
            return []
        seg = self.image.segment("syscore")
        out = []
        for core in self.cores_rowmajor():
            data = self.memory.core_read(core.row, core.col, seg.base, seg.size)
            out.append(hashlib.sha256(data).hexdigest())
        return out
