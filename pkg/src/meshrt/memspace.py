"""Unified virtual address space over core-local memories and shared global memory.

One 32-bit address value is meaningful from both the host side and any core
side.  The encoding packs a core id into the high bits, mirroring mesh
architectures that route loads/stores by coordinate:

    bits 31..26   row (6 bits)
    bits 25..20   col (6 bits)
    bits 19..0    offset within that core's 1 MB page (20 bits)

Core id (0,0) is reserved-invalid so plain small integers are never silently
core-local; the shared global window is a contiguous range of the same 32-bit
space and takes precedence when decoding.  Meshes therefore sit at a
configurable origin away from (0,0), the way real chips occupy a coordinate
sub-rectangle of the full addressing plane.

A core page that falls under the shared window (possible only for very large
meshes squeezed into the 12-bit id plane) is *shadowed*: the core is fully
simulated, but its local memory is not reachable through a DeviceAddress.
"""

from dataclasses import dataclass, field

from .errors import ConfigError, InvalidAddress, LocalOverflow, RangeStraddle

# DeviceAddress values are plain ints; the alias marks intent in signatures.
DeviceAddress = int

ROW_BITS = 6
COL_BITS = 6
OFFSET_BITS = 20
PAGE_BYTES = 1 << OFFSET_BITS

DEFAULT_LOCAL_MEM_BYTES = 32 * 1024
DEFAULT_SHARED_BASE = 0x8E000000
DEFAULT_SHARED_SIZE = 32 * 1024 * 1024


@dataclass(frozen=True)
class CoreLocal:
    """Address resolved to a core-local byte; row/col are plane coordinates."""

    row: int
    col: int
    offset: int


@dataclass(frozen=True)
class SharedGlobal:
    """Address resolved to an offset within the shared global window."""

    offset: int


@dataclass(frozen=True)
class Invalid:
    """Address resolves to no region."""


def encode(row: int, col: int, offset: int) -> DeviceAddress:
    """Pack plane coordinates and an offset into one address value."""
    if not (0 <= row < 64 and 0 <= col < 64):
        raise InvalidAddress(f"coordinates ({row},{col}) outside the 6-bit plane")
    if row == 0 and col == 0:
        raise InvalidAddress("core id (0,0) is reserved")
    if not (0 <= offset < PAGE_BYTES):
        raise InvalidAddress(f"offset {offset:#x} exceeds the 20-bit page")
    return (row << 26) | (col << 20) | offset


def split(value: DeviceAddress) -> tuple[int, int, int]:
    """Unpack an address value into (row, col, offset) fields."""
    return (value >> 26) & 0x3F, (value >> 20) & 0x3F, value & (PAGE_BYTES - 1)


class MemoryMap:
    """Backing stores plus geometry for one simulated machine.

    The mesh occupies plane rows [row_base, row_base+rows) and cols
    [col_base, col_base+cols).  Every byte written at a valid address reads
    back identically from the host side and from any core side: there is a
    single backing store per region.
    """

    def __init__(
        self,
        mesh_rows: int,
        mesh_cols: int,
        local_mem_bytes: int = DEFAULT_LOCAL_MEM_BYTES,
        shared_base: DeviceAddress = DEFAULT_SHARED_BASE,
        shared_size: int = DEFAULT_SHARED_SIZE,
        row_base: int = 1,
        col_base: int = 0,
    ):
        if mesh_rows < 1 or mesh_cols < 1:
            raise ConfigError("mesh must contain at least one core")
        if row_base + mesh_rows > 64 or col_base + mesh_cols > 64:
            raise ConfigError("mesh does not fit the 64x64 addressing plane")
        if not (0 < local_mem_bytes <= PAGE_BYTES):
            raise ConfigError("local_mem_bytes must be in (0, 1 MB]")
        if shared_size < 1 or shared_base + shared_size > 1 << 32:
            raise ConfigError("shared window exceeds the 32-bit space")

        self.mesh_rows = mesh_rows
        self.mesh_cols = mesh_cols
        self.local_mem_bytes = local_mem_bytes
        self.shared_base = shared_base
        self.shared_size = shared_size
        self.row_base = row_base
        self.col_base = col_base

        self._shared = bytearray(shared_size)
        self._locals: dict[tuple[int, int], bytearray] = {}
        # Mesh coordinates (logical, 0-based) -> plane page; pages hidden by
        # the reserved id or the shared window are simulated but unaddressable.
        self.shadowed: set[tuple[int, int]] = set()
        for r in range(mesh_rows):
            for c in range(mesh_cols):
                self._locals[(r, c)] = bytearray(local_mem_bytes)
                pr, pc = r + row_base, c + col_base
                page_lo = (pr << 26) | (pc << 20)
                page_hi = page_lo + local_mem_bytes
                if pr == 0 and pc == 0:
                    self.shadowed.add((r, c))
                elif page_lo >= shared_base and page_hi <= shared_base + shared_size:
                    self.shadowed.add((r, c))
                elif page_lo < shared_base + shared_size and page_hi > shared_base:
                    raise ConfigError(
                        f"core page ({pr},{pc}) partially overlaps the shared window"
                    )

    # -- geometry ------------------------------------------------------

    def plane_coords(self, row: int, col: int) -> tuple[int, int]:
        """Mesh (logical) coordinates -> plane coordinates."""
        return row + self.row_base, col + self.col_base

    def mesh_coords(self, plane_row: int, plane_col: int) -> tuple[int, int] | None:
        r, c = plane_row - self.row_base, plane_col - self.col_base
        if 0 <= r < self.mesh_rows and 0 <= c < self.mesh_cols:
            return r, c
        return None

    def local_address(self, row: int, col: int, offset: int) -> DeviceAddress:
        """Address of a byte in mesh core (row, col)'s local memory."""
        if not (0 <= offset < self.local_mem_bytes):
            raise InvalidAddress(f"offset {offset:#x} outside local memory")
        if (row, col) in self.shadowed:
            raise InvalidAddress(f"core ({row},{col}) is not UVA-addressable")
        return encode(*self.plane_coords(row, col), offset)

    def shared_address(self, offset: int) -> DeviceAddress:
        if not (0 <= offset < self.shared_size):
            raise InvalidAddress(f"offset {offset:#x} outside shared memory")
        return self.shared_base + offset

    # -- decode --------------------------------------------------------

    def decode(self, value: DeviceAddress) -> CoreLocal | SharedGlobal | Invalid:
        """Resolve an address value; a pure function of the value and geometry."""
        if not (0 <= value < 1 << 32):
            return Invalid()
        if self.shared_base <= value < self.shared_base + self.shared_size:
            return SharedGlobal(value - self.shared_base)
        row, col, offset = split(value)
        if row == 0 and col == 0:
            return Invalid()
        mesh = self.mesh_coords(row, col)
        if mesh is None or mesh in self.shadowed:
            return Invalid()
        if offset >= self.local_mem_bytes:
            return Invalid()
        return CoreLocal(row, col, offset)

    def _resolve_range(self, addr: DeviceAddress, length: int) -> tuple[bytearray, int]:
        """Map [addr, addr+length) onto one backing store, or raise."""
        if length < 0:
            raise InvalidAddress("negative length")
        region = self.decode(addr)
        if isinstance(region, Invalid):
            raise InvalidAddress(f"address {addr:#010x} is not mapped")
        if isinstance(region, SharedGlobal):
            if region.offset + length <= self.shared_size:
                return self._shared, region.offset
            tail = self.decode(addr + length - 1) if length else Invalid()
            if isinstance(tail, Invalid):
                raise InvalidAddress(f"range {addr:#010x}+{length} runs off shared memory")
            raise RangeStraddle(f"range {addr:#010x}+{length} crosses out of shared memory")
        if region.offset + length <= self.local_mem_bytes:
            store = self._locals[self.mesh_coords(region.row, region.col)]
            return store, region.offset
        tail = self.decode(addr + length - 1) if length else Invalid()
        if isinstance(tail, Invalid):
            raise InvalidAddress(
                f"range {addr:#010x}+{length} runs off core ({region.row},{region.col})"
            )
        raise RangeStraddle(f"range {addr:#010x}+{length} crosses a region boundary")

    # -- byte access ---------------------------------------------------

    def read_bytes(self, addr: DeviceAddress, length: int) -> bytes:
        store, offset = self._resolve_range(addr, length)
        return bytes(store[offset : offset + length])

    def write_bytes(self, addr: DeviceAddress, data: bytes) -> None:
        store, offset = self._resolve_range(addr, len(data))
        store[offset : offset + len(data)] = data

    def host_view(self, addr: DeviceAddress, length: int) -> memoryview:
        """Writable window aliasing the backing bytes of [addr, addr+length)."""
        store, offset = self._resolve_range(addr, length)
        return memoryview(store)[offset : offset + length]

    def read_word(self, addr: DeviceAddress) -> int:
        return int.from_bytes(self.read_bytes(addr, 4), "little")

    def write_word(self, addr: DeviceAddress, value: int) -> None:
        self.write_bytes(addr, (value & 0xFFFFFFFF).to_bytes(4, "little"))

    # -- direct (non-UVA) core access ----------------------------------
    #
    # A core always reaches its own local memory regardless of UVA
    # addressability, and the loader delivers segments by coordinate.  These
    # bypass decode(); they are the simulation's core-side/privileged path.

    def core_store(self, row: int, col: int) -> bytearray:
        return self._locals[(row, col)]

    def core_read(self, row: int, col: int, offset: int, length: int) -> bytes:
        store = self._locals[(row, col)]
        if offset < 0 or offset + length > self.local_mem_bytes:
            raise InvalidAddress(f"core ({row},{col}) offset {offset:#x}+{length} out of range")
        return bytes(store[offset : offset + length])

    def core_write(self, row: int, col: int, offset: int, data: bytes) -> None:
        store = self._locals[(row, col)]
        if offset < 0 or offset + len(data) > self.local_mem_bytes:
            raise InvalidAddress(f"core ({row},{col}) offset {offset:#x}+{len(data)} out of range")
        store[offset : offset + len(data)] = data


# -- segments -----------------------------------------------------------

SEGMENT_KINDS = ("syscore", "sysmem", "usrcore", "usrmem", "dc_region", "stack")
LOCAL_KINDS = frozenset({"syscore", "usrcore", "dc_region", "stack"})
SHARED_KINDS = frozenset({"sysmem", "usrmem"})


@dataclass(frozen=True)
class Segment:
    """One named region of a program image.

    Local-kind segments carry a base *offset* into each core's local memory
    (the same layout is replicated on every core); shared-kind segments carry
    an absolute DeviceAddress in the shared window.
    """

    kind: str
    base: int
    size: int
    payload: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ConfigError(f"unknown segment kind {self.kind!r}")
        if self.size < 0 or len(self.payload) > self.size:
            raise ConfigError(f"segment {self.kind}: payload exceeds size")

    @property
    def end(self) -> int:
        return self.base + self.size


def validate_local_segments(segments: list[Segment], local_mem_bytes: int) -> None:
    """Reject overlapping local segments or totals beyond local memory."""
    locals_ = sorted((s for s in segments if s.kind in LOCAL_KINDS), key=lambda s: s.base)
    total = sum(s.size for s in locals_)
    if total > local_mem_bytes:
        raise LocalOverflow(total - local_mem_bytes)
    prev = None
    for seg in locals_:
        if seg.end > local_mem_bytes:
            raise InvalidAddress(f"segment {seg.kind} ends beyond local memory")
        if prev is not None and seg.base < prev.end:
            raise ConfigError(f"segments {prev.kind} and {seg.kind} overlap")
        prev = seg
