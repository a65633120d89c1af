"""Host-call proxying: per-core mailboxes, the host daemon, and built-in calls.

A core requests host execution by filling its mailbox (call number, up to four
argument words, stack pointer) and raising the high bit of its run-state
register, then spinning.  The host daemon notices the bit, routes the number
through a call vector and writes the result back.  Number ranges partition the
vector:

    0..511      system-like calls (a minimal simulated file table lives here)
    512..1023   runtime utilities (print, dmalloc, dfree)
    1024..      user-registered handlers

Because every argument word travels through the unified address space, an
argument may be a DeviceAddress -- including an address of a structure that
itself stores addresses -- and the host handler dereferences it directly.
"""

from dataclasses import dataclass, field
from typing import Callable

from .errors import DuplicateNumber, InvalidAddress, MeshrtError, ReservedNumber, UnknownCallNumber

SYSTEM_RANGE_END = 512
RUNTIME_RANGE_END = 1024

# Fixed footprint of the proxy machinery in local memory.
HC_ENTRY_BYTES = 8
HC_SERVICE_BYTES = 128

# Word handed back to the core when a call fails; details land in the mailbox.
ERROR_WORD = 0xFFFFFFFF

HC_OPEN = 16
HC_WRITE = 17
HC_CLOSE = 18
HC_PRINT = 512
HC_DMALLOC = 513
HC_DFREE = 514


def call_class(number: int) -> str:
    """Dispatch class of a call number; boundaries at 512 and 1024 exactly."""
    if number < 0:
        raise UnknownCallNumber(f"negative call number {number}")
    if number < SYSTEM_RANGE_END:
        return "system"
    if number < RUNTIME_RANGE_END:
        return "runtime"
    return "user"


@dataclass
class Mailbox:
    """Per-core request record shared between core and host."""

    call_number: int = 0
    args: tuple[int, int, int, int] = (0, 0, 0, 0)
    stack_register_value: int = 0
    return_slot: int = 0
    status: str = "empty"  # empty | pending | done | failed
    fail_code: int = 0

    def fill(self, number: int, args: tuple[int, int, int, int], stack_ptr: int) -> None:
        if self.status == "pending":
            raise MeshrtError("mailbox already holds a pending request")
        self.call_number = number
        self.args = args
        self.stack_register_value = stack_ptr
        self.return_slot = 0
        self.status = "pending"
        self.fail_code = 0


@dataclass
class Handler:
    fn: Callable  # fn(machine, core, args) -> int
    cost_us: float = 0.0


class CallVector:
    """Number -> host function map with range-enforced registration."""

    def __init__(self):
        self._handlers: dict[int, Handler] = {}

    def register_builtin(self, number: int, fn: Callable, cost_us: float = 0.0) -> None:
        if number >= RUNTIME_RANGE_END:
            raise ReservedNumber(f"{number} is not in a built-in range")
        if number in self._handlers:
            raise DuplicateNumber(f"call {number} already bound")
        self._handlers[number] = Handler(fn, cost_us)

    def register_user_call(self, number: int, fn: Callable, cost_us: float = 0.0) -> None:
        if number < RUNTIME_RANGE_END:
            raise ReservedNumber(f"user calls start at {RUNTIME_RANGE_END}, got {number}")
        if number in self._handlers:
            raise DuplicateNumber(f"call {number} already registered")
        self._handlers[number] = Handler(fn, cost_us)

    def lookup(self, number: int) -> Handler:
        handler = self._handlers.get(number)
        if handler is None:
            raise UnknownCallNumber(f"no handler for call {number} ({call_class(number)} range)")
        return handler


class PrintLog:
    """Host-side capture of core print output, tagged by mesh coordinates."""

    def __init__(self):
        self.entries: list[tuple[int, int, bytes]] = []

    def append(self, row: int, col: int, data: bytes) -> None:
        self.entries.append((row, col, data))

    def text(self) -> str:
        return "".join(
            f"({r},{c}) {data.decode('utf-8', errors='replace')}\n"
            for r, c, data in self.entries
        )


class HostFs:
    """In-memory map of path -> bytes standing in for the host filesystem."""

    def __init__(self):
        self.files: dict[str, bytearray] = {}
        self._fds: dict[int, tuple[str, int]] = {}  # fd -> (path, position)
        self._next_fd = 3

    def open(self, path: str, flags: int) -> int:
        if path not in self.files:
            self.files[path] = bytearray()
        fd = self._next_fd
        self._next_fd += 1
        self._fds[fd] = (path, 0)
        return fd

    def write(self, fd: int, data: bytes) -> int:
        if fd not in self._fds:
            return -1
        path, pos = self._fds[fd]
        buf = self.files[path]
        end = pos + len(data)
        if end > len(buf):
            buf.extend(b"\x00" * (end - len(buf)))
        buf[pos:end] = data
        self._fds[fd] = (path, end)
        return len(data)

    def close(self, fd: int) -> int:
        if fd not in self._fds:
            return -1
        del self._fds[fd]
        return 0


class SharedAllocator:
    """First-fit allocator over the free tail of shared global memory.

    Backs dmalloc/dfree; the host-side staging of workload inputs uses the
    same instance so that live allocations and staged data never collide.
    """

    GRANULE = 8

    def __init__(self, base: int, size: int):
        self.base = base
        self.size = size
        self.live: dict[int, int] = {}  # address -> size

    def rebase(self, base: int, size: int) -> None:
        if self.live:
            raise MeshrtError("cannot move the allocation arena while blocks are live")
        self.base = base
        self.size = size

    def alloc(self, size: int) -> int:
        if size <= 0:
            raise InvalidAddress("zero-size allocation")
        size = (size + self.GRANULE - 1) // self.GRANULE * self.GRANULE
        cursor = self.base
        for addr in sorted(self.live):
            if addr - cursor >= size:
                break
            cursor = max(cursor, addr + self.live[addr])
        if cursor + size > self.base + self.size:
            raise InvalidAddress(f"shared free space exhausted ({size} bytes requested)")
        self.live[cursor] = size
        return cursor

    def free(self, addr: int) -> None:
        if addr not in self.live:
            raise InvalidAddress(f"free of {addr:#010x} which is not a live allocation")
        del self.live[addr]


# -- built-in handlers ----------------------------------------------------
#
# Handlers receive (machine, core, args) and return the word written to the
# mailbox return slot.  Raising any MeshrtError marks the mailbox failed.


def _read_c_string(machine, addr: int, limit: int = 4096) -> str:
    out = bytearray()
    for i in range(limit):
        b = machine.memory.read_bytes(addr + i, 1)
        if b == b"\x00":
            break
        out += b
    return out.decode("utf-8", errors="replace")


def hc_open(machine, core, args):
    path = _read_c_string(machine, args[0])
    return machine.hostfs.open(path, args[1])


def hc_write(machine, core, args):
    fd, buf_addr, length = args[0], args[1], args[2]
    data = machine.memory.read_bytes(buf_addr, length)
    result = machine.hostfs.write(fd, data)
    if result < 0:
        raise InvalidAddress(f"write to unknown fd {fd}")
    return result


def hc_close(machine, core, args):
    result = machine.hostfs.close(args[0])
    if result < 0:
        raise InvalidAddress(f"close of unknown fd {args[0]}")
    return 0


def hc_print(machine, core, args):
    data = machine.memory.read_bytes(args[0], args[1])
    machine.print_log.append(core.row, core.col, data)
    return args[1]


def hc_dmalloc(machine, core, args):
    return machine.shared_alloc.alloc(args[0])


def hc_dfree(machine, core, args):
    machine.shared_alloc.free(args[0])
    return 0


def install_builtins(vector: CallVector) -> None:
    vector.register_builtin(HC_OPEN, hc_open)
    vector.register_builtin(HC_WRITE, hc_write)
    vector.register_builtin(HC_CLOSE, hc_close)
    vector.register_builtin(HC_PRINT, hc_print)
    vector.register_builtin(HC_DMALLOC, hc_dmalloc)
    vector.register_builtin(HC_DFREE, hc_dfree)


class HostDaemon:
    """Virtual host actor servicing pending mailboxes between engine events."""

    def __init__(self, vector: CallVector):
        self.vector = vector

    def poll(self, machine) -> int:
        """Service every pending mailbox in row-major core order."""
        serviced = 0
        for core in machine.cores_rowmajor():
            box = core.mailbox
            if box.status != "pending":
                continue
            cost = 0.0
            try:
                handler = self.vector.lookup(box.call_number)
                cost = handler.cost_us
                box.return_slot = handler.fn(machine, core, box.args) & 0xFFFFFFFF
                box.status = "done"
            except MeshrtError:
                box.return_slot = ERROR_WORD
                box.status = "failed"
                box.fail_code = 1
            core.finish_hostcall(machine.config.hostcall_roundtrip + cost)
            serviced += 1
        return serviced
