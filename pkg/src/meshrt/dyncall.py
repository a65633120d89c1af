"""Dynamic calls: lazy first-use copy of global-resident functions into a
reserved local region, with a patchable per-core jump table.

Each dynamic function owns a 24-byte jump-table entry in local memory.  An
unresolved entry routes through the DC loader, which looks up the function's
global address and size in a side table, copies exactly that many bytes into
the DC region, and patches the entry's first word to branch straight to the
loaded body.  Resolved calls cost a single branch indirection.  The only
reclamation mechanism is a full table reset, which invalidates every entry and
frees the region for the next stage of an application.
"""

import struct
from dataclasses import dataclass, field

from .errors import DcRegionExhausted, UnknownDynamicFunction

DC_ENTRY_BYTES = 24

# Stand-in instruction words for the three-slot entry of the jump table.
_BRANCH_NEXT = 0xB0000001  # branch to next instruction
_BRANCH_LOADER = 0xB000DC1D  # branch to the DC loader inside syscore
_BRANCH_LOCAL = 0xB1000000  # patched: branch to local offset (low 20 bits)


def entry_bytes(call_index: int, resolved_offset: int | None = None) -> bytes:
    """The 24-byte jump-table entry for one dynamic call.

    Unresolved entries read: branch-next, move call index to the scratch
    register, branch to the DC loader.  Resolution rewrites the first word.
    """
    first = _BRANCH_NEXT if resolved_offset is None else (_BRANCH_LOCAL | resolved_offset)
    return struct.pack("<IIIIII", first, call_index, _BRANCH_LOADER, 0, 0, 0)


@dataclass
class DcCoreState:
    """Per-core resolution state for the DC region (bump allocation, no eviction).

    copies/bytes_copied/per_fn_bytes count since the last reset; the lifetime
    counters survive resets.
    """

    cursor: int = 0
    resident: dict[int, int] = field(default_factory=dict)  # fn id -> local offset
    copies: int = 0
    bytes_copied: int = 0
    indirections: int = 0
    per_fn_bytes: dict[int, int] = field(default_factory=dict)
    lifetime_copies: int = 0
    lifetime_bytes: int = 0


def resolve(machine, core, fn_id: int) -> tuple[int, int, float]:
    """Route one dynamic call; returns (local offset, bytes copied, elapsed us).

    First call per function copies the body and patches the table; later calls
    (until reset) cost exactly one indirection.
    """
    image = machine.image
    if fn_id not in image.dc_side:
        raise UnknownDynamicFunction(f"function {fn_id} has no DC table entry")
    state = core.dc
    state.indirections += 1
    elapsed = machine.config.dc_indirection_latency

    local = state.resident.get(fn_id)
    if local is not None:
        return local, 0, elapsed

    global_addr, size = image.dc_side[fn_id]
    region = image.segment("dc_region")
    if state.cursor + size > region.size:
        raise DcRegionExhausted(
            f"function {fn_id} needs {size} bytes; {region.size - state.cursor} free"
        )
    body = machine.memory.read_bytes(global_addr, size)
    local = region.base + state.cursor
    machine.memory.core_write(core.row, core.col, local, body)
    state.cursor += size
    state.resident[fn_id] = local
    state.copies += 1
    state.bytes_copied += size
    state.per_fn_bytes[fn_id] = state.per_fn_bytes.get(fn_id, 0) + size
    state.lifetime_copies += 1
    state.lifetime_bytes += size

    _patch_entry(machine, core, fn_id, local)
    elapsed += machine.config.offchip_elapsed(size)
    core.ledger.dc_copies += 1
    core.ledger.dc_bytes += size
    machine.count_episode_bytes(size)
    return local, size, elapsed


def reset(machine, core) -> None:
    """Invalidate every entry and free the region; next calls copy again."""
    image = machine.image
    if image is not None:
        for index, fn_id in enumerate(image.dc_order):
            _write_entry(machine, core, index, entry_bytes(index))
    old = core.dc
    core.dc = DcCoreState(
        indirections=old.indirections,
        lifetime_copies=old.lifetime_copies,
        lifetime_bytes=old.lifetime_bytes,
    )


def _patch_entry(machine, core, fn_id: int, local_offset: int) -> None:
    index = machine.image.dc_order.index(fn_id)
    _write_entry(machine, core, index, entry_bytes(index, local_offset))


def _write_entry(machine, core, index: int, data: bytes) -> None:
    offset = machine.image.dc_table_offset + index * DC_ENTRY_BYTES
    machine.memory.core_write(core.row, core.col, offset, data)
