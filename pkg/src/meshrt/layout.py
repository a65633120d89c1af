"""Program layout: manifests of placed functions -> segmented images.

The image separates persistent system segments (syscore in each core's local
memory, sysmem in shared memory) from replaceable user segments (usrcore,
usrmem).  Function placement is controlled per function: local code packs into
usrcore, global-resident code into usrmem, and dynamic calls put their body in
usrmem plus a 24-byte jump-table entry in usrcore.  Host calls used by the
program cost 8 bytes of usrcore each, on top of a fixed 128-byte service block
accounted inside syscore.

Declared function sizes stand in for compiled code size and drive all
accounting; segment payloads carry deterministic pseudo-code bytes of exactly
those sizes, while the executable meaning of each function travels separately
as its op list.  Functions pack back to back so that size accounting is exact;
segment bases are 8-byte aligned.

Local symbols are core-relative offsets (the same layout is replicated on
every core); shared symbols are absolute addresses in the shared window.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

from . import dyncall, hostcall
from .errors import ConfigError, DuplicateSymbol, LocalOverflow, UnknownEntry
from .kernel_vm import KernelBlock, Placement, block_from_json, block_to_json
from .memspace import Segment
from .mesh import MeshConfig

STUB_BYTES = 64  # flattened 1D kernel launch stub
SEGMENT_ALIGN = 8
DC_ENTRY_BYTES = dyncall.DC_ENTRY_BYTES
HC_ENTRY_BYTES = hostcall.HC_ENTRY_BYTES
HC_SERVICE_BYTES = hostcall.HC_SERVICE_BYTES


def _align(value: int, align: int = SEGMENT_ALIGN) -> int:
    return (value + align - 1) // align * align


def pseudo_code(tag: str, size: int) -> bytes:
    """Deterministic stand-in bytes for compiled code of a given size."""
    out = bytearray()
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(f"{tag}:{counter}".encode()).digest()
        counter += 1
    return bytes(out[:size])


@dataclass(frozen=True)
class LayoutParams:
    """Sizes of the fixed system pieces; the 24/8/128-byte table costs are not
    parameters, they are the design."""

    syscore_bytes: int = 2048
    sysmem_bytes: int = 4096
    stack_bytes: int = 1024


@dataclass(frozen=True)
class FunctionRecord:
    id: int
    name: str
    size_bytes: int
    placement: Placement | None = None  # None: manifest default applies
    body: KernelBlock | None = None

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ConfigError(f"function {self.name!r}: size_bytes must be positive")


@dataclass(frozen=True)
class ProgramManifest:
    """Function set plus placement policy; entry -1 means a stub-only program."""

    functions: tuple[FunctionRecord, ...]
    entry: int = -1
    default_placement: Placement = Placement.USRCORE_CALL
    hostcalls_used: tuple[int, ...] = ()
    dc_region_bytes: int | None = None  # default: max dynamic function size

    def __post_init__(self):
        ids = [f.id for f in self.functions]
        if len(ids) != len(set(ids)):
            raise ConfigError("duplicate function ids in manifest")
        if self.functions and self.entry == -1:
            raise ConfigError("manifest with functions needs an entry id")
        if self.default_placement is Placement.DYNAMIC_CALL:
            raise ConfigError("default placement must be usrcore_call or usrmem_call")
        for number in self.hostcalls_used:
            if number < 0:
                raise ConfigError(f"invalid host-call number {number}")

    def resolved(self, fn: FunctionRecord) -> Placement:
        return fn.placement if fn.placement is not None else self.default_placement


@dataclass
class ProgramImage:
    """A fully placed program: segments, jump tables, symbols."""

    manifest: ProgramManifest
    params: LayoutParams
    local_mem_bytes: int
    segments: dict[str, Segment]
    functions: dict[int, FunctionRecord]  # placements resolved
    entry: int
    dc_order: tuple[int, ...]
    dc_table_offset: int
    dc_side: dict[int, tuple[int, int]]  # fn id -> (global address, size)
    hc_numbers: tuple[int, ...]
    symbols: dict[str, int]
    fn_addresses: dict[int, int] = field(default_factory=dict)

    def segment(self, kind: str) -> Segment:
        return self.segments[kind]

    @property
    def usrcore_bytes(self) -> int:
        return self.segments["usrcore"].size

    def function_by_address(self, addr: int) -> FunctionRecord | None:
        """Resolve a local entry address (stub or function start) to a function."""
        if addr == self.segments["usrcore"].base:
            return self.functions.get(self.entry)
        for fn_id, fn_addr in self.fn_addresses.items():
            if addr == fn_addr:
                fn = self.functions[fn_id]
                if fn.placement is Placement.USRCORE_CALL:
                    return fn
        return None


def build_image(
    manifest: ProgramManifest,
    config: MeshConfig,
    params: LayoutParams = LayoutParams(),
) -> ProgramImage:
    """Assign every function and table a concrete address.

    Local memory, bottom up: syscore (offset 0), usrcore (stub, DC table, HC
    table, local function bodies), then free space, then the DC region and the
    stack pinned at the top.  Shared memory: sysmem at the window base, usrmem
    after it (bodies of global and dynamic functions plus the DC side table).
    """
    functions = {f.id: replace(f, placement=manifest.resolved(f)) for f in manifest.functions}
    names = [f.name for f in functions.values()]
    if len(names) != len(set(names)):
        raise DuplicateSymbol("duplicate function names in manifest")
    if functions:
        if manifest.entry not in functions:
            raise UnknownEntry(f"entry id {manifest.entry} not in manifest")
        if functions[manifest.entry].placement is not Placement.USRCORE_CALL:
            raise ConfigError("entry function must be placed usrcore_call")

    local_fns = [f for f in functions.values() if f.placement is Placement.USRCORE_CALL]
    global_fns = [f for f in functions.values() if f.placement is Placement.USRMEM_CALL]
    dyn_fns = [f for f in functions.values() if f.placement is Placement.DYNAMIC_CALL]
    dc_order = tuple(f.id for f in dyn_fns)
    hc_numbers = tuple(manifest.hostcalls_used)

    # -- local memory -----------------------------------------------------
    syscore_size = params.syscore_bytes + HC_SERVICE_BYTES
    usrcore_base = _align(syscore_size)
    dc_table_offset = usrcore_base + STUB_BYTES
    hc_table_offset = dc_table_offset + DC_ENTRY_BYTES * len(dyn_fns)
    fn_cursor = hc_table_offset + HC_ENTRY_BYTES * len(hc_numbers)

    symbols: dict[str, int] = {"__start": usrcore_base}
    fn_addresses: dict[int, int] = {}
    usrcore_payload = bytearray(pseudo_code("stub", STUB_BYTES))
    for index, fn in enumerate(dyn_fns):
        usrcore_payload += dyncall.entry_bytes(index)
    for number in hc_numbers:
        usrcore_payload += struct.pack("<II", number, 0xB000E0CA)
    for fn in local_fns:
        symbols[fn.name] = fn_cursor
        fn_addresses[fn.id] = fn_cursor
        usrcore_payload += pseudo_code(f"fn:{fn.name}", fn.size_bytes)
        fn_cursor += fn.size_bytes
    usrcore_size = fn_cursor - usrcore_base
    assert usrcore_size == len(usrcore_payload)

    stack_base = (config.local_mem_bytes - params.stack_bytes) // SEGMENT_ALIGN * SEGMENT_ALIGN
    dc_size = manifest.dc_region_bytes
    if dc_size is None:
        dc_size = max((f.size_bytes for f in dyn_fns), default=0)
    dc_base = (stack_base - dc_size) // SEGMENT_ALIGN * SEGMENT_ALIGN

    free_from = usrcore_base + usrcore_size
    if free_from > dc_base:
        raise LocalOverflow(free_from - dc_base)

    # -- shared memory ------------------------------------------------------
    sysmem_base = config.shared_base
    usrmem_base = _align(sysmem_base + params.sysmem_bytes)
    usrmem_payload = bytearray()
    dc_side: dict[int, tuple[int, int]] = {}
    cursor = usrmem_base
    for fn in global_fns:
        symbols[fn.name] = cursor
        fn_addresses[fn.id] = cursor
        usrmem_payload += pseudo_code(f"fn:{fn.name}", fn.size_bytes)
        cursor += fn.size_bytes
    for fn in dyn_fns:
        symbols[fn.name] = cursor
        fn_addresses[fn.id] = cursor
        dc_side[fn.id] = (cursor, fn.size_bytes)
        usrmem_payload += pseudo_code(f"fn:{fn.name}", fn.size_bytes)
        cursor += fn.size_bytes
    symbols["__dc_side_table"] = cursor
    for fn in dyn_fns:
        usrmem_payload += struct.pack("<II", *dc_side[fn.id])
        cursor += HC_ENTRY_BYTES
    usrmem_size = cursor - usrmem_base
    if usrmem_base + usrmem_size > config.shared_base + config.shared_size:
        raise ConfigError("usrmem exceeds shared memory")

    segments = {
        "syscore": Segment("syscore", 0, syscore_size, bytes(pseudo_code("syscore", syscore_size))),
        "sysmem": Segment("sysmem", sysmem_base, params.sysmem_bytes,
                          pseudo_code("sysmem", params.sysmem_bytes)),
        "usrcore": Segment("usrcore", usrcore_base, usrcore_size, bytes(usrcore_payload)),
        "usrmem": Segment("usrmem", usrmem_base, usrmem_size, bytes(usrmem_payload)),
        "dc_region": Segment("dc_region", dc_base, dc_size),
        "stack": Segment("stack", stack_base, config.local_mem_bytes - stack_base),
    }
    return ProgramImage(
        manifest=manifest,
        params=params,
        local_mem_bytes=config.local_mem_bytes,
        segments=segments,
        functions=functions,
        entry=manifest.entry,
        dc_order=dc_order,
        dc_table_offset=dc_table_offset,
        dc_side=dc_side,
        hc_numbers=hc_numbers,
        symbols=symbols,
        fn_addresses=fn_addresses,
    )


def occupancy(image: ProgramImage, config: MeshConfig) -> dict:
    """Per-segment share of local memory, in percent; occupied + free = 100."""
    local = config.local_mem_bytes
    sizes = {
        kind: image.segments[kind].size
        for kind in ("syscore", "usrcore", "dc_region", "stack")
    }
    occupied = sum(sizes.values())
    pct = {f"{kind}_pct": 100.0 * size / local for kind, size in sizes.items()}
    return {
        **{f"{kind}_bytes": size for kind, size in sizes.items()},
        **pct,
        "occupied_bytes": occupied,
        "occupied_pct": 100.0 * occupied / local,
        "free_bytes": local - occupied,
        "free_pct": 100.0 * (local - occupied) / local,
    }


def replan(
    image: ProgramImage,
    moves: list[tuple[int, Placement]],
    config: MeshConfig,
) -> ProgramImage:
    """Rebuild the image with some functions moved to new placements."""
    known = {f.id for f in image.manifest.functions}
    for fn_id, placement in moves:
        if fn_id not in known:
            raise UnknownEntry(f"cannot move unknown function {fn_id}")
        if fn_id == image.entry and placement is not Placement.USRCORE_CALL:
            raise ConfigError("entry function must stay usrcore_call")
    move_map = dict(moves)
    functions = tuple(
        replace(f, placement=move_map[f.id]) if f.id in move_map else f
        for f in image.manifest.functions
    )
    manifest = replace(image.manifest, functions=functions)
    return build_image(manifest, config, image.params)


# -- manifest JSON ----------------------------------------------------------


def manifest_to_json(manifest: ProgramManifest) -> dict:
    out = {
        "default_placement": manifest.default_placement.value,
        "entry": manifest.entry,
        "hostcalls_used": list(manifest.hostcalls_used),
        "functions": [],
    }
    if manifest.dc_region_bytes is not None:
        out["dc_region_bytes"] = manifest.dc_region_bytes
    for fn in manifest.functions:
        rec = {"id": fn.id, "name": fn.name, "size_bytes": fn.size_bytes}
        if fn.placement is not None:
            rec["placement"] = fn.placement.value
        if fn.body is not None:
            rec["body"] = block_to_json(fn.body)
        out["functions"].append(rec)
    return out


def manifest_from_json(data: dict) -> ProgramManifest:
    functions = []
    for rec in data.get("functions", []):
        placement = Placement(rec["placement"]) if "placement" in rec else None
        body = block_from_json(rec["body"]) if "body" in rec else None
        functions.append(
            FunctionRecord(
                id=int(rec["id"]),
                name=str(rec["name"]),
                size_bytes=int(rec["size_bytes"]),
                placement=placement,
                body=body,
            )
        )
    return ProgramManifest(
        functions=tuple(functions),
        entry=int(data["entry"]),
        default_placement=Placement(data.get("default_placement", "usrcore_call")),
        hostcalls_used=tuple(int(n) for n in data.get("hostcalls_used", ())),
        dc_region_bytes=data.get("dc_region_bytes"),
    )


def load_manifest(path) -> ProgramManifest:
    with open(path) as fh:
        return manifest_from_json(json.load(fh))


def save_manifest(manifest: ProgramManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_to_json(manifest), fh, indent=2)
        fh.write("\n")
