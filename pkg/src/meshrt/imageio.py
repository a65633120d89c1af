"""Binary program-image files: magic "MRT1", little-endian lengths.

The file carries the full placed image: the originating manifest (function
records with op-list bodies), the six segments with their payload bytes, both
jump tables, and the symbol table.  parse(emit(image)) reproduces the image
exactly; any truncation or corruption raises MalformedImage with the byte
offset where parsing failed.
"""

import struct
from dataclasses import replace

from .errors import MalformedImage
from .kernel_vm import Placement, decode_block, encode_block
from .layout import FunctionRecord, LayoutParams, ProgramImage, ProgramManifest
from .memspace import SEGMENT_KINDS, Segment

MAGIC = b"MRT1"
VERSION = 1

_PLACEMENT_CODES = {None: 0, Placement.USRCORE_CALL: 1, Placement.USRMEM_CALL: 2, Placement.DYNAMIC_CALL: 3}
_CODE_PLACEMENTS = {v: k for k, v in _PLACEMENT_CODES.items()}


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def pack(self, fmt: str, *values) -> None:
        self.buf += struct.pack(fmt, *values)

    def blob(self, data: bytes) -> None:
        self.pack("<I", len(data))
        self.buf += data

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.pack("<H", len(raw))
        self.buf += raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise MalformedImage(f"truncated field {fmt!r}", self.pos)
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def blob(self) -> bytes:
        length = self.unpack("<I")
        if self.pos + length > len(self.data):
            raise MalformedImage(f"truncated blob of {length} bytes", self.pos)
        out = self.data[self.pos : self.pos + length]
        self.pos += length
        return out

    def text(self) -> str:
        length = self.unpack("<H")
        if self.pos + length > len(self.data):
            raise MalformedImage("truncated string", self.pos)
        out = self.data[self.pos : self.pos + length].decode("utf-8")
        self.pos += length
        return out


def emit_image_file(image: ProgramImage) -> bytes:
    w = _Writer()
    w.buf += MAGIC
    w.pack("<HH", VERSION, 0)
    w.pack("<III", image.params.syscore_bytes, image.params.sysmem_bytes, image.params.stack_bytes)
    w.pack("<I", image.local_mem_bytes)
    w.pack("<h", image.manifest.entry)
    w.pack("<B", _PLACEMENT_CODES[image.manifest.default_placement])
    w.pack("<q", -1 if image.manifest.dc_region_bytes is None else image.manifest.dc_region_bytes)

    w.pack("<H", len(image.manifest.hostcalls_used))
    for number in image.manifest.hostcalls_used:
        w.pack("<I", number)

    w.pack("<H", len(image.manifest.functions))
    for fn in image.manifest.functions:
        w.pack("<HBI", fn.id, _PLACEMENT_CODES[fn.placement], fn.size_bytes)
        w.text(fn.name)
        if fn.body is None:
            w.pack("<B", 0)
        else:
            w.pack("<B", 1)
            w.blob(encode_block(fn.body))

    w.pack("<B", len(image.segments))
    for kind in SEGMENT_KINDS:
        seg = image.segments[kind]
        w.pack("<BII", SEGMENT_KINDS.index(kind), seg.base, seg.size)
        w.blob(seg.payload)

    w.pack("<HI", len(image.dc_order), image.dc_table_offset)
    for fn_id in image.dc_order:
        gaddr, size = image.dc_side[fn_id]
        w.pack("<HII", fn_id, gaddr, size)

    w.pack("<H", len(image.symbols))
    for name, addr in image.symbols.items():
        w.text(name)
        w.pack("<I", addr)

    w.pack("<H", len(image.fn_addresses))
    for fn_id, addr in image.fn_addresses.items():
        w.pack("<HI", fn_id, addr)
    return bytes(w.buf)


def parse_image_file(data: bytes) -> ProgramImage:
    r = _Reader(data)
    if data[:4] != MAGIC:
        raise MalformedImage(f"bad magic {data[:4]!r}", 0)
    r.pos = 4
    version, _flags = r.unpack("<HH")
    if version != VERSION:
        raise MalformedImage(f"unsupported version {version}", 4)
    syscore_b, sysmem_b, stack_b = r.unpack("<III")
    params = LayoutParams(syscore_bytes=syscore_b, sysmem_bytes=sysmem_b, stack_bytes=stack_b)
    local_mem_bytes = r.unpack("<I")
    entry = r.unpack("<h")
    default_placement = _CODE_PLACEMENTS.get(r.unpack("<B"))
    if default_placement is None:
        raise MalformedImage("bad default placement", r.pos - 1)
    dc_region_bytes = r.unpack("<q")

    hostcalls = tuple(r.unpack("<I") for _ in range(r.unpack("<H")))

    functions = []
    for _ in range(r.unpack("<H")):
        fn_id, placement_code, size = r.unpack("<HBI")
        if placement_code not in _CODE_PLACEMENTS:
            raise MalformedImage(f"bad placement code {placement_code}", r.pos)
        name = r.text()
        body = None
        if r.unpack("<B"):
            try:
                body = decode_block(bytes(r.blob()))
            except (IndexError, struct.error) as exc:
                raise MalformedImage(f"bad kernel body: {exc}", r.pos) from None
        functions.append(
            FunctionRecord(fn_id, name, size, _CODE_PLACEMENTS[placement_code], body)
        )

    segments = {}
    for _ in range(r.unpack("<B")):
        kind_code, base, size = r.unpack("<BII")
        if kind_code >= len(SEGMENT_KINDS):
            raise MalformedImage(f"bad segment kind {kind_code}", r.pos)
        kind = SEGMENT_KINDS[kind_code]
        segments[kind] = Segment(kind, base, size, bytes(r.blob()))
    missing = set(SEGMENT_KINDS) - set(segments)
    if missing:
        raise MalformedImage(f"missing segments {sorted(missing)}", r.pos)

    dc_count, dc_table_offset = r.unpack("<HI")
    dc_order = []
    dc_side = {}
    for _ in range(dc_count):
        fn_id, gaddr, size = r.unpack("<HII")
        dc_order.append(fn_id)
        dc_side[fn_id] = (gaddr, size)

    symbols = {}
    for _ in range(r.unpack("<H")):
        name = r.text()
        symbols[name] = r.unpack("<I")

    fn_addresses = {}
    for _ in range(r.unpack("<H")):
        fn_id, addr = r.unpack("<HI")
        fn_addresses[fn_id] = addr

    if r.pos != len(data):
        raise MalformedImage(f"{len(data) - r.pos} trailing bytes", r.pos)

    manifest = ProgramManifest(
        functions=tuple(functions),
        entry=entry,
        default_placement=default_placement,
        hostcalls_used=hostcalls,
        dc_region_bytes=None if dc_region_bytes < 0 else dc_region_bytes,
    )
    resolved = {f.id: replace(f, placement=manifest.resolved(f)) for f in manifest.functions}
    return ProgramImage(
        manifest=manifest,
        params=params,
        local_mem_bytes=local_mem_bytes,
        segments=segments,
        functions=resolved,
        entry=entry,
        dc_order=tuple(dc_order),
        dc_table_offset=dc_table_offset,
        dc_side=dc_side,
        hc_numbers=hostcalls,
        symbols=symbols,
        fn_addresses=fn_addresses,
    )
