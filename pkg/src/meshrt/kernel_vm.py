"""Abstract kernels: cost-bearing op lists interpreted in place of machine code.

A kernel is an ordered list of ops ending in Return.  Costs are declared, not
derived from an instruction set; what the simulation measures is exactly the
loading, placement and interoperability behavior layered on top.  Compute
costs of a function whose code resides in global memory are multiplied by the
configured fetch penalty; dynamic-call bodies execute at local speed once
copied.  Expressions are pure 32-bit word arithmetic over literals, argument
words, core coordinates and loaded memory words.

Kernels are SPMD and branch-free: per-core behavior differs only through
coordinate expressions, and loops are unrolled by whoever builds the manifest.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum

from . import dyncall
from .errors import ConfigError, MeshrtError, StackOverflow, UnknownDynamicFunction
from .mesh import CoreState


class Placement(Enum):
    USRCORE_CALL = "usrcore_call"
    USRMEM_CALL = "usrmem_call"
    DYNAMIC_CALL = "dynamic_call"


MASK32 = 0xFFFFFFFF


# -- expressions ----------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Arg:
    index: int


@dataclass(frozen=True)
class CoreRow:
    pass


@dataclass(frozen=True)
class CoreCol:
    pass


@dataclass(frozen=True)
class Add:
    left: object
    right: object


@dataclass(frozen=True)
class Sub:
    left: object
    right: object


@dataclass(frozen=True)
class Mul:
    left: object
    right: object


@dataclass(frozen=True)
class Mod:
    left: object
    right: object


@dataclass(frozen=True)
class Load:
    """32-bit little-endian word loaded from a computed address."""

    addr: object


@dataclass(frozen=True)
class LocalAddr:
    """Address of a byte in the local memory of mesh core (row, col)."""

    row: object
    col: object
    offset: object


# -- ops ------------------------------------------------------------------


@dataclass(frozen=True)
class Compute:
    cost_us: float


@dataclass(frozen=True)
class ReadOp:
    addr: object
    length: int


@dataclass(frozen=True)
class WriteOp:
    addr: object
    value: object


@dataclass(frozen=True)
class CopyOnChip:
    src: object
    dst: object
    length: int


@dataclass(frozen=True)
class CallLocal:
    fn_id: int


@dataclass(frozen=True)
class CallDynamic:
    fn_id: int


@dataclass(frozen=True)
class HostCall:
    number: int
    args: tuple = ()


@dataclass(frozen=True)
class Barrier:
    group: int = 0


@dataclass(frozen=True)
class Return:
    value: object = Lit(0)


@dataclass(frozen=True)
class KernelBlock:
    """A function body: ops ending in Return, plus declared stack usage."""

    ops: tuple = ()
    stack_bytes: int = 0
    num_args: int = 0

    def __post_init__(self):
        if not self.ops or not isinstance(self.ops[-1], Return):
            raise ConfigError("kernel block must end with Return")


# -- evaluation -----------------------------------------------------------


def eval_expr(machine, core, state, expr) -> int:
    if isinstance(expr, Lit):
        return expr.value & MASK32
    if isinstance(expr, Arg):
        if state.args is None or expr.index >= len(state.args):
            raise MeshrtError(f"argument {expr.index} not available")
        return state.args[expr.index]
    if isinstance(expr, CoreRow):
        return core.row
    if isinstance(expr, CoreCol):
        return core.col
    if isinstance(expr, Add):
        return (eval_expr(machine, core, state, expr.left) + eval_expr(machine, core, state, expr.right)) & MASK32
    if isinstance(expr, Sub):
        return (eval_expr(machine, core, state, expr.left) - eval_expr(machine, core, state, expr.right)) & MASK32
    if isinstance(expr, Mul):
        return (eval_expr(machine, core, state, expr.left) * eval_expr(machine, core, state, expr.right)) & MASK32
    if isinstance(expr, Mod):
        divisor = eval_expr(machine, core, state, expr.right)
        if divisor == 0:
            raise MeshrtError("modulo by zero in kernel expression")
        return eval_expr(machine, core, state, expr.left) % divisor
    if isinstance(expr, Load):
        addr = eval_expr(machine, core, state, expr.addr)
        word = int.from_bytes(machine.vm_read(addr, 4), "little")
        core.ledger.bytes_read += 4
        return word
    if isinstance(expr, LocalAddr):
        row = eval_expr(machine, core, state, expr.row)
        col = eval_expr(machine, core, state, expr.col)
        offset = eval_expr(machine, core, state, expr.offset)
        return machine.memory.local_address(row, col, offset)
    raise ConfigError(f"unknown expression node {expr!r}")


@dataclass
class Frame:
    block: KernelBlock
    fn_id: int
    pc: int = 0
    cost_multiplier: float = 1.0


@dataclass
class InterpState:
    """Resumable interpreter state for one core's execution episode."""

    entry_fn_id: int
    argv: int
    frames: list = field(default_factory=list)
    args: list | None = None
    return_word: int = 0

    @classmethod
    def for_entry(cls, machine, fn, argv: int) -> "InterpState":
        state = cls(entry_fn_id=fn.id, argv=argv)
        state.frames.append(Frame(fn.body, fn.id, cost_multiplier=_multiplier(machine, fn)))
        return state


def _multiplier(machine, fn) -> float:
    if fn.placement is Placement.USRMEM_CALL:
        return machine.config.globalmem_fetch_penalty
    return 1.0


def _check_stack(machine, state, extra: int) -> None:
    stack = machine.image.segment("stack")
    used = sum(f.block.stack_bytes for f in state.frames) + extra
    if used > stack.size:
        raise StackOverflow(f"declared stack {used} exceeds stack segment {stack.size}")


def step(machine, core) -> None:
    """Execute one op on a running core; engine-driven."""
    state: InterpState = core.interp
    if state.args is None:
        # Kernel prologue: pull the argument block through the UVA.
        block = state.frames[0].block
        _check_stack(machine, state, 0)
        words = []
        if block.num_args:
            raw = machine.vm_read(state.argv, 4 * block.num_args)
            core.ledger.bytes_read += len(raw)
            words = [int.from_bytes(raw[i : i + 4], "little") for i in range(0, len(raw), 4)]
        state.args = words

    frame = state.frames[-1]
    op = frame.block.ops[frame.pc]
    frame.pc += 1

    if isinstance(op, Compute):
        core.clock += op.cost_us * frame.cost_multiplier
        core.ledger.compute_us += op.cost_us * frame.cost_multiplier
    elif isinstance(op, ReadOp):
        addr = eval_expr(machine, core, state, op.addr)
        machine.vm_read(addr, op.length)
        core.ledger.bytes_read += op.length
    elif isinstance(op, WriteOp):
        addr = eval_expr(machine, core, state, op.addr)
        value = eval_expr(machine, core, state, op.value)
        machine.vm_write(addr, value.to_bytes(4, "little"))
        core.ledger.bytes_written += 4
    elif isinstance(op, CopyOnChip):
        src = eval_expr(machine, core, state, op.src)
        dst = eval_expr(machine, core, state, op.dst)
        report = machine.vm_copy(src, dst, op.length)
        core.clock += report.elapsed
        core.ledger.onchip_copies += 1
        core.ledger.onchip_bytes += op.length
    elif isinstance(op, CallLocal):
        fn = machine.image.functions.get(op.fn_id)
        if fn is None:
            raise ConfigError(f"call to unknown function {op.fn_id}")
        if fn.placement is Placement.DYNAMIC_CALL:
            raise ConfigError(f"function {op.fn_id} is dynamic; use CallDynamic")
        _check_stack(machine, state, fn.body.stack_bytes)
        state.frames.append(Frame(fn.body, fn.id, cost_multiplier=_multiplier(machine, fn)))
    elif isinstance(op, CallDynamic):
        fn = machine.image.functions.get(op.fn_id)
        if fn is None:
            raise UnknownDynamicFunction(f"dynamic call to unknown function {op.fn_id}")
        _check_stack(machine, state, fn.body.stack_bytes)
        _, _, elapsed = dyncall.resolve(machine, core, op.fn_id)
        core.clock += elapsed
        state.frames.append(Frame(fn.body, fn.id, cost_multiplier=1.0))
    elif isinstance(op, HostCall):
        args = [eval_expr(machine, core, state, a) for a in op.args[:4]]
        while len(args) < 4:
            args.append(0)
        core.ledger.hostcalls += 1
        core.begin_hostcall(op.number, tuple(args), _stack_pointer(machine, core, state))
    elif isinstance(op, Barrier):
        core.barrier_group = op.group
    elif isinstance(op, Return):
        word = eval_expr(machine, core, state, op.value)
        state.frames.pop()
        if not state.frames:
            state.return_word = word
            core.last_return = word
            core.state = CoreState.SYSCORE_WAIT
            core.interp = None
    else:
        raise ConfigError(f"unknown op {op!r}")


def _stack_pointer(machine, core, state) -> int:
    stack = machine.image.segment("stack")
    top = stack.base + stack.size - sum(f.block.stack_bytes for f in state.frames)
    try:
        return machine.memory.local_address(core.row, core.col, top)
    except MeshrtError:
        return top  # shadowed page: record the raw offset


def interpret(machine, core, fn, argv: int):
    """Run one function on one core to completion; returns (word, ledger)."""
    from . import engine

    machine.signal_start(core, machine.image.fn_addresses[fn.id], argv)
    engine.run_until_idle(machine)
    return core.last_return, core.ledger


# -- JSON codec (manifest files) -------------------------------------------

_BIN_EXPRS = {"add": Add, "sub": Sub, "mul": Mul, "mod": Mod}


def expr_to_json(expr):
    if isinstance(expr, Lit):
        return {"lit": expr.value}
    if isinstance(expr, Arg):
        return {"arg": expr.index}
    if isinstance(expr, CoreRow):
        return {"core": "row"}
    if isinstance(expr, CoreCol):
        return {"core": "col"}
    for name, cls in _BIN_EXPRS.items():
        if isinstance(expr, cls):
            return {name: [expr_to_json(expr.left), expr_to_json(expr.right)]}
    if isinstance(expr, Load):
        return {"load": expr_to_json(expr.addr)}
    if isinstance(expr, LocalAddr):
        return {"local": [expr_to_json(expr.row), expr_to_json(expr.col), expr_to_json(expr.offset)]}
    raise ConfigError(f"cannot serialize expression {expr!r}")


def expr_from_json(data):
    if not isinstance(data, dict) or len(data) != 1:
        raise ConfigError(f"bad expression {data!r}")
    key, value = next(iter(data.items()))
    if key == "lit":
        return Lit(int(value))
    if key == "arg":
        return Arg(int(value))
    if key == "core":
        return {"row": CoreRow(), "col": CoreCol()}[value]
    if key in _BIN_EXPRS:
        return _BIN_EXPRS[key](expr_from_json(value[0]), expr_from_json(value[1]))
    if key == "load":
        return Load(expr_from_json(value))
    if key == "local":
        return LocalAddr(*(expr_from_json(v) for v in value))
    raise ConfigError(f"unknown expression key {key!r}")


def op_to_json(op):
    if isinstance(op, Compute):
        return {"op": "compute", "us": op.cost_us}
    if isinstance(op, ReadOp):
        return {"op": "read", "addr": expr_to_json(op.addr), "len": op.length}
    if isinstance(op, WriteOp):
        return {"op": "write", "addr": expr_to_json(op.addr), "value": expr_to_json(op.value)}
    if isinstance(op, CopyOnChip):
        return {"op": "copy", "src": expr_to_json(op.src), "dst": expr_to_json(op.dst), "len": op.length}
    if isinstance(op, CallLocal):
        return {"op": "call", "fn": op.fn_id}
    if isinstance(op, CallDynamic):
        return {"op": "dyncall", "fn": op.fn_id}
    if isinstance(op, HostCall):
        return {"op": "hostcall", "number": op.number, "args": [expr_to_json(a) for a in op.args]}
    if isinstance(op, Barrier):
        return {"op": "barrier", "group": op.group}
    if isinstance(op, Return):
        return {"op": "return", "value": expr_to_json(op.value)}
    raise ConfigError(f"cannot serialize op {op!r}")


def op_from_json(data):
    kind = data.get("op")
    if kind == "compute":
        return Compute(float(data["us"]))
    if kind == "read":
        return ReadOp(expr_from_json(data["addr"]), int(data["len"]))
    if kind == "write":
        return WriteOp(expr_from_json(data["addr"]), expr_from_json(data["value"]))
    if kind == "copy":
        return CopyOnChip(expr_from_json(data["src"]), expr_from_json(data["dst"]), int(data["len"]))
    if kind == "call":
        return CallLocal(int(data["fn"]))
    if kind == "dyncall":
        return CallDynamic(int(data["fn"]))
    if kind == "hostcall":
        return HostCall(int(data["number"]), tuple(expr_from_json(a) for a in data.get("args", [])))
    if kind == "barrier":
        return Barrier(int(data.get("group", 0)))
    if kind == "return":
        return Return(expr_from_json(data["value"]))
    raise ConfigError(f"unknown op kind {kind!r}")


def block_to_json(block: KernelBlock) -> dict:
    return {
        "stack_bytes": block.stack_bytes,
        "num_args": block.num_args,
        "ops": [op_to_json(op) for op in block.ops],
    }


def block_from_json(data: dict) -> KernelBlock:
    return KernelBlock(
        ops=tuple(op_from_json(op) for op in data.get("ops", [])),
        stack_bytes=int(data.get("stack_bytes", 0)),
        num_args=int(data.get("num_args", 0)),
    )


# -- binary codec (image files) ---------------------------------------------

_EXPR_TAGS = [
    (Lit, 0),
    (Arg, 1),
    (CoreRow, 2),
    (CoreCol, 3),
    (Add, 4),
    (Sub, 5),
    (Mul, 6),
    (Mod, 7),
    (Load, 8),
    (LocalAddr, 9),
]
_TAG_TO_EXPR = {tag: cls for cls, tag in _EXPR_TAGS}


def _encode_expr(expr, out: bytearray) -> None:
    for cls, tag in _EXPR_TAGS:
        if isinstance(expr, cls):
            out.append(tag)
            break
    else:
        raise ConfigError(f"cannot encode expression {expr!r}")
    if isinstance(expr, Lit):
        out += struct.pack("<I", expr.value & MASK32)
    elif isinstance(expr, Arg):
        out.append(expr.index)
    elif isinstance(expr, (Add, Sub, Mul, Mod)):
        _encode_expr(expr.left, out)
        _encode_expr(expr.right, out)
    elif isinstance(expr, Load):
        _encode_expr(expr.addr, out)
    elif isinstance(expr, LocalAddr):
        _encode_expr(expr.row, out)
        _encode_expr(expr.col, out)
        _encode_expr(expr.offset, out)


def _decode_expr(data: bytes, pos: int):
    tag = data[pos]
    pos += 1
    cls = _TAG_TO_EXPR.get(tag)
    if cls is Lit:
        return Lit(struct.unpack_from("<I", data, pos)[0]), pos + 4
    if cls is Arg:
        return Arg(data[pos]), pos + 1
    if cls is CoreRow:
        return CoreRow(), pos
    if cls is CoreCol:
        return CoreCol(), pos
    if cls in (Add, Sub, Mul, Mod):
        left, pos = _decode_expr(data, pos)
        right, pos = _decode_expr(data, pos)
        return cls(left, right), pos
    if cls is Load:
        addr, pos = _decode_expr(data, pos)
        return Load(addr), pos
    if cls is LocalAddr:
        row, pos = _decode_expr(data, pos)
        col, pos = _decode_expr(data, pos)
        offset, pos = _decode_expr(data, pos)
        return LocalAddr(row, col, offset), pos
    raise ConfigError(f"unknown expression tag {tag}")


def encode_block(block: KernelBlock) -> bytes:
    out = bytearray(struct.pack("<IHH", block.stack_bytes, block.num_args, len(block.ops)))
    for op in block.ops:
        if isinstance(op, Compute):
            out.append(0)
            out += struct.pack("<d", op.cost_us)
        elif isinstance(op, ReadOp):
            out.append(1)
            _encode_expr(op.addr, out)
            out += struct.pack("<I", op.length)
        elif isinstance(op, WriteOp):
            out.append(2)
            _encode_expr(op.addr, out)
            _encode_expr(op.value, out)
        elif isinstance(op, CopyOnChip):
            out.append(3)
            _encode_expr(op.src, out)
            _encode_expr(op.dst, out)
            out += struct.pack("<I", op.length)
        elif isinstance(op, CallLocal):
            out.append(4)
            out += struct.pack("<H", op.fn_id)
        elif isinstance(op, CallDynamic):
            out.append(5)
            out += struct.pack("<H", op.fn_id)
        elif isinstance(op, HostCall):
            out.append(6)
            out += struct.pack("<IB", op.number, len(op.args))
            for arg in op.args:
                _encode_expr(arg, out)
        elif isinstance(op, Barrier):
            out.append(7)
            out += struct.pack("<H", op.group)
        elif isinstance(op, Return):
            out.append(8)
            _encode_expr(op.value, out)
        else:
            raise ConfigError(f"cannot encode op {op!r}")
    return bytes(out)


def decode_block(data: bytes) -> KernelBlock:
    stack_bytes, num_args, count = struct.unpack_from("<IHH", data, 0)
    pos = 8
    ops = []
    for _ in range(count):
        tag = data[pos]
        pos += 1
        if tag == 0:
            (cost,) = struct.unpack_from("<d", data, pos)
            pos += 8
            ops.append(Compute(cost))
        elif tag == 1:
            addr, pos = _decode_expr(data, pos)
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            ops.append(ReadOp(addr, length))
        elif tag == 2:
            addr, pos = _decode_expr(data, pos)
            value, pos = _decode_expr(data, pos)
            ops.append(WriteOp(addr, value))
        elif tag == 3:
            src, pos = _decode_expr(data, pos)
            dst, pos = _decode_expr(data, pos)
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            ops.append(CopyOnChip(src, dst, length))
        elif tag == 4:
            (fn_id,) = struct.unpack_from("<H", data, pos)
            pos += 2
            ops.append(CallLocal(fn_id))
        elif tag == 5:
            (fn_id,) = struct.unpack_from("<H", data, pos)
            pos += 2
            ops.append(CallDynamic(fn_id))
        elif tag == 6:
            number, argc = struct.unpack_from("<IB", data, pos)
            pos += 5
            args = []
            for _ in range(argc):
                arg, pos = _decode_expr(data, pos)
                args.append(arg)
            ops.append(HostCall(number, tuple(args)))
        elif tag == 7:
            (group,) = struct.unpack_from("<H", data, pos)
            pos += 2
            ops.append(Barrier(group))
        elif tag == 8:
            value, pos = _decode_expr(data, pos)
            ops.append(Return(value))
        else:
            raise ConfigError(f"unknown op tag {tag}")
    return KernelBlock(ops=tuple(ops), stack_bytes=stack_bytes, num_args=num_args)
