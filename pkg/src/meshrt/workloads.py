"""Canned end-to-end programs; chiefly Cannon block matrix multiply on a PxP mesh.

Each core owns one block of A, one of B and accumulates one block of C in its
local data region.  The host pre-skews the inputs so that core (i,j) starts
with A(i, (j-i) mod P) and B((j-i) mod P, j); every round multiplies the
resident blocks and then shifts A one core right and B one core up, so after P
rounds each core has accumulated its full C block.  Inputs and outputs stage
through shared memory.

Four layout variants of the same program exercise placement policy: everything
local; one-time setup and communication helpers in global memory; additionally
the inner multiply in global memory (paying the fetch penalty every round); or
the inner multiply as a dynamic call (copied local on first use).  Matrix
elements are 32-bit integers so the host-side dense-multiply oracle compares
exactly.
"""

import random
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import loader
from .errors import ConfigError, SpecTooLarge
from .kernel_vm import (
    Add,
    Arg,
    Barrier,
    CallDynamic,
    CallLocal,
    Compute,
    CopyOnChip,
    CoreCol,
    CoreRow,
    KernelBlock,
    Lit,
    Load,
    LocalAddr,
    Mod,
    Mul,
    Placement,
    Return,
    WriteOp,
)
from .layout import (
    HC_SERVICE_BYTES,
    STUB_BYTES,
    FunctionRecord,
    LayoutParams,
    ProgramManifest,
    build_image,
)
from .mesh import Machine, MeshConfig


class Variant(Enum):
    ALL_LOCAL = "all_local"
    SELECTED_GLOBAL = "selected_global"
    INNER_GLOBAL = "inner_global"
    INNER_DYNAMIC = "inner_dynamic"


MAIN_ID, INIT_ID, COMM_ID, MULT_ID = 0, 1, 2, 3

# Declared code sizes (stand-ins for compiled size; drive the layout numbers).
MAIN_BYTES = 4800
INIT_BYTES = 1200
COMM_BYTES = 1576
MULT_BYTES = 1096

# Per-call declared compute costs, scaled with the work a block implies.
def _mult_us(n: int) -> float:
    return 0.8 * n**3


def _init_us(n: int) -> float:
    return 0.1 * n**2


def _comm_us(n: int) -> float:
    return 0.05 * n**2


@dataclass(frozen=True)
class CannonSpec:
    p: int  # mesh side; the program runs on exactly p x p cores
    n: int  # block dimension; full matrices are (p*n) x (p*n)

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ConfigError("cannon needs p >= 1 and n >= 1")

    @property
    def matrix_dim(self) -> int:
        return self.p * self.n

    @property
    def block_bytes(self) -> int:
        return 4 * self.n * self.n


@dataclass
class StagingPlan:
    """Where the workload's data lives, host- and core-side."""

    spec: CannonSpec
    data_base: int  # local offset of the workload data area
    slots: dict  # name -> local offset (buffer pointers used by the kernels)
    a_blocks: list  # core index -> (block row, block col) staged for A
    b_blocks: list
    data_end: int


@dataclass
class Staging:
    """Shared-memory addresses chosen at stage time."""

    a_stage: int
    b_stage: int
    c_out: int
    argv: int


# slot names for the pointer words the unrolled kernels communicate through
_SLOTS = ("a_ptr", "b_ptr", "a_src", "a_dst", "b_src", "b_dst")


def _me(offset_expr) -> LocalAddr:
    return LocalAddr(CoreRow(), CoreCol(), offset_expr)


def build_cannon(
    spec: CannonSpec,
    variant: Variant,
    config: MeshConfig,
    params: LayoutParams = LayoutParams(),
) -> tuple[ProgramManifest, StagingPlan]:
    """Generate the manifest (with unrolled kernel bodies) and data plan."""
    p, n = spec.p, spec.n
    if (config.rows, config.cols) != (p, p):
        raise ConfigError(f"cannon p={p} needs a {p}x{p} mesh, got {config.rows}x{config.cols}")

    # Fixed data area just past the largest (all-local) usrcore layout, so all
    # variants address the same buffers.
    usrcore_base = _align8(params.syscore_bytes + HC_SERVICE_BYTES)
    all_local_usrcore = STUB_BYTES + MAIN_BYTES + INIT_BYTES + COMM_BYTES + MULT_BYTES
    data_base = _align8(usrcore_base + all_local_usrcore)

    slots = {name: data_base + 4 * i for i, name in enumerate(_SLOTS)}
    blk = spec.block_bytes
    buf_base = _align8(data_base + 4 * len(_SLOTS))
    offs = {
        "a0": buf_base,
        "a1": buf_base + blk,
        "b0": buf_base + 2 * blk,
        "b1": buf_base + 3 * blk,
        "c": buf_base + 4 * blk,
    }
    data_end = buf_base + 5 * blk

    idx_expr = Add(Mul(CoreRow(), Lit(p)), CoreCol())

    # init: pull my staged blocks, zero C
    init_ops = [
        CopyOnChip(Add(Arg(0), Mul(idx_expr, Lit(blk))), _me(Lit(offs["a0"])), blk),
        CopyOnChip(Add(Arg(1), Mul(idx_expr, Lit(blk))), _me(Lit(offs["b0"])), blk),
    ]
    for e in range(n * n):
        init_ops.append(WriteOp(_me(Lit(offs["c"] + 4 * e)), Lit(0)))
    init_ops += [Compute(_init_us(n)), Return(Lit(0))]

    # comm: forward A right and B up, source/target buffers via pointer slots
    right_col = Mod(Add(CoreCol(), Lit(1)), Lit(p))
    up_row = Mod(Add(CoreRow(), Lit(p - 1)), Lit(p))
    comm_ops = [
        CopyOnChip(
            _me(Load(_me(Lit(slots["a_src"])))),
            LocalAddr(CoreRow(), right_col, Load(_me(Lit(slots["a_dst"])))),
            blk,
        ),
        CopyOnChip(
            _me(Load(_me(Lit(slots["b_src"])))),
            LocalAddr(up_row, CoreCol(), Load(_me(Lit(slots["b_dst"])))),
            blk,
        ),
        Compute(_comm_us(n)),
        Return(Lit(0)),
    ]

    # multiply: C += A_use * B_use with the use-buffers found through slots
    a_ptr = Load(_me(Lit(slots["a_ptr"])))
    b_ptr = Load(_me(Lit(slots["b_ptr"])))
    mult_ops = []
    for i in range(n):
        for j in range(n):
            c_addr = _me(Lit(offs["c"] + 4 * (i * n + j)))
            acc = Load(c_addr)
            for k in range(n):
                a_elem = Load(_me(Add(a_ptr, Lit(4 * (i * n + k)))))
                b_elem = Load(_me(Add(b_ptr, Lit(4 * (k * n + j)))))
                acc = Add(acc, Mul(a_elem, b_elem))
            mult_ops.append(WriteOp(c_addr, acc))
    mult_ops += [Compute(_mult_us(n)), Return(Lit(0))]

    # main: init, then P unrolled multiply/shift rounds, then write C back
    mult_call = CallDynamic(MULT_ID) if variant is Variant.INNER_DYNAMIC else CallLocal(MULT_ID)
    main_ops = [CallLocal(INIT_ID)]
    for r in range(p):
        use, alt = ("a0", "a1") if r % 2 == 0 else ("a1", "a0")
        use_b, alt_b = ("b0", "b1") if r % 2 == 0 else ("b1", "b0")
        main_ops += [
            WriteOp(_me(Lit(slots["a_ptr"])), Lit(offs[use])),
            WriteOp(_me(Lit(slots["b_ptr"])), Lit(offs[use_b])),
            mult_call,
        ]
        if r < p - 1:
            main_ops += [
                WriteOp(_me(Lit(slots["a_src"])), Lit(offs[use])),
                WriteOp(_me(Lit(slots["a_dst"])), Lit(offs[alt])),
                WriteOp(_me(Lit(slots["b_src"])), Lit(offs[use_b])),
                WriteOp(_me(Lit(slots["b_dst"])), Lit(offs[alt_b])),
                CallLocal(COMM_ID),
                Barrier(group=r + 1),
            ]
    main_ops += [
        CopyOnChip(_me(Lit(offs["c"])), Add(Arg(2), Mul(idx_expr, Lit(blk))), blk),
        Return(Lit(0)),
    ]

    placements = {
        Variant.ALL_LOCAL: {},
        Variant.SELECTED_GLOBAL: {INIT_ID: Placement.USRMEM_CALL, COMM_ID: Placement.USRMEM_CALL},
        Variant.INNER_GLOBAL: {
            INIT_ID: Placement.USRMEM_CALL,
            COMM_ID: Placement.USRMEM_CALL,
            MULT_ID: Placement.USRMEM_CALL,
        },
        Variant.INNER_DYNAMIC: {
            INIT_ID: Placement.USRMEM_CALL,
            COMM_ID: Placement.USRMEM_CALL,
            MULT_ID: Placement.DYNAMIC_CALL,
        },
    }[variant]

    def record(fn_id, name, size, ops, stack, num_args=0):
        return FunctionRecord(
            id=fn_id,
            name=name,
            size_bytes=size,
            placement=placements.get(fn_id, Placement.USRCORE_CALL),
            body=KernelBlock(ops=tuple(ops), stack_bytes=stack, num_args=num_args),
        )

    manifest = ProgramManifest(
        functions=(
            record(MAIN_ID, "cannon_main", MAIN_BYTES, main_ops, 128, num_args=3),
            record(INIT_ID, "cannon_init", INIT_BYTES, init_ops, 64),
            record(COMM_ID, "cannon_comm", COMM_BYTES, comm_ops, 64),
            record(MULT_ID, "block_multiply", MULT_BYTES, mult_ops, 64),
        ),
        entry=MAIN_ID,
    )

    plan = StagingPlan(
        spec=spec,
        data_base=data_base,
        slots={**slots, **offs},
        a_blocks=[(i, (j - i) % p) for i in range(p) for j in range(p)],
        b_blocks=[((j - i) % p, j) for i in range(p) for j in range(p)],
        data_end=data_end,
    )
    _check_fit(spec, plan, manifest, config, params)
    return manifest, plan


def _align8(v: int) -> int:
    return (v + 7) // 8 * 8


def _check_fit(spec, plan, manifest, config, params) -> None:
    image = build_image(manifest, config, params)
    dc_base = image.segment("dc_region").base
    if plan.data_end > dc_base:
        raise SpecTooLarge(
            f"data blocks end at {plan.data_end}, DC region starts at {dc_base}",
            limiting_term="block memory (5 buffers of n*n words)",
        )
    if plan.data_base < image.segment("usrcore").end:
        raise SpecTooLarge(
            "usrcore overruns the fixed data area",
            limiting_term="usrcore code size",
        )


# -- host-side data handling -------------------------------------------------


def gen_matrix(dim: int, rng: random.Random) -> list[list[int]]:
    """Random integer matrix with entries small enough for exact arithmetic."""
    return [[rng.randrange(256) for _ in range(dim)] for _ in range(dim)]


def dense_multiply(a: list[list[int]], b: list[list[int]]) -> list[list[int]]:
    """Brute-force oracle: exact integer dense multiply on the host."""
    return (np.array(a, dtype=np.int64) @ np.array(b, dtype=np.int64)).tolist()


def _block_bytes(matrix, bi: int, bj: int, n: int) -> bytes:
    out = bytearray()
    for r in range(bi * n, (bi + 1) * n):
        for c in range(bj * n, (bj + 1) * n):
            out += int(matrix[r][c]).to_bytes(4, "little")
    return bytes(out)


def stage_inputs(
    machine: Machine, plan: StagingPlan, a, b
) -> Staging:
    """Write pre-skewed blocks and the argument vector into shared memory."""
    spec = plan.spec
    blk = spec.block_bytes
    total = spec.p * spec.p * blk
    a_stage = machine.shared_alloc.alloc(total)
    b_stage = machine.shared_alloc.alloc(total)
    c_out = machine.shared_alloc.alloc(total)
    argv = machine.shared_alloc.alloc(12)
    for idx in range(spec.p * spec.p):
        machine.memory.write_bytes(a_stage + idx * blk, _block_bytes(a, *plan.a_blocks[idx], spec.n))
        machine.memory.write_bytes(b_stage + idx * blk, _block_bytes(b, *plan.b_blocks[idx], spec.n))
    machine.memory.write_bytes(c_out, bytes(total))
    for i, word in enumerate((a_stage, b_stage, c_out)):
        machine.memory.write_word(argv + 4 * i, word)
    return Staging(a_stage=a_stage, b_stage=b_stage, c_out=c_out, argv=argv)


def collect_output(machine: Machine, plan: StagingPlan, staging: Staging) -> list[list[int]]:
    spec = plan.spec
    dim, n, p, blk = spec.matrix_dim, spec.n, spec.p, spec.block_bytes
    out = [[0] * dim for _ in range(dim)]
    for idx in range(p * p):
        bi, bj = idx // p, idx % p
        raw = machine.memory.read_bytes(staging.c_out + idx * blk, blk)
        for e in range(n * n):
            word = int.from_bytes(raw[4 * e : 4 * e + 4], "little")
            out[bi * n + e // n][bj * n + e % n] = word
    return out


# -- end-to-end drivers -------------------------------------------------------


@dataclass
class CannonResult:
    variant: Variant
    usrcore_bytes: int
    elapsed_us: float
    matches_oracle: bool
    onchip_bytes: int
    result: list


def run_cannon(
    spec: CannonSpec,
    variant: Variant,
    config: MeshConfig,
    seed: int = 0,
    params: LayoutParams = LayoutParams(),
) -> CannonResult:
    """Fresh machine, one variant, compared against the oracle."""
    manifest, plan = build_cannon(spec, variant, config, params)
    image = build_image(manifest, config, params)
    machine = Machine(config)
    loader.init_syscore(machine, image)
    loader.tree_load(machine, image)
    rng = random.Random(seed)
    a = gen_matrix(spec.matrix_dim, rng)
    b = gen_matrix(spec.matrix_dim, rng)
    staging = stage_inputs(machine, plan, a, b)
    report = loader.execute(machine, staging.argv)
    result = collect_output(machine, plan, staging)
    expected = dense_multiply(a, b)
    return CannonResult(
        variant=variant,
        usrcore_bytes=image.usrcore_bytes,
        elapsed_us=report.elapsed_us,
        matches_oracle=result == expected,
        onchip_bytes=sum(c.ledger.onchip_bytes for c in machine.cores.values()),
        result=result,
    )


def run_variant_suite(
    spec: CannonSpec, config: MeshConfig, seed: int = 0, params: LayoutParams = LayoutParams()
) -> list[CannonResult]:
    """All four layout variants on identical inputs, in spec order."""
    return [run_cannon(spec, v, config, seed=seed, params=params) for v in Variant]
