"""Scenario files: one JSON description of a machine, a program and a run.

A scenario names the mesh configuration, either a manifest file or a built-in
workload, the loader strategy, and a PRNG seed.  Running it is deterministic:
the same scenario file produces byte-identical reports, CSV and memory-state
hashes.  The seed is recorded in every output.
"""

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import loader, workloads
from .errors import MeshrtError, ScenarioError
from .layout import LayoutParams, ProgramManifest, build_image, load_manifest
from .loader import LoadReport, RunReport
from .mesh import Machine, MeshConfig, mesh_shape
from .workloads import CannonSpec, Variant


def _parse_int(value) -> int:
    if isinstance(value, str):
        return int(value, 0)  # allows "0x8E000000"
    return int(value)


def config_from_json(data: dict) -> MeshConfig:
    known = {
        "rows", "cols", "local_mem_bytes", "shared_base", "shared_size",
        "row_base", "col_base", "offchip_bandwidth", "onchip_bandwidth",
        "copy_setup_latency", "hostcall_roundtrip", "globalmem_fetch_penalty",
        "dc_indirection_latency",
    }
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown mesh config keys {sorted(unknown)}")
    kwargs = dict(data)
    for key in ("local_mem_bytes", "shared_base", "shared_size"):
        if key in kwargs:
            kwargs[key] = _parse_int(kwargs[key])
    return MeshConfig(**kwargs)


def config_for_core_count(n: int, template: MeshConfig | None = None) -> MeshConfig:
    """Most-square mesh for n cores; a full 64x64 plane drops to origin (0,0)."""
    rows, cols = mesh_shape(n)
    base = template or MeshConfig()
    row_base, col_base = base.row_base, base.col_base
    if rows + row_base > 64 or cols + col_base > 64:
        row_base, col_base = 0, 0
    return MeshConfig(
        rows=rows,
        cols=cols,
        local_mem_bytes=base.local_mem_bytes,
        shared_base=base.shared_base,
        shared_size=base.shared_size,
        row_base=row_base,
        col_base=col_base,
        offchip_bandwidth=base.offchip_bandwidth,
        onchip_bandwidth=base.onchip_bandwidth,
        copy_setup_latency=base.copy_setup_latency,
        hostcall_roundtrip=base.hostcall_roundtrip,
        globalmem_fetch_penalty=base.globalmem_fetch_penalty,
        dc_indirection_latency=base.dc_indirection_latency,
    )


@dataclass
class Scenario:
    config: MeshConfig
    params: LayoutParams = LayoutParams()
    manifest: ProgramManifest | None = None
    cannon: tuple[CannonSpec, Variant] | None = None
    strategy: str = "tree"
    seed: int = 0
    argv_words: tuple[int, ...] = ()
    csv_path: str | None = None
    dump_hostfs: str | None = None
    dump_log: str | None = None


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file {path} does not exist")
    with open(path) as fh:
        data = json.load(fh)

    config = config_from_json(data.get("mesh", {}))
    params = LayoutParams(**data.get("layout", {}))
    strategy = data.get("loader", "tree")
    if strategy not in ("tree", "serial"):
        raise ScenarioError(f"unknown loader strategy {strategy!r}")

    manifest = None
    cannon = None
    if "manifest" in data:
        manifest_path = path.parent / data["manifest"]
        if not manifest_path.exists():
            raise ScenarioError(f"manifest file {manifest_path} does not exist")
        manifest = load_manifest(manifest_path)
    elif "workload" in data:
        wl = data["workload"]
        if wl.get("kind") != "cannon":
            raise ScenarioError(f"unknown workload kind {wl.get('kind')!r}")
        cannon = (CannonSpec(p=int(wl["p"]), n=int(wl["n"])), Variant(wl.get("variant", "all_local")))
    else:
        raise ScenarioError("scenario needs either a manifest or a workload")

    return Scenario(
        config=config,
        params=params,
        manifest=manifest,
        cannon=cannon,
        strategy=strategy,
        seed=int(data.get("seed", 0)),
        argv_words=tuple(_parse_int(w) for w in data.get("argv", ())),
        csv_path=data.get("csv"),
        dump_hostfs=data.get("dump_hostfs"),
        dump_log=data.get("dump_log"),
    )


@dataclass
class RunOutcome:
    """Everything one scenario run produced."""

    machine: Machine
    init_report: object
    load: LoadReport
    execute: RunReport
    re_execute: RunReport
    seed: int
    check_failures: list[str] = field(default_factory=list)
    cannon_pass: bool | None = None
    lines: list[str] = field(default_factory=list)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def csv(self) -> str:
        return (
            f"# seed={self.seed}\n{LoadReport.CSV_COLUMNS}\n{self.load.csv_row()}\n"
        )


def run_scenario(scn: Scenario, check: bool = False) -> RunOutcome:
    machine = Machine(scn.config)
    plan = None
    if scn.cannon is not None:
        spec, variant = scn.cannon
        manifest, plan = workloads.build_cannon(spec, variant, scn.config, scn.params)
    else:
        manifest = scn.manifest
    image = build_image(manifest, scn.config, scn.params)

    init_report = loader.init_syscore(machine, image)
    load_fn = loader.tree_load if scn.strategy == "tree" else loader.serial_load
    copy = load_fn(machine, image)
    load = loader.load_report(scn.strategy, machine, image, copy)

    if plan is not None:
        rng = random.Random(scn.seed)
        spec, variant = scn.cannon
        a = workloads.gen_matrix(spec.matrix_dim, rng)
        b = workloads.gen_matrix(spec.matrix_dim, rng)
        staging = workloads.stage_inputs(machine, plan, a, b)
        argv = staging.argv
    else:
        argv = machine.shared_alloc.alloc(max(4 * len(scn.argv_words), 8))
        for i, word in enumerate(scn.argv_words):
            machine.memory.write_word(argv + 4 * i, word)

    exec_report = loader.execute(machine, argv)
    reexec_report = loader.re_execute(machine)

    outcome = RunOutcome(
        machine=machine,
        init_report=init_report,
        load=load,
        execute=exec_report,
        re_execute=reexec_report,
        seed=scn.seed,
    )

    lines = outcome.lines
    lines.append(f"seed: {scn.seed}")
    lines.append(
        f"load [{scn.strategy}]: N={load.n} payload={load.payload_bytes} "
        f"offchip={load.offchip_copies} onchip={load.onchip_copies} "
        f"rounds={load.rounds} elapsed_us={load.elapsed_us:.6f}"
    )
    lines.append(
        f"execute: elapsed_us={exec_report.elapsed_us:.6f} signals={exec_report.signals}"
    )
    lines.append(
        f"re-execute: elapsed_us={reexec_report.elapsed_us:.6f} "
        f"signals={reexec_report.signals} bytes_moved={reexec_report.copy.bytes_moved}"
    )

    if plan is not None:
        result = workloads.collect_output(machine, plan, staging)
        expected = workloads.dense_multiply(a, b)
        outcome.cannon_pass = result == expected
        lines.append(
            f"cannon p={spec.p} n={spec.n} {variant.value}: "
            f"{'PASS' if outcome.cannon_pass else 'FAIL'} against dense oracle"
        )
        if check and not outcome.cannon_pass:
            outcome.check_failures.append("cannon output differs from oracle")

    if check:
        n = scn.config.core_count
        if scn.strategy == "tree":
            if load.offchip_copies != 2 or load.onchip_copies != n - 1:
                outcome.check_failures.append("tree load copy counts violate the law")
        else:
            if load.offchip_copies != n + 1:
                outcome.check_failures.append("serial load copy counts violate the law")
        if reexec_report.copy.bytes_moved != 0:
            outcome.check_failures.append("re-execute moved bytes")

    log_text = machine.print_log.text()
    if log_text:
        lines.append("host-call log:")
        lines.extend("  " + line for line in log_text.rstrip("\n").split("\n"))
    else:
        lines.append("host-call log: empty")
    lines.append(f"memory-state hash: {machine.memory_state_hash()}")

    if scn.csv_path:
        Path(scn.csv_path).write_text(outcome.csv())
    if scn.dump_log:
        Path(scn.dump_log).write_text(log_text)
    if scn.dump_hostfs:
        root = Path(scn.dump_hostfs)
        root.mkdir(parents=True, exist_ok=True)
        for name, content in sorted(machine.hostfs.files.items()):
            target = root / name.lstrip("/").replace("/", "_")
            target.write_bytes(bytes(content))
    return outcome


def bench_load(
    ns: list[int],
    payload_bytes: int,
    template: MeshConfig | None = None,
    seed: int = 0,
) -> tuple[str, list[LoadReport]]:
    """Sweep serial and tree loads over core counts; returns (csv text, rows)."""
    from .kernel_vm import KernelBlock, Return
    from .layout import STUB_BYTES, FunctionRecord

    if payload_bytes <= STUB_BYTES:
        raise ScenarioError(f"payload must exceed the {STUB_BYTES}-byte launch stub")
    rows: list[LoadReport] = []
    for n in ns:
        config = config_for_core_count(n, template)
        manifest = ProgramManifest(
            functions=(
                FunctionRecord(
                    0, "payload", payload_bytes - STUB_BYTES,
                    body=KernelBlock(ops=(Return(),)),
                ),
            ),
            entry=0,
        )
        image = build_image(manifest, config)
        for strategy, fn in (("serial", loader.serial_load), ("tree", loader.tree_load)):
            machine = Machine(config)
            loader.init_syscore(machine, image)
            copy = fn(machine, image)
            rows.append(loader.load_report(strategy, machine, image, copy))
    csv = f"# seed={seed}\n{LoadReport.CSV_COLUMNS}\n"
    csv += "".join(row.csv_row() + "\n" for row in rows)
    return csv, rows
