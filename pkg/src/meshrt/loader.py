"""Program loading: one-time system initialization, serial and tree user-code
distribution, hot loading, and execute/re-execute signaling.

The serial loader performs one host copy per core, so its cost grows linearly
with the core count.  The tree loader copies the user segment to core 0 once,
then doubles the holder set each round over the on-chip network: round r has
every core k < 2^r forward to core k + 2^r (row-major numbering, nonexistent
targets skipped), finishing in ceil(log2 N) rounds.  Loading usrmem is one
host copy to shared memory under either strategy.

Because cores park in a wait loop inside syscore between kernels, user
segments can be replaced while the machine stays up (hot load), and a loaded
kernel re-executes with nothing but a signal: no bytes move at all.
"""

import math
from dataclasses import dataclass, field

from . import engine
from .errors import AlreadyInitialized, ConfigError, NoImageLoaded, NotInWaitState
from .dyncall import DcCoreState
from .layout import ProgramImage
from .mesh import CopyReport, CoreState, Machine


@dataclass
class LoadReport:
    """One row of the loader benchmark CSV."""

    strategy: str
    n: int
    payload_bytes: int
    offchip_copies: int
    onchip_copies: int
    rounds: int
    elapsed_us: float

    CSV_COLUMNS = "strategy,N,payload_bytes,offchip_copies,onchip_copies,rounds,elapsed_us"

    def csv_row(self) -> str:
        return (
            f"{self.strategy},{self.n},{self.payload_bytes},{self.offchip_copies},"
            f"{self.onchip_copies},{self.rounds},{self.elapsed_us:.6f}"
        )


@dataclass
class RunReport:
    """Result of one execute or re-execute episode."""

    elapsed_us: float
    signals: int
    copy: CopyReport  # loader-side movement; zero for signal-only paths
    return_words: dict = field(default_factory=dict)
    kernel_bytes_moved: int = 0


def tree_rounds(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def _require_waiting(machine: Machine) -> None:
    busy = [c for c in machine.cores.values() if c.state is not CoreState.SYSCORE_WAIT]
    if busy:
        core = busy[0]
        raise NotInWaitState(f"core ({core.row},{core.col}) is {core.state.name}")


def _check_geometry(machine: Machine, image: ProgramImage) -> None:
    if image.local_mem_bytes != machine.config.local_mem_bytes:
        raise ConfigError("image was built for a different local memory size")
    if machine.image is not None and machine.image.params != image.params:
        raise ConfigError("image system-segment sizes differ from the initialized ones")


def _deliver_tree(machine: Machine, base: int, payload: bytes) -> CopyReport:
    """One host copy to core 0, then doubling rounds over the NoC."""
    cores = machine.cores_rowmajor()
    n = len(cores)
    report = machine.offchip_copy_to_core(cores[0].row, cores[0].col, base, payload)
    rounds = tree_rounds(n)
    for r in range(rounds):
        span = 1 << r
        round_elapsed = 0.0
        for k in range(span):
            target = k + span
            if target >= n:
                continue
            src, dst = cores[k], cores[target]
            step = machine.onchip_copy_between_cores(
                (src.row, src.col), (dst.row, dst.col), base, len(payload)
            )
            report.onchip_copies += step.onchip_copies
            report.bytes_moved += step.bytes_moved
            round_elapsed = max(round_elapsed, step.elapsed)
        report.elapsed += round_elapsed
    report.rounds = rounds
    return report


def _deliver_serial(machine: Machine, base: int, payload: bytes) -> CopyReport:
    """Independent host copies to every core, executed back to back."""
    report = CopyReport()
    for core in machine.cores_rowmajor():
        step = machine.offchip_copy_to_core(core.row, core.col, base, payload)
        report.offchip_copies += 1
        report.bytes_moved += step.bytes_moved
        report.elapsed += step.elapsed
    return report


def _merge(total: CopyReport, part: CopyReport) -> None:
    total.bytes_moved += part.bytes_moved
    total.offchip_copies += part.offchip_copies
    total.onchip_copies += part.onchip_copies
    total.elapsed += part.elapsed
    total.rounds += part.rounds


def init_syscore(machine: Machine, image: ProgramImage) -> CopyReport:
    """Load system segments once and park every core in the wait loop."""
    if machine.initialized:
        raise AlreadyInitialized("system segments already loaded")
    if any(core.state is not CoreState.OFF for core in machine.cores.values()):
        raise AlreadyInitialized("cores are not all off")
    _check_geometry(machine, image)

    syscore = image.segment("syscore")
    report = _deliver_tree(machine, syscore.base, syscore.payload)
    sysmem = image.segment("sysmem")
    _merge(report, machine.offchip_copy(sysmem.base, sysmem.payload))

    machine.image = image
    machine.initialized = True
    for core in machine.cores.values():
        core.enter_wait()
    return report


def _finish_user_load(machine: Machine, image: ProgramImage) -> None:
    machine.image = image
    machine.user_loaded = True
    machine.last_argv = None
    for core in machine.cores.values():
        core.dc = DcCoreState()
    usrmem = image.segment("usrmem")
    arena_base = (usrmem.base + usrmem.size + 7) // 8 * 8
    arena_size = machine.config.shared_base + machine.config.shared_size - arena_base
    if (machine.shared_alloc.base, machine.shared_alloc.size) != (arena_base, arena_size):
        machine.shared_alloc.rebase(arena_base, arena_size)


def serial_load(machine: Machine, image: ProgramImage) -> CopyReport:
    """The pre-redesign path: usrcore copied from the host to each core."""
    _require_waiting(machine)
    _check_geometry(machine, image)
    usrcore = image.segment("usrcore")
    report = _deliver_serial(machine, usrcore.base, usrcore.payload)
    usrmem = image.segment("usrmem")
    _merge(report, machine.offchip_copy(usrmem.base, usrmem.payload))
    _finish_user_load(machine, image)
    return report


def tree_load(machine: Machine, image: ProgramImage) -> CopyReport:
    """One host copy of usrcore to core 0, logarithmic on-chip fan-out."""
    _require_waiting(machine)
    _check_geometry(machine, image)
    usrcore = image.segment("usrcore")
    report = _deliver_tree(machine, usrcore.base, usrcore.payload)
    usrmem = image.segment("usrmem")
    _merge(report, machine.offchip_copy(usrmem.base, usrmem.payload))
    _finish_user_load(machine, image)
    return report


def hot_load(
    machine: Machine, image: ProgramImage, include_usrmem: bool = True
) -> CopyReport:
    """Replace user segments while cores idle inside syscore.

    System segments are untouched byte for byte; cost scales with the size of
    the application-specific code only.
    """
    if not machine.initialized:
        raise NotInWaitState("initialize system segments before hot loading")
    _require_waiting(machine)
    _check_geometry(machine, image)
    usrcore = image.segment("usrcore")
    report = _deliver_tree(machine, usrcore.base, usrcore.payload)
    if include_usrmem:
        usrmem = image.segment("usrmem")
        _merge(report, machine.offchip_copy(usrmem.base, usrmem.payload))
    _finish_user_load(machine, image)
    return report


def execute(machine: Machine, argv: int) -> RunReport:
    """Signal every core to the usrcore entry point and run to completion."""
    if not machine.user_loaded:
        raise NoImageLoaded("no user image loaded")
    _require_waiting(machine)
    machine.begin_episode()
    entry = machine.image.segment("usrcore").base
    cores = machine.cores_rowmajor()
    for core in cores:
        machine.signal_start(core, entry, argv)
    machine.last_argv = argv
    elapsed = engine.run_until_idle(machine)
    return RunReport(
        elapsed_us=elapsed,
        signals=len(cores),
        copy=CopyReport(),
        return_words={(c.row, c.col): c.last_return for c in cores},
        kernel_bytes_moved=machine.episode_bytes_moved,
    )


def re_execute(machine: Machine) -> RunReport:
    """Run the loaded kernel again; nothing is copied, only signals are sent."""
    if not machine.user_loaded or machine.last_argv is None:
        raise NoImageLoaded("nothing executed yet on this machine")
    return execute(machine, machine.last_argv)


def load_report(strategy: str, machine: Machine, image: ProgramImage, copy: CopyReport) -> LoadReport:
    return LoadReport(
        strategy=strategy,
        n=machine.config.core_count,
        payload_bytes=image.segment("usrcore").size,
        offchip_copies=copy.offchip_copies,
        onchip_copies=copy.onchip_copies,
        rounds=copy.rounds,
        elapsed_us=copy.elapsed,
    )
