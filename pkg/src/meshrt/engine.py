"""Deterministic execution engine.

Cores advance on private clocks, stepped one op at a time in row-major order;
the host daemon is polled after every event so a pending host call is serviced
before the next op anywhere on the mesh, which makes the core-side wait a pure
constant.  Concurrency composes by maximum: the elapsed time of an episode is
the largest per-core clock advance among its participants.  Barriers realign
the clocks of everything still live in the episode.
"""

from .errors import DeadlockError
from .mesh import Core, CoreState, Machine

_LIVE = (CoreState.RUNNING, CoreState.HOSTCALL_SPIN)


def run_until_idle(machine: Machine) -> float:
    """Drive the mesh until every core is parked; returns episode elapsed us."""
    from . import kernel_vm

    participants = [c for c in machine.cores_rowmajor() if c.state in _LIVE]
    if not participants:
        return 0.0
    start = {(c.row, c.col): c.clock for c in participants}

    while True:
        stepped = False
        for core in participants:
            if core.state is CoreState.RUNNING and core.barrier_group is None:
                kernel_vm.step(machine, core)
                stepped = True
                _service_hostcalls(machine)
                _release_barriers(machine, participants)
        live = [c for c in participants if c.state in _LIVE]
        if not live:
            break
        if not stepped:
            if machine.daemon is not None and _service_hostcalls(machine):
                continue
            spinning = [c for c in live if c.state is CoreState.HOSTCALL_SPIN]
            if spinning:
                raise DeadlockError(
                    f"{len(spinning)} core(s) spin on host calls with no daemon registered"
                )
            raise DeadlockError("cores blocked at a barrier that can never release")

    return max(c.clock - start[(c.row, c.col)] for c in participants)


def _service_hostcalls(machine: Machine) -> int:
    if machine.daemon is None:
        return 0
    if not any(c.mailbox.status == "pending" for c in machine.cores.values()):
        return 0
    return machine.daemon.poll(machine)


def _release_barriers(machine: Machine, participants: list[Core]) -> None:
    """Release a barrier group once every still-live participant has arrived.

    Cores that already returned to the wait loop are not waited for; a core
    spinning on a host call has not arrived yet, so its group keeps waiting.
    """
    live = [c for c in participants if c.state in _LIVE]
    if not live:
        return
    groups = {c.barrier_group for c in live}
    if len(groups) != 1:
        return
    group = groups.pop()
    if group is None:
        return
    release_at = max(c.clock for c in live)
    for core in live:
        core.clock = release_at
        core.barrier_group = None
