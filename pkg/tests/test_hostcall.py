"""Host-call proxying: ranges, the daemon, built-ins, address portability."""

import random

import pytest

from conftest import kernel, loaded_machine, manifest_of
from meshrt import FunctionRecord, Machine, MeshConfig, execute
from meshrt.errors import (
    DeadlockError,
    DuplicateNumber,
    InvalidAddress,
    ReservedNumber,
)
from meshrt.hostcall import (
    ERROR_WORD,
    HC_CLOSE,
    HC_DFREE,
    HC_DMALLOC,
    HC_OPEN,
    HC_PRINT,
    HC_WRITE,
    SharedAllocator,
    call_class,
)
from meshrt.kernel_vm import Compute, HostCall, Lit, Return
from meshrt.mesh import CoreState

CFG = MeshConfig(rows=1, cols=1, shared_size=1 << 20)


def hostcall_main(number, *args, extra_ops=()):
    body = kernel(*extra_ops, HostCall(number, tuple(Lit(a) for a in args)), Return(Lit(0)))
    return manifest_of(FunctionRecord(0, "main", 100, None, body, ))


class TestRanges:
    def test_dispatch_class_boundaries_exact(self):
        assert call_class(0) == "system"
        assert call_class(511) == "system"
        assert call_class(512) == "runtime"
        assert call_class(1023) == "runtime"
        assert call_class(1024) == "user"
        assert call_class(70000) == "user"

    def test_register_below_user_range_rejected(self):
        machine = Machine(CFG)
        for number in (0, 511, 512, 1023):
            with pytest.raises(ReservedNumber):
                machine.call_vector.register_user_call(number, lambda m, c, a: 0)

    def test_duplicate_registration_rejected(self):
        machine = Machine(CFG)
        machine.call_vector.register_user_call(1024, lambda m, c, a: 1)
        with pytest.raises(DuplicateNumber):
            machine.call_vector.register_user_call(1024, lambda m, c, a: 2)

    def test_registered_user_call_round_trips(self):
        machine, _ = loaded_machine(CFG, hostcall_main(1024))
        machine.call_vector.register_user_call(1024, lambda m, c, a: 0xBEEF)
        execute(machine, 0)
        box = machine.cores[(0, 0)].mailbox
        assert box.status == "done"
        assert box.return_slot == 0xBEEF

    def test_unbound_runtime_number_fails_that_call(self):
        machine, _ = loaded_machine(CFG, hostcall_main(1023))
        execute(machine, 0)
        box = machine.cores[(0, 0)].mailbox
        assert box.status == "failed"
        assert box.return_slot == ERROR_WORD


class TestTiming:
    def test_noop_user_call_waits_exactly_roundtrip(self):
        machine, _ = loaded_machine(CFG, hostcall_main(1024))
        machine.call_vector.register_user_call(1024, lambda m, c, a: 0)
        report = execute(machine, 0)
        assert report.elapsed_us == pytest.approx(41.0, abs=1e-12)
        assert machine.cores[(0, 0)].ledger.hostcall_wait_us == pytest.approx(41.0)

    def test_handler_cost_adds_to_wait(self):
        machine, _ = loaded_machine(CFG, hostcall_main(1024))
        machine.call_vector.register_user_call(1024, lambda m, c, a: 0, cost_us=9.0)
        assert execute(machine, 0).elapsed_us == pytest.approx(50.0)

    def test_deadlock_without_daemon(self):
        machine, _ = loaded_machine(CFG, hostcall_main(1024))
        machine.call_vector.register_user_call(1024, lambda m, c, a: 0)
        machine.daemon = None
        with pytest.raises(DeadlockError):
            execute(machine, 0)


class TestDaemon:
    def make_pending(self, machine, core, number, args=(0, 0, 0, 0)):
        core.state = CoreState.RUNNING
        core.begin_hostcall(number, args, 0)

    def test_poll_with_nothing_pending(self):
        machine = Machine(MeshConfig(rows=2, cols=2, shared_size=1 << 20))
        assert machine.daemon.poll(machine) == 0

    def test_simultaneous_requests_serviced_row_major(self):
        machine = Machine(MeshConfig(rows=2, cols=2, shared_size=1 << 20))
        order = []
        machine.call_vector.register_user_call(
            1500, lambda m, core, a: order.append((core.row, core.col)) or 0
        )
        for coords in ((1, 1), (0, 1), (1, 0)):
            self.make_pending(machine, machine.cores[coords], 1500)
        assert machine.daemon.poll(machine) == 3
        assert order == [(0, 1), (1, 0), (1, 1)]

    def test_raising_handler_fails_only_its_mailbox(self):
        machine = Machine(MeshConfig(rows=1, cols=2, shared_size=1 << 20))

        def boom(m, core, a):
            if core.col == 0:
                raise InvalidAddress("injected fault")
            return 7

        machine.call_vector.register_user_call(2000, boom)
        self.make_pending(machine, machine.cores[(0, 0)], 2000)
        self.make_pending(machine, machine.cores[(0, 1)], 2000)
        machine.daemon.poll(machine)
        assert machine.cores[(0, 0)].mailbox.status == "failed"
        assert machine.cores[(0, 0)].mailbox.return_slot == ERROR_WORD
        assert machine.cores[(0, 1)].mailbox.status == "done"
        assert machine.cores[(0, 1)].mailbox.return_slot == 7

    def test_blocked_core_runs_nothing_until_serviced(self):
        machine = Machine(CFG)
        core = machine.cores[(0, 0)]
        self.make_pending(machine, core, 1600)
        assert core.state is CoreState.HOSTCALL_SPIN
        machine.call_vector.register_user_call(1600, lambda m, c, a: 1)
        machine.daemon.poll(machine)
        assert core.state is CoreState.RUNNING


class TestBuiltins:
    def test_print_logged_with_core_tag(self):
        cfg = MeshConfig(rows=3, cols=2, shared_size=1 << 20)
        # the allocator is deterministic, so learn the staging address from a
        # scratch machine, then bake it into the kernel
        scratch, _ = loaded_machine(cfg, hostcall_main(HC_PRINT, 0, 5))
        msg = scratch.shared_alloc.alloc(8)
        machine, _ = loaded_machine(cfg, hostcall_main(HC_PRINT, msg, 5))
        assert machine.shared_alloc.alloc(8) == msg
        machine.memory.write_bytes(msg, b"hello\x00\x00\x00")
        execute(machine, 0)
        tags = {(r, c) for r, c, _ in machine.print_log.entries}
        assert (2, 1) in tags
        assert all(data == b"hello" for _, _, data in machine.print_log.entries)
        assert "(2,1) hello" in machine.print_log.text()

    def test_dmalloc_zero_rejected(self):
        machine, _ = loaded_machine(CFG, hostcall_main(HC_DMALLOC, 0))
        execute(machine, 0)
        box = machine.cores[(0, 0)].mailbox
        assert box.status == "failed" and box.return_slot == ERROR_WORD

    def test_dmalloc_returns_free_shared_space(self):
        machine, image = loaded_machine(CFG, hostcall_main(HC_DMALLOC, 256))
        execute(machine, 0)
        addr = machine.cores[(0, 0)].mailbox.return_slot
        usrmem = image.segment("usrmem")
        assert addr >= usrmem.base + usrmem.size
        machine.memory.write_bytes(addr, bytes(256))  # usable immediately

    def test_double_free_fails(self):
        machine = Machine(CFG)
        core = machine.cores[(0, 0)]
        core.state = CoreState.RUNNING
        core.begin_hostcall(HC_DMALLOC, (64, 0, 0, 0), 0)
        machine.daemon.poll(machine)
        addr = core.mailbox.return_slot
        core.begin_hostcall(HC_DFREE, (addr, 0, 0, 0), 0)
        machine.daemon.poll(machine)
        assert core.mailbox.status == "done"
        core.begin_hostcall(HC_DFREE, (addr, 0, 0, 0), 0)
        machine.daemon.poll(machine)
        assert core.mailbox.status == "failed"

    def test_allocator_random_sequence_stays_disjoint(self):
        alloc = SharedAllocator(base=1 << 20, size=1 << 16)
        rng = random.Random(77)
        live = {}
        for _ in range(2000):
            if live and rng.random() < 0.4:
                addr = rng.choice(sorted(live))
                alloc.free(addr)
                del live[addr]
            else:
                size = rng.randrange(1, 512)
                try:
                    addr = alloc.alloc(size)
                except InvalidAddress:
                    continue
                live[addr] = size
            spans = sorted((a, a + s) for a, s in alloc.live.items())
            for (a1, e1), (a2, _) in zip(spans, spans[1:]):
                assert e1 <= a2
            for a, e in spans:
                assert alloc.base <= a and e <= alloc.base + alloc.size

    def test_file_open_write_close_end_to_end(self):
        machine = Machine(CFG)
        core = machine.cores[(0, 0)]
        path_addr = machine.shared_alloc.alloc(16)
        machine.memory.write_bytes(path_addr, b"/out/result.txt\x00")
        data_addr = machine.shared_alloc.alloc(16)
        machine.memory.write_bytes(data_addr, b"mesh says hi")

        core.state = CoreState.RUNNING
        core.begin_hostcall(HC_OPEN, (path_addr, 0, 0, 0), 0)
        machine.daemon.poll(machine)
        fd = core.mailbox.return_slot
        assert fd >= 3
        core.begin_hostcall(HC_WRITE, (fd, data_addr, 12, 0), 0)
        machine.daemon.poll(machine)
        assert core.mailbox.return_slot == 12
        core.begin_hostcall(HC_CLOSE, (fd, 0, 0, 0), 0)
        machine.daemon.poll(machine)
        assert core.mailbox.status == "done"
        assert bytes(machine.hostfs.files["/out/result.txt"]) == b"mesh says hi"

    def test_write_to_unknown_fd_fails(self):
        machine = Machine(CFG)
        core = machine.cores[(0, 0)]
        core.state = CoreState.RUNNING
        core.begin_hostcall(HC_WRITE, (55, machine.config.shared_base, 4, 0), 0)
        machine.daemon.poll(machine)
        assert core.mailbox.status == "failed"


class TestAddressPortability:
    def test_two_level_pointer_reads_identical_bytes(self):
        # the handler follows address -> address -> bytes; a core-side read of
        # the same stored addresses yields the same bytes
        machine = Machine(CFG)
        payload = machine.shared_alloc.alloc(16)
        machine.memory.write_bytes(payload, b"through the UVA!")
        inner = machine.shared_alloc.alloc(8)
        machine.memory.write_word(inner, payload)
        outer = machine.shared_alloc.alloc(8)
        machine.memory.write_word(outer, inner)

        seen = {}

        def follow(m, core, args):
            level1 = m.memory.read_word(args[0])
            level2 = m.memory.read_word(level1)
            seen["host"] = m.memory.read_bytes(level2, 16)
            return 0

        machine.call_vector.register_user_call(3000, follow)
        core = machine.cores[(0, 0)]
        core.state = CoreState.RUNNING
        core.begin_hostcall(3000, (outer, 0, 0, 0), 0)
        machine.daemon.poll(machine)

        core_side = machine.memory.read_bytes(
            machine.memory.read_word(machine.memory.read_word(outer)), 16
        )
        assert seen["host"] == core_side == b"through the UVA!"

    def test_mailbox_records_stack_pointer(self):
        machine, image = loaded_machine(CFG, hostcall_main(1024))
        machine.call_vector.register_user_call(1024, lambda m, c, a: 0)
        execute(machine, 0)
        box = machine.cores[(0, 0)].mailbox
        stack = image.segment("stack")
        row, col = machine.memory.plane_coords(0, 0)
        offset = box.stack_register_value & 0xFFFFF
        assert stack.base <= offset <= stack.base + stack.size
