"""Core array: copy cost model, run-state machine, deterministic engine."""

import random

import pytest

from conftest import compute_kernel, kernel, loaded_machine, manifest_of
from meshrt import FunctionRecord, Machine, MeshConfig, Placement, mesh_shape
from meshrt.engine import run_until_idle
from meshrt.errors import ConfigError, InvalidAddress, NotInWaitState
from meshrt.kernel_vm import Compute, Lit, Return
from meshrt.mesh import HOSTCALL_REQ_BIT, CoreState


def test_config_validation():
    with pytest.raises(ConfigError):
        MeshConfig(rows=0, cols=4)
    with pytest.raises(ConfigError):
        MeshConfig(offchip_bandwidth=1000.0, onchip_bandwidth=100.0)
    with pytest.raises(ConfigError):
        MeshConfig(globalmem_fetch_penalty=0.5)


def test_mesh_shape_factors():
    assert mesh_shape(1) == (1, 1)
    assert mesh_shape(2) == (1, 2)
    assert mesh_shape(16) == (4, 4)
    assert mesh_shape(4096) == (64, 64)
    assert mesh_shape(12) == (3, 4)


class TestCopies:
    def setup_method(self):
        self.machine = Machine(MeshConfig(rows=4, cols=4, shared_size=1 << 20))

    def test_offchip_zero_bytes_costs_setup_only(self):
        report = self.machine.offchip_copy(self.machine.config.shared_base, b"")
        assert report.elapsed == 10.0
        assert report.offchip_copies == 1

    def test_offchip_elapsed_formula(self):
        # 10 + 8192/100 computed by hand from the cost model
        report = self.machine.offchip_copy(self.machine.config.shared_base, bytes(8192))
        assert report.elapsed == pytest.approx(91.92, abs=1e-12)

    def test_onchip_elapsed_formula(self):
        # 10 + 8192/1000
        src = self.machine.memory.local_address(0, 0, 0)
        dst = self.machine.memory.local_address(0, 1, 0)
        self.machine.memory.write_bytes(src, bytes(range(256)) * 32)
        report = self.machine.onchip_copy(src, dst, 8192)
        assert report.elapsed == pytest.approx(18.192, abs=1e-12)
        assert report.onchip_copies == 1

    def test_onchip_zero_length_costs_setup(self):
        src = self.machine.memory.local_address(0, 0, 0)
        dst = self.machine.memory.local_address(1, 0, 0)
        assert self.machine.onchip_copy(src, dst, 0).elapsed == 10.0

    def test_onchip_copy_is_byte_identical(self):
        src = self.machine.memory.local_address(2, 1, 128)
        dst = self.machine.memory.local_address(3, 3, 256)
        payload = bytes(random.Random(5).randrange(256) for _ in range(512))
        self.machine.memory.write_bytes(src, payload)
        self.machine.onchip_copy(src, dst, 512)
        assert self.machine.memory.read_bytes(dst, 512) == payload

    def test_offchip_straddling_destination_fails(self):
        dst = self.machine.memory.local_address(0, 0, self.machine.config.local_mem_bytes - 4)
        with pytest.raises(InvalidAddress):
            self.machine.offchip_copy(dst, bytes(16))

    def test_onchip_requires_core_local_endpoint(self):
        base = self.machine.config.shared_base
        with pytest.raises(InvalidAddress):
            self.machine.onchip_copy(base, base + 64, 16)


class TestStateMachine:
    def test_runstate_register_encoding(self):
        core = Machine(MeshConfig(rows=1, cols=1, shared_size=1 << 20)).cores[(0, 0)]
        assert core.runstate == 0  # off
        core.state = CoreState.SYSCORE_WAIT
        assert core.runstate == 1
        core.state = CoreState.RUNNING
        assert core.runstate == 2
        core.state = CoreState.HOSTCALL_SPIN
        assert core.runstate == HOSTCALL_REQ_BIT | 2

    def test_hostcall_bit_iff_spinning(self):
        core = Machine(MeshConfig(rows=1, cols=1, shared_size=1 << 20)).cores[(0, 0)]
        for state in CoreState:
            core.state = state
            assert bool(core.runstate & HOSTCALL_REQ_BIT) == (state is CoreState.HOSTCALL_SPIN)

    def test_signal_waiting_core_runs(self, small_config):
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(1.0))))
        core = machine.cores[(0, 0)]
        machine.signal_start(core, image.segment("usrcore").base, 0)
        assert core.state is CoreState.RUNNING

    def test_signal_running_core_fails(self, small_config):
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(1.0))))
        core = machine.cores[(0, 0)]
        entry = image.segment("usrcore").base
        machine.signal_start(core, entry, 0)
        with pytest.raises(NotInWaitState):
            machine.signal_start(core, entry, 0)

    def test_signal_off_core_fails(self, small_config):
        machine = Machine(small_config)
        with pytest.raises(NotInWaitState):
            machine.signal_start(machine.cores[(0, 0)], 0, 0)

    def test_resignalable_after_kernel_returns(self, small_config):
        # the re-execute path: no load between runs, just another signal
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(2.0))))
        entry = image.segment("usrcore").base
        core = machine.cores[(0, 0)]
        machine.signal_start(core, entry, 0)
        run_until_idle(machine)
        assert core.state is CoreState.SYSCORE_WAIT
        machine.signal_start(core, entry, 0)
        assert core.state is CoreState.RUNNING

    def test_state_fuzz_never_escapes_invariants(self, small_config):
        # random legal/illegal pokes at the state machine; invariants hold
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(0.5))))
        entry = image.segment("usrcore").base
        rng = random.Random(1234)
        for _ in range(500):
            core = machine.cores[(rng.randrange(2), rng.randrange(2))]
            action = rng.choice(("signal", "run", "park"))
            try:
                if action == "signal":
                    machine.signal_start(core, entry, 0)
                elif action == "run":
                    run_until_idle(machine)
                else:
                    core.enter_wait()
            except NotInWaitState:
                pass
            for c in machine.cores.values():
                assert bool(c.runstate & HOSTCALL_REQ_BIT) == (c.state is CoreState.HOSTCALL_SPIN)
                assert c.state in CoreState


class TestEngine:
    def test_empty_machine_elapses_zero(self, small_config):
        assert run_until_idle(Machine(small_config)) == 0.0

    def test_single_compute_cost_passthrough(self, small_config):
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(100.0))))
        core = machine.cores[(0, 0)]
        machine.signal_start(core, image.segment("usrcore").base, 0)
        assert run_until_idle(machine) == pytest.approx(100.0)

    def test_concurrent_cores_compose_by_max(self, small_config):
        manifest = manifest_of(
            FunctionRecord(0, "f100", 100, None, compute_kernel(100.0)),
            FunctionRecord(1, "f250", 100, None, compute_kernel(250.0)),
        )
        machine, image = loaded_machine(small_config, manifest)
        machine.signal_start(machine.cores[(0, 0)], image.fn_addresses[0], 0)
        machine.signal_start(machine.cores[(0, 1)], image.fn_addresses[1], 0)
        assert run_until_idle(machine) == pytest.approx(250.0)

    def test_serial_episodes_compose_by_sum(self, small_config):
        machine, image = loaded_machine(small_config, manifest_of(
            FunctionRecord(0, "main", 100, None, compute_kernel(40.0))))
        entry = image.segment("usrcore").base
        core = machine.cores[(1, 1)]
        total = 0.0
        for _ in range(3):
            machine.signal_start(core, entry, 0)
            total += run_until_idle(machine)
        assert total == pytest.approx(120.0)
        assert core.clock == pytest.approx(120.0)

    def test_determinism_identical_runs(self, small_config):
        def one_run():
            manifest = manifest_of(
                FunctionRecord(0, "main", 256, None, compute_kernel(7.0, value=9)))
            machine, image = loaded_machine(small_config, manifest)
            for core in machine.cores_rowmajor():
                machine.signal_start(core, image.segment("usrcore").base, 0)
            elapsed = run_until_idle(machine)
            return elapsed, machine.memory_state_hash(), [c.clock for c in machine.cores_rowmajor()]

        assert one_run() == one_run()
