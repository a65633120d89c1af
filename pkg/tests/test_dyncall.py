"""Dynamic calls: lazy copy, patching, region exhaustion, reset semantics."""

import struct

import pytest

from conftest import kernel, loaded_machine, manifest_of
from meshrt import FunctionRecord, MeshConfig, Placement, execute, re_execute
from meshrt.dyncall import DC_ENTRY_BYTES, entry_bytes, reset
from meshrt.errors import DcRegionExhausted, UnknownDynamicFunction
from meshrt.kernel_vm import CallDynamic, CallLocal, Compute, Lit, Return

CFG = MeshConfig(rows=1, cols=1, shared_size=1 << 20)


def dyn_fn(fid, name, size, cost=1.0):
    return FunctionRecord(fid, name, size, Placement.DYNAMIC_CALL,
                          kernel(Compute(cost), Return(Lit(0))))


def main_calling(*fn_ids, dc_region_bytes=None):
    body = kernel(*[CallDynamic(f) for f in fn_ids], Return(Lit(0)))
    return FunctionRecord(0, "main", 100, Placement.USRCORE_CALL, body)


class TestLazyCopy:
    def test_first_call_copies_second_does_not(self):
        manifest = manifest_of(main_calling(1, 1), dyn_fn(1, "d", 200))
        machine, _ = loaded_machine(CFG, manifest)
        execute(machine, 0)
        core = machine.cores[(0, 0)]
        assert core.dc.copies == 1
        assert core.dc.bytes_copied == 200
        assert core.dc.per_fn_bytes == {1: 200}
        assert core.ledger.dc_copies == 1 and core.ledger.dc_bytes == 200
        assert core.dc.indirections == 2  # both calls route through the table

    def test_body_lands_byte_identical_in_dc_region(self):
        manifest = manifest_of(main_calling(1), dyn_fn(1, "d", 333))
        machine, image = loaded_machine(CFG, manifest)
        execute(machine, 0)
        core = machine.cores[(0, 0)]
        local = core.dc.resident[1]
        gaddr, size = image.dc_side[1]
        original = machine.memory.read_bytes(gaddr, size)
        loaded = machine.memory.core_read(0, 0, local, size)
        assert loaded == original == image.segments["usrmem"].payload[:333]

    def test_jump_table_entry_is_patched_then_restored(self):
        manifest = manifest_of(main_calling(1), dyn_fn(1, "d", 64))
        machine, image = loaded_machine(CFG, manifest)
        core = machine.cores[(0, 0)]

        def table_entry():
            return machine.memory.core_read(0, 0, image.dc_table_offset, DC_ENTRY_BYTES)

        assert table_entry() == entry_bytes(0)
        execute(machine, 0)
        local = core.dc.resident[1]
        patched_word = struct.unpack("<I", table_entry()[:4])[0]
        assert patched_word == 0xB1000000 | local
        reset(machine, core)
        assert table_entry() == entry_bytes(0)

    def test_resolved_call_overhead_is_one_indirection(self):
        # dynamic resolved-call episode vs an identical local-call episode
        dynamic = manifest_of(main_calling(1), dyn_fn(1, "d", 64, cost=5.0))
        machine, _ = loaded_machine(CFG, dynamic)
        execute(machine, 0)
        warm = re_execute(machine).elapsed_us

        local = manifest_of(
            FunctionRecord(0, "main", 100, Placement.USRCORE_CALL,
                           kernel(CallLocal(1), Return(Lit(0)))),
            FunctionRecord(1, "d", 64, Placement.USRCORE_CALL,
                           kernel(Compute(5.0), Return(Lit(0)))),
        )
        machine2, _ = loaded_machine(CFG, local)
        baseline = execute(machine2, 0).elapsed_us
        assert warm - baseline == pytest.approx(CFG.dc_indirection_latency, abs=1e-12)


class TestRegion:
    def test_oversized_function_exhausts_region(self):
        manifest = manifest_of(
            main_calling(1), dyn_fn(1, "big", 2048),
            dc_region_bytes=1024,
        )
        machine, _ = loaded_machine(CFG, manifest)
        with pytest.raises(DcRegionExhausted):
            execute(machine, 0)

    def test_exhaustion_exactly_at_boundary_byte(self):
        fits = manifest_of(main_calling(1), dyn_fn(1, "d", 512), dc_region_bytes=512)
        machine, _ = loaded_machine(CFG, fits)
        execute(machine, 0)  # exactly full

        over = manifest_of(main_calling(1), dyn_fn(1, "d", 513), dc_region_bytes=512)
        machine2, _ = loaded_machine(CFG, over)
        with pytest.raises(DcRegionExhausted):
            execute(machine2, 0)

    def test_cumulative_boundary(self):
        two = manifest_of(
            main_calling(1, 2), dyn_fn(1, "a", 512), dyn_fn(2, "b", 512),
            dc_region_bytes=1024,
        )
        machine, _ = loaded_machine(CFG, two)
        execute(machine, 0)
        assert machine.cores[(0, 0)].dc.cursor == 1024

        tight = manifest_of(
            main_calling(1, 2), dyn_fn(1, "a", 512), dyn_fn(2, "b", 512),
            dc_region_bytes=1023,
        )
        machine2, _ = loaded_machine(CFG, tight)
        with pytest.raises(DcRegionExhausted):
            execute(machine2, 0)

    def test_unknown_dynamic_function(self):
        manifest = manifest_of(main_calling(9), dyn_fn(1, "d", 64))
        machine, _ = loaded_machine(CFG, manifest)
        with pytest.raises(UnknownDynamicFunction):
            execute(machine, 0)

    def test_local_function_cannot_be_dyncalled(self):
        manifest = manifest_of(
            main_calling(1),
            FunctionRecord(1, "local", 64, Placement.USRCORE_CALL,
                           kernel(Return(Lit(0)))),
        )
        machine, _ = loaded_machine(CFG, manifest)
        with pytest.raises(UnknownDynamicFunction):
            execute(machine, 0)


class TestReset:
    def test_invoke_reset_invoke_copies_twice(self):
        manifest = manifest_of(main_calling(1), dyn_fn(1, "d", 300))
        machine, _ = loaded_machine(CFG, manifest)
        execute(machine, 0)
        core = machine.cores[(0, 0)]
        reset(machine, core)
        assert core.dc.copies == 0 and core.dc.resident == {}
        re_execute(machine)
        assert core.dc.per_fn_bytes == {1: 300}
        assert core.dc.lifetime_copies == 2
        assert core.dc.lifetime_bytes == 600

    def test_reset_on_fresh_table_is_noop(self):
        manifest = manifest_of(main_calling(1), dyn_fn(1, "d", 64))
        machine, image = loaded_machine(CFG, manifest)
        core = machine.cores[(0, 0)]
        before = machine.memory.core_read(0, 0, image.dc_table_offset, DC_ENTRY_BYTES)
        reset(machine, core)
        assert machine.memory.core_read(0, 0, image.dc_table_offset, DC_ENTRY_BYTES) == before
        assert core.dc.cursor == 0

    def test_staged_workload_fits_only_with_reset(self):
        # stage A then stage B each fill the region; their union would not fit
        manifest = manifest_of(
            main_calling(1), dyn_fn(1, "stage_a", 600), dyn_fn(2, "stage_b", 600),
            dc_region_bytes=600,
        )
        machine, image = loaded_machine(CFG, manifest)
        execute(machine, 0)  # stage A
        core = machine.cores[(0, 0)]
        assert core.dc.cursor == 600

        # without a reset, stage B cannot load
        from meshrt import dyncall

        with pytest.raises(DcRegionExhausted):
            dyncall.resolve(machine, core, 2)

        reset(machine, core)
        _, copied, _ = dyncall.resolve(machine, core, 2)
        assert copied == 600
        assert core.dc.resident == {2: image.segment("dc_region").base}

    def test_nested_dynamic_calls_resolve_in_invocation_order(self):
        inner = dyn_fn(2, "inner", 100)
        outer = FunctionRecord(1, "outer", 150, Placement.DYNAMIC_CALL,
                               kernel(CallDynamic(2), Return(Lit(0))))
        manifest = manifest_of(main_calling(1), outer, inner, dc_region_bytes=250)
        machine, image = loaded_machine(CFG, manifest)
        execute(machine, 0)
        core = machine.cores[(0, 0)]
        base = image.segment("dc_region").base
        assert core.dc.resident == {1: base, 2: base + 150}


class TestAccounting:
    def test_each_entry_costs_24_usrcore_bytes(self):
        from meshrt import build_image

        without = build_image(manifest_of(main_calling()), CFG)
        with_two = build_image(
            manifest_of(main_calling(), dyn_fn(1, "a", 128), dyn_fn(2, "b", 128)), CFG
        )
        assert with_two.usrcore_bytes - without.usrcore_bytes == 2 * DC_ENTRY_BYTES

    def test_copy_bytes_equal_function_size_exactly_once(self):
        sizes = {1: 123, 2: 457}
        manifest = manifest_of(
            main_calling(1, 2, 1, 2, 2),
            dyn_fn(1, "a", sizes[1]),
            dyn_fn(2, "b", sizes[2]),
            dc_region_bytes=1024,
        )
        machine, _ = loaded_machine(CFG, manifest)
        execute(machine, 0)
        core = machine.cores[(0, 0)]
        assert core.dc.per_fn_bytes == sizes
        assert core.dc.indirections == 5
