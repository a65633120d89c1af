"""Shared builders for the test suite."""

import pytest

from meshrt import (
    FunctionRecord,
    KernelBlock,
    Machine,
    MeshConfig,
    Placement,
    ProgramManifest,
    build_image,
    init_syscore,
    tree_load,
)
from meshrt.kernel_vm import Compute, Lit, Return


def kernel(*ops, stack_bytes=32, num_args=0) -> KernelBlock:
    return KernelBlock(ops=tuple(ops), stack_bytes=stack_bytes, num_args=num_args)


def compute_kernel(cost_us: float, value: int = 0) -> KernelBlock:
    return kernel(Compute(cost_us), Return(Lit(value)))


def manifest_of(*functions, entry=0, **kwargs) -> ProgramManifest:
    return ProgramManifest(functions=tuple(functions), entry=entry, **kwargs)


def simple_manifest(size_bytes: int = 1000, cost_us: float = 1.0) -> ProgramManifest:
    return manifest_of(
        FunctionRecord(0, "main", size_bytes, Placement.USRCORE_CALL, compute_kernel(cost_us))
    )


def loaded_machine(config: MeshConfig, manifest: ProgramManifest):
    """Machine with system segments initialized and the user image tree-loaded."""
    image = build_image(manifest, config)
    machine = Machine(config)
    init_syscore(machine, image)
    tree_load(machine, image)
    return machine, image


@pytest.fixture
def small_config():
    return MeshConfig(rows=2, cols=2, shared_size=1 << 20)
