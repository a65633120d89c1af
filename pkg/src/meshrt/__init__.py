"""meshrt: a desk-scale simulator of a 2D-mesh many-core coprocessor runtime.

The pieces, bottom up: a unified 32-bit address space over core-local and
shared memories (memspace); a deterministic core array with a bandwidth/latency
cost model (mesh, engine); a linker-lite that turns placement-qualified
function manifests into segmented images (layout, imageio); loaders including
logarithmic tree distribution and hot loading (loader); lazy dynamic calls
(dyncall); host-call proxying (hostcall); an interpreted kernel VM standing in
for machine code (kernel_vm); and Cannon matrix multiply as the canonical
workload (workloads).
"""

from .dyncall import DC_ENTRY_BYTES, DcCoreState
from .engine import run_until_idle
from .errors import MeshrtError
from .hostcall import HC_ENTRY_BYTES, HC_SERVICE_BYTES, CallVector, HostDaemon, Mailbox, call_class
from .imageio import emit_image_file, parse_image_file
from .kernel_vm import KernelBlock, Placement, interpret
from .layout import (
    FunctionRecord,
    LayoutParams,
    ProgramImage,
    ProgramManifest,
    build_image,
    occupancy,
    replan,
)
from .loader import execute, hot_load, init_syscore, re_execute, serial_load, tree_load
from .memspace import CoreLocal, DeviceAddress, Invalid, MemoryMap, Segment, SharedGlobal
from .mesh import Core, CoreState, CopyReport, Machine, MeshConfig, mesh_shape
from .workloads import CannonSpec, Variant, build_cannon, dense_multiply, run_variant_suite

__version__ = "0.1.0"

__all__ = [
    "CallVector",
    "CannonSpec",
    "Core",
    "CoreLocal",
    "CoreState",
    "CopyReport",
    "DC_ENTRY_BYTES",
    "DcCoreState",
    "DeviceAddress",
    "FunctionRecord",
    "HC_ENTRY_BYTES",
    "HC_SERVICE_BYTES",
    "HostDaemon",
    "Invalid",
    "KernelBlock",
    "LayoutParams",
    "Machine",
    "Mailbox",
    "MemoryMap",
    "MeshConfig",
    "MeshrtError",
    "Placement",
    "ProgramImage",
    "ProgramManifest",
    "Segment",
    "SharedGlobal",
    "Variant",
    "build_cannon",
    "build_image",
    "call_class",
    "dense_multiply",
    "emit_image_file",
    "execute",
    "hot_load",
    "init_syscore",
    "interpret",
    "mesh_shape",
    "occupancy",
    "parse_image_file",
    "re_execute",
    "replan",
    "run_until_idle",
    "run_variant_suite",
    "serial_load",
    "tree_load",
]
