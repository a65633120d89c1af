"""Command-line front end.

Subcommands:
    layout      occupancy report for a manifest (text + JSON)
    run         execute a scenario file end to end
    bench-load  sweep serial vs tree loading over core counts, emit CSV
    dump        inspect an image file, or a scenario's host filesystem / log

Exit codes: 0 success, 2 validation error, 3 runtime error, 4 check failure.
"""

import argparse
import json
import sys
from pathlib import Path

from . import layout as layout_mod
from . import scenario as scenario_mod
from .errors import ConfigError, LayoutError, LocalOverflow, MeshrtError, ScenarioError
from .imageio import parse_image_file
from .layout import LayoutParams, load_manifest, occupancy

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4


def _load_config(path: str | None):
    if path is None:
        return scenario_mod.MeshConfig()
    with open(path) as fh:
        data = json.load(fh)
    return scenario_mod.config_from_json(data.get("mesh", data))


def cmd_layout(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _load_config(args.config)
    params = LayoutParams()
    try:
        image = layout_mod.build_image(manifest, config, params)
    except LocalOverflow as exc:
        print(f"error: local memory overflow by {exc.overflow_bytes} bytes")
        return EXIT_VALIDATION
    occ = occupancy(image, config)
    print(f"local memory: {config.local_mem_bytes} bytes")
    for kind in ("syscore", "usrcore", "dc_region", "stack"):
        print(f"  {kind:<10} {occ[f'{kind}_bytes']:>7} bytes  {occ[f'{kind}_pct']:5.1f}%")
    print(f"  {'occupied':<10} {occ['occupied_bytes']:>7} bytes  {occ['occupied_pct']:5.1f}%")
    print(f"  {'free':<10} {occ['free_bytes']:>7} bytes  {occ['free_pct']:5.1f}%")
    if args.json:
        Path(args.json).write_text(json.dumps(occ, indent=2) + "\n")
    return EXIT_OK


def cmd_run(args) -> int:
    scn = scenario_mod.load_scenario(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
    if args.csv:
        scn.csv_path = args.csv
    if args.dump_hostfs:
        scn.dump_hostfs = args.dump_hostfs
    if args.dump_log:
        scn.dump_log = args.dump_log
    outcome = scenario_mod.run_scenario(scn, check=args.check)
    print(outcome.text(), end="")
    if args.check and outcome.check_failures:
        for failure in outcome.check_failures:
            print(f"check failed: {failure}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_bench_load(args) -> int:
    ns = [int(x) for x in args.ns.split(",") if x]
    if not ns:
        raise ScenarioError("--ns needs at least one core count")
    template = _load_config(args.config)
    csv, rows = scenario_mod.bench_load(ns, args.payload, template, seed=args.seed or 0)
    if args.csv:
        Path(args.csv).write_text(csv)
        print(f"wrote {len(rows)} rows to {args.csv}")
    else:
        print(csv, end="")
    return EXIT_OK


def cmd_dump(args) -> int:
    if args.what == "image":
        if not args.path:
            raise ScenarioError("dump image needs a path")
        image = parse_image_file(Path(args.path).read_bytes())
        print(f"entry: function {image.entry}")
        print(f"functions ({len(image.functions)}):")
        for fn in image.manifest.functions:
            placement = image.functions[fn.id].placement.value
            addr = image.fn_addresses[fn.id]
            print(f"  [{fn.id}] {fn.name}: {fn.size_bytes} bytes, {placement}, at {addr:#x}")
        print("segments:")
        for kind, seg in image.segments.items():
            print(f"  {kind:<10} base={seg.base:#010x} size={seg.size}")
        print(f"dynamic calls: {list(image.dc_order)}")
        print(f"host calls used: {list(image.hc_numbers)}")
        return EXIT_OK
    # hostfs / log require replaying a scenario
    if not args.scenario:
        raise ScenarioError(f"dump {args.what} needs --scenario")
    scn = scenario_mod.load_scenario(args.scenario)
    if args.seed is not None:
        scn.seed = args.seed
    outcome = scenario_mod.run_scenario(scn)
    if args.what == "log":
        print(outcome.machine.print_log.text(), end="")
    else:
        for name, content in sorted(outcome.machine.hostfs.files.items()):
            print(f"== {name} ({len(content)} bytes)")
            sys.stdout.write(content.decode("utf-8", errors="replace"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshrt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("layout", help="occupancy report for a manifest")
    p.add_argument("manifest", help="manifest JSON file")
    p.add_argument("--config", help="mesh config JSON file")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(fn=cmd_layout)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--check", action="store_true", help="verify loader laws and oracles")
    p.add_argument("--csv", help="write the load report CSV here")
    p.add_argument("--dump-hostfs", help="write simulated host files into this directory")
    p.add_argument("--dump-log", help="write the captured print log here")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench-load", help="serial vs tree loader sweep")
    p.add_argument("--ns", default="1,2,4,16,64,256,1024,4096",
                   help="comma-separated core counts")
    p.add_argument("--payload", type=int, default=8192, help="usrcore payload bytes")
    p.add_argument("--config", help="mesh config JSON template")
    p.add_argument("--seed", type=int, help="seed recorded in the CSV")
    p.add_argument("--csv", help="output CSV path (default: print)")
    p.set_defaults(fn=cmd_bench_load)

    p = sub.add_parser("dump", help="inspect an image file or run artifacts")
    p.add_argument("what", choices=("image", "hostfs", "log"))
    p.add_argument("path", nargs="?", help="image file (for `dump image`)")
    p.add_argument("--scenario", help="scenario file (for hostfs/log)")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ScenarioError, LayoutError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MeshrtError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
