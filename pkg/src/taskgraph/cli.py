"""Command-line entry point: ``taskgraph plan|validate|run|replay|bench``.

Exit codes: 0 success, 1 task or plan failure, 2 usage/config error,
3 backend transport error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .behaviors import data_path, load_library
from .bt import parse_xml, serialize, validate
from .errors import (
    BackendConfigError,
    DivergenceError,
    GraphValidationError,
    ParseError,
    PlannerError,
    TaskGraphError,
    TransportError,
)
from .executor import RunLimits, replay, run
from .planner import (
    DEFAULT_ROBOT_DESCRIPTION,
    HttpChatBackend,
    ReplayBackend,
    TemplateBackend,
    describe_scene,
    generate_task_graph,
)
from .trace import write_trace
from .world import FaultProfile, load_scene

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3
FAULT_KEYS = ("p_grasp_slip", "p_detect_miss", "p_vqa_error", "seed")


class UsageError(Exception):
    pass


def read_config(path: str | Path | None) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    if path is None:
        return {}
    config = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        config[key.strip()] = value.strip()
    return config


def _faults(config: dict, overrides: list[str] | None, seed: int | None) -> FaultProfile:
    values = {k: config[k] for k in FAULT_KEYS if k in config}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--faults expects KEY=VAL, got {item!r}")
        values[key.strip()] = value.strip()
    if seed is not None:
        values["seed"] = seed
    try:
        return FaultProfile.from_mapping(values)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _backend(args, config: dict, library, scene=None):
    kind = args.backend or config.get("planner.backend", "template")
    if kind == "template":
        return TemplateBackend(library, scene)
    if kind == "replay":
        fixtures = args.fixtures or config.get("planner.fixtures")
        if not fixtures:
            raise UsageError("the replay backend needs --fixtures DIR or planner.fixtures")
        return ReplayBackend.from_dir(fixtures)
    if kind == "http":
        return HttpChatBackend(
            endpoint=config.get("planner.endpoint", ""),
            model=config.get("planner.model", "gpt-4"),
            token_env=config.get("planner.token_env"),
            temperature=float(config.get("planner.temperature", 0.0)),
        )
    raise UsageError(f"unknown backend {kind!r}")


def _max_repair(args, config) -> int:
    if args.max_repair is not None:
        return args.max_repair
    return int(config.get("planner.max_repair", 2))


def cmd_plan(args, config) -> int:
    library = load_library(args.library)
    scene = load_scene(args.scene) if args.scene else None
    backend = _backend(args, config, library, scene)
    description = DEFAULT_ROBOT_DESCRIPTION + ("\n" + describe_scene(scene) if scene else "")
    outcome = generate_task_graph(args.instruction, library, backend, _max_repair(args, config), description)
    if outcome.graph is None:
        print(outcome.validation.format(), file=sys.stderr)
        return EXIT_FAIL
    xml = serialize(outcome.graph)
    if args.out:
        Path(args.out).write_text(xml, encoding="utf-8")
    else:
        sys.stdout.write(xml)
    if outcome.validation.warnings:
        print(outcome.validation.format(), file=sys.stderr)
    print(f"repair rounds used: {outcome.repair_rounds_used}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, config) -> int:
    library = load_library(args.library)
    try:
        graph = parse_xml(Path(args.graph).read_text(encoding="utf-8"))
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = validate(graph, library)
    print(report.format() if report.issues else "ok")
    return EXIT_OK if report.ok else EXIT_FAIL


def _load_graph(path):
    return parse_xml(Path(path).read_text(encoding="utf-8"))


def cmd_run(args, config) -> int:
    library = load_library(args.library)
    graph = _load_graph(args.graph)
    scene = load_scene(args.scene)
    faults = _faults(config, args.faults, args.seed)
    world = scene.world(faults)
    result = run(graph, library, world, RunLimits(max_ticks=args.max_ticks), scene_hash=scene.digest())
    if args.trace:
        write_trace(args.trace, result.header, result.trace)
    print(f"{result.outcome} after {result.ticks_used} ticks ({len(result.trace)} behavior calls)")
    return EXIT_OK if result.done else EXIT_FAIL


def cmd_replay(args, config) -> int:
    library = load_library(args.library)
    try:
        result = replay(Path(args.trace), _load_graph(args.graph), args.scene, args.seed, library)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"replay matches: {result.outcome} after {result.ticks_used} ticks")
    return EXIT_OK


def cmd_bench(args, config) -> int:
    library = load_library(args.library)
    suite = bench.load_suite(args.suite or data_path("benchmark.suite"))
    if args.mode == "plan":
        backend = _backend(args, config, library)
        if isinstance(backend, TemplateBackend):
            backend = lambda scene: TemplateBackend(library, scene)  # noqa: E731
        summary = bench.run_planning_benchmark(suite, library, backend, args.n or 50, _max_repair(args, config),
                                               args.seeds)
    else:
        sweep = False if args.no_sweep else None
        summary = bench.run_execution_benchmark(suite, library, args.n or 5000, sweep, seed_base=args.seeds,
                                                workers=args.workers)
    sys.stdout.write(bench.to_text(summary))
    if args.report:
        bench.emit_report(summary, args.report, args.format)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value config file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def planner_flags(p):
        p.add_argument("--backend", choices=("http", "replay", "template"))
        p.add_argument("--fixtures", help="replay fixture directory")
        p.add_argument("--max-repair", type=int, dest="max_repair")

    p = sub.add_parser("plan", help="turn an instruction into a task graph")
    p.add_argument("--instruction", required=True)
    p.add_argument("--library")
    p.add_argument("--scene", help="scene file used for the robot description and placements")
    p.add_argument("--out")
    planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="check a task graph against a library")
    p.add_argument("--graph", required=True)
    p.add_argument("--library")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="execute a task graph in the simulator")
    p.add_argument("--graph", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--library")
    p.add_argument("--seed", type=int)
    p.add_argument("--faults", nargs="*", metavar="KEY=VAL")
    p.add_argument("--trace")
    p.add_argument("--max-ticks", type=int, default=10_000, dest="max_ticks")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run a trace and check it reproduces")
    p.add_argument("--trace", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--library")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench", help="planning or execution benchmark")
    p.add_argument("mode", choices=("plan", "exec"))
    p.add_argument("--suite")
    p.add_argument("--library")
    p.add_argument("-n", type=int)
    p.add_argument("--seeds", type=int, default=0, help="base seed")
    p.add_argument("--report")
    p.add_argument("--format", choices=("csv", "text"), default="csv")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-sweep", action="store_true", help="use each task's own fault profile")
    planner_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        config = read_config(args.config)
        return args.func(args, config)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (UsageError, BackendConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, GraphValidationError, PlannerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except TaskGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
