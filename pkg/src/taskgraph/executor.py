"""Drives a task graph against a world until Done, Failed or budget exhaustion."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .bt import RunState, TaskGraph, TickStatus, serialize, tick, validate
from .errors import DivergenceError, ExecutionError, GraphValidationError
from .registry import BehaviorLibrary
from .trace import TraceEvent, dumps_trace, loads_trace
from .world import FaultProfile, Scene, WorldState, load_scene

DEFAULT_MAX_TICKS = 10_000


class Outcome(str, Enum):
    DONE = "Done"
    FAILED = "Failed"
    BUDGET_EXHAUSTED = "BudgetExhausted"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class RunLimits:
    max_ticks: int = DEFAULT_MAX_TICKS
    max_wall_time: float | None = None

    def __post_init__(self):
        if self.max_ticks < 1:
            raise ValueError("max_ticks must be >= 1")


@dataclass
class RunResult:
    outcome: Outcome
    ticks_used: int
    trace: list[TraceEvent]
    final_world: str
    header: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def done(self) -> bool:
        return self.outcome is Outcome.DONE

    def trace_text(self) -> str:
        return dumps_trace(self.header, self.trace)


def graph_digest(graph: TaskGraph) -> str:
    return hashlib.sha256(serialize(graph).encode()).hexdigest()[:16]


def run(graph: TaskGraph, library: BehaviorLibrary, world: WorldState, limits: RunLimits | None = None,
        scene_hash: str = "") -> RunResult:
    """Tick ``graph`` once per control step, dispatching leaves on ``world``.

    The world is mutated in place. An invalid graph is rejected before the
    first tick; a leaf that cannot execute ends the run as Failed with the
    error recorded in the trace.
    """
    limits = limits or RunLimits()
    report = validate(graph, library)
    if not report.ok:
        raise GraphValidationError(report)

    header = {
        "scene": scene_hash,
        "seed": world.faults.seed,
        "graph": graph_digest(graph),
        "faults": {
            "p_grasp_slip": world.faults.p_grasp_slip,
            "p_detect_miss": world.faults.p_detect_miss,
            "p_vqa_error": world.faults.p_vqa_error,
        },
    }
    state = RunState()
    trace: list[TraceEvent] = []
    tick_index = 0

    def dispatch(leaf):
        return library.dispatch(leaf, world, trace, tick_index)

    started = time.monotonic()
    outcome = Outcome.BUDGET_EXHAUSTED
    error = None
    while tick_index < limits.max_ticks:
        if limits.max_wall_time is not None and time.monotonic() - started > limits.max_wall_time:
            break
        try:
            status = tick(graph, state, dispatch)
        except ExecutionError as exc:
            node = graph.nodes.get(exc.node)
            trace.append(TraceEvent(tick_index, -1 if exc.node is None else exc.node,
                                    node.name if node else "", TickStatus.FAILURE, world.step_count,
                                    f"execution error: {exc}"))
            tick_index += 1
            outcome, error = Outcome.FAILED, str(exc)
            break
        tick_index += 1
        if status is TickStatus.SUCCESS:
            outcome = Outcome.DONE
            break
        if status is TickStatus.FAILURE:
            outcome = Outcome.FAILED
            break

    return RunResult(outcome, tick_index, trace, world.snapshot(), header, error)


def run_scene(graph: TaskGraph, library: BehaviorLibrary, scene: Scene, faults: FaultProfile | None = None,
              limits: RunLimits | None = None) -> tuple[RunResult, WorldState]:
    world = scene.world(faults)
    return run(graph, library, world, limits, scene_hash=scene.digest()), world


def _first_difference(expected: list[TraceEvent], actual: list[TraceEvent]) -> int | None:
    for i in range(max(len(expected), len(actual))):
        a = expected[i] if i < len(expected) else None
        b = actual[i] if i < len(actual) else None
        if a != b:
            return i
    return None


def replay(trace: str | Path, graph: TaskGraph, scene: Scene | str | Path, seed: int, library: BehaviorLibrary,
           limits: RunLimits | None = None) -> RunResult:
    """Re-run a logged execution and check it reproduces the trace exactly.

    ``trace`` is trace-file text or a path to one. Fault probabilities come
    from the trace header; ``seed`` and ``scene`` are the caller's claim about
    the original run and are what is being checked.
    """
    text = trace if isinstance(trace, str) and "\n" in trace else Path(trace).read_text(encoding="utf-8")
    header, expected = loads_trace(text)
    if not isinstance(scene, Scene):
        scene = load_scene(scene)
    faults = FaultProfile.from_mapping(dict(header.get("faults", {})) | {"seed": seed})
    result, _ = run_scene(graph, library, scene, faults, limits)

    index = _first_difference(expected, result.trace)
    if index is not None:
        exp = expected[index] if index < len(expected) else None
        got = result.trace[index] if index < len(result.trace) else None
        raise DivergenceError(
            f"replay diverged at event {index}: expected {exp.to_json() if exp else 'end of trace'}, "
            f"got {got.to_json() if got else 'end of trace'}",
            index, exp, got,
        )
    for key in ("scene", "graph", "seed"):
        if header.get(key) not in (None, "") and header[key] != result.header[key]:
            raise DivergenceError(f"replay {key} {result.header[key]} does not match trace header {header[key]}")
    return result
