"""Planning and execution benchmarks over a task suite, with CSV/text reports.

Success is graded by an oracle: the executor must reach Done *and* the
task's goal predicate must hold on the final world. A grasp slip is silent
at the action level, so Done alone would over-count plans without recovery.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from scipy import stats

from .bt import TaskGraph
from .errors import PlannerError, SceneError, TaskGraphError
from .executor import RunLimits, run
from .planner import (
    DEFAULT_ROBOT_DESCRIPTION,
    PlannerBackend,
    classify_instruction,
    describe_scene,
    generate_task_graph,
    template_plan,
)
from .registry import BehaviorLibrary
from .world import FaultProfile, Scene, WorldState, in_camera_view, load_scene

CSV_HEADER = ("task", "executable", "success", "plan_time", "exec_ticks")
CONFIDENCE = 0.99

DEFAULT_SWEEP = {
    "p_grasp_slip": (0.1, 0.2, 0.3),
    "p_vqa_error": (0.0, 0.05),
    "p_detect_miss": (0.0, 0.1),
}

# reference rows for side-by-side display only: (executable, success, plan seconds)
REFERENCE_PLANNING = {
    "find": (1.00, 0.94, 14.93),
    "approach": (0.98, 0.90, 16.15),
    "grasp": (0.96, 0.92, 16.27),
    "pick": (0.96, 0.84, 17.11),
    "pick_fr": (0.90, 0.82, 17.91),
    "place": (0.92, 0.84, 18.23),
    "place_fr": (0.84, 0.80, 19.07),
    "find_pick_fr": (0.86, 0.82, 17.86),
}
# simulation columns: (success, execution seconds)
REFERENCE_EXECUTION = {
    "grasp": (0.92, 85.7),
    "pick": (0.84, 104.9),
    "pick_fr": (0.88, 116.2),
    "place": (0.76, 132.7),
    "place_fr": (0.84, 189.2),
    "find_pick_fr": (0.80, 174.5),
}
FR_PAIRS = {"pick_fr": "pick", "place_fr": "place"}


# ---------------------------------------------------------------------------
# suite


@dataclass(frozen=True)
class TaskEntry:
    task_id: str
    instruction: str
    scene_file: Path
    faults: FaultProfile = FaultProfile()
    expects_fr: bool = False


@dataclass
class TaskSuite:
    entries: list[TaskEntry]

    def __post_init__(self):
        ids = [e.task_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise TaskGraphError("task ids in a suite must be unique")


def parse_suite(text: str, base_dir: Path | str = ".") -> TaskSuite:
    """Lines of ``task_id|instruction|scene_file|faults|expects_fr``.

    ``faults`` is ``-`` or comma-separated ``key=value`` pairs; scene paths
    are relative to ``base_dir``.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 5:
            raise TaskGraphError(f"suite line {lineno}: expected 5 '|'-separated fields")
        task_id, instruction, scene_file, faults_text, fr = parts
        values = {}
        if faults_text not in ("", "-"):
            for pair in faults_text.split(","):
                key, _, value = pair.partition("=")
                values[key.strip()] = value.strip()
        try:
            faults = FaultProfile.from_mapping(values)
        except (KeyError, ValueError) as exc:
            raise TaskGraphError(f"suite line {lineno}: {exc}") from None
        scene_path = Path(base_dir) / scene_file
        if not scene_path.is_file():
            raise TaskGraphError(f"suite line {lineno}: scene file {scene_path} not found")
        entries.append(TaskEntry(task_id, instruction, scene_path, faults, fr.lower() in ("true", "1", "yes")))
    return TaskSuite(entries)


def load_suite(path: str | Path) -> TaskSuite:
    path = Path(path)
    return parse_suite(path.read_text(encoding="utf-8"), path.parent)


# ---------------------------------------------------------------------------
# goals


def goal_satisfied(kind: str, target: str, world: WorldState, initial: Scene) -> bool:
    obj = world.find(target)
    if obj is None:
        return False
    cfg = world.config
    held = world.robot.held_object == obj.id
    if kind == "find":
        return in_camera_view(world, obj)
    if kind == "approach":
        return world.robot.base.planar_distance(obj.pose) <= cfg.reach
    if kind == "grasp":
        return held
    if kind in ("pick", "pick_fr", "find_pick_fr"):
        return held and obj.pose.z >= cfg.chest_height - 0.05
    if kind in ("place", "place_fr"):
        start = next(o.pose for o in initial.objects if o.id == obj.id)
        moved = math.dist(start.as_tuple()[:3], obj.pose.as_tuple()[:3])
        return not held and moved >= 0.1 and abs(obj.pose.z - cfg.table_height) <= 0.1
    raise ValueError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# results


def wilson_interval(successes: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    ci = stats.binomtest(successes, n).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class TrialRecord:
    task_id: str
    trial: int
    executable: bool
    plan_time: float
    success: bool | None = None
    exec_ticks: int | None = None
    note: str = ""


@dataclass(frozen=True)
class SummaryRow:
    task: str
    faults: str
    n: int
    executable: float
    success: float
    plan_time: float
    exec_ticks: float
    success_ci: tuple[float, float]

    @property
    def key(self) -> str:
        return f"{self.task}@{self.faults}" if self.faults else self.task


@dataclass
class SummaryTable:
    rows: list[SummaryRow]
    metadata: dict = field(default_factory=dict)

    def row(self, task: str, faults: str | None = None) -> SummaryRow:
        for r in self.rows:
            if r.task == task and (faults is None or r.faults == faults):
                return r
        raise KeyError(task)

    def uplift(self) -> list[tuple[str, str, float, float]]:
        """``(fr task, fault label, base success, fr success)`` for each paired row."""
        out = []
        for r in self.rows:
            base_id = FR_PAIRS.get(r.task)
            if base_id is None:
                continue
            base = next((b for b in self.rows if b.task == base_id and b.faults == r.faults), None)
            if base is not None:
                out.append((r.task, r.faults, base.success, r.success))
        return out


def summarize(task: str, faults: str, records: Sequence[TrialRecord]) -> SummaryRow:
    n = len(records)
    executable = sum(r.executable for r in records)
    successes = sum(bool(r.success) for r in records)
    ticks = [r.exec_ticks for r in records if r.exec_ticks is not None]
    return SummaryRow(
        task=task,
        faults=faults,
        n=n,
        executable=executable / n,
        success=successes / n,
        plan_time=sum(r.plan_time for r in records) / n,
        exec_ticks=(sum(ticks) / len(ticks)) if ticks else 0.0,
        success_ci=wilson_interval(successes, n),
    )


# ---------------------------------------------------------------------------
# trials


def _execute(graph: TaskGraph, library: BehaviorLibrary, scene: Scene, faults: FaultProfile, kind: str,
             target: str, limits: RunLimits) -> tuple[bool, int]:
    world = scene.world(faults)
    result = run(graph, library, world, limits, scene_hash=scene.digest())
    return result.done and goal_satisfied(kind, target, world, scene), result.ticks_used


def _exec_chunk(args) -> list[TrialRecord]:
    task_id, graph, library, scene, faults, kind, target, seeds, limits = args
    out = []
    for trial, seed in seeds:
        ok, ticks = _execute(graph, library, scene, replace(faults, seed=seed), kind, target, limits)
        out.append(TrialRecord(task_id, trial, True, 0.0, ok, ticks))
    return out


def run_planning_benchmark(
    suite: TaskSuite,
    library: BehaviorLibrary,
    backend: PlannerBackend | Callable[[Scene], PlannerBackend],
    n: int = 50,
    max_repair_rounds: int = 2,
    seed_base: int = 0,
    limits: RunLimits | None = None,
) -> SummaryTable:
    """Plan every task ``n`` times; grade executability and fault-free oracle success.

    ``backend`` may be a backend or a factory called with each task's scene.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    limits = limits or RunLimits()
    rows = []
    for entry in suite.entries:
        scene = load_scene(entry.scene_file)
        kind, target = classify_instruction(entry.instruction, scene)
        plan_backend = backend if hasattr(backend, "complete") else backend(scene)
        description = DEFAULT_ROBOT_DESCRIPTION + "\n" + describe_scene(scene)
        records = []
        for trial in range(n):
            try:
                outcome = generate_task_graph(entry.instruction, library, plan_backend, max_repair_rounds, description)
            except PlannerError as exc:
                records.append(TrialRecord(entry.task_id, trial, False, 0.0, False, None, str(exc)))
                continue
            if outcome.graph is None:
                records.append(TrialRecord(entry.task_id, trial, False, outcome.plan_time, False))
                continue
            ok, ticks = _execute(outcome.graph, library, scene, FaultProfile(seed=seed_base + trial), kind, target,
                                 limits)
            records.append(TrialRecord(entry.task_id, trial, True, outcome.plan_time, ok, ticks))
        rows.append(summarize(entry.task_id, "", records))
    meta = {"benchmark": "plan", "backend": getattr(backend, "kind", "factory"), "n": n, "seed_base": seed_base,
            "max_repair_rounds": max_repair_rounds}
    return SummaryTable(rows, meta)


def fault_grid(sweep: dict[str, Sequence[float]] | None = None) -> list[FaultProfile]:
    sweep = sweep or DEFAULT_SWEEP
    keys = sorted(sweep)
    return [FaultProfile(**dict(zip(keys, combo))) for combo in itertools.product(*(sweep[k] for k in keys))]


def run_execution_benchmark(
    suite: TaskSuite,
    library: BehaviorLibrary,
    n: int = 5000,
    sweep: dict[str, Sequence[float]] | None | bool = None,
    plans: dict[str, TaskGraph] | None = None,
    seed_base: int = 0,
    workers: int = 1,
    limits: RunLimits | None = None,
) -> SummaryTable:
    """Execute each task's plan ``n`` times per fault point.

    Plans come from ``plans`` (task id -> graph) or the template planner.
    ``sweep=False`` uses each suite entry's own fault profile instead of a
    grid. Trial ``i`` of every task and fault point uses seed
    ``seed_base + i``, so FR and non-FR rows are paired trial by trial.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    limits = limits or RunLimits()
    jobs = []
    diagnostics = []
    for entry in suite.entries:
        try:
            scene = load_scene(entry.scene_file)
            kind, target = classify_instruction(entry.instruction, scene)
            graph = (plans or {}).get(entry.task_id) or template_plan(entry.instruction, library, scene)
        except (SceneError, PlannerError, OSError) as exc:
            diagnostics.append(f"{entry.task_id}: skipped: {exc}")
            continue
        points = [entry.faults] if sweep is False else fault_grid(sweep or None)
        for faults in points:
            jobs.append((entry.task_id, faults, graph, scene, kind, target))

    chunk = max(1, math.ceil(n / max(workers, 1)))
    tasks = []
    for task_id, faults, graph, scene, kind, target in jobs:
        seeds = [(i, seed_base + i) for i in range(n)]
        for start in range(0, n, chunk):
            tasks.append((task_id, graph, library, scene, faults, kind, target, seeds[start:start + chunk], limits))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_exec_chunk, tasks))
    else:
        chunks = [_exec_chunk(t) for t in tasks]

    rows = []
    pos = 0
    for task_id, faults, *_ in jobs:
        records = []
        while pos < len(chunks) and len(records) < n:
            records.extend(chunks[pos])
            pos += 1
        records.sort(key=lambda r: r.trial)
        rows.append(summarize(task_id, faults.label(), records))
    meta = {"benchmark": "exec", "backend": "template" if plans is None else "cached", "n": n,
            "seed_base": seed_base}
    if diagnostics:
        meta["diagnostics"] = " | ".join(diagnostics)
    return SummaryTable(rows, meta)


# ---------------------------------------------------------------------------
# reports


def to_csv(summary: SummaryTable) -> str:
    buf = io.StringIO()
    for key in sorted(summary.metadata):
        buf.write(f"# {key}={summary.metadata[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in summary.rows:
        writer.writerow([r.key, repr(r.executable), repr(r.success), repr(r.plan_time), repr(r.exec_ticks)])
    return buf.getvalue()


def _meta_value(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def from_csv(text: str) -> SummaryTable:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = _meta_value(value)
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise TaskGraphError(f"unexpected CSV header {header}")
    n = int(meta.get("n", 0))
    rows = []
    for task_key, executable, success, plan_time, exec_ticks in reader:
        task, _, faults = task_key.partition("@")
        rate = float(success)
        rows.append(SummaryRow(task, faults, n, float(executable), rate, float(plan_time), float(exec_ticks),
                               wilson_interval(round(rate * n), n)))
    return SummaryTable(rows, meta)


def to_text(summary: SummaryTable) -> str:
    plan = summary.metadata.get("benchmark") == "plan"
    head = ["task", "faults", "executable", "oracle-success", "99% CI", "plan_time", "exec_ticks", "reference"]
    table = [head]
    for r in summary.rows:
        if plan:
            ref = REFERENCE_PLANNING.get(r.task)
            reference = f"{ref[0]:.0%} / {ref[1]:.0%} / {ref[2]:.2f}s" if ref else "-"
        else:
            ref = REFERENCE_EXECUTION.get(r.task)
            reference = f"{ref[0]:.0%} / {ref[1]:.1f}s" if ref else "-"
        table.append([
            r.task, r.faults or "-", f"{r.executable:.3f}", f"{r.success:.4f}",
            f"[{r.success_ci[0]:.4f}, {r.success_ci[1]:.4f}]", f"{r.plan_time:.3f}", f"{r.exec_ticks:.2f}", reference,
        ])
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    meta = " ".join(f"{k}={summary.metadata[k]}" for k in sorted(summary.metadata))
    out = [f"# {meta}", *lines]
    pairs = summary.uplift()
    if pairs:
        out += ["", "recovery uplift (FR minus non-FR success):"]
        out += [f"  {task} @ {faults}: {base:.4f} -> {fr:.4f} ({fr - base:+.4f})" for task, faults, base, fr in pairs]
    return "\n".join(out) + "\n"


def emit_report(summary: SummaryTable, path: str | Path, fmt: str = "csv") -> Path:
    """Write ``summary`` as CSV (``fmt="csv"``) or an aligned text table."""
    if not summary.rows:
        raise ValueError("summary is empty")
    text = to_csv(summary) if fmt == "csv" else to_text(summary)
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path
