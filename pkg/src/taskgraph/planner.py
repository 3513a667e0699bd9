"""Language-model task planning: prompt assembly, backends, parse/validate/repair.

``generate_task_graph`` sends one prompt built from the robot description,
the behavior tag block, the output format and the instruction, then parses
and validates the reply. Failed replies are fed back to the model with the
parser or validator message for a bounded number of repair rounds.
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol
from xml.sax.saxutils import escape, unescape

from .bt import (
    Issue,
    TaskGraph,
    ValidationReport,
    action,
    condition,
    fallback,
    parse_xml,
    retry,
    sequence,
    serialize,
    validate,
)
from .errors import (
    BackendConfigError,
    NoTemplateError,
    PlannerError,
    SchemaError,
    TransportError,
    XMLSyntaxError,
)
from .registry import BehaviorLibrary, tags_prompt_block

DEFAULT_ROBOT_DESCRIPTION = (
    "You are the behavior planner of CENTAURO, a hybrid wheeled-legged quadruped robot with a "
    "humanoid upper body (37 degrees of freedom), a two-fingered gripper with a torque sensor and "
    "a head-mounted RGBD camera. The robot drives its base on wheels and manipulates objects on a "
    "desk in an office kitchen. It can only act through the behaviors listed in the behavior "
    "library; object positions are in meters in the world frame (x forward, y left, z up)."
)

FR_ATTEMPTS = 3
PLACE_ASIDE_OFFSET = 0.3
DEFAULT_PLACE = (1.0, 0.4, 0.8)

TEMPLATE_KINDS = ("find", "approach", "grasp", "pick", "pick_fr", "place", "place_fr", "find_pick_fr")

TARGET_ALIASES = {
    "cracker_box": ("cracker box", "crackers", "cracker"),
    "sugar_box": ("sugar box", "sugar"),
    "soup_can": ("tomato soup can", "soup can", "soup"),
    "mustard_bottle": ("mustard bottle", "mustard", "bottle"),
    "meat_can": ("potted meat can", "meat can", "spam"),
    "banana": ("banana",),
    "mug": ("mug", "cup"),
}


@dataclass(frozen=True)
class PromptBundle:
    robot_description: str
    library_block: str
    output_format_spec: str
    instruction: str  # XML-escaped

    def __post_init__(self):
        for name in ("robot_description", "library_block", "output_format_spec", "instruction"):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt section {name} is empty")

    def render(self) -> str:
        return (
            f"# Robot\n{self.robot_description.rstrip()}\n\n"
            f"# Behavior library\n{self.library_block.rstrip()}\n\n"
            f"# Output format\n{self.output_format_spec.rstrip()}\n\n"
            f"# Instruction\n{self.instruction.rstrip()}\n"
        )

    @property
    def raw_instruction(self) -> str:
        return unescape(self.instruction)


def output_format_spec(library: BehaviorLibrary) -> str:
    lines = [
        "Answer with a single XML behavior tree and nothing else. Schema:",
        '<TaskGraph name="...">            exactly one child node',
        "  <Sequence> children </Sequence>  ticks children in order; fails on the first failure",
        "  <Fallback> children </Fallback>  tries children in order; succeeds on the first success",
        '  <Retry num_attempts="3"> one child </Retry>  re-runs its child after a failure',
        '  <Action name="Grasp" target="cracker_box"/>  runs an action behavior',
        '  <Condition name="IsObjectHeld" target="cracker_box"/>  checks a condition',
        "</TaskGraph>",
        "Action leaves must name action behaviors. Condition leaves name a perception behavior or "
        "one of these fused conditions:",
    ]
    for name in sorted(library.conditions):
        spec = library.conditions[name]
        members = " and ".join(m.behavior for m in spec.members) if spec.fusion == "all" else " or ".join(
            m.behavior for m in spec.members
        )
        needed = ", ".join(library.missing_params(name, {})) or "none"
        lines.append(f"- {name} (params: {needed}; uses {members}): {spec.description}")
    lines += [
        "Parameters: Approach(target, standoff_m=0.5), Grasp(target), Lift(), Place(x, y, z), Homing(), "
        "Distance(target), GripForce(), ObjectDetection(target), VisualQA(question).",
        "Extra attributes on Action and Condition nodes are passed to the behavior as parameters.",
        "",
        'Example for "Pick up the mug. Detect and recover the failure during the task.":',
    ]
    example = _template_tree("pick_fr", "mug", None)
    lines.append(serialize(example).rstrip())
    return "\n".join(lines) + "\n"


def build_prompt(instruction: str, library: BehaviorLibrary, robot_description: str = DEFAULT_ROBOT_DESCRIPTION) -> PromptBundle:
    """Deterministic prompt bundle for ``instruction``."""
    if not instruction.strip():
        raise ValueError("instruction is empty")
    if len(library) == 0:
        raise PlannerError("cannot plan with an empty behavior library")
    return PromptBundle(
        robot_description=robot_description,
        library_block=tags_prompt_block(library),
        output_format_spec=output_format_spec(library),
        instruction=escape(instruction),
    )


def describe_scene(scene) -> str:
    lines = ["Objects currently on the desk (id, class, x, y, z):"]
    for o in scene.objects:
        lines.append(f"- {o.id} ({o.label}) at {o.pose.x:.3f}, {o.pose.y:.3f}, {o.pose.z:.3f}")
    r = scene.robot
    lines.append(f"The robot base starts at {r.x:.3f}, {r.y:.3f} facing yaw {r.yaw:.3f} rad.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# backends


class PlannerBackend(Protocol):
    kind: str
    measures_latency: bool

    def complete(self, messages: list[dict], bundle: PromptBundle) -> str: ...


class ReplayBackend:
    """Serves recorded responses in order; running out is a configuration error."""

    kind = "replay"
    measures_latency = False

    def __init__(self, responses):
        self.responses = list(responses)
        self.position = 0

    @classmethod
    def from_dir(cls, path: str | Path) -> "ReplayBackend":
        root = Path(path)
        if not root.is_dir():
            raise BackendConfigError(f"replay fixture directory {root} does not exist")
        files = [p for p in root.iterdir() if p.is_file() and re.match(r"^\d+", p.name)]
        files.sort(key=lambda p: (int(re.match(r"^\d+", p.name).group()), p.name))
        return cls(p.read_text(encoding="utf-8") for p in files)

    def complete(self, messages, bundle) -> str:
        if self.position >= len(self.responses):
            raise BackendConfigError(f"replay fixtures exhausted after {len(self.responses)} responses")
        text = self.responses[self.position]
        self.position += 1
        return text


class TemplateBackend:
    """Deterministic rule-based planner standing in for the language model."""

    kind = "template"
    measures_latency = False

    def __init__(self, library: BehaviorLibrary, scene=None):
        self.library = library
        self.scene = scene

    def complete(self, messages, bundle) -> str:
        return serialize(template_plan(bundle.raw_instruction, self.library, self.scene))


class HttpChatBackend:
    """Chat-completion style HTTP endpoint (OpenAI-compatible request/response)."""

    kind = "http"
    measures_latency = True

    def __init__(self, endpoint: str, model: str, token_env: str | None = None, temperature: float = 0.0,
                 timeout: float = 60.0, transport=None):
        if not endpoint:
            raise BackendConfigError("planner.endpoint is not configured")
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.temperature = temperature
        self.timeout = timeout
        self.transport = transport

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.environ.get(self.token_env)
            if not token:
                raise BackendConfigError(f"environment variable {self.token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, messages, bundle) -> str:
        import httpx

        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                resp = client.post(self.endpoint, json=payload, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.endpoint} failed: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"{self.endpoint} answered HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape from {self.endpoint}") from exc


# ---------------------------------------------------------------------------
# generation with repair


@dataclass
class PlanOutcome:
    graph: TaskGraph | None
    raw_responses: list[str]
    repair_rounds_used: int
    validation: ValidationReport
    latency: list[float] = field(default_factory=list)
    prompts: list[str] = field(default_factory=list)

    @property
    def executable(self) -> bool:
        return self.graph is not None

    @property
    def plan_time(self) -> float:
        return sum(self.latency)


_TASKGRAPH_SPAN = re.compile(r"<TaskGraph\b.*?</TaskGraph\s*>", re.S)


def extract_task_graph(response: str) -> str:
    """First ``<TaskGraph>...</TaskGraph>`` span of a model reply."""
    m = _TASKGRAPH_SPAN.search(response)
    if m is None:
        raise XMLSyntaxError("no <TaskGraph>...</TaskGraph> element found in the response")
    return m.group(0)


def render_conversation(messages: list[dict]) -> str:
    return "\n\n".join(f"[{m['role']}]\n{m['content']}" for m in messages)


def _complete(backend: PlannerBackend, messages: list[dict], bundle: PromptBundle) -> tuple[str, float]:
    start = time.perf_counter()
    try:
        text = backend.complete(messages, bundle)
    except TransportError:
        text = backend.complete(messages, bundle)
    elapsed = time.perf_counter() - start
    return text, (elapsed if getattr(backend, "measures_latency", False) else 0.0)


def generate_task_graph(
    instruction: str,
    library: BehaviorLibrary,
    backend: PlannerBackend,
    max_repair_rounds: int = 2,
    robot_description: str = DEFAULT_ROBOT_DESCRIPTION,
) -> PlanOutcome:
    """Plan ``instruction``; the returned graph, if any, always validates ok."""
    if max_repair_rounds < 0:
        raise ValueError("max_repair_rounds must be >= 0")
    bundle = build_prompt(instruction, library, robot_description)
    messages = [{"role": "user", "content": bundle.render()}]
    raw: list[str] = []
    latency: list[float] = []
    prompts: list[str] = []
    report = ValidationReport()

    for round_no in range(max_repair_rounds + 1):
        prompts.append(render_conversation(messages))
        text, elapsed = _complete(backend, messages, bundle)
        raw.append(text)
        latency.append(elapsed)
        try:
            graph = parse_xml(extract_task_graph(text))
        except XMLSyntaxError as exc:
            report = ValidationReport((Issue("error", None, f"syntax error: {exc}"),))
            feedback = f"your XML failed to parse: {exc}; emit only corrected XML"
        except SchemaError as exc:
            report = ValidationReport((Issue("error", None, f"schema error: {exc}"),))
            feedback = f"your XML does not follow the task graph schema: {exc}; emit only corrected XML"
        else:
            report = validate(graph, library)
            if report.ok:
                return PlanOutcome(graph, raw, round_no, report, latency, prompts)
            issues = "\n".join(f"- {i.message}" for i in report.errors)
            feedback = f"your task graph is not executable:\n{issues}\nemit only corrected XML"
        messages = messages + [{"role": "assistant", "content": text}, {"role": "user", "content": feedback}]

    return PlanOutcome(None, raw, max_repair_rounds, report, latency, prompts)


# ---------------------------------------------------------------------------
# template planner

_FR_WORDS = re.compile(r"\brecover\w*|\bfailures?\b|\(fr\)", re.I)
_FIND = re.compile(r"\b(find|locate|look for|search for|search)\b", re.I)
_PLACE = re.compile(r"\b(place|put|aside|set down|drop)\b", re.I)
_PICK = re.compile(r"\b(pick|lift)\b", re.I)
_GRASP = re.compile(r"\b(grasp|grab|grip|hold)\b", re.I)
_APPROACH = re.compile(r"\b(approach|go to|move to|walk to|drive to|navigate to|get close)\b", re.I)


def _target_aliases(scene) -> dict[str, tuple[str, ...]]:
    if scene is None:
        return TARGET_ALIASES
    out = {}
    for o in scene.objects:
        aliases = set(TARGET_ALIASES.get(o.id, ()))
        aliases.add(o.id.replace("_", " "))
        aliases.add(o.id)
        aliases.add(re.sub(r"^\d+_", "", o.label).replace("_", " "))
        out[o.id] = tuple(aliases)
    return out


def extract_target(instruction: str, scene=None) -> str | None:
    text = " " + " ".join(instruction.lower().split()) + " "
    best = None
    for target, aliases in _target_aliases(scene).items():
        for alias in aliases:
            m = re.search(r"\b" + re.escape(alias.lower()) + r"\b", text)
            if m and (best is None or len(alias) > best[0] or (len(alias) == best[0] and m.start() < best[1])):
                best = (len(alias), m.start(), target)
    return best[2] if best else None


def classify_instruction(instruction: str, scene=None) -> tuple[str, str]:
    """Return ``(template kind, target id)`` or raise :class:`NoTemplateError`."""
    sentences = re.split(r"(?<=[.!?;])\s+", instruction.strip())
    wants_fr = any(_FR_WORDS.search(s) for s in sentences)
    task = " ".join(s for s in sentences if not _FR_WORDS.search(s)) or instruction

    if _FIND.search(task) and (_PICK.search(task) or _GRASP.search(task)):
        kind = "find_pick_fr"
    elif _PLACE.search(task):
        kind = "place_fr" if wants_fr else "place"
    elif _PICK.search(task):
        kind = "pick_fr" if wants_fr else "pick"
    elif _GRASP.search(task):
        kind = "grasp"
    elif _APPROACH.search(task):
        kind = "approach"
    elif _FIND.search(task) or re.search(r"\bdetect\b", task, re.I):
        kind = "find"
    else:
        raise NoTemplateError(f"no task template matches {instruction!r}")
    if wants_fr and not kind.endswith("_fr"):
        raise NoTemplateError(f"no failure-recovery template for a {kind} task")

    target = extract_target(task, scene) or extract_target(instruction, scene)
    if target is None:
        raise NoTemplateError(f"no known target object in {instruction!r}")
    return kind, target


def place_aside(target: str, scene) -> tuple[float, float, float]:
    """A point beside the target, reachable from the approach standoff."""
    if scene is None:
        return DEFAULT_PLACE
    obj = next((o for o in scene.objects if o.id == target), None)
    if obj is None:
        return DEFAULT_PLACE
    dx, dy = obj.pose.x - scene.robot.x, obj.pose.y - scene.robot.y
    norm = math.hypot(dx, dy) or 1.0
    nx, ny = -dy / norm, dx / norm
    return (
        round(obj.pose.x + PLACE_ASIDE_OFFSET * nx, 3),
        round(obj.pose.y + PLACE_ASIDE_OFFSET * ny, 3),
        round(obj.pose.z, 3),
    )


def _template_tree(kind: str, target: str, scene) -> TaskGraph:
    approach = action("Approach", target=target, standoff_m=0.5)
    grasp_fr = retry(FR_ATTEMPTS, sequence(action("Grasp", target=target), condition("IsObjectHeld", target=target)))
    if kind in ("place", "place_fr"):
        x, y, z = place_aside(target, scene)
        place = action("Place", x=float(x), y=float(y), z=float(z))

    if kind == "find":
        root = sequence(
            fallback(condition("ObjectVisible", target=target), action("Approach", target=target, standoff_m=1.5)),
            condition("ObjectVisible", target=target),
        )
    elif kind == "approach":
        root = sequence(approach, condition("IsNearObject", target=target))
    elif kind == "grasp":
        root = sequence(approach, action("Grasp", target=target))
    elif kind == "pick":
        root = sequence(approach, action("Grasp", target=target), action("Lift"))
    elif kind == "pick_fr":
        root = sequence(approach, grasp_fr, action("Lift"))
    elif kind == "place":
        root = sequence(approach, action("Grasp", target=target), action("Lift"), place)
    elif kind == "place_fr":
        root = sequence(approach, grasp_fr, action("Lift"), place)
    elif kind == "find_pick_fr":
        root = sequence(condition("ObjectDetection", target=target), approach, grasp_fr, action("Lift"))
    else:
        raise NoTemplateError(f"unknown template {kind!r}")
    return TaskGraph.from_spec(root, name=f"{kind}_{target}")


def template_plan(instruction: str, library: BehaviorLibrary, scene=None) -> TaskGraph:
    """Canonical tree for one of the eight benchmark task templates."""
    kind, target = classify_instruction(instruction, scene)
    graph = _template_tree(kind, target, scene)
    report = validate(graph, library)
    if not report.ok:
        raise NoTemplateError(f"template {kind} is not executable with this library: {report.format()}")
    return graph
