"""Behavior library: typed, tagged behaviors, their bindings and fused conditions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from string import Formatter
from typing import Any, Callable, Iterable, Mapping

from .bt import Node, NodeKind, TickStatus
from .errors import DuplicateBehaviorError, ExecutionError, PerceptionUnavailable, TaskGraphError
from .trace import TraceEvent

log = logging.getLogger(__name__)

ACTION = "action"
PERCEPTION = "perception"
PROMPT_HEADER = "name | kind | tag"

# reading above this counts as "there is a torque on the gripper"
GRIP_TORQUE_THRESHOLD = 0.1


@dataclass(frozen=True)
class BehaviorTag:
    name: str
    kind: str
    tag: str

    def __post_init__(self):
        if self.kind not in (ACTION, PERCEPTION):
            raise ValueError(f"behavior kind must be action or perception, got {self.kind!r}")
        if not self.name or not self.tag.strip():
            raise ValueError("behavior name and tag must be non-empty")
        if "|" in self.name or "|" in self.tag or "\n" in self.tag:
            raise ValueError("behavior name and tag cannot contain '|' or newlines")


@dataclass(frozen=True)
class BehaviorBinding:
    """Executable half of a behavior.

    Action executables take ``(params, world)`` and return a TickStatus.
    Perception executables take ``(params, world)`` and return a reading,
    raising :class:`PerceptionUnavailable` when they cannot.
    ``default_predicate`` turns a reading into pass/fail when a Condition leaf
    names the perception behavior directly.
    """

    executable: Callable[[Mapping[str, Any], Any], Any] | None = None
    default_predicate: Callable[[Any], bool] | None = None
    required: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConditionMember:
    behavior: str
    predicate: Callable[[Any], bool]
    # values are str.format templates over the condition leaf's params
    params: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    members: tuple[ConditionMember, ...]
    fusion: str = "all"
    description: str = ""

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"condition {self.name} needs at least one member")
        if self.fusion not in ("all", "any"):
            raise ValueError(f"fusion must be 'all' or 'any', got {self.fusion!r}")


@dataclass(frozen=True)
class LibraryEntry:
    tag: BehaviorTag
    binding: BehaviorBinding


class BehaviorLibrary:
    """Immutable mapping of behavior names to tags and bindings.

    :meth:`register` and :meth:`add_condition` return new libraries.
    """

    def __init__(
        self,
        entries: Mapping[str, LibraryEntry] | None = None,
        conditions: Mapping[str, ConditionSpec] | None = None,
    ):
        self._entries = dict(entries or {})
        self._conditions = dict(conditions or {})

    # -- construction --------------------------------------------------

    def register(self, tag: BehaviorTag, binding: BehaviorBinding | None = None) -> "BehaviorLibrary":
        if tag.name in self._entries or tag.name in self._conditions:
            raise DuplicateBehaviorError(f"behavior {tag.name!r} is already registered")
        entries = dict(self._entries)
        entries[tag.name] = LibraryEntry(tag, binding or BehaviorBinding())
        return BehaviorLibrary(entries, self._conditions)

    def add_condition(self, spec: ConditionSpec) -> "BehaviorLibrary":
        if spec.name in self._conditions or spec.name in self._entries:
            raise DuplicateBehaviorError(f"condition {spec.name!r} is already registered")
        for m in spec.members:
            entry = self._entries.get(m.behavior)
            if entry is None or entry.tag.kind != PERCEPTION:
                raise ValueError(f"condition {spec.name} member {m.behavior} is not a registered perception behavior")
        conditions = dict(self._conditions)
        conditions[spec.name] = spec
        return BehaviorLibrary(self._entries, conditions)

    # -- lookup --------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries or name in self._conditions

    def __eq__(self, other) -> bool:
        if not isinstance(other, BehaviorLibrary):
            return NotImplemented
        return self._entries == other._entries and self._conditions == other._conditions

    def lookup(self, name: str) -> LibraryEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"unknown behavior {name}") from None

    @property
    def tags(self) -> list[BehaviorTag]:
        return [e.tag for e in self._entries.values()]

    @property
    def conditions(self) -> dict[str, ConditionSpec]:
        return dict(self._conditions)

    def kind_of(self, name: str) -> str | None:
        if name in self._conditions:
            return "condition"
        entry = self._entries.get(name)
        return entry.tag.kind if entry else None

    def is_held_check(self, name: str) -> bool:
        held_sensors = {"GripForce", "VisualQA"}
        if name in self._conditions:
            return any(m.behavior in held_sensors for m in self._conditions[name].members)
        return name in held_sensors

    def missing_params(self, name: str, params: Mapping[str, Any]) -> list[str]:
        if name in self._conditions:
            needed = set()
            for m in self._conditions[name].members:
                for template in m.params.values():
                    if isinstance(template, str):
                        needed.update(f for _, f, _, _ in Formatter().parse(template) if f)
            return sorted(needed - set(params))
        entry = self._entries.get(name)
        if entry is None:
            return []
        return [k for k in entry.binding.required if k not in params]

    def with_bindings(self, bindings: Mapping[str, BehaviorBinding]) -> "BehaviorLibrary":
        """Attach executables by name; entries without one keep their current binding."""
        entries = {
            name: LibraryEntry(e.tag, bindings.get(name, e.binding)) for name, e in self._entries.items()
        }
        return BehaviorLibrary(entries, self._conditions)

    # -- prompt / manifest ---------------------------------------------

    def tags_prompt_block(self) -> str:
        return tags_prompt_block(self)

    def evaluate_condition(self, name: str, params: Mapping[str, Any], world) -> tuple[TickStatus, str]:
        return evaluate_condition(self, name, params, world)

    def dispatch(self, leaf: Node, world, trace: list | None = None, tick_index: int = 0) -> TickStatus:
        return dispatch(self, leaf, world, trace, tick_index)


def tags_prompt_block(library: BehaviorLibrary) -> str:
    """``name | kind | tag`` lines: actions then perceptions, each alphabetical."""
    rank = {ACTION: 0, PERCEPTION: 1}
    tags = sorted(library.tags, key=lambda t: (rank[t.kind], t.name))
    lines = [PROMPT_HEADER] + [f"{t.name} | {t.kind} | {t.tag}" for t in tags]
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> list[BehaviorTag]:
    tags = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise TaskGraphError(f"manifest line {lineno}: expected name|kind|tag")
        if parts == ["name", "kind", "tag"]:
            continue
        try:
            tags.append(BehaviorTag(*parts))
        except ValueError as exc:
            raise TaskGraphError(f"manifest line {lineno}: {exc}") from None
    return tags


def dump_manifest(library: BehaviorLibrary) -> str:
    return "".join(line.replace(" | ", "|") + "\n" for line in tags_prompt_block(library).splitlines()[1:])


def load_manifest(path: str | Path, bindings: Mapping[str, BehaviorBinding] | None = None,
                  conditions: Iterable[ConditionSpec] = ()) -> BehaviorLibrary:
    """Build a library from a manifest file.

    Conditions whose members are not all present as perception behaviors are
    skipped, so a reduced manifest yields a consistent library.
    """
    lib = BehaviorLibrary()
    for tag in parse_manifest(Path(path).read_text(encoding="utf-8")):
        lib = lib.register(tag, (bindings or {}).get(tag.name))
    for spec in conditions:
        if all(lib.kind_of(m.behavior) == PERCEPTION for m in spec.members):
            lib = lib.add_condition(spec)
    return lib


# ---------------------------------------------------------------------------
# execution


def _member_params(member: ConditionMember, params: Mapping[str, Any]) -> dict[str, Any]:
    return {k: v.format(**params) if isinstance(v, str) else v for k, v in member.params.items()}


def evaluate_condition(library: BehaviorLibrary, name: str, params: Mapping[str, Any], world) -> tuple[TickStatus, str]:
    """Run every member sensor and fuse the predicates.

    Returns the status and a ``Behavior=reading`` detail string. A member that
    cannot be read makes the condition fail; it never raises or returns Running.
    """
    spec = library.conditions.get(name)
    if spec is None:
        entry = library._entries.get(name)
        if entry is None or entry.tag.kind != PERCEPTION:
            raise ExecutionError(f"unknown condition {name}")
        predicate = entry.binding.default_predicate or bool
        spec = ConditionSpec(name, (ConditionMember(name, predicate, {k: "{%s}" % k for k in params}),))

    results = []
    details = []
    for member in spec.members:
        entry = library._entries.get(member.behavior)
        try:
            if entry is None or entry.binding.executable is None:
                raise PerceptionUnavailable(f"{member.behavior} has no executable")
            reading = entry.binding.executable(_member_params(member, params), world)
            passed = bool(member.predicate(reading))
            details.append(f"{member.behavior}={_fmt_reading(reading)}")
        except (PerceptionUnavailable, KeyError, ValueError, TypeError) as exc:
            log.warning("condition %s: %s unavailable: %s", name, member.behavior, exc)
            details.append(f"{member.behavior}=unavailable")
            passed = False
        results.append(passed)
    ok = all(results) if spec.fusion == "all" else any(results)
    return (TickStatus.SUCCESS if ok else TickStatus.FAILURE), ";".join(details)


def _fmt_reading(reading: Any) -> str:
    if reading is None:
        return "none"
    if isinstance(reading, float):
        return repr(reading)
    if hasattr(reading, "as_tuple"):
        return ",".join(repr(v) for v in reading.as_tuple())
    return str(reading)


def _fmt_params(params: Mapping[str, Any]) -> str:
    return ",".join(f"{k}={params[k]}" for k in sorted(params))


def dispatch(library: BehaviorLibrary, leaf: Node, world, trace: list | None = None, tick_index: int = 0) -> TickStatus:
    """Execute one leaf against ``world`` and optionally append a trace event."""
    step = world.step_count
    params = dict(leaf.params)
    if leaf.kind is NodeKind.ACTION:
        kind = library.kind_of(leaf.name)
        if kind is None:
            raise ExecutionError(f"unknown behavior {leaf.name}", leaf.id)
        if kind != ACTION:
            raise ExecutionError(f"{leaf.name} is a {kind}, not an action", leaf.id)
        binding = library.lookup(leaf.name).binding
        if binding.executable is None:
            raise ExecutionError(f"behavior {leaf.name} has no executable bound", leaf.id)
        status = binding.executable(params, world)
        detail = _fmt_params(params)
    elif leaf.kind is NodeKind.CONDITION:
        kind = library.kind_of(leaf.name)
        if kind is None:
            raise ExecutionError(f"unknown condition {leaf.name}", leaf.id)
        if kind == ACTION:
            raise ExecutionError(f"{leaf.name} is an action, not a condition", leaf.id)
        status, detail = evaluate_condition(library, leaf.name, params, world)
    else:
        raise ExecutionError(f"{leaf.kind} is not a leaf", leaf.id)
    if not isinstance(status, TickStatus):
        raise ExecutionError(f"{leaf.name} returned {status!r}", leaf.id)
    if trace is not None:
        trace.append(TraceEvent(tick_index, leaf.id, leaf.name, status, step, detail))
    return status
