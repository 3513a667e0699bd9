"""Behavior-tree data model, tick interpreter and the canonical XML format.

A :class:`TaskGraph` is an immutable rooted tree of control nodes
(``Sequence``, ``Fallback``, ``Retry``) and leaves (``Action``,
``Condition``). Node ids are assigned in pre-order when a graph is built
from a :class:`NodeSpec` tree, so structurally equal graphs compare equal.

Sequences and fallbacks keep memory: a child that returned ``Running`` is
resumed on the next tick instead of re-evaluating its earlier siblings.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Mapping, Protocol, Union
from xml.sax.saxutils import escape

from .errors import (
    ExecutionError,
    GraphValidationError,
    InternalConsistencyError,
    SchemaError,
    XMLSyntaxError,
)

Scalar = Union[str, int, float, bool]
NodeId = int


class TickStatus(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    RUNNING = "Running"

    def __str__(self) -> str:
        return self.value


class NodeKind(str, Enum):
    SEQUENCE = "Sequence"
    FALLBACK = "Fallback"
    RETRY = "Retry"
    ACTION = "Action"
    CONDITION = "Condition"

    @property
    def is_leaf(self) -> bool:
        return self in (NodeKind.ACTION, NodeKind.CONDITION)

    def __str__(self) -> str:
        return self.value


CONTROL_KINDS = (NodeKind.SEQUENCE, NodeKind.FALLBACK, NodeKind.RETRY)
_RESERVED_ATTRS = ("name", "num_attempts")
_PARAM_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")
# characters XML 1.0 cannot carry, even escaped
_NOT_XML = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


@dataclass(frozen=True)
class Node:
    id: NodeId
    kind: NodeKind
    children: tuple[NodeId, ...] = ()
    # behavior / condition name on leaves, optional label on control nodes
    name: str = ""
    max_attempts: int | None = None
    params: Mapping[str, Scalar] = field(default_factory=dict)


@dataclass
class NodeSpec:
    """Nested, id-free description of a tree; see :meth:`TaskGraph.from_spec`."""

    kind: NodeKind
    name: str = ""
    children: list["NodeSpec"] = field(default_factory=list)
    max_attempts: int | None = None
    params: dict[str, Scalar] = field(default_factory=dict)


def sequence(*children: NodeSpec, name: str = "") -> NodeSpec:
    return NodeSpec(NodeKind.SEQUENCE, name=name, children=list(children))


def fallback(*children: NodeSpec, name: str = "") -> NodeSpec:
    return NodeSpec(NodeKind.FALLBACK, name=name, children=list(children))


def retry(max_attempts: int, child: NodeSpec, name: str = "") -> NodeSpec:
    return NodeSpec(NodeKind.RETRY, name=name, children=[child], max_attempts=max_attempts)


def action(name: str, **params: Scalar) -> NodeSpec:
    return NodeSpec(NodeKind.ACTION, name=name, params=dict(params))


def condition(name: str, **params: Scalar) -> NodeSpec:
    return NodeSpec(NodeKind.CONDITION, name=name, params=dict(params))


@dataclass(frozen=True)
class TaskGraph:
    root: NodeId
    nodes: Mapping[NodeId, Node]
    name: str = ""

    @classmethod
    def from_spec(cls, root: NodeSpec, name: str = "") -> "TaskGraph":
        nodes: dict[NodeId, Node] = {}

        def build(spec: NodeSpec) -> NodeId:
            nid = len(nodes)
            nodes[nid] = None  # reserve the pre-order slot
            child_ids = tuple(build(c) for c in spec.children)
            nodes[nid] = Node(
                id=nid,
                kind=NodeKind(spec.kind),
                children=child_ids,
                name=spec.name,
                max_attempts=spec.max_attempts,
                params=dict(spec.params),
            )
            return nid

        return cls(root=build(root), nodes=nodes, name=name)

    def to_spec(self, nid: NodeId | None = None) -> NodeSpec:
        node = self.nodes[self.root if nid is None else nid]
        return NodeSpec(
            kind=node.kind,
            name=node.name,
            children=[self.to_spec(c) for c in node.children],
            max_attempts=node.max_attempts,
            params=dict(node.params),
        )

    def preorder(self, nid: NodeId | None = None) -> Iterator[Node]:
        stack = [self.root if nid is None else nid]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list[Node]:
        return [n for n in self.preorder() if n.kind.is_leaf]

    def subtree_ids(self, nid: NodeId) -> list[NodeId]:
        return [n.id for n in self.preorder(nid)]

    def __len__(self) -> int:
        return len(self.nodes)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    node: NodeId | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    def format(self) -> str:
        return "\n".join(
            f"{i.severity}: {'' if i.node is None else f'node {i.node}: '}{i.message}"
            for i in self.issues
        )


class LibraryView(Protocol):
    def kind_of(self, name: str) -> str | None:
        """Return "action", "perception", "condition" or None."""

    def is_held_check(self, name: str) -> bool: ...

    def missing_params(self, name: str, params: Mapping[str, Scalar]) -> list[str]: ...


def _coerce(text: str) -> Scalar:
    """Typed value of an attribute string; only exact round-trips are coerced."""
    if text in ("true", "false"):
        return text == "true"
    try:
        as_int = int(text)
        if str(as_int) == text:
            return as_int
    except ValueError:
        pass
    try:
        as_float = float(text)
        if math.isfinite(as_float) and repr(as_float) == text:
            return as_float
    except ValueError:
        pass
    return text


def _format_scalar(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _param_issues(node: Node) -> list[Issue]:
    out = []
    for key, value in node.params.items():
        if not isinstance(key, str) or not _PARAM_KEY.match(key):
            out.append(Issue("error", node.id, f"invalid parameter name {key!r}"))
            continue
        if key in _RESERVED_ATTRS:
            out.append(Issue("error", node.id, f"parameter name {key!r} is reserved"))
            continue
        if not isinstance(value, (str, int, float, bool)):
            out.append(Issue("error", node.id, f"parameter {key} is not a scalar"))
        elif isinstance(value, float) and not math.isfinite(value):
            out.append(Issue("error", node.id, f"parameter {key} is not finite"))
        elif isinstance(value, str) and _NOT_XML.search(value):
            out.append(Issue("error", node.id, f"parameter {key} contains characters XML cannot represent"))
        elif isinstance(value, str) and _coerce(value) != value:
            out.append(
                Issue("error", node.id, f"string parameter {key}={value!r} reads back as a number or boolean")
            )
    return out


def check_structure(graph: TaskGraph) -> list[Issue]:
    """Structural invariants only; no behavior library involved."""
    issues: list[Issue] = []
    if graph.root not in graph.nodes:
        return [Issue("error", None, f"root {graph.root} is not a node")]
    for nid, node in graph.nodes.items():
        if not isinstance(node, Node) or node.id != nid:
            issues.append(Issue("error", nid, "node table key does not match node id"))
    if issues:
        return issues
    if not isinstance(graph.name, str) or _NOT_XML.search(graph.name):
        issues.append(Issue("error", None, "graph name contains characters XML cannot represent"))

    parents: dict[NodeId, NodeId] = {}
    seen = {graph.root}
    stack = [graph.root]
    while stack:
        nid = stack.pop()
        for child in graph.nodes[nid].children:
            if child not in graph.nodes:
                issues.append(Issue("error", nid, f"child {child} is not a node"))
                continue
            if child == graph.root or child in parents:
                issues.append(Issue("error", child, "node has more than one parent or forms a cycle"))
                continue
            parents[child] = nid
            seen.add(child)
            stack.append(child)
    for nid in graph.nodes:
        if nid not in seen:
            issues.append(Issue("error", nid, "node is not reachable from the root"))
    if issues:
        return issues

    for node in graph.preorder():
        n_children = len(node.children)
        if node.kind in (NodeKind.SEQUENCE, NodeKind.FALLBACK):
            if n_children < 1:
                issues.append(Issue("error", node.id, f"{node.kind} requires at least one child"))
        elif node.kind is NodeKind.RETRY:
            if n_children != 1 or not isinstance(node.max_attempts, int) or node.max_attempts < 1:
                issues.append(Issue("error", node.id, "Retry requires num_attempts and one child"))
        else:
            if n_children:
                issues.append(Issue("error", node.id, f"{node.kind} leaf cannot have children"))
            if not node.name:
                issues.append(Issue("error", node.id, f"{node.kind} requires a name"))
            issues.extend(_param_issues(node))
        if _NOT_XML.search(node.name):
            issues.append(Issue("error", node.id, "name contains characters XML cannot represent"))
        if not node.kind.is_leaf and node.params:
            issues.append(Issue("error", node.id, f"{node.kind} takes no parameters"))
    return issues


def validate(graph: TaskGraph, library: LibraryView | None = None) -> ValidationReport:
    """Check structure and, given a library, that every leaf is executable."""
    issues = check_structure(graph)
    if issues or library is None:
        return ValidationReport(tuple(issues))

    order = list(graph.preorder())
    for node in order:
        if not node.kind.is_leaf:
            continue
        kind = library.kind_of(node.name)
        if kind is None:
            issues.append(Issue("error", node.id, f"unknown behavior {node.name}"))
        elif node.kind is NodeKind.ACTION and kind != "action":
            issues.append(Issue("error", node.id, f"{node.name} is a {kind}, not an action"))
        elif node.kind is NodeKind.CONDITION and kind == "action":
            issues.append(Issue("error", node.id, f"{node.name} is an action, not a condition"))
        else:
            missing = library.missing_params(node.name, node.params)
            if missing:
                issues.append(Issue("error", node.id, f"{node.name} is missing parameter(s) {', '.join(missing)}"))

    for pos, node in enumerate(order):
        if node.kind is NodeKind.ACTION and node.name == "Grasp":
            later = order[pos + 1:]
            if not any(n.kind is NodeKind.CONDITION and library.is_held_check(n.name) for n in later):
                issues.append(Issue("warning", node.id, "Grasp is never followed by a held-object check"))
        if node.kind is NodeKind.RETRY:
            sub = [graph.nodes[i] for i in graph.subtree_ids(node.id)]
            if all(n.kind is not NodeKind.ACTION for n in sub):
                issues.append(Issue("warning", node.id, "Retry wraps a perception-only subtree"))
    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# XML


def _quote(value: str) -> str:
    return '"' + escape(value, {'"': "&quot;", "\n": "&#10;", "\r": "&#13;", "\t": "&#9;"}) + '"'


def _attrs(node: Node) -> str:
    parts = []
    if node.name or node.kind.is_leaf:
        parts.append(f"name={_quote(node.name)}")
    if node.kind is NodeKind.RETRY:
        parts.append(f"num_attempts={_quote(str(node.max_attempts))}")
    for key in sorted(node.params):
        parts.append(f"{key}={_quote(_format_scalar(node.params[key]))}")
    return "".join(" " + p for p in parts)


def serialize(graph: TaskGraph) -> str:
    """Canonical XML: tree order, fixed attribute order, 2-space indent, LF."""
    issues = check_structure(graph)
    if issues:
        raise GraphValidationError(ValidationReport(tuple(issues)))
    lines = [f"<TaskGraph name={_quote(graph.name)}>"]

    def emit(nid: NodeId, depth: int) -> None:
        node = graph.nodes[nid]
        pad = "  " * depth
        if node.kind.is_leaf:
            lines.append(f"{pad}<{node.kind.value}{_attrs(node)}/>")
            return
        lines.append(f"{pad}<{node.kind.value}{_attrs(node)}>")
        for child in node.children:
            emit(child, depth + 1)
        lines.append(f"{pad}</{node.kind.value}>")

    emit(graph.root, 1)
    lines.append("</TaskGraph>")
    return "\n".join(lines) + "\n"


def _has_text(text: str | None) -> bool:
    return bool(text and text.strip())


def _spec_from_element(el: ET.Element, path: str) -> NodeSpec:
    try:
        kind = NodeKind(el.tag)
    except ValueError:
        raise SchemaError(f"unknown element <{el.tag}>", path) from None
    if _has_text(el.text):
        raise SchemaError("unexpected text content", path)
    attrs = dict(el.attrib)
    name = attrs.pop("name", "")

    if kind.is_leaf:
        if len(el):
            raise SchemaError(f"{kind} cannot have children", path)
        if not name:
            raise SchemaError(f"{kind} requires a name attribute", path)
        if "num_attempts" in attrs:
            raise SchemaError("num_attempts is only valid on Retry", path)
        for key in attrs:
            if not _PARAM_KEY.match(key):
                raise SchemaError(f"invalid attribute name {key!r}", path)
        return NodeSpec(kind, name=name, params={k: _coerce(v) for k, v in attrs.items()})

    max_attempts = None
    if kind is NodeKind.RETRY:
        raw = attrs.pop("num_attempts", None)
        if raw is None or len(el) != 1:
            raise SchemaError("Retry requires num_attempts and one child", path)
        try:
            max_attempts = int(raw)
        except ValueError:
            raise SchemaError(f"num_attempts must be a positive integer, got {raw!r}", path) from None
        if max_attempts < 1 or str(max_attempts) != raw.strip():
            raise SchemaError(f"num_attempts must be a positive integer, got {raw!r}", path)
    elif len(el) < 1:
        raise SchemaError(f"{kind} requires at least one child", path)
    if attrs:
        raise SchemaError(f"unknown attribute(s) {', '.join(sorted(attrs))} on {kind}", path)

    children = []
    for i, child in enumerate(el):
        children.append(_spec_from_element(child, f"{path}/{child.tag}[{i}]"))
        if _has_text(child.tail):
            raise SchemaError("unexpected text content", path)
    return NodeSpec(kind, name=name, children=children, max_attempts=max_attempts)


def parse_xml(text: str) -> TaskGraph:
    """Parse a task-graph document.

    Raises :class:`XMLSyntaxError` for malformed XML and :class:`SchemaError`
    for well-formed documents that do not follow the task-graph schema.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, column = exc.position
        raise XMLSyntaxError(str(exc).split(":")[0], line, column) from None
    if root.tag != "TaskGraph":
        raise SchemaError(f"root element must be <TaskGraph>, got <{root.tag}>", root.tag)
    extra = set(root.attrib) - {"name"}
    if extra:
        raise SchemaError(f"unknown attribute(s) {', '.join(sorted(extra))} on TaskGraph", "TaskGraph")
    if _has_text(root.text):
        raise SchemaError("unexpected text content", "TaskGraph")
    if len(root) != 1:
        raise SchemaError(f"TaskGraph requires exactly one child, got {len(root)}", "TaskGraph")
    child = root[0]
    if _has_text(child.tail):
        raise SchemaError("unexpected text content", "TaskGraph")
    spec = _spec_from_element(child, f"TaskGraph/{child.tag}")
    return TaskGraph.from_spec(spec, name=root.attrib.get("name", ""))


# ---------------------------------------------------------------------------
# tick interpreter


@dataclass
class NodeMemory:
    resume_child_index: int = 0
    attempts_used: int = 0


@dataclass
class RunState:
    memory: dict[NodeId, NodeMemory] = field(default_factory=dict)
    last_status: TickStatus | None = None

    def mem(self, nid: NodeId) -> NodeMemory:
        m = self.memory.get(nid)
        if m is None:
            m = self.memory[nid] = NodeMemory()
        return m

    def reset(self, nids) -> None:
        for nid in nids:
            self.memory.pop(nid, None)


Dispatch = Callable[[Node], TickStatus]


def _check_state(graph: TaskGraph, state: RunState) -> None:
    for nid, m in state.memory.items():
        node = graph.nodes.get(nid)
        if node is None:
            raise InternalConsistencyError(f"run state references unknown node {nid}")
        if not 0 <= m.resume_child_index < max(len(node.children), 1):
            raise InternalConsistencyError(f"resume index {m.resume_child_index} out of range at node {nid}")
        limit = node.max_attempts if node.kind is NodeKind.RETRY else 0
        if not 0 <= m.attempts_used <= limit:
            raise InternalConsistencyError(f"attempt count {m.attempts_used} out of range at node {nid}")


def _tick_node(graph: TaskGraph, nid: NodeId, state: RunState, dispatch: Dispatch) -> TickStatus:
    node = graph.nodes[nid]
    kind = node.kind

    if kind.is_leaf:
        try:
            status = dispatch(node)
        except ExecutionError as exc:
            if exc.node is None:
                exc.node = nid
            raise
        except Exception as exc:
            raise ExecutionError(f"{node.name}: {exc}", nid) from exc
        if not isinstance(status, TickStatus):
            raise ExecutionError(f"{node.name} returned {status!r}, not a TickStatus", nid)
        return status

    if kind is NodeKind.RETRY:
        mem = state.mem(nid)
        child = node.children[0]
        status = _tick_node(graph, child, state, dispatch)
        if status is TickStatus.RUNNING:
            return status
        state.reset(graph.subtree_ids(child))
        if status is TickStatus.SUCCESS:
            mem.attempts_used = 0
            return status
        mem.attempts_used += 1
        if mem.attempts_used < node.max_attempts:
            return TickStatus.RUNNING
        mem.attempts_used = 0
        return TickStatus.FAILURE

    # Sequence stops on the first non-Success; Fallback on the first non-Failure.
    passthrough = TickStatus.SUCCESS if kind is NodeKind.SEQUENCE else TickStatus.FAILURE
    mem = state.mem(nid)
    for index in range(mem.resume_child_index, len(node.children)):
        status = _tick_node(graph, node.children[index], state, dispatch)
        if status is TickStatus.RUNNING:
            mem.resume_child_index = index
            return status
        if status is not passthrough:
            mem.resume_child_index = 0
            return status
    mem.resume_child_index = 0
    return passthrough


def tick(graph: TaskGraph, state: RunState, dispatch: Dispatch) -> TickStatus:
    """Tick the root once and return its status.

    ``dispatch`` executes a leaf and returns its status. An exception inside
    ``dispatch`` aborts the tick with :class:`ExecutionError`.
    """
    _check_state(graph, state)
    status = _tick_node(graph, graph.root, state, dispatch)
    state.last_status = status
    return status
