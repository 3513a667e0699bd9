"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TaskGraphError(Exception):
    """Base class for every error raised by :mod:`taskgraph`."""


class ParseError(TaskGraphError):
    """A candidate task-graph document could not be turned into a graph."""


class XMLSyntaxError(ParseError):
    """The document is not well-formed XML."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(ParseError):
    """Well-formed XML that violates the task-graph schema."""

    def __init__(self, message: str, element: str | None = None):
        self.element = element
        self.reason = message
        prefix = f"{element}: " if element else ""
        super().__init__(f"{prefix}{message}")


class GraphValidationError(TaskGraphError):
    """Raised where a valid graph is required but the graph is not."""

    def __init__(self, report):
        self.report = report
        errors = [i.message for i in report.issues if i.severity == "error"]
        super().__init__("invalid task graph: " + "; ".join(errors))


class InternalConsistencyError(TaskGraphError):
    """Interpreter state does not belong to the graph being ticked."""


class ExecutionError(TaskGraphError):
    """A leaf could not be executed at all (distinct from a Failure status)."""

    def __init__(self, message: str, node: int | None = None):
        self.node = node
        super().__init__(message)


class DuplicateBehaviorError(TaskGraphError):
    pass


class PerceptionUnavailable(TaskGraphError):
    """A perception behavior could not produce a reading."""


class SceneError(TaskGraphError):
    pass


class SnapshotError(TaskGraphError):
    pass


class PlannerError(TaskGraphError):
    pass


class NoTemplateError(PlannerError):
    pass


class BackendConfigError(PlannerError):
    """Backend misconfiguration, including replay fixture exhaustion."""


class TransportError(PlannerError):
    """The language-model endpoint could not be reached or answered badly."""


class DivergenceError(TaskGraphError):
    """A replayed run does not reproduce the recorded trace."""

    def __init__(self, message: str, index: int | None = None, expected=None, actual=None):
        self.index = index
        self.expected = expected
        self.actual = actual
        super().__init__(message)
