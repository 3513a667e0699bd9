"""Execution trace events and the newline-delimited trace file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .bt import TickStatus
from .errors import TaskGraphError

TRACE_SCHEMA = "taskgraph-trace/1"


@dataclass(frozen=True)
class TraceEvent:
    tick_index: int
    node: int
    behavior_name: str
    status: TickStatus
    world_step: int
    detail: str = ""

    def to_json(self) -> str:
        record = {
            "tick": self.tick_index,
            "node": self.node,
            "behavior": self.behavior_name,
            "status": self.status.value,
            "step": self.world_step,
            "detail": self.detail,
        }
        return json.dumps(record, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(int(d["tick"]), int(d["node"]), d["behavior"], TickStatus(d["status"]), int(d["step"]), d["detail"])


def dumps_trace(header: dict, events: list[TraceEvent]) -> str:
    head = {"schema": TRACE_SCHEMA} | header
    lines = [json.dumps(head, separators=(",", ":"), ensure_ascii=False)]
    lines.extend(e.to_json() for e in events)
    return "\n".join(lines) + "\n"


def loads_trace(text: str) -> tuple[dict, list[TraceEvent]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TaskGraphError("trace file is empty (missing header)")
    try:
        header = json.loads(lines[0])
        if header.get("schema") != TRACE_SCHEMA:
            raise TaskGraphError(f"unsupported trace schema {header.get('schema')!r}")
        events = [TraceEvent.from_json(ln) for ln in lines[1:]]
    except (ValueError, KeyError) as exc:
        raise TaskGraphError(f"malformed trace: {exc}") from exc
    return header, events


def write_trace(path: str | Path, header: dict, events: list[TraceEvent]) -> None:
    Path(path).write_text(dumps_trace(header, events), encoding="utf-8")


def read_trace(path: str | Path) -> tuple[dict, list[TraceEvent]]:
    return loads_trace(Path(path).read_text(encoding="utf-8"))
