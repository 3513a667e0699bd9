"""Behavior-tree task graphs planned by a language model and executed in a seeded simulator."""

from .behaviors import load_library, standard_library
from .bt import (
    Node,
    NodeKind,
    NodeSpec,
    RunState,
    TaskGraph,
    TickStatus,
    ValidationReport,
    parse_xml,
    serialize,
    tick,
    validate,
)
from .executor import Outcome, RunLimits, RunResult, replay, run
from .planner import (
    HttpChatBackend,
    PlanOutcome,
    ReplayBackend,
    TemplateBackend,
    build_prompt,
    generate_task_graph,
    template_plan,
)
from .registry import BehaviorBinding, BehaviorLibrary, BehaviorTag, ConditionMember, ConditionSpec
from .world import FaultProfile, Pose, WorldState, load_scene, parse_scene

__version__ = "0.1.0"
