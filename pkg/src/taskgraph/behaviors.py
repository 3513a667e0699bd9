"""The nine standard behaviors, their simulator bindings and shipped conditions."""

from __future__ import annotations

from importlib import resources
from typing import Any, Mapping

from . import world as sim
from .errors import ExecutionError
from .registry import (
    ACTION,
    GRIP_TORQUE_THRESHOLD,
    PERCEPTION,
    BehaviorBinding,
    BehaviorLibrary,
    BehaviorTag,
    ConditionMember,
    ConditionSpec,
)

STANDARD_TAGS = (
    BehaviorTag("Homing", ACTION, "bringing all of the joints of robot to homing configuration"),
    BehaviorTag("Approach", ACTION, "moving robot torso closer to target by certain distance"),
    BehaviorTag("Grasp", ACTION, "moving gripper to a given pose and close it"),
    BehaviorTag("Lift", ACTION, "raising gripper to the chest and adjusting pose"),
    BehaviorTag("Place", ACTION, "moving gripper to the given position and open it"),
    BehaviorTag("Distance", PERCEPTION, "measuring distance between object and robot"),
    BehaviorTag("GripForce", PERCEPTION, "obtaining the actual torque of gripper"),
    BehaviorTag("ObjectDetection", PERCEPTION, "detecting and estimating 6-DoF of objects"),
    BehaviorTag("VisualQA", PERCEPTION, "reasoning task state using visual language model"),
)

DEFAULT_STANDOFF = 0.5
NEAR_DISTANCE = 0.8


def _require(name: str, params: Mapping[str, Any], *keys: str) -> None:
    missing = [k for k in keys if k not in params]
    if missing:
        raise ExecutionError(f"{name} requires parameter(s) {', '.join(missing)}")


def _number(name: str, params: Mapping[str, Any], key: str, default=None) -> float:
    value = params.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ExecutionError(f"{name}: parameter {key} must be a number, got {value!r}")
    return float(value)


def _homing(params, world):
    return sim.act_homing(world)


def _approach(params, world):
    _require("Approach", params, "target")
    return sim.act_approach(world, str(params["target"]), _number("Approach", params, "standoff_m", DEFAULT_STANDOFF))


def _grasp(params, world):
    _require("Grasp", params, "target")
    return sim.act_grasp(world, str(params["target"]))


def _lift(params, world):
    return sim.act_lift(world)


def _place(params, world):
    _require("Place", params, "x", "y", "z")
    return sim.act_place(world, *(_number("Place", params, k) for k in ("x", "y", "z")))


def _distance(params, world):
    _require("Distance", params, "target")
    return sim.sense_distance(world, str(params["target"]))


def _grip_force(params, world):
    return sim.sense_grip_force(world)


def _detection(params, world):
    _require("ObjectDetection", params, "target")
    return sim.sense_object_detection(world, str(params["target"]))


def _visual_qa(params, world):
    _require("VisualQA", params, "question")
    return sim.sense_visual_qa(world, str(params["question"]))


def _has_torque(reading) -> bool:
    return reading > GRIP_TORQUE_THRESHOLD


def _is_yes(reading) -> bool:
    return reading == "Yes"


def _detected(reading) -> bool:
    return reading is not None


def _is_near(reading) -> bool:
    return reading <= NEAR_DISTANCE


SIM_BINDINGS = {
    "Homing": BehaviorBinding(_homing),
    "Approach": BehaviorBinding(_approach, required=("target",)),
    "Grasp": BehaviorBinding(_grasp, required=("target",)),
    "Lift": BehaviorBinding(_lift),
    "Place": BehaviorBinding(_place, required=("x", "y", "z")),
    "Distance": BehaviorBinding(_distance, _is_near, required=("target",)),
    "GripForce": BehaviorBinding(_grip_force, _has_torque),
    "ObjectDetection": BehaviorBinding(_detection, _detected, required=("target",)),
    "VisualQA": BehaviorBinding(_visual_qa, _is_yes, required=("question",)),
}

STANDARD_CONDITIONS = (
    ConditionSpec(
        "IsObjectHeld",
        (
            ConditionMember("GripForce", _has_torque),
            ConditionMember("VisualQA", _is_yes, {"question": sim.VQA_TEMPLATES["held"]}),
        ),
        description="gripper torque present and the visual model confirms the target is held",
    ),
    ConditionSpec(
        "ObjectVisible",
        (ConditionMember("ObjectDetection", _detected, {"target": "{target}"}),),
        description="the target is detected by the camera",
    ),
    ConditionSpec(
        "IsNearObject",
        (ConditionMember("Distance", _is_near, {"target": "{target}"}),),
        description="the target is within arm reach of the base",
    ),
    ConditionSpec(
        "IsObjectOnTable",
        (ConditionMember("VisualQA", _is_yes, {"question": sim.VQA_TEMPLATES["on_table"]}),),
        description="the visual model confirms the target rests on the table",
    ),
)


def standard_library() -> BehaviorLibrary:
    lib = BehaviorLibrary()
    for tag in STANDARD_TAGS:
        lib = lib.register(tag, SIM_BINDINGS[tag.name])
    for spec in STANDARD_CONDITIONS:
        lib = lib.add_condition(spec)
    return lib


def data_path(name: str):
    return resources.files("taskgraph") / "data" / name


def load_library(path=None) -> BehaviorLibrary:
    """Library from a manifest file (default: the shipped one) bound to the simulator."""
    from .registry import load_manifest

    return load_manifest(path or data_path("centauro.lib"), SIM_BINDINGS, STANDARD_CONDITIONS)
