"""Seeded kinematic simulation of a mobile manipulator on a desk scene.

Motion is kinematic: the base travels in straight lines at a fixed distance
per step, arm motions are gated by a planar reach radius. Every action call
consumes exactly one simulation step. Perception never mutates the world.

Randomness is counter-based: a draw is a hash of ``(seed, step_count,
channel, key)``, so the same world state always yields the same draw and a
sensor read does not have to advance any generator.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .bt import TickStatus
from .errors import PerceptionUnavailable, SceneError, SnapshotError

SNAPSHOT_VERSION = 1


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(yaw, 2 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def planar_distance(self, other: "Pose") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def compose(self, offset: "Pose") -> "Pose":
        """World pose of ``offset`` expressed in this pose's frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose(
            self.x + c * offset.x - s * offset.y,
            self.y + s * offset.x + c * offset.y,
            self.z + offset.z,
            self.yaw + offset.yaw,
        )

    def relative(self, world: "Pose") -> "Pose":
        """Inverse of :meth:`compose`: express ``world`` in this frame."""
        dx, dy = world.x - self.x, world.y - self.y
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose(c * dx + s * dy, -s * dx + c * dy, world.z - self.z, world.yaw - self.yaw)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.yaw)


@dataclass(frozen=True)
class FaultProfile:
    p_grasp_slip: float = 0.0
    p_detect_miss: float = 0.0
    p_vqa_error: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_grasp_slip", "p_detect_miss", "p_vqa_error"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @classmethod
    def from_mapping(cls, values: dict, base: "FaultProfile | None" = None) -> "FaultProfile":
        out = base or cls()
        updates = {}
        for key, raw in values.items():
            if key == "seed":
                updates[key] = int(raw)
            elif key in ("p_grasp_slip", "p_detect_miss", "p_vqa_error"):
                updates[key] = float(raw)
            else:
                raise KeyError(f"unknown fault key {key!r}")
        return replace(out, **updates)

    def label(self) -> str:
        return f"p_grasp_slip={self.p_grasp_slip:g};p_detect_miss={self.p_detect_miss:g};p_vqa_error={self.p_vqa_error:g}"


@dataclass(frozen=True)
class WorldConfig:
    reach: float = 0.8
    camera_range: float = 4.0
    holding_torque: float = 2.5
    chest_height: float = 1.2
    table_height: float = 0.75
    base_step: float = 0.1
    arrival_tolerance: float = 0.01
    home_offset: Pose = Pose(0.3, 0.0, 0.9, 0.0)
    chest_forward: float = 0.35


@dataclass
class RobotState:
    base: Pose = field(default_factory=Pose)
    gripper_offset: Pose = field(default_factory=lambda: WorldConfig().home_offset)
    gripper_open: bool = True
    grip_torque: float = 0.0
    held_object: str | None = None


@dataclass
class ObjectState:
    id: str
    label: str
    pose: Pose
    graspable: bool = True


@dataclass
class WorldState:
    robot: RobotState
    objects: list[ObjectState]
    faults: FaultProfile = field(default_factory=FaultProfile)
    config: WorldConfig = field(default_factory=WorldConfig)
    step_count: int = 0

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        for o in self.objects:
            if o.pose.z < 0:
                raise SceneError(f"object {o.id} is below the floor")

    # -- lookup ------------------------------------------------------------

    def find(self, target: str) -> ObjectState | None:
        """Resolve an object by id, falling back to its label."""
        for o in self.objects:
            if o.id == target:
                return o
        for o in self.objects:
            if o.label == target:
                return o
        return None

    def gripper_pose(self) -> Pose:
        return self.robot.base.compose(self.robot.gripper_offset)

    @property
    def seed(self) -> int:
        return self.faults.seed

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    # -- randomness --------------------------------------------------------

    def draw(self, channel: str, key: str = "") -> float:
        """Uniform [0, 1) draw determined by seed, step, channel and key."""
        msg = f"{self.faults.seed}|{self.step_count}|{channel}|{key}".encode()
        digest = hashlib.blake2b(msg, digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2.0**64

    def _sync_held(self) -> None:
        if self.robot.held_object is not None:
            obj = self.find(self.robot.held_object)
            obj.pose = self.gripper_pose()

    def _release(self, at: Pose) -> None:
        held = self.robot.held_object
        if held is not None:
            obj = self.find(held)
            obj.pose = Pose(at.x, at.y, max(at.z, 0.0), at.yaw)
        self.robot.held_object = None
        self.robot.grip_torque = 0.0

    # -- hashing / snapshot -----------------------------------------------

    def snapshot(self) -> str:
        return snapshot(self)

    def state_hash(self) -> str:
        return hashlib.sha256(self.snapshot().encode()).hexdigest()


# ---------------------------------------------------------------------------
# actions; each consumes one step


def act_homing(world: WorldState) -> TickStatus:
    world.step_count += 1
    world._release(world.gripper_pose())
    world.robot.gripper_offset = world.config.home_offset
    world.robot.gripper_open = True
    return TickStatus.SUCCESS


def act_approach(world: WorldState, target: str, standoff: float = 0.5) -> TickStatus:
    world.step_count += 1
    obj = world.find(target)
    if obj is None:
        return TickStatus.FAILURE
    base = world.robot.base
    dist = base.planar_distance(obj.pose)
    remaining = dist - standoff
    if remaining <= world.config.arrival_tolerance:
        return TickStatus.SUCCESS
    heading = math.atan2(obj.pose.y - base.y, obj.pose.x - base.x)
    travel = min(world.config.base_step, remaining)
    world.robot.base = Pose(
        base.x + travel * math.cos(heading),
        base.y + travel * math.sin(heading),
        base.z,
        heading,
    )
    world._sync_held()
    if remaining - travel <= world.config.arrival_tolerance:
        return TickStatus.SUCCESS
    return TickStatus.RUNNING


def act_grasp(world: WorldState, target: str) -> TickStatus:
    # the slip draw is keyed on the step at which the grasp starts
    slip_u = world.draw("slip", target) if world.faults.p_grasp_slip > 0 else 1.0
    world.step_count += 1
    obj = world.find(target)
    robot = world.robot
    if obj is None or robot.held_object is not None or not obj.graspable:
        return TickStatus.FAILURE
    if robot.base.planar_distance(obj.pose) > world.config.reach:
        return TickStatus.FAILURE
    robot.gripper_offset = robot.base.relative(obj.pose)
    robot.gripper_open = False
    if slip_u < world.faults.p_grasp_slip:
        robot.held_object = None
        robot.grip_torque = 0.0
    else:
        robot.held_object = obj.id
        robot.grip_torque = world.config.holding_torque
        world._sync_held()
    return TickStatus.SUCCESS


def act_lift(world: WorldState) -> TickStatus:
    world.step_count += 1
    cfg = world.config
    world.robot.gripper_offset = Pose(cfg.chest_forward, 0.0, cfg.chest_height - world.robot.base.z, 0.0)
    world._sync_held()
    return TickStatus.SUCCESS


def act_place(world: WorldState, x: float, y: float, z: float) -> TickStatus:
    world.step_count += 1
    goal = Pose(float(x), float(y), float(z), world.robot.base.yaw)
    if goal.z < 0 or world.robot.base.planar_distance(goal) > world.config.reach:
        return TickStatus.FAILURE
    world.robot.gripper_offset = world.robot.base.relative(goal)
    world.robot.gripper_open = True
    world._release(goal)
    return TickStatus.SUCCESS


# ---------------------------------------------------------------------------
# perception; never mutates


def sense_distance(world: WorldState, target: str) -> float:
    obj = world.find(target)
    if obj is None:
        raise PerceptionUnavailable(f"no object {target!r} in the scene")
    return world.robot.base.planar_distance(obj.pose)


def sense_grip_force(world: WorldState) -> float:
    return world.robot.grip_torque


def in_camera_view(world: WorldState, obj: ObjectState) -> bool:
    base = world.robot.base
    dx, dy = obj.pose.x - base.x, obj.pose.y - base.y
    if math.hypot(dx, dy) > world.config.camera_range:
        return False
    return dx * math.cos(base.yaw) + dy * math.sin(base.yaw) > 0


def sense_object_detection(world: WorldState, target_label: str) -> Pose | None:
    """Pose of the labelled object if the camera sees it, ``None`` on a miss."""
    obj = world.find(target_label)
    if obj is None or not in_camera_view(world, obj):
        return None
    p = world.faults.p_detect_miss
    if p > 0 and world.draw("detect", obj.id) < p:
        return None
    return obj.pose


VQA_TEMPLATES = {
    "held": "Is the {target} held by the gripper?",
    "on_table": "Is the {target} on the table?",
    "near": "Is the robot near the {target}?",
}
_VQA_PATTERNS = {
    "held": re.compile(r"^is the (?P<target>.+?) (?:being )?held(?: by the gripper)?\?$", re.I),
    "on_table": re.compile(r"^is the (?P<target>.+?) on the table\?$", re.I),
    "near": re.compile(r"^is the robot near the (?P<target>.+?)\?$", re.I),
}


def _vqa_truth(world: WorldState, question: str) -> bool:
    q = " ".join(question.strip().split())
    for kind, pattern in _VQA_PATTERNS.items():
        m = pattern.match(q)
        if not m:
            continue
        name = m.group("target")
        obj = world.find(name) or world.find(name.replace(" ", "_"))
        if obj is None:
            raise PerceptionUnavailable(f"question refers to unknown object {name!r}")
        if kind == "held":
            return world.robot.held_object == obj.id
        if kind == "on_table":
            return world.robot.held_object != obj.id and abs(obj.pose.z - world.config.table_height) <= 0.1
        return world.robot.base.planar_distance(obj.pose) <= world.config.reach
    raise PerceptionUnavailable(f"unsupported question: {question!r}")


def sense_visual_qa(world: WorldState, question: str) -> str:
    """Answer "Yes"/"No" from world truth, flipped with ``p_vqa_error``."""
    truth = _vqa_truth(world, question)
    p = world.faults.p_vqa_error
    if p > 0 and world.draw("vqa", question) < p:
        truth = not truth
    return "Yes" if truth else "No"


# ---------------------------------------------------------------------------
# snapshot / restore


def _pose_list(p: Pose) -> list[float]:
    return [p.x, p.y, p.z, p.yaw]


def snapshot(world: WorldState) -> str:
    r = world.robot
    record = {
        "version": SNAPSHOT_VERSION,
        "step_count": world.step_count,
        "faults": asdict(world.faults),
        "config": asdict(world.config) | {"home_offset": _pose_list(world.config.home_offset)},
        "robot": {
            "base": _pose_list(r.base),
            "gripper_offset": _pose_list(r.gripper_offset),
            "gripper_open": r.gripper_open,
            "grip_torque": r.grip_torque,
            "held_object": r.held_object,
        },
        "objects": [
            {"id": o.id, "label": o.label, "pose": _pose_list(o.pose), "graspable": o.graspable}
            for o in world.objects
        ],
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def restore(record: str) -> WorldState:
    try:
        data = json.loads(record)
        if data.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {data.get('version')!r}")
        cfg = dict(data["config"])
        cfg["home_offset"] = Pose(*cfg["home_offset"])
        r = data["robot"]
        robot = RobotState(
            base=Pose(*r["base"]),
            gripper_offset=Pose(*r["gripper_offset"]),
            gripper_open=bool(r["gripper_open"]),
            grip_torque=float(r["grip_torque"]),
            held_object=r["held_object"],
        )
        objects = [ObjectState(o["id"], o["label"], Pose(*o["pose"]), bool(o["graspable"])) for o in data["objects"]]
        return WorldState(
            robot=robot,
            objects=objects,
            faults=FaultProfile(**data["faults"]),
            config=WorldConfig(**cfg),
            step_count=int(data["step_count"]),
        )
    except SnapshotError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise SnapshotError(f"malformed world snapshot: {exc}") from exc


# ---------------------------------------------------------------------------
# scene files


@dataclass
class Scene:
    robot: Pose
    objects: list[ObjectState]
    text: str = ""

    def world(self, faults: FaultProfile | None = None, config: WorldConfig | None = None) -> WorldState:
        cfg = config or WorldConfig()
        return WorldState(
            robot=RobotState(base=self.robot, gripper_offset=cfg.home_offset),
            objects=[ObjectState(o.id, o.label, o.pose, o.graspable) for o in self.objects],
            faults=faults or FaultProfile(),
            config=cfg,
        )

    def digest(self) -> str:
        return hashlib.sha256(dump_scene(self).encode()).hexdigest()[:16]


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_pose(text: str, lineno: int) -> Pose:
    parts = text.split(",")
    if len(parts) != 4:
        raise SceneError(f"line {lineno}: pose needs x,y,z,yaw")
    try:
        return Pose(*(float(p) for p in parts))
    except ValueError:
        raise SceneError(f"line {lineno}: bad pose {text!r}") from None


def parse_scene(text: str) -> Scene:
    robot = None
    objects = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if fields[0] == "robot" and len(fields) == 2:
            if robot is not None:
                raise SceneError(f"line {lineno}: duplicate robot line")
            robot = _parse_pose(fields[1], lineno)
        elif fields[0] == "object" and len(fields) == 5:
            _, oid, label, pose, graspable = fields
            if graspable.lower() not in _BOOL:
                raise SceneError(f"line {lineno}: graspable must be true/false")
            objects.append(ObjectState(oid, label, _parse_pose(pose, lineno), _BOOL[graspable.lower()]))
        else:
            raise SceneError(f"line {lineno}: unrecognized scene line {raw!r}")
    if robot is None:
        robot = Pose()
    if len({o.id for o in objects}) != len(objects):
        raise SceneError("object ids must be unique")
    return Scene(robot, objects, text)


def load_scene(path: str | Path) -> Scene:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def _fmt(v: float) -> str:
    return repr(float(v))


def dump_scene(scene: Scene) -> str:
    lines = ["robot|" + ",".join(_fmt(v) for v in scene.robot.as_tuple())]
    for o in scene.objects:
        pose = ",".join(_fmt(v) for v in o.pose.as_tuple())
        lines.append(f"object|{o.id}|{o.label}|{pose}|{'true' if o.graspable else 'false'}")
    return "\n".join(lines) + "\n"
