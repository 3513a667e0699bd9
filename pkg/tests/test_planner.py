import json

import httpx
import pytest

from taskgraph import bt
from taskgraph.errors import BackendConfigError, NoTemplateError, PlannerError, TransportError
from taskgraph.executor import run
from taskgraph.planner import (
    DEFAULT_PLACE,
    TEMPLATE_KINDS,
    HttpChatBackend,
    ReplayBackend,
    TemplateBackend,
    build_prompt,
    classify_instruction,
    extract_task_graph,
    generate_task_graph,
    place_aside,
    template_plan,
)
from taskgraph.registry import BehaviorLibrary

VALID = """<TaskGraph name="grasp"><Sequence>
<Action name="Approach" target="soup_can"/><Action name="Grasp" target="soup_can"/>
</Sequence></TaskGraph>"""
MALFORMED = '<TaskGraph name="grasp"><Sequence><Action name="Approach" target="soup_can">'
SCHEMA_BAD = "<TaskGraph><Loop><Action name='Grasp' target='soup_can'/></Loop></TaskGraph>"
INVALID = "<TaskGraph><Action name='Teleport' target='soup_can'/></TaskGraph>"


# ---------------------------------------------------------------------------
# prompt


def test_prompt_sections_and_determinism(library):
    a = build_prompt("Pick up the cracker box.", library).render()
    b = build_prompt("Pick up the cracker box.", library).render()
    assert a == b
    headers = [line for line in a.splitlines() if line.startswith("# ")]
    assert headers == ["# Robot", "# Behavior library", "# Output format", "# Instruction"]
    assert library.tags_prompt_block() in a
    assert a.rstrip().endswith("Pick up the cracker box.")
    for name in ("IsObjectHeld", "ObjectVisible", "IsNearObject", "IsObjectOnTable"):
        assert name in a


def test_prompt_example_tree_is_valid(library):
    text = build_prompt("x", library).output_format_spec
    graph = bt.parse_xml(extract_task_graph(text.split("Example for")[1]))
    assert bt.validate(graph, library).ok


def test_instruction_is_escaped(library):
    bundle = build_prompt("Put the <mug> & the can", library)
    assert bundle.instruction == "Put the &lt;mug&gt; &amp; the can"
    assert bundle.raw_instruction == "Put the <mug> & the can"


def test_prompt_preconditions(library):
    with pytest.raises(PlannerError):
        build_prompt("Pick up the mug", BehaviorLibrary())
    with pytest.raises(ValueError):
        build_prompt("   ", library)


# ---------------------------------------------------------------------------
# template planner


@pytest.mark.parametrize("instruction, expected", [
    ("Find the mustard bottle.", ("find", "mustard_bottle")),
    ("Locate the banana", ("find", "banana")),
    ("Approach the sugar box.", ("approach", "sugar_box")),
    ("Grasp the soup can.", ("grasp", "soup_can")),
    ("Pick up the cracker box.", ("pick", "cracker_box")),
    ("Pick up the cracker box. Detect and recover the failure during the task.", ("pick_fr", "cracker_box")),
    ("Pick the cracker, place it aside.", ("place", "cracker_box")),
    ("Pick the cracker, place it aside. Detect and recover the failure during the task.",
     ("place_fr", "cracker_box")),
    ("Find the soup can and pick it up.", ("find_pick_fr", "soup_can")),
    ("pick up the tomato soup can (FR)", ("pick_fr", "soup_can")),
])
def test_classify_instruction(instruction, expected):
    assert classify_instruction(instruction) == expected


@pytest.mark.parametrize("instruction", [
    "Dance for me.",
    "Pick up the kettle.",
    "Approach the mug. Recover from failures.",
])
def test_classify_rejects(instruction):
    with pytest.raises(NoTemplateError):
        classify_instruction(instruction)


def test_target_resolution_uses_scene_labels(desk):
    assert classify_instruction("Grasp the potted meat can", desk) == ("grasp", "meat_can")
    assert classify_instruction("grasp the 025 mug", desk)[1] == "mug"


def test_place_aside_is_beside_the_target(desk):
    x, y, z = place_aside("cracker_box", desk)
    obj = next(o for o in desk.objects if o.id == "cracker_box")
    assert z == obj.pose.z
    assert abs(((x - obj.pose.x) ** 2 + (y - obj.pose.y) ** 2) ** 0.5 - 0.3) < 1e-3
    assert place_aside("cracker_box", None) == DEFAULT_PLACE


def test_pick_fr_template_shape(library):
    g = template_plan("Pick up the mug. Detect and recover the failure during the task.", library)
    kinds = [(n.kind.value, n.name) for n in g.preorder()]
    assert kinds == [
        ("Sequence", ""), ("Action", "Approach"), ("Retry", ""), ("Sequence", ""),
        ("Action", "Grasp"), ("Condition", "IsObjectHeld"), ("Action", "Lift"),
    ]
    assert g.nodes[2].max_attempts == 3


@pytest.mark.parametrize("kind", TEMPLATE_KINDS)
def test_every_template_runs_to_done_on_the_desk(library, desk, far_desk, kind):
    instruction = {
        "find": "Find the mug.",
        "approach": "Approach the mug.",
        "grasp": "Grasp the mug.",
        "pick": "Pick up the mug.",
        "pick_fr": "Pick up the mug. Recover from failures.",
        "place": "Pick the mug and place it aside.",
        "place_fr": "Pick the mug and place it aside. Recover from failures.",
        "find_pick_fr": "Find the mug and pick it up.",
    }[kind]
    scene = far_desk if kind == "find" else desk
    graph = template_plan(instruction, library, scene)
    assert graph.name == f"{kind}_mug"
    assert bt.validate(graph, library).ok
    assert run(graph, library, scene.world()).done


def test_template_backend_returns_canonical_xml(library, desk):
    outcome = generate_task_graph("Grasp the soup can.", library, TemplateBackend(library, desk))
    assert outcome.repair_rounds_used == 0
    assert outcome.raw_responses[0] == bt.serialize(outcome.graph)
    assert outcome.plan_time == 0.0


# ---------------------------------------------------------------------------
# repair loop


def test_extract_task_graph_from_chatter():
    reply = f"Sure! Here is the plan:\n```xml\n{VALID}\n```\nGood luck."
    assert extract_task_graph(reply) == VALID


def test_repair_after_syntax_error(library):
    outcome = generate_task_graph("Grasp the soup can.", library, ReplayBackend([MALFORMED, VALID]))
    assert outcome.graph is not None
    assert outcome.repair_rounds_used == 1
    assert len(outcome.prompts) == 2
    assert "your XML failed to parse:" in outcome.prompts[1]
    assert "emit only corrected XML" in outcome.prompts[1]
    assert MALFORMED in outcome.prompts[1]
    assert "your XML failed to parse" not in outcome.prompts[0]


def test_repair_after_schema_and_validation_errors(library):
    outcome = generate_task_graph("Grasp the soup can.", library, ReplayBackend([SCHEMA_BAD, INVALID, VALID]))
    assert outcome.repair_rounds_used == 2
    assert "does not follow the task graph schema" in outcome.prompts[1]
    assert "unknown element <Loop>" in outcome.prompts[1]
    assert "unknown behavior Teleport" in outcome.prompts[2]


def test_repair_exhaustion_returns_no_graph(library):
    backend = ReplayBackend([MALFORMED, MALFORMED, INVALID, VALID])
    outcome = generate_task_graph("Grasp the soup can.", library, backend, max_repair_rounds=2)
    assert outcome.graph is None
    assert outcome.repair_rounds_used == 2
    assert len(outcome.raw_responses) == 3
    assert not outcome.validation.ok
    assert "unknown behavior Teleport" in outcome.validation.format()


def test_zero_repair_rounds(library):
    outcome = generate_task_graph("x", library, ReplayBackend([MALFORMED]), max_repair_rounds=0)
    assert outcome.graph is None and outcome.repair_rounds_used == 0


def test_replay_fixture_directory(tmp_path, library):
    (tmp_path / "10_valid.xml").write_text(VALID)
    (tmp_path / "2_bad.xml").write_text(MALFORMED)
    (tmp_path / "notes.txt").write_text("ignored")
    backend = ReplayBackend.from_dir(tmp_path)
    assert backend.responses == [MALFORMED, VALID]
    outcome = generate_task_graph("Grasp the soup can.", library, backend)
    assert outcome.repair_rounds_used == 1
    with pytest.raises(BackendConfigError):
        backend.complete([], None)
    with pytest.raises(BackendConfigError):
        ReplayBackend.from_dir(tmp_path / "missing")


# ---------------------------------------------------------------------------
# HTTP backend


def chat_reply(content, status=200):
    return httpx.Response(status, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def test_http_backend_request_shape(library, monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        return chat_reply(VALID)

    monkeypatch.setenv("PLANNER_TOKEN", "sekrit")
    backend = HttpChatBackend("http://llm.test/v1/chat/completions", "some-model", "PLANNER_TOKEN",
                              transport=httpx.MockTransport(handler))
    outcome = generate_task_graph("Grasp the soup can.", library, backend)
    assert outcome.graph is not None
    (request,) = seen
    body = json.loads(request.content)
    assert body["model"] == "some-model" and body["temperature"] == 0.0
    assert body["messages"][0]["role"] == "user"
    assert "# Behavior library" in body["messages"][0]["content"]
    assert request.headers["Authorization"] == "Bearer sekrit"
    assert len(outcome.latency) == 1 and outcome.latency[0] >= 0.0


def test_http_backend_sends_repair_conversation(library):
    replies = iter([MALFORMED, VALID])
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return chat_reply(next(replies))

    backend = HttpChatBackend("http://llm.test/chat", "m", transport=httpx.MockTransport(handler))
    outcome = generate_task_graph("Grasp the soup can.", library, backend)
    assert outcome.repair_rounds_used == 1
    roles = [m["role"] for m in bodies[1]["messages"]]
    assert roles == ["user", "assistant", "user"]
    assert bodies[1]["messages"][2]["content"].startswith("your XML failed to parse:")


def test_http_transport_failure_retries_once_then_raises(library):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    backend = HttpChatBackend("http://llm.test/chat", "m", transport=httpx.MockTransport(handler))
    with pytest.raises(TransportError):
        generate_task_graph("Grasp the soup can.", library, backend)
    assert len(calls) == 2


def test_http_transient_failure_recovers(library):
    replies = iter([httpx.Response(500), chat_reply(VALID)])
    backend = HttpChatBackend("http://llm.test/chat", "m", transport=httpx.MockTransport(lambda r: next(replies)))
    assert generate_task_graph("Grasp the soup can.", library, backend).graph is not None


def test_http_bad_response_shape(library):
    backend = HttpChatBackend("http://llm.test/chat", "m",
                              transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"oops": 1})))
    with pytest.raises(TransportError):
        backend.complete([], None)


def test_http_config_errors(monkeypatch):
    with pytest.raises(BackendConfigError):
        HttpChatBackend("", "m")
    monkeypatch.delenv("NO_SUCH_TOKEN", raising=False)
    backend = HttpChatBackend("http://llm.test/chat", "m", "NO_SUCH_TOKEN",
                              transport=httpx.MockTransport(lambda r: chat_reply(VALID)))
    with pytest.raises(BackendConfigError):
        backend.complete([], None)
