import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from taskgraph import bt
from taskgraph.behaviors import data_path, standard_library
from taskgraph.world import load_scene

STATUSES = ("Success", "Failure", "Running")


def random_tree(rng: random.Random, depth: int = 5, counter=None):
    """Nested-tuple tree in the reference interpreter's encoding; leaves get unique labels."""
    counter = counter if counter is not None else [0]
    if depth <= 1 or rng.random() < 0.3:
        counter[0] += 1
        return ("leaf", f"L{counter[0]}")
    kind = rng.choice(("seq", "fb", "retry"))
    if kind == "retry":
        return ("retry", rng.randint(1, 4), random_tree(rng, depth - 1, counter))
    return (kind, [random_tree(rng, depth - 1, counter) for _ in range(rng.randint(1, 4))])


def leaf_labels(tree):
    if tree[0] == "leaf":
        return [tree[1]]
    kids = [tree[2]] if tree[0] == "retry" else tree[1]
    return [label for k in kids for label in leaf_labels(k)]


def random_scripts(rng: random.Random, tree):
    return {label: [rng.choice(STATUSES) for _ in range(rng.randint(1, 5))] for label in leaf_labels(tree)}


def to_spec(tree) -> bt.NodeSpec:
    tag = tree[0]
    if tag == "leaf":
        return bt.action(tree[1])
    if tag == "retry":
        return bt.retry(tree[1], to_spec(tree[2]))
    builder = bt.sequence if tag == "seq" else bt.fallback
    return builder(*(to_spec(c) for c in tree[1]))


def run_impl(tree, scripts, ticks):
    """Same contract as ``reference_interp.simulate`` but through ``taskgraph.bt``."""
    graph = bt.TaskGraph.from_spec(to_spec(tree))
    counters = {}
    calls = []

    def dispatch(node):
        seq = scripts[node.name]
        i = counters.get(node.name, 0)
        counters[node.name] = i + 1
        calls.append(node.name)
        return bt.TickStatus(seq[i % len(seq)])

    state = bt.RunState()
    out = []
    for _ in range(ticks):
        calls.clear()
        status = bt.tick(graph, state, dispatch)
        out.append((status.value, list(calls)))
    return out


@st.composite
def trees(draw, depth=4):
    counter = [0]

    def go(d):
        if d <= 1 or draw(st.booleans()):
            counter[0] += 1
            return ("leaf", f"L{counter[0]}")
        kind = draw(st.sampled_from(("seq", "fb", "retry")))
        if kind == "retry":
            return ("retry", draw(st.integers(1, 4)), go(d - 1))
        return (kind, [go(d - 1) for _ in range(draw(st.integers(1, 3)))])

    return go(depth)


_SAFE_TEXT = st.text(
    alphabet=st.one_of(st.characters(blacklist_categories=("Cs", "Cc", "Cn")), st.sampled_from("\t\n\r")),
    min_size=1,
    max_size=8,
)
param_values = st.one_of(
    st.integers(-10**6, 10**6),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.booleans(),
    _SAFE_TEXT.filter(lambda s: bt._coerce(s) == s),
)
param_keys = st.from_regex(r"\A[a-z][a-z0-9_]{0,6}\Z").filter(lambda k: k not in ("name", "num_attempts"))
param_maps = st.dictionaries(param_keys, param_values, max_size=4)


@st.composite
def graphs(draw, depth=4):
    """Arbitrary structurally valid graphs with random names and params."""
    names = st.sampled_from(("Grasp", "Approach", "Lift", "IsObjectHeld", "X_1", "a.b-c"))

    def go(d):
        if d <= 1 or draw(st.booleans()):
            leaf = draw(st.sampled_from((bt.action, bt.condition)))
            return leaf(draw(names), **draw(param_maps))
        kind = draw(st.sampled_from(("seq", "fb", "retry")))
        if kind == "retry":
            return bt.retry(draw(st.integers(1, 9)), go(d - 1))
        builder = bt.sequence if kind == "seq" else bt.fallback
        return builder(*(go(d - 1) for _ in range(draw(st.integers(1, 3)))))

    return bt.TaskGraph.from_spec(go(depth), name=draw(st.sampled_from(("", "t", "pick & <place>"))))


@pytest.fixture(scope="session")
def library():
    return standard_library()


@pytest.fixture(scope="session")
def desk():
    return load_scene(data_path("desk.scene"))


@pytest.fixture(scope="session")
def far_desk():
    return load_scene(data_path("far_desk.scene"))


@pytest.fixture
def fixtures_dir(tmp_path) -> Path:
    return tmp_path


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_RESULTS.append((criterion, ok, detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
