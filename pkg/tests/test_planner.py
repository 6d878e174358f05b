import random
from pathlib import Path

from objnav.errors import BackendFailure
from objnav.planner import (
    AffinityTable,
    OraclePlanner,
    RemotePlanner,
    load_affinity_table,
)
from objnav.scenegraph import NodeView

AFFINITY_PATH = Path(__file__).parent.parent / "src" / "objnav" / "data" / "config" / "affinity.json"


def node(node_id, label, caption=None, explored=False, centroid=(0.0, 0.0, 0.0)):
    return NodeView(node_id=node_id, label=label, centroid=centroid, caption=caption,
                    explored=explored, target_candidate=False, frame_count=1, cloud_size=2)


def planner(captions=True):
    return OraclePlanner(load_affinity_table(AFFINITY_PATH), captions_enabled=captions)


def test_pillow_prefers_couch():
    snap = (node(0, "couch"), node(1, "kitchen table"))
    decision = planner().decide(snap, "pillow", [])
    assert decision.action == "explore_obj"
    assert decision.node_label == "couch"


def test_apple_prefers_kitchen_table():
    snap = (node(0, "computer table"), node(1, "chair"), node(2, "kitchen table"),
            node(3, "bed"), node(4, "cabinet"))
    decision = planner().decide(snap, "apple", [])
    assert decision.action == "explore_obj"
    assert decision.node_label == "kitchen table"


def test_no_nodes_explores_scene():
    assert planner().decide((), "apple", []).action == "explore_scene"


def test_all_scores_below_threshold_explores_scene():
    table = AffinityTable(scores={("apple", "chair"): 0.3, ("apple", "bed"): 0.49},
                          threshold=0.5)
    snap = (node(0, "chair"), node(1, "bed"))
    assert OraclePlanner(table).decide(snap, "apple", []).action == "explore_scene"
    # sweep: raising scores past the threshold flips the decision
    for value in (0.49, 0.5, 0.51):
        table = AffinityTable(scores={("apple", "chair"): value}, threshold=0.5)
        decision = OraclePlanner(table).decide((node(0, "chair"),), "apple", [])
        assert (decision.action == "explore_obj") == (value >= 0.5)


def test_explored_nodes_never_rechosen():
    snap = (node(0, "couch", explored=True), node(1, "bed"))
    decision = planner().decide(snap, "pillow", [])
    assert decision.node_id == 1
    snap = (node(0, "couch", explored=True), node(1, "bed", explored=True))
    assert planner().decide(snap, "pillow", []).action == "explore_scene"


def test_target_labelled_node_dominates():
    snap = (node(0, "couch"), node(1, "pillow"))
    decision = planner().decide(snap, "pillow", [])
    assert decision.node_id == 1  # affinity 1.0 beats couch 0.9


def test_caption_bonus_changes_choice():
    snap = (node(0, "table", caption="a table in the bedroom"),
            node(1, "table", caption="a table in the kitchen"))
    decision = planner(captions=True).decide(snap, "apple", [])
    assert decision.node_id == 1
    # captions off: tie on affinity, distance breaks it
    decision = planner(captions=False).decide(
        snap, "apple", [], distance_fn=lambda n: 3.0 if n.node_id == 0 else 9.0)
    assert decision.node_id == 0


def test_tie_breaks_nearest_then_lowest_id():
    snap = (node(3, "couch"), node(7, "couch"))
    decision = planner().decide(snap, "pillow", [],
                                distance_fn=lambda n: {3: 9.0, 7: 2.0}[n.node_id])
    assert decision.node_id == 7
    decision = planner().decide(snap, "pillow", [], distance_fn=lambda n: 5.0)
    assert decision.node_id == 3


def test_argmax_invariant_under_uniform_scaling():
    rng = random.Random(8)
    base = load_affinity_table(AFFINITY_PATH)
    labels = ["couch", "bed", "kitchen table", "counter", "cabinet", "computer table"]
    for _ in range(40):
        snap = tuple(node(i, rng.choice(labels),
                          caption=rng.choice([None, "a thing in the kitchen"]))
                     for i in range(rng.randrange(1, 6)))
        target = rng.choice(["apple", "pillow", "cup", "book"])
        factor = rng.choice([0.25, 0.5, 2.0, 3.0])
        plain = OraclePlanner(base).decide(snap, target, [], distance_fn=lambda n: n.node_id)
        scaled = OraclePlanner(base.scaled(factor)).decide(snap, target, [],
                                                           distance_fn=lambda n: n.node_id)
        assert plain.action == scaled.action
        assert plain.node_id == scaled.node_id


class ScriptedGateway:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def render(self, template, bindings):
        return f"target={bindings.get('target')}"

    def complete(self, endpoint, request, role="generic"):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply

    def parse(self, role, response):
        from objnav.llmgw import parse_reply
        return parse_reply(role, response)


def test_remote_planner_parses_action():
    gateway = ScriptedGateway(["<explore_obj> couch"])
    decision = RemotePlanner(gateway, None, None).decide((node(0, "couch"),), "pillow", [])
    assert decision.action == "explore_obj" and decision.node_id == 0


def test_remote_planner_retries_then_falls_back():
    gateway = ScriptedGateway(["gibberish", "more gibberish"])
    decision = RemotePlanner(gateway, None, None).decide((node(0, "couch"),), "pillow", [])
    assert decision.action == "explore_scene"
    assert gateway.calls == 2


def test_remote_planner_backend_failure_falls_back():
    gateway = ScriptedGateway([BackendFailure("down")])
    decision = RemotePlanner(gateway, None, None).decide((node(0, "couch"),), "pillow", [])
    assert decision.action == "explore_scene"


def test_remote_planner_unknown_node_retries():
    gateway = ScriptedGateway(["<explore_obj> spaceship", "<explore_scene>"])
    decision = RemotePlanner(gateway, None, None).decide((node(0, "couch"),), "pillow", [])
    assert decision.action == "explore_scene"
