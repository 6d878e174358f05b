import random
import string

import pytest

from objnav.errors import BackendFailure, ProtocolError, TemplateError
from objnav.llmgw import (
    ModelEndpoint,
    ModelGateway,
    ReplayGateway,
    Transcript,
    load_template,
    parse_reply,
)
from objnav.pruner import PruneRequest, RemotePruner

from mockserver import MockModelServer


def endpoint(base_url, retries=2, timeout=5.0):
    return ModelEndpoint(base_url=base_url, model="mock", max_retries=retries,
                         timeout=timeout)


# --- render ---------------------------------------------------------------------

def test_render_planner_template_contains_nodes():
    template = load_template("planner")
    listing = "\n".join(f"- node {i}: label{i} — caption{i}" for i in range(3))
    text = ModelGateway().render(template, {"target": "apple", "nodes": listing})
    for i in range(3):
        assert f"label{i}" in text and f"caption{i}" in text
    assert "apple" in text


def test_render_missing_binding_raises():
    template = load_template("planner")
    with pytest.raises(TemplateError):
        ModelGateway().render(template, {"target": "apple"})


def test_render_injective_over_random_bindings():
    rng = random.Random(12)
    gateway = ModelGateway()
    for role, keys in (("planner", ("target", "nodes")), ("verify", ("target", "label", "step")),
                       ("caption", ("label", "neighbors", "room"))):
        template = load_template(role)
        seen = {}
        for _ in range(60):
            bindings = {k: "".join(rng.choices(string.ascii_lowercase, k=8)) for k in keys}
            text = gateway.render(template, bindings)
            key = tuple(sorted(bindings.items()))
            if text in seen:
                assert seen[text] == key
            seen[text] = key


# --- complete -------------------------------------------------------------------

def test_complete_echo_and_transcript():
    with MockModelServer([]) as server:  # default behaviour echoes the request
        gateway = ModelGateway()
        reply = gateway.complete(endpoint(server.base_url), "hello there", role="caption")
        assert reply == "hello there"
        assert len(gateway.transcript.entries) == 1
        entry = gateway.transcript.entries[0]
        assert entry.role == "caption" and entry.request == "hello there"


def test_complete_retries_through_two_failures():
    with MockModelServer([("status", 500), ("status", 500), ("ok", "fine")]) as server:
        gateway = ModelGateway()
        reply = gateway.complete(endpoint(server.base_url, retries=2), "ping", role="planner")
        assert reply == "fine"
        assert len(gateway.transcript.entries) == 1  # one interaction, one entry


def test_complete_three_failures_is_backend_failure():
    with MockModelServer([("status", 500)] * 3) as server:
        gateway = ModelGateway()
        with pytest.raises(BackendFailure):
            gateway.complete(endpoint(server.base_url, retries=2), "ping", role="planner")
        assert gateway.transcript.entries == []


# --- parse ----------------------------------------------------------------------

def test_parse_planner_tokens():
    assert parse_reply("planner", "<explore_obj> couch") == ("explore_obj", "couch")
    assert parse_reply("planner", "I think <explore_obj>(node 3)")[0] == "explore_obj"
    assert parse_reply("planner", "<explore_scene>") == ("explore_scene", "")
    with pytest.raises(ProtocolError):
        parse_reply("planner", "just wander around")


def test_parse_pruner_list():
    assert parse_reply("pruner", "output: [chair, kitchen table, bed]") == \
        ["chair", "kitchen table", "bed"]
    assert parse_reply("pruner", "[]") == []
    with pytest.raises(ProtocolError):
        parse_reply("pruner", "chair, table")


def test_parse_verify_yes_no():
    assert parse_reply("verify", "Yes, it is.") is True
    assert parse_reply("verify", "no") is False
    with pytest.raises(ProtocolError):
        parse_reply("verify", "maybe?")


def test_parse_caption_and_label():
    assert parse_reply("caption", " a red couch near a lamp ") == "a red couch near a lamp"
    assert parse_reply("label_resolve", "couch\nbecause it looks soft") == "couch"
    with pytest.raises(ProtocolError):
        parse_reply("caption", "   ")


def test_invented_label_dropped_through_full_remote_path():
    with MockModelServer([("ok", "[chair, warp drive]")]) as server:
        gateway = ModelGateway()
        pruner = RemotePruner(gateway, endpoint(server.base_url), load_template("pruner"))
        out = pruner.prune(PruneRequest(("pen", "chair"), exemplars=((("pen", "chair"), ("chair",)),)))
        assert out == ["chair"]
        assert set(out) <= {"pen", "chair"}


# --- transcript replay -------------------------------------------------------------

def test_transcript_roundtrip_and_replay(tmp_path):
    with MockModelServer([("ok", "<explore_obj> couch"), ("ok", "yes")]) as server:
        gateway = ModelGateway()
        ep = endpoint(server.base_url)
        first = gateway.complete(ep, "plan please", role="planner")
        second = gateway.complete(ep, "verify please", role="verify")
    path = tmp_path / "transcript.jsonl"
    gateway.transcript.save(path)
    loaded = Transcript.load(path)
    replay = ReplayGateway(loaded)
    assert replay.complete(ep, "plan please", role="planner") == first
    assert replay.complete(ep, "verify please", role="verify") == second
    with pytest.raises(BackendFailure):
        replay.complete(ep, "a third call", role="planner")
