"""High-level decision stage: keep exploring frontiers, or head for the node
most likely to have the target nearby.

The oracle backend scores unexplored nodes with a curated target/anchor
affinity table plus a small bonus when a node's caption mentions the room the
target is usually found in; the remote backend renders the scene snapshot into
a prompt and parses the chosen action token.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BackendFailure, ProtocolError
from .scenegraph import NodeView

EXPLORE_SCENE = "explore_scene"
EXPLORE_OBJ = "explore_obj"
DONE = "done"

DEFAULT_AFFINITY_THRESHOLD = 0.5
DEFAULT_CAPTION_BONUS = 0.1


@dataclass(frozen=True)
class PlannerDecision:
    action: str  # explore_scene | explore_obj | done
    node_id: int | None = None
    node_label: str | None = None
    done_reason: str | None = None  # found | exhausted
    rationale: str = ""


@dataclass(frozen=True)
class AffinityTable:
    scores: dict[tuple[str, str], float]
    room_affinity: dict[str, str] = field(default_factory=dict)
    synonyms: dict[str, str] = field(default_factory=dict)
    threshold: float = DEFAULT_AFFINITY_THRESHOLD
    caption_bonus: float = DEFAULT_CAPTION_BONUS
    # a sighted target outranks any anchor guess, caption bonus included
    target_match_score: float = 2.0

    def canonical(self, label: str) -> str:
        return self.synonyms.get(label, label)

    def affinity(self, target: str, label: str) -> float:
        if self.canonical(target) == self.canonical(label):
            return self.target_match_score
        return self.scores.get((self.canonical(target), self.canonical(label)), 0.0)

    def scaled(self, factor: float) -> "AffinityTable":
        return AffinityTable(
            scores={k: v * factor for k, v in self.scores.items()},
            room_affinity=dict(self.room_affinity),
            synonyms=dict(self.synonyms),
            threshold=self.threshold * factor,
            caption_bonus=self.caption_bonus * factor,
            target_match_score=self.target_match_score * factor,
        )


def load_affinity_table(path: str | Path) -> AffinityTable:
    doc = json.loads(Path(path).read_text())
    scores = {}
    for target, anchors in doc["scores"].items():
        for anchor, value in anchors.items():
            scores[(target, anchor)] = float(value)
    return AffinityTable(
        scores=scores,
        room_affinity=dict(doc.get("room_affinity", {})),
        synonyms=dict(doc.get("synonyms", {})),
        threshold=float(doc.get("threshold", DEFAULT_AFFINITY_THRESHOLD)),
        caption_bonus=float(doc.get("caption_bonus", DEFAULT_CAPTION_BONUS)),
    )


class OraclePlanner:
    def __init__(self, table: AffinityTable, captions_enabled: bool = True):
        self.table = table
        self.captions_enabled = captions_enabled

    def score(self, node: NodeView, target: str) -> float:
        value = self.table.affinity(target, node.label)
        if self.captions_enabled and node.caption:
            room = self.table.room_affinity.get(self.table.canonical(target))
            if room and room in node.caption:
                value += self.table.caption_bonus
        return value

    def decide(self, snapshot: tuple[NodeView, ...], target: str,
               history: list[PlannerDecision], distance_fn=None) -> PlannerDecision:
        candidates = [n for n in snapshot if not n.explored]
        if not candidates:
            return PlannerDecision(EXPLORE_SCENE, rationale="no unexplored nodes")
        scored = [(self.score(n, target), n) for n in candidates]
        best_value = max(value for value, _n in scored)
        if best_value < self.table.threshold:
            return PlannerDecision(EXPLORE_SCENE, rationale="no node scores above threshold")
        top = [n for value, n in scored if value == best_value]
        if len(top) > 1 and distance_fn is not None:
            dists = {n.node_id: distance_fn(n) for n in top}
            nearest = min(dists[n.node_id] for n in top)
            top = [n for n in top if dists[n.node_id] == nearest]
        chosen = min(top, key=lambda n: n.node_id)
        return PlannerDecision(
            EXPLORE_OBJ, node_id=chosen.node_id, node_label=chosen.label,
            rationale=f"affinity({target!r}, {chosen.label!r}) = {best_value:.2f}",
        )


class RemotePlanner:
    """Prompt-backed planner: one retry on malformed replies, then explore_scene."""

    def __init__(self, gateway, endpoint, template):
        self.gateway = gateway
        self.endpoint = endpoint
        self.template = template

    def decide(self, snapshot: tuple[NodeView, ...], target: str,
               history: list[PlannerDecision], distance_fn=None) -> PlannerDecision:
        candidates = [n for n in snapshot if not n.explored]
        listing = "\n".join(
            f"- node {n.node_id}: {n.label}" + (f" — {n.caption}" if n.caption else "")
            for n in candidates
        ) or "(nothing detected yet)"
        prompt = self.gateway.render(self.template, {"target": target, "nodes": listing})
        for _attempt in range(2):
            try:
                reply = self.gateway.complete(self.endpoint, prompt, role="planner")
                action, ref = self.gateway.parse("planner", reply)
            except BackendFailure:
                break
            except ProtocolError:
                continue
            if action == EXPLORE_SCENE:
                return PlannerDecision(EXPLORE_SCENE, rationale="model chose to keep exploring")
            node = _match_node(candidates, ref)
            if node is not None:
                return PlannerDecision(EXPLORE_OBJ, node_id=node.node_id,
                                       node_label=node.label,
                                       rationale=f"model chose node {ref!r}")
        return PlannerDecision(EXPLORE_SCENE, rationale="fallback after malformed replies")


def _match_node(candidates: list[NodeView], ref: str) -> NodeView | None:
    ref = ref.strip()
    if ref.isdigit():
        for n in candidates:
            if n.node_id == int(ref):
                return n
    matches = [n for n in candidates if n.label == ref]
    if matches:
        return min(matches, key=lambda n: n.node_id)
    return None
