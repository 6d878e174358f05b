"""Node captioning with phase-aware timing.

While the agent explores the scene, new nodes are captioned immediately
(queue drains every step). While it travels toward a chosen object, caption
work is deferred and batched when the phase ends, trading freshness for a
faster control loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .perception import Detection
from .scenegraph import ObjectNode, SceneGraph

DEFAULT_NEIGHBOR_RADIUS = 4.0

EXPLORE_SCENE = "explore_scene"
EXPLORE_OBJ = "explore_obj"


@dataclass(frozen=True)
class CaptionJob:
    node_id: int
    best_view: tuple[int, Detection]
    neighbor_labels: tuple[str, ...]
    room: str | None


def build_job(graph: SceneGraph, node: ObjectNode, room_lookup,
              neighbor_radius: float = DEFAULT_NEIGHBOR_RADIUS) -> CaptionJob:
    best_view = max(node.frames, key=lambda fr: (len(fr[1].mask), fr[0]))
    cx, cy = node.centroid_xy
    neighbors = []
    for other in graph.nodes.values():
        if other.node_id == node.node_id:
            continue
        ox, oy = other.centroid_xy
        dist = math.hypot(ox - cx, oy - cy)
        if dist <= neighbor_radius:
            neighbors.append((dist, other.resolved_label))
    neighbors.sort()
    room = room_lookup((round(cx), round(cy))) if room_lookup else None
    return CaptionJob(
        node_id=node.node_id, best_view=best_view,
        neighbor_labels=tuple(label for _d, label in neighbors), room=room,
    )


def _join_labels(labels: tuple[str, ...]) -> str:
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


class OracleCaptioner:
    """Deterministic template captioner; attribute text comes from ground truth
    the way a competent vision model would read it off the crop."""

    def __init__(self, attributes_lookup=None):
        self.attributes_lookup = attributes_lookup

    def caption(self, job: CaptionJob, label: str) -> str:
        det = job.best_view[1]
        attrs: tuple[str, ...] = ()
        if self.attributes_lookup and det.source_object:
            attrs = tuple(self.attributes_lookup(det.source_object))
        parts = ["a"]
        parts.extend(attrs)
        parts.append(label)
        text = " ".join(parts)
        if job.neighbor_labels:
            text += f" near {_join_labels(job.neighbor_labels)}"
        if job.room:
            text += f" in the {job.room}"
        return text


class RemoteCaptioner:
    """LVLM-backed captioner that falls back to the oracle template on failure."""

    def __init__(self, gateway, endpoint, template, fallback: OracleCaptioner):
        self.gateway = gateway
        self.endpoint = endpoint
        self.template = template
        self.fallback = fallback

    def caption(self, job: CaptionJob, label: str) -> str:
        prompt = self.gateway.render(self.template, {
            "label": label,
            "neighbors": ", ".join(job.neighbor_labels) or "nothing notable",
            "room": job.room or "an unknown room",
        })
        reply = self.gateway.complete(self.endpoint, prompt, role="caption")
        return self.gateway.parse("caption", reply)


class CaptionQueue:
    def __init__(self, graph: SceneGraph, backend, room_lookup=None,
                 neighbor_radius: float = DEFAULT_NEIGHBOR_RADIUS):
        self.graph = graph
        self.backend = backend
        self.room_lookup = room_lookup
        self.neighbor_radius = neighbor_radius
        self.pending: list[int] = []
        self.phase = EXPLORE_SCENE

    def set_phase(self, phase: str) -> None:
        self.phase = phase

    def enqueue(self, node_id: int) -> None:
        if node_id not in self.pending:
            self.pending.append(node_id)

    def _caption_one(self, node_id: int) -> bool:
        node = self.graph.nodes.get(node_id)
        if node is None:  # merged away before its caption came due
            return False
        job = build_job(self.graph, node, self.room_lookup, self.neighbor_radius)
        try:
            node.caption = self.backend.caption(job, node.resolved_label)
        except Exception:
            node.caption = OracleCaptioner().caption(job, node.resolved_label)
            node.caption_degraded = True
        return True

    def drain(self) -> int:
        """Caption everything pending; called every explore_scene step."""
        done = 0
        for node_id in self.pending:
            if self._caption_one(node_id):
                done += 1
        self.pending.clear()
        return done

    def flush_on_phase_end(self) -> int:
        """Batch-caption deferred nodes when an explore_obj phase ends."""
        return self.drain()
