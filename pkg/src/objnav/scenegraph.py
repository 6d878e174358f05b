"""Object-centric scene graph fused across frames.

Detections merge into nodes by spatial overlap (min-normalised, so partial
views of large objects still match) combined with a label/synonym semantic
match. The merge predicate is evaluated against each node's constituent
detections, which makes the incremental graph exactly the connected
components of the pairwise detection graph, whatever the arrival order.
Survivor nodes keep the lowest id so planner references stay stable.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import EmptyMaskError, UnknownNodeError
from .perception import Detection
from .world import Voxel

DEFAULT_OVERLAP_THRESHOLD = 0.25


def overlap(a: frozenset[Voxel] | set[Voxel], b: frozenset[Voxel] | set[Voxel]) -> float:
    """Shared-voxel fraction |a & b| / min(|a|, |b|)."""
    if not a or not b:
        raise EmptyMaskError("overlap of an empty voxel set")
    return len(a & b) / min(len(a), len(b))


@dataclass
class ObjectNode:
    node_id: int
    label_votes: list[str]
    cloud: set[Voxel]
    frames: list[tuple[int, Detection]]
    resolved_label: str = ""
    caption: str | None = None
    caption_degraded: bool = False
    explored: bool = False
    target_candidate: bool = False

    @property
    def centroid(self) -> tuple[float, float, float]:
        n = len(self.cloud)
        sx = sum(v[0] for v in self.cloud)
        sy = sum(v[1] for v in self.cloud)
        sz = sum(v[2] for v in self.cloud)
        return (sx / n, sy / n, sz / n)

    @property
    def centroid_xy(self) -> tuple[float, float]:
        c = self.centroid
        return (c[0], c[1])


@dataclass(frozen=True)
class NodeView:
    node_id: int
    label: str
    centroid: tuple[float, float, float]
    caption: str | None
    explored: bool
    target_candidate: bool
    frame_count: int
    cloud_size: int


def resolve_label(node: ObjectNode, backend=None) -> str:
    """Pick the node's label: unanimous vote, else plurality, tie broken by the
    most recent frame's label; an optional conflict backend may override."""
    votes = node.label_votes
    counts = Counter(votes)
    if len(counts) == 1:
        return votes[0]
    if backend is not None:
        try:
            choice = backend.resolve_label(node, sorted(counts))
            if choice in counts:
                return choice
        except Exception:
            pass  # fall back to the plurality rule
    top = max(counts.values())
    tied = {label for label, c in counts.items() if c == top}
    if len(tied) == 1:
        return next(iter(tied))
    for label in reversed(votes):
        if label in tied:
            return label
    return votes[-1]


class SceneGraph:
    def __init__(self, overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
                 synonyms: dict[str, str] | None = None,
                 target_label: str | None = None,
                 label_backend=None):
        self.overlap_threshold = overlap_threshold
        self.synonyms = synonyms or {}
        self.target_label = target_label
        self.label_backend = label_backend
        self.nodes: dict[int, ObjectNode] = {}
        self.merged_into: dict[int, int] = {}
        self._next_id = 0

    def canonical(self, label: str) -> str:
        return self.synonyms.get(label, label)

    def labels_match(self, a: str, b: str) -> bool:
        return a == b or self.canonical(a) == self.canonical(b)

    def _detection_matches_node(self, det: Detection, node: ObjectNode) -> float:
        """Best pairwise overlap against the node's constituent detections,
        0.0 when below threshold or semantically unrelated."""
        if not (det.mask & node.cloud):
            return 0.0
        best = 0.0
        for _t, stored in node.frames:
            if not self.labels_match(det.label, stored.label):
                continue
            ov = len(det.mask & stored.mask) / min(len(det.mask), len(stored.mask))
            if ov >= self.overlap_threshold and ov > best:
                best = ov
        return best

    def integrate(self, detections: list[Detection], step: int) -> list[tuple[int, str]]:
        """Fold pruned detections into the graph; returns (node id, created|merged)."""
        results: list[tuple[int, str]] = []
        for det in detections:
            if not det.mask:
                raise EmptyMaskError(f"detection {det.label!r} at step {step} has an empty mask")
            scored = []
            for node in self.nodes.values():
                ov = self._detection_matches_node(det, node)
                if ov > 0.0:
                    scored.append((ov, node.node_id))
            if not scored:
                node = ObjectNode(
                    node_id=self._next_id, label_votes=[det.label],
                    cloud=set(det.mask), frames=[(step, det)],
                )
                self._next_id += 1
                self.nodes[node.node_id] = node
                self._refresh(node)
                results.append((node.node_id, "created"))
                continue
            survivor_id = min(node_id for _ov, node_id in scored)
            survivor = self.nodes[survivor_id]
            for _ov, node_id in sorted(scored):
                if node_id == survivor_id:
                    continue
                self._absorb(survivor, self.nodes.pop(node_id))
                self.merged_into[node_id] = survivor_id
            survivor.cloud |= det.mask
            survivor.label_votes.append(det.label)
            survivor.frames.append((step, det))
            survivor.frames.sort(key=lambda fr: fr[0])
            self._refresh(survivor)
            results.append((survivor_id, "merged"))
        return results

    def _absorb(self, survivor: ObjectNode, other: ObjectNode) -> None:
        survivor.cloud |= other.cloud
        survivor.label_votes.extend(other.label_votes)
        survivor.frames.extend(other.frames)
        survivor.frames.sort(key=lambda fr: fr[0])
        survivor.explored = survivor.explored or other.explored
        if survivor.caption is None:
            survivor.caption = other.caption
            survivor.caption_degraded = other.caption_degraded

    def _refresh(self, node: ObjectNode) -> None:
        node.resolved_label = resolve_label(node, self.label_backend)
        if self.target_label is not None:
            node.target_candidate = self.labels_match(node.resolved_label, self.target_label)

    def resolve_id(self, node_id: int) -> int:
        """Follow merge records to the surviving node id."""
        while node_id not in self.nodes:
            if node_id not in self.merged_into:
                raise UnknownNodeError(f"node {node_id} does not exist")
            node_id = self.merged_into[node_id]
        return node_id

    def mark_explored(self, node_id: int) -> None:
        if node_id not in self.nodes:
            raise UnknownNodeError(f"node {node_id} does not exist")
        self.nodes[node_id].explored = True

    def node(self, node_id: int) -> ObjectNode:
        if node_id not in self.nodes:
            raise UnknownNodeError(f"node {node_id} does not exist")
        return self.nodes[node_id]

    def snapshot(self) -> tuple[NodeView, ...]:
        return tuple(
            NodeView(
                node_id=n.node_id, label=n.resolved_label, centroid=n.centroid,
                caption=n.caption, explored=n.explored,
                target_candidate=n.target_candidate,
                frame_count=len(n.frames), cloud_size=len(n.cloud),
            )
            for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
        )

    def target_centroids(self) -> list[tuple[float, float]]:
        return [n.centroid_xy for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
                if n.target_candidate]

    def dump(self) -> str:
        """One text record per node for post-episode inspection."""
        lines = []
        for view in self.snapshot():
            cx, cy, cz = view.centroid
            lines.append(
                f"node {view.node_id} | {view.label} | centroid {cx:.2f},{cy:.2f},{cz:.2f}"
                f" | frames {view.frame_count} | caption {view.caption or '-'}"
            )
        return "\n".join(lines)
