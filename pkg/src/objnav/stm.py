"""Short-term memory: frame buffer active while approaching a chosen object,
multi-view retrieval by mask overlap, and majority verification of target
candidates. Cleared whenever the phase ends or the agent commits to a new
object, so memory cost never grows with episode length.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from .errors import BackendFailure, PhaseError
from .perception import Detection
from .world import Pose

DEFAULT_VIEW_OVERLAP = 0.2
DEFAULT_CONFIRM_THRESHOLD = 0.5

FOUND = "found"
REJECTED = "rejected"


@dataclass(frozen=True)
class StmFrame:
    step: int
    pose: Pose
    detections: tuple[Detection, ...]
    node_attribution: dict[int, int] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class VerificationResult:
    candidate: Detection
    views: tuple[tuple[int, bool], ...]  # (frame step, confirmed)
    confirm_fraction: float
    verdict: bool


class OracleVerifier:
    """Ground-truth verifier with an optional per-view error rate."""

    def __init__(self, true_label_lookup, error_rate: float = 0.0, seed: int = 0):
        self.true_label_lookup = true_label_lookup
        self.error_rate = error_rate
        self.seed = seed

    def confirm(self, candidate: Detection, frame: StmFrame, target_label: str) -> bool:
        truth = False
        if candidate.source_object is not None:
            truth = self.true_label_lookup(candidate.source_object) == target_label
        if self.error_rate > 0:
            key = f"{self.seed}/{candidate.frame}/{sorted(candidate.mask)[0]}/{frame.step}"
            digest = hashlib.sha256(key.encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            if rng.random() < self.error_rate:
                truth = not truth
        return truth


class RemoteVerifier:
    """Yes/no LVLM check per retrieved view."""

    def __init__(self, gateway, endpoint, template):
        self.gateway = gateway
        self.endpoint = endpoint
        self.template = template

    def confirm(self, candidate: Detection, frame: StmFrame, target_label: str) -> bool:
        prompt = self.gateway.render(self.template, {
            "target": target_label,
            "label": candidate.label,
            "step": str(frame.step),
        })
        reply = self.gateway.complete(self.endpoint, prompt, role="verify")
        return self.gateway.parse("verify", reply)


class ShortTermMemory:
    def __init__(self, view_overlap: float = DEFAULT_VIEW_OVERLAP,
                 confirm_threshold: float = DEFAULT_CONFIRM_THRESHOLD):
        self.view_overlap = view_overlap
        self.confirm_threshold = confirm_threshold
        self.frames: list[StmFrame] = []
        self.active = False

    def begin_phase(self) -> None:
        self.frames.clear()
        self.active = True

    def end_phase(self) -> None:
        self.frames.clear()
        self.active = False

    def __len__(self) -> int:
        return len(self.frames)

    def record(self, frame: StmFrame) -> int:
        if not self.active:
            raise PhaseError("short-term memory records only during explore_obj")
        self.frames.append(frame)
        return len(self.frames)

    def retrieve_views(self, candidate: Detection) -> list[StmFrame]:
        """Frames holding at least one stored detection whose mask overlaps the
        candidate's by the view threshold; deduplicated, ordered by step."""
        hits: list[StmFrame] = []
        seen_steps: set[int] = set()
        for frame in sorted(self.frames, key=lambda f: f.step):
            if frame.step in seen_steps:
                continue
            for det in frame.detections:
                if not det.mask or not candidate.mask:
                    continue
                ov = len(det.mask & candidate.mask) / min(len(det.mask), len(candidate.mask))
                if ov >= self.view_overlap:
                    hits.append(frame)
                    seen_steps.add(frame.step)
                    break
        return hits

    def verify(self, candidate: Detection, views: list[StmFrame], backend,
               target_label: str) -> VerificationResult:
        """Per-view confirmation, majority verdict. Views whose backend call
        fails drop out of the denominator; all-failed means not verified."""
        outcomes: list[tuple[int, bool]] = []
        for frame in views:
            try:
                outcomes.append((frame.step, bool(backend.confirm(candidate, frame, target_label))))
            except BackendFailure:
                continue
        if not outcomes:
            return VerificationResult(candidate, (), 0.0, False)
        fraction = sum(1 for _s, ok in outcomes if ok) / len(outcomes)
        return VerificationResult(candidate, tuple(outcomes), fraction,
                                  fraction >= self.confirm_threshold)

    def conclude(self, results: list[VerificationResult], node_id: int, graph) -> str:
        """Any confirmed candidate ends the episode as found; otherwise the node
        is written off, memory cleared, and the agent goes back to exploring."""
        if any(r.verdict for r in results):
            return FOUND
        graph.mark_explored(node_id)
        self.end_phase()
        return REJECTED
