"""Attention stage: keep detected labels that anchor the scene semantically.

The oracle backend intersects with a configured anchor-category list
(furniture/receptacles); the remote backend asks a language model with
in-context exemplars. Whatever the backend replies, the output is sanitised
to a subset of the input with input order preserved. Detections near a target
candidate, or carrying the target label itself, bypass pruning entirely so
the representation densifies around the goal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BackendFailure, ProtocolError
from .perception import Detection

DEFAULT_DENSE_RADIUS = 6.0


@dataclass(frozen=True)
class PruneRequest:
    input_labels: tuple[str, ...]
    exemplars: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...] = ()


@dataclass(frozen=True)
class AnchorConfig:
    anchor_labels: frozenset[str]
    synonyms: dict[str, str] = field(default_factory=dict)

    def canonical(self, label: str) -> str:
        return self.synonyms.get(label, label)


def load_anchor_config(path: str | Path) -> AnchorConfig:
    doc = json.loads(Path(path).read_text())
    return AnchorConfig(
        anchor_labels=frozenset(doc["anchor_labels"]),
        synonyms=dict(doc.get("synonyms", {})),
    )


def sanitize(raw_labels: list[str], input_labels: tuple[str, ...]) -> tuple[list[str], list[str]]:
    """Keep raw labels that appear in the input, input-ordered and deduplicated;
    also report what the backend invented so it can be logged."""
    raw_set = set(raw_labels)
    kept = []
    seen = set()
    for label in input_labels:
        if label in raw_set and label not in seen:
            kept.append(label)
            seen.add(label)
    dropped = sorted(raw_set - set(input_labels))
    return kept, dropped


class OraclePruner:
    def __init__(self, config: AnchorConfig, journal: list | None = None):
        self.config = config
        self.journal = journal if journal is not None else []
        self._canon_anchors = {config.canonical(a) for a in config.anchor_labels}

    def prune(self, request: PruneRequest) -> list[str]:
        kept = []
        seen = set()
        for label in request.input_labels:
            if label in seen:
                continue
            seen.add(label)
            if self.config.canonical(label) in self._canon_anchors:
                kept.append(label)
        return kept


class RemotePruner:
    """Prompt-backed pruner; degrades to identity (no pruning) on backend failure."""

    def __init__(self, gateway, endpoint, template, exemplars=(), journal: list | None = None):
        self.gateway = gateway
        self.endpoint = endpoint
        self.template = template
        self.exemplars = tuple(exemplars)
        self.journal = journal if journal is not None else []

    def prune(self, request: PruneRequest) -> list[str]:
        exemplars = request.exemplars or self.exemplars
        shots = "\n".join(
            f"input: [{', '.join(inp)}] -> output: [{', '.join(out)}]"
            for inp, out in exemplars
        )
        deduped = list(dict.fromkeys(request.input_labels))
        prompt = self.gateway.render(self.template, {
            "exemplars": shots,
            "labels": ", ".join(deduped),
        })
        try:
            reply = self.gateway.complete(self.endpoint, prompt, role="pruner")
            raw = self.gateway.parse("pruner", reply)
        except (BackendFailure, ProtocolError) as exc:
            self.journal.append(f"pruner-degraded: {exc}")
            return deduped
        kept, dropped = sanitize(raw, request.input_labels)
        if dropped:
            self.journal.append(f"pruner dropped invented labels: {dropped}")
        return kept


class IdentityPruner:
    """No-op backend used by the pruner ablation."""

    def __init__(self, journal: list | None = None):
        self.journal = journal if journal is not None else []

    def prune(self, request: PruneRequest) -> list[str]:
        return list(dict.fromkeys(request.input_labels))


@dataclass(frozen=True)
class DensityContext:
    target_label: str
    candidate_centroids: tuple[tuple[float, float], ...]
    dense_radius: float = DEFAULT_DENSE_RADIUS


def should_bypass(detection: Detection, ctx: DensityContext) -> bool:
    """Skip pruning for target-labelled detections and anything close to a
    target candidate, so the graph stays dense where it matters."""
    if detection.label == ctx.target_label:
        return True
    cx, cy = detection.mask_centroid()
    for (tx, ty) in ctx.candidate_centroids:
        if math.hypot(cx - tx, cy - ty) <= ctx.dense_radius:
            return True
    return False
