"""Simulated open-vocabulary detector.

Emits one detection per visible ground-truth object (label, confidence,
bounding rectangle, voxel mask) with configurable miss/false-positive/label
confusion noise, all reproducible from the seed. Articles (objects resting on
a receptacle) are only resolvable within ``article_range`` cells even when
geometrically visible; receptacle-scale objects are detectable at full sensor
range. A remote-adapter path parses the same record shape from an external
segmentation service.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, replace

from .errors import ProtocolError
from .world import GridScene, Observation, Voxel

DEFAULT_FALSE_POSITIVE_LABELS = (
    "basket", "box", "bottle", "bowl", "lamp", "mug", "remote", "shoe", "towel", "vase",
)


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    bbox: tuple[int, int, int, int]  # inclusive (x0, y0, x1, y1) over mask columns
    mask: frozenset[Voxel]
    frame: int
    source_object: str | None = None  # ground truth id, withheld from the agent

    def mask_centroid(self) -> tuple[float, float]:
        xs = [v[0] for v in self.mask]
        ys = [v[1] for v in self.mask]
        return (sum(xs) / len(xs), sum(ys) / len(ys))


@dataclass(frozen=True)
class DetectorConfig:
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    label_confusion: tuple[tuple[str, str, float], ...] = ()  # (label, replacement, prob)
    primed_label: str | None = None
    seed: int = 0
    article_range: float = 8.0
    min_confidence: float = 0.0
    false_positive_labels: tuple[str, ...] = DEFAULT_FALSE_POSITIVE_LABELS

    def confusion_for(self, label: str) -> tuple[str, float] | None:
        for src, dst, prob in self.label_confusion:
            if src == label:
                return dst, prob
        return None


def _frame_rng(cfg: DetectorConfig, obs: Observation, stream: str) -> random.Random:
    # independent streams so toggling priming never perturbs true-detection draws
    key = f"{cfg.seed}/{obs.step}/{obs.pose.cell}/{obs.pose.heading}/{stream}"
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _poisson(rng: random.Random, rate: float) -> int:
    if rate <= 0:
        return 0
    limit = math.exp(-rate)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def _bbox_of(mask: frozenset[Voxel]) -> tuple[int, int, int, int]:
    xs = [v[0] for v in mask]
    ys = [v[1] for v in mask]
    return (min(xs), min(ys), max(xs), max(ys))


def detect(obs: Observation, cfg: DetectorConfig, scene: GridScene) -> list[Detection]:
    """Detections for one frame: noisy ground truth plus seeded false positives."""
    rng = _frame_rng(cfg, obs, "true")
    out: list[Detection] = []
    px, py = obs.pose.cell
    for vis in obs.visible_objects:  # already sorted by object id
        obj = scene.object_by_id(vis.object_id)
        if obj.is_article:
            nearest = min(math.hypot(x - px, y - py) for (x, y, _z) in vis.voxels)
            if nearest > cfg.article_range:
                continue
        if rng.random() < cfg.miss_rate:
            continue
        label = obj.label
        confusion = cfg.confusion_for(label)
        if confusion is not None and rng.random() < confusion[1]:
            label = confusion[0]
        conf = rng.uniform(0.6, 1.0)
        out.append(Detection(
            label=label, confidence=conf, bbox=_bbox_of(vis.voxels),
            mask=vis.voxels, frame=obs.step, source_object=obj.object_id,
        ))
    free_cells = sorted(c for c, v in obs.visible_cells.items() if v.kind == "free")
    fp_streams = [("fp", None)]
    if cfg.primed_label is not None:
        fp_streams.append(("fp-primed", cfg.primed_label))
    for stream, primed_label in fp_streams:
        fp_rng = _frame_rng(cfg, obs, stream)
        for _ in range(_poisson(fp_rng, cfg.false_positive_rate)):
            if not free_cells:
                break
            label = primed_label if primed_label is not None else fp_rng.choice(cfg.false_positive_labels)
            cell = fp_rng.choice(free_cells)
            mask = frozenset({(cell[0], cell[1], 0), (cell[0], cell[1], 1)})
            out.append(Detection(
                label=label, confidence=fp_rng.uniform(0.3, 0.8), bbox=_bbox_of(mask),
                mask=mask, frame=obs.step, source_object=None,
            ))
    if cfg.min_confidence > 0:
        out = [d for d in out if d.confidence >= cfg.min_confidence]
    return out


def primed(cfg: DetectorConfig, target_label: str) -> DetectorConfig:
    """Config variant with the detector primed on the navigation target."""
    return replace(cfg, primed_label=target_label)


# --- remote detector adapter --------------------------------------------------
#
# Wire payload (response body of the remote segmentation service):
#   {"segments": [{"label": str, "confidence": float,
#                  "bbox": [x0, y0, x1, y1],
#                  "mask_rle": [[x, y, z0, z1], ...]}, ...]}
# mask_rle lists vertical voxel runs; z1 is inclusive.


def frame_request(obs: Observation) -> str:
    """Serialisable frame descriptor sent to a remote detector."""
    return json.dumps({
        "step": obs.step,
        "pose": {"cell": list(obs.pose.cell), "heading": obs.pose.heading},
        "visible_cells": [
            {"cell": [x, y], "range": view.range_cells, "kind": view.kind}
            for (x, y), view in sorted(obs.visible_cells.items())
        ],
    })


def parse_remote_segments(payload: str, frame: int) -> list[Detection]:
    """Parse a remote detector reply into detections (no ground-truth source)."""
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"remote detector payload is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("segments"), list):
        raise ProtocolError("remote detector payload missing 'segments' list")
    out: list[Detection] = []
    for i, seg in enumerate(doc["segments"]):
        try:
            label = str(seg["label"])
            confidence = float(seg["confidence"])
            x0, y0, x1, y1 = (int(v) for v in seg["bbox"])
            mask = set()
            for run in seg["mask_rle"]:
                x, y, z0, z1 = (int(v) for v in run)
                for z in range(z0, z1 + 1):
                    mask.add((x, y, z))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed segment #{i}: {exc}") from exc
        if not mask:
            raise ProtocolError(f"segment #{i} has an empty mask")
        if not 0.0 <= confidence <= 1.0:
            raise ProtocolError(f"segment #{i} confidence {confidence} outside [0, 1]")
        out.append(Detection(
            label=label, confidence=confidence, bbox=(x0, y0, x1, y1),
            mask=frozenset(mask), frame=frame, source_object=None,
        ))
    return out


def detect_remote(gateway, endpoint, obs: Observation) -> list[Detection]:
    """Fetch detections from a remote segmentation service via the model gateway.

    Transport failures surface as BackendFailure (retryable); malformed
    payloads as ProtocolError.
    """
    reply = gateway.complete(endpoint, frame_request(obs), role="detector")
    return parse_remote_segments(reply, frame=obs.step)
