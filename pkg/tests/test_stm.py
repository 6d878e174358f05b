import math
import random

import pytest

from objnav.errors import BackendFailure, PhaseError
from objnav.perception import Detection
from objnav.scenegraph import SceneGraph
from objnav.stm import (
    FOUND,
    REJECTED,
    OracleVerifier,
    ShortTermMemory,
    StmFrame,
    VerificationResult,
)
from objnav.world import Pose


def det(label, x, y, frame=0, source=None, z0=0, z1=1):
    mask = frozenset((x, y, z) for z in range(z0, z1 + 1))
    return Detection(label=label, confidence=0.9, bbox=(x, y, x, y),
                     mask=mask, frame=frame, source_object=source)


def frame_at(step, dets):
    return StmFrame(step=step, pose=Pose((0, 0), "N"), detections=tuple(dets))


def active_stm(**kwargs):
    stm = ShortTermMemory(**kwargs)
    stm.begin_phase()
    return stm


# --- record ---------------------------------------------------------------------

def test_record_grows_buffer():
    stm = active_stm()
    assert stm.record(frame_at(1, [det("orange", 3, 3)])) == 1
    for i in range(2, 6):
        stm.record(frame_at(i, []))
    assert len(stm) == 5


def test_record_outside_phase_rejected():
    stm = ShortTermMemory()
    with pytest.raises(PhaseError):
        stm.record(frame_at(1, []))
    stm.begin_phase()
    stm.record(frame_at(1, []))
    stm.end_phase()
    with pytest.raises(PhaseError):
        stm.record(frame_at(2, []))
    assert len(stm) == 0


# --- retrieve_views ----------------------------------------------------------------

def test_retrieve_identical_mask():
    stm = active_stm()
    stored = det("orange", 4, 4, frame=1)
    stm.record(frame_at(1, [stored]))
    candidate = det("orange", 4, 4, frame=9)
    assert [f.step for f in stm.retrieve_views(candidate)] == [1]


def test_retrieve_disjoint_masks_empty():
    stm = active_stm()
    stm.record(frame_at(1, [det("orange", 4, 4)]))
    stm.record(frame_at(2, [det("cup", 9, 9)]))
    assert stm.retrieve_views(det("orange", 20, 20, frame=5)) == []


def test_retrieve_matches_brute_force_scan():
    rng = random.Random(6)
    for _ in range(30):
        stm = active_stm()
        frames = []
        for step in range(1, rng.randrange(3, 12)):
            dets = [det("thing", rng.randrange(5), rng.randrange(5), frame=step,
                        z0=0, z1=rng.randrange(0, 3))
                    for _ in range(rng.randrange(0, 4))]
            frame = frame_at(step, dets)
            frames.append(frame)
            stm.record(frame)
        candidate = det("orange", rng.randrange(5), rng.randrange(5), frame=99,
                        z0=0, z1=rng.randrange(0, 3))
        # brute force: scan every frame and detection independently
        expected = []
        for frame in frames:
            hit = False
            for d in frame.detections:
                shared = len(d.mask & candidate.mask)
                if shared and shared / min(len(d.mask), len(candidate.mask)) >= 0.2:
                    hit = True
            if hit:
                expected.append(frame.step)
        assert [f.step for f in stm.retrieve_views(candidate)] == expected


def test_retrieval_ordered_and_deduplicated():
    stm = active_stm()
    stm.record(frame_at(3, [det("orange", 4, 4), det("orange", 4, 4, z1=2)]))
    stm.record(frame_at(1, [det("orange", 4, 4)]))
    views = stm.retrieve_views(det("orange", 4, 4, frame=9))
    assert [f.step for f in views] == [1, 3]


# --- verify ---------------------------------------------------------------------

class FixedVerifier:
    def __init__(self, answers):
        self.answers = dict(answers)

    def confirm(self, candidate, frame, target):
        answer = self.answers[frame.step]
        if isinstance(answer, Exception):
            raise answer
        return answer


def test_verdict_majority_six_of_eight():
    stm = active_stm()
    views = [frame_at(i, []) for i in range(8)]
    verifier = FixedVerifier({i: i < 6 for i in range(8)})
    result = stm.verify(det("orange", 1, 1), views, verifier, "orange")
    assert result.confirm_fraction == 0.75
    assert result.verdict is True


def test_verdict_minority_three_of_eight():
    stm = active_stm()
    views = [frame_at(i, []) for i in range(8)]
    verifier = FixedVerifier({i: i < 3 for i in range(8)})
    result = stm.verify(det("orange", 1, 1), views, verifier, "orange")
    assert result.verdict is False


def test_failed_views_drop_out_of_denominator():
    stm = active_stm()
    views = [frame_at(i, []) for i in range(4)]
    verifier = FixedVerifier({0: True, 1: BackendFailure("down"), 2: True, 3: False})
    result = stm.verify(det("orange", 1, 1), views, verifier, "orange")
    assert len(result.views) == 3
    assert result.confirm_fraction == pytest.approx(2 / 3)
    assert result.verdict is True
    verifier = FixedVerifier({i: BackendFailure("down") for i in range(4)})
    result = stm.verify(det("orange", 1, 1), views, verifier, "orange")
    assert result.verdict is False and result.views == ()


def binomial_tail(n, p, k):
    return sum(math.comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(k, n + 1))


def test_verification_statistics_match_binomial_tail():
    # 5 views, per-view flip rate 0.3 on a true target: verdict true needs >= 3 confirms
    views = [frame_at(i, []) for i in range(1, 6)]
    candidate = det("orange", 2, 2, frame=50, source="orange_1")
    lookup = lambda object_id: "orange"
    trials = 2000
    hits = 0
    for seed in range(trials):
        stm = active_stm()
        verifier = OracleVerifier(lookup, error_rate=0.3, seed=seed)
        if stm.verify(candidate, views, verifier, "orange").verdict:
            hits += 1
    expected = binomial_tail(5, 0.7, 3)
    assert abs(hits / trials - expected) <= 0.03


def test_oracle_verifier_rejects_false_positive_sources():
    stm = active_stm()
    verifier = OracleVerifier(lambda oid: "cup", error_rate=0.0)
    views = [frame_at(1, [])]
    assert stm.verify(det("orange", 1, 1, source="cup_1"), views, verifier, "orange").verdict is False
    assert stm.verify(det("orange", 1, 1, source=None), views, verifier, "orange").verdict is False


# --- conclude ---------------------------------------------------------------------

def graph_with_node():
    graph = SceneGraph()
    graph.integrate([det("couch", 5, 5)], step=1)
    return graph


def result(verdict):
    return VerificationResult(det("orange", 1, 1), ((1, verdict),), float(verdict), verdict)


def test_conclude_found_on_any_true_verdict():
    stm = active_stm()
    stm.record(frame_at(1, []))
    graph = graph_with_node()
    assert stm.conclude([result(False), result(True)], 0, graph) == FOUND
    assert not graph.nodes[0].explored  # found ends the episode, node stays


def test_conclude_rejected_clears_buffer_and_marks_explored():
    stm = active_stm()
    stm.record(frame_at(1, []))
    graph = graph_with_node()
    assert stm.conclude([result(False)], 0, graph) == REJECTED
    assert graph.nodes[0].explored
    assert len(stm) == 0
    assert not stm.active


def test_conclude_no_candidates_is_rejected():
    stm = active_stm()
    graph = graph_with_node()
    assert stm.conclude([], 0, graph) == REJECTED
