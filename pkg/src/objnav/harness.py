"""Episode runner and experiment protocol.

One episode is a loop of observe -> detect -> prune -> integrate -> caption ->
decide -> goal map -> arrival-time field -> primitive, with the short-term
memory active while the agent approaches a chosen object and a pan-plus-verify
sequence on arrival. The runner also computes success metrics, aggregates
suites, and drives the ablation switches.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import navexec
from .caption import EXPLORE_OBJ, EXPLORE_SCENE, CaptionQueue, OracleCaptioner, RemoteCaptioner
from .errors import BudgetExhausted, EpisodeFinished, Stuck, UnknownNodeError
from .llmgw import ModelGateway, load_template
from .navexec import EpisodicMap, GoalMap, build_goal_map, fmm, next_primitive
from .perception import DetectorConfig, detect, primed
from .planner import DONE, OraclePlanner, PlannerDecision, RemotePlanner, load_affinity_table
from .pruner import DensityContext, IdentityPruner, OraclePruner, PruneRequest, RemotePruner, load_anchor_config, should_bypass
from .scenegraph import SceneGraph
from .stm import FOUND, OracleVerifier, RemoteVerifier, ShortTermMemory, StmFrame
from .world import STOP, EpisodeSpec, GridScene, GridWorld, load_episodes, load_scene

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_SUITE = DATA_DIR / "suite16.episodes"
DEFAULT_AFFINITY = DATA_DIR / "config" / "affinity.json"
DEFAULT_ANCHORS = DATA_DIR / "config" / "anchors.json"

ABLATION_ROWS = ("full", "no_stm", "no_pruner", "no_captions")


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: str
    success: bool
    steps_taken: int
    path_length: int
    shortest_length: int
    spl: float


@dataclass(frozen=True)
class RunConfig:
    planner_backend: str = "oracle"  # oracle | remote
    no_stm: bool = False
    no_pruner: bool = False
    no_captions: bool = False
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    seed: int = 0
    decide_interval: int = 10
    replan_interval: int = 5
    goal_radius: float = 2.0
    dense_radius: float = 6.0
    neighbor_radius: float = 4.0
    overlap_threshold: float = 0.25
    stm_view_overlap: float = 0.2
    confirm_threshold: float = 0.5
    verify_error_rate: float = 0.0
    fov_range: int = 12
    affinity_path: str = str(DEFAULT_AFFINITY)
    anchors_path: str = str(DEFAULT_ANCHORS)

    def with_ablation(self, row: str) -> "RunConfig":
        return replace(self, no_stm=row == "no_stm", no_pruner=row == "no_pruner",
                       no_captions=row == "no_captions")


@dataclass
class StepRecord:
    step: int
    primitive: str
    cell: tuple[int, int]
    heading: str
    phase: str
    detections: int
    kept: int
    created_nodes: tuple[int, ...]


@dataclass
class DecisionRecord:
    step: int
    action: str
    node_id: int | None
    node_label: str | None
    source: str
    rationale: str


@dataclass
class VerificationRecord:
    step: int
    node_id: int
    candidates: int
    view_counts: tuple[int, ...]
    verdicts: tuple[bool, ...]
    outcome: str


@dataclass
class EpisodeTrace:
    episode: str
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    verifications: list[VerificationRecord] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


class RunHooks:
    """Override points for observers (state server, loggers)."""

    def on_step(self, runner, obs) -> None:
        pass

    def on_nodes_created(self, runner, created) -> None:
        pass

    def on_decision(self, runner, decision) -> None:
        pass

    def on_decision_pending(self, runner, candidates) -> None:
        pass

    def on_finished(self, runner, metrics) -> None:
        pass


class ReplayDecisionSource:
    """Feeds a recorded decision list back through the loop."""

    def __init__(self, decisions: list[DecisionRecord]):
        self._queue = [d for d in decisions if d.action != DONE]
        self.name = "replay"

    def decide(self, snapshot, target, history, distance_fn=None):
        if not self._queue:
            return PlannerDecision(EXPLORE_SCENE, rationale="replay exhausted")
        rec = self._queue.pop(0)
        return PlannerDecision(rec.action, node_id=rec.node_id,
                               node_label=rec.node_label, rationale=rec.rationale)


class _FoundEarly(Exception):
    """no_stm mode: first target-labelled detection terminates the episode."""


class EpisodeRunner:
    def __init__(self, episode: EpisodeSpec, cfg: RunConfig,
                 scene: GridScene | None = None,
                 decision_source=None, hooks: RunHooks | None = None,
                 gateway: ModelGateway | None = None, endpoint=None):
        self.episode = episode
        self.cfg = cfg
        self.scene = scene if scene is not None else load_scene(episode.scene_path)
        self.hooks = hooks or RunHooks()
        self.gateway = gateway
        self.endpoint = endpoint
        self.journal: list[str] = []
        self._build(decision_source)

    def _build(self, decision_source) -> None:
        cfg = self.cfg
        episode = self.episode
        anchors = load_anchor_config(cfg.anchors_path)
        affinity = load_affinity_table(cfg.affinity_path)
        self.world = GridWorld(self.scene, episode, fov_range=cfg.fov_range)
        self.emap = EpisodicMap(self.scene.width, self.scene.height)
        self.graph = SceneGraph(overlap_threshold=cfg.overlap_threshold,
                                synonyms=anchors.synonyms,
                                target_label=episode.target_label)
        self.detector_cfg = replace(cfg.detector, seed=cfg.detector.seed + cfg.seed * 7919)
        attrs = lambda oid: self.scene.object_by_id(oid).attributes
        if cfg.planner_backend == "remote" and self.gateway is not None:
            captioner = RemoteCaptioner(self.gateway, self.endpoint,
                                        load_template("caption"), OracleCaptioner(attrs))
        else:
            captioner = OracleCaptioner(attrs)
        self.caption_queue = CaptionQueue(self.graph, captioner,
                                          room_lookup=self.scene.room_at,
                                          neighbor_radius=cfg.neighbor_radius)
        self.stm = ShortTermMemory(view_overlap=cfg.stm_view_overlap,
                                   confirm_threshold=cfg.confirm_threshold)
        if cfg.planner_backend == "remote" and self.gateway is not None:
            self.verifier = RemoteVerifier(self.gateway, self.endpoint, load_template("verify"))
        else:
            self.verifier = OracleVerifier(lambda oid: self.scene.object_by_id(oid).label,
                                           error_rate=cfg.verify_error_rate, seed=cfg.seed)
        if cfg.no_pruner:
            self.pruner = IdentityPruner(self.journal)
        elif cfg.planner_backend == "remote" and self.gateway is not None:
            self.pruner = RemotePruner(self.gateway, self.endpoint, load_template("pruner"),
                                       exemplars=load_pruner_exemplars(), journal=self.journal)
        else:
            self.pruner = OraclePruner(anchors, self.journal)
        if decision_source is not None:
            self.planner = decision_source
            self.planner_name = getattr(decision_source, "name", "external")
        elif cfg.planner_backend == "remote" and self.gateway is not None:
            self.planner = RemotePlanner(self.gateway, self.endpoint, load_template("planner"))
            self.planner_name = "remote"
        else:
            self.planner = OraclePlanner(affinity, captions_enabled=not cfg.no_captions)
            self.planner_name = "oracle"
        self.trace = EpisodeTrace(episode=episode.name, seed=cfg.seed)
        self.history: list[PlannerDecision] = []
        self.phase = EXPLORE_SCENE
        self.target_node: int | None = None
        self.goal: GoalMap | None = None
        self.field = None
        self.steps_since_plan = 0
        self.steps_since_decide = 0
        self.found = False

    # --- pipeline stages -------------------------------------------------------

    def _detect_cfg(self, primed_pass: bool) -> DetectorConfig:
        if primed_pass:
            return primed(self.detector_cfg, self.episode.target_label)
        return self.detector_cfg

    def _process_obs(self, obs, primed_pass: bool = False, primitive: str = "") -> list[tuple[int, str]]:
        cfg = self.cfg
        self.emap.update(obs)
        dets = detect(obs, self._detect_cfg(primed_pass), self.scene)
        if cfg.no_pruner:
            kept = list(dets)
        else:
            ctx = DensityContext(self.episode.target_label,
                                 tuple(self.graph.target_centroids()), cfg.dense_radius)
            bypass = [should_bypass(d, ctx) for d in dets]
            rest_labels = tuple(d.label for d, b in zip(dets, bypass) if not b)
            kept_labels = set(self.pruner.prune(PruneRequest(rest_labels)))
            kept = [d for d, b in zip(dets, bypass) if b or d.label in kept_labels]
        results = self.graph.integrate(kept, step=obs.step)
        created = [(nid, kind) for nid, kind in results if kind == "created"]
        self.trace.steps.append(StepRecord(
            step=obs.step, primitive=primitive, cell=obs.pose.cell,
            heading=obs.pose.heading, phase=self.phase,
            detections=len(dets), kept=len(kept),
            created_nodes=tuple(nid for nid, _k in created),
        ))
        if not cfg.no_captions:
            for nid, _kind in created:
                self.caption_queue.enqueue(nid)
            if self.phase == EXPLORE_SCENE:
                self.caption_queue.drain()
        if self.phase == EXPLORE_OBJ and self.stm.active:
            attribution = {i: nid for i, (nid, _k) in enumerate(results)}
            self.stm.record(StmFrame(step=obs.step, pose=obs.pose,
                                     detections=tuple(kept), node_attribution=attribution))
        self.hooks.on_step(self, obs)
        if created:
            self.hooks.on_nodes_created(self, created)
        if cfg.no_stm:
            for d in kept:
                if self.graph.labels_match(d.label, self.episode.target_label):
                    raise _FoundEarly()
        return created

    def _distance_fn(self, node_view) -> float:
        cx, cy, _cz = node_view.centroid
        region = set()
        r = int(math.ceil(self.cfg.goal_radius))
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                cell = (round(cx) + dx, round(cy) + dy)
                if (cell[0] - cx) ** 2 + (cell[1] - cy) ** 2 <= self.cfg.goal_radius ** 2 \
                        and self.scene.is_free(cell):
                    region.add(cell)
        if not region:
            return math.inf
        dist = self.world.shortest_path_length(self.world.pose.cell, region)
        return math.inf if dist is None else float(dist)

    def _snapshot_for_planner(self):
        snap = self.graph.snapshot()
        if self.cfg.no_captions:
            snap = tuple(replace(v, caption=None) for v in snap)
        return snap

    def _decide(self) -> PlannerDecision:
        snapshot = self._snapshot_for_planner()
        self.hooks.on_decision_pending(self, [v for v in snapshot if not v.explored])
        decision = self.planner.decide(snapshot, self.episode.target_label,
                                       self.history, self._distance_fn)
        self.history.append(decision)
        self.trace.decisions.append(DecisionRecord(
            step=self.world.steps_used, action=decision.action,
            node_id=decision.node_id, node_label=decision.node_label,
            source=self.planner_name, rationale=decision.rationale,
        ))
        self.hooks.on_decision(self, decision)
        self.steps_since_decide = 0
        return decision

    def _apply_decision(self, decision: PlannerDecision) -> None:
        if decision.action == DONE:
            raise _FoundEarly() if decision.done_reason == "found" else Stuck("operator gave up")
        if decision.action == EXPLORE_OBJ:
            node = self.graph.node(decision.node_id)
            if node.explored:
                raise UnknownNodeError(f"node {decision.node_id} already explored")
            if self.phase != EXPLORE_OBJ or self.target_node != decision.node_id:
                # committing to a (new) object clears working memory
                self.stm.end_phase()
                self.stm.begin_phase()
                self.phase = EXPLORE_OBJ
                self.target_node = decision.node_id
                self.caption_queue.set_phase(EXPLORE_OBJ)
        else:
            if self.phase == EXPLORE_OBJ:
                self.stm.end_phase()
                if not self.cfg.no_captions:
                    self.caption_queue.flush_on_phase_end()
            self.phase = EXPLORE_SCENE
            self.target_node = None
            self.caption_queue.set_phase(EXPLORE_SCENE)
        self.goal = None  # force replanning

    def _rebuild_goal(self) -> None:
        if self.phase == EXPLORE_OBJ:
            self.target_node = self.graph.resolve_id(self.target_node)
            node = self.graph.node(self.target_node)
            self.goal = build_goal_map(EXPLORE_OBJ, node.centroid_xy, self.emap,
                                       goal_radius=self.cfg.goal_radius,
                                       node_id=self.target_node)
            self.field = fmm(self.emap, self.goal)
            if not math.isfinite(self.field[self.world.pose.cell]):
                # the region was only glimpsed through a wall: head for the
                # reachable frontier nearest the node and let the map open up
                self.goal = self._reachable_frontier_goal(node.centroid_xy)
                self.field = fmm(self.emap, self.goal)
        else:
            self.goal = build_goal_map(EXPLORE_SCENE, None, self.emap)
            self.field = fmm(self.emap, self.goal)
            if not math.isfinite(self.field[self.world.pose.cell]):
                self.goal = self._reachable_frontier_goal(self.world.pose.cell)
                self.field = fmm(self.emap, self.goal)
        self.steps_since_plan = 0

    def _reachable_frontier_goal(self, toward: tuple[float, float]) -> GoalMap:
        from collections import deque
        start = self.world.pose.cell
        grid = self.emap.grid
        seen = {start}
        queue = deque([start])
        reachable = []
        front = navexec.frontiers(self.emap)
        while queue:
            x, y = queue.popleft()
            if (x, y) in front:
                reachable.append((x, y))
            for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if nb in seen:
                    continue
                if 0 <= nb[0] < self.emap.width and 0 <= nb[1] < self.emap.height \
                        and grid[nb] == navexec.FREE:
                    seen.add(nb)
                    queue.append(nb)
        if not reachable:
            raise Stuck("no reachable frontier remains")
        cx, cy = toward
        best = min(reachable, key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c))
        return GoalMap(frozenset({best}), "frontier")

    def _end_phase_rejected(self) -> None:
        if not self.cfg.no_captions:
            self.caption_queue.flush_on_phase_end()
        self.phase = EXPLORE_SCENE
        self.target_node = None
        self.caption_queue.set_phase(EXPLORE_SCENE)
        self._apply_decision(self._decide())

    def _arrival_sequence(self) -> bool:
        """Pan, re-detect primed, retrieve views, verify, conclude.

        Returns True when the episode ends (found and stopped)."""
        pan_obs = self.world.pan_around()
        pan_steps = set()
        for obs in pan_obs:
            self._process_obs(obs, primed_pass=True, primitive="turn_left")
            pan_steps.add(obs.step)
        node_id = self.graph.resolve_id(self.target_node)
        candidates = []
        for frame in self.stm.frames:
            if frame.step not in pan_steps:
                continue
            for det_ in frame.detections:
                if self.graph.labels_match(det_.label, self.episode.target_label):
                    candidates.append(det_)
        candidates.sort(key=lambda d: (d.frame, sorted(d.mask)[0]))
        results = []
        for candidate in candidates:
            views = self.stm.retrieve_views(candidate)
            if not views:
                continue
            results.append(self.stm.verify(candidate, views, self.verifier,
                                           self.episode.target_label))
        outcome = self.stm.conclude(results, node_id, self.graph)
        self.trace.verifications.append(VerificationRecord(
            step=self.world.steps_used, node_id=node_id, candidates=len(candidates),
            view_counts=tuple(len(r.views) for r in results),
            verdicts=tuple(r.verdict for r in results), outcome=outcome,
        ))
        if outcome == FOUND:
            self.world.step(STOP)
            self.found = True
            return True
        self._end_phase_rejected()
        return False

    # --- main loop ----------------------------------------------------------------

    def run(self) -> tuple[EpisodeMetrics, EpisodeTrace]:
        try:
            self._run_loop()
        except _FoundEarly:
            self.trace.notes.append("found-declared")
            try:
                self.world.step(STOP)
                self.found = True
            except EpisodeFinished:
                self.trace.notes.append("budget-exhausted-before-stop")
        except (BudgetExhausted, EpisodeFinished):
            self.trace.notes.append("budget-exhausted")
        except Stuck as exc:
            self.trace.notes.append(f"stuck: {exc}")
        metrics = self._metrics()
        self.hooks.on_finished(self, metrics)
        return metrics, self.trace

    def _run_loop(self) -> None:
        for obs in self.world.pan_around():  # bootstrap: seed map and graph
            self._process_obs(obs, primitive="turn_left")
        self._apply_decision(self._decide())
        while self.world.active:
            if self.goal is None or self.steps_since_plan >= self.cfg.replan_interval:
                self._rebuild_goal()
            prim = next_primitive(self.field, self.world.pose, self.goal)
            if prim == STOP:
                if self.phase == EXPLORE_OBJ:
                    self._rebuild_goal()  # region may have opened since last plan
                    if self.world.pose.cell in self.goal.cells or len(self.goal.cells) == 1:
                        if self._arrival_sequence():
                            return
                        continue
                    continue
                # frontier reached while exploring: look around, then re-decide
                obs = self.world.step("turn_left")
                created = self._process_obs(obs, primitive="turn_left")
                self._maybe_redecide(created, force=True)
                self.goal = None
                continue
            obs = self.world.step(prim)
            created = self._process_obs(obs, primitive=prim)
            self.steps_since_plan += 1
            self.steps_since_decide += 1
            if self.target_node is not None and self.target_node not in self.graph.nodes:
                self.target_node = self.graph.resolve_id(self.target_node)
            self._maybe_redecide(created)

    def _maybe_redecide(self, created, force: bool = False) -> None:
        if self.phase == EXPLORE_SCENE:
            if created or force or self.steps_since_decide >= self.cfg.decide_interval:
                self._apply_decision(self._decide())
        elif created:
            decision = self._decide()
            if decision.action == EXPLORE_OBJ and decision.node_id != self.target_node:
                self._apply_decision(decision)
            elif decision.action == EXPLORE_SCENE:
                self._apply_decision(decision)

    # --- metrics ----------------------------------------------------------------

    def _metrics(self) -> EpisodeMetrics:
        episode = self.episode
        world = self.world
        region = world.success_region(episode.target_label, episode.success_radius)
        shortest = world.shortest_path_length(episode.start.cell, region)
        shortest = -1 if shortest is None else shortest
        near = world.distance_to_nearest(world.pose.cell, episode.target_label)
        success = bool(self.found and world.stopped and near <= episode.success_radius)
        p = world.cells_moved
        if success:
            spl = shortest / max(p, shortest) if max(p, shortest) > 0 else 1.0
        else:
            spl = 0.0
        return EpisodeMetrics(
            episode=episode.name, success=success, steps_taken=world.steps_used,
            path_length=p, shortest_length=shortest, spl=spl,
        )


def load_pruner_exemplars(path: str | Path = DATA_DIR / "config" / "pruner_exemplars.json"):
    import json

    doc = json.loads(Path(path).read_text())
    return tuple((tuple(e["input"]), tuple(e["output"])) for e in doc["exemplars"])


def run_episode(episode: EpisodeSpec, cfg: RunConfig, **kwargs) -> tuple[EpisodeMetrics, EpisodeTrace]:
    return EpisodeRunner(episode, cfg, **kwargs).run()


def aggregate(metrics: list[EpisodeMetrics]) -> tuple[float, float]:
    if not metrics:
        raise ValueError("no episodes to aggregate")
    sr = sum(1.0 for m in metrics if m.success) / len(metrics)
    spl = sum(m.spl for m in metrics) / len(metrics)
    return sr, spl


def run_suite(episodes: list[EpisodeSpec], cfg: RunConfig, **kwargs) -> list[EpisodeMetrics]:
    out = []
    for episode in episodes:
        metrics, _trace = run_episode(episode, cfg, **kwargs)
        out.append(metrics)
    return out


def run_ablation_suite(episodes: list[EpisodeSpec], cfg: RunConfig,
                       seeds: tuple[int, ...] = (0,)) -> dict[str, tuple[float, float]]:
    """Four-row comparison (full stack and one ablation at a time) over
    identical seeds and episodes."""
    table: dict[str, tuple[float, float]] = {}
    for row in ABLATION_ROWS:
        collected: list[EpisodeMetrics] = []
        for seed in seeds:
            seeded = replace(cfg.with_ablation(row), seed=seed)
            collected.extend(run_suite(episodes, seeded))
        table[row] = aggregate(collected)
    return table


def metrics_csv(metrics: list[EpisodeMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["episode", "success", "steps", "p", "l", "spl"])
    for m in metrics:
        writer.writerow([m.episode, int(m.success), m.steps_taken,
                         m.path_length, m.shortest_length, f"{m.spl:.4f}"])
    return buf.getvalue()


def format_results_table(rows: list[tuple[str, float, float]]) -> str:
    """AGENT | SR | SPL layout used by the suite and ablation printers."""
    width = max(len("AGENT"), max((len(r[0]) for r in rows), default=0))
    lines = [f"{'AGENT':<{width}} | {'SR':>6} | {'SPL':>6}",
             "-" * (width + 19)]
    for name, sr, spl in rows:
        lines.append(f"{name:<{width}} | {sr:6.4f} | {spl:6.4f}")
    return "\n".join(lines)


def bundled_suite() -> list[EpisodeSpec]:
    return load_episodes(DEFAULT_SUITE)


def replay_trace(trace: EpisodeTrace, episode: EpisodeSpec, cfg: RunConfig,
                 **kwargs) -> tuple[EpisodeMetrics, EpisodeTrace]:
    """Re-run an episode feeding the trace's recorded decisions back in."""
    source = ReplayDecisionSource(trace.decisions)
    return EpisodeRunner(episode, cfg, decision_source=source, **kwargs).run()
