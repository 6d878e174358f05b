"""State server bridging the episode loop and a human operator.

Serves live snapshots (map, scene graph, pending decision) over HTTP, accepts
human decisions, and pushes an ordered event feed. The agent loop is the only
state writer; the server reads published snapshots and forwards validated
commands through a single-consumer queue, so human mode runs the identical
loop with the planner swapped out.

Endpoints (all JSON):
  GET  /state                 -> StateSnapshot document (404 before an episode)
  POST /decision              -> {"kind": "choose_node"|"choose_explore_scene"|
                                  "declare_stop", "node_id": int?}
  GET  /events?after=N        -> server-sent events, one per feed entry
                                 ("id: <n>" + "data: <json>"), closing after
                                 episode-finished
"""
from __future__ import annotations

import json
import queue
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .caption import EXPLORE_OBJ, EXPLORE_SCENE
from .harness import EpisodeRunner, RunConfig, RunHooks
from .navexec import frontiers
from .planner import DONE, PlannerDecision
from .world import EpisodeSpec

EVENT_BUFFER = 1024


def _rle_encode(grid) -> list[list[int]]:
    """Row-major run-length encoding, index = y * width + x."""
    runs: list[list[int]] = []
    w, h = grid.shape
    for y in range(h):
        for x in range(w):
            value = int(grid[x, y])
            if runs and runs[-1][1] == value:
                runs[-1][0] += 1
            else:
                runs.append([1, value])
    return runs


def build_snapshot(runner: EpisodeRunner, pending, finished=None) -> dict:
    world = runner.world
    graph = [
        {
            "id": v.node_id, "label": v.label,
            "centroid": [round(c, 3) for c in v.centroid],
            "caption": v.caption, "explored": v.explored,
            "target_candidate": v.target_candidate,
        }
        for v in runner.graph.snapshot()
    ]
    snapshot = {
        "step": world.steps_used,
        "phase": runner.phase,
        "pose": {"cell": list(world.pose.cell), "heading": world.pose.heading},
        "map": {
            "width": runner.emap.width, "height": runner.emap.height,
            "rle": _rle_encode(runner.emap.grid),
            "frontiers": sorted(list(c) for c in frontiers(runner.emap)),
        },
        "graph": graph,
        "pending_decision": pending,
        "metrics": {
            "steps_used": world.steps_used,
            "budget": runner.episode.step_budget,
            "cells_moved": world.cells_moved,
            "target": runner.episode.target_label,
        },
        "finished": finished is not None,
        "success": None if finished is None else finished.success,
        "spl": None if finished is None else finished.spl,
    }
    return snapshot


class HumanDecisionSource:
    """Planner replacement: blocks the loop until a validated command arrives."""

    def __init__(self, command_queue: "queue.Queue"):
        self.commands = command_queue
        self.name = "human"

    def decide(self, snapshot, target, history, distance_fn=None) -> PlannerDecision:
        kind, node_id = self.commands.get()
        if kind == "choose_explore_scene":
            return PlannerDecision(EXPLORE_SCENE, rationale="operator chose to explore")
        if kind == "choose_node":
            node = next(v for v in snapshot if v.node_id == node_id)
            return PlannerDecision(EXPLORE_OBJ, node_id=node_id, node_label=node.label,
                                   rationale="operator chose a node")
        return PlannerDecision(DONE, done_reason="exhausted",
                               rationale="operator stopped the episode")


class EpisodeServer:
    """Owns the runner thread, the snapshot, and the event feed."""

    def __init__(self, episode: EpisodeSpec, cfg: RunConfig, mode: str = "human",
                 scene=None):
        self.mode = mode
        self.commands: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._snapshot: dict | None = None
        self._events: deque = deque(maxlen=EVENT_BUFFER)
        self._next_event_id = 0
        self._new_event = threading.Condition()
        self.pending: dict | None = None
        self.metrics = None
        hooks = _ServerHooks(self)
        source = HumanDecisionSource(self.commands) if mode == "human" else None
        self.runner = EpisodeRunner(episode, cfg, scene=scene,
                                    decision_source=source, hooks=hooks)
        self._publish_snapshot(pending=None)
        self.thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self.thread.start()

    def _run(self) -> None:
        self.metrics, _trace = self.runner.run()

    # --- written from the loop thread ------------------------------------------

    def _publish_snapshot(self, pending, finished=None) -> None:
        snapshot = build_snapshot(self.runner, pending, finished)
        with self._lock:
            self._snapshot = snapshot

    def _publish_event(self, event: dict) -> None:
        with self._new_event:
            event = dict(event, id=self._next_event_id)
            self._next_event_id += 1
            self._events.append(event)
            self._new_event.notify_all()

    # --- read from server threads ------------------------------------------------

    def get_state(self) -> dict | None:
        with self._lock:
            return self._snapshot

    def events_since(self, after: int) -> tuple[list[dict], bool]:
        """Buffered events with id > after; True when the feed lost older entries."""
        with self._new_event:
            events = [e for e in self._events if e["id"] > after]
            gapped = bool(self._events) and self._events[0]["id"] > after + 1
            return events, gapped

    def submit(self, kind: str, node_id) -> tuple[int, dict]:
        if kind not in ("choose_node", "choose_explore_scene", "declare_stop"):
            return 400, {"error": f"unknown command {kind!r}"}
        with self._lock:
            pending = self.pending
        if pending is None:
            return 409, {"error": "no decision is pending"}
        if kind == "choose_node":
            if node_id not in pending["candidates"]:
                return 400, {"error": f"node {node_id} is not a pending candidate"}
        with self._lock:
            self.pending = None
        self.commands.put((kind, node_id))
        return 200, {"ok": True}


class _ServerHooks(RunHooks):
    def __init__(self, server: EpisodeServer):
        self.server = server

    def on_step(self, runner, obs) -> None:
        self.server._publish_snapshot(pending=None)
        self.server._publish_event({"type": "step-complete", "step": obs.step})

    def on_nodes_created(self, runner, created) -> None:
        for node_id, _kind in created:
            node = runner.graph.nodes.get(node_id)
            label = node.resolved_label if node else ""
            self.server._publish_event({
                "type": "node-created", "step": runner.world.steps_used,
                "node_id": node_id, "label": label,
            })

    def on_decision_pending(self, runner, candidates) -> None:
        if self.server.mode != "human":
            return
        pending = {
            "target": runner.episode.target_label,
            "candidates": [v.node_id for v in candidates],
        }
        with self.server._lock:
            self.server.pending = pending
        self.server._publish_snapshot(pending=pending)
        self.server._publish_event({
            "type": "decision-requested", "step": runner.world.steps_used,
            "target": pending["target"], "candidates": pending["candidates"],
        })

    def on_decision(self, runner, decision) -> None:
        with self.server._lock:
            self.server.pending = None

    def on_finished(self, runner, metrics) -> None:
        self.server.metrics = metrics
        self.server._publish_snapshot(pending=None, finished=metrics)
        self.server._publish_event({
            "type": "episode-finished", "step": runner.world.steps_used,
            "success": metrics.success, "spl": metrics.spl,
        })


def make_http_server(episode_server: EpisodeServer, port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def _send_json(self, status: int, doc: dict) -> None:
            payload = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/state":
                snapshot = episode_server.get_state()
                if snapshot is None:
                    self._send_json(404, {"error": "no episode"})
                else:
                    self._send_json(200, snapshot)
                return
            if parsed.path == "/events":
                after = int(parse_qs(parsed.query).get("after", ["-1"])[0])
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                try:
                    self._stream_events(after)
                except (BrokenPipeError, ConnectionResetError):
                    pass
                return
            self._send_json(404, {"error": "unknown path"})

        def _stream_events(self, after: int) -> None:
            events, gapped = episode_server.events_since(after)
            if gapped:
                self.wfile.write(b"data: {\"type\": \"gap\"}\n\n")
            while True:
                for event in events:
                    after = event["id"]
                    body = json.dumps(event).encode()
                    self.wfile.write(b"id: %d\ndata: %s\n\n" % (event["id"], body))
                    self.wfile.flush()
                    if event["type"] == "episode-finished":
                        return
                with episode_server._new_event:
                    episode_server._new_event.wait(timeout=5.0)
                events, _ = episode_server.events_since(after)
                if not events and not episode_server.thread.is_alive():
                    return

        def do_POST(self):
            parsed = urlparse(self.path)
            if parsed.path != "/decision":
                self._send_json(404, {"error": "unknown path"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                doc = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self._send_json(400, {"error": "body is not JSON"})
                return
            status, reply = episode_server.submit(doc.get("kind", ""), doc.get("node_id"))
            self._send_json(status, reply)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)
