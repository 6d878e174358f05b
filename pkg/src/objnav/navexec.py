"""Execution-level planning: episodic 2D mapping, frontier extraction, goal
maps, a fast-marching arrival-time solver, and one-primitive-at-a-time
gradient following.

The arrival-time field solves |grad T| = 1 on known-free cells with unit grid
spacing. Obstacle and unknown cells are never accepted (T stays infinite);
frontier cells are valid goals because they are themselves known-free.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import Stuck
from .world import FORWARD, HEADING_VEC, LEFT_OF, RIGHT_OF, STOP, TURN_LEFT, TURN_RIGHT, Cell, Observation, Pose

UNKNOWN, FREE, OBSTACLE = 0, 1, 2

_GRID_STEP = 1.0  # cell spacing h


class EpisodicMap:
    """Per-cell knowledge grid; cells only ever transition unknown -> known."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.grid = np.zeros((width, height), dtype=np.uint8)

    def state(self, cell: Cell) -> int:
        return int(self.grid[cell])

    def update(self, obs: Observation) -> None:
        for cell, view in obs.visible_cells.items():
            if self.grid[cell] == UNKNOWN:
                self.grid[cell] = FREE if view.kind == "free" else OBSTACLE
        # the agent stands here, so it is free regardless of prior knowledge
        self.grid[obs.pose.cell] = FREE

    def known_fraction(self) -> float:
        return float(np.count_nonzero(self.grid) / self.grid.size)

    def copy_grid(self) -> np.ndarray:
        return self.grid.copy()


def frontiers(emap: EpisodicMap) -> set[Cell]:
    """Known-free cells 4-adjacent to at least one unknown cell."""
    grid = emap.grid
    unknown = grid == UNKNOWN
    free = grid == FREE
    adj = np.zeros_like(unknown)
    adj[1:, :] |= unknown[:-1, :]
    adj[:-1, :] |= unknown[1:, :]
    adj[:, 1:] |= unknown[:, :-1]
    adj[:, :-1] |= unknown[:, 1:]
    xs, ys = np.nonzero(free & adj)
    return {(int(x), int(y)) for x, y in zip(xs, ys)}


@dataclass(frozen=True)
class GoalMap:
    cells: frozenset[Cell]
    mode: str  # "frontier" | "object"
    node_id: int | None = None


def build_goal_map(decision_action: str, node_centroid: tuple[float, float] | None,
                   emap: EpisodicMap, goal_radius: float = 2.0,
                   node_id: int | None = None) -> GoalMap:
    """Goal cells for the current high-level decision.

    explore_scene: the frontier set. explore_obj: known-free cells within
    goal_radius of the node centroid projection, falling back to the frontier
    nearest the centroid while the region is still unexplored.
    """
    front = frontiers(emap)
    if decision_action == "explore_scene":
        if not front:
            raise Stuck("no frontiers remain")
        return GoalMap(frozenset(front), "frontier")
    if node_centroid is None:
        raise ValueError("explore_obj goal needs a node centroid")
    cx, cy = node_centroid
    near: set[Cell] = set()
    r = int(math.ceil(goal_radius))
    px, py = round(cx), round(cy)
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            cell = (px + dx, py + dy)
            if (cell[0] - cx) ** 2 + (cell[1] - cy) ** 2 > goal_radius ** 2:
                continue
            if 0 <= cell[0] < emap.width and 0 <= cell[1] < emap.height and emap.grid[cell] == FREE:
                near.add(cell)
    if near:
        return GoalMap(frozenset(near), "object", node_id)
    if not front:
        raise Stuck("object region unreachable and no frontiers remain")
    nearest = min(front, key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c))
    return GoalMap(frozenset({nearest}), "object", node_id)


def fmm(emap: EpisodicMap, goal: GoalMap) -> np.ndarray:
    """Arrival-time field from the goal set over known-free cells.

    Wavefront expansion with a min-priority queue; each accepted cell updates
    its 4-neighbours with the quadratic rule: a = min horizontal T, b = min
    vertical T; T = min(a,b)+h if |a-b| >= h else (a+b+sqrt(2h^2-(a-b)^2))/2.
    """
    if not goal.cells:
        raise ValueError("goal map is empty")
    w, h = emap.width, emap.height
    grid = emap.grid
    T = np.full((w, h), np.inf)
    accepted = np.zeros((w, h), dtype=bool)
    heap: list[tuple[float, int, int]] = []
    for (x, y) in sorted(goal.cells):
        if grid[x, y] != FREE:
            continue
        T[x, y] = 0.0
        heapq.heappush(heap, (0.0, x, y))
    step = _GRID_STEP
    while heap:
        t, x, y = heapq.heappop(heap)
        if accepted[x, y]:
            continue
        accepted[x, y] = True
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            if grid[nx, ny] != FREE or accepted[nx, ny]:
                continue
            a = min(
                T[nx - 1, ny] if nx > 0 else math.inf,
                T[nx + 1, ny] if nx < w - 1 else math.inf,
            )
            b = min(
                T[nx, ny - 1] if ny > 0 else math.inf,
                T[nx, ny + 1] if ny < h - 1 else math.inf,
            )
            if math.isinf(a) and math.isinf(b):
                continue
            if abs(a - b) >= step or math.isinf(a) or math.isinf(b):
                t_new = min(a, b) + step
            else:
                t_new = (a + b + math.sqrt(2 * step * step - (a - b) ** 2)) / 2
            if t_new < T[nx, ny]:
                T[nx, ny] = t_new
                heapq.heappush(heap, (t_new, nx, ny))
    return T


_NEIGHBOR_ORDER = ("N", "E", "S", "W")


def next_primitive(field: np.ndarray, pose: Pose, goal: GoalMap) -> str:
    """Single primitive toward the time-field descent direction.

    Stop on a goal cell; otherwise face (turning one step at a time) and then
    advance into the 4-neighbour with minimal arrival time, heading-order
    N,E,S,W on ties.
    """
    if pose.cell in goal.cells:
        return STOP
    x, y = pose.cell
    if not math.isfinite(field[x, y]):
        raise Stuck(f"agent cell {pose.cell} has no route to the goal")
    w, h = field.shape
    best_heading = None
    best_t = math.inf
    for heading in _NEIGHBOR_ORDER:
        dx, dy = HEADING_VEC[heading]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < w and 0 <= ny < h):
            continue
        t = field[nx, ny]
        if t < best_t:
            best_t = t
            best_heading = heading
    if best_heading is None or math.isinf(best_t):
        raise Stuck("all neighbouring cells are unreachable")
    if best_heading == pose.heading:
        return FORWARD
    if LEFT_OF[pose.heading] == best_heading:
        return TURN_LEFT
    if RIGHT_OF[pose.heading] == best_heading:
        return TURN_RIGHT
    return TURN_LEFT  # 180 degrees: two lefts, one per call


def dump_map(emap: EpisodicMap) -> str:
    """Human-inspectable grid of map states (north row first)."""
    chars = {UNKNOWN: "?", FREE: ".", OBSTACLE: "#"}
    rows = []
    for y in range(emap.height - 1, -1, -1):
        rows.append("".join(chars[int(emap.grid[x, y])] for x in range(emap.width)))
    return "\n".join(rows)


def dump_field(field: np.ndarray) -> str:
    """Arrival-time grid, 'inf' for unreachable cells (north row first)."""
    w, h = field.shape
    rows = []
    for y in range(h - 1, -1, -1):
        rows.append(" ".join(
            "inf" if math.isinf(field[x, y]) else f"{field[x, y]:.3f}" for x in range(w)
        ))
    return "\n".join(rows)
