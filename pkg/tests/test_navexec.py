import heapq
import math
import random

import pytest

from objnav.errors import Stuck
from objnav.navexec import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    EpisodicMap,
    GoalMap,
    build_goal_map,
    fmm,
    frontiers,
    next_primitive,
)
from objnav.world import FORWARD, HEADING_VEC, STOP, EpisodeSpec, GridScene, GridWorld, ObjectInstance, Pose, Room


def open_map(w=10, h=10, free_all=True):
    emap = EpisodicMap(w, h)
    if free_all:
        emap.grid[:, :] = FREE
    return emap


# --- oracles ------------------------------------------------------------------

def dijkstra_oracle(grid, goals):
    """Independent 4-connected unit-cost Dijkstra from the goal set."""
    w, h = grid.shape
    dist = {}
    heap = []
    for g in goals:
        if grid[g] == FREE:
            dist[g] = 0
            heapq.heappush(heap, (0, g))
    while heap:
        d, (x, y) = heapq.heappop(heap)
        if d > dist.get((x, y), math.inf):
            continue
        for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nb[0] < w and 0 <= nb[1] < h and grid[nb] == FREE:
                nd = d + 1
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    heapq.heappush(heap, (nd, nb))
    return dist


def euclid_oracle(cell, goals):
    return min(math.hypot(cell[0] - g[0], cell[1] - g[1]) for g in goals)


def frontier_oracle(emap):
    out = set()
    for x in range(emap.width):
        for y in range(emap.height):
            if emap.grid[x, y] != FREE:
                continue
            for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if 0 <= nb[0] < emap.width and 0 <= nb[1] < emap.height and emap.grid[nb] == UNKNOWN:
                    out.add((x, y))
                    break
    return out


# --- update_map -----------------------------------------------------------------

def scene_world(walls=(), objects=(), size=12, start=(5, 5)):
    border = {(x, y) for x in range(size) for y in (0, size - 1)}
    border |= {(x, y) for y in range(size) for x in (0, size - 1)}
    objects = tuple(objects) + (
        ObjectInstance("tgt", "target", frozenset({(size - 2, size - 2)}), (0, 0)),
    )
    scene = GridScene("m", size, size, frozenset(border | set(walls)),
                      (Room("r", (1, 1, size - 1, size - 1)),), objects)
    world = GridWorld(scene, EpisodeSpec("e", "mem", Pose(start, "N"), "target", 500, 2.0))
    return scene, world


def test_update_marks_exactly_the_visible_cone():
    _, world = scene_world()
    obs = world.step("turn_left")
    emap = EpisodicMap(world.scene.width, world.scene.height)
    emap.update(obs)
    known = {(x, y) for x in range(emap.width) for y in range(emap.height)
             if emap.grid[x, y] != UNKNOWN}
    assert known == set(obs.visible_cells)


def test_cells_never_flip_between_free_and_obstacle():
    _, world = scene_world(walls={(5, 8)})
    emap = EpisodicMap(world.scene.width, world.scene.height)
    states = {}
    for prim in ["turn_left"] * 4 + [FORWARD, FORWARD, "turn_right"] * 6:
        obs = world.step(prim)
        emap.update(obs)
        for cell in obs.visible_cells:
            prev = states.get(cell)
            cur = emap.state(cell)
            if prev is not None:
                assert prev == cur
            states[cell] = cur


def test_full_sweep_union_matches_ground_truth():
    walls = {(4, 4), (4, 5), (4, 6)}
    chair = ObjectInstance("c1", "chair", frozenset({(8, 3)}), (0, 1))
    scene, _ = scene_world(walls=walls, objects=(chair,))
    emap = EpisodicMap(scene.width, scene.height)
    free_cells = {(x, y) for x in range(scene.width) for y in range(scene.height)
                  if scene.is_free((x, y))}
    for cell in sorted(free_cells):
        world = GridWorld(scene, EpisodeSpec("s", "mem", Pose(cell, "N"), "target", 500, 2.0))
        for obs in world.pan_around():
            emap.update(obs)
    marked_free = {(x, y) for x in range(scene.width) for y in range(scene.height)
                   if emap.grid[x, y] == FREE}
    assert marked_free == free_cells
    # every blocked cell bordering free space was observed as an obstacle
    for (x, y) in free_cells:
        for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if not scene.is_free(nb) and scene.in_bounds(nb):
                assert emap.grid[nb] == OBSTACLE, nb


# --- frontiers --------------------------------------------------------------------

def test_frontiers_all_unknown_is_empty():
    assert frontiers(EpisodicMap(8, 8)) == set()


def test_frontier_single_free_cell():
    emap = EpisodicMap(8, 8)
    emap.grid[3, 4] = FREE
    assert frontiers(emap) == {(3, 4)}


def test_frontiers_match_double_loop_oracle():
    rng = random.Random(5)
    for _ in range(25):
        emap = EpisodicMap(30, 30)
        for x in range(30):
            for y in range(30):
                emap.grid[x, y] = rng.choice([UNKNOWN, UNKNOWN, FREE, OBSTACLE])
        assert frontiers(emap) == frontier_oracle(emap)


# --- build_goal_map ------------------------------------------------------------------

def test_goal_map_explore_scene_is_frontier_set():
    emap = open_map(10, 10)
    emap.grid[7:, :] = UNKNOWN
    goal = build_goal_map("explore_scene", None, emap)
    assert goal.mode == "frontier"
    assert set(goal.cells) == frontiers(emap)


def test_goal_map_object_ring_respects_radius():
    emap = open_map(12, 12)
    goal = build_goal_map("explore_obj", (6.0, 6.0), emap, goal_radius=2.0, node_id=3)
    assert goal.node_id == 3
    for cell in goal.cells:
        assert math.hypot(cell[0] - 6.0, cell[1] - 6.0) <= 2.0 + 1e-9
    expected = {(x, y) for x in range(12) for y in range(12)
                if (x - 6.0) ** 2 + (y - 6.0) ** 2 <= 4.0}
    assert set(goal.cells) == expected


def test_goal_map_object_falls_back_to_nearest_frontier():
    emap = EpisodicMap(12, 12)
    emap.grid[0:4, 0:4] = FREE
    goal = build_goal_map("explore_obj", (10.0, 10.0), emap, goal_radius=2.0)
    assert len(goal.cells) == 1
    cell = next(iter(goal.cells))
    front = frontiers(emap)
    best = min(math.hypot(c[0] - 10, c[1] - 10) for c in front)
    assert math.hypot(cell[0] - 10, cell[1] - 10) == pytest.approx(best)


def test_goal_map_stuck_when_fully_explored():
    emap = open_map(6, 6)
    with pytest.raises(Stuck):
        build_goal_map("explore_scene", None, emap)


# --- fmm -------------------------------------------------------------------------

def test_fmm_goal_cell_zero_and_neighbor_one():
    emap = open_map(9, 9)
    field = fmm(emap, GoalMap(frozenset({(4, 4)}), "frontier"))
    assert field[4, 4] == 0.0
    assert field[5, 4] == pytest.approx(1.0)
    assert field[4, 3] == pytest.approx(1.0)


def test_fmm_diagonal_quadratic_value():
    emap = open_map(9, 9)
    field = fmm(emap, GoalMap(frozenset({(4, 4)}), "frontier"))
    assert field[5, 5] == pytest.approx(1 + 1 / math.sqrt(2), abs=1e-9)


def random_known_map(rng, size=40, wall_p=0.25):
    emap = EpisodicMap(size, size)
    for x in range(size):
        for y in range(size):
            emap.grid[x, y] = OBSTACLE if rng.random() < wall_p else FREE
    return emap


def test_fmm_sandwich_bounds_on_random_maps():
    # goal regions are connected (one cell or a 2x2 blob): fronts from separated
    # sources cross and the quadratic update mixes them, legitimately dipping
    # below straight-line distance, so the bracket is a single-front property
    rng = random.Random(23)
    for trial in range(30):
        emap = random_known_map(rng)
        free = [(x, y) for x in range(40) for y in range(40) if emap.grid[x, y] == FREE]
        gx, gy = rng.choice(free)
        if trial % 2:
            goals = {(gx, gy)}
        else:
            goals = {(x, y) for x in (gx, gx + 1) for y in (gy, gy + 1)
                     if 0 <= x < 40 and 0 <= y < 40 and emap.grid[x, y] == FREE}
        field = fmm(emap, GoalMap(frozenset(goals), "frontier"))
        ddist = dijkstra_oracle(emap.grid, goals)
        for cell in free:
            t = field[cell]
            if cell in ddist:
                assert t <= ddist[cell] + 1e-9, (cell, t, ddist[cell])
                assert t >= euclid_oracle(cell, goals) - 1e-9, (cell, t)
            else:
                assert math.isinf(t)


def test_fmm_descent_everywhere():
    # every reachable non-goal cell has a strictly smaller 4-neighbour
    rng = random.Random(4)
    emap = random_known_map(rng, size=25)
    free = [(x, y) for x in range(25) for y in range(25) if emap.grid[x, y] == FREE]
    goals = {rng.choice(free)}
    field = fmm(emap, GoalMap(frozenset(goals), "frontier"))
    for (x, y) in free:
        t = field[x, y]
        if math.isinf(t) or (x, y) in goals:
            continue
        nbs = [field[nb] for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))
               if 0 <= nb[0] < 25 and 0 <= nb[1] < 25]
        assert min(nbs) < t


# --- next_primitive -----------------------------------------------------------------

def test_next_primitive_forward_when_facing_goal():
    emap = open_map(9, 9)
    goal = GoalMap(frozenset({(4, 6)}), "frontier")
    field = fmm(emap, goal)
    assert next_primitive(field, Pose((4, 5), "N"), goal) == FORWARD


def test_next_primitive_stop_on_goal():
    emap = open_map(9, 9)
    goal = GoalMap(frozenset({(4, 5)}), "frontier")
    field = fmm(emap, goal)
    assert next_primitive(field, Pose((4, 5), "E"), goal) == STOP


def test_next_primitive_stuck_when_unreachable():
    emap = open_map(9, 9)
    emap.grid[4, :] = OBSTACLE  # split the map
    goal = GoalMap(frozenset({(7, 5)}), "frontier")
    field = fmm(emap, goal)
    with pytest.raises(Stuck):
        next_primitive(field, Pose((2, 2), "N"), goal)


def test_follow_reaches_goal_within_dijkstra_bound():
    rng = random.Random(99)
    done = 0
    while done < 20:
        emap = random_known_map(rng, size=20, wall_p=0.2)
        free = [(x, y) for x in range(20) for y in range(20) if emap.grid[x, y] == FREE]
        goal_cell = rng.choice(free)
        start = rng.choice(free)
        ddist = dijkstra_oracle(emap.grid, {goal_cell})
        if start not in ddist or start == goal_cell:
            continue
        done += 1
        goal = GoalMap(frozenset({goal_cell}), "frontier")
        field = fmm(emap, goal)
        pose = Pose(start, "N")
        used = 0
        visited_states = set()
        while True:
            prim = next_primitive(field, pose, goal)
            if prim == STOP:
                break
            state = (pose.cell, pose.heading)
            assert state not in visited_states, "cycle detected"
            visited_states.add(state)
            used += 1
            if prim == FORWARD:
                dx, dy = HEADING_VEC[pose.heading]
                pose = Pose((pose.x + dx, pose.y + dy), pose.heading)
            elif prim == "turn_left":
                from objnav.world import LEFT_OF
                pose = Pose(pose.cell, LEFT_OF[pose.heading])
            else:
                from objnav.world import RIGHT_OF
                pose = Pose(pose.cell, RIGHT_OF[pose.heading])
        assert pose.cell == goal_cell
        # turns included; +4 additive slack covers initial turns at tiny distances
        assert used <= 3 * ddist[start] + 4
