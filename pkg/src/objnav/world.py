"""Deterministic multi-room grid world.

Cells are (x, y) with x growing east and y growing north; map files list the
northernmost row first. The agent occupies one free cell and faces one of
N/E/S/W. Observations are computed by a 90-degree cone raycast: walls occlude
rays, objects do not (they block movement only; their occupied columns are
still reported so mapping can mark them non-traversable). Depth is the
per-cell Euclidean range along the ray; no images are rendered.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import BudgetExhausted, EpisodeFinished, SceneFormatError

Cell = tuple[int, int]
Voxel = tuple[int, int, int]

HEADINGS = ("N", "E", "S", "W")
HEADING_VEC = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
LEFT_OF = {"N": "W", "W": "S", "S": "E", "E": "N"}
RIGHT_OF = {v: k for k, v in LEFT_OF.items()}

FORWARD = "forward"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"
STOP = "stop"
PRIMITIVES = (FORWARD, TURN_LEFT, TURN_RIGHT, STOP)

DEFAULT_FOV_RANGE = 12
DEFAULT_STEP_BUDGET = 500
DEFAULT_SUCCESS_RADIUS = 2.0


def ray_cells(a: Cell, b: Cell) -> list[Cell]:
    """Integer line of cells from a to b inclusive (Bresenham, all octants)."""
    x0, y0 = a
    x1, y1 = b
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = [(x0, y0)]
    x, y = x0, y0
    while (x, y) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
        cells.append((x, y))
    return cells


@dataclass(frozen=True)
class Pose:
    cell: Cell
    heading: str

    @property
    def x(self) -> int:
        return self.cell[0]

    @property
    def y(self) -> int:
        return self.cell[1]


@dataclass(frozen=True)
class ObjectInstance:
    object_id: str
    label: str
    footprint: frozenset[Cell]
    height_band: tuple[int, int]  # inclusive (z_min, z_max)
    attributes: tuple[str, ...] = ()
    on_receptacle: str | None = None

    @property
    def voxels(self) -> frozenset[Voxel]:
        z0, z1 = self.height_band
        return frozenset((x, y, z) for (x, y) in self.footprint for z in range(z0, z1 + 1))

    @property
    def is_article(self) -> bool:
        return self.on_receptacle is not None

    def centroid_cell(self) -> Cell:
        xs = [c[0] for c in self.footprint]
        ys = [c[1] for c in self.footprint]
        return (round(sum(xs) / len(xs)), round(sum(ys) / len(ys)))


@dataclass(frozen=True)
class Room:
    name: str
    bounds: tuple[int, int, int, int]  # x0, y0, x1, y1 half-open

    def contains(self, cell: Cell) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= cell[0] < x1 and y0 <= cell[1] < y1


@dataclass
class GridScene:
    name: str
    width: int
    height: int
    walls: frozenset[Cell]
    rooms: tuple[Room, ...]
    objects: tuple[ObjectInstance, ...]
    cell_size: float = 0.25

    def __post_init__(self) -> None:
        self._occupied: dict[Cell, list[ObjectInstance]] = {}
        for obj in self.objects:
            for cell in obj.footprint:
                self._occupied.setdefault(cell, []).append(obj)

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_wall(self, cell: Cell) -> bool:
        return cell in self.walls

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls and cell not in self._occupied

    def objects_at(self, cell: Cell) -> list[ObjectInstance]:
        return self._occupied.get(cell, [])

    def room_at(self, cell: Cell) -> str | None:
        for room in self.rooms:
            if room.contains(cell):
                return room.name
        return None

    def object_by_id(self, object_id: str) -> ObjectInstance:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def instances_of(self, label: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.label == label]

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SceneFormatError(f"{self.name}: non-positive dimensions")
        for i, a in enumerate(self.rooms):
            for b in self.rooms[i + 1:]:
                if _rects_overlap(a.bounds, b.bounds):
                    raise SceneFormatError(f"{self.name}: rooms {a.name} and {b.name} overlap")
        ids = [o.object_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise SceneFormatError(f"{self.name}: duplicate object ids")
        for obj in self.objects:
            if not obj.footprint:
                raise SceneFormatError(f"{obj.object_id}: empty footprint")
            if not _connected(obj.footprint):
                raise SceneFormatError(f"{obj.object_id}: footprint not 4-connected")
            if obj.height_band[1] < obj.height_band[0]:
                raise SceneFormatError(f"{obj.object_id}: empty height band")
            rooms_hit = set()
            for cell in obj.footprint:
                if not self.in_bounds(cell) or cell in self.walls:
                    raise SceneFormatError(f"{obj.object_id}: footprint cell {cell} not in free space")
                room = self.room_at(cell)
                if room is None:
                    raise SceneFormatError(f"{obj.object_id}: cell {cell} outside every room")
                rooms_hit.add(room)
            if len(rooms_hit) != 1:
                raise SceneFormatError(f"{obj.object_id}: footprint spans rooms {sorted(rooms_hit)}")
            if obj.on_receptacle is not None:
                base = self.object_by_id(obj.on_receptacle)
                if not obj.footprint <= base.footprint:
                    raise SceneFormatError(f"{obj.object_id}: not on top of {base.object_id}")


def _rects_overlap(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _connected(cells: frozenset[Cell]) -> bool:
    seen = {next(iter(cells))}
    queue = deque(seen)
    while queue:
        x, y = queue.popleft()
        for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nb in cells and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cells)


@dataclass(frozen=True)
class CellView:
    range_cells: float
    kind: str  # free | wall | object


@dataclass(frozen=True)
class VisibleObject:
    object_id: str
    voxels: frozenset[Voxel]


@dataclass(frozen=True)
class Observation:
    step: int
    pose: Pose
    visible_cells: dict[Cell, CellView] = field(compare=False)
    visible_objects: tuple[VisibleObject, ...] = ()


@dataclass(frozen=True)
class EpisodeSpec:
    name: str
    scene_path: str
    start: Pose
    target_label: str
    step_budget: int = DEFAULT_STEP_BUDGET
    success_radius: float = DEFAULT_SUCCESS_RADIUS


_CONE_CACHE: dict[int, dict[str, tuple]] = {}


def _rotate(offset: Cell, heading: str) -> Cell:
    dx, dy = offset
    if heading == "N":
        return (dx, dy)
    if heading == "E":
        return (dy, -dx)
    if heading == "S":
        return (-dx, -dy)
    return (-dy, dx)


def _cone_table(range_cells: int) -> dict[str, tuple]:
    """Per-heading FOV offsets with precomputed strictly-between ray cells."""
    if range_cells in _CONE_CACHE:
        return _CONE_CACHE[range_cells]
    r2 = range_cells * range_cells
    base: list[Cell] = []
    for dy in range(0, range_cells + 1):
        for dx in range(-range_cells, range_cells + 1):
            if (dx, dy) == (0, 0) or dy < abs(dx) or dx * dx + dy * dy > r2:
                continue
            base.append((dx, dy))
    base.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o))
    table: dict[str, tuple] = {}
    for heading in HEADINGS:
        entries = []
        for off in base:
            rot = _rotate(off, heading)
            between = tuple(ray_cells((0, 0), rot)[1:-1])
            entries.append((rot, math.hypot(*rot), between))
        table[heading] = tuple(entries)
    _CONE_CACHE[range_cells] = table
    return table


class GridWorld:
    """Steppable episode simulator over an immutable GridScene."""

    def __init__(self, scene: GridScene, episode: EpisodeSpec, fov_range: int = DEFAULT_FOV_RANGE):
        scene.validate()
        if episode.step_budget < 0:
            raise SceneFormatError("step budget must be >= 0")
        if not scene.instances_of(episode.target_label):
            raise SceneFormatError(f"no instance of target {episode.target_label!r} in scene {scene.name}")
        if not scene.is_free(episode.start.cell):
            raise SceneFormatError(f"start cell {episode.start.cell} is not free")
        if episode.start.heading not in HEADINGS:
            raise SceneFormatError(f"bad heading {episode.start.heading!r}")
        self.scene = scene
        self.episode = episode
        self.fov_range = fov_range
        self._cone = _cone_table(fov_range)
        self.reset()

    def reset(self) -> None:
        self.pose = self.episode.start
        self.steps_used = 0
        self.stopped = False
        self.observations_emitted = 0
        self.cells_moved = 0

    @property
    def remaining_steps(self) -> int:
        return self.episode.step_budget - self.steps_used

    @property
    def active(self) -> bool:
        return not self.stopped and self.remaining_steps > 0

    def step(self, primitive: str) -> Observation:
        if primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {primitive!r}")
        if self.stopped:
            raise EpisodeFinished("stop already issued")
        if self.remaining_steps <= 0:
            raise EpisodeFinished("step budget exhausted")
        self.steps_used += 1
        if primitive == FORWARD:
            vx, vy = HEADING_VEC[self.pose.heading]
            target = (self.pose.x + vx, self.pose.y + vy)
            if self.scene.is_free(target):
                self.pose = replace(self.pose, cell=target)
                self.cells_moved += 1
        elif primitive == TURN_LEFT:
            self.pose = replace(self.pose, heading=LEFT_OF[self.pose.heading])
        elif primitive == TURN_RIGHT:
            self.pose = replace(self.pose, heading=RIGHT_OF[self.pose.heading])
        elif primitive == STOP:
            self.stopped = True
        obs = self._observe(self.steps_used)
        self.observations_emitted += 1
        return obs

    def pan_around(self) -> list[Observation]:
        if self.stopped:
            raise EpisodeFinished("stop already issued")
        if self.remaining_steps < 4:
            raise BudgetExhausted("pan_around needs 4 remaining steps")
        return [self.step(TURN_LEFT) for _ in range(4)]

    def _observe(self, step: int) -> Observation:
        scene = self.scene
        px, py = self.pose.cell
        visible: dict[Cell, CellView] = {self.pose.cell: CellView(0.0, "free")}
        walls = scene.walls
        for off, dist, between in self._cone[self.pose.heading]:
            cell = (px + off[0], py + off[1])
            if not scene.in_bounds(cell):
                continue
            blocked = False
            for bx, by in between:
                bc = (px + bx, py + by)
                if bc in walls or not scene.in_bounds(bc):
                    blocked = True
                    break
            if blocked:
                continue
            if cell in walls:
                kind = "wall"
            elif scene.objects_at(cell):
                kind = "object"
            else:
                kind = "free"
            visible[cell] = CellView(dist, kind)
        visible_objects = []
        for obj in sorted(scene.objects, key=lambda o: o.object_id):
            cols = [c for c in obj.footprint if c in visible]
            if cols:
                z0, z1 = obj.height_band
                voxels = frozenset((x, y, z) for (x, y) in cols for z in range(z0, z1 + 1))
                visible_objects.append(VisibleObject(obj.object_id, voxels))
        return Observation(step=step, pose=self.pose, visible_cells=visible,
                           visible_objects=tuple(visible_objects))

    def shortest_path_length(self, start: Cell, region: set[Cell] | frozenset[Cell]) -> int | None:
        """Minimal 4-connected obstacle-free path length to any free region cell."""
        if not self.scene.is_free(start):
            return None
        if start in region:
            return 0
        seen = {start}
        queue = deque([(start, 0)])
        while queue:
            (x, y), dist = queue.popleft()
            for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if nb in seen or not self.scene.is_free(nb):
                    continue
                if nb in region:
                    return dist + 1
                seen.add(nb)
                queue.append((nb, dist + 1))
        return None

    def distance_to_nearest(self, cell: Cell, label: str) -> float:
        """Euclidean distance from cell to the nearest footprint cell of any instance of label."""
        best = math.inf
        for obj in self.scene.instances_of(label):
            for (x, y) in obj.footprint:
                best = min(best, math.hypot(x - cell[0], y - cell[1]))
        return best

    def success_region(self, label: str, radius: float) -> set[Cell]:
        """Free cells within radius of any instance of label (the stop-zone for success)."""
        region: set[Cell] = set()
        r = int(math.ceil(radius))
        for obj in self.scene.instances_of(label):
            for (x, y) in obj.footprint:
                for dx in range(-r, r + 1):
                    for dy in range(-r, r + 1):
                        if dx * dx + dy * dy <= radius * radius:
                            cell = (x + dx, y + dy)
                            if self.scene.is_free(cell):
                                region.add(cell)
        return region


# ---------------------------------------------------------------------------
# Scene / episode file format
#
#   # comment
#   scene: <name>
#   cell_size: <float>
#   map:
#   <rows of '#' (wall) and '.' (free); first row is the northernmost>
#   endmap
#   room: <x0> <y0> <x1> <y1> <name...>          (half-open bounds)
#   object: <id>
#     label: <text>
#     cells: <x,y> <x,y> ...
#     z: <z_min> <z_max>
#     attrs: <a> <b> ...                          (optional)
#     on: <receptacle id>                         (optional)
#   endobject
#
# Episode files:
#   episode: <name>
#     scene: <path relative to this file>
#     start: <x> <y> <heading>
#     target: <label...>
#     budget: <int>                               (optional, default 500)
#     success_radius: <float>                     (optional, default 2)
#   endepisode
# ---------------------------------------------------------------------------


def parse_scene(text: str, name: str = "scene") -> GridScene:
    lines = text.splitlines()
    scene_name = name
    cell_size = 0.25
    rows: list[str] = []
    rooms: list[Room] = []
    objects: list[ObjectInstance] = []
    i = 0
    in_map = False
    while i < len(lines):
        raw = lines[i]
        line = raw.strip()
        i += 1
        if in_map:
            if line == "endmap":
                in_map = False
            else:
                rows.append(raw.rstrip("\n"))
            continue
        if not line or line.startswith("#"):
            continue
        if line.startswith("scene:"):
            scene_name = line.split(":", 1)[1].strip()
        elif line.startswith("cell_size:"):
            cell_size = float(line.split(":", 1)[1])
        elif line == "map:":
            in_map = True
        elif line.startswith("room:"):
            parts = line.split(":", 1)[1].split()
            if len(parts) < 5:
                raise SceneFormatError(f"bad room line: {line}")
            x0, y0, x1, y1 = (int(p) for p in parts[:4])
            rooms.append(Room(" ".join(parts[4:]), (x0, y0, x1, y1)))
        elif line.startswith("object:"):
            obj_id = line.split(":", 1)[1].strip()
            fields: dict[str, str] = {}
            while i < len(lines):
                inner = lines[i].strip()
                i += 1
                if inner == "endobject":
                    break
                if not inner or inner.startswith("#"):
                    continue
                if ":" not in inner:
                    raise SceneFormatError(f"bad object field: {inner}")
                key, value = inner.split(":", 1)
                fields[key.strip()] = value.strip()
            else:
                raise SceneFormatError(f"object {obj_id}: missing endobject")
            try:
                cells = frozenset(
                    (int(c.split(",")[0]), int(c.split(",")[1])) for c in fields["cells"].split()
                )
                z0, z1 = (int(p) for p in fields["z"].split())
            except (KeyError, ValueError, IndexError) as exc:
                raise SceneFormatError(f"object {obj_id}: {exc}") from exc
            objects.append(ObjectInstance(
                object_id=obj_id,
                label=fields.get("label", obj_id),
                footprint=cells,
                height_band=(z0, z1),
                attributes=tuple(fields["attrs"].split()) if fields.get("attrs") else (),
                on_receptacle=fields.get("on") or None,
            ))
        else:
            raise SceneFormatError(f"unrecognized line: {line}")
    if in_map:
        raise SceneFormatError("map block not closed with endmap")
    if not rows:
        raise SceneFormatError("scene has no map block")
    width = max(len(r) for r in rows)
    height = len(rows)
    walls = set()
    for row_idx, row in enumerate(rows):
        y = height - 1 - row_idx
        for x in range(width):
            ch = row[x] if x < len(row) else "#"
            if ch == "#":
                walls.add((x, y))
            elif ch != ".":
                raise SceneFormatError(f"bad map char {ch!r} at row {row_idx}")
    scene = GridScene(
        name=scene_name, width=width, height=height,
        walls=frozenset(walls), rooms=tuple(rooms), objects=tuple(objects),
        cell_size=cell_size,
    )
    scene.validate()
    return scene


def load_scene(path: str | Path) -> GridScene:
    path = Path(path)
    return parse_scene(path.read_text(), name=path.stem)


def parse_episodes(text: str, base_dir: str | Path = ".") -> list[EpisodeSpec]:
    base = Path(base_dir)
    episodes: list[EpisodeSpec] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if not line.startswith("episode:"):
            raise SceneFormatError(f"unrecognized line in episode file: {line}")
        ep_name = line.split(":", 1)[1].strip()
        fields: dict[str, str] = {}
        while i < len(lines):
            inner = lines[i].strip()
            i += 1
            if inner == "endepisode":
                break
            if not inner or inner.startswith("#"):
                continue
            key, value = inner.split(":", 1)
            fields[key.strip()] = value.strip()
        else:
            raise SceneFormatError(f"episode {ep_name}: missing endepisode")
        try:
            sx, sy, heading = fields["start"].split()
            episodes.append(EpisodeSpec(
                name=ep_name,
                scene_path=str(base / fields["scene"]),
                start=Pose((int(sx), int(sy)), heading),
                target_label=fields["target"],
                step_budget=int(fields.get("budget", DEFAULT_STEP_BUDGET)),
                success_radius=float(fields.get("success_radius", DEFAULT_SUCCESS_RADIUS)),
            ))
        except (KeyError, ValueError) as exc:
            raise SceneFormatError(f"episode {ep_name}: {exc}") from exc
    return episodes


def load_episodes(path: str | Path) -> list[EpisodeSpec]:
    path = Path(path)
    return parse_episodes(path.read_text(), base_dir=path.parent)
