"""Grid navigation: A* planning on inflated maps, unicycle integration,
synthetic pinhole projection, and the reactive image-centering controller.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .grid import Cell, GridMap, Pose, normalize_angle
from .visibility import SensorModel

SQRT2 = math.sqrt(2.0)

# 8-connected moves in fixed exploration order; (drow, dcol, diagonal?)
_MOVES = ((-1, -1, True), (-1, 0, False), (-1, 1, True),
          (0, -1, False), (0, 1, False),
          (1, -1, True), (1, 0, False), (1, 1, True))


class NoPathError(RuntimeError):
    """Raised when no collision-free path joins start and goal."""


class PlanningError(ValueError):
    """Raised for start/goal positions that are blocked after inflation."""


@dataclass(frozen=True)
class ControlCommand:
    v: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class ImageObservation:
    """Synthetic detector output: bounding box on a w_i-pixel image row
    plus the mean range to the target."""

    x_b: float
    w_b: float
    w_i: int
    depth: float

    def __post_init__(self):
        if self.w_i <= 0:
            raise ValueError("image width must be positive")
        if not (0 <= self.w_b <= self.w_i):
            raise ValueError("box width must lie within the image")

    @property
    def center(self) -> float:
        return self.x_b + self.w_b / 2


@dataclass(frozen=True)
class Path:
    """Cell-center waypoint chain; consecutive cells are 8-adjacent."""

    waypoints: tuple[tuple[float, float], ...]
    cells: tuple[Cell, ...]

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def step_counts(self) -> tuple[int, int]:
        """(straight, diagonal) step counts along the chain."""
        straight = diagonal = 0
        for a, b in zip(self.cells, self.cells[1:]):
            if a.row != b.row and a.col != b.col:
                diagonal += 1
            else:
                straight += 1
        return straight, diagonal

    @property
    def cost(self) -> float:
        """Path cost in cell units: straight steps cost 1, diagonal sqrt(2)."""
        s, d = self.step_counts
        return s + d * SQRT2


def clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def clamp_command(cmd: ControlCommand, v_max: float, omega_max: float) -> ControlCommand:
    return ControlCommand(clamp(cmd.v, -v_max, v_max), clamp(cmd.omega, -omega_max, omega_max))


# -- obstacle inflation ---------------------------------------------------


def inflated_free_mask(grid: GridMap, radius: float) -> np.ndarray:
    """Free cells whose center keeps a disc of `radius` clear of obstacles.

    A cell is blocked if its center is strictly closer than `radius` to any
    occupied cell rectangle; cached per (map, radius).
    """
    key = ("inflate", round(float(radius), 9))
    if key in grid._cache:
        return grid._cache[key]
    if radius <= 0:
        mask = ~grid.occupancy
    else:
        res = grid.resolution
        reach = int(math.ceil(radius / res + 0.5))
        offs = []
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                gap_r = max(abs(dr) - 0.5, 0.0) * res
                gap_c = max(abs(dc) - 0.5, 0.0) * res
                if math.hypot(gap_r, gap_c) < radius:
                    offs.append((dr, dc))
        blocked = np.zeros_like(grid.occupancy)
        occ_r, occ_c = np.nonzero(grid.occupancy)
        h, w = grid.occupancy.shape
        for dr, dc in offs:
            rr = occ_r + dr
            cc = occ_c + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            blocked[rr[ok], cc[ok]] = True
        mask = ~grid.occupancy & ~blocked
    mask.setflags(write=False)
    grid._cache[key] = mask
    return mask


def _planner_arrays(grid: GridMap, radius: float):
    """Flat-index neighbor table over the inflated-free mask; cached."""
    key = ("planner", round(float(radius), 9))
    if key in grid._cache:
        return grid._cache[key]
    free = inflated_free_mask(grid, radius)
    h, w = free.shape
    neighbors = []
    for dr, dc, diag in _MOVES:
        shifted = np.zeros((h, w), dtype=bool)
        src_r = slice(max(0, -dr), min(h, h - dr))
        src_c = slice(max(0, -dc), min(w, w - dc))
        dst_r = slice(max(0, dr), min(h, h + dr))
        dst_c = slice(max(0, dc), min(w, w + dc))
        shifted[src_r, src_c] = free[dst_r, dst_c]
        # mask[i] true => cell i and its (dr, dc) neighbor are both traversable
        neighbors.append((dr * w + dc, SQRT2 if diag else 1.0, (free & shifted).ravel()))
    grid._cache[key] = (free, neighbors)
    return grid._cache[key]


def plan_path(grid: GridMap, start: tuple[float, float], goal: tuple[float, float],
              inflation_radius: float = 0.2) -> Path:
    """Minimal-cost 8-connected path on the inflated map (A*, octile heuristic).

    Ties on f are expanded lower (row, col) first, so the returned path is
    deterministic. Raises PlanningError if an endpoint is blocked after
    inflation, NoPathError if the goal is unreachable.
    """
    s = grid.world_to_cell(*start)
    g = grid.world_to_cell(*goal)
    free, neighbors = _planner_arrays(grid, inflation_radius)
    for name, cell in (("start", s), ("goal", g)):
        if not free[cell.row, cell.col]:
            raise PlanningError(f"{name} cell {cell} is blocked after inflation by {inflation_radius} m")
    w = grid.width
    s_idx = s.row * w + s.col
    g_idx = g.row * w + g.col
    if s_idx == g_idx:
        return Path((grid.cell_to_world(s),), (s,))

    def h(idx: int) -> float:
        dr = abs(idx // w - g.row)
        dc = abs(idx % w - g.col)
        lo, hi = (dr, dc) if dr < dc else (dc, dr)
        return (hi - lo) + lo * SQRT2

    g_cost = {s_idx: 0.0}
    parent = {s_idx: -1}
    open_heap = [(h(s_idx), s.row, s.col, s_idx)]
    closed = set()
    while open_heap:
        _, _, _, idx = heapq.heappop(open_heap)
        if idx in closed:
            continue
        if idx == g_idx:
            cells = []
            while idx != -1:
                cells.append(Cell(idx // w, idx % w))
                idx = parent[idx]
            cells.reverse()
            return Path(tuple(grid.cell_to_world(c) for c in cells), tuple(cells))
        closed.add(idx)
        base = g_cost[idx]
        for off, step, ok in neighbors:
            if not ok[idx]:
                continue
            nxt = idx + off
            ng = base + step
            if ng < g_cost.get(nxt, math.inf):
                g_cost[nxt] = ng
                parent[nxt] = idx
                heapq.heappush(open_heap, (ng + h(nxt), nxt // w, nxt % w, nxt))
    raise NoPathError(f"no path from {s} to {g} at inflation {inflation_radius} m")


# -- kinematics -----------------------------------------------------------


def disc_collides(grid: GridMap, x: float, y: float, radius: float) -> bool:
    """True if a disc at (x, y) overlaps an occupied cell or leaves the map."""
    x0, y0, x1, y1 = grid.extent
    if x - radius < x0 or x + radius > x1 or y - radius < y0 or y + radius > y1:
        return True
    bx0, by0, bx1, by1 = grid.occupied_boxes()
    near = (bx1 >= x - radius) & (bx0 <= x + radius) & (by1 >= y - radius) & (by0 <= y + radius)
    if not near.any():
        return False
    cx = np.clip(x, bx0[near], bx1[near])
    cy = np.clip(y, by0[near], by1[near])
    return bool(np.any((cx - x) ** 2 + (cy - y) ** 2 < radius * radius))


def step_unicycle(pose: Pose, cmd: ControlCommand, dt: float, grid: GridMap,
                  radius: float = 0.2) -> Pose:
    """Rotate-then-translate unicycle step with a swept-disc collision clamp.

    theta' = theta + omega*dt, then the translation v*dt is applied along
    theta'. If the swept disc would overlap an obstacle the position reverts
    to its pre-move value while the new heading is kept.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    theta = normalize_angle(pose.theta + cmd.omega * dt)
    dist = cmd.v * dt
    if dist == 0.0:
        return Pose(pose.x, pose.y, theta)
    nx = pose.x + dist * math.cos(theta)
    ny = pose.y + dist * math.sin(theta)
    step = max(grid.resolution / 2, 1e-6)
    n_checks = max(1, int(math.ceil(abs(dist) / step)))
    for i in range(1, n_checks + 1):
        t = i / n_checks
        if disc_collides(grid, pose.x + t * (nx - pose.x), pose.y + t * (ny - pose.y), radius):
            return Pose(pose.x, pose.y, theta)
    return Pose(nx, ny, theta)


# -- synthetic camera and controllers ---------------------------------------


def project_to_image(pursuer: Pose, evader: Pose, sensor: SensorModel,
                     w_i: int = 640, target_radius: float = 0.25) -> ImageObservation:
    """Project the evader onto the pursuer's single-row pinhole image.

    Camera convention: image x grows to the right of the optical axis, so a
    target at counter-clockwise (positive) bearing beta lands left of image
    center, u = (w_i/2)(1 - tan(beta)/tan(fov/2)). The box width comes from
    the target's angular subtense. Requires the evader inside the sensor's
    range and wedge.
    """
    dx = evader.x - pursuer.x
    dy = evader.y - pursuer.y
    depth = math.hypot(dx, dy)
    beta = normalize_angle(math.atan2(dy, dx) - pursuer.theta)
    if not (sensor.dist_min <= depth <= sensor.dist_max):
        raise ValueError(f"target at depth {depth} outside sensor range")
    if not (sensor.theta_min_camera <= beta <= sensor.theta_max_camera):
        raise ValueError(f"target at bearing {beta} outside sensor wedge")
    half_tan = math.tan(sensor.fov / 2)
    u = (w_i / 2) * (1 - math.tan(beta) / half_tan)
    alpha = math.atan(target_radius / depth)
    w_b = clamp(w_i * math.tan(alpha) / half_tan, 1.0, float(w_i))
    return ImageObservation(x_b=u - w_b / 2, w_b=w_b, w_i=w_i, depth=depth)


def reactive_control(obs: ImageObservation, v_max: float, standoff: float = 1.5,
                     k_omega: float = 1.0, k_v: float = 0.8,
                     omega_max: float = math.pi / 2) -> ControlCommand:
    """Keep the box centered and the range near the standoff distance.

    target_offset_x = x_b + w_b/2 - w_i/2; positive offset means the target
    sits right of image center, so the command turns clockwise (omega < 0).
    """
    target_offset_x = obs.x_b + obs.w_b / 2 - obs.w_i / 2
    omega = clamp(-k_omega * target_offset_x / (obs.w_i / 2), -omega_max, omega_max)
    v = clamp(k_v * (obs.depth - standoff), 0.0, v_max)
    return ControlCommand(v, omega)


def follow_path(pose: Pose, path: Path, v_max: float, dt: float,
                lookahead: float = 0.3, k_omega: float = 1.0,
                omega_max: float = math.pi / 2, goal_tolerance: float = 0.05,
                conservative: bool = False) -> ControlCommand:
    """Pure-pursuit style tracking of a waypoint chain.

    Aims at the first waypoint beyond the lookahead distance (scanning
    forward from the nearest waypoint), turning proportionally to the
    bearing error and scaling speed down by its cosine. In conservative
    mode the target is the waypoint right after the nearest one and speed
    is capped to reach it exactly: a short hop back onto the path spine for
    callers whose last lookahead chord got collision-clamped.
    """
    if len(path) == 0:
        raise ValueError("cannot follow an empty path")
    gx, gy = path.waypoints[-1]
    if math.hypot(gx - pose.x, gy - pose.y) <= goal_tolerance:
        return ControlCommand(0.0, 0.0)
    dists = [math.hypot(wx - pose.x, wy - pose.y) for wx, wy in path.waypoints]
    start = min(range(len(dists)), key=dists.__getitem__)
    if conservative:
        idx = min(start + 1, len(path.waypoints) - 1)
        target = path.waypoints[idx]
        limit = dists[idx] / dt
    else:
        target = path.waypoints[-1]
        for i in range(start, len(path.waypoints)):
            if dists[i] > lookahead:
                target = path.waypoints[i]
                break
        limit = dists[-1] / dt  # never overshoot the end of the path
    err = normalize_angle(math.atan2(target[1] - pose.y, target[0] - pose.x) - pose.theta)
    omega = clamp(k_omega * err, -omega_max, omega_max)
    v = min(max(math.cos(err), 0.0) * v_max, limit)
    return ControlCommand(v, omega)
