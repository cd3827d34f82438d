"""Pursuer visibility: sampled ray casting with occlusion, plus an exact
per-cell oracle and a crisp point-detection test.

The sampled sweep marches rays across the sensor wedge and keeps every cell a
sample lands in before the ray is blocked; a final exact line-of-sight check
on cell centers guarantees no occluded cell survives. The oracle classifies
each free cell directly from range, bearing and center line of sight, and is
the independent reference the sweep is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (Cell, GridMap, OutOfBoundsError, Pose, line_of_sight,
                   line_of_sight_to_many, normalize_angle)


class InvalidPoseError(ValueError):
    """Raised when a sensing pose sits inside an obstacle or out of bounds."""


@dataclass(frozen=True)
class SensorModel:
    """Forward-facing wedge sensor: total angular width `fov`, radial range
    [dist_min, dist_max], and the sweep step sizes."""

    fov: float = math.pi / 3
    dist_min: float = 0.45
    dist_max: float = 4.0
    angle_step: float = 0.0016
    distance_step: float = 0.05
    detection_failure_prob: float = 0.0

    def __post_init__(self):
        if not self.fov > 0:
            raise ValueError(f"fov must be positive, got {self.fov}")
        if not (0 <= self.dist_min < self.dist_max):
            raise ValueError(f"need 0 <= dist_min < dist_max, got [{self.dist_min}, {self.dist_max}]")
        if not (self.angle_step > 0 and self.distance_step > 0):
            raise ValueError("angle_step and distance_step must be positive")
        if not (0.0 <= self.detection_failure_prob <= 1.0):
            raise ValueError("detection_failure_prob must be in [0, 1]")

    @property
    def theta_min_camera(self) -> float:
        return -self.fov / 2

    @property
    def theta_max_camera(self) -> float:
        return self.fov / 2


@dataclass(frozen=True)
class VisibilityRegion:
    """Set of map cells visible from `source_pose` under `sensor`."""

    cells: frozenset[Cell]
    source_pose: Pose
    sensor: SensorModel
    mask: np.ndarray = field(repr=False, compare=False)

    def __contains__(self, cell: Cell) -> bool:
        return cell in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def sorted_cells(self) -> list[tuple[int, int]]:
        """(row, col) pairs in row-major order, the wire/dump format."""
        return sorted((c.row, c.col) for c in self.cells)


def _require_free_pose(grid: GridMap, pose: Pose, who: str) -> None:
    if not grid.in_bounds_point(pose.x, pose.y):
        raise InvalidPoseError(f"{who} pose ({pose.x}, {pose.y}) out of bounds")
    cell = grid.world_to_cell(pose.x, pose.y)
    if grid.occupancy[cell.row, cell.col]:
        raise InvalidPoseError(f"{who} pose ({pose.x}, {pose.y}) inside obstacle cell {cell}")


def compute_visibility(grid: GridMap, pose: Pose, sensor: SensorModel) -> VisibilityRegion:
    """Sampled visibility sweep, occlusion-aware.

    Rays fan from pose.theta + theta_min_camera up to pose.theta +
    theta_max_camera in angle_step increments; each ray is sampled from
    dist_min to dist_max in distance_step increments. A ray contributes no
    samples at or beyond the first occupied cell it enters (leaving the map
    blocks a ray the same way). Cells whose center is not in line of sight
    of the pose are dropped from the result.
    """
    _require_free_pose(grid, pose, "sensor")
    n_angles = max(1, math.ceil(sensor.fov / sensor.angle_step - 1e-12))
    angles = pose.theta + sensor.theta_min_camera + np.arange(n_angles) * sensor.angle_step
    span = sensor.dist_max - sensor.dist_min
    n_dists = int(span / sensor.distance_step + 1e-9) + 1
    dists = sensor.dist_min + np.arange(n_dists) * sensor.distance_step

    px = pose.x + np.cos(angles)[:, None] * dists[None, :]
    py = pose.y + np.sin(angles)[:, None] * dists[None, :]

    res = grid.resolution
    cols = np.floor((px - grid.origin[0]) / res).astype(np.int64)
    rows = np.floor((py - grid.origin[1]) / res).astype(np.int64)
    inbounds = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    blocked = ~inbounds
    safe_rows = np.clip(rows, 0, grid.height - 1)
    safe_cols = np.clip(cols, 0, grid.width - 1)
    blocked |= grid.occupancy[safe_rows, safe_cols]

    # index of the first blocked sample along each ray; samples from there on are dead
    any_blocked = blocked.any(axis=1)
    first_blocked = np.where(any_blocked, blocked.argmax(axis=1), n_dists)
    alive = np.arange(n_dists)[None, :] < first_blocked[:, None]

    if not alive.any():
        return VisibilityRegion(frozenset(), pose, sensor,
                                mask=np.zeros_like(grid.occupancy))

    flat = rows[alive] * grid.width + cols[alive]
    unique = np.unique(flat)
    urows, ucols = np.divmod(unique, grid.width)

    centers = np.empty((len(unique), 2))
    centers[:, 0] = grid.origin[0] + (ucols + 0.5) * res
    centers[:, 1] = grid.origin[1] + (urows + 0.5) * res
    visible = line_of_sight_to_many(grid, pose.xy, centers)

    mask = np.zeros_like(grid.occupancy)
    mask[urows[visible], ucols[visible]] = True
    mask.setflags(write=False)
    cells = frozenset(Cell(int(r), int(c)) for r, c in zip(urows[visible], ucols[visible]))
    return VisibilityRegion(cells, pose, sensor, mask=mask)


def visibility_oracle(grid: GridMap, pose: Pose, sensor: SensorModel) -> set[Cell]:
    """Reference visibility: a free cell is visible iff its center is inside
    the range band and the angular wedge and has line of sight to the pose."""
    _require_free_pose(grid, pose, "sensor")
    centers = grid.free_cell_centers()
    rc = grid.free_cell_array()
    dx = centers[:, 0] - pose.x
    dy = centers[:, 1] - pose.y
    dist = np.hypot(dx, dy)
    in_range = (dist >= sensor.dist_min) & (dist <= sensor.dist_max)
    rel = np.arctan2(dy, dx) - pose.theta
    rel = np.remainder(rel + math.pi, math.tau) - math.pi  # [-pi, pi)
    in_wedge = (rel >= sensor.theta_min_camera - 1e-12) & (rel <= sensor.theta_max_camera + 1e-12)
    if sensor.fov >= math.tau:
        in_wedge[:] = True
    cand = in_range & in_wedge
    result: set[Cell] = set()
    if cand.any():
        vis = line_of_sight_to_many(grid, pose.xy, centers[cand])
        for (r, c), ok in zip(rc[cand], vis):
            if ok:
                result.add(Cell(int(r), int(c)))
    return result


def is_detected(grid: GridMap, pursuer: Pose, evader: Pose, sensor: SensorModel) -> bool:
    """Exact geometric detection of the evader point by the pursuer's sensor."""
    _require_free_pose(grid, pursuer, "pursuer")
    _require_free_pose(grid, evader, "evader")
    dx = evader.x - pursuer.x
    dy = evader.y - pursuer.y
    dist = math.hypot(dx, dy)
    if not (sensor.dist_min <= dist <= sensor.dist_max):
        return False
    if sensor.fov < math.tau:
        rel = normalize_angle(math.atan2(dy, dx) - pursuer.theta)
        if not (sensor.theta_min_camera <= rel <= sensor.theta_max_camera):
            return False
    return line_of_sight(grid, pursuer.xy, evader.xy)
