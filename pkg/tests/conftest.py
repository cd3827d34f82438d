import heapq
import math

import numpy as np
import pytest

from gridpursuit.grid import GridMap, Pose
from gridpursuit.visibility import compute_visibility


def random_grid(rng: np.random.Generator, height=40, width=40, p_obstacle=0.12,
                resolution=0.1) -> GridMap:
    """Random map with a clear border margin so poses near edges stay free."""
    occ = rng.random((height, width)) < p_obstacle
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    occ[1:3, 1:-1] = False
    occ[-3:-1, 1:-1] = False
    return GridMap(occ, resolution=resolution)


def random_free_pose(rng: np.random.Generator, grid: GridMap) -> Pose:
    centers = grid.free_cell_centers()
    i = int(rng.integers(len(centers)))
    off = rng.uniform(-0.4, 0.4, 2) * grid.resolution
    return Pose(centers[i, 0] + off[0], centers[i, 1] + off[1],
                rng.uniform(-math.pi, math.pi))


def grid_travel_distances(grid: GridMap, start) -> dict:
    """Plain heapq Dijkstra over free cells, cell units; oracle-side only."""
    dist = {(start.row, start.col): 0.0}
    heap = [(0.0, start.row, start.col)]
    done = set()
    while heap:
        d, r, c = heapq.heappop(heap)
        if (r, c) in done:
            continue
        done.add((r, c))
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < grid.height and 0 <= nc < grid.width):
                    continue
                if grid.occupancy[nr, nc]:
                    continue
                nd = d + (math.sqrt(2.0) if dr and dc else 1.0)
                if nd < dist.get((nr, nc), math.inf):
                    dist[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, nr, nc))
    return dist


def brute_force_escape_goal(grid, pursuer, evader, sensor, region=None, r_exclude=0.5):
    """Independent escape-point minimizer: python Dijkstra effort, direct
    candidate scan, ratios rounded to 1e-9, row-major tie-break. Falls back
    to the free cell farthest from the pursuer when no candidate exists."""
    if region is None:
        region = compute_visibility(grid, pursuer, sensor)
    dist = grid_travel_distances(grid, grid.world_to_cell(evader.x, evader.y))
    best = None
    fallback = None
    for cell in grid.free_cells():
        x, y = grid.cell_to_world(cell)
        d_p = math.hypot(x - pursuer.x, y - pursuer.y)
        if fallback is None or d_p > fallback[0]:
            fallback = (d_p, cell)
        if cell in region.cells:
            continue
        if math.hypot(x - evader.x, y - evader.y) <= r_exclude:
            continue
        if (cell.row, cell.col) not in dist or d_p <= 0:
            continue
        effort = dist[(cell.row, cell.col)] * grid.resolution
        key = (round(effort / d_p, 9), cell.row * grid.width + cell.col)
        if best is None or key < best[0]:
            best = (key, cell)
    if best is None:
        return fallback[1], True
    return best[1], False


@pytest.fixture
def rng():
    return np.random.default_rng(20250811)
