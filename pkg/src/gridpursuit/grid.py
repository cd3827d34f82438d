"""Occupancy-grid world model: map documents, coordinate transforms, line of sight.

Conventions:
    - occupancy[row, col] is True for obstacles, False for free space
    - row 0 is the top line of a map document
    - world x grows with col, world y grows with row; `origin` is the world
      position of the (0, 0) cell corner
    - '#' marks an occupied cell, '.' a free cell in the ASCII format
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_RESOLUTION = 0.1


class MapFormatError(ValueError):
    """Raised for malformed map documents."""


class OutOfBoundsError(ValueError):
    """Raised when a world point or cell lies outside the map."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, math.tau)
    if t <= -math.pi:
        t += math.tau
    return t


@dataclass(frozen=True, order=True)
class Cell:
    row: int
    col: int


@dataclass(frozen=True)
class Pose:
    """Planar agent state (x, y, theta); theta is normalized to (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


class GridMap:
    """Immutable binary occupancy grid.

    Derived structures (free-cell arrays, obstacle boxes, inflated masks,
    the free-space adjacency graph) are built lazily and cached, which is
    safe because the occupancy array is frozen at construction.
    """

    def __init__(self, occupancy: np.ndarray, resolution: float = DEFAULT_RESOLUTION,
                 origin: tuple[float, float] = (0.0, 0.0)):
        occ = np.asarray(occupancy, dtype=bool)
        if occ.ndim != 2:
            raise MapFormatError("occupancy must be 2-D")
        if occ.shape[0] < 1 or occ.shape[1] < 1:
            raise MapFormatError("map must have at least one row and one column")
        if not resolution > 0:
            raise MapFormatError(f"resolution must be positive, got {resolution}")
        occ = occ.copy()
        occ.setflags(write=False)
        self.occupancy = occ
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self._cache: dict = {}

    # -- basic geometry -------------------------------------------------

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the map rectangle in world units."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution)

    def in_bounds_point(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.extent
        return x0 <= x < x1 and y0 <= y < y1

    def in_bounds_cell(self, cell: Cell) -> bool:
        return 0 <= cell.row < self.height and 0 <= cell.col < self.width

    def world_to_cell(self, x: float, y: float) -> Cell:
        if not self.in_bounds_point(x, y):
            raise OutOfBoundsError(f"point ({x}, {y}) outside map extent {self.extent}")
        col = min(int((x - self.origin[0]) / self.resolution), self.width - 1)
        row = min(int((y - self.origin[1]) / self.resolution), self.height - 1)
        return Cell(row, col)

    def cell_to_world(self, cell: Cell) -> tuple[float, float]:
        if not self.in_bounds_cell(cell):
            raise OutOfBoundsError(f"cell {cell} outside {self.height}x{self.width} grid")
        return (self.origin[0] + (cell.col + 0.5) * self.resolution,
                self.origin[1] + (cell.row + 0.5) * self.resolution)

    # -- occupancy queries ----------------------------------------------

    def is_occupied(self, cell: Cell) -> bool:
        if not self.in_bounds_cell(cell):
            raise OutOfBoundsError(f"cell {cell} outside {self.height}x{self.width} grid")
        return bool(self.occupancy[cell.row, cell.col])

    def is_free(self, cell: Cell) -> bool:
        return not self.is_occupied(cell)

    def is_free_point(self, x: float, y: float) -> bool:
        """True if (x, y) is in bounds and its cell is free."""
        if not self.in_bounds_point(x, y):
            return False
        c = self.world_to_cell(x, y)
        return not self.occupancy[c.row, c.col]

    def free_cells(self) -> list[Cell]:
        return [Cell(int(r), int(c)) for r, c in zip(*np.nonzero(~self.occupancy))]

    def occupied_cells(self) -> list[Cell]:
        return [Cell(int(r), int(c)) for r, c in zip(*np.nonzero(self.occupancy))]

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.occupancy

    def free_cell_array(self) -> np.ndarray:
        """(N, 2) array of free (row, col) pairs in row-major order; cached."""
        if "free_rc" not in self._cache:
            rc = np.argwhere(~self.occupancy)
            rc.setflags(write=False)
            self._cache["free_rc"] = rc
        return self._cache["free_rc"]

    def free_cell_centers(self) -> np.ndarray:
        """(N, 2) array of (x, y) centers matching free_cell_array(); cached."""
        if "free_xy" not in self._cache:
            rc = self.free_cell_array()
            xy = np.empty_like(rc, dtype=float)
            xy[:, 0] = self.origin[0] + (rc[:, 1] + 0.5) * self.resolution
            xy[:, 1] = self.origin[1] + (rc[:, 0] + 0.5) * self.resolution
            xy.setflags(write=False)
            self._cache["free_xy"] = xy
        return self._cache["free_xy"]

    def occupied_boxes(self) -> tuple[np.ndarray, ...]:
        """World-coordinate rectangles (x0, y0, x1, y1) of occupied cells; cached."""
        if "boxes" not in self._cache:
            rc = np.argwhere(self.occupancy)
            res = self.resolution
            x0 = self.origin[0] + rc[:, 1] * res
            y0 = self.origin[1] + rc[:, 0] * res
            boxes = (x0, y0, x0 + res, y0 + res)
            for b in boxes:
                b.setflags(write=False)
            self._cache["boxes"] = boxes
        return self._cache["boxes"]

    def is_connected(self) -> bool:
        """True if the free cells form a single 8-connected component."""
        from scipy import ndimage

        free = ~self.occupancy
        if not free.any():
            return False
        _, n = ndimage.label(free, structure=np.ones((3, 3), dtype=bool))
        return n == 1

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        rows = ["".join("#" if v else "." for v in row) for row in self.occupancy]
        return f"resolution {self.resolution!r}\n" + "\n".join(rows) + "\n"

    def __eq__(self, other) -> bool:
        return (isinstance(other, GridMap)
                and self.resolution == other.resolution
                and self.origin == other.origin
                and self.occupancy.shape == other.occupancy.shape
                and bool(np.array_equal(self.occupancy, other.occupancy)))

    def __repr__(self) -> str:
        occ = int(self.occupancy.sum())
        return f"GridMap({self.height}x{self.width} @ {self.resolution} m/cell, {occ} occupied)"


def load_map(text: str) -> GridMap:
    """Parse the ASCII map format: optional `resolution <float>` header, then
    rows of '#' (occupied) and '.' (free)."""
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    resolution = DEFAULT_RESOLUTION
    if lines and lines[0].lstrip().startswith("resolution"):
        parts = lines[0].split()
        if len(parts) != 2:
            raise MapFormatError(f"bad header line: {lines[0]!r}")
        try:
            resolution = float(parts[1])
        except ValueError as exc:
            raise MapFormatError(f"bad resolution value: {parts[1]!r}") from exc
        lines = lines[1:]
    if not lines:
        raise MapFormatError("map document has no grid rows")
    width = len(lines[0])
    grid = np.empty((len(lines), width), dtype=bool)
    for r, line in enumerate(lines):
        if len(line) != width:
            raise MapFormatError(f"ragged row {r}: length {len(line)} != {width}")
        for c, ch in enumerate(line):
            if ch == "#":
                grid[r, c] = True
            elif ch == ".":
                grid[r, c] = False
            else:
                raise MapFormatError(f"unknown character {ch!r} at row {r}, col {c}")
    return GridMap(grid, resolution=resolution)


def load_raster_map(image_path, resolution: float, origin: tuple[float, float] = (0.0, 0.0),
                    occupied_threshold: int = 128) -> GridMap:
    """Load an 8-bit grayscale raster; pixels with value < threshold are occupied."""
    from PIL import Image

    img = Image.open(image_path).convert("L")
    arr = np.asarray(img)
    return GridMap(arr < occupied_threshold, resolution=resolution, origin=origin)


def load_map_bundle(metadata_path) -> GridMap:
    """Load a raster map through its YAML sidecar (map-server style).

    Recognized keys: image (path relative to the sidecar), resolution,
    origin ([x, y] or [x, y, yaw] with yaw 0), threshold (default 128).
    """
    import pathlib

    import yaml

    meta_path = pathlib.Path(metadata_path)
    with open(meta_path) as fh:
        meta = yaml.safe_load(fh)
    for key in ("image", "resolution"):
        if key not in meta:
            raise MapFormatError(f"sidecar missing required key {key!r}")
    origin = meta.get("origin", [0.0, 0.0])
    if len(origin) > 2 and float(origin[2]) != 0.0:
        raise MapFormatError("rotated map origins are not supported")
    return load_raster_map(meta_path.parent / meta["image"],
                           resolution=float(meta["resolution"]),
                           origin=(float(origin[0]), float(origin[1])),
                           occupied_threshold=int(meta.get("threshold", 128)))


# -- line of sight ------------------------------------------------------


def _segment_hits_any_box(ax, ay, bx, by, x0, y0, x1, y1) -> bool:
    """True if the closed segment a->b touches any of the closed boxes.

    Slab method. Touching an edge or corner counts as a hit, which gives
    supercover semantics: every cell the segment touches is considered.
    """
    if len(x0) == 0:
        return False
    tmin = np.zeros(len(x0))
    tmax = np.ones(len(x0))
    for d, p, lo, hi in ((bx - ax, ax, x0, x1), (by - ay, ay, y0, y1)):
        if d != 0.0:
            t1 = (lo - p) / d
            t2 = (hi - p) / d
            np.maximum(tmin, np.minimum(t1, t2), out=tmin)
            np.minimum(tmax, np.maximum(t1, t2), out=tmax)
        else:
            outside = (p < lo) | (p > hi)
            tmax[outside] = -np.inf
    return bool(np.any(tmin <= tmax))


def _segments_hit_any_box(ax: float, ay: float, tx: np.ndarray, ty: np.ndarray,
                          boxes: tuple[np.ndarray, ...]) -> np.ndarray:
    """Vectorized variant for S segments sharing origin (ax, ay) against M boxes.

    Returns a bool array of length S: True where the segment touches a box.
    """
    x0, y0, x1, y1 = boxes
    if len(x0) == 0:
        return np.zeros(len(tx), dtype=bool)
    tx = tx[:, None]
    ty = ty[:, None]
    tmin = np.zeros((tx.shape[0], len(x0)))
    tmax = np.ones_like(tmin)
    for d, p, lo, hi in ((tx - ax, ax, x0, x1), (ty - ay, ay, y0, y1)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - p) / d
            t2 = (hi - p) / d
        tlo = np.minimum(t1, t2)
        thi = np.maximum(t1, t2)
        degenerate = (d == 0.0)
        if degenerate.any():
            # zero-extent axis: the interval is everything if p lies inside
            # [lo, hi], empty otherwise (assign after the min/max sort)
            inside = (lo <= p) & (p <= hi)
            tlo = np.where(degenerate, np.where(inside, -np.inf, np.inf), tlo)
            thi = np.where(degenerate, np.where(inside, np.inf, -np.inf), thi)
        np.maximum(tmin, tlo, out=tmin)
        np.minimum(tmax, thi, out=tmax)
    return np.any(tmin <= tmax, axis=1)


def _boxes_near_segment(grid: GridMap, ax, ay, bx, by) -> tuple[np.ndarray, ...]:
    x0, y0, x1, y1 = grid.occupied_boxes()
    lo_x, hi_x = (ax, bx) if ax <= bx else (bx, ax)
    lo_y, hi_y = (ay, by) if ay <= by else (by, ay)
    keep = (x1 >= lo_x) & (x0 <= hi_x) & (y1 >= lo_y) & (y0 <= hi_y)
    return (x0[keep], y0[keep], x1[keep], y1[keep])


def line_of_sight(grid: GridMap, a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True iff the segment a->b touches no occupied cell (supercover check)."""
    ax, ay = a
    bx, by = b
    for x, y in ((ax, ay), (bx, by)):
        if not grid.in_bounds_point(x, y):
            raise OutOfBoundsError(f"point ({x}, {y}) outside map extent {grid.extent}")
    boxes = _boxes_near_segment(grid, ax, ay, bx, by)
    return not _segment_hits_any_box(ax, ay, bx, by, *boxes)


def line_of_sight_to_many(grid: GridMap, origin: tuple[float, float],
                          targets: np.ndarray) -> np.ndarray:
    """line_of_sight from one origin to an (S, 2) array of target points.

    Returns a bool array of length S. Same geometry as line_of_sight.
    """
    ax, ay = origin
    if not grid.in_bounds_point(ax, ay):
        raise OutOfBoundsError(f"point ({ax}, {ay}) outside map extent {grid.extent}")
    targets = np.asarray(targets, dtype=float)
    if targets.size == 0:
        return np.zeros(0, dtype=bool)
    lo_x = min(ax, float(targets[:, 0].min()))
    hi_x = max(ax, float(targets[:, 0].max()))
    lo_y = min(ay, float(targets[:, 1].min()))
    hi_y = max(ay, float(targets[:, 1].max()))
    x0, y0, x1, y1 = grid.occupied_boxes()
    keep = (x1 >= lo_x) & (x0 <= hi_x) & (y1 >= lo_y) & (y0 <= hi_y)
    boxes = (x0[keep], y0[keep], x1[keep], y1[keep])
    return ~_segments_hit_any_box(ax, ay, targets[:, 0], targets[:, 1], boxes)


# -- builtin environments ------------------------------------------------

_BUILTIN_SIZE = 80


def _empty_walled(n: int) -> np.ndarray:
    occ = np.zeros((n, n), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    return occ


def _complex_hall() -> np.ndarray:
    # winding hall: two partitions with doorways at opposite ends,
    # every wall cell attached to the boundary (no scattered obstacles)
    occ = _empty_walled(_BUILTIN_SIZE)
    occ[26, 0:60] = True
    occ[53, 20:80] = True
    return occ


def _enclosed_room() -> np.ndarray:
    # room with five scattered blocks: enough cover to duck behind, small
    # enough that circling one is not a permanent refuge
    occ = _empty_walled(_BUILTIN_SIZE)
    for r0, c0 in ((14, 16), (14, 54), (36, 35), (56, 16), (56, 54)):
        occ[r0:r0 + 10, c0:c0 + 10] = True
    return occ


def _brick_room() -> np.ndarray:
    # a long free-standing brick slab splitting the hall, with corner blocks
    # lining the two halves
    occ = _empty_walled(_BUILTIN_SIZE)
    occ[36:44, 19:61] = True
    for r0, r1 in ((10, 20), (60, 70)):
        occ[r0:r1, 12:22] = True
        occ[r0:r1, 58:68] = True
    return occ


def builtin_maps() -> dict[str, GridMap]:
    """The three stock environments, each connected, 80x80 at 0.1 m/cell."""
    return {
        "complex_hall": GridMap(_complex_hall()),
        "enclosed_room": GridMap(_enclosed_room()),
        "brick_room": GridMap(_brick_room()),
    }


def get_map(map_id: str) -> GridMap:
    maps = builtin_maps()
    if map_id not in maps:
        raise KeyError(f"unknown builtin map {map_id!r}; have {sorted(maps)}")
    return maps[map_id]
