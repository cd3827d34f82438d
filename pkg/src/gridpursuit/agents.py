"""Behavior policies: random wanderers, the visibility-aware escaping evader,
and the hybrid reactive/filter-driven pursuer.

The smart evader scores every free cell outside the pursuer's visibility
region by travel effort (grid shortest-path distance, so walls count)
divided by straight-line separation from the pursuer, and heads for the
minimizer. The smart pursuer follows reactively while it sees the evader
and chases its particle-filter estimate while it does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .grid import Cell, GridMap, Pose, line_of_sight, normalize_angle
from .particles import (FilterConfig, ParticleSet, estimate, initialize_around,
                        initialize_uniform, maybe_resample, predict, update_weights)
from .planning import (ControlCommand, NoPathError, Path, PlanningError,
                       follow_path, inflated_free_mask, plan_path,
                       project_to_image, reactive_control, step_unicycle)
from .visibility import SensorModel, VisibilityRegion, compute_visibility

DEFAULT_EXCLUDE_RADIUS = 0.5
ARRIVAL_RADIUS = 0.3
STALL_TICKS = 20
IMAGE_WIDTH = 640
TARGET_RADIUS = 0.25
STANDOFF = 1.5
# planning keeps two extra cells of clearance beyond the agent radius so
# that lookahead chords between waypoints cannot clip wall corners
PLANNING_MARGIN = 0.2


@dataclass(frozen=True)
class AgentSpec:
    role: str        # "pursuer" | "evader"
    behavior: str    # "random" | "smart" | "scripted" | "human"
    v_max: float
    radius: float = 0.2

    def __post_init__(self):
        if self.role not in ("pursuer", "evader"):
            raise ValueError(f"unknown role {self.role!r}")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True)
class EscapeCandidate:
    cell: Cell
    cost_effort: float   # evader grid travel distance, meters
    cost_dist: float     # pursuer straight-line separation, meters

    def __post_init__(self):
        if not self.cost_dist > 0:
            raise ValueError("cost_dist must be positive")

    @property
    def cost_escape(self) -> float:
        return self.cost_effort / self.cost_dist


@dataclass(frozen=True)
class EscapeGoal:
    cell: Cell
    fallback: bool = False


@dataclass
class WorldView:
    """Per-tick snapshot handed to a policy.

    The engine fills only what the role is entitled to: the evader always
    sees the true pursuer pose, the pursuer sees the evader pose only while
    `detected` is true. The pursuer's visibility region is computed lazily.
    """

    tick: int
    dt: float
    grid: GridMap
    sensor: SensorModel
    self_pose: Pose
    spec: AgentSpec
    detected: bool
    pursuer_pose: Pose
    evader_pose: Optional[Pose]
    region_fn: Callable[[], VisibilityRegion] = field(repr=False)

    def pursuer_region(self) -> VisibilityRegion:
        return self.region_fn()


# -- escape-point selection --------------------------------------------------


def _free_graph(grid: GridMap, inflation_radius: float = 0.0):
    """CSR adjacency over traversable cells (8-connected, cell-unit weights);
    cached per inflation radius."""
    from scipy import sparse

    key = ("free_graph", round(float(inflation_radius), 9))
    if key in grid._cache:
        return grid._cache[key]
    free = (grid.free_mask if inflation_radius <= 0
            else inflated_free_mask(grid, inflation_radius))
    h, w = free.shape
    index = np.full(h * w, -1, dtype=np.int64)
    rc = np.argwhere(free)
    flat = rc[:, 0] * w + rc[:, 1]
    index[flat] = np.arange(len(rc))
    rows_i = []
    rows_j = []
    costs = []
    for dr, dc in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
        src = rc[(rc[:, 0] + dr >= 0) & (rc[:, 0] + dr < h)
                 & (rc[:, 1] + dc >= 0) & (rc[:, 1] + dc < w)]
        dst_flat = (src[:, 0] + dr) * w + (src[:, 1] + dc)
        ok = index[dst_flat] >= 0
        src = src[ok]
        i = index[src[:, 0] * w + src[:, 1]]
        j = index[dst_flat[ok]]
        rows_i.append(i)
        rows_j.append(j)
        costs.append(np.full(len(i), math.sqrt(2.0) if dr and dc else 1.0))
    i = np.concatenate(rows_i)
    j = np.concatenate(rows_j)
    c = np.concatenate(costs)
    graph = sparse.csr_matrix((c, (i, j)), shape=(len(rc), len(rc)))
    grid._cache[key] = (graph, index)
    return grid._cache[key]


def travel_distances(grid: GridMap, source: Cell,
                     inflation_radius: float = 0.0) -> np.ndarray:
    """Shortest 8-connected grid distance (meters) from `source` to every
    free cell, in free_cell_array() order; inf where unreachable (or, with
    inflation, not traversable by the inflated agent)."""
    from scipy.sparse import csgraph

    graph, index = _free_graph(grid, inflation_radius)
    src = index[source.row * grid.width + source.col]
    if src < 0:
        raise ValueError(f"source {source} is not a traversable cell")
    dist = csgraph.dijkstra(graph, directed=False, indices=src)
    out = np.full(len(grid.free_cell_array()), np.inf)
    rc = grid.free_cell_array()
    flat = rc[:, 0] * grid.width + rc[:, 1]
    reach = index[flat]
    has = reach >= 0
    out[has] = dist[reach[has]]
    return out * grid.resolution


def compute_escape_goal(grid: GridMap, pursuer: Pose, evader: Pose, sensor: SensorModel,
                        *, region: Optional[VisibilityRegion] = None,
                        r_exclude: float = DEFAULT_EXCLUDE_RADIUS,
                        stride: int = 1, inflation_radius: float = 0.0) -> EscapeGoal:
    """Pick the free cell outside the pursuer's visibility region minimizing
    travel-effort / pursuer-separation.

    Candidates closer than r_exclude to the evader are dropped (otherwise
    the evader's own cell wins at zero effort), as are cells it cannot
    reach. Ratios are compared at 1e-9 granularity; remaining ties go to
    the lowest row-major cell index. With no candidates at all (the pursuer
    sees everything) the fallback is the free cell farthest from it.
    """
    if not grid.is_free_point(evader.x, evader.y):
        raise ValueError(f"evader pose ({evader.x}, {evader.y}) is not in free space")
    if region is None:
        region = compute_visibility(grid, pursuer, sensor)
    rc = grid.free_cell_array()
    centers = grid.free_cell_centers()
    in_region = region.mask[rc[:, 0], rc[:, 1]]
    d_evader = np.hypot(centers[:, 0] - evader.x, centers[:, 1] - evader.y)
    cost_dist = np.hypot(centers[:, 0] - pursuer.x, centers[:, 1] - pursuer.y)
    candidates = ~in_region & (d_evader > r_exclude)
    if stride > 1:
        candidates &= (np.arange(len(rc)) % stride) == 0
    if candidates.any():
        source = grid.world_to_cell(evader.x, evader.y)
        effective_inflation = inflation_radius
        if inflation_radius > 0:
            free = inflated_free_mask(grid, inflation_radius)
            if not free[source.row, source.col]:
                snapped = next(iter(_snap_candidates(grid, free, source)), None)
                if snapped is None:
                    effective_inflation = 0.0  # wedged somewhere the planner disowns
                else:
                    source = snapped
        effort = travel_distances(grid, source, effective_inflation)
        valid = candidates & np.isfinite(effort) & (cost_dist > 0)
        if valid.any():
            idx = np.nonzero(valid)[0]
            ratio = np.round(effort[idx] / cost_dist[idx], 9)
            best = idx[int(np.argmin(ratio))]
            return EscapeGoal(Cell(int(rc[best, 0]), int(rc[best, 1])), fallback=False)
    far = int(np.argmax(cost_dist))
    return EscapeGoal(Cell(int(rc[far, 0]), int(rc[far, 1])), fallback=True)


def escape_candidates(grid: GridMap, pursuer: Pose, evader: Pose, sensor: SensorModel,
                      *, region: Optional[VisibilityRegion] = None,
                      r_exclude: float = DEFAULT_EXCLUDE_RADIUS) -> list[EscapeCandidate]:
    """The scored candidate list behind compute_escape_goal, for inspection."""
    if region is None:
        region = compute_visibility(grid, pursuer, sensor)
    rc = grid.free_cell_array()
    centers = grid.free_cell_centers()
    effort = travel_distances(grid, grid.world_to_cell(evader.x, evader.y))
    out = []
    for k in range(len(rc)):
        cell = Cell(int(rc[k, 0]), int(rc[k, 1]))
        if region.mask[cell.row, cell.col]:
            continue
        d_e = math.hypot(centers[k, 0] - evader.x, centers[k, 1] - evader.y)
        d_p = math.hypot(centers[k, 0] - pursuer.x, centers[k, 1] - pursuer.y)
        if d_e <= r_exclude or not math.isfinite(effort[k]) or d_p <= 0:
            continue
        out.append(EscapeCandidate(cell, float(effort[k]), d_p))
    return out


# -- shared navigation helpers ----------------------------------------------

_SNAP_OFFSETS: list[tuple[int, int]] = sorted(
    ((dr, dc) for dr in range(-8, 9) for dc in range(-8, 9)),
    key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))


def _snap_candidates(grid: GridMap, free: np.ndarray, cell: Cell) -> Iterable[Cell]:
    for dr, dc in _SNAP_OFFSETS:
        r, c = cell.row + dr, cell.col + dc
        if 0 <= r < grid.height and 0 <= c < grid.width and free[r, c]:
            yield Cell(r, c)


def plan_with_snap(grid: GridMap, pose: Pose, goal: Cell, radius: float,
                   goal_attempts: int = 20) -> Optional[Path]:
    """plan_path with endpoint repair: the start snaps to the nearest
    inflation-free cell, the goal walks outward over nearby free cells until
    one is reachable. Returns None when nothing works."""
    free = inflated_free_mask(grid, radius)
    start = next(iter(_snap_candidates(grid, free, grid.world_to_cell(pose.x, pose.y))), None)
    if start is None:
        return None
    for i, g in enumerate(_snap_candidates(grid, free, goal)):
        if i >= goal_attempts:
            break
        try:
            return plan_path(grid, grid.cell_to_world(start), grid.cell_to_world(g), radius)
        except (NoPathError, PlanningError):
            continue
    return None


def _frozen_tick(prev: Optional[tuple[float, float, float]], pose: Pose) -> bool:
    """True when the previous command asked for motion but the pose never
    moved: the step was collision-clamped and the same chord would freeze
    the agent for good."""
    return (prev is not None and abs(prev[2]) > 1e-9
            and math.hypot(pose.x - prev[0], pose.y - prev[1]) < 1e-9)


# -- policies -----------------------------------------------------------------


class RandomWanderPolicy:
    """Wanders between uniformly sampled free-cell waypoints; no chasing."""

    def __init__(self, spec: AgentSpec, grid: GridMap, rng: np.random.Generator):
        self.spec = spec
        self.grid = grid
        self.rng = rng
        self.last_mode = "random"
        self.last_estimate = None
        self.goals_visited: list[Cell] = []
        self._plan_radius = spec.radius + max(PLANNING_MARGIN, 2 * grid.resolution)
        self._path: Optional[Path] = None
        self._goal_xy: Optional[tuple[float, float]] = None
        self._best = math.inf
        self._stall = 0
        self._prev_step: Optional[tuple[float, float, float]] = None

    def _needs_new_goal(self, pose: Pose) -> bool:
        if self._path is None or self._goal_xy is None:
            return True
        d = math.hypot(self._goal_xy[0] - pose.x, self._goal_xy[1] - pose.y)
        if d <= ARRIVAL_RADIUS:
            return True
        if d < self._best - 0.01:
            self._best = d
            self._stall = 0
        else:
            self._stall += 1
        return self._stall >= STALL_TICKS

    def command(self, view: WorldView) -> ControlCommand:
        pose = view.self_pose
        stuck = _frozen_tick(self._prev_step, pose)
        if self._needs_new_goal(pose):
            self._path = None
            rc = self.grid.free_cell_array()
            for _ in range(200):
                r, c = rc[int(self.rng.integers(len(rc)))]
                goal = Cell(int(r), int(c))
                path = plan_with_snap(self.grid, pose, goal, self._plan_radius)
                if path is not None:
                    self._path = path
                    self._goal_xy = path.waypoints[-1]
                    self.goals_visited.append(goal)
                    self._best = math.inf
                    self._stall = 0
                    break
        if self._path is None:
            cmd = ControlCommand(0.0, 0.0)
        else:
            cmd = follow_path(pose, self._path, self.spec.v_max, view.dt,
                              conservative=stuck)
        self._prev_step = (pose.x, pose.y, cmd.v)
        return cmd


class SmartEvaderPolicy:
    """Heads for the best escape cell, with short goal commitment.

    The raw per-tick argmin flip-flops between near-equal candidates on
    opposite sides of the wedge (the wedge tracks the evader, so relative
    geometry barely changes) and the evader ends up turning in place. A
    committed goal is therefore held for up to `commit_ticks`; it is
    re-chosen early on arrival, or as soon as the evader is unseen but its
    goal has been swallowed by the moved visibility region.
    """

    # the policy excludes a full meter around itself: with only the op-level
    # 0.5 m exclusion the argmin degenerates into sidestep-orbiting right at
    # the wedge boundary, which a competent tracker never loses
    POLICY_EXCLUDE_RADIUS = 1.0

    def __init__(self, spec: AgentSpec, grid: GridMap, sensor: SensorModel,
                 r_exclude: Optional[float] = None, stride: int = 1,
                 commit_ticks: int = 8):
        self.spec = spec
        self.grid = grid
        self.sensor = sensor
        self.r_exclude = self.POLICY_EXCLUDE_RADIUS if r_exclude is None else r_exclude
        self.stride = stride
        self.commit_ticks = commit_ticks
        self.last_mode = "smart"
        self.last_estimate = None
        self.last_goal: Optional[EscapeGoal] = None
        self._plan_radius = spec.radius + max(PLANNING_MARGIN, 2 * grid.resolution)
        self._age = 0
        self._prev_step: Optional[tuple[float, float, float]] = None

    def _keep_committed(self, view: WorldView, pose: Pose) -> bool:
        goal = self.last_goal
        if goal is None or self._age >= self.commit_ticks:
            return False
        gx, gy = self.grid.cell_to_world(goal.cell)
        if math.hypot(gx - pose.x, gy - pose.y) <= ARRIVAL_RADIUS:
            return False
        region = view.pursuer_region()
        self_cell = self.grid.world_to_cell(pose.x, pose.y)
        self_seen = region.mask[self_cell.row, self_cell.col]
        goal_seen = region.mask[goal.cell.row, goal.cell.col]
        if goal_seen and not self_seen:
            return False
        return True

    def command(self, view: WorldView) -> ControlCommand:
        pose = view.self_pose
        stuck = _frozen_tick(self._prev_step, pose)
        if self._keep_committed(view, pose):
            self._age += 1
        else:
            self.last_goal = compute_escape_goal(
                self.grid, view.pursuer_pose, pose, self.sensor,
                region=view.pursuer_region(), r_exclude=self.r_exclude,
                stride=self.stride, inflation_radius=self._plan_radius)
            self._age = 0
        path = plan_with_snap(self.grid, pose, self.last_goal.cell, self._plan_radius)
        if path is None:
            self._age = self.commit_ticks  # force a fresh goal next tick
            cmd = ControlCommand(0.0, 0.0)
        else:
            cmd = follow_path(pose, path, self.spec.v_max, view.dt, conservative=stuck)
        self._prev_step = (pose.x, pose.y, cmd.v)
        return cmd


class SmartPursuerPolicy:
    """Reactive image-centering while the evader is visible; particle-filter
    estimate chasing while it is not. Each sighting re-seeds the filter so it
    is warm the moment sight is lost."""

    def __init__(self, spec: AgentSpec, grid: GridMap, sensor: SensorModel,
                 filter_config: FilterConfig, rng: np.random.Generator):
        self.spec = spec
        self.grid = grid
        self.sensor = sensor
        self.filter_config = filter_config
        self.rng = rng
        self.pset: Optional[ParticleSet] = None
        self.last_mode = "estimate"
        self.last_estimate: Optional[Pose] = None
        self._plan_radius = spec.radius + max(PLANNING_MARGIN, 2 * grid.resolution)
        self._path: Optional[Path] = None
        self._goal_cell: Optional[Cell] = None
        self._prev_step: Optional[tuple[float, float, float]] = None

    def update_perception(self, view: WorldView) -> None:
        """Advance the filter one tick from this view's evidence."""
        if view.detected and view.evader_pose is not None:
            self.pset = initialize_around(self.grid, view.evader_pose,
                                          self.filter_config, self.rng)
            self.last_estimate = None
            return
        if self.pset is None:
            self.pset = initialize_uniform(self.grid, self.filter_config, self.rng)
        self.pset = predict(self.pset, view.dt, self.grid, self.filter_config)
        self.pset, _diverged = update_weights(self.pset, view.pursuer_region(), False,
                                              self.filter_config, self.grid)
        self.pset, _ = maybe_resample(self.pset, self.filter_config)
        self.last_estimate = estimate(self.pset)

    def command(self, view: WorldView) -> ControlCommand:
        pose = view.self_pose
        stuck = _frozen_tick(self._prev_step, pose)
        self.update_perception(view)
        if view.detected and view.evader_pose is not None:
            self.last_mode = "reactive"
            self._path = None
            self._goal_cell = None
            obs = project_to_image(pose, view.evader_pose, self.sensor,
                                   w_i=IMAGE_WIDTH, target_radius=TARGET_RADIUS)
            cmd = reactive_control(obs, v_max=self.spec.v_max, standoff=STANDOFF)
            self._prev_step = (pose.x, pose.y, cmd.v)
            return cmd
        self.last_mode = "estimate"
        est = self.last_estimate
        d_est = math.hypot(est.x - pose.x, est.y - pose.y)
        err = normalize_angle(math.atan2(est.y - pose.y, est.x - pose.x) - pose.theta)
        omega = max(-math.pi / 2, min(math.pi / 2, err))
        # the estimate is inside the blind ring: nothing this close can ever
        # be seen, so back away while staying face-on until range opens
        if d_est < self.sensor.dist_min + 0.1:
            self._path = None
            cmd = ControlCommand(-0.5 * self.spec.v_max, omega)
            self._prev_step = (pose.x, pose.y, cmd.v)
            return cmd
        # near the estimate but not yet facing it: park and swing the wedge
        # onto it (driving through the point puts the target behind the
        # camera). Once the estimate is in view and still empty the spot is
        # refuted, so fall through and keep moving.
        est_in_view = (self.sensor.dist_min <= d_est <= self.sensor.dist_max
                       and abs(err) <= self.sensor.fov / 2)
        if (d_est <= STANDOFF and not est_in_view
                and line_of_sight(self.grid, pose.xy, est.xy)):
            self._path = None
            cmd = ControlCommand(0.0, omega)
            self._prev_step = (pose.x, pose.y, cmd.v)
            return cmd
        est_cell = self.grid.world_to_cell(est.x, est.y)
        if self._path is None or stuck or est_cell != self._goal_cell:
            self._goal_cell = est_cell
            self._path = plan_with_snap(self.grid, pose, est_cell, self._plan_radius)
        if self._path is None:
            cmd = ControlCommand(0.0, 0.0)
        else:
            cmd = follow_path(pose, self._path, self.spec.v_max, view.dt,
                              conservative=stuck)
        self._prev_step = (pose.x, pose.y, cmd.v)
        return cmd


class ScriptedPolicy:
    """Replays a fixed command sequence; holds once exhausted."""

    def __init__(self, commands: Iterable[ControlCommand]):
        self._commands = list(commands)
        self._i = 0
        self.last_mode = "scripted"
        self.last_estimate = None

    def command(self, view: WorldView) -> ControlCommand:
        if self._i < len(self._commands):
            cmd = self._commands[self._i]
            self._i += 1
            return cmd
        return ControlCommand(0.0, 0.0)


class HumanPolicy:
    """Bridges externally submitted input into the per-tick command slot.

    A velocity command applies for exactly one tick; a goal point expands
    into a path that is followed on input-free ticks. When both arrive in
    the same tick window the goal wins. With neither, the agent holds.
    An optional perception delegate (a SmartPursuerPolicy) is advanced each
    tick so a human pursuer still gets filter estimates to look at.
    """

    def __init__(self, spec: AgentSpec, grid: GridMap,
                 perception: Optional[SmartPursuerPolicy] = None):
        self.spec = spec
        self.grid = grid
        self.perception = perception
        self.last_mode = "human"
        self.last_estimate = None
        self.pending_command: Optional[ControlCommand] = None
        self.pending_goal: Optional[tuple[float, float]] = None
        self._plan_radius = spec.radius + max(PLANNING_MARGIN, 2 * grid.resolution)
        self._path: Optional[Path] = None
        self._prev_step: Optional[tuple[float, float, float]] = None

    def submit_command(self, cmd: ControlCommand) -> None:
        self.pending_command = cmd

    def submit_goal(self, x: float, y: float) -> None:
        self.pending_goal = (x, y)

    def command(self, view: WorldView) -> ControlCommand:
        if self.perception is not None:
            self.perception.update_perception(view)
            self.last_estimate = self.perception.last_estimate
        pose = view.self_pose
        stuck = _frozen_tick(self._prev_step, pose)
        if self.pending_goal is not None:
            gx, gy = self.pending_goal
            self.pending_goal = None
            self.pending_command = None
            goal_cell = self.grid.world_to_cell(gx, gy)
            self._path = plan_with_snap(self.grid, pose, goal_cell, self._plan_radius)
        elif self.pending_command is not None:
            cmd = self.pending_command
            self.pending_command = None
            self._path = None
            self._prev_step = (pose.x, pose.y, cmd.v)
            return cmd
        if self._path is not None:
            cmd = follow_path(pose, self._path, self.spec.v_max, view.dt,
                              conservative=stuck)
            if cmd == ControlCommand(0.0, 0.0):
                self._path = None
        else:
            cmd = ControlCommand(0.0, 0.0)
        self._prev_step = (pose.x, pose.y, cmd.v)
        return cmd


def make_policy(spec: AgentSpec, grid: GridMap, sensor: SensorModel,
                filter_config: FilterConfig, rng: np.random.Generator):
    if spec.behavior == "random":
        return RandomWanderPolicy(spec, grid, rng)
    if spec.behavior == "smart":
        if spec.role == "evader":
            return SmartEvaderPolicy(spec, grid, sensor)
        return SmartPursuerPolicy(spec, grid, sensor, filter_config, rng)
    if spec.behavior == "human":
        perception = None
        if spec.role == "pursuer":
            perception = SmartPursuerPolicy(spec, grid, sensor, filter_config, rng)
        return HumanPolicy(spec, grid, perception)
    raise ValueError(f"unknown behavior {spec.behavior!r}")
