import heapq
import math

import numpy as np
import pytest

from gridpursuit.grid import Cell, GridMap, Pose, load_map
from gridpursuit.planning import (SQRT2, ControlCommand, ImageObservation,
                                  NoPathError, PlanningError, disc_collides,
                                  follow_path, inflated_free_mask, plan_path,
                                  project_to_image, reactive_control,
                                  step_unicycle)
from gridpursuit.visibility import SensorModel

from conftest import random_grid


def dijkstra_cost(free: np.ndarray, start: Cell, goal: Cell):
    """Independent exact-cost Dijkstra: returns (straight, diagonal) counts."""
    h, w = free.shape
    dist = {(start.row, start.col): (0, 0)}
    heap = [(0.0, start.row, start.col, 0, 0)]
    seen = set()
    while heap:
        d, r, c, ns, nd = heapq.heappop(heap)
        if (r, c) in seen:
            continue
        seen.add((r, c))
        if (r, c) == (goal.row, goal.col):
            return ns, nd
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w) or not free[nr, nc]:
                    continue
                diag = dr != 0 and dc != 0
                cost = d + (SQRT2 if diag else 1.0)
                cur = dist.get((nr, nc))
                if cur is None or cost < cur[0] + cur[1] * SQRT2 - 1e-12:
                    dist[(nr, nc)] = (ns + (not diag), nd + diag)
                    heapq.heappush(heap, (cost, nr, nc, ns + (not diag), nd + diag))
    return None


def open_map(n=12, res=0.1):
    return GridMap(np.zeros((n, n), dtype=bool), resolution=res)


def test_plan_start_equals_goal():
    g = open_map()
    path = plan_path(g, (0.55, 0.55), (0.57, 0.53), inflation_radius=0.0)
    assert len(path) == 1
    assert path.cost == 0.0


def test_plan_straight_corridor_cost():
    g = open_map(10)
    path = plan_path(g, (0.05, 0.05), (0.95, 0.05), inflation_radius=0.0)
    assert len(path.cells) == 10
    assert path.cost == pytest.approx(9.0)
    assert path.step_counts == (9, 0)


def test_plan_endpoints_match_requested_cells():
    g = open_map(10)
    path = plan_path(g, (0.23, 0.31), (0.81, 0.67), inflation_radius=0.0)
    assert path.cells[0] == g.world_to_cell(0.23, 0.31)
    assert path.cells[-1] == g.world_to_cell(0.81, 0.67)
    for a, b in zip(path.cells, path.cells[1:]):
        assert max(abs(a.row - b.row), abs(a.col - b.col)) == 1


def test_plan_unreachable_goal():
    g = load_map(".#.\n.#.\n.#.\n")
    with pytest.raises(NoPathError):
        plan_path(g, (0.05, 0.05), (0.25, 0.05), inflation_radius=0.0)


def test_plan_blocked_after_inflation():
    g = load_map("....\n.#..\n....\n....\n")
    with pytest.raises(PlanningError):
        plan_path(g, (0.25, 0.05), (0.35, 0.35), inflation_radius=0.1)


def test_astar_matches_dijkstra_on_random_maps(rng):
    matched = 0
    for trial in range(50):
        g = random_grid(rng, height=20, width=20, p_obstacle=0.2)
        free = inflated_free_mask(g, 0.0)
        cells = np.argwhere(free)
        a, b = cells[rng.integers(len(cells))], cells[rng.integers(len(cells))]
        start, goal = Cell(*map(int, a)), Cell(*map(int, b))
        expected = dijkstra_cost(free, start, goal)
        try:
            path = plan_path(g, g.cell_to_world(start), g.cell_to_world(goal), 0.0)
        except NoPathError:
            assert expected is None
            continue
        assert expected is not None
        assert path.step_counts == expected or (
            path.step_counts[0] + path.step_counts[1] * SQRT2
            == pytest.approx(expected[0] + expected[1] * SQRT2, abs=0.0))
        matched += 1
    assert matched > 30


def test_inflation_distance_semantics():
    g = load_map("....\n.#..\n....\n....\n")
    free = inflated_free_mask(g, 0.1)
    # centers strictly closer than 0.1 m to the obstacle square are blocked
    assert not free[1, 1]
    assert not free[0, 1] and not free[1, 0] and not free[2, 1] and not free[1, 2]
    assert not free[0, 0] and not free[2, 2]  # diagonal center is ~0.071 m away
    assert free[3, 3] and free[0, 3]


# -- unicycle ---------------------------------------------------------------


def test_unicycle_pure_translation():
    g = open_map(40, res=0.1)
    out = step_unicycle(Pose(1.0, 1.0, 0.0), ControlCommand(1.0, 0.0), 1.0, g, radius=0.0)
    assert (out.x, out.y, out.theta) == pytest.approx((2.0, 1.0, 0.0))


def test_unicycle_pure_rotation():
    g = open_map()
    out = step_unicycle(Pose(0.5, 0.5, 0.0), ControlCommand(0.0, math.pi / 2), 1.0, g)
    assert (out.x, out.y) == (0.5, 0.5)
    assert out.theta == pytest.approx(math.pi / 2)


def test_unicycle_rotate_then_translate():
    g = open_map(60)
    start = Pose(3.0, 3.0, 0.0)
    out = step_unicycle(start, ControlCommand(1.0, math.pi), 1.0, g, radius=0.0)
    assert out.theta == pytest.approx(math.pi)
    assert (out.x, out.y) == pytest.approx((2.0, 3.0))


def test_unicycle_collision_reverts_position_keeps_heading():
    g = load_map("resolution 0.1\n" + "\n".join(["#" * 12] + ["#" + "." * 10 + "#"] * 3 + ["#" * 12]))
    pose = Pose(0.95, 0.25, 0.0)
    out = step_unicycle(pose, ControlCommand(0.4, 0.3), 1.0, g, radius=0.2)
    assert (out.x, out.y) == (pose.x, pose.y)
    assert out.theta == pytest.approx(0.3)


def test_unicycle_swept_collision_detected():
    # thin wall between start and end: the swept disc must catch it
    g = load_map("resolution 0.1\n" + "\n".join(
        ["." * 11 for _ in range(5)] + ["....#......"] + ["." * 11 for _ in range(5)]))
    pose = Pose(0.45, 0.25, math.pi / 2)
    out = step_unicycle(pose, ControlCommand(0.8, 0.0), 1.0, g, radius=0.15)
    assert (out.x, out.y) == (pose.x, pose.y)


def test_unicycle_displacement_bound(rng):
    g = open_map(60)
    for _ in range(100):
        pose = Pose(rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(-3, 3))
        v = rng.uniform(0, 1.0)
        w = rng.uniform(-2, 2)
        dt = rng.uniform(0.1, 2.0)
        out = step_unicycle(pose, ControlCommand(v, w), dt, g, radius=0.0)
        assert math.hypot(out.x - pose.x, out.y - pose.y) <= v * dt + 1e-12


def test_disc_collides_edges():
    g = load_map("....\n.#..\n....\n....\n")
    assert disc_collides(g, 0.25, 0.25, 0.1)          # overlapping the block
    assert not disc_collides(g, 0.05, 0.35, 0.04)     # clear
    assert disc_collides(g, 0.05, 0.05, 0.2)          # hits map edge


# -- projection and controllers ---------------------------------------------


def test_projection_centered():
    sensor = SensorModel()
    obs = project_to_image(Pose(0, 1, 0), Pose(2, 1, 0), sensor, w_i=640)
    assert obs.center == pytest.approx(320.0)
    assert obs.depth == pytest.approx(2.0)


def test_projection_wedge_edges_map_to_image_edges():
    sensor = SensorModel()
    beta = sensor.fov / 2
    left = project_to_image(Pose(0, 0, 0),
                            Pose(2 * math.cos(beta), 2 * math.sin(beta), 0), sensor)
    right = project_to_image(Pose(0, 0, 0),
                             Pose(2 * math.cos(-beta), 2 * math.sin(-beta), 0), sensor)
    assert left.center == pytest.approx(0.0)
    assert right.center == pytest.approx(640.0)


def test_projection_quarter_wedge_value():
    # beta = fov/4 with fov = pi/3: center offset by tan(pi/12)/tan(pi/6) half-widths
    sensor = SensorModel()
    beta = math.pi / 12
    obs = project_to_image(Pose(0, 0, 0),
                           Pose(2 * math.cos(beta), 2 * math.sin(beta), 0), sensor, w_i=640)
    expected = 320 * (1 - math.tan(math.pi / 12) / math.tan(math.pi / 6))
    assert obs.center == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(640 - 468.5125, abs=0.001)


def test_projection_requires_detectability():
    sensor = SensorModel()
    with pytest.raises(ValueError):
        project_to_image(Pose(0, 0, 0), Pose(0.1, 0.0, 0), sensor)  # inside dist_min
    with pytest.raises(ValueError):
        project_to_image(Pose(0, 0, 0), Pose(0.0, 2.0, 0), sensor)  # outside wedge


def test_reactive_zero_error_is_zero_command():
    sensor = SensorModel()
    obs = project_to_image(Pose(0, 1, 0), Pose(1.5, 1, 0), sensor)
    cmd = reactive_control(obs, v_max=0.4, standoff=1.5)
    assert cmd.v == pytest.approx(0.0, abs=1e-9)
    assert cmd.omega == pytest.approx(0.0, abs=1e-9)


def test_reactive_turns_toward_right_edge_box():
    obs = ImageObservation(x_b=640 - 20, w_b=20, w_i=640, depth=2.0)
    cmd = reactive_control(obs, v_max=0.4)
    assert cmd.omega < 0


def test_reactive_speed_clamps_at_v_max():
    obs = ImageObservation(x_b=310, w_b=20, w_i=640, depth=2.5)
    cmd = reactive_control(obs, v_max=0.8, standoff=1.5, k_v=0.8)
    assert cmd.v == pytest.approx(0.8)


def test_reactive_offset_identity():
    # offset zero iff box center equals image center
    obs = ImageObservation(x_b=300, w_b=40, w_i=640, depth=2.0)
    assert obs.center == 320
    assert reactive_control(obs, v_max=1.0, standoff=2.0).omega == 0.0


def test_follow_path_at_goal_stops():
    g = open_map(20)
    path = plan_path(g, (0.25, 0.25), (1.55, 0.25), inflation_radius=0.0)
    cmd = follow_path(Pose(1.55, 0.25, 0.0), path, v_max=0.4, dt=1.0)
    assert cmd == ControlCommand(0.0, 0.0)


def test_follow_path_waypoint_behind():
    g = open_map(20)
    path = plan_path(g, (1.55, 0.25), (0.25, 0.25), inflation_radius=0.0)
    cmd = follow_path(Pose(1.55, 0.25, 0.0), path, v_max=0.4, dt=1.0)
    assert abs(cmd.omega) == pytest.approx(math.pi / 2)
    assert cmd.v == pytest.approx(0.0, abs=1e-12)


def test_follow_path_traverses_corridor():
    g = GridMap(np.zeros((5, 80), dtype=bool), resolution=0.1)
    path = plan_path(g, (0.25, 0.25), (7.75, 0.25), inflation_radius=0.0)
    pose = Pose(0.25, 0.25, 0.0)
    v_max, length = 0.4, 7.5
    budget = int(length / v_max) + 2
    for k in range(budget):
        cmd = follow_path(pose, path, v_max, 1.0)
        pose = step_unicycle(pose, cmd, 1.0, g, radius=0.0)
        if math.hypot(pose.x - 7.75, pose.y - 0.25) < 0.1:
            break
    assert math.hypot(pose.x - 7.75, pose.y - 0.25) < 0.1
    assert k < budget - 1


def test_pursuit_keeps_straight_evader_visible():
    # closed-loop: reactive controller holds detection on a runaway evader
    from gridpursuit.visibility import is_detected

    g = GridMap(np.zeros((12, 400), dtype=bool), resolution=0.1)
    sensor = SensorModel()
    pursuer = Pose(1.0, 0.6, 0.0)
    evader = Pose(2.5, 0.6, 0.0)
    detected_ticks = 0
    for _ in range(90):
        evader = step_unicycle(evader, ControlCommand(0.3, 0.0), 1.0, g, radius=0.0)
        if is_detected(g, pursuer, evader, sensor):
            obs = project_to_image(pursuer, evader, sensor)
            cmd = reactive_control(obs, v_max=0.6, standoff=1.5)
            pursuer = step_unicycle(pursuer, cmd, 1.0, g, radius=0.0)
        if is_detected(g, pursuer, evader, sensor):
            detected_ticks += 1
    assert detected_ticks == 90