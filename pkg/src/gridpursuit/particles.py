"""Sequential-importance-sampling filter over evader pose hypotheses.

Particles live in free space only. The measurement step folds in what the
pursuer's sensor wedge says: while the evader is unseen, mass inside the
visibility region is discounted (it was looked at and nothing was there);
while seen, mass outside is discounted. Weight degeneracy is watched through
the effective size 1 / sum(w_i^2) and repaired by systematic resampling when
it drops below rho * N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import GridMap, Pose, normalize_angle
from .visibility import VisibilityRegion


class InitializationError(RuntimeError):
    """Raised when no free space exists near the requested filter center."""


class Particle(NamedTuple):
    pose: Pose
    weight: float


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 1000
    rho: float = 0.8
    v_max: float = 0.4
    omega_max: float = math.pi / 2
    position_jitter_sigma: float = 0.05
    reinit_sigma: float = 0.2
    in_region_factor_when_unseen: float = 0.05
    out_region_factor_when_seen: float = 0.05

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        for name in ("v_max", "omega_max", "position_jitter_sigma", "reinit_sigma",
                     "in_region_factor_when_unseen", "out_region_factor_when_seen"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class ParticleSet:
    """N weighted pose hypotheses backed by (N, 3) / (N,) arrays.

    The generator travels with the set: predict and resample draw from it,
    so a fixed seed makes the whole filter trajectory reproducible.
    """

    def __init__(self, poses: np.ndarray, weights: np.ndarray, rng: np.random.Generator):
        poses = np.asarray(poses, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise ValueError("poses must be (N, 3)")
        if weights.shape != (poses.shape[0],):
            raise ValueError("weights must be (N,)")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        self.poses = poses
        self.weights = weights
        self.rng = rng

    def __len__(self) -> int:
        return self.poses.shape[0]

    def particles(self) -> list[Particle]:
        return [Particle(Pose(x, y, t), float(w))
                for (x, y, t), w in zip(self.poses, self.weights)]

    def to_rows(self) -> list[tuple[float, float, float, float]]:
        """(x, y, theta, weight) rows for dumps and UI overlays."""
        return [(float(x), float(y), float(t), float(w))
                for (x, y, t), w in zip(self.poses, self.weights)]


def _free_at(grid: GridMap, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = grid.extent
    ok = (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
    cols = np.clip(((xs - x0) / grid.resolution).astype(np.int64), 0, grid.width - 1)
    rows = np.clip(((ys - y0) / grid.resolution).astype(np.int64), 0, grid.height - 1)
    return ok & ~grid.occupancy[rows, cols]


def initialize_around(grid: GridMap, center: Pose, config: FilterConfig,
                      rng: np.random.Generator | int) -> ParticleSet:
    """Gaussian cloud (sigma = reinit_sigma) around a pose, rejection-sampled
    into free space, uniform weights and headings."""
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    if not grid.is_free_point(center.x, center.y):
        raise InitializationError(f"center ({center.x}, {center.y}) is not in free space")
    sigma = config.reinit_sigma
    if sigma > 0:
        centers = grid.free_cell_centers()
        d = np.hypot(centers[:, 0] - center.x, centers[:, 1] - center.y)
        if not (d <= 5 * sigma).any():
            raise InitializationError(f"no free cell within 5 sigma ({5 * sigma} m) of center")
    n = config.n_particles
    poses = np.empty((n, 3))
    poses[:, 2] = rng.uniform(-math.pi, math.pi, n)
    pending = np.arange(n)
    for _ in range(1000):
        if len(pending) == 0:
            break
        xs = center.x + rng.normal(0.0, sigma, len(pending))
        ys = center.y + rng.normal(0.0, sigma, len(pending))
        ok = _free_at(grid, xs, ys)
        placed = pending[ok]
        poses[placed, 0] = xs[ok]
        poses[placed, 1] = ys[ok]
        pending = pending[~ok]
    else:
        raise InitializationError("rejection sampling failed to place all particles")
    return ParticleSet(poses, np.full(n, 1.0 / n), rng)


def initialize_uniform(grid: GridMap, config: FilterConfig,
                       rng: np.random.Generator | int) -> ParticleSet:
    """Uniform prior over free space: the no-sighting-yet / recovery bootstrap."""
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    n = config.n_particles
    centers = grid.free_cell_centers()
    idx = rng.integers(0, len(centers), n)
    offsets = rng.uniform(-0.5, 0.5, (n, 2)) * grid.resolution
    poses = np.empty((n, 3))
    poses[:, :2] = centers[idx] + offsets
    poses[:, 2] = rng.uniform(-math.pi, math.pi, n)
    return ParticleSet(poses, np.full(n, 1.0 / n), rng)


def predict(pset: ParticleSet, dt: float, grid: GridMap, config: FilterConfig) -> ParticleSet:
    """Propagate each particle with a random admissible unicycle command
    (V ~ U(0, v_max), omega ~ U(-omega_max, omega_max)) plus positional
    jitter; moves landing in obstacles keep their old position but do turn."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = len(pset)
    rng = pset.rng
    v = rng.uniform(0.0, config.v_max, n) if config.v_max > 0 else np.zeros(n)
    w = rng.uniform(-config.omega_max, config.omega_max, n) if config.omega_max > 0 else np.zeros(n)
    theta = pset.poses[:, 2] + w * dt
    theta = np.remainder(theta + math.pi, math.tau) - math.pi
    x = pset.poses[:, 0] + v * np.cos(theta) * dt
    y = pset.poses[:, 1] + v * np.sin(theta) * dt
    if config.position_jitter_sigma > 0:
        x = x + rng.normal(0.0, config.position_jitter_sigma, n)
        y = y + rng.normal(0.0, config.position_jitter_sigma, n)
    ok = _free_at(grid, x, y)
    poses = np.empty_like(pset.poses)
    poses[:, 0] = np.where(ok, x, pset.poses[:, 0])
    poses[:, 1] = np.where(ok, y, pset.poses[:, 1])
    poses[:, 2] = theta
    return ParticleSet(poses, pset.weights.copy(), rng)


def update_weights(pset: ParticleSet, region: VisibilityRegion, detected: bool,
                   config: FilterConfig, grid: GridMap) -> tuple[ParticleSet, bool]:
    """Reweight against the sensor wedge and renormalize.

    Not detected: particles inside the region are discounted by
    in_region_factor_when_unseen. Detected: particles outside are discounted
    by out_region_factor_when_seen. If every weight underflows to zero the
    set is reseeded uniformly over free space and the divergence is reported.
    """
    cols = ((pset.poses[:, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
    rows = ((pset.poses[:, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
    cols = np.clip(cols, 0, grid.width - 1)
    rows = np.clip(rows, 0, grid.height - 1)
    inside = region.mask[rows, cols]
    if detected:
        factors = np.where(inside, 1.0, config.out_region_factor_when_seen)
    else:
        factors = np.where(inside, config.in_region_factor_when_unseen, 1.0)
    weights = pset.weights * factors
    total = weights.sum()
    if total <= 0.0:
        fresh = initialize_uniform(grid, config, pset.rng)
        return fresh, True
    return ParticleSet(pset.poses, weights / total, pset.rng), False


def _require_normalized(weights: np.ndarray) -> None:
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights are not normalized (sum = {weights.sum()!r})")


def effective_size(pset: ParticleSet) -> float:
    """N_eff = 1 / sum(w_i^2); ranges from 1 (collapsed) to N (uniform)."""
    _require_normalized(pset.weights)
    return float(1.0 / np.square(pset.weights).sum())


def maybe_resample(pset: ParticleSet, config: FilterConfig) -> tuple[ParticleSet, bool]:
    """Systematic (low-variance) resampling, triggered iff N_eff < rho * N."""
    _require_normalized(pset.weights)
    n = len(pset)
    if effective_size(pset) >= config.rho * n:
        return pset, False
    cum = np.cumsum(pset.weights)
    cum[-1] = 1.0
    points = (pset.rng.random() + np.arange(n)) / n
    idx = np.searchsorted(cum, points, side="left")
    return ParticleSet(pset.poses[idx], np.full(n, 1.0 / n), pset.rng), True


def estimate(pset: ParticleSet) -> Pose:
    """Weighted mean position and circular-mean heading of the set."""
    _require_normalized(pset.weights)
    w = pset.weights
    x = float(w @ pset.poses[:, 0])
    y = float(w @ pset.poses[:, 1])
    s = float(w @ np.sin(pset.poses[:, 2]))
    c = float(w @ np.cos(pset.poses[:, 2]))
    theta = 0.0 if math.hypot(s, c) < 1e-12 else math.atan2(s, c)
    return Pose(x, y, normalize_angle(theta))
