"""Discrete-tick game loop: spawning, alternating moves, detection scoring.

Each tick is evader-moves-then-pursuer-moves; the pursuer therefore observes
the evader's already-updated pose. The tick's detected flag is taken from the
end-of-tick poses, and the episode success rate is the detected fraction of
the t_max/dt post-move ticks. All randomness flows from one root seed split
into named substreams so components cannot perturb each other.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .agents import AgentSpec, WorldView, make_policy
from .grid import GridMap, Pose, get_map, load_map
from .particles import FilterConfig
from .planning import ControlCommand, clamp_command, disc_collides, step_unicycle
from .visibility import SensorModel, VisibilityRegion, compute_visibility, is_detected

DEFAULT_OMEGA_MAX = math.pi / 2

_STREAMS = {"spawn": 0, "evader": 1, "pursuer": 2, "filter": 3, "detection": 4}


class SpawnError(RuntimeError):
    """Raised when no mutually visible collision-free start pair is found."""


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent named substream of the episode's root seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[name]]))


@dataclass
class GameConfig:
    map_id: str = "complex_hall"
    map_text: Optional[str] = None
    t_max: float = 90.0
    dt: float = 1.0
    v_e: float = 0.4
    speed_ratio: float = 1.0
    pursuer_behavior: str = "smart"
    evader_behavior: str = "random"
    sensor: SensorModel = field(default_factory=SensorModel)
    filter: Optional[FilterConfig] = None
    seed: int = 0
    agent_radius: float = 0.2

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.speed_ratio > 0:
            raise ValueError("speed_ratio must be positive")
        if not self.v_e > 0:
            raise ValueError("v_e must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def v_p(self) -> float:
        return self.v_e * self.speed_ratio

    @property
    def n_ticks(self) -> int:
        return int(self.t_max / self.dt + 1e-9)

    def filter_config(self) -> FilterConfig:
        return self.filter if self.filter is not None else FilterConfig(v_max=self.v_e)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GameConfig":
        data = dict(data)
        if isinstance(data.get("sensor"), dict):
            data["sensor"] = SensorModel(**data["sensor"])
        if isinstance(data.get("filter"), dict):
            data["filter"] = FilterConfig(**data["filter"])
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TickRecord:
    k: int
    pursuer: Pose
    evader: Pose
    detected: bool
    pursuer_mode: str
    filter_estimate: Optional[Pose] = None


@dataclass(frozen=True)
class EpisodeResult:
    ticks: tuple[TickRecord, ...]
    success_rate: float
    config_digest: str
    seed: int

    def trajectory_rows(self) -> list[tuple]:
        return [(r.k, r.pursuer.x, r.pursuer.y, r.pursuer.theta,
                 r.evader.x, r.evader.y, r.evader.theta, int(r.detected))
                for r in self.ticks]

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "ticks": [
                {"k": r.k,
                 "pursuer": [r.pursuer.x, r.pursuer.y, r.pursuer.theta],
                 "evader": [r.evader.x, r.evader.y, r.evader.theta],
                 "detected": r.detected,
                 "pursuer_mode": r.pursuer_mode,
                 "filter_estimate": (None if r.filter_estimate is None else
                                     [r.filter_estimate.x, r.filter_estimate.y,
                                      r.filter_estimate.theta])}
                for r in self.ticks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def resolve_map(config: GameConfig) -> GridMap:
    grid = load_map(config.map_text) if config.map_text is not None else get_map(config.map_id)
    if not grid.is_connected():
        raise ValueError("episode maps must have a single connected free region")
    return grid


def spawn(grid: GridMap, sensor: SensorModel, rng: np.random.Generator,
          pursuer_radius: float = 0.2, evader_radius: float = 0.2,
          max_attempts: int = 10000) -> tuple[Pose, Pose]:
    """Uniform random free poses, rejected until the pair starts mutually
    legal: discs clear of obstacles, not overlapping, evader detected."""
    centers = grid.free_cell_centers()
    res = grid.resolution
    for _ in range(max_attempts):
        pi, ei = rng.integers(0, len(centers), 2)
        off = rng.uniform(-0.5, 0.5, 4) * res
        p_theta, e_theta = rng.uniform(-math.pi, math.pi, 2)
        pursuer = Pose(centers[pi, 0] + off[0], centers[pi, 1] + off[1], p_theta)
        evader = Pose(centers[ei, 0] + off[2], centers[ei, 1] + off[3], e_theta)
        if disc_collides(grid, pursuer.x, pursuer.y, pursuer_radius):
            continue
        if disc_collides(grid, evader.x, evader.y, evader_radius):
            continue
        if math.hypot(pursuer.x - evader.x, pursuer.y - evader.y) < pursuer_radius + evader_radius:
            continue
        if is_detected(grid, pursuer, evader, sensor):
            return pursuer, evader
    raise SpawnError(f"no valid spawn pair within {max_attempts} attempts")


class Game:
    """One episode's mutable state, stepped tick by tick.

    `evader_teleport` is a test hook: called with the tick index about to be
    recorded, a returned pose replaces the evader's move for that tick.
    """

    def __init__(self, config: GameConfig, *,
                 evader_policy=None, pursuer_policy=None,
                 spawn_override: Optional[tuple[Pose, Pose]] = None,
                 evader_teleport: Optional[Callable[[int], Optional[Pose]]] = None):
        self.config = config
        self.grid = resolve_map(config)
        self.sensor = config.sensor
        self.pursuer_spec = AgentSpec("pursuer", config.pursuer_behavior,
                                      v_max=config.v_p, radius=config.agent_radius)
        self.evader_spec = AgentSpec("evader", config.evader_behavior,
                                     v_max=config.v_e, radius=config.agent_radius)
        fc = config.filter_config()
        self.evader_policy = evader_policy or make_policy(
            self.evader_spec, self.grid, self.sensor, fc, stream_rng(config.seed, "evader"))
        if pursuer_policy is not None:
            self.pursuer_policy = pursuer_policy
        else:
            # a smart (or human-with-perception) pursuer only draws filter
            # randomness, so it gets the filter substream
            name = "filter" if config.pursuer_behavior in ("smart", "human") else "pursuer"
            self.pursuer_policy = make_policy(
                self.pursuer_spec, self.grid, self.sensor, fc, stream_rng(config.seed, name))
        self._detection_rng = stream_rng(config.seed, "detection")
        self._teleport = evader_teleport
        if spawn_override is not None:
            self.pursuer_pose, self.evader_pose = spawn_override
        else:
            self.pursuer_pose, self.evader_pose = spawn(
                self.grid, self.sensor, stream_rng(config.seed, "spawn"),
                self.pursuer_spec.radius, self.evader_spec.radius)
        self.k = 0
        self.records: list[TickRecord] = []
        self._region_key = None
        self._region_val = None

    # the pursuer often holds its pose across ticks, so one slot suffices
    def region_for(self, pose: Pose) -> VisibilityRegion:
        key = (pose.x, pose.y, pose.theta)
        if key != self._region_key:
            self._region_val = compute_visibility(self.grid, pose, self.sensor)
            self._region_key = key
        return self._region_val

    @property
    def done(self) -> bool:
        return self.k >= self.config.n_ticks

    def _clamped_move(self, pose: Pose, cmd: ControlCommand, radius: float,
                      other: Pose, other_radius: float) -> Pose:
        new = step_unicycle(pose, cmd, self.config.dt, self.grid, radius)
        if math.hypot(new.x - other.x, new.y - other.y) < radius + other_radius:
            return Pose(pose.x, pose.y, new.theta)
        return new

    def step(self, evader_cmd: Optional[ControlCommand] = None,
             pursuer_cmd: Optional[ControlCommand] = None) -> TickRecord:
        if self.done:
            raise RuntimeError("game is over")
        cfg = self.config
        tick = self.k + 1
        pursuer = self.pursuer_pose
        evader = self.evader_pose
        region_fn = lambda: self.region_for(pursuer)  # noqa: E731

        det_start = is_detected(self.grid, pursuer, evader, self.sensor)
        ev_view = WorldView(tick=self.k, dt=cfg.dt, grid=self.grid, sensor=self.sensor,
                            self_pose=evader, spec=self.evader_spec, detected=det_start,
                            pursuer_pose=pursuer, evader_pose=evader, region_fn=region_fn)
        cmd = evader_cmd if evader_cmd is not None else self.evader_policy.command(ev_view)
        cmd = clamp_command(cmd, cfg.v_e, DEFAULT_OMEGA_MAX)
        teleported = self._teleport(tick) if self._teleport is not None else None
        if teleported is not None:
            new_evader = teleported
        else:
            new_evader = self._clamped_move(evader, cmd, self.evader_spec.radius,
                                            pursuer, self.pursuer_spec.radius)

        observed = is_detected(self.grid, pursuer, new_evader, self.sensor)
        if self.sensor.detection_failure_prob > 0:
            if self._detection_rng.random() < self.sensor.detection_failure_prob:
                observed = False
        pu_view = WorldView(tick=self.k, dt=cfg.dt, grid=self.grid, sensor=self.sensor,
                            self_pose=pursuer, spec=self.pursuer_spec, detected=observed,
                            pursuer_pose=pursuer,
                            evader_pose=new_evader if observed else None,
                            region_fn=region_fn)
        cmd = pursuer_cmd if pursuer_cmd is not None else self.pursuer_policy.command(pu_view)
        cmd = clamp_command(cmd, cfg.v_p, DEFAULT_OMEGA_MAX)
        new_pursuer = self._clamped_move(pursuer, cmd, self.pursuer_spec.radius,
                                         new_evader, self.evader_spec.radius)

        detected = is_detected(self.grid, new_pursuer, new_evader, self.sensor)
        record = TickRecord(
            k=tick, pursuer=new_pursuer, evader=new_evader, detected=detected,
            pursuer_mode=getattr(self.pursuer_policy, "last_mode", "scripted"),
            filter_estimate=getattr(self.pursuer_policy, "last_estimate", None))
        self.pursuer_pose = new_pursuer
        self.evader_pose = new_evader
        self.records.append(record)
        self.k = tick
        return record

    def result(self) -> EpisodeResult:
        if not self.done:
            raise RuntimeError("episode still running")
        detected = sum(1 for r in self.records if r.detected)
        return EpisodeResult(ticks=tuple(self.records),
                             success_rate=detected / len(self.records),
                             config_digest=self.config.digest(),
                             seed=self.config.seed)

    def run(self) -> EpisodeResult:
        while not self.done:
            self.step()
        return self.result()


def run_episode(config: GameConfig, *, evader_policy=None, pursuer_policy=None,
                spawn_override: Optional[tuple[Pose, Pose]] = None,
                evader_teleport: Optional[Callable[[int], Optional[Pose]]] = None) -> EpisodeResult:
    return Game(config, evader_policy=evader_policy, pursuer_policy=pursuer_policy,
                spawn_override=spawn_override, evader_teleport=evader_teleport).run()
