"""Pursuit-evasion games on occupancy-grid maps.

A deterministic simulator of a camera-limited pursuer tracking a mobile
evader: ray-cast visibility regions, particle-filter target estimation,
escape-point planning for an adversarial evader, a batch experiment
harness, and a live session service for human play.
"""

from .grid import (Cell, GridMap, MapFormatError, OutOfBoundsError, Pose,
                   builtin_maps, get_map, line_of_sight, load_map,
                   load_map_bundle, load_raster_map, normalize_angle)
from .visibility import (InvalidPoseError, SensorModel, VisibilityRegion,
                         compute_visibility, is_detected, visibility_oracle)
from .particles import (FilterConfig, Particle, ParticleSet, effective_size,
                        estimate, initialize_around, initialize_uniform,
                        maybe_resample, predict, update_weights)
from .planning import (ControlCommand, ImageObservation, NoPathError, Path,
                       PlanningError, follow_path, plan_path, project_to_image,
                       reactive_control, step_unicycle)
from .agents import (AgentSpec, EscapeCandidate, EscapeGoal, HumanPolicy,
                     RandomWanderPolicy, ScriptedPolicy, SmartEvaderPolicy,
                     SmartPursuerPolicy, WorldView, compute_escape_goal,
                     make_policy)
from .engine import (EpisodeResult, Game, GameConfig, SpawnError, TickRecord,
                     run_episode, spawn)

__version__ = "0.1.0"
