"""Live session server: play the evader (or pursuer) against the AI over a
websocket, with the pursuer's visibility region streamed as an overlay.

Protocol (JSON messages, each with a `type` field):
    client -> server: create {config}, join {session_id, role},
                      command {v, omega}, goal {x, y}, pause, resume
    server -> client: created/joined {session_id, role, map, state},
                      state {...}, ack {...}, finished {episode_summary},
                      error {code, message}

Role-scoped frames enforce the information contract: an evader client always
sees the pursuer pose plus its visibility overlay; a pursuer client gets only
what the pursuer senses (detected flag, image observation, filter estimate,
and the evader pose only while detected). Spectators see everything.
"""

from __future__ import annotations

import asyncio
import math
import os
import pathlib
import secrets
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import __version__
from .agents import HumanPolicy
from .engine import Game, GameConfig, SpawnError
from .planning import ControlCommand, clamp, project_to_image
from .visibility import is_detected

DEFAULT_PAUSE_TIMEOUT = 60.0

ROLES = ("pursuer", "evader", "spectator")


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def parse_session_config(data: dict) -> tuple[GameConfig, Optional[str], dict]:
    """Split a `create` payload into the engine config, the human role, and
    service options (real_time_scale, pause_timeout, include_particles)."""
    data = dict(data or {})
    options = {
        "real_time_scale": float(data.pop("real_time_scale", 1.0)),
        "pause_timeout": float(data.pop("pause_timeout", DEFAULT_PAUSE_TIMEOUT)),
        "include_particles": bool(data.pop("include_particles", False)),
    }
    if options["real_time_scale"] <= 0:
        raise ProtocolError("bad_config", "real_time_scale must be positive")
    human_role = data.pop("human_role", None)
    if human_role is not None and human_role not in ("pursuer", "evader"):
        raise ProtocolError("bad_config", f"human_role must be pursuer or evader, got {human_role!r}")
    behaviors = {"pursuer": data.get("pursuer_behavior", "smart"),
                 "evader": data.get("evader_behavior", "random")}
    if human_role is not None:
        behaviors[human_role] = "human"
    if list(behaviors.values()).count("human") > 1:
        raise ProtocolError("bad_config", "at most one human role per session")
    data["pursuer_behavior"] = behaviors["pursuer"]
    data["evader_behavior"] = behaviors["evader"]
    try:
        config = GameConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad_config", str(exc)) from exc
    return config, human_role, options


@dataclass
class Session:
    session_id: str
    game: Game
    human_role: Optional[str]
    real_time_scale: float
    pause_timeout: float
    include_particles: bool
    status: str = "lobby"
    subscribers: dict = field(default_factory=dict)   # WebSocket -> role
    task: Optional[asyncio.Task] = None
    expire_task: Optional[asyncio.Task] = None

    @property
    def human_policy(self) -> Optional[HumanPolicy]:
        if self.human_role == "evader":
            policy = self.game.evader_policy
        elif self.human_role == "pursuer":
            policy = self.game.pursuer_policy
        else:
            return None
        return policy if isinstance(policy, HumanPolicy) else None

    def success_so_far(self) -> float:
        if not self.game.records:
            return 0.0
        return sum(1 for r in self.game.records if r.detected) / len(self.game.records)

    def map_payload(self) -> dict:
        g = self.game.grid
        return {"width": g.width, "height": g.height, "resolution": g.resolution,
                "origin": list(g.origin),
                "occupied": [[int(r), int(c)] for r, c in zip(*g.occupancy.nonzero())]}

    def frame(self, role: str) -> dict:
        game = self.game
        cfg = game.config
        detected = (game.records[-1].detected if game.records
                    else is_detected(game.grid, game.pursuer_pose, game.evader_pose, game.sensor))
        region = game.region_for(game.pursuer_pose)
        msg = {
            "type": "state",
            "tick": game.k,
            "time_left": max(0.0, cfg.t_max - game.k * cfg.dt),
            "detected": detected,
            "success_rate": self.success_so_far(),
            "status": self.status,
            "overlay_cells": [[r, c] for r, c in region.sorted_cells()],
            "pursuer": _pose_payload(game.pursuer_pose),
        }
        estimate = getattr(game.pursuer_policy, "last_estimate", None)
        if role in ("evader", "spectator"):
            msg["evader"] = _pose_payload(game.evader_pose)
            if role == "spectator" and estimate is not None:
                msg["filter_estimate"] = _pose_payload(estimate)
        else:  # pursuer's own senses only
            if detected:
                msg["evader"] = _pose_payload(game.evader_pose)
                try:
                    obs = project_to_image(game.pursuer_pose, game.evader_pose, game.sensor)
                    msg["image_observation"] = {"x_b": obs.x_b, "w_b": obs.w_b,
                                                "w_i": obs.w_i, "depth": obs.depth}
                except ValueError:
                    pass
            if estimate is not None:
                msg["filter_estimate"] = _pose_payload(estimate)
        if self.include_particles and role == "spectator":
            pset = getattr(game.pursuer_policy, "pset", None)
            if pset is not None:
                msg["particles"] = [[x, y, t, w] for x, y, t, w in pset.to_rows()]
        return msg


def _pose_payload(pose) -> dict:
    return {"x": pose.x, "y": pose.y, "theta": pose.theta}


class SessionManager:
    def __init__(self):
        self.sessions: dict[str, Session] = {}
        self.lock = asyncio.Lock()

    async def create(self, payload: dict) -> Session:
        config, human_role, options = parse_session_config(payload)
        try:
            game = Game(config)
        except SpawnError as exc:
            raise ProtocolError("spawn_failed", str(exc)) from exc
        except (KeyError, ValueError) as exc:
            raise ProtocolError("bad_config", str(exc)) from exc
        session = Session(session_id=secrets.token_hex(8), game=game,
                          human_role=human_role,
                          real_time_scale=options["real_time_scale"],
                          pause_timeout=options["pause_timeout"],
                          include_particles=options["include_particles"])
        async with self.lock:
            self.sessions[session.session_id] = session
        return session

    async def get(self, session_id: str) -> Session:
        async with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ProtocolError("not_found", f"unknown session {session_id!r}")
        return session

    async def active_count(self) -> int:
        async with self.lock:
            return sum(1 for s in self.sessions.values() if s.status != "finished")


async def _broadcast(session: Session, message_for) -> None:
    dead = []
    for sock, role in list(session.subscribers.items()):
        try:
            await sock.send_json(message_for(role))
        except Exception:
            dead.append(sock)
    for sock in dead:
        session.subscribers.pop(sock, None)


async def _finish(session: Session) -> None:
    session.status = "finished"
    if session.game.done:
        result = session.game.result()
        summary = {"success_rate": result.success_rate,
                   "config_digest": result.config_digest,
                   "seed": result.seed, "ticks": len(result.ticks)}
    else:
        summary = {"success_rate": session.success_so_far(),
                   "config_digest": session.game.config.digest(),
                   "seed": session.game.config.seed,
                   "ticks": len(session.game.records), "aborted": True}
    await _broadcast(session, lambda role: {"type": "finished", "episode_summary": summary})


async def _tick_loop(session: Session) -> None:
    loop = asyncio.get_running_loop()
    period = session.game.config.dt / session.real_time_scale
    deadline = loop.time() + period
    while not session.game.done:
        await asyncio.sleep(max(0.0, deadline - loop.time()))
        deadline += period
        if session.status != "running":
            deadline = loop.time() + period
            continue
        session.game.step()
        await _broadcast(session, session.frame)
    await _finish(session)


async def _expire_later(session: Session) -> None:
    await asyncio.sleep(session.pause_timeout)
    if session.status == "paused" and not session.subscribers:
        if session.task is not None:
            session.task.cancel()
        await _finish(session)


def create_app(static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="gridpursuit live service", version=__version__)
    manager = SessionManager()
    app.state.manager = manager

    @app.get("/healthz")
    async def healthz():
        return {"version": __version__, "active_sessions": await manager.active_count()}

    @app.websocket("/ws")
    async def ws_endpoint(sock: WebSocket):
        await sock.accept()
        session: Optional[Session] = None
        role = "spectator"
        try:
            while True:
                msg = await sock.receive_json()
                try:
                    session, role = await _handle(manager, sock, session, role, msg)
                except ProtocolError as exc:
                    await sock.send_json({"type": "error", "code": exc.code,
                                          "message": str(exc)})
        except WebSocketDisconnect:
            pass
        finally:
            if session is not None:
                session.subscribers.pop(sock, None)
                # losing the human pauses the game; it expires unless they return
                if role == session.human_role and session.status == "running":
                    session.status = "paused"
                    session.expire_task = asyncio.create_task(_expire_later(session))

    async def _handle(manager: SessionManager, sock: WebSocket,
                      session: Optional[Session], role: str, msg: dict):
        mtype = msg.get("type")
        if mtype == "create":
            session = await manager.create(msg.get("config") or {})
            role = session.human_role or "spectator"
            session.subscribers[sock] = role
            session.status = "running"
            session.task = asyncio.create_task(_tick_loop(session))
            await sock.send_json({"type": "created", "session_id": session.session_id,
                                  "role": role, "map": session.map_payload(),
                                  "state": session.frame(role)})
            return session, role
        if mtype == "join":
            session = await manager.get(msg.get("session_id", ""))
            role = msg.get("role", "spectator")
            if role not in ROLES:
                raise ProtocolError("bad_role", f"role must be one of {ROLES}")
            if role != "spectator" and role != session.human_role:
                raise ProtocolError("bad_role",
                                    f"role {role!r} is not human-controlled in this session")
            session.subscribers[sock] = role
            if session.status == "paused" and role == session.human_role:
                session.status = "running"
            await sock.send_json({"type": "joined", "session_id": session.session_id,
                                  "role": role, "map": session.map_payload(),
                                  "state": session.frame(role)})
            return session, role
        if session is None:
            raise ProtocolError("no_session", "create or join a session first")
        if mtype == "command":
            _require_live(session)
            policy = _require_human(session, role)
            spec = (session.game.evader_spec if role == "evader"
                    else session.game.pursuer_spec)
            v = float(msg.get("v", 0.0))
            omega = float(msg.get("omega", 0.0))
            cmd = ControlCommand(clamp(v, -spec.v_max, spec.v_max),
                                 clamp(omega, -math.pi / 2, math.pi / 2))
            policy.submit_command(cmd)
            await sock.send_json({"type": "ack", "applied": "command",
                                  "clamped": (cmd.v != v or cmd.omega != omega)})
            return session, role
        if mtype == "goal":
            _require_live(session)
            policy = _require_human(session, role)
            x, y = float(msg.get("x", 0.0)), float(msg.get("y", 0.0))
            grid = session.game.grid
            if not grid.is_free_point(x, y):
                raise ProtocolError("bad_goal", f"goal ({x}, {y}) is not in free space")
            policy.submit_goal(x, y)
            await sock.send_json({"type": "ack", "applied": "goal", "clamped": False})
            return session, role
        if mtype == "pause":
            if session.status == "running":
                session.status = "paused"
            await sock.send_json({"type": "ack", "applied": "pause", "clamped": False})
            return session, role
        if mtype == "resume":
            if session.status == "paused":
                session.status = "running"
            await sock.send_json({"type": "ack", "applied": "resume", "clamped": False})
            return session, role
        raise ProtocolError("bad_type", f"unknown message type {mtype!r}")

    def _require_live(session: Session) -> None:
        if session.status == "finished":
            raise ProtocolError("finished", "session is over")

    def _require_human(session: Session, role: str) -> HumanPolicy:
        policy = session.human_policy
        if policy is None or role != session.human_role:
            raise ProtocolError("not_controller", "this connection does not control an agent")
        return policy

    static = static_dir or os.environ.get("GRIDPURSUIT_WEB_DIR")
    if static is None:
        bundled = pathlib.Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static = str(bundled) if bundled.is_dir() else None
    if static and pathlib.Path(static).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static, html=True), name="web")
    return app


app = create_app()
