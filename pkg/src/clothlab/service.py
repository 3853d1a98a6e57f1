"""Live-session backend for the demonstration UI.

Transport: WebSocket at /ws carrying newline-free JSON text messages,
client -> server {type: create|action|save|suggest|reset, session, payload},
server -> client {type: frame|saved|diagnostic|error, session, payload}.
Frames ship the binary mask (base64-packed bits) plus scalar metrics; the
client does all rendering. Static UI assets are served from the same port.
"""

from __future__ import annotations

import base64
import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .dataset import TrajectoryRecord, read_dataset, write_dataset
from .env import ClothEnv
from .errors import ClothLabError, NoClothError
from .masks import MaskImage, pack_mask_bits, pixel_to_normalized
from .planner import ActionConstraint, plan
from .sim import GARMENT_NAMES, PnPAction

DEFAULT_PORT = 8741


@dataclass
class Session:
    id: str
    env: ClothEnv
    garment: str
    seed: int
    difficulty: float
    mode: str
    rng: np.random.Generator
    masks: list = field(default_factory=list)      # (R, R) uint8 per step
    actions: list = field(default_factory=list)    # (4,) float per step
    rewards: list = field(default_factory=list)
    miss: list = field(default_factory=list)
    step: int = 0
    last: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionManager:
    """All session state; transport-independent so tests can drive it directly."""

    def __init__(self, cfg: ExperimentConfig | None = None):
        self.cfg = cfg or ExperimentConfig()
        self.sessions: dict[str, Session] = {}
        self._models = {}
        self._lock = threading.Lock()

    # -------------------------------------------------------------- commands

    def create(self, garment: str, seed: int, difficulty: float, mode: str) -> tuple:
        if garment not in GARMENT_NAMES:
            raise ClothLabError(f"unknown garment {garment!r}")
        if mode not in ("demo", "watch-planner"):
            raise ClothLabError(f"unknown mode {mode!r}")
        env = ClothEnv(garment, resolution=self.cfg.resolution, sim_params=self.cfg.sim,
                       window=self.cfg.window, reward_params=self.cfg.rewards,
                       iou_params=self.cfg.iou)
        session = Session(
            id=uuid.uuid4().hex[:12], env=env, garment=garment, seed=int(seed),
            difficulty=float(difficulty), mode=mode,
            rng=np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0xAC710))))
        self._reset_episode(session)
        with self._lock:
            self.sessions[session.id] = session
        return session.id, session.last

    def _reset_episode(self, session: Session):
        result = session.env.reset(session.seed, session.difficulty)
        session.masks = [result.mask.bits.copy()]
        session.actions = [np.zeros(4)]
        session.rewards = [float(result.reward)]
        session.miss = [1]
        session.step = 0
        session.last = self._frame(session, result)

    def _frame(self, session: Session, result) -> dict:
        return {
            "step": session.step,
            "nc": float(result.nc),
            "max_iou": float(result.iou),
            "reward": float(result.reward),
            "miss": bool(result.miss),
            "mask": {
                "w": result.mask.resolution,
                "h": result.mask.resolution,
                "bits": base64.b64encode(pack_mask_bits(result.mask.bits)).decode("ascii"),
            },
        }

    def get(self, session_id) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ClothLabError(f"unknown session {session_id!r}")
        return session

    def submit_action(self, session_id: str, pick_px, place_px) -> dict:
        session = self.get(session_id)
        res = session.env.resolution
        for name, px in (("pick", pick_px), ("place", place_px)):
            if (not isinstance(px, (list, tuple)) or len(px) != 2
                    or not all(isinstance(v, (int, float)) for v in px)):
                raise ClothLabError(f"{name} must be a [row, col] pair")
            if not (0 <= px[0] < res and 0 <= px[1] < res):
                raise ClothLabError(f"{name} pixel {px} outside the {res}x{res} window")
        with session.lock:
            pick = pixel_to_normalized(np.asarray(pick_px, dtype=np.float64), res)
            place = pixel_to_normalized(np.asarray(place_px, dtype=np.float64), res)
            action = PnPAction(tuple(pick), tuple(place))
            result = session.env.step(action, session.rng)
            session.step += 1
            session.masks.append(result.mask.bits.copy())
            session.actions.append(action.as_array())
            session.rewards.append(float(result.reward))
            session.miss.append(1 if result.miss else 0)
            session.last = self._frame(session, result)
            return session.last

    def reset(self, session_id: str, seed=None, difficulty=None) -> dict:
        session = self.get(session_id)
        with session.lock:
            if seed is not None:
                session.seed = int(seed)
                session.rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=(session.seed, 0xAC710)))
            if difficulty is not None:
                session.difficulty = float(difficulty)
            self._reset_episode(session)
            return session.last

    def save_demonstration(self, session_id: str, path: str) -> int:
        session = self.get(session_id)
        with session.lock:
            if session.step == 0:
                raise ClothLabError("episode log is empty; nothing to save")
            record = TrajectoryRecord(
                masks=np.asarray(session.masks, dtype=np.uint8),
                actions=np.asarray(session.actions),
                rewards=np.asarray(session.rewards, dtype=np.float32).astype(np.float64),
                miss=np.asarray(session.miss, dtype=np.uint8),
                goal_mask=session.env.goal_mask.bits.copy(),
                policy_tag="human", garment=session.garment, seed=session.seed)
            existing = read_dataset(path) if os.path.exists(path) else []
            existing.append(record)
            write_dataset(existing, path)
            return len(existing)

    def planner_suggest(self, session_id: str, checkpoint: str) -> dict:
        from .rssm.model import GoalConditionedRSSM

        session = self.get(session_id)
        with session.lock:
            obs_bits = session.masks[-1]
            if not obs_bits.any():
                raise NoClothError("no cloth visible in the window")
            if checkpoint not in self._models:
                self._models[checkpoint] = GoalConditionedRSSM.load(checkpoint)
            model = self._models[checkpoint]
            window = session.env.goal_mask
            constraint = ActionConstraint(
                MaskImage(obs_bits.copy(), window.window_side, window.window_center),
                MaskImage(np.ones_like(obs_bits), window.window_side, window.window_center))
            history = min(len(session.masks), 8)
            _, diag = plan(model,
                           np.asarray(session.masks[-history:]),
                           np.asarray(session.actions[-history:]),
                           session.env.goal_mask.bits.reshape(-1),
                           constraint, self.cfg.planner, collect_diagnostics=True)
            return {
                "candidates": [[float(v) for v in row] for row in diag.candidates],
                "returns": [float(v) for v in diag.returns],
                "iter_means": [[float(v) for v in row] for row in diag.iter_means],
            }

    # ------------------------------------------------------------- dispatch

    def handle(self, message: dict) -> dict:
        """Validate and route one wire message; malformed input never mutates
        any session."""
        if not isinstance(message, dict):
            return _error(None, "message must be a JSON object")
        mtype = message.get("type")
        session_id = message.get("session")
        payload = message.get("payload") or {}
        if not isinstance(payload, dict):
            return _error(session_id, "payload must be an object")
        try:
            if mtype == "create":
                garment = payload.get("garment", "square")
                seed = payload.get("seed", 0)
                difficulty = payload.get("difficulty", 1.0)
                mode = payload.get("mode", "demo")
                if not isinstance(seed, (int, float)) or not isinstance(difficulty, (int, float)):
                    raise ClothLabError("seed and difficulty must be numbers")
                sid, frame = self.create(str(garment), int(seed), float(difficulty), str(mode))
                return {"type": "frame", "session": sid, "payload": frame}
            if mtype == "action":
                frame = self.submit_action(session_id, payload.get("pick"), payload.get("place"))
                return {"type": "frame", "session": session_id, "payload": frame}
            if mtype == "reset":
                frame = self.reset(session_id, payload.get("seed"), payload.get("difficulty"))
                return {"type": "frame", "session": session_id, "payload": frame}
            if mtype == "save":
                path = payload.get("path")
                if not isinstance(path, str) or not path:
                    raise ClothLabError("save needs a 'path' string")
                count = self.save_demonstration(session_id, path)
                return {"type": "saved", "session": session_id, "payload": {"count": count}}
            if mtype == "suggest":
                checkpoint = payload.get("checkpoint")
                if not isinstance(checkpoint, str) or not checkpoint:
                    raise ClothLabError("suggest needs a 'checkpoint' path")
                diag = self.planner_suggest(session_id, checkpoint)
                return {"type": "diagnostic", "session": session_id, "payload": diag}
            return _error(session_id, f"unknown message type {mtype!r}")
        except (ClothLabError, FileNotFoundError, ValueError) as exc:
            return _error(session_id, str(exc))


def _error(session_id, reason: str) -> dict:
    return {"type": "error", "session": session_id, "payload": {"reason": reason}}


def build_app(cfg: ExperimentConfig | None = None, assets_dir: str | None = None):
    """FastAPI application exposing /ws and the static UI."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="clothlab session service")
    manager = SessionManager(cfg)
    app.state.manager = manager

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                try:
                    message = await ws.receive_json()
                except WebSocketDisconnect:
                    raise
                except Exception:
                    await ws.send_json(_error(None, "malformed JSON payload"))
                    continue
                await ws.send_json(manager.handle(message))
        except WebSocketDisconnect:
            return

    if assets_dir is None:
        assets_dir = os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist")
    assets_dir = os.path.abspath(assets_dir)
    if os.path.isdir(assets_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=assets_dir, html=True), name="ui")
    return app


def serve(cfg: ExperimentConfig | None = None, port: int = DEFAULT_PORT,
          assets_dir: str | None = None):
    import uvicorn

    uvicorn.run(build_app(cfg, assets_dir), host="127.0.0.1", port=port, log_level="warning")
