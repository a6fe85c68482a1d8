"""Scene data model, dyad-centred frames and spatial feature encoding."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .partition import GroupPartition

TWO_PI = 2.0 * math.pi
MIN_SPEED = 1e-6  # m/frame; slower motion encodes as direction (0, 0)
ORIENTATION = "orientation"
VELOCITY = "velocity"
MODES = (ORIENTATION, VELOCITY)


class ModeError(ValueError):
    pass


def wrap_angle(theta: float) -> float:
    t = math.fmod(theta, TWO_PI)
    if t < 0:
        t += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    return 0.0 if t >= TWO_PI else t


@dataclass(frozen=True)
class Agent:
    id: str
    position: tuple
    heading: Optional[float] = None
    velocity: Optional[tuple] = None

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 2 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"agent {self.id}: position must be two finite numbers")
        object.__setattr__(self, "position", pos)
        if self.heading is not None:
            object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))


@dataclass(frozen=True)
class Scene:
    frame_id: str
    agents: tuple
    ground_truth: Optional[GroupPartition] = None

    def __post_init__(self):
        agents = tuple(self.agents)
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"frame {self.frame_id}: duplicate agent ids")
        if self.ground_truth is not None and not self.ground_truth.universe <= set(ids):
            extra = sorted(self.ground_truth.universe - set(ids))
            raise ValueError(f"frame {self.frame_id}: ground truth names unknown ids {extra}")
        object.__setattr__(self, "agents", agents)

    @property
    def ids(self) -> list:
        return [a.id for a in self.agents]

    def __len__(self):
        return len(self.agents)

    def index(self, agent_id) -> int:
        for k, a in enumerate(self.agents):
            if a.id == agent_id:
                return k
        raise KeyError(f"frame {self.frame_id}: no agent {agent_id!r}")

    def agent(self, agent_id) -> Agent:
        return self.agents[self.index(agent_id)]

    @property
    def mode(self) -> Optional[str]:
        if not self.agents:
            return None
        return VELOCITY if self.agents[0].velocity is not None else ORIENTATION

    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.agents], dtype=np.float64).reshape(-1, 2)

    def directions(self, mode: str) -> np.ndarray:
        """Per-agent unit direction vectors in the world frame, shape (N, 2)."""
        if mode == ORIENTATION:
            if any(a.heading is None for a in self.agents):
                raise ModeError(f"frame {self.frame_id}: orientation mode needs headings")
            th = np.array([a.heading for a in self.agents], dtype=np.float64)
            return np.stack([np.cos(th), np.sin(th)], axis=-1).reshape(-1, 2)
        if mode == VELOCITY:
            if any(a.velocity is None for a in self.agents):
                raise ModeError(f"frame {self.frame_id}: velocity mode needs velocities")
            v = np.array([a.velocity for a in self.agents], dtype=np.float64).reshape(-1, 2)
            speed = np.linalg.norm(v, axis=-1, keepdims=True)
            moving = speed >= MIN_SPEED
            return np.where(moving, v / np.where(moving, speed, 1.0), 0.0)
        raise ModeError(f"unknown feature mode {mode!r}")


@dataclass(frozen=True)
class CanonicalFrame:
    origin: tuple
    rotation: float


def _frame_from_points(pi, pj) -> CanonicalFrame:
    dx, dy = pj[0] - pi[0], pj[1] - pi[1]
    phi = 0.0 if dx == 0.0 and dy == 0.0 else math.atan2(dy, dx)
    return CanonicalFrame(((pi[0] + pj[0]) / 2.0, (pi[1] + pj[1]) / 2.0), phi)


def canonical_frame(scene: Scene, i, j) -> CanonicalFrame:
    """Frame at the midpoint of agents ``i`` and ``j`` with x-axis pointing from i to j."""
    if i == j:
        raise ValueError("a dyad needs two distinct agents")
    return _frame_from_points(scene.agent(i).position, scene.agent(j).position)


def encode_feature(agent: Agent, frame: CanonicalFrame, mode: Optional[str] = None) -> np.ndarray:
    """(x', y', cos, sin) of an agent expressed in ``frame``.

    In velocity mode the last two entries are the unit velocity direction.
    """
    if mode is None:
        mode = VELOCITY if agent.velocity is not None and agent.heading is None else ORIENTATION
    c, s = math.cos(frame.rotation), math.sin(frame.rotation)
    px = agent.position[0] - frame.origin[0]
    py = agent.position[1] - frame.origin[1]
    x, y = c * px + s * py, -s * px + c * py
    if mode == ORIENTATION:
        if agent.heading is None:
            raise ModeError(f"agent {agent.id} has no heading")
        t = agent.heading - frame.rotation
        return np.array([x, y, math.cos(t), math.sin(t)])
    if mode == VELOCITY:
        if agent.velocity is None:
            raise ModeError(f"agent {agent.id} has no velocity")
        vx, vy = agent.velocity
        speed = math.hypot(vx, vy)
        if speed < MIN_SPEED:
            return np.array([x, y, 0.0, 0.0])
        return np.array([x, y, (c * vx + s * vy) / speed, (-s * vx + c * vy) / speed])
    raise ModeError(f"unknown feature mode {mode!r}")


def encode_scene_pairs(positions: np.ndarray, directions: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Encode every agent in the canonical frame of each ordered pair.

    ``positions`` and ``directions`` are (N, 2); ``pairs`` is (P, 2) of
    indices. Returns (P, N, 4). This is the vectorised twin of
    :func:`canonical_frame` + :func:`encode_feature`.
    """
    pi = positions[pairs[:, 0]]
    pj = positions[pairs[:, 1]]
    d = pj - pi
    coincident = (d[:, 0] == 0.0) & (d[:, 1] == 0.0)
    phi = np.where(coincident, 0.0, np.arctan2(d[:, 1], d[:, 0]))
    c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
    origin = (pi + pj) / 2.0
    rel = positions[None, :, :] - origin[:, None, :]
    x = c * rel[..., 0] + s * rel[..., 1]
    y = -s * rel[..., 0] + c * rel[..., 1]
    dx = c * directions[None, :, 0] + s * directions[None, :, 1]
    dy = -s * directions[None, :, 0] + c * directions[None, :, 1]
    return np.stack([x, y, dx, dy], axis=-1)


def _map_agents(scene: Scene, fn) -> Scene:
    return replace(scene, agents=tuple(fn(a) for a in scene.agents))


def augment_rotate180(scene: Scene) -> Scene:
    """Rotate the whole scene by pi about the world origin; labels are untouched."""

    def rot(a: Agent) -> Agent:
        return Agent(
            a.id,
            (-a.position[0], -a.position[1]),
            None if a.heading is None else a.heading + math.pi,
            None if a.velocity is None else (-a.velocity[0], -a.velocity[1]),
        )

    return _map_agents(scene, rot)


def augment_flip_vertical(scene: Scene) -> Scene:
    """Mirror the scene over the world y-axis (x -> -x, heading -> pi - heading)."""

    def flip(a: Agent) -> Agent:
        return Agent(
            a.id,
            (-a.position[0], a.position[1]),
            None if a.heading is None else math.pi - a.heading,
            None if a.velocity is None else (-a.velocity[0], a.velocity[1]),
        )

    return _map_agents(scene, flip)


def derive_velocities(frames: Sequence[Scene]) -> list:
    """Replace headings by frame-to-frame displacement for each agent id.

    Agents not present in the previous frame get a zero velocity.
    """
    out = []
    prev = {}
    for scene in frames:
        agents = []
        for a in scene.agents:
            p0 = prev.get(a.id)
            v = (0.0, 0.0) if p0 is None else (a.position[0] - p0[0], a.position[1] - p0[1])
            agents.append(Agent(a.id, a.position, None, v))
        prev = {a.id: a.position for a in scene.agents}
        out.append(replace(scene, agents=tuple(agents)))
    return out


def rigid_transform(scene: Scene, angle: float, shift) -> Scene:
    """Rotate by ``angle`` about the origin, then translate by ``shift``."""
    c, s = math.cos(angle), math.sin(angle)

    def move(a: Agent) -> Agent:
        x, y = a.position
        vel = None
        if a.velocity is not None:
            vel = (c * a.velocity[0] - s * a.velocity[1], s * a.velocity[0] + c * a.velocity[1])
        return Agent(
            a.id,
            (c * x - s * y + shift[0], s * x + c * y + shift[1]),
            None if a.heading is None else a.heading + angle,
            vel,
        )

    return _map_agents(scene, move)
