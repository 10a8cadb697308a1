"""Pendulum swing-up discretized at a configurable ``dt``, and the corridor MDP.

The pendulum is always integrated at a fixed inner step ``dt_sim`` with the
torque held constant over each environment step, so every ``dt`` samples the
same underlying continuous system. Angle convention: ``theta = 0`` is upright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PendulumParams:
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    max_torque: float = 2.0
    max_speed: float = 8.0
    dt_sim: float = 0.001
    reward_magnitude: float = 100.0
    angle_window: float = 0.2
    velocity_window: float = 1.0
    horizon: float = 10.0  # seconds of simulated time per episode

    def __post_init__(self):
        if not self.max_torque > 0:
            raise ValueError("max_torque must be positive")
        if not (self.angle_window > 0 and self.velocity_window > 0):
            raise ValueError("reward windows must be positive")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be positive")


class PendulumState(NamedTuple):
    theta: float
    theta_dot: float


def wrap_angle(theta):
    """Map angles into [-pi, pi)."""
    return (np.asarray(theta, dtype=np.float64) + math.pi) % _TWO_PI - math.pi


def num_substeps(dt: float, params: PendulumParams) -> int:
    n = int(round(dt / params.dt_sim))
    if n < 1 or abs(n * params.dt_sim - dt) > 1e-9:
        raise ValueError(f"dt={dt} is not an integer multiple of dt_sim={params.dt_sim}")
    return n


def steps_per_episode(dt: float, params: PendulumParams) -> int:
    return int(round(params.horizon / dt))


def integrate(theta: np.ndarray, theta_dot: np.ndarray, torque: np.ndarray, substeps: int,
              params: PendulumParams) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler over ``substeps`` inner steps; arrays are batched elementwise.

    Velocity is updated (and clipped) first, then position with the new
    velocity. The angle is re-wrapped only when it leaves [-pi, pi), so an
    in-range angle is never perturbed by the wrap arithmetic and splitting a
    step into pieces reproduces the same floating-point path.
    """
    h = params.dt_sim
    grav = 3.0 * params.gravity / (2.0 * params.length)
    ctrl = 3.0 / (params.mass * params.length ** 2) * np.clip(torque, -params.max_torque, params.max_torque)
    th = np.array(theta, dtype=np.float64)
    thd = np.array(theta_dot, dtype=np.float64)
    for _ in range(substeps):
        thd = np.clip(thd + (grav * np.sin(th) + ctrl) * h, -params.max_speed, params.max_speed)
        th = th + thd * h
        th = np.where(th >= math.pi, th - _TWO_PI, th)
        th = np.where(th < -math.pi, th + _TWO_PI, th)
    return th, thd


def pendulum_reward(state, params: PendulumParams):
    """Sparse reward rate: ``reward_magnitude`` strictly inside the upright window, else 0."""
    theta, theta_dot = state
    inside = (np.abs(wrap_angle(theta)) < params.angle_window) & (np.abs(theta_dot) < params.velocity_window)
    r = np.where(inside, params.reward_magnitude, 0.0)
    return float(r) if r.ndim == 0 else r


def pendulum_step(state: PendulumState, torque: float, dt: float,
                  params: PendulumParams) -> tuple[PendulumState, float]:
    n = num_substeps(dt, params)
    th, thd = integrate(np.array([state[0]]), np.array([state[1]]), np.array([float(torque)]), n, params)
    new = PendulumState(float(th[0]), float(thd[0]))
    return new, pendulum_reward(new, params)


def pendulum_energy(state, params: PendulumParams):
    theta, theta_dot = state
    inertia = params.mass * params.length ** 2 / 3.0
    return 0.5 * inertia * np.square(theta_dot) + params.mass * params.gravity * params.length / 2.0 * np.cos(theta)


def upright_energy(params: PendulumParams) -> float:
    return params.mass * params.gravity * params.length / 2.0


def observe(theta, theta_dot, params: PendulumParams) -> np.ndarray:
    """Network-facing observation ``(cos theta, sin theta, theta_dot / max_speed)``.

    Works on scalars (returns shape (3,)) or equal-length arrays (shape (B, 3)).
    """
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([np.cos(theta), np.sin(theta), np.asarray(theta_dot, dtype=np.float64) / params.max_speed],
                    axis=-1)


def state_from_observation(obs: np.ndarray, params: PendulumParams) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(obs, dtype=np.float64)
    return np.arctan2(obs[..., 1], obs[..., 0]), obs[..., 2] * params.max_speed


class PendulumEnv:
    """Stateful single-pendulum episode runner at a fixed ``dt``."""

    def __init__(self, params: PendulumParams, dt: float):
        self.params = params
        self.dt = dt
        self.substeps = num_substeps(dt, params)
        self.max_steps = steps_per_episode(dt, params)
        self.state = PendulumState(math.pi, 0.0)
        self.t = 0

    def reset(self, theta: float, theta_dot: float = 0.0) -> np.ndarray:
        self.state = PendulumState(float(wrap_angle(theta)), float(theta_dot))
        self.t = 0
        return observe(*self.state, self.params)

    def step(self, torque: float) -> tuple[np.ndarray, float, bool]:
        """Advance one ``dt``; returns (observation, reward_rate, time_limit_reached)."""
        self.state, reward = pendulum_step(self.state, torque, self.dt, self.params)
        self.t += 1
        return observe(*self.state, self.params), reward, self.t >= self.max_steps


@dataclass(frozen=True)
class CorridorMDP:
    """1-D corridor; the agent moves left toward an absorbing goal in cell 0."""

    num_cells: int
    gamma: float = 0.9
    goal_reward: float = 10.0
    goal_cell: int = 0

    def __post_init__(self):
        if self.num_cells < 2:
            raise ValueError("corridor needs at least two cells")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    def stride_options(self, dt: int) -> range:
        return range(1, int(dt) + 1)


def corridor_step(cell: int, stride: int, mdp: CorridorMDP, dt: int | None = None) -> tuple[int, float]:
    if int(stride) != stride or stride < 1 or (dt is not None and stride > dt):
        raise ValueError(f"invalid stride {stride}" + (f" for dt={dt}" if dt is not None else ""))
    if not 0 <= cell < mdp.num_cells:
        raise ValueError(f"cell {cell} outside corridor of {mdp.num_cells} cells")
    if cell == mdp.goal_cell:
        return cell, 0.0
    nxt = max(mdp.goal_cell, cell - int(stride))
    return nxt, (mdp.goal_reward if nxt == mdp.goal_cell else 0.0)
