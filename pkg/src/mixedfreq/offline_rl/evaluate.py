"""Policy evaluation on the pendulum and Q-value maps over its state space."""

from __future__ import annotations

import math
from typing import Callable, Union

import numpy as np

from ..core import DiscountConfig
from ..datagen import swingup_action
from ..envs import PendulumParams, integrate, num_substeps, observe, pendulum_reward, state_from_observation, \
    steps_per_episode, wrap_angle
from .agent import Actor, QPair, deterministic_action, q_values, state_input

Policy = Union[Actor, Callable[[np.ndarray, float], np.ndarray]]
START_JITTER = 0.05
STARTS = ("uniform", "hanging")


def _act(policy: Policy, obs: np.ndarray, dt: float, dt_max: float) -> np.ndarray:
    if isinstance(policy, Actor):
        x = state_input(obs, dt, dt_max, policy.condition_on_dt)
        return deterministic_action(policy, x)[:, 0]
    return np.asarray(policy(obs, dt), dtype=np.float64).reshape(len(obs))


def evaluate_episodes(policy: Policy, params: PendulumParams, dt: float, episodes: int = 5,
                      cfg: DiscountConfig | None = None, seed: int = 0, start: str = "uniform") -> np.ndarray:
    """Normalized return of each episode, run in lockstep.

    ``start="uniform"`` draws the initial angle from [-pi, pi) and velocity
    from [-1, 1] like the collector; ``"hanging"`` starts within
    ``START_JITTER`` of the bottom at rest. 100 means the reward window was
    occupied for the whole horizon. Actors act with their mean action.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if start not in STARTS:
        raise ValueError(f"unknown start {start!r}; expected one of {STARTS}")
    dt_max = cfg.dt_max if cfg is not None else dt
    rng = np.random.default_rng(seed)
    if start == "uniform":
        theta = wrap_angle(rng.uniform(-math.pi, math.pi, size=episodes))
        theta_dot = rng.uniform(-1.0, 1.0, size=episodes)
    else:
        theta = wrap_angle(math.pi + rng.uniform(-START_JITTER, START_JITTER, size=episodes))
        theta_dot = np.zeros(episodes)
    substeps = num_substeps(dt, params)
    T = steps_per_episode(dt, params)
    earned = np.zeros(episodes)
    for _ in range(T):
        u = _act(policy, observe(theta, theta_dot, params), dt, dt_max)
        theta, theta_dot = integrate(theta, theta_dot, u, substeps, params)
        earned += pendulum_reward((theta, theta_dot), params) * dt
    return 100.0 * earned / (params.reward_magnitude * T * dt)


def evaluate(policy: Policy, params: PendulumParams, dt: float, episodes: int = 5,
             cfg: DiscountConfig | None = None, seed: int = 0, start: str = "uniform") -> float:
    return float(np.mean(evaluate_episodes(policy, params, dt, episodes, cfg, seed, start)))


def swingup_policy(params: PendulumParams) -> Callable[[np.ndarray, float], np.ndarray]:
    """The noise-free scripted controller, usable wherever an actor is expected."""
    def policy(obs, dt):
        theta, theta_dot = state_from_observation(obs, params)
        return swingup_action((theta, theta_dot), params)
    return policy


def q_heatmap(actor: Actor, q: QPair, params: PendulumParams, dt: float, cfg: DiscountConfig,
              resolution: int = 41) -> np.ndarray:
    """Rows ``(theta, theta_dot, Q(s, pi(s)))`` over an angle x velocity grid."""
    th, thd = np.meshgrid(np.linspace(-math.pi, math.pi, resolution),
                          np.linspace(-params.max_speed, params.max_speed, resolution))
    th, thd = th.ravel(), thd.ravel()
    x = state_input(observe(th, thd, params), dt, cfg.dt_max, actor.condition_on_dt)
    a = deterministic_action(actor, x)
    v = 0.5 * (q_values(q.q1, x, a, actor.action_scale) + q_values(q.q2, x, a, actor.action_scale))
    return np.stack([th, thd, v], axis=1)
