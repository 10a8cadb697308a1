"""Scripted behavior policies and per-``dt`` dataset collection.

The collector stands in for replay buffers produced by an online learner: an
energy-shaping swing-up controller with Gaussian exploration noise, optionally
mixed with uniform random actions.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import MixedDataset, Trajectory, canonical_dt, merge_datasets
from .envs import (PendulumParams, integrate, num_substeps, observe, pendulum_energy, pendulum_reward,
                   steps_per_episode, upright_energy, wrap_angle)

log = logging.getLogger(__name__)

POLICY_KINDS = ("energy_swingup_pd", "uniform_random", "epsilon_mixture")


@dataclass(frozen=True)
class BehaviorPolicy:
    kind: str = "energy_swingup_pd"
    noise_std: float = 0.3
    epsilon: float = 0.0
    k_energy: float = 2.0
    k_p: float = 12.0
    k_d: float = 3.0
    pd_region: float = 0.4

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown behavior policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class CollectionSpec:
    dts: tuple[float, ...] = (0.02, 0.01, 0.005)
    transitions_per_dt: int = 50_000
    seed: int = 0
    policy: BehaviorPolicy = field(default_factory=BehaviorPolicy)
    # relative tolerance for the per-dt reward balance check
    balance_tolerance: float = 0.2
    episodes_in_parallel: int = 8

    def __post_init__(self):
        dts = tuple(canonical_dt(d) for d in self.dts)
        if not dts:
            raise ValueError("dts must be non-empty")
        if any(d <= 0 for d in dts):
            raise ValueError("dts must be positive")
        if len(set(dts)) != len(dts):
            raise ValueError(f"dts must be distinct, got {self.dts}")
        if self.transitions_per_dt < 1:
            raise ValueError("transitions_per_dt must be positive")
        object.__setattr__(self, "dts", dts)


def swingup_action(state, params: PendulumParams, noise_std: float = 0.0, rng=None,
                   k_energy: float = 2.0, k_p: float = 12.0, k_d: float = 3.0, pd_region: float = 0.4):
    """Energy pumping far from upright, PD stabilization near it, plus Gaussian noise.

    ``state`` is ``(theta, theta_dot)`` as scalars or equal-length arrays.
    """
    theta, theta_dot = (np.asarray(x, dtype=np.float64) for x in state)
    th = wrap_angle(theta)
    pump = k_energy * theta_dot * (upright_energy(params) - pendulum_energy((theta, theta_dot), params))
    pd = -k_p * th - k_d * theta_dot
    u = np.where(np.abs(th) < pd_region, pd, pump)
    if noise_std > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_std > 0")
        u = u + rng.normal(0.0, noise_std, size=u.shape)
    u = np.clip(u, -params.max_torque, params.max_torque)
    return float(u) if u.ndim == 0 else u


def behavior_action(policy: BehaviorPolicy, theta, theta_dot, params: PendulumParams, rng) -> np.ndarray:
    n = len(theta)
    if policy.kind == "uniform_random":
        return rng.uniform(-params.max_torque, params.max_torque, size=n)
    u = swingup_action((theta, theta_dot), params, policy.noise_std, rng,
                       policy.k_energy, policy.k_p, policy.k_d, policy.pd_region)
    if policy.kind == "epsilon_mixture":
        explore = rng.random(n) < policy.epsilon
        u = np.where(explore, rng.uniform(-params.max_torque, params.max_torque, size=n), u)
    return u


def _rollout_group(dt: float, count: int, spec: CollectionSpec, params: PendulumParams,
                   rng: np.random.Generator) -> list[Trajectory]:
    """Roll episodes in lockstep batches until ``count`` transitions are stored."""
    T = steps_per_episode(dt, params)
    substeps = num_substeps(dt, params)
    trajs: list[Trajectory] = []
    stored, episode = 0, 0
    while stored < count:
        remaining = count - stored
        batch = min(spec.episodes_in_parallel, math.ceil(remaining / T))
        theta = rng.uniform(-math.pi, math.pi, size=batch)
        theta_dot = rng.uniform(-1.0, 1.0, size=batch)
        obs = np.empty((T + 1, batch, 3))
        acts = np.empty((T, batch))
        rews = np.empty((T, batch))
        obs[0] = observe(theta, theta_dot, params)
        for k in range(T):
            u = behavior_action(spec.policy, theta, theta_dot, params, rng)
            theta, theta_dot = integrate(theta, theta_dot, u, substeps, params)
            acts[k] = u
            rews[k] = pendulum_reward((theta, theta_dot), params)
            obs[k + 1] = observe(theta, theta_dot, params)
        for b in range(batch):
            length = min(T, count - stored)
            if length <= 0:
                break
            trajs.append(Trajectory(
                dt=dt, states=obs[:length, b], actions=acts[:length, b, None], rewards=rews[:length, b],
                next_states=obs[1:length + 1, b], terminals=np.zeros(length, dtype=bool),
                id=f"dt{dt:g}-ep{episode:05d}",
            ))
            stored += length
            episode += 1
    return trajs


def success_fraction(traj: Trajectory, params: PendulumParams) -> float:
    """Fraction of the trajectory's physical time spent earning reward."""
    return float(np.mean(traj.rewards) / params.reward_magnitude)


def group_quality(dataset: MixedDataset, params: PendulumParams) -> dict[float, float]:
    return {dt: float(np.mean([success_fraction(t, params) for t in dataset.group(dt)]))
            for dt in dataset.delta_set}


def collect_dataset(spec: CollectionSpec, params: PendulumParams) -> MixedDataset:
    """Collect ``transitions_per_dt`` transitions for every ``dt``.

    Each group draws from its own stream spawned from ``spec.seed``, so
    groups can be collected in any order or in parallel without changing the
    output.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(len(spec.dts))
    parts = []
    for dt, ss in zip(spec.dts, streams):
        trajs = _rollout_group(dt, spec.transitions_per_dt, spec, params, np.random.default_rng(ss))
        parts.append(MixedDataset(tuple(trajs)))
        log.info("collected %d transitions at dt=%g (%d trajectories)", spec.transitions_per_dt, dt, len(trajs))
    dataset = merge_datasets(parts)
    check_balance(dataset, params, spec.balance_tolerance)
    return dataset


def check_balance(dataset: MixedDataset, params: PendulumParams, tolerance: float) -> bool:
    """Warn when per-dt mean success fractions are not within ``tolerance`` of each other."""
    quality = group_quality(dataset, params)
    vals = np.array(list(quality.values()))
    ok = bool(vals.max() <= (1.0 + tolerance) * vals.min()) if vals.min() > 0 else bool(vals.max() == 0)
    if not ok:
        warnings.warn(f"behavior data quality differs across dt beyond {tolerance:.0%}: {quality}",
                      RuntimeWarning, stacklevel=2)
    return ok
