"""Backup-length rules and n-step target windows over a mixed dataset.

``naive`` always backs up one transition. ``adaptive_n`` backs up ``N / dt``
transitions so every target spans ``N`` seconds of physical time, drawing
between floor and ceil when the ratio is fractional. ``max_n`` uses the
adaptive length of the finest discretization for every ``dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..core import DiscountConfig, MixedDataset, Trajectory, per_step_discount

RULES = ("naive", "adaptive_n", "max_n")
_INT_TOL = 1e-9


@dataclass(frozen=True)
class TargetSpec:
    rule: str = "adaptive_n"
    N: float | None = None  # physical seconds; None binds to the dataset's coarsest dt
    cql_alpha: float = 5.0
    condition_on_dt: bool = True
    num_cql_action_samples: int = 10  # per source: uniform and actor
    cql_at_bootstrap: bool = True
    double_q: bool = True

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown target rule {self.rule!r}; expected one of {RULES}")
        if self.N is not None and not self.N > 0:
            raise ValueError("N must be positive")
        if self.cql_alpha < 0:
            raise ValueError("cql_alpha must be non-negative")
        if self.num_cql_action_samples < 1:
            raise ValueError("num_cql_action_samples must be positive")

    def horizon(self, dataset: MixedDataset) -> float:
        N = dataset.dt_max if self.N is None else float(self.N)
        if self.rule == "adaptive_n" and N < dataset.dt_max * (1 - _INT_TOL):
            raise ValueError(f"N={N} is below the coarsest dt {dataset.dt_max}")
        return N


def _split_ratio(x):
    """Integer part and fractional part of ``x``; near-integers snap to an exact integer."""
    x = np.asarray(x, dtype=np.float64)
    nearest = np.round(x)
    snap = np.abs(x - nearest) < _INT_TOL
    lo = np.where(snap, nearest, np.floor(x))
    frac = np.where(snap, 0.0, x - lo)
    return lo.astype(np.int64), frac


def adaptive_backup_length(N: float, dt: float, rng: np.random.Generator) -> int:
    """Sample the number of backup steps for one target.

    Returns ``ceil(N/dt)`` with probability ``frac(N/dt)`` and ``floor(N/dt)``
    otherwise (never below 1). Integer ratios draw nothing from ``rng``.
    """
    if not (N > 0 and dt > 0):
        raise ValueError("N and dt must be positive")
    x = N / dt
    n = round(x)
    if abs(x - n) >= _INT_TOL:
        n = math.floor(x)
        if rng.random() < x - n:
            n += 1
    return max(int(n), 1)


def max_backup_length(N: float, dataset: MixedDataset) -> int:
    return max(int(round(N / dataset.delta_set[0])), 1)


def backup_lengths(rule: str, N: float, dts: np.ndarray, rng: np.random.Generator, n_max: int) -> np.ndarray:
    """Vectorized backup lengths for a batch whose elements have discretizations ``dts``.

    Random numbers are drawn only when some ratio is fractional, so a batch of
    exact ratios consumes the same stream as the naive rule.
    """
    if rule == "naive":
        return np.ones(len(dts), dtype=np.int64)
    if rule == "max_n":
        return np.full(len(dts), n_max, dtype=np.int64)
    lo, frac = _split_ratio(N / np.asarray(dts, dtype=np.float64))
    n = lo.copy()
    if np.any(frac > 0):
        n += rng.random(len(dts)) < frac
    return np.maximum(n, 1)


def nstep_backup(traj: Trajectory, start: int, n: int, bootstrap_value, cfg: DiscountConfig) -> float:
    """Discounted ``n``-step target for one trajectory position.

    ``bootstrap_value(next_state)`` evaluates the value at the bootstrap
    state, e.g. the min of two target Q-networks at an action drawn from the
    actor (see :func:`mixedfreq.offline_rl.agent.target_value`). A terminal
    inside the window ends the sum and drops the bootstrap; the trajectory end
    shortens the window and bootstraps at the last stored next state.
    """
    T = len(traj)
    if not 0 <= start < T:
        raise IndexError(f"start={start} outside trajectory of length {T}")
    if n < 1:
        raise ValueError("n must be positive")
    g = per_step_discount(cfg, traj.dt)
    c = cfg.reward_scale(traj.dt)
    total, discount = 0.0, 1.0
    for j in range(n):
        k = start + j
        if k >= T:
            break
        total += discount * c * float(traj.rewards[k])
        discount *= g
        if traj.terminals[k]:
            return total
        last = k
    return total + discount * float(bootstrap_value(traj.next_states[last]))


class FlatData:
    """Column view of a dataset with per-transition window bookkeeping.

    ``stop[i]`` is the exclusive end of the usable window from ``i``: one past
    the first terminal at or after ``i``, or the trajectory end.
    """

    def __init__(self, dataset: MixedDataset):
        trajs = dataset.trajectories
        self.dataset = dataset
        self.obs = np.concatenate([t.states for t in trajs])
        self.actions = np.concatenate([t.actions for t in trajs])
        self.rewards = np.concatenate([t.rewards for t in trajs])
        self.next_obs = np.concatenate([t.next_states for t in trajs])
        self.terminals = np.concatenate([t.terminals for t in trajs])
        self.dt = np.concatenate([np.full(len(t), t.dt) for t in trajs])
        self.traj_index = np.concatenate([np.full(len(t), i) for i, t in enumerate(trajs)])
        self.position = np.concatenate([np.arange(len(t)) for t in trajs])
        starts = np.cumsum([0] + [len(t) for t in trajs])
        self.end = np.concatenate([np.full(len(t), starts[i + 1]) for i, t in enumerate(trajs)])
        stop = np.empty(len(self.rewards), dtype=np.int64)
        ends_in_terminal = np.zeros(len(self.rewards), dtype=bool)
        for i, t in enumerate(trajs):
            nxt, term = int(starts[i + 1]), False
            for k in range(starts[i + 1] - 1, starts[i] - 1, -1):
                if self.terminals[k]:
                    nxt, term = k + 1, True
                stop[k], ends_in_terminal[k] = nxt, term
        self.stop = stop
        self.stop_is_terminal = ends_in_terminal

    def __len__(self) -> int:
        return len(self.rewards)


class Batch(NamedTuple):
    """Sampled n-step windows. ``cql_*`` is the state-action where the conservative term applies."""

    index: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    dt: np.ndarray
    n: np.ndarray
    reward_sum: np.ndarray
    boot_obs: np.ndarray
    boot_discount: np.ndarray
    cql_obs: np.ndarray
    cql_actions: np.ndarray


def make_batch(flat: FlatData, index: np.ndarray, n: np.ndarray, cfg: DiscountConfig,
               cql_at_bootstrap: bool = True) -> Batch:
    index = np.asarray(index, dtype=np.int64)
    m = np.minimum(np.asarray(n, dtype=np.int64), flat.stop[index] - index)
    terminated = flat.stop_is_terminal[index] & (index + m == flat.stop[index])
    dts = flat.dt[index]
    if cfg.scale_discount_by_dt:
        if np.any(dts > cfg.dt_max * (1 + 1e-9)):
            raise ValueError("batch contains dt larger than dt_max")
        g = cfg.gamma_base ** (dts / cfg.dt_max)
    else:
        g = np.full(len(index), cfg.gamma_base)
    c = dts if cfg.scale_rewards_by_dt else np.ones(len(index))
    reward_sum = np.zeros(len(index))
    discount = np.ones(len(index))
    for j in range(int(m.max())):
        live = j < m
        reward_sum += np.where(live, discount * c * flat.rewards[np.where(live, index + j, index)], 0.0)
        discount = np.where(live, discount * g, discount)
    last = index + m - 1
    boot_discount = np.where(terminated, 0.0, discount)
    if cql_at_bootstrap:
        j_cql = np.where(terminated | (index + m >= flat.end[index]), last, index + m)
    else:
        j_cql = index
    return Batch(index, flat.obs[index], flat.actions[index], dts, m, reward_sum, flat.next_obs[last],
                 boot_discount, flat.obs[j_cql], flat.actions[j_cql])

