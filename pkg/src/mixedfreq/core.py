"""Domain types for discretized trajectories and the discount arithmetic.

Rewards are stored as instantaneous rates ``r(s, a)``; the ``r * dt`` scaling
is applied when returns or targets are computed, controlled by
:class:`DiscountConfig`, so one dataset serves scaled and unscaled runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DT_DECIMALS = 9


def canonical_dt(dt: float) -> float:
    """Round a discretization to the precision used for grouping."""
    return round(float(dt), DT_DECIMALS)


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(len(arr), -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered transitions sharing one discretization ``dt``.

    Stored column-wise. A trajectory that ends without a terminal flag was cut
    by a time limit and may be bootstrapped from its final ``next_state``.
    """

    dt: float
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    id: str

    def __post_init__(self):
        dt = canonical_dt(self.dt)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "dt", dt)
        states = _frozen(self.states, 2, "states")
        next_states = _frozen(self.next_states, 2, "next_states")
        actions = _frozen(self.actions, 2, "actions")
        rewards = _frozen(self.rewards, 1, "rewards")
        terminals = np.array(self.terminals, dtype=bool).reshape(-1)
        terminals.setflags(write=False)
        n = len(rewards)
        if n == 0:
            raise ValueError("trajectory must contain at least one transition")
        for name, arr in (("states", states), ("next_states", next_states),
                          ("actions", actions), ("terminals", terminals)):
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, expected {n}")
        if states.shape[1] != next_states.shape[1]:
            raise ValueError("state and next_state dimensions differ")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        chained = ~terminals[:-1]
        if not np.array_equal(next_states[:-1][chained], states[1:][chained]):
            raise ValueError("next_state of a non-terminal transition must equal the following state")
        for name, arr in (("states", states), ("next_states", next_states), ("actions", actions),
                          ("rewards", rewards), ("terminals", terminals)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "id", str(self.id))

    @classmethod
    def from_transitions(cls, dt: float, transitions: Sequence[Transition], id: str) -> Trajectory:
        return cls(
            dt=dt,
            states=[t.state for t in transitions],
            actions=[np.atleast_1d(t.action) for t in transitions],
            rewards=[t.reward for t in transitions],
            next_states=[t.next_state for t in transitions],
            terminals=[t.terminal for t in transitions],
            id=id,
        )

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def transitions(self) -> tuple[Transition, ...]:
        return tuple(
            Transition(self.states[k], self.actions[k], float(self.rewards[k]),
                       self.next_states[k], bool(self.terminals[k]))
            for k in range(len(self))
        )

    def truncated(self, length: int) -> Trajectory:
        """The first ``length`` transitions, as a time-limit truncated trajectory."""
        return Trajectory(self.dt, self.states[:length], self.actions[:length], self.rewards[:length],
                          self.next_states[:length], self.terminals[:length], self.id)

    def same_content(self, other: Trajectory) -> bool:
        return (self.id == other.id and self.dt == other.dt
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("states", "actions", "rewards", "next_states", "terminals")))


@dataclass(frozen=True, eq=False)
class MixedDataset:
    """An immutable bag of trajectories spanning several discretizations."""

    trajectories: tuple[Trajectory, ...]
    delta_set: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("a dataset needs at least one trajectory")
        ids = [t.id for t in trajs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate trajectory ids: {dup[:5]}")
        sd, ad = trajs[0].state_dim, trajs[0].action_dim
        for t in trajs:
            if t.state_dim != sd or t.action_dim != ad:
                raise ValueError(
                    f"trajectory {t.id!r} has dims ({t.state_dim}, {t.action_dim}), expected ({sd}, {ad})")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "delta_set", tuple(sorted({t.dt for t in trajs})))

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].state_dim

    @property
    def action_dim(self) -> int:
        return self.trajectories[0].action_dim

    @property
    def dt_max(self) -> float:
        return self.delta_set[-1]

    @property
    def num_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def group(self, dt: float) -> tuple[Trajectory, ...]:
        dt = canonical_dt(dt)
        if dt not in self.delta_set:
            raise KeyError(f"no trajectories at dt={dt}")
        return tuple(t for t in self.trajectories if t.dt == dt)

    def subset(self, dt: float) -> MixedDataset:
        return MixedDataset(self.group(dt))

    def transitions_per_dt(self) -> dict[float, int]:
        return {dt: sum(len(t) for t in self.group(dt)) for dt in self.delta_set}

    def same_content(self, other: MixedDataset) -> bool:
        return (len(self.trajectories) == len(other.trajectories)
                and all(a.same_content(b) for a, b in zip(self.trajectories, other.trajectories)))


@dataclass(frozen=True)
class DiscountConfig:
    gamma_base: float = 0.99
    dt_max: float = 0.02
    scale_rewards_by_dt: bool = True
    scale_discount_by_dt: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma_base < 1.0:
            raise ValueError(f"gamma_base must lie in (0, 1), got {self.gamma_base}")
        if not self.dt_max > 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")

    @classmethod
    def for_dataset(cls, dataset: MixedDataset, **kwargs) -> DiscountConfig:
        return cls(dt_max=dataset.dt_max, **kwargs)

    def reward_scale(self, dt: float) -> float:
        return float(dt) if self.scale_rewards_by_dt else 1.0


def per_step_discount(cfg: DiscountConfig, dt: float) -> float:
    """Discount applied per transition of size ``dt``.

    With ``scale_discount_by_dt`` this is ``gamma_base ** (dt / dt_max)`` so
    every discretization shares the same discount per unit of physical time.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not cfg.scale_discount_by_dt:
        return cfg.gamma_base
    if dt > cfg.dt_max * (1 + 1e-9):
        raise ValueError(f"dt={dt} exceeds dt_max={cfg.dt_max}")
    return cfg.gamma_base ** (dt / cfg.dt_max)


def discounted_return(traj: Trajectory, cfg: DiscountConfig) -> float:
    g = per_step_discount(cfg, traj.dt)
    weights = g ** np.arange(len(traj), dtype=np.float64)
    return float(np.dot(weights, traj.rewards) * cfg.reward_scale(traj.dt))


def merge_datasets(parts: Iterable[MixedDataset]) -> MixedDataset:
    """Union of several datasets; ids must stay unique across parts."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to merge")
    if len(parts) == 1:
        return parts[0]
    return MixedDataset(tuple(t for p in parts for t in p.trajectories))
