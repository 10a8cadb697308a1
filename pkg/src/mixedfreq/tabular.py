"""Exact value iteration on the corridor MDP.

Shows how far value spreads per sweep: with 1-step backups the frontier moves
``dt`` cells per sweep, while ``N / dt``-step backups move it ``N`` cells for
every ``dt``. Sweeps are synchronous; the goal is absorbing with value 0 and
its reward is paid on the entering transition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import CorridorMDP, corridor_step

FRONT_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ValueTable:
    values: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, mdp: CorridorMDP) -> ValueTable:
        return cls(np.zeros(mdp.num_cells), 0)


def _bellman(values: np.ndarray, mdp: CorridorMDP, dt: int) -> np.ndarray:
    out = np.zeros_like(values)
    for cell in range(mdp.num_cells):
        if cell == mdp.goal_cell:
            continue
        best = -np.inf
        for stride in mdp.stride_options(dt):
            nxt, r = corridor_step(cell, stride, mdp, dt)
            best = max(best, r + mdp.gamma * values[nxt])
        out[cell] = best
    return out


def vi_step_naive(table: ValueTable, mdp: CorridorMDP, dt: int) -> ValueTable:
    return ValueTable(_bellman(table.values, mdp, int(dt)), table.k + 1)


def vi_step_nstep(table: ValueTable, mdp: CorridorMDP, dt: int, N: int) -> ValueTable:
    """One sweep with an ``N / dt``-step greedy lookahead bootstrapped on the previous table.

    In a deterministic MDP the best ``n``-action sequence equals ``n`` nested
    Bellman maximizations over the previous table.
    """
    if N % dt != 0:
        raise ValueError(f"N={N} is not divisible by dt={dt}")
    values = table.values
    for _ in range(N // dt):
        values = _bellman(values, mdp, int(dt))
    return ValueTable(values, table.k + 1)


def value_front(table: ValueTable) -> int:
    """Largest cell index holding non-negligible value (0 if none)."""
    idx = np.flatnonzero(table.values > FRONT_EPS)
    return int(idx[-1]) if idx.size else 0


def run_sweeps(mdp: CorridorMDP, dt: int, sweeps: int, N: int | None = None) -> list[ValueTable]:
    """Tables ``V_0 .. V_sweeps`` from a zero start; ``N=None`` means 1-step updates."""
    tables = [ValueTable.zeros(mdp)]
    for _ in range(sweeps):
        prev = tables[-1]
        tables.append(vi_step_naive(prev, mdp, dt) if N is None else vi_step_nstep(prev, mdp, dt, N))
    return tables


def sweeps_to_converge(mdp: CorridorMDP, dt: int, N: int | None = None, tol: float = 1e-12,
                       max_sweeps: int = 10_000) -> int:
    table = ValueTable.zeros(mdp)
    for _ in range(max_sweeps):
        nxt = vi_step_naive(table, mdp, dt) if N is None else vi_step_nstep(table, mdp, dt, N)
        if np.max(np.abs(nxt.values - table.values)) <= tol:
            return table.k
        table = nxt
    raise RuntimeError("value iteration did not converge")


def target_dispersion(mdp: CorridorMDP, dts: tuple[int, ...], sweeps: int, N: int | None = None) -> float:
    """Summed spread ``max_dt V_k - min_dt V_k`` over cells and sweeps ``0..sweeps``.

    ``N=None`` uses 1-step updates for every ``dt``; otherwise ``N / dt``-step updates.
    """
    stacks = np.stack([np.stack([t.values for t in run_sweeps(mdp, dt, sweeps, N)]) for dt in dts])
    return float(np.sum(stacks.max(axis=0) - stacks.min(axis=0)))


def dispersion_comparison(mdp: CorridorMDP, dts: tuple[int, ...], N: int) -> dict[str, float]:
    """1-step vs ``N / dt``-step dispersion over a shared window reaching every run's convergence."""
    sweeps = max([sweeps_to_converge(mdp, dt) for dt in dts] + [sweeps_to_converge(mdp, dt, N) for dt in dts])
    return {
        "sweeps": sweeps,
        "naive": target_dispersion(mdp, dts, sweeps),
        "adaptive_n": target_dispersion(mdp, dts, sweeps, N),
    }
