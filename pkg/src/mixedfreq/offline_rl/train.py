"""Offline training loop: alternating Q and actor updates with Polyak targets."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import numpy as np

from ..core import DiscountConfig, MixedDataset
from ..envs import PendulumParams
from ..nn import adam_init, adam_update
from .agent import Actor, QPair, actor_loss, bc_loss, cql_loss, init_agent, polyak_update, q_values, state_input
from .evaluate import evaluate
from .targets import FlatData, TargetSpec, backup_lengths, make_batch, max_backup_length

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "rule", "dt", "mean_q", "loss_bellman", "loss_conservative", "eval_return")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 256
    q_lr: float = 3e-4
    policy_lr: float = 3e-5
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    tau: float = 0.005
    entropy_coeff: float = 0.0
    bc_steps: int = 0  # initial steps where the actor clones dataset actions instead of maximizing Q
    bc_weight: float = 0.0  # weight of the behavior-cloning term added to the actor loss afterwards
    action_scale: float = 2.0
    log_interval: int = 200
    eval_interval: int = 0  # 0: evaluate only at the end
    eval_episodes: int = 5
    eval_seed: int = 12345
    eval_start: str = "uniform"
    probe_per_dt: int = 512
    equal_dt_sampling: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.steps, self.bc_steps, self.bc_weight) < 0 or self.batch_size < 1 or self.log_interval < 1:
            raise ValueError("steps, bc_steps and bc_weight must be >= 0, batch_size and log_interval >= 1")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass
class TrainResult:
    actor: Actor
    q: QPair
    metrics: list[dict] = field(default_factory=list)
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only CSV sink; the first line records the config hash as a comment."""

    def __init__(self, path: str | PathLike, config_hash: str = ""):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as fh:
            fh.write(f"# config_hash={config_hash}\n")
            csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)

    def append(self, rows: list[dict]) -> None:
        with self.path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for r in rows:
                w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def read_metrics(path: str | PathLike) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        out.append({
            "step": int(r["step"]), "rule": r["rule"], "dt": float(r["dt"]),
            **{k: (float(r[k]) if r[k] != "" else None)
               for k in ("mean_q", "loss_bellman", "loss_conservative", "eval_return")},
        })
    return out


def _probe_split(flat: FlatData, per_dt: int, rng: np.random.Generator):
    probes, train_pool = {}, np.ones(len(flat), dtype=bool)
    for dt in flat.dataset.delta_set:
        idx = np.flatnonzero(flat.dt == dt)
        k = min(per_dt, len(idx) // 10)
        chosen = np.sort(rng.choice(idx, size=k, replace=False)) if k > 0 else idx[:0]
        probes[dt] = chosen
        train_pool[chosen] = False
    return probes, np.flatnonzero(train_pool)


def mean_q_by_dt(q: QPair, actor: Actor, flat: FlatData, probes: dict, cfg: DiscountConfig) -> dict[float, float]:
    out = {}
    for dt, idx in probes.items():
        if len(idx) == 0:
            out[dt] = float("nan")
            continue
        x = state_input(flat.obs[idx], dt, cfg.dt_max, actor.condition_on_dt)
        a = flat.actions[idx]
        out[dt] = float(np.mean(0.5 * (q_values(q.q1, x, a, actor.action_scale)
                                       + q_values(q.q2, x, a, actor.action_scale))))
    return out


def train(dataset: MixedDataset, spec: TargetSpec, cfg: DiscountConfig, hyper: TrainConfig,
          env_params: PendulumParams | None = None, eval_dts=None, metrics_path=None, config_hash: str = "",
          rule_label: str | None = None) -> TrainResult:
    """Train an actor and twin Q-networks offline on ``dataset``.

    Every ``log_interval`` steps (and at the start and end) one metrics row per
    ``dt`` is produced: mean Q on a held-out probe set of dataset
    state-actions, and Bellman / conservative losses averaged over the steps
    since the previous row. Evaluation at ``eval_dts`` happens every
    ``eval_interval`` steps and at the end when ``env_params`` is given.
    """
    label = rule_label or spec.rule
    root = np.random.SeedSequence(hyper.seed)
    init_ss, probe_ss, sample_ss, loss_ss = root.spawn(4)
    rng_sample = np.random.default_rng(sample_ss)
    rng_loss = np.random.default_rng(loss_ss)

    flat = FlatData(dataset)
    N = spec.horizon(dataset)
    n_max = max_backup_length(N, dataset)
    actor, q = init_agent(dataset.state_dim, dataset.action_dim, np.random.default_rng(init_ss), hyper.hidden,
                          hyper.activation, hyper.action_scale, hyper.entropy_coeff, spec.condition_on_dt,
                          hyper.tau)
    s1, s2 = adam_init(q.q1.params, hyper.q_lr), adam_init(q.q2.params, hyper.q_lr)
    sa = adam_init(actor.net.params, hyper.policy_lr)
    probes, pool = _probe_split(flat, hyper.probe_per_dt, np.random.default_rng(probe_ss))
    deltas = dataset.delta_set
    group_of = np.searchsorted(np.array(deltas), flat.dt)
    pool_by_group = [pool[group_of[pool] == g] for g in range(len(deltas))]
    eval_dts = tuple(deltas if eval_dts is None else eval_dts)

    writer = MetricsWriter(metrics_path, config_hash) if metrics_path is not None else None
    result = TrainResult(actor, q)
    sums = np.zeros((2, len(deltas)))
    counts = np.zeros(len(deltas))
    trace = np.zeros(hyper.steps)

    def emit(step: int):
        nonlocal sums, counts
        mq = mean_q_by_dt(q, actor, flat, probes, cfg)
        do_eval = env_params is not None and (step == hyper.steps or (
            hyper.eval_interval > 0 and step % hyper.eval_interval == 0))
        rows = []
        for g, dt in enumerate(deltas):
            ret = None
            if do_eval and dt in eval_dts:
                ret = evaluate(actor, env_params, dt, hyper.eval_episodes, cfg, hyper.eval_seed, hyper.eval_start)
            have = counts[g] > 0
            rows.append({"step": step, "rule": label, "dt": dt, "mean_q": mq[dt],
                         "loss_bellman": float(sums[0, g] / counts[g]) if have else None,
                         "loss_conservative": float(sums[1, g] / counts[g]) if have else None,
                         "eval_return": ret})
        if do_eval:
            for dt in eval_dts:
                if dt not in deltas:
                    ret = evaluate(actor, env_params, dt, hyper.eval_episodes, cfg, hyper.eval_seed, hyper.eval_start)
                    rows.append({"step": step, "rule": label, "dt": dt, "mean_q": None, "loss_bellman": None,
                                 "loss_conservative": None, "eval_return": ret})
        sums = np.zeros_like(sums)
        counts = np.zeros_like(counts)
        result.metrics.extend(rows)
        if writer is not None:
            writer.append(rows)

    emit(0)
    for step in range(1, hyper.steps + 1):
        if hyper.equal_dt_sampling:
            g = rng_sample.integers(len(deltas), size=hyper.batch_size)
            idx = np.array([pool_by_group[k][rng_sample.integers(len(pool_by_group[k]))] for k in g])
        else:
            idx = pool[rng_sample.integers(len(pool), size=hyper.batch_size)]
        n = backup_lengths(spec.rule, N, flat.dt[idx], rng_sample, n_max)
        batch = make_batch(flat, idx, n, cfg, spec.cql_at_bootstrap)

        loss, (g1, g2), info = cql_loss(batch, q, actor, spec, cfg, rng_loss)
        p1, s1 = adam_update(s1, q.q1.params, g1)
        p2, s2 = adam_update(s2, q.q2.params, g2)
        q = q.with_online(p1, p2)
        if step <= hyper.bc_steps:
            _, ga = bc_loss(batch, actor, cfg.dt_max)
        else:
            _, ga, _ = actor_loss(batch, q, actor, rng_loss, cfg.dt_max, spec.double_q)
            if hyper.bc_weight > 0:
                ga = ga + hyper.bc_weight * bc_loss(batch, actor, cfg.dt_max)[1]
        pa, sa = adam_update(sa, actor.net.params, ga)
        actor = Actor(actor.net.with_params(pa), actor.action_scale, actor.entropy_coeff, actor.condition_on_dt)
        q = polyak_update(q)

        trace[step - 1] = loss
        gb = group_of[idx]
        sums[0] += np.bincount(gb, weights=info["bellman"], minlength=len(deltas))
        sums[1] += np.bincount(gb, weights=info["conservative"], minlength=len(deltas))
        counts += np.bincount(gb, minlength=len(deltas))
        if step % hyper.log_interval == 0 or step == hyper.steps:
            result.actor, result.q = actor, q
            emit(step)
    result.actor, result.q = actor, q
    result.loss_trace = trace
    return result
