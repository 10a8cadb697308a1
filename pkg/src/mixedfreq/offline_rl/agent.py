"""Tanh-Gaussian actor, twin Q-networks, and the conservative n-step losses.

Networks see the observation, optionally followed by the normalized
discretization ``dt / dt_max``; Q-networks additionally take the action
divided by ``action_scale`` so their action inputs lie in [-1, 1].
Gradients are assembled by hand from :func:`mixedfreq.nn.mlp_backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..core import DiscountConfig, Trajectory
from ..nn import Mlp, init_mlp, mlp_backward, mlp_forward, mlp_forward_cached
from .targets import Batch, TargetSpec, nstep_backup

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
BC_ACTION_CLIP = 0.999  # dataset actions on the torque limit would have infinite pre-tanh values
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss turns non-finite; ``diagnostics`` holds per-dt Q statistics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class Actor:
    net: Mlp
    action_scale: float = 1.0
    entropy_coeff: float = 0.0
    condition_on_dt: bool = True

    @property
    def action_dim(self) -> int:
        return self.net.out_dim // 2


@dataclass(frozen=True, eq=False)
class QPair:
    q1: Mlp
    q2: Mlp
    target1: Mlp
    target2: Mlp
    tau: float = 0.005

    def with_online(self, p1: np.ndarray, p2: np.ndarray) -> QPair:
        return replace(self, q1=self.q1.with_params(p1), q2=self.q2.with_params(p2))


def polyak_update(q: QPair) -> QPair:
    t1 = (1.0 - q.tau) * q.target1.params + q.tau * q.q1.params
    t2 = (1.0 - q.tau) * q.target2.params + q.tau * q.q2.params
    return replace(q, target1=q.target1.with_params(t1), target2=q.target2.with_params(t2))


def state_input(obs: np.ndarray, dt: np.ndarray, dt_max: float, condition_on_dt: bool) -> np.ndarray:
    obs = np.atleast_2d(obs)
    if not condition_on_dt:
        return obs
    feat = np.broadcast_to(np.asarray(dt, dtype=np.float64) / dt_max, (len(obs),))
    return np.concatenate([obs, feat[:, None]], axis=1)


def init_agent(state_dim: int, action_dim: int, rng: np.random.Generator, hidden=(256, 256),
               activation: str = "relu", action_scale: float = 1.0, entropy_coeff: float = 0.0,
               condition_on_dt: bool = True, tau: float = 0.005) -> tuple[Actor, QPair]:
    sin = state_dim + int(condition_on_dt)
    actor_net = init_mlp((sin, *hidden, 2 * action_dim), rng, activation, last_layer_scale=0.01)
    q1 = init_mlp((sin + action_dim, *hidden, 1), rng, activation)
    q2 = init_mlp((sin + action_dim, *hidden, 1), rng, activation)
    actor = Actor(actor_net, action_scale, entropy_coeff, condition_on_dt)
    return actor, QPair(q1, q2, q1.with_params(q1.params.copy()), q2.with_params(q2.params.copy()), tau)


def q_values(net: Mlp, x: np.ndarray, actions: np.ndarray, action_scale: float) -> np.ndarray:
    return mlp_forward(net, np.concatenate([x, actions / action_scale], axis=1))[:, 0]


def _gaussian_head(actor: Actor, out: np.ndarray):
    d = actor.action_dim
    mean, raw = out[:, :d], out[:, d:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)


def deterministic_action(actor: Actor, x: np.ndarray) -> np.ndarray:
    mean = mlp_forward(actor.net, x)[:, :actor.action_dim]
    return np.tanh(mean) * actor.action_scale


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def sample_actions(actor: Actor, x: np.ndarray, rng: np.random.Generator, num: int = 1):
    """Reparameterized samples: arrays of shape (num, B, action_dim) and log-probs (num, B)."""
    mean, log_std, _ = _gaussian_head(actor, mlp_forward(actor.net, x))
    eps = rng.standard_normal((num, *mean.shape))
    u = mean + np.exp(log_std) * eps
    logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - math.log(actor.action_scale)
                  - _log_one_minus_tanh_sq(u), axis=-1)
    return np.tanh(u) * actor.action_scale, logp


def target_value(q: QPair, actor: Actor, obs: np.ndarray, dt: np.ndarray, dt_max: float,
                 rng: np.random.Generator | None, double_q: bool = True) -> np.ndarray:
    """Target-network value at ``obs`` under an actor action (sampled, or the mean with ``rng=None``)."""
    x = state_input(obs, dt, dt_max, actor.condition_on_dt)
    a = deterministic_action(actor, x) if rng is None else sample_actions(actor, x, rng)[0][0]
    v = q_values(q.target1, x, a, actor.action_scale)
    if double_q:
        v = np.minimum(v, q_values(q.target2, x, a, actor.action_scale))
    return v


def nstep_target(traj: Trajectory, start: int, n: int, q: QPair, actor: Actor, cfg: DiscountConfig,
                 rng: np.random.Generator | None = None, double_q: bool = True) -> float:
    """n-step target for one position, bootstrapping on ``min`` of the target Q-networks."""
    def bootstrap(state):
        return target_value(q, actor, state[None, :], traj.dt, cfg.dt_max, rng, double_q)[0]
    return nstep_backup(traj, start, n, bootstrap, cfg)


def _per_dt_stats(dt: np.ndarray, values: np.ndarray) -> dict:
    out = {}
    for d in np.unique(dt):
        v = values[dt == d]
        out[float(d)] = {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v))}
    return out


def cql_loss(batch: Batch, q: QPair, actor: Actor, spec: TargetSpec, cfg: DiscountConfig,
             rng: np.random.Generator):
    """Conservative n-step loss for both online Q-networks.

    Per network: ``0.5 * mean((Q(s_t, a_t) - y)^2)`` plus
    ``alpha * mean(logsumexp_j Q(s_c, a_j) - Q(s_c, a_c))``, where ``y`` is
    the (constant) n-step target and ``(s_c, a_c)`` is the batch's
    conservative-term state-action. The ``a_j`` are ``M`` uniform and ``M``
    actor samples at ``s_c``. Draw order from ``rng`` is fixed: target actor
    noise, uniform actions, actor noise.

    Returns ``(loss, (grad_q1, grad_q2), info)``; ``info`` carries per-element
    Bellman and conservative terms for logging.
    """
    B = len(batch.index)
    scale = actor.action_scale
    cond = actor.condition_on_dt
    x = state_input(batch.obs, batch.dt, cfg.dt_max, cond)
    y = batch.reward_sum + batch.boot_discount * target_value(
        q, actor, batch.boot_obs, batch.dt, cfg.dt_max, rng, spec.double_q)

    alpha = spec.cql_alpha
    M = spec.num_cql_action_samples
    rows = [np.concatenate([x, batch.actions / scale], axis=1)]
    if alpha > 0:
        xc = state_input(batch.cql_obs, batch.dt, cfg.dt_max, cond)
        a_dim = actor.action_dim
        uni = rng.uniform(-scale, scale, size=(M, B, a_dim))
        pol, _ = sample_actions(actor, xc, rng, M)
        sampled = np.concatenate([uni, pol])  # (2M, B, a_dim)
        rows.append(np.concatenate([np.broadcast_to(xc, (2 * M, *xc.shape)), sampled / scale],
                                   axis=2).reshape(2 * M * B, -1))
        rows.append(np.concatenate([xc, batch.cql_actions / scale], axis=1))
    inputs = np.concatenate(rows)

    total, grads = 0.0, []
    bell_elem = np.zeros(B)
    cons_elem = np.zeros(B)
    preds = []
    nets = (q.q1, q.q2)
    for net in nets:
        out, cache = mlp_forward_cached(net, inputs)
        out = out[:, 0]
        pred = out[:B]
        err = pred - y
        up = np.zeros(len(out))
        up[:B] = err / B
        bell = 0.5 * err ** 2
        loss = float(np.mean(bell))
        cons = np.zeros(B)
        if alpha > 0:
            qs = out[B:B + 2 * M * B].reshape(2 * M, B)
            q_data = out[B + 2 * M * B:]
            top = qs.max(axis=0)
            w = np.exp(qs - top)
            lse = top + np.log(w.sum(axis=0))
            cons = lse - q_data
            loss += alpha * float(np.mean(cons))
            up[B:B + 2 * M * B] = (alpha / B * w / w.sum(axis=0)).ravel()
            up[B + 2 * M * B:] = -alpha / B
        g, _ = mlp_backward(net, cache, up[:, None], need_input_grad=False)
        total += loss
        grads.append(g)
        bell_elem += bell
        cons_elem += cons
        preds.append(pred)
    if not math.isfinite(total):
        raise NonFiniteLossError("non-finite CQL loss", {
            "q1": _per_dt_stats(batch.dt, preds[0]), "q2": _per_dt_stats(batch.dt, preds[1]),
            "target": _per_dt_stats(batch.dt, y)})
    info = {"bellman": bell_elem / 2, "conservative": cons_elem / 2, "q": (preds[0] + preds[1]) / 2, "target": y}
    return total, tuple(grads), info


def actor_loss(batch: Batch, q: QPair, actor: Actor, rng: np.random.Generator, dt_max: float,
               double_q: bool = True):
    """``mean(entropy_coeff * log pi(a|s) - min_i Q_i(s, a))`` with ``a`` reparameterized at ``s_t``.

    Returns ``(loss, grad_actor, info)``.
    """
    B = len(batch.index)
    d = actor.action_dim
    scale = actor.action_scale
    x = state_input(batch.obs, batch.dt, dt_max, actor.condition_on_dt)
    out, acache = mlp_forward_cached(actor.net, x)
    mean, log_std, live = _gaussian_head(actor, out)
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape)
    u = mean + std * eps
    t = np.tanh(u)
    logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - math.log(scale) - _log_one_minus_tanh_sq(u), axis=1)

    qin = np.concatenate([x, t], axis=1)
    q1, c1 = mlp_forward_cached(q.q1, qin)
    qs = [q1[:, 0]]
    caches = [c1]
    if double_q:
        q2, c2 = mlp_forward_cached(q.q2, qin)
        qs.append(q2[:, 0])
        caches.append(c2)
    qmin = np.minimum.reduce(qs) if double_q else qs[0]
    loss = float(np.mean(actor.entropy_coeff * logp - qmin))
    if not math.isfinite(loss):
        raise NonFiniteLossError("non-finite actor loss", {"q": _per_dt_stats(batch.dt, qmin)})

    # dL/dtanh(u) through the min over Q-networks (ties go to the first network)
    pick1 = qs[0] <= qs[1] if double_q else np.ones(B, dtype=bool)
    dt_act = np.zeros((B, d))
    for k, (net, cache) in enumerate(zip((q.q1, q.q2), caches)):
        sel = pick1 if k == 0 else ~pick1
        up = np.where(sel, -1.0 / B, 0.0)[:, None]
        _, dx = mlp_backward(net, cache, up)
        dt_act += dx[:, -d:]
    du = dt_act * (1.0 - t ** 2)
    ent = actor.entropy_coeff / B
    d_mean = du + ent * 2.0 * t
    d_log_std = (du * std * eps + ent * (-1.0 + 2.0 * t * std * eps)) * live
    g, _ = mlp_backward(actor.net, acache, np.concatenate([d_mean, d_log_std], axis=1), need_input_grad=False)
    return loss, g, {"logp": logp, "q": qmin}


def bc_loss(batch: Batch, actor: Actor, dt_max: float):
    """Behavior-cloning loss ``-mean(log pi(a_t | s_t))`` on the dataset actions.

    Actions are divided by ``action_scale`` and clipped to ``BC_ACTION_CLIP``
    before inverting the tanh. Returns ``(loss, grad_actor)``.
    """
    B = len(batch.index)
    x = state_input(batch.obs, batch.dt, dt_max, actor.condition_on_dt)
    out, acache = mlp_forward_cached(actor.net, x)
    mean, log_std, live = _gaussian_head(actor, out)
    u = np.arctanh(np.clip(batch.actions / actor.action_scale, -BC_ACTION_CLIP, BC_ACTION_CLIP))
    z = (u - mean) * np.exp(-log_std)
    nll = np.sum(0.5 * z ** 2 + log_std + _HALF_LOG_2PI + math.log(actor.action_scale)
                 + _log_one_minus_tanh_sq(u), axis=1)
    loss = float(np.mean(nll))
    if not math.isfinite(loss):
        raise NonFiniteLossError("non-finite behavior-cloning loss", {"log_std": float(np.max(np.abs(log_std)))})
    d_mean = -z * np.exp(-log_std) / B
    d_log_std = (1.0 - z ** 2) * live / B
    g, _ = mlp_backward(actor.net, acache, np.concatenate([d_mean, d_log_std], axis=1), need_input_grad=False)
    return loss, g
