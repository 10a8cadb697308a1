"""Dense networks with hand-written reverse mode, Adam, and a checkpoint format.

Parameters live in one flat float64 vector per network. Layer ``l`` stores
its weight matrix of shape ``(fan_in, fan_out)`` row-major, followed by its
bias. All functions are pure: they return new arrays and never mutate inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from os import PathLike
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = b"MXFCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpLayout:
    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        acts = tuple(self.activations)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"need {len(sizes) - 2} hidden activations, got {len(acts)}")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activations {bad}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", acts)

    @property
    def num_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    @cached_property
    def segments(self) -> tuple[tuple[slice, tuple[int, int], slice], ...]:
        segs, o = [], 0
        for i, out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(o, o + i * out)
            b = slice(o + i * out, o + i * out + out)
            segs.append((w, (i, out), b))
            o = b.stop
        return tuple(segs)

    def to_json(self) -> dict:
        return {"sizes": list(self.sizes), "activations": list(self.activations)}


@dataclass(frozen=True, eq=False)
class Mlp:
    layout: MlpLayout
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.shape != (self.layout.num_params,):
            raise ValueError(f"expected {self.layout.num_params} parameters, got shape {p.shape}")
        object.__setattr__(self, "params", p)

    @property
    def in_dim(self) -> int:
        return self.layout.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layout.sizes[-1]

    def with_params(self, params: np.ndarray) -> Mlp:
        return replace(self, params=params)

    def layers(self):
        for w, shape, b in self.layout.segments:
            yield self.params[w].reshape(shape), self.params[b]


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, activation: str = "relu",
             last_layer_scale: float = 1.0) -> Mlp:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    layout = MlpLayout(tuple(sizes), (activation,) * (len(sizes) - 2))
    params = np.empty(layout.num_params)
    for k, (w, (fan_in, fan_out), b) in enumerate(layout.segments):
        bound = 1.0 / np.sqrt(fan_in)
        if k == len(layout.segments) - 1:
            bound *= last_layer_scale
        params[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
        params[b] = rng.uniform(-bound, bound, size=fan_out)
    return Mlp(layout, params)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each affine layer
    preacts: list[np.ndarray] = field(default_factory=list)  # hidden pre-activations
    squeeze: bool = False


def _check_input(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input of shape {x.shape} does not match network input dimension {net.in_dim}")
    return x, squeeze


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return mlp_forward_cached(net, x)[0]


def mlp_forward_cached(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    h, squeeze = _check_input(net, x)
    cache = ForwardCache(squeeze=squeeze)
    layers = list(net.layers())
    for k, (W, b) in enumerate(layers):
        cache.inputs.append(h)
        z = h @ W + b
        if k < len(layers) - 1:
            cache.preacts.append(z)
            h = np.maximum(z, 0.0) if net.layout.activations[k] == "relu" else np.tanh(z)
        else:
            h = z
    return (h[0] if squeeze else h), cache


def mlp_backward(net: Mlp, cache: ForwardCache, upstream, need_input_grad: bool = True
                 ) -> tuple[np.ndarray, np.ndarray | None]:
    """Reverse pass for the batch in ``cache``.

    ``upstream`` is dLoss/dOutput with the forward output's shape. Parameter
    gradients are summed over the batch; returns (flat param grad, input grad).
    """
    delta = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        delta = delta[None, :]
    n_out = cache.inputs[-1].shape[0]
    if delta.shape != (n_out, net.out_dim):
        raise ValueError(f"upstream gradient of shape {delta.shape}, expected {(n_out, net.out_dim)}")
    grad = np.empty(net.layout.num_params)
    layers = list(net.layers())
    segs = net.layout.segments
    dx = None
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        w_sl, _, b_sl = segs[k]
        grad[w_sl] = (cache.inputs[k].T @ delta).ravel()
        grad[b_sl] = delta.sum(axis=0)
        if k == 0 and not need_input_grad:
            break
        delta = delta @ W.T
        if k > 0:
            z = cache.preacts[k - 1]
            if net.layout.activations[k - 1] == "relu":
                delta = delta * (z > 0)
            else:
                delta = delta * (1.0 - np.tanh(z) ** 2)
        else:
            dx = delta[0] if cache.squeeze else delta
    return grad, dx


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: np.ndarray, learning_rate: float, **kwargs) -> AdamState:
    return AdamState(np.zeros_like(params), np.zeros_like(params), 0, learning_rate, **kwargs)


def adam_update(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step (minimization)."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to adam_update")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


def checkpoint_bytes(nets: Mapping[str, Mlp], metadata: dict | None = None) -> bytes:
    entries, offset = [], 0
    for name in sorted(nets):
        net = nets[name]
        entries.append({"name": name, **net.layout.to_json(), "offset": offset, "count": net.layout.num_params})
        offset += net.layout.num_params
    header = json.dumps({"format_version": CHECKPOINT_VERSION, "networks": entries, "metadata": metadata or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(nets[e["name"]].params.astype("<f8").tobytes() for e in entries)
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + payload


def checkpoint_from_bytes(raw: bytes) -> tuple[dict[str, Mlp], dict]:
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a mixedfreq checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    values = np.frombuffer(raw, dtype="<f8", offset=16 + n)
    nets = {}
    for e in header["networks"]:
        layout = MlpLayout(tuple(e["sizes"]), tuple(e["activations"]))
        nets[e["name"]] = Mlp(layout, values[e["offset"]:e["offset"] + e["count"]].astype(np.float64))
    return nets, header["metadata"]


def save_checkpoint(path: str | PathLike, nets: Mapping[str, Mlp], metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(nets, metadata))
    return path


def load_checkpoint(path: str | PathLike) -> tuple[dict[str, Mlp], dict]:
    return checkpoint_from_bytes(Path(path).read_bytes())
