"""Experiment configuration: a YAML file mapped onto the library's dataclasses.

Every section mirrors one dataclass and unknown keys are rejected, so typos
fail before any compute. :func:`reference_config` renders the defaults with
inline documentation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path

import yaml

from ..core import DiscountConfig, MixedDataset, canonical_dt
from ..datagen import BehaviorPolicy, CollectionSpec
from ..envs import PendulumParams
from ..offline_rl.evaluate import STARTS
from ..offline_rl.targets import TargetSpec
from ..offline_rl.train import TrainConfig

ARMS = ("naive", "adaptive_n", "max_n", "individual")
# target rule each arm trains with; individual runs 1-step backups on a single-dt slice
ARM_RULES = {"naive": "naive", "adaptive_n": "adaptive_n", "max_n": "max_n", "individual": "naive"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiscountSettings:
    gamma_base: float = 0.99
    scale_rewards_by_dt: bool = True
    scale_discount_by_dt: bool = True

    def for_dataset(self, dataset: MixedDataset) -> DiscountConfig:
        return DiscountConfig(self.gamma_base, dataset.dt_max, self.scale_rewards_by_dt, self.scale_discount_by_dt)


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 5
    seed: int = 12345
    start: str = "uniform"
    interval: int = 0  # 0: only after the last step
    dts: tuple[float, ...] | None = None  # None: every collected dt


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 20_000
    batch_size: int = 128
    q_lr: float = 3e-4
    policy_lr: float = 3e-5
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    tau: float = 0.005
    entropy_coeff: float = 0.0
    bc_steps: int = 0
    bc_weight: float = 0.0
    log_interval: int = 200
    probe_per_dt: int = 512
    equal_dt_sampling: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str = "runs/desk"
    seeds: tuple[int, ...] = (0, 1, 2)
    arms: tuple[str, ...] = ARMS
    env: PendulumParams = field(default_factory=PendulumParams)
    collection: CollectionSpec = field(default_factory=CollectionSpec)
    discount: DiscountSettings = field(default_factory=DiscountSettings)
    targets: TargetSpec = field(default_factory=lambda: TargetSpec(num_cql_action_samples=4))
    train: TrainSettings = field(default_factory=TrainSettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    smoothing_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "arms", tuple(self.arms))
        validate(self)

    def target_spec(self, arm: str) -> TargetSpec:
        return dataclasses.replace(self.targets, rule=ARM_RULES[arm])

    def train_config(self, seed: int) -> TrainConfig:
        t, e = self.train, self.evaluation
        return TrainConfig(steps=t.steps, batch_size=t.batch_size, q_lr=t.q_lr, policy_lr=t.policy_lr,
                           hidden=t.hidden, activation=t.activation, tau=t.tau, entropy_coeff=t.entropy_coeff,
                           bc_steps=t.bc_steps, bc_weight=t.bc_weight, action_scale=self.env.max_torque,
                           log_interval=t.log_interval, eval_interval=e.interval, eval_episodes=e.episodes,
                           eval_seed=e.seed, eval_start=e.start, probe_per_dt=t.probe_per_dt,
                           equal_dt_sampling=t.equal_dt_sampling, seed=seed)

    @property
    def eval_dts(self) -> tuple[float, ...]:
        return self.collection.dts if self.evaluation.dts is None else self.evaluation.dts

    def with_output_dir(self, path: str | PathLike) -> ExperimentConfig:
        return dataclasses.replace(self, output_dir=str(path))


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.arms:
        raise ConfigError("at least one arm must be enabled")
    unknown = [a for a in cfg.arms if a not in ARMS]
    if unknown:
        raise ConfigError(f"unknown arms {unknown}; expected a subset of {ARMS}")
    if len(set(cfg.arms)) != len(cfg.arms):
        raise ConfigError(f"arms listed more than once: {cfg.arms}")
    if not cfg.seeds:
        raise ConfigError("seeds must be non-empty")
    if len(set(cfg.seeds)) != len(cfg.seeds) or min(cfg.seeds) < 0:
        raise ConfigError(f"seeds must be distinct non-negative integers, got {cfg.seeds}")
    dts = cfg.collection.dts
    if cfg.evaluation.dts is not None:
        missing = [d for d in cfg.evaluation.dts if canonical_dt(d) not in dts]
        if missing:
            raise ConfigError(f"evaluation dts {missing} are not in the collection dts {dts}")
    if cfg.evaluation.start not in STARTS:
        raise ConfigError(f"evaluation.start must be one of {STARTS}")
    if cfg.evaluation.episodes < 1:
        raise ConfigError("evaluation.episodes must be >= 1")
    if cfg.targets.N is not None and cfg.targets.N < max(dts) * (1 - 1e-9):
        raise ConfigError(f"targets.N={cfg.targets.N} is below the coarsest collected dt {max(dts)}")
    if cfg.smoothing_sigma < 0:
        raise ConfigError("smoothing_sigma must be non-negative")
    for d in dts:
        if abs(d / cfg.env.dt_sim - round(d / cfg.env.dt_sim)) > 1e-6:
            raise ConfigError(f"collection dt {d} is not a multiple of env.dt_sim={cfg.env.dt_sim}")
    t = cfg.train
    if t.steps < 0 or t.bc_steps < 0 or t.bc_weight < 0 or t.batch_size < 1 or t.log_interval < 1:
        raise ConfigError("train.steps, bc_steps and bc_weight must be >= 0, batch_size and log_interval >= 1")


# conversion between nested mappings and dataclasses

_SECTIONS = {"env": PendulumParams, "collection": CollectionSpec, "discount": DiscountSettings,
             "targets": TargetSpec, "train": TrainSettings, "evaluation": EvalSettings}


def _tuples(v):
    return tuple(_tuples(x) for x in v) if isinstance(v, list) else v


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(data) - names)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")
    kwargs = {}
    for k, v in data.items():
        if cls is CollectionSpec and k == "policy":
            v = _build(BehaviorPolicy, v, f"{where}.policy")
        kwargs[k] = _tuples(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data.pop(name), name)
    if "targets" in kwargs and kwargs["targets"].rule != TargetSpec.rule:
        raise ConfigError("targets.rule is set per arm; list arms under 'arms' instead")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
    extra = sorted(set(data) - top)
    if extra:
        raise ConfigError(f"unknown top-level keys: {extra}")
    kwargs.update({k: _tuples(v) for k, v in data.items()})
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as err:
        raise ConfigError(str(err)) from err


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    out = plain(dataclasses.asdict(cfg))
    del out["targets"]["rule"]
    return out


def load_config(path: str | PathLike) -> ExperimentConfig:
    with Path(path).open() as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
    return config_from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form; the output directory does not take part."""
    d = config_to_dict(cfg)
    d.pop("output_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def collection_hash(cfg: ExperimentConfig) -> str:
    d = config_to_dict(cfg)
    d = {"env": d["env"], "collection": d["collection"]}
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


_DOCS = {
    "output_dir": "directory receiving the dataset, per-run outputs and the summary",
    "seeds": "training seeds; every arm is trained once per seed",
    "arms": f"subset of {list(ARMS)}",
    "smoothing_sigma": "std of the Gaussian filter (in log-point units) for smoothed curves; 0 disables",
    "env": "pendulum physics and reward window",
    "env.dt_sim": "integrator substep; every collected dt must be a multiple of it",
    "env.angle_window": "reward is paid while |theta| < angle_window ...",
    "env.velocity_window": "... and |theta_dot| < velocity_window",
    "env.horizon": "episode length in seconds, identical for every dt",
    "collection": "behavior data; one independent seed-derived stream per dt",
    "collection.transitions_per_dt": "exact number of stored transitions per dt",
    "collection.policy.kind": "energy_swingup_pd, uniform_random or epsilon_mixture",
    "collection.policy.noise_std": "Gaussian torque noise added to the scripted controller",
    "collection.policy.epsilon": "probability of a uniform random torque (epsilon_mixture only)",
    "collection.balance_tolerance": "warn when per-dt mean reward fractions differ by more than this ratio",
    "discount.gamma_base": "discount per dt_max seconds",
    "discount.scale_rewards_by_dt": "multiply stored rewards by dt when forming targets",
    "discount.scale_discount_by_dt": "per-step discount gamma_base ** (dt / dt_max)",
    "targets": "shared by all arms; each arm picks its backup rule",
    "targets.N": "backup horizon in seconds; null binds to the coarsest dt",
    "targets.cql_alpha": "weight of the conservative penalty",
    "targets.condition_on_dt": "append dt / dt_max to network inputs",
    "targets.num_cql_action_samples": "uniform and actor samples (each) in the logsumexp",
    "targets.cql_at_bootstrap": "apply the conservative term at the bootstrap state instead of s_t",
    "targets.double_q": "bootstrap on the min of two target networks",
    "train.entropy_coeff": "weight of log pi in the actor loss",
    "train.bc_steps": "initial steps where the actor clones dataset actions before maximizing Q",
    "train.bc_weight": "weight of the dataset-action log-likelihood kept in the actor loss after bc_steps",
    "train.log_interval": "gradient steps between metrics rows",
    "train.probe_per_dt": "held-out dataset transitions per dt used for the mean-Q diagnostic",
    "train.equal_dt_sampling": "sample dt groups uniformly instead of by transition count",
    "evaluation.start": "uniform (like the collector) or hanging",
    "evaluation.interval": "gradient steps between evaluations; 0 evaluates only at the end",
    "evaluation.dts": "null evaluates at every collected dt",
}


def reference_config() -> str:
    """The default configuration as YAML with every documented key commented."""
    data = config_to_dict(ExperimentConfig())
    lines = ["# Reference experiment configuration (all values are the defaults)."]

    def emit(d, prefix, indent):
        for k, v in d.items():
            key = f"{prefix}{k}"
            doc = _DOCS.get(key)
            if isinstance(v, dict):
                if doc:
                    lines.append(" " * indent + f"# {doc}")
                lines.append(" " * indent + f"{k}:")
                emit(v, key + ".", indent + 2)
            else:
                text = yaml.safe_dump({k: v}, default_flow_style=True, width=200).strip()[1:-1]
                lines.append(" " * indent + text + (f"  # {doc}" if doc else ""))

    emit(data, "", 0)
    return "\n".join(lines) + "\n"
