"""Run the (arm, seed) matrix and lay its outputs out on disk.

Layout under ``output_dir``::

    config.yaml  manifest.json  dataset.mxd
    runs/<arm>/seed_<s>/{metrics.csv, checkpoint.ckpt, q_heatmap.csv, result.json}
    runs/individual/seed_<s>/dt_<dt>/{metrics.csv, checkpoint.ckpt, q_heatmap.csv} + result.json
    summary.{csv,txt,json}  curves.csv

``result.json`` is written last and marks a finished job; a rerun with the
same configuration skips finished jobs. Every file records the config hash.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
import warnings
from os import PathLike
from pathlib import Path

import yaml

from ..core import MixedDataset
from ..datagen import collect_dataset
from ..nn import save_checkpoint
from ..offline_rl.evaluate import q_heatmap
from ..offline_rl.train import TrainResult, train
from ..storage import load_dataset, read_header, save_dataset
from .config import ExperimentConfig, collection_hash, config_hash, config_to_dict

log = logging.getLogger(__name__)


class ConfigMismatchError(RuntimeError):
    pass


def dt_label(dt: float) -> str:
    return f"{dt:g}"


def run_dir(out: Path, arm: str, seed: int) -> Path:
    return out / "runs" / arm / f"seed_{seed}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


def prepare_output(config: ExperimentConfig, force: bool = False) -> Path:
    """Create the output directory, or check that an existing one belongs to ``config``."""
    out = Path(config.output_dir)
    h = config_hash(config)
    manifest = out / "manifest.json"
    if manifest.exists():
        old = _read_json(manifest).get("config_hash")
        if old != h:
            if not force:
                raise ConfigMismatchError(
                    f"{out} holds outputs of config {old}, not {h}; use --force to replace them")
            for child in ("runs", "dataset.mxd", "summary.csv", "summary.txt", "summary.json", "curves.csv"):
                p = out / child
                if p.is_dir():
                    shutil.rmtree(p)
                elif p.exists():
                    p.unlink()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(f"# config_hash={h}\n" + yaml.safe_dump(config_to_dict(config), sort_keys=False))
    _write_json(manifest, {"config_hash": h, "collection_hash": collection_hash(config)})
    return out


def ensure_dataset(config: ExperimentConfig, out: Path, force: bool = False) -> MixedDataset:
    path = out / "dataset.mxd"
    ch = collection_hash(config)
    if path.exists() and not force:
        if read_header(path.read_bytes())[0]["metadata"].get("collection_hash") == ch:
            return load_dataset(path)[0]
        log.info("dataset at %s was collected with different settings; recollecting", path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dataset = collect_dataset(config.collection, config.env)
    for w in caught:
        log.warning("%s", w.message)
    save_dataset(dataset, path, {"collection_hash": ch, "config_hash": config_hash(config)})
    return dataset


def _save_outputs(result: TrainResult, directory: Path, config: ExperimentConfig, cfg, dts, meta: dict) -> None:
    q = result.q
    save_checkpoint(directory / "checkpoint.ckpt",
                    {"actor": result.actor.net, "q1": q.q1, "q2": q.q2, "target1": q.target1, "target2": q.target2},
                    {**meta, "action_scale": result.actor.action_scale,
                     "condition_on_dt": result.actor.condition_on_dt, "dt_max": cfg.dt_max})
    with (directory / "q_heatmap.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dt", "theta", "theta_dot", "q"))
        for dt in dts:
            for th, thd, v in q_heatmap(result.actor, q, config.env, dt, cfg):
                w.writerow((repr(float(dt)), repr(float(th)), repr(float(thd)), repr(float(v))))


def final_returns(result: TrainResult) -> dict[str, float]:
    last = max(r["step"] for r in result.metrics)
    return {dt_label(r["dt"]): r["eval_return"] for r in result.metrics
            if r["step"] == last and r["eval_return"] is not None}


def run_job(config: ExperimentConfig, arm: str, seed: int, dataset: MixedDataset | None = None,
            force: bool = False) -> dict:
    """Train one (arm, seed) pair and write its outputs; returns the job's result record."""
    if arm not in config.arms:
        raise ValueError(f"arm {arm!r} is not enabled in this config ({config.arms})")
    out = Path(config.output_dir)
    h = config_hash(config)
    directory = run_dir(out, arm, seed)
    marker = directory / "result.json"
    if marker.exists() and not force:
        record = _read_json(marker)
        if record.get("config_hash") != h:
            raise ConfigMismatchError(f"{marker} was produced by config {record.get('config_hash')}, not {h}")
        log.info("skipping %s seed %d: already complete", arm, seed)
        return record
    if dataset is None:
        dataset = ensure_dataset(config, out)
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    cfg = config.discount.for_dataset(dataset)
    hyper = config.train_config(seed)
    spec = config.target_spec(arm)
    meta = {"config_hash": h, "arm": arm, "seed": seed}
    log.info("training %s seed %d for %d steps", arm, seed, hyper.steps)
    if arm == "individual":
        returns = {}
        for dt in config.collection.dts:
            sub = directory / f"dt_{dt_label(dt)}"
            sub.mkdir()
            # each model sees only its slice but keeps the full dataset's discount per second
            res = train(dataset.subset(dt), spec, cfg, hyper, env_params=config.env,
                        eval_dts=(dt,) if dt in config.eval_dts else (), metrics_path=sub / "metrics.csv",
                        config_hash=h, rule_label=arm)
            _save_outputs(res, sub, config, cfg, (dt,), {**meta, "dt": dt})
            returns.update(final_returns(res))
    else:
        res = train(dataset, spec, cfg, hyper, env_params=config.env, eval_dts=config.eval_dts,
                    metrics_path=directory / "metrics.csv", config_hash=h, rule_label=arm)
        _save_outputs(res, directory, config, cfg, config.eval_dts, meta)
        returns = final_returns(res)
    record = {**meta, "steps": hyper.steps, "returns": returns}
    _write_json(marker, record)
    return record


def run_experiment(config: ExperimentConfig, force: bool = False) -> Path:
    """Collect (or reuse) the dataset, run every enabled (arm, seed) pair, and write the summary."""
    from .summary import emit_summary
    out = prepare_output(config, force)
    dataset = ensure_dataset(config, out, force)
    for arm in config.arms:
        for seed in config.seeds:
            run_job(config, arm, seed, dataset, force)
    emit_summary(out)
    return out


def job_metrics_files(out: Path, arm: str, seed: int, dts) -> list[Path]:
    d = run_dir(out, arm, seed)
    if arm == "individual":
        return [d / f"dt_{dt_label(dt)}" / "metrics.csv" for dt in dts]
    return [d / "metrics.csv"]
