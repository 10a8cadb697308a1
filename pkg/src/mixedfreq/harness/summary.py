"""Reduce finished runs to return tables, Q diagnostics and curves.

Everything here is recomputed from the metrics CSVs; ``result.json`` files
only mark completion.
"""

from __future__ import annotations

import csv
import json
import math
from os import PathLike
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..offline_rl.train import read_metrics
from .config import config_hash, load_config
from .experiment import dt_label, job_metrics_files

Z95 = 1.96


class MissingRunsError(RuntimeError):
    def __init__(self, missing: list[tuple[str, int]]):
        super().__init__(f"missing run data for (arm, seed) pairs: {missing}")
        self.missing = missing


def mean_ci(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width ``1.96 * std(ddof=1) / sqrt(n)``; 0 for one value."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return math.nan, math.nan
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(Z95 * v.std(ddof=1) / math.sqrt(len(v)))


def final_eval(rows: list[dict]) -> dict[float, float]:
    last = max(r["step"] for r in rows)
    return {r["dt"]: r["eval_return"] for r in rows if r["step"] == last and r["eval_return"] is not None}


def mean_q_table(rows: list[dict], dts) -> tuple[np.ndarray, np.ndarray]:
    """Log steps and a (steps, len(dts)) array of mean Q, from one mixed-dt metrics file."""
    steps = sorted({r["step"] for r in rows if r["mean_q"] is not None})
    pos = {s: i for i, s in enumerate(steps)}
    col = {d: j for j, d in enumerate(dts)}
    table = np.full((len(steps), len(dts)), np.nan)
    for r in rows:
        if r["mean_q"] is not None and r["dt"] in col:
            table[pos[r["step"]], col[r["dt"]]] = r["mean_q"]
    return np.array(steps), table


def q_spread(table: np.ndarray) -> float:
    """Time average over log points of the cross-dt range of mean Q."""
    return float(np.mean(np.nanmax(table, axis=1) - np.nanmin(table, axis=1)))


def q_order_fraction(steps: np.ndarray, table: np.ndarray, total_steps: int, fraction: float = 0.25) -> float:
    """Share of log points in ``(0, fraction * total_steps]`` where mean Q strictly grows with dt.

    ``table`` columns must be ordered by increasing dt. The initial row is
    left out because untrained networks carry no ordering.
    """
    sel = (steps > 0) & (steps <= fraction * total_steps)
    if not sel.any():
        return math.nan
    ordered = np.all(np.diff(table[sel], axis=1) > 0, axis=1)
    return float(np.mean(ordered))


def smooth(values, sigma: float) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if sigma <= 0 or len(v) < 2:
        return v.copy()
    return gaussian_filter1d(v, sigma, mode="nearest")


def collect_runs(out: Path, config) -> dict:
    """Per (arm, seed): metrics rows, final returns per dt."""
    dts = config.collection.dts
    runs, missing = {}, []
    for arm in config.arms:
        for seed in config.seeds:
            files = job_metrics_files(out, arm, seed, dts)
            done = (out / "runs" / arm / f"seed_{seed}" / "result.json").exists()
            if not done or not all(f.exists() for f in files):
                missing.append((arm, seed))
                continue
            rows = []
            for f in files:
                with f.open() as fh:
                    first = fh.readline().strip()
                if first != f"# config_hash={config_hash(config)}":
                    raise RuntimeError(f"{f} was written by a different config ({first})")
                rows.extend(read_metrics(f))
            # individual models share the step count, so the last step is common to all files
            runs[(arm, seed)] = {"rows": rows, "returns": final_eval(rows)}
    if missing:
        raise MissingRunsError(missing)
    return runs


def emit_summary(out_dir: str | PathLike) -> Path:
    """Write ``summary.csv``, ``summary.txt``, ``summary.json`` and ``curves.csv``; return the CSV path."""
    out = Path(out_dir)
    config = load_config_from_output(out)
    h = config_hash(config)
    runs = collect_runs(out, config)
    dts = config.eval_dts
    seeds = config.seeds

    table, returns_json = [], {}
    for arm in config.arms:
        per_seed = {s: runs[(arm, s)]["returns"] for s in seeds}
        arm_json = {}
        for dt in dts:
            vals = [per_seed[s][dt] for s in seeds]
            m, ci = mean_ci(vals)
            table.append(("pendulum", arm, dt_label(dt), m, ci, len(vals)))
            arm_json[dt_label(dt)] = {"mean": m, "ci95": ci, "per_seed": vals}
        avg = [float(np.mean([per_seed[s][dt] for dt in dts])) for s in seeds]
        m, ci = mean_ci(avg)
        table.append(("pendulum", arm, "avg", m, ci, len(avg)))
        arm_json["avg"] = {"mean": m, "ci95": ci, "per_seed": avg}
        returns_json[arm] = arm_json

    diagnostics = {}
    curve_rows = []
    steps_total = config.train.steps
    for arm in config.arms:
        for seed in seeds:
            rows = runs[(arm, seed)]["rows"]
            if arm != "individual":
                steps, qt = mean_q_table(rows, sorted(config.collection.dts))
                diagnostics.setdefault(arm, {})[str(seed)] = {
                    "q_spread": q_spread(qt), "q_order_fraction": q_order_fraction(steps, qt, steps_total)}
            by_dt = {}
            for r in rows:
                if r["mean_q"] is not None:
                    by_dt.setdefault(r["dt"], []).append(r)
            for dt, rs in sorted(by_dt.items()):
                rs.sort(key=lambda r: r["step"])
                sm = smooth([r["mean_q"] for r in rs], config.smoothing_sigma)
                for r, s in zip(rs, sm):
                    curve_rows.append((arm, seed, dt_label(dt), r["step"], r["mean_q"], float(s),
                                       r["loss_bellman"], r["loss_conservative"], r["eval_return"]))

    csv_path = out / "summary.csv"
    with csv_path.open("w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("env", "arm", "dt", "mean_return", "ci95", "seeds"))
        for env, arm, dt, m, ci, n in table:
            w.writerow((env, arm, dt, repr(m), repr(ci), n))

    cols = [dt_label(d) for d in dts] + ["avg"]
    cells = {(arm, dt): f"{m:.1f} ± {ci:.1f}" for _, arm, dt, m, ci, _ in table}
    widths = [max(len("arm"), *(len(a) for a in config.arms))] + \
        [max(len(f"dt={c}"), *(len(cells[(a, c)]) for a in config.arms)) for c in cols]
    head = ["arm"] + [f"dt={c}" if c != "avg" else "avg" for c in cols]
    lines = [f"# config_hash={h}", f"# normalized return, mean ± 95% CI over {len(seeds)} seed(s)",
             "  ".join(x.ljust(wd) for x, wd in zip(head, widths))]
    for arm in config.arms:
        lines.append("  ".join(x.ljust(wd) for x, wd in zip([arm] + [cells[(arm, c)] for c in cols], widths)))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    with (out / "curves.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("arm", "seed", "dt", "step", "mean_q", "mean_q_smoothed", "loss_bellman",
                    "loss_conservative", "eval_return"))
        for row in curve_rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])

    (out / "summary.json").write_text(json.dumps(
        {"config_hash": h, "returns": returns_json, "diagnostics": diagnostics}, indent=2, sort_keys=True) + "\n")
    return csv_path


def load_config_from_output(out: Path):
    path = out / "config.yaml"
    if not path.exists():
        raise FileNotFoundError(f"{out} has no config.yaml; is it an experiment directory?")
    return load_config(path).with_output_dir(out)
