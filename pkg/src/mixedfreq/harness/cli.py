"""Command line entry point.

Exit status is 0 on success. On failure a one-line JSON object
``{"error": <kind>, "message": <text>}`` goes to stderr and the status is 2
for configuration problems and 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ..envs import CorridorMDP
from ..tabular import dispersion_comparison, run_sweeps, value_front
from .config import ARMS, ConfigError, ExperimentConfig, collection_hash, config_hash, load_config, reference_config
from .experiment import ConfigMismatchError, ensure_dataset, prepare_output, run_experiment, run_job
from .summary import emit_summary


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg = cfg.with_output_dir(args.out)
    return cfg


def cmd_collect(args) -> dict:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = ensure_dataset(cfg, out, args.force)
    return {"dataset": str(out / "dataset.mxd"), "transitions_per_dt": {f"{k:g}": v for k, v in
                                                                       ds.transitions_per_dt().items()},
            "collection_hash": collection_hash(cfg)}


def cmd_tabular(args) -> dict:
    mdp = CorridorMDP(args.cells, gamma=args.gamma)
    dts = tuple(int(x) for x in args.dts.split(","))
    comparison = dispersion_comparison(mdp, dts, args.N)
    sweeps = comparison["sweeps"]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    fronts = {}
    with (out / "tabular_values.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rule", "dt", "k", "cell", "value"))
        for rule, N in (("naive", None), ("adaptive_n", args.N)):
            for dt in dts:
                tables = run_sweeps(mdp, dt, sweeps, N)
                fronts[f"{rule}/dt={dt}"] = [value_front(t) for t in tables]
                for t in tables:
                    for cell, v in enumerate(t.values):
                        w.writerow((rule, dt, t.k, cell, repr(float(v))))
    result = {"values": str(out / "tabular_values.csv"), "fronts": fronts, **comparison}
    (out / "tabular_summary.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def cmd_train(args) -> dict:
    cfg = _config(args)
    if args.arm is None or args.seed is None:
        raise ConfigError("train needs --arm and --seed")
    prepare_output(cfg, args.force)
    return run_job(cfg, args.arm, args.seed, force=args.force)


def cmd_run(args) -> dict:
    cfg = _config(args)
    out = run_experiment(cfg, args.force)
    return {"output_dir": str(out), "summary": str(out / "summary.txt"), "config_hash": config_hash(cfg)}


def cmd_summarize(args) -> dict:
    out = Path(args.out) if args.out else Path(_config(args).output_dir)
    path = emit_summary(out)
    print((out / "summary.txt").read_text(), end="", file=sys.stderr)
    return {"summary": str(path)}


def cmd_config(args) -> dict | None:
    text = reference_config()
    if args.out:
        Path(args.out).write_text(text)
        return {"config": args.out}
    sys.stdout.write(text)
    return None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mixedfreq", description="Offline RL over mixed time discretizations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, arm=False, seed=False):
        sp.add_argument("--config", help="experiment YAML (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory, overriding the config's output_dir")
        sp.add_argument("--force", action="store_true", help="recompute and overwrite existing outputs")
        if arm:
            sp.add_argument("--arm", choices=ARMS)
        if seed:
            sp.add_argument("--seed", type=int)

    common(sub.add_parser("collect", help="collect the behavior dataset"))
    t = sub.add_parser("tabular-demo", help="corridor value-iteration diagnostics")
    t.add_argument("--out", help="directory for tabular_values.csv and tabular_summary.json")
    t.add_argument("--cells", type=int, default=12)
    t.add_argument("--gamma", type=float, default=0.9)
    t.add_argument("--dts", default="1,2", help="comma-separated maximal strides")
    t.add_argument("--N", type=int, default=2, help="backup horizon for the adaptive rule")
    common(sub.add_parser("train", help="train one arm for one seed"), arm=True, seed=True)
    common(sub.add_parser("run", help="run the full arm x seed matrix and summarize"))
    s = sub.add_parser("summarize", help="rebuild the summary tables from metrics CSVs")
    s.add_argument("--config")
    s.add_argument("--out", help="experiment directory")
    c = sub.add_parser("config", help="print the documented default configuration")
    c.add_argument("--out", help="write to this file instead of stdout")
    return p


COMMANDS = {"collect": cmd_collect, "tabular-demo": cmd_tabular, "train": cmd_train, "run": cmd_run,
            "summarize": cmd_summarize, "config": cmd_config}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        result = COMMANDS[args.command](args)
    except (ConfigError, ConfigMismatchError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - every failure is reported as JSON
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0
