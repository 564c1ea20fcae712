"""Command-line entry point: ``walkmode <command> [--config FILE] [--seed N] [--out DIR]``.

Every command is reproducible from its resolved configuration and seed. Each
text output starts with ``#`` header lines recording the tool version, the
SHA-256 of the resolved configuration and the seed; the generated data CSVs
carry the same fields in the manifest instead, so that they keep their plain
column layout. Wall-clock timings go to the log only.

Set ``WALKMODE_THREADS`` to cap the numerical thread pools.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from . import synthgait as sg
from .baseline_rf import RfConfig, rf_train, save_forest
from .core import Dataset
from .evaluation import ProtocolError, UndefinedMetricError, current_time_auroc, summarize_runs
from .experiments import (
    EXPERIMENT_EPOCHS,
    EXPERIMENT_FINETUNE_EPOCHS,
    crossval,
    day_protocol,
    louo_window_curves,
)
from .gaitsim import DetectorConfig, ReferenceProfile, run_closed_loop, write_trace
from .ssl import LabelingMode
from .tcn import TcnConfig, train
from .tcn.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger("walkmode")

THREADS_ENV = "WALKMODE_THREADS"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data": None,  # directory of CSVs; the standard cohort is generated when absent
    "n_users": 5,
    "tcn": {"epochs": EXPERIMENT_EPOCHS, "finetune_epochs": EXPERIMENT_FINETUNE_EPOCHS},
    "rf": {},
    "train": {"exclude_user": None},
    "protocol": {"users": None, "n_permutations": 6, "permutation_seed": 0, "modes": ["ground_truth", "self_label"]},
    "simulate": {
        "user": None,  # held-out user; defaults to the last one
        "seq_index": 3,
        "model": None,  # checkpoint path; trained on the other users when absent
        "two_legs": False,
        "accelerated": False,
        "reference": {},
        "detector": {},
    },
}


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# configuration


# Sections passed straight to a dataclass, which rejects unknown fields itself.
OPEN_SECTIONS = {"tcn", "rf", "reference", "detector"}


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path}{key}")
        if key in OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path}{key} must be a mapping")
            out[key] = {**out[key], **copy.deepcopy(value)}
        elif isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(config: Optional[dict] = None, seed: Optional[int] = None) -> dict:
    """Defaults, then the config file, then the command-line seed."""
    cfg = _merge(DEFAULTS, config or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["n_users"], int) or cfg["n_users"] < 1:
        raise ConfigError("n_users must be a positive integer")
    tcn_config(cfg)
    rf_config(cfg)
    ReferenceProfile.from_dict(cfg["simulate"]["reference"]).validate()
    DetectorConfig(**cfg["simulate"]["detector"])
    for m in cfg["protocol"]["modes"]:
        LabelingMode(m)
    return cfg


def tcn_config(cfg: dict) -> TcnConfig:
    d = {"seed": cfg["seed"], **cfg["tcn"]}
    for key in ("dilations", "channels"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        return TcnConfig.from_dict(d).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tcn: {exc}") from exc


def rf_config(cfg: dict) -> RfConfig:
    try:
        return RfConfig(**{"seed": cfg["seed"], **cfg["rf"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rf: {exc}") from exc


def config_sha256(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def header_lines(cfg: dict, command: str) -> tuple[str, ...]:
    return (f"walkmode {__version__} {command}", f"config_sha256 {config_sha256(cfg)}", f"seed {cfg['seed']}")


def _write(path: Path, cfg: dict, command: str, body: str) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines(cfg, command):
            fh.write(f"# {line}\n")
        fh.write(body if body.endswith("\n") else body + "\n")
    return path


def load_data(cfg: dict) -> Dataset:
    if cfg["data"] is not None:
        directory = Path(cfg["data"])
        if not directory.is_dir():
            raise FileNotFoundError(f"dataset directory {directory} does not exist")
        return sg.load_dataset_dir(directory)
    return sg.standard_dataset(cfg["n_users"], cfg["seed"])


def _f(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: dict, out: Path) -> list[Path]:
    """Write the standard cohort as CSVs, its profiles, and a checksum manifest."""
    profiles = sg.default_cohort(cfg["n_users"], cfg["seed"])
    written = []
    for p in profiles:
        for seq in sg.standard_protocol(p):
            path = out / sg.csv_filename(seq)
            sg.save_csv(seq, path)
            written.append(path)
    sg.save_cohort(profiles, out / "cohort.json")
    lines = [f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.name}" for p in sorted(written)]
    manifest = _write(out / "manifest.txt", cfg, "gen-data", "\n".join(lines))
    return written + [out / "cohort.json", manifest]


def _training_set(cfg: dict) -> Dataset:
    data = load_data(cfg)
    excluded = cfg["train"]["exclude_user"]
    return data.excluding_user(excluded) if excluded is not None else data


def cmd_train(cfg: dict, out: Path) -> list[Path]:
    data = _training_set(cfg)
    tcfg = tcn_config(cfg)
    model, report = train(data, tcfg)
    log.info("trained in %.1f s", report.wall_clock_s)
    ckpt = out / "model.ckpt"
    save_checkpoint(model, ckpt, meta={"version": __version__, "config_sha256": config_sha256(cfg), "seed": cfg["seed"]})
    body = [f"n_windows {report.n_windows}", "epoch,loss"]
    body += [f"{i + 1},{_f(v)}" for i, v in enumerate(report.epoch_losses)]
    return [ckpt, _write(out / "train_report.txt", cfg, "train", "\n".join(body))]


def cmd_train_rf(cfg: dict, out: Path) -> list[Path]:
    data = _training_set(cfg)
    model = rf_train(data, rf_config(cfg))
    path = out / "forest.bin"
    save_forest(model, path, meta={"version": __version__, "config_sha256": config_sha256(cfg), "seed": cfg["seed"]})
    auc, _ = current_time_auroc(model, data)
    body = [
        f"n_trees {len(model.trees)}",
        f"mean_nodes {_f(np.mean([t.n_nodes for t in model.trees]))}",
        f"training_auroc {_f(auc)}",
    ]
    return [path, _write(out / "train_rf_report.txt", cfg, "train-rf", "\n".join(body))]


def cmd_crossval(cfg: dict, out: Path) -> list[Path]:
    data = load_data(cfg)
    res = crossval(data, tcn_config(cfg), rf_config(cfg), keep_models=False)
    body = ["model,user,auroc"]
    for name, r in (("tcn", res.tcn), ("rf", res.rf)):
        body += [f"{name},{u},{_f(r.per_user[u])}" for u in r.users]
    body += [
        f"mean_tcn {_f(res.tcn.mean)}",
        f"mean_rf {_f(res.rf.mean)}",
        f"wilcoxon_W {_f(res.test.statistic)}",
        f"wilcoxon_n {res.test.n}",
        f"p_value {_f(res.test.p_value)}",
    ]
    for name, r in (("tcn", res.tcn), ("rf", res.rf)):
        body += [f"confusion {name} (all folds)", r.total_confusion.format_table()]
    return [_write(out / "crossval.txt", cfg, "crossval", "\n".join(body))]


def cmd_window_curve(cfg: dict, out: Path) -> list[Path]:
    data = load_data(cfg)
    tcfg, rcfg = tcn_config(cfg), rf_config(cfg)
    tcn_models = {u: train(data.excluding_user(u), tcfg)[0] for u in data.user_ids}
    rf_models = {u: rf_train(data.excluding_user(u), rcfg) for u in data.user_ids}
    res = louo_window_curves(data, tcn_models, rf_models)
    body = [f"delta {res.delta}", "offset,tcn,repeat_tcn,repeat_rf"]
    for off, v in zip(res.curve.offsets, res.curve.auroc):
        if off >= 0:
            rep, rep_rf = _f(res.repeat.at(int(off))), _f(res.repeat_rf.at(int(off)))
        else:
            rep = rep_rf = "nan"
        body.append(f"{int(off)},{_f(v)},{rep},{rep_rf}")
    return [_write(out / "window_curve.txt", cfg, "window-curve", "\n".join(body))]


def cmd_ssl(cfg: dict, out: Path) -> list[Path]:
    data = load_data(cfg)
    p = cfg["protocol"]
    summary = day_protocol(
        data,
        tcn_config(cfg),
        users=p["users"],
        n_permutations=p["n_permutations"],
        permutation_seed=p["permutation_seed"],
        modes=p["modes"],
    )
    paths = []
    for mode, reports in summary.reports.items():
        body = ["day,mean_auroc,ci95_half_width,n_runs,mean_label_accuracy"]
        for r in reports:
            s = summarize_runs(r.run_aurocs)
            acc = _f(np.mean(r.label_accuracy)) if r.label_accuracy else "nan"
            body.append(f"{r.day},{_f(s.mean)},{_f(s.ci_half_width)},{s.n},{acc}")
        body.append("run,day0,day1,day2")
        for i, vals in enumerate(zip(*[r.run_aurocs for r in reports])):
            body.append(f"{i}," + ",".join(_f(v) for v in vals))
        paths.append(_write(out / f"ssl_{mode.value}.txt", cfg, "ssl", "\n".join(body)))
    deltas = "\n".join(["user,delta"] + [f"{u},{d}" for u, d in sorted(summary.deltas.items())])
    paths.append(_write(out / "ssl_deltas.txt", cfg, "ssl", deltas))
    return paths


def cmd_simulate(cfg: dict, out: Path) -> list[Path]:
    data = load_data(cfg)
    s = cfg["simulate"]
    user = s["user"] if s["user"] is not None else data.user_ids[-1]
    held = [q for q in data.for_user(user) if q.seq_index == s["seq_index"]]
    if not held:
        raise ConfigError(f"user {user} has no sequence {s['seq_index']}")
    if s["model"] is not None:
        model = load_checkpoint(s["model"])
    else:
        model, _ = train(data.excluding_user(user), tcn_config(cfg))
    result = run_closed_loop(
        model,
        held[0],
        ReferenceProfile.from_dict(s["reference"]),
        detector=DetectorConfig(**s["detector"]),
        two_legs=s["two_legs"],
        accelerated=s["accelerated"],
    )
    trace_path = out / "trace.csv"
    write_trace(trace_path, result.trace, header_lines(cfg, "simulate"))
    body = [f"sequence {held[0].name}"]
    body += [f"{k} {_f(v) if isinstance(v, float) else v}" for k, v in result.summary.to_dict().items()]
    return [trace_path, _write(out / "summary.txt", cfg, "simulate", "\n".join(body))]


COMMANDS: dict[str, Callable[[dict, Path], list[Path]]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "train-rf": cmd_train_rf,
    "crossval": cmd_crossval,
    "window-curve": cmd_window_curve,
    "ssl": cmd_ssl,
    "simulate": cmd_simulate,
}


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="walkmode", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"walkmode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file overriding the defaults")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--data", type=Path, help="dataset directory of CSVs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "train-rf"):
            p.add_argument("--exclude-user", type=int)
            p.add_argument("--epochs", type=int)
        if name == "ssl":
            p.add_argument("--labeling-mode", choices=[m.value for m in LabelingMode])
        if name == "simulate":
            p.add_argument("--model", type=Path, help="checkpoint to use instead of training")
            p.add_argument("--user", type=int)
            p.add_argument("--accelerated", action="store_true")
            p.add_argument("--two-legs", action="store_true")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict[str, Any] = {}
    if args.data is not None:
        o["data"] = str(args.data)
    if getattr(args, "exclude_user", None) is not None:
        o["train"] = {"exclude_user": args.exclude_user}
    if getattr(args, "epochs", None) is not None:
        o["tcn"] = {"epochs": args.epochs}
    if getattr(args, "labeling_mode", None):
        o["protocol"] = {"modes": [args.labeling_mode]}
    sim = {}
    if getattr(args, "model", None) is not None:
        sim["model"] = str(args.model)
    if getattr(args, "user", None) is not None:
        sim["user"] = args.user
    if getattr(args, "accelerated", False):
        sim["accelerated"] = True
    if getattr(args, "two_legs", False):
        sim["two_legs"] = True
    if sim:
        o["simulate"] = sim
    return o


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def run(command: str, config: Optional[dict], out, seed: Optional[int] = None) -> list[Path]:
    """Resolve the configuration and run one command; used by ``main`` and the tests."""
    cfg = resolve_config(config, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with _thread_limit():
        return COMMANDS[command](cfg, out)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = json.loads(args.config.read_text()) if args.config else {}
        config = _merge_user(config, _overrides(args))
        paths = run(args.command, config, args.out, args.seed)
    except (ConfigError, FileNotFoundError, ProtocolError, UndefinedMetricError, ValueError, OSError) as exc:
        print(f"walkmode {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


def _merge_user(config: dict, overrides: dict) -> dict:
    out = copy.deepcopy(config)
    for key, value in overrides.items():
        if isinstance(value, dict):
            out[key] = {**out.get(key, {}), **value}
        else:
            out[key] = value
    return out


if __name__ == "__main__":
    sys.exit(main())
