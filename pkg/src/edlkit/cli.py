"""Command-line entry point: gen-data, train, eval, sweep, curves, selftest.

Every command takes ``--config`` (JSON, see README) plus flags that override
file values.  Outputs go to ``--out`` or, failing that, to a directory under
``$EDLKIT_OUTPUT_ROOT`` (default ``./runs``) named after the command and a
hash of the effective config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness as hx
from .data import Standardizer, read_csv, write_csv
from .metrics import MEASURES, write_pr_csv, write_roc_csv
from .nn import load_checkpoint, save_checkpoint, train
from .selftest import run_selftest, write_report

log = logging.getLogger("edlkit")

SPLIT_NAMES = ("train", "val", "test", "ood_val", "ood_test")


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--form", help="loss form" + (" (comma list sweeps)" if sweep else ""))
    p.add_argument("--evidence", help="evidence function" + (" (comma list sweeps)" if sweep else ""))
    p.add_argument("--lambda", dest="lam",
                   help="start:step:stop, comma list or 'tuned'" if sweep else "prior weight per class, or 'tuned'")
    p.add_argument("--mu", help="KL coefficient" + (" (range or comma list)" if sweep else ""))
    p.add_argument("--kl-schedule", choices=hx.SCHEDULES)
    p.add_argument("--variance", dest="variance", action="store_true", default=None,
                   help="include the variance term (edl_mse)")
    p.add_argument("--no-variance", dest="variance", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edlkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write the synthetic splits as CSV")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one network and save a checkpoint")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", type=Path, help="directory written by gen-data")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="directory written by gen-data")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="run a grid of cells over seeds")
    _add_common(p, sweep=True)
    p.add_argument("--seeds", help="comma list, e.g. 0,1,2,3,4")
    p.add_argument("--ablation", action="store_true", help="the 8-cell ablation grid of loss toggles")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("curves", help="ROC and PR point files for a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--measure", action="append", choices=MEASURES)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("selftest", help="run the oracle and invariant checks")
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int, default=200_000)
    return parser


# ---------------------------------------------------------------------------


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _lambda_values(text: str) -> list:
    if text.strip() == hx.TUNED:
        return [hx.TUNED]
    return hx.parse_range(text)


def _load_config(args) -> hx.ExperimentConfig:
    return hx.load_config(args.config) if getattr(args, "config", None) else hx.ExperimentConfig()


def _apply_overrides(cfg: hx.ExperimentConfig, args, sweep: bool = False) -> hx.ExperimentConfig:
    obj = cfg.to_json()
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"), ("jobs", "jobs")):
        v = getattr(args, flag, None)
        if v is not None:
            obj[key] = v
    loss = obj["loss"]
    if getattr(args, "kl_schedule", None):
        loss["kl_schedule"] = args.kl_schedule
    if getattr(args, "variance", None) is not None:
        loss["use_variance_term"] = args.variance
    try:
        if sweep:
            axes = dict(obj["sweep"])
            if args.form:
                axes["form"] = _split_list(args.form)
            if args.evidence:
                axes["evidence_fn"] = _split_list(args.evidence)
            if args.lam:
                axes["lambda"] = _lambda_values(args.lam)
            if args.mu:
                axes["mu"] = hx.parse_range(args.mu)
            obj["sweep"] = axes
            if args.seeds:
                obj["seeds"] = [int(s) for s in _split_list(args.seeds)]
            if args.ablation:
                obj["ablation"] = True
        else:
            if getattr(args, "form", None):
                loss["form"] = args.form
            if getattr(args, "evidence", None):
                loss["evidence_fn"] = args.evidence
            if getattr(args, "mu", None):
                loss["kl_coefficient"] = float(args.mu)
            if getattr(args, "lam", None) and args.lam != hx.TUNED:
                loss["lambda"] = float(args.lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return hx.parse_config(obj)


def _out_dir(args, cfg: hx.ExperimentConfig | None, command: str) -> Path:
    if args.out is not None:
        return args.out
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    tag = cfg.digest() if cfg is not None else "default"
    return hx.default_output_root() / f"{command}-{tag}"


def _raw_splits(args, cfg: hx.ExperimentConfig) -> dict:
    if getattr(args, "data", None):
        n = cfg.data.num_classes
        out = {name: read_csv(args.data / f"{name}.csv", n) for name in SPLIT_NAMES}
        for path in sorted(args.data.glob("noisy_*.csv")):
            out[path.stem] = read_csv(path, n)
        return out
    return hx.make_raw_splits(cfg.data, args.seed)


def _standardizer_json(st: Standardizer) -> dict:
    return {"mean": st.mean.tolist(), "scale": st.scale.tolist()}


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    run = hx.RunDirectory(_out_dir(args, cfg, "gen-data"))
    raw = hx.make_raw_splits(cfg.data, args.seed)
    for name, ds in raw.items():
        write_csv(ds, run.file(f"{name}.csv"))
    run.write_json("config.json", cfg.to_json())
    run.finish({"command": "gen-data", "seed": args.seed, "rows": {k: len(v) for k, v in raw.items()}})
    print(run.path)
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    run = hx.RunDirectory(_out_dir(args, cfg, f"train-s{args.seed}"))
    splits = hx.standardize(_raw_splits(args, cfg))
    loss = cfg.loss
    if args.lam == hx.TUNED:
        if not loss.evidential:
            raise UsageError(f"--lambda tuned needs an evidential form, got {loss.form}")
        _, lam, net, epoch_log = hx.select_lambda(cfg, loss, splits, args.seed)
        loss = loss.with_(lam=lam)
    else:
        net, epoch_log = train(hx.build_net(cfg, args.seed), splits.train.features, splits.train.labels,
                               loss, cfg.epochs, cfg.batch_size, args.seed, cfg.lr)
    save_checkpoint(net, run.file("model.ckpt"), {
        "loss": hx.loss_to_json(loss),
        "standardizer": _standardizer_json(splits.standardizer),
        "seed": args.seed,
    })
    hx.write_rows(run.file("epoch_log.csv"), epoch_log)
    run.write_json("config.json", cfg.to_json())
    run.finish({"command": "train", "seed": args.seed, "lambda_used": loss.lam})
    print(run.path)
    return 0


def _load_model(args):
    try:
        net, header = load_checkpoint(args.checkpoint)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    extra = header.get("extra", {})
    if "loss" not in extra or "standardizer" not in extra:
        raise UsageError(f"{args.checkpoint}: checkpoint lacks loss/standardizer metadata")
    loss = hx.parse_loss(extra["loss"], "checkpoint.loss")
    st = Standardizer(extra["standardizer"]["mean"], extra["standardizer"]["scale"])
    cfg = _load_config(args)
    splits = hx.standardize(_raw_splits(args, cfg), st)
    if splits.test.dim != net.spec.input_dim:
        raise UsageError(f"data has {splits.test.dim} features, checkpoint expects {net.spec.input_dim}")
    return net, loss, splits, cfg


def cmd_eval(args) -> int:
    net, loss, splits, cfg = _load_model(args)
    metrics = hx.evaluate(net, loss, splits.test, splits.ood_test, cfg.measures, splits.noisy)
    run = hx.RunDirectory(_out_dir(args, None, f"eval-{args.checkpoint.stem}"))
    hx.write_rows(run.file("results.csv"), [{"checkpoint": str(args.checkpoint), **metrics}])
    run.write_json("metrics.json", {k: (None if isinstance(v, float) and np.isnan(v) else v)
                                    for k, v in metrics.items()})
    run.finish({"command": "eval", "checkpoint": str(args.checkpoint)})
    print(json.dumps({k: round(v, 6) for k, v in metrics.items() if not np.isnan(v)}, sort_keys=True))
    return 0


def cmd_curves(args) -> int:
    net, loss, splits, _ = _load_model(args)
    measures = args.measure or [hx.primary_measure(loss)]
    run = hx.RunDirectory(_out_dir(args, None, f"curves-{args.checkpoint.stem}"))
    for m in measures:
        try:
            scores, labels = hx.ood_scores(net, loss, splits.test, splits.ood_test, m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        write_roc_csv(run.file(f"roc_{m}.csv"), scores, labels)
        write_pr_csv(run.file(f"pr_{m}.csv"), scores, labels)
    run.finish({"command": "curves", "checkpoint": str(args.checkpoint), "measures": measures})
    print(run.path)
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(_load_config(args), args, sweep=True)
    run = hx.RunDirectory(_out_dir(args, cfg, "sweep"))
    table = hx.run_experiment(cfg)
    hx.write_result_table(run, cfg, table)
    run.finish({"command": "sweep", "cells": len(table.aggregated), "seeds": cfg.seeds})
    print(run.path)
    return 0


def cmd_selftest(args) -> int:
    run = hx.RunDirectory(args.out if args.out is not None else hx.default_output_root() / "selftest")
    results = run_selftest(args.seed, args.mc_samples)
    write_report(results, run.file("selftest.csv"))
    failed = [r.name for r in results if not r.passed]
    run.write_json("summary.json", {
        "format_version": hx.FORMAT_VERSION,
        "checks": len(results),
        "failed": failed,
        "passed": not failed,
    })
    run.finish({"command": "selftest", "seed": args.seed})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} max_error={r.max_error:.3e} tol={r.tolerance:.1e}")
    return 1 if failed else 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "curves": cmd_curves,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (hx.ConfigError, UsageError) as exc:
        print(f"edlkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"edlkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
