"""Command-line driver: ``ingra generate|train|eval|baseline|infer``.

Exit codes: 0 on success, 1 for runtime or numeric failures, 2 for usage
errors (bad flags, missing inputs, mismatched shapes).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from . import prototypes as proto
from .baseline import linear_granger
from .config import ModelConfig, read_config_file, write_config_file
from .data import load_csv, make_benchmark, read_dataset, standardize, window_series, write_dataset
from .errors import ConfigError, DataError, IngraError
from .metrics import EvalReport, score_individual, score_structures
from .model import IngraModel
from .training import evaluate_many, train

logger = logging.getLogger("ingra")

MANIFEST_NAME = "run_manifest.json"

# flag name -> ModelConfig field
TRAIN_FLAGS = {
    "alpha": "alpha", "prototypes": "num_prototypes", "epochs": "train_epochs",
    "pretrain_epochs": "pretrain_epochs", "lr": "learning_rate", "batch_size": "batch_size",
    "hidden": "hidden_size", "window": "window_length", "tau": "tau", "lambda1": "lambda1",
    "lambda2": "lambda2", "gamma": "gamma", "stride": "train_stride", "standardize": "standardize",
}


class UsageError(IngraError):
    """Bad command-line input; maps to exit code 2."""


# ------------------------------------------------------------------ helpers

def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args: argparse.Namespace, started: float, **extra) -> None:
    payload = {
        "command": args.command,
        "argv": list(args.argv),
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "wall_seconds": round(time.perf_counter() - started, 3),
        **extra,
    }
    tmp = out / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out / MANIFEST_NAME)


def _load_dataset(path: str):
    if not (Path(path) / "manifest.json").is_file():
        raise UsageError(f"{path}: not a dataset directory (no manifest.json)")
    return read_dataset(path)


def _resolve_model_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        for name in ("model_final.json", "model_best.json"):
            if (p / name).is_file():
                return p / name
        raise UsageError(f"{p}: no checkpoint found")
    if not p.is_file():
        raise UsageError(f"{p}: checkpoint not found")
    return p


def _splits(name: str) -> list[str]:
    return ["train", "unseen"] if name == "both" else [name]


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    started = time.perf_counter()
    out = _prepare_out(args.out, args.force)
    bench = make_benchmark(args.structures, args.per_structure, args.vars, args.len,
                           lag=args.lag, seed=args.seed, order=args.order)
    write_dataset(bench, out)
    print(f"wrote {len(bench.samples)} individuals "
          f"({len(bench.train_ids)} train / {len(bench.unseen_ids)} unseen) to {out}")
    _write_manifest(out, args, started, outputs=str(out), settings=bench.settings)
    return 0


def resolve_config(args, num_variables: int) -> ModelConfig:
    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} not found")
        values.update(read_config_file(args.config))
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    values["seed"] = args.seed
    declared = values.get("num_variables")
    if declared is not None and int(declared) != num_variables:
        raise UsageError(f"config declares {declared} variables, dataset has {num_variables}")
    values["num_variables"] = num_variables
    return ModelConfig.from_dict(values)


def cmd_train(args) -> int:
    started = time.perf_counter()
    bench = _load_dataset(args.data)
    config = resolve_config(args, bench.num_variables)
    out = _prepare_out(args.out, args.force)
    write_config_file(config, out / "config.txt")
    samples = bench.split("train")
    _, state = train(samples, config, out_dir=out)
    last = state.log[-1] if state.log else None
    if last is not None:
        print(f"epoch {last.epoch} ({last.phase}): total {last.total:.6f}")
    _write_manifest(out, args, started, config=config.to_dict(), data=str(args.data),
                    outputs=str(out), best_epoch=state.best_epoch)
    return 0


def build_report(model: IngraModel, samples, records, split: str, score_with: str = "a") -> EvalReport:
    """Score attention records against ground truth; paths stay out of the
    report so reruns elsewhere compare byte-for-byte."""
    meta = {"config": model.config.to_dict(), "score_with": score_with}
    return score_structures([s.id for s in samples], [getattr(r, score_with) for r in records],
                            [s.ground_truth for s in samples], model.config.target_index,
                            split, meta)


def _export_attention(path: Path, names: Sequence[str], ids, records) -> None:
    rows = []
    for sid, rec in zip(ids, records):
        for kind in ("q", "r", "a"):
            rows.append([sid, kind, rec.prototype_index] + [repr(float(v)) for v in getattr(rec, kind)])
    _write_rows(path, ["id", "vector", "prototype"] + list(names), rows)


def cmd_eval(args) -> int:
    started = time.perf_counter()
    model = IngraModel.load(_resolve_model_path(args.model))
    bench = _load_dataset(args.data)
    if bench.num_variables != model.config.num_variables:
        raise UsageError(f"model expects {model.config.num_variables} variables, "
                         f"dataset has {bench.num_variables}")
    out = _prepare_out(args.out, args.force)
    names = bench.samples[0].names
    for split in _splits(args.split):
        samples = bench.split(split)
        records = evaluate_many(model, samples)
        ids = [s.id for s in samples]
        report = build_report(model, samples, records, split, args.score_with)
        report.write_json(out / f"report_{split}.json")
        report.write_csv(out / f"report_{split}.csv")
        print(report.summary())
        if args.export_attention:
            _export_attention(out / f"attention_{split}.csv", names, ids, records)
    if args.export_prototypes:
        proto.write_prototypes_csv(model.bank, names, out / "prototypes.csv")
    _write_manifest(out, args, started, model=str(args.model), data=str(args.data), outputs=str(out))
    return 0


def cmd_baseline(args) -> int:
    started = time.perf_counter()
    bench = _load_dataset(args.data)
    out = _prepare_out(args.out, args.force)
    meta = {"method": "linear_granger", "maxlag": args.maxlag, "significance": args.significance}
    for split in _splits(args.split):
        rows, skipped = [], {}
        for sample in bench.split(split):
            try:
                results = linear_granger(sample, args.maxlag, args.significance)
            except DataError as exc:
                skipped[sample.id] = str(exc)
                continue
            rows.append(score_individual(sample.id, [r.score for r in results], sample.ground_truth))
        report = EvalReport(split, rows, dict(meta), skipped)
        report.write_json(out / f"report_{split}.json")
        report.write_csv(out / f"report_{split}.csv")
        print(report.summary() if rows else f"{split}: no individuals scored")
        if skipped:
            print(f"{split}: skipped {len(skipped)} individuals (series too short)")
    _write_manifest(out, args, started, data=str(args.data), outputs=str(out), **meta)
    return 0


def cmd_infer(args) -> int:
    started = time.perf_counter()
    model = IngraModel.load(_resolve_model_path(args.model))
    sample = load_csv(args.csv, target=args.target)
    if sample.num_variables != model.config.num_variables:
        raise UsageError(f"model expects {model.config.num_variables} variables, "
                         f"{args.csv} has {sample.num_variables}")
    out = _prepare_out(args.out, args.force)
    records = evaluate_many(model, [sample])
    _export_attention(out / "attention.csv", sample.names, [sample.id], records)
    # next-step forecast from the most recent window
    cfg = model.config
    scaled = standardize(sample) if cfg.standardize else sample
    last = window_series(scaled, cfg.window_length)[-1]
    prediction, _ = model.infer(last)
    (out / "forecast.json").write_text(json.dumps(
        {"id": sample.id, "window_offset": last.offset, "prediction": prediction,
         "scale": "standardized" if cfg.standardize else "raw"}, indent=2) + "\n",
        encoding="utf-8")
    rec = records[0]
    print("q: " + " ".join(f"{n}={v:.4f}" for n, v in zip(sample.names, rec.q)))
    _write_manifest(out, args, started, model=str(args.model), input=str(args.csv), outputs=str(out))
    return 0


# ------------------------------------------------------------------ parsing

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ingra", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ingra {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("generate", help="write a synthetic heterogeneous benchmark")
    g.add_argument("--structures", type=int, default=3)
    g.add_argument("--per-structure", type=int, default=100)
    g.add_argument("--vars", type=int, default=10, help="number of exogenous variables")
    g.add_argument("--len", type=int, default=1000)
    g.add_argument("--lag", type=int, default=3)
    g.add_argument("--order", type=int, default=10, help="NARMA order")
    common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on the train split")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file; flags override it")
    for flag in TRAIN_FLAGS:
        kind = {"alpha": float, "lr": float, "tau": float, "lambda1": float, "lambda2": float,
                "gamma": float, "standardize": _bool}.get(flag, int)
        t.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind, default=None)
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score learned attention against ground truth")
    e.add_argument("--model", required=True, help="checkpoint file or training directory")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "unseen", "both"), default="both")
    e.add_argument("--score-with", choices=("a", "q"), default="a")
    e.add_argument("--export-attention", action="store_true")
    e.add_argument("--export-prototypes", action="store_true")
    common(e, seed=False)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="linear Granger F-test baseline")
    b.add_argument("--data", required=True)
    b.add_argument("--split", choices=("train", "unseen", "both"), default="both")
    b.add_argument("--maxlag", type=int, default=5)
    b.add_argument("--significance", type=float, default=0.05)
    common(b, seed=False)
    b.set_defaults(func=cmd_baseline)

    i = sub.add_parser("infer", help="attention and forecast for one CSV series")
    i.add_argument("--model", required=True)
    i.add_argument("--csv", required=True)
    i.add_argument("--target", help="target column name (default: 'target')")
    common(i, seed=False)
    i.set_defaults(func=cmd_infer)
    return parser


def _thread_limit() -> Optional[int]:
    raw = os.environ.get("INGRA_THREADS")
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"INGRA_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError("INGRA_THREADS must be >= 1")
    return value


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        ctx = threadpool_limits(limits=limit) if limit else contextlib.nullcontext()
        with ctx:
            return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"ingra {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"ingra {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    except (IngraError, ArithmeticError, RuntimeError) as exc:
        print(f"ingra {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
