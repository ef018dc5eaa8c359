"""Command-line harness: generate, train, ablate, gradcheck, report.

Exit codes are a stable contract:
    0 success, 1 usage/config error, 2 I/O error,
    3 data validation error, 4 numerical failure.
All outputs are written atomically (temp file + rename) so a failing
command never leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys
import tempfile
import time
from collections import Counter

import numpy as np

from . import autodiff as ad
from . import fusion
from .config import RunConfig, load_run_config
from .errors import ConfigError, DataFormatError, NumericalError
from .storage import read_dataset, write_dataset, write_weights
from .synth import generate_dataset
from .trainer import (ABLATION_VARIANTS, TrainConfig, forward_batch, init_params,
                      run_ablation, run_training)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    train = cfg.train
    dataset = cfg.dataset
    if getattr(args, "seed", None) is not None:
        train = dataclasses.replace(train, seed=args.seed)
        dataset = dataclasses.replace(dataset, seed=args.seed)
    variant = getattr(args, "variant", None)
    if variant is not None:
        flags = {name: (w, n) for name, w, n in ABLATION_VARIANTS}
        if variant not in flags:
            raise ConfigError(f"unknown variant {variant!r}")
        w, n = flags[variant]
        train = dataclasses.replace(train, enable_wcb=w, enable_nfb=n)
    return RunConfig(dataset=dataset, train=train)


def cmd_generate(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    samples = generate_dataset(cfg.dataset)
    write_dataset(samples, cfg.dataset, args.out)
    hist = Counter(s.truth for s in samples)
    print(f"wrote {len(samples)} triplets to {args.out}")
    print(f"spec: {dataclasses.asdict(cfg.dataset)}")
    for truth in ("clean", "partial", "mismatched"):
        count = hist.get(truth, 0)
        print(f"  {truth}: {count} ({count / len(samples):.1%})")
    return EXIT_OK


_SUMMARY_COLUMNS = ["epoch", "train_loss", "label1_fraction", "recall_at_1",
                    "recall_at_10", "recall_at_50", "filter_precision",
                    "filter_recall", "filter_f1"]
_FILTER_COLUMNS = ["epoch", "view", "mu0", "mu1", "sigma0", "sigma1", "pi0",
                   "n_matched", "n_mismatched", "n_partial",
                   "precision", "recall", "f1"]
_ABLATION_COLUMNS = ["variant", "R@1", "R@10", "R@50", "Avg"]


def _record_row(rec) -> dict:
    row = {"epoch": rec.epoch, "train_loss": rec.train_loss,
           "label1_fraction": rec.label1_fraction,
           "recall_at_1": rec.recall_at_1, "recall_at_10": rec.recall_at_10,
           "recall_at_50": rec.recall_at_50,
           "filter_precision": None, "filter_recall": None, "filter_f1": None}
    if rec.filter_score is not None:
        row["filter_precision"] = rec.filter_score.precision
        row["filter_recall"] = rec.filter_score.recall
        row["filter_f1"] = rec.filter_score.f1
    return row


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    samples, _spec = read_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)

    notes = []
    if not cfg.train.enable_nfb:
        notes.append("filter disabled")
        print("filter disabled")
    if not cfg.train.enable_wcb:
        notes.append("weight compensation disabled")

    result = run_training(samples, cfg.train)

    epoch_lines = []
    for rec in result.records:
        row = _record_row(rec)
        epoch_lines.append(json.dumps(row, sort_keys=True))
    _atomic_write_text(os.path.join(args.out, "epochs.jsonl"),
                       "".join(line + "\n" for line in epoch_lines))
    _atomic_write_text(os.path.join(args.out, "summary.csv"),
                       _csv([_record_row(r) for r in result.records],
                            _SUMMARY_COLUMNS))
    if cfg.train.enable_nfb:
        _atomic_write_text(os.path.join(args.out, "filter_report.csv"),
                           _csv([dataclasses.asdict(r) for r in result.filter_rows],
                                _FILTER_COLUMNS))
    write_weights(result.store, os.path.join(args.out, "weights.nclw"),
                  extra={"train": dataclasses.asdict(cfg.train)})
    _atomic_write_text(os.path.join(args.out, "run_meta.json"),
                       json.dumps({"config": cfg.to_dict(), "notes": notes,
                                   "n_train": len(result.train_indices),
                                   "n_eval": len(result.eval_indices)},
                                  sort_keys=True, indent=2) + "\n")
    if result.records:
        last = result.records[-1]
        print(f"final: loss={last.train_loss:.4f} "
              f"R@1={last.recall_at_1:.3f} R@10={last.recall_at_10:.3f} "
              f"R@50={last.recall_at_50:.3f}")
    else:
        print("no training epochs requested")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    samples, _spec = read_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    rows = run_ablation(samples, cfg.train)
    _atomic_write_text(os.path.join(args.out, "ablation.csv"),
                       _csv(rows, _ABLATION_COLUMNS))
    for row in rows:
        print(f"{row['variant']:>9}: R@1={row['R@1']:.3f} R@10={row['R@10']:.3f} "
              f"R@50={row['R@50']:.3f} Avg={row['Avg']:.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    """Full-pipeline gradient check on a tiny random batch."""
    from .synth import DatasetSpec, generate_dataset as gen

    if args.inject_fault:
        ad.set_backward_fault(args.inject_fault)
    try:
        spec = DatasetSpec(num_concepts=4, dim=8, text_tokens=4, image_patches=6,
                           num_triplets=4, noise_scale=0.05,
                           distractor_fraction=0.25, seed=args.seed or 0)
        samples = gen(spec)
        store = init_params(spec.dim, spec.seed)
        labels = np.ones(len(samples))

        def f(st):
            tape = ad.Tape()
            views = forward_batch(tape, st, samples, enable_wcb=True)
            return fusion.soft_nce_loss(views.q, views.t, views.q_wcb,
                                        views.t_wcb, labels,
                                        fusion.DEFAULT_TEMPERATURE)

        start = time.time()
        report = ad.grad_check(f, store, step=1e-6, tol=1e-5)
        elapsed = time.time() - start
    finally:
        ad.set_backward_fault(None)

    print(f"checked {report.n_entries} parameter entries in {elapsed:.2f}s")
    print(f"max relative error: {report.max_rel_error:.3e} "
          f"(worst parameter: {report.worst_param or 'n/a'})")
    print(f"max absolute error (small-gradient branch): {report.max_abs_error:.3e}")
    for group, err in sorted(report.group_worst.items()):
        print(f"  group {group}: worst error {err:.3e}")
    if args.inject_fault:
        print(f"fault injected in op {args.inject_fault}")
    if report.passed:
        print("PASS (tolerance 1e-5)")
        return EXIT_OK
    print("FAIL (tolerance 1e-5)")
    return EXIT_NUMERIC


def cmd_report(args) -> int:
    summary = os.path.join(args.out, "summary.csv")
    if not os.path.exists(summary):
        raise FileNotFoundError(f"no summary.csv under {args.out}")
    with open(summary, "r", encoding="utf-8") as fh:
        text = fh.read()
    print(text, end="")
    meta_path = os.path.join(args.out, "run_meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("notes"):
            print("notes: " + "; ".join(meta["notes"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisycir",
        description="Noise-aware contrastive retrieval toolkit (desk scale)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic triplet dataset")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train on a dataset file")
    tr.add_argument("--config", required=True)
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--variant",
                    choices=[name for name, _, _ in ABLATION_VARIANTS])
    tr.set_defaults(func=cmd_train)

    ab = sub.add_parser("ablate", help="train all four flag variants")
    ab.add_argument("--config", required=True)
    ab.add_argument("--dataset", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int)
    ab.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="full-pipeline gradient check")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--inject-fault", metavar="OP",
                    help="test hook: corrupt the named op's backward pass")
    gc.set_defaults(func=cmd_gradcheck)

    rp = sub.add_parser("report", help="print a run directory's summary")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def console_main() -> None:
    raise SystemExit(main())
