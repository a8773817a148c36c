"""Command-line entry point.

    hlop run <config>            execute a task-sequence experiment
    hlop verify <suite>          run a named invariant suite
    hlop oracle <csv> --k K      extract top-k principal directions
    hlop synth-data --out DIR    generate the offline IDX dataset

Exit codes: 0 success, 1 failed checks / failed run, 2 invalid configuration
or arguments, 3 missing or malformed dataset files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, echo_config, load_config
from .harness.checkpoint import load_checkpoint
from .harness.data import DatasetError, write_idx_dataset
from .harness.loop import run_continual
from .harness.metrics import write_metrics_csv, write_summary_csv
from .linalg import subspace_alignment_error, topk_principal
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def cmd_run(config_path: str, resume: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except FileNotFoundError:
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print("invalid configuration:", file=sys.stderr)
        for p in e.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(cfg.output_dir, exist_ok=True)
    try:
        result = run_continual(
            cfg,
            resume_path=resume,
            checkpoint_dir=cfg.output_dir if cfg.checkpoint_every_task else None,
        )
    except (FileNotFoundError, DatasetError) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATA

    for line in result.logs:
        print(line)
    if result.audit is not None:
        worst = max(result.audit.values()) if result.audit else 0.0
        print(f"interference audit: worst protected-direction drift {worst:.3e}")

    echo_path = os.path.join(cfg.output_dir, "resolved_config.cfg")
    tmp = echo_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(echo_config(cfg))
    os.replace(tmp, echo_path)
    write_metrics_csv(os.path.join(cfg.output_dir, "metrics.csv"), result.matrix)
    write_summary_csv(os.path.join(cfg.output_dir, "summary.csv"), result.matrix)
    print(f"wrote metrics.csv, summary.csv, resolved_config.cfg to {cfg.output_dir}")
    return EXIT_OK


def cmd_verify(suite: str) -> int:
    if suite not in SUITES:
        print(
            f"unknown suite {suite!r}; choose from {', '.join(sorted(SUITES))}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    results = run_suite(suite)
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        failed += 0 if r.ok else 1
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_oracle(
    data_path: str,
    k: int,
    out_path: str | None = None,
    checkpoint: str | None = None,
    layer: int = 0,
) -> int:
    try:
        data = np.loadtxt(data_path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError:
        print(f"error: cannot read {data_path}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {data_path} is not a numeric CSV matrix: {e}", file=sys.stderr)
        return EXIT_DATA
    if k < 1 or k > data.shape[1]:
        print(
            f"error: k={k} out of range for {data.shape[1]}-dimensional samples",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if data.shape[0] < k:
        print(f"error: need at least k={k} samples, got {data.shape[0]}", file=sys.stderr)
        return EXIT_CONFIG
    m = topk_principal(data, k)
    out_path = out_path or (data_path + ".components.csv")
    tmp = out_path + ".tmp"
    np.savetxt(tmp, m, delimiter=",")
    os.replace(tmp, out_path)
    print(f"wrote {k} principal directions to {out_path}")
    if checkpoint is not None:
        try:
            ckpt = load_checkpoint(checkpoint)
        except Exception as e:
            print(f"error: cannot read checkpoint: {e}", file=sys.stderr)
            return EXIT_DATA
        if layer not in ckpt.subspaces:
            print(
                f"error: checkpoint has no subspace for layer {layer} "
                f"(layers: {sorted(ckpt.subspaces)})",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        h = ckpt.subspaces[layer].H
        if h.shape[0] == 0:
            print(f"error: layer {layer} has no consolidated subspace", file=sys.stderr)
            return EXIT_CONFIG
        if h.shape[1] != data.shape[1]:
            print(
                f"error: subspace width {h.shape[1]} != sample width {data.shape[1]}",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        err = subspace_alignment_error(h, m)
        print(f"alignment error vs layer {layer} consolidated subspace: {err:.6f}")
    return EXIT_OK


def cmd_synth_data(out_dir: str, n_train: int, n_test: int, seed: int) -> int:
    write_idx_dataset(out_dir, n_train=n_train, n_test=n_test, seed=seed)
    print(f"wrote IDX dataset ({n_train} train / {n_test} test) to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hlop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a task-sequence experiment from a config file")
    run_p.add_argument("config", help="flat-key config file")
    run_p.add_argument("--resume", default=None, help="checkpoint to continue from")

    ver_p = sub.add_parser("verify", help="run a named invariant suite")
    ver_p.add_argument("suite", help=f"one of: {', '.join(sorted(SUITES))}")

    ora_p = sub.add_parser("oracle", help="top-k principal directions of a CSV sample matrix")
    ora_p.add_argument("csv", help="CSV matrix, one sample per row")
    ora_p.add_argument("--k", type=int, required=True, help="number of directions")
    ora_p.add_argument("--out", default=None, help="output CSV (default <csv>.components.csv)")
    ora_p.add_argument("--checkpoint", default=None, help="compare against a checkpointed subspace")
    ora_p.add_argument("--layer", type=int, default=0, help="subspace layer index in the checkpoint")

    syn_p = sub.add_parser("synth-data", help="generate the deterministic offline dataset")
    syn_p.add_argument("--out", required=True, help="output directory for the IDX files")
    syn_p.add_argument("--train", type=int, default=12000)
    syn_p.add_argument("--test", type=int, default=4000)
    syn_p.add_argument("--seed", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, resume=args.resume)
    if args.command == "verify":
        return cmd_verify(args.suite)
    if args.command == "oracle":
        return cmd_oracle(args.csv, args.k, args.out, args.checkpoint, args.layer)
    if args.command == "synth-data":
        return cmd_synth_data(args.out, args.train, args.test, args.seed)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
