#!/usr/bin/env python3
"""Benchmark classic and learned preconditioners on held-out heat tuples.

Trains the staged model unless --checkpoint points at an existing one, then
times every (tuple, method) cell and writes the results as CSV and markdown.
"""

import argparse
import time

from pcgkit import gnn
from pcgkit.bench import aggregate, emit_tables, run_benchmark
from pcgkit.fem import generate_dataset, train_test_split
from pcgkit.fixtures import HEAT_HYPER, heat_dataset_config, train_staged

CLASSIC = ["jacobi", "gauss_seidel", "ic0", "ic2"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", help="reuse a trained model instead of training")
    ap.add_argument("--save-model", help="write the trained checkpoint here")
    ap.add_argument("--out", default="heat_benchmark", help="output file stem")
    ap.add_argument("--seed", type=int, default=101, help="dataset seed")
    ap.add_argument("--repetitions", type=int, default=5, help="timing repetitions per cell")
    ap.add_argument("--kappa", action="store_true", help="add condition-number columns")
    args = ap.parse_args(argv)

    cfg = heat_dataset_config(seed=args.seed)
    train_tuples, test_tuples = train_test_split(generate_dataset(cfg))
    print(f"{len(train_tuples)} train / {len(test_tuples)} test tuples on {cfg.name}")

    if args.checkpoint:
        model = gnn.load_model(args.checkpoint)
    else:
        start = time.perf_counter()
        model, _ = train_staged(gnn.create_model(HEAT_HYPER, seed=7), train_tuples)
        print(f"trained in {time.perf_counter() - start:.0f}s")
        if args.save_model:
            gnn.save_model(args.save_model, model)

    records = run_benchmark(test_tuples, CLASSIC + [model], task=cfg.name,
                            repetitions=args.repetitions,
                            condition_numbers=args.kappa)
    for ext, fmt in (("csv", "csv"), ("md", "markdown")):
        path = f"{args.out}.{ext}"
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(emit_tables(records, format=fmt))
        print("wrote", path)

    for (task, method), stats in sorted(aggregate(records).items()):
        per_threshold = ", ".join(
            f"{t:g}: {m:g}" for t, m in zip(stats["thresholds"],
                                            stats["median_iterations"]))
        print(f"{method:>13}  median iterations  {per_threshold}")


if __name__ == "__main__":
    main()
