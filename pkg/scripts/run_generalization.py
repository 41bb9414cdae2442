#!/usr/bin/env python3
"""Stress a trained model outside its training distribution.

Two probes: physics-parameter shifts at multiples of the training sigma
(same square geometry), and a transfer to the disk mesh it never saw.
Requires a checkpoint (train one with run_heat_benchmark.py --save-model).
"""

import argparse

import numpy as np

from pcgkit import gnn
from pcgkit.bench import aggregate, emit_tables, generalization_sweep, run_benchmark
from pcgkit.fem import generate_dataset, train_test_split
from pcgkit.fixtures import disk_dataset_config, heat_dataset_config


def report(records):
    for (task, method), stats in sorted(aggregate(records).items()):
        meds = ", ".join(f"{t:g}: {m:g}" for t, m in
                         zip(stats["thresholds"], stats["median_iterations"]))
        print(f"  {task:>18} {method:>13}  {meds}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint", help="trained model to evaluate")
    ap.add_argument("--shifts", type=float, nargs="*", default=[1.0, 3.0, 5.0],
                    help="sigma multiples for the parameter sweep")
    ap.add_argument("--seed", type=int, default=101, help="dataset seed")
    ap.add_argument("--out", help="optional CSV stem for the sweep tables")
    args = ap.parse_args(argv)

    model = gnn.load_model(args.checkpoint)
    base = heat_dataset_config(seed=args.seed)

    print("parameter shifts:")
    sweep = generalization_sweep(model, base, [0.0] + list(args.shifts))
    for shift, records in sorted(sweep.items()):
        report(records)
        if args.out:
            path = f"{args.out}_shift{shift:g}.csv"
            with open(path, "w", encoding="ascii", newline="\n") as fh:
                fh.write(emit_tables(records, format="csv"))

    print("disk transfer:")
    _, disk_test = train_test_split(generate_dataset(disk_dataset_config()))
    records = run_benchmark(disk_test, ["jacobi", "gauss_seidel", model],
                            task="heat-disk", repetitions=1)
    report(records)
    learned = [r for r in records if r.method == "learned"]
    print(f"  converged on {sum(r.converged for r in learned)}/{len(learned)} "
          f"disk systems (n={disk_test[0].A.n})")


if __name__ == "__main__":
    main()
