#!/usr/bin/env python3
"""Train the two loss variants under identical budgets and compare them.

Both models share the initialization seed, the batch schedule, and the data;
the only difference is whether training minimizes the factor-matching loss
or the solution-aware loss. Prints per-threshold medians on the held-out
tuples plus the fraction where the solution-aware model is strictly faster.
"""

import argparse
import time

import numpy as np

from pcgkit import gnn
from pcgkit.fem import generate_dataset, train_test_split
from pcgkit.fixtures import HEAT_HYPER, heat_dataset_config, train_staged
from pcgkit.pcg import SolveOptions, pcg_solve

THRESHOLDS = (1e-6, 1e-8, 1e-10)


def iteration_columns(model, tuples):
    opts = SolveOptions(thresholds=THRESHOLDS)
    cols = {t: [] for t in THRESHOLDS}
    for tup in tuples:
        _, rep = pcg_solve(tup.A, tup.b, gnn.build_learned(model, tup.A, tup.b), opts)
        for t in THRESHOLDS:
            cols[t].append(rep.iterations_to.get(t, np.inf))
    return cols


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=101, help="dataset seed")
    ap.add_argument("--init-seed", type=int, default=7, help="model init seed")
    args = ap.parse_args(argv)

    cfg = heat_dataset_config(seed=args.seed)
    train_tuples, test_tuples = train_test_split(generate_dataset(cfg))
    init = gnn.create_model(HEAT_HYPER, seed=args.init_seed)

    columns = {}
    for kind in ("naive", "data"):
        start = time.perf_counter()
        model, hist = train_staged(init, train_tuples, loss_kind=kind)
        print(f"{kind}: {hist[-1]['step']} steps in {time.perf_counter() - start:.0f}s, "
              f"final batch loss {hist[-1]['batch_loss']:.3e}")
        columns[kind] = iteration_columns(model, test_tuples)

    for t in THRESHOLDS:
        naive, data = columns["naive"][t], columns["data"][t]
        strict = sum(d < n for d, n in zip(data, naive))
        print(f"@{t:g}: median naive {np.median(naive):g}, data {np.median(data):g}; "
              f"data strictly fewer on {strict}/{len(test_tuples)}")


if __name__ == "__main__":
    main()
