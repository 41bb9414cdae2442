"""Command-line surface tying the toolkit together.

Subcommands: ``mesh gen|info``, ``data gen``, ``train``, ``bench``, ``solve``,
``sweep``, ``model info``. Every subcommand takes ``--seed`` (overrides config
seeds), ``--threads`` (benchmark worker count) and ``--config`` (JSON file
with a ``schema_version`` field). Exit codes: 0 success, 2 invalid arguments,
3 unreadable or malformed data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace

import numpy as np

from . import bench, fem, gnn, mmio
from . import train as train_mod
from .errors import (
    BreakdownError,
    DataFormatError,
    DegenerateTriangleError,
    DenseBudgetError,
    DimensionMismatchError,
    DivergenceError,
    EmptyDirichletSetError,
    FactorizationBreakdownError,
    InvalidFactorError,
    MeshFormatError,
    NonFiniteAdjointError,
    NonFiniteGradientError,
    NotSpdError,
    SingularSystemError,
)
from .mesh import (DIRICHLET, INTERIOR, NEUMANN, generate_disk_grid,
                   generate_unit_square, load_obj, save_obj)
from .pcg import SolveOptions, pcg_solve

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

CONFIG_SCHEMA_VERSION = 1

_DATA_ERRORS = (DataFormatError, MeshFormatError, DegenerateTriangleError,
                EmptyDirichletSetError, OSError)
_NUMERICAL_ERRORS = (NotSpdError, BreakdownError, FactorizationBreakdownError,
                     DivergenceError, NonFiniteGradientError, NonFiniteAdjointError,
                     SingularSystemError, DenseBudgetError, InvalidFactorError)


def _read_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise DataFormatError(
            f"config {path} must declare schema_version {CONFIG_SCHEMA_VERSION}")
    return {k: v for k, v in doc.items() if k != "schema_version"}


def _dataset_config(doc: dict, seed_override) -> fem.DatasetConfig:
    known = {f.name for f in fields(fem.DatasetConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise DataFormatError(f"unknown dataset config keys: {unknown}")
    coerced = {k: tuple(v) if k in ("alpha_range", "wave_speed_range") else v
               for k, v in doc.items()}
    try:
        cfg = fem.DatasetConfig(**coerced)
    except TypeError as exc:
        raise DataFormatError(f"incomplete dataset config: {exc}") from exc
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    return cfg


def _thresholds(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise DimensionMismatchError(f"bad threshold list {text!r}") from exc


def _split_tuples(trajectories, split: str) -> list:
    train_set, test_set = fem.train_test_split(trajectories)
    return {"train": train_set, "test": test_set, "all": train_set + test_set}[split]


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_mesh_gen(args) -> int:
    if args.shape == "square":
        mesh = generate_unit_square(args.k)
    elif args.shape == "disk-grid":
        mesh = generate_disk_grid(args.k)
    else:
        from .fixtures import disk_obj_text

        mesh = load_obj(disk_obj_text(args.rings, args.sectors))
    _write_text(args.out, save_obj(mesh))
    print(f"wrote {args.shape} mesh: {len(mesh.vertices)} vertices, "
          f"{len(mesh.triangles)} triangles")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    try:
        with open(args.path, encoding="ascii") as fh:
            mesh = load_obj(fh.read())
    except OSError as exc:
        raise DataFormatError(f"cannot read mesh {args.path}: {exc}") from exc
    marks = mesh.boundary_marks
    print(f"vertices: {len(mesh.vertices)}")
    print(f"triangles: {len(mesh.triangles)}")
    print(f"boundary loops: {len(mesh.boundary_loops())}")
    print(f"boundary edges: {len(mesh.boundary_edges())}")
    print(f"marks: interior={int(np.sum(marks == INTERIOR))} "
          f"dirichlet={int(np.sum(marks == DIRICHLET))} "
          f"neumann={int(np.sum(marks == NEUMANN))}")
    return EXIT_OK


def cmd_data_gen(args) -> int:
    if not args.config:
        raise DimensionMismatchError("data gen requires --config with a dataset config")
    cfg = _dataset_config(_read_config(args.config), args.seed)
    trajectories = fem.generate_dataset(cfg, out_dir=args.out)
    n_tuples = sum(len(t) for t in trajectories)
    print(f"dataset {cfg.name}: {len(trajectories)} trajectories, "
          f"{n_tuples} tuples -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _read_config(args.config) if args.config else {}
    hyper = gnn.GnnHyperParams(
        l=args.layers if args.layers is not None else doc.get("l", 1),
        h=args.width if args.width is not None else doc.get("h", 16),
        n_mp=args.rounds if args.rounds is not None else doc.get("n_mp", 5),
        l_mp=args.mp_layers if args.mp_layers is not None else doc.get("l_mp", 1),
        h_mp=args.mp_width if args.mp_width is not None else doc.get("h_mp", 16),
        with_x0_head=args.x0_head or doc.get("with_x0_head", False),
        normalize=not args.no_normalize and doc.get("normalize", True),
    )
    config = train_mod.TrainConfig(
        loss_kind=args.loss if args.loss is not None else doc.get("loss_kind", "data"),
        learning_rate=args.lr if args.lr is not None else doc.get("learning_rate", 1e-3),
        batch_size=args.batch_size if args.batch_size is not None else doc.get("batch_size", 16),
        epochs=args.epochs if args.epochs is not None else doc.get("epochs", 1),
        seed=args.seed if args.seed is not None else doc.get("seed", 0),
        checkpoint_every=args.checkpoint_every if args.checkpoint_every is not None
        else doc.get("checkpoint_every", 0),
    )
    _, trajectories = fem.load_dataset(args.data)
    tuples = _split_tuples(trajectories, "train")
    if not tuples:
        raise DataFormatError(f"dataset {args.data} has no training tuples")
    model = gnn.create_model(hyper, seed=args.model_seed)
    trained, history = train_mod.train(model, tuples, config, out_dir=args.out)
    final = history[-1]["batch_loss"] if history else float("nan")
    print(f"trained {len(history)} steps on {len(tuples)} tuples; "
          f"final batch loss {final:.6e} -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    _, trajectories = fem.load_dataset(args.data)
    tuples = _split_tuples(trajectories, args.split)
    if not tuples:
        raise DataFormatError(f"dataset {args.data} has no {args.split!r} tuples")
    opts = SolveOptions(thresholds=_thresholds(args.thresholds))
    records = bench.run_benchmark(
        tuples, args.methods.split(","), opts,
        task=args.task, repetitions=args.repetitions,
        workers=args.threads or 1, condition_numbers=args.cond)
    _write_text(args.out, bench.emit_tables(records, args.format))
    for (task, method), row in bench.aggregate(records).items():
        med = ", ".join(f"{format(t, 'g')}: {it:g}" for t, it in
                        zip(row["thresholds"], row["median_iterations"]))
        log.info("%s/%s: %d/%d converged; median iterations {%s}",
                 task, method, row["converged"], row["count"], med)
    return EXIT_OK


def cmd_solve(args) -> int:
    A = mmio.load_matrix(args.matrix)
    b = mmio.load_vector(args.rhs)
    _, builder = bench._resolve_method(args.method)
    P = builder(A, b)
    opts = SolveOptions(thresholds=_thresholds(args.thresholds),
                        max_iter=args.max_iter, absolute=args.absolute)
    x, report = pcg_solve(A, b, P, opts)
    if args.out:
        mmio.save_vector(args.out, x)
    print(f"converged={report.converged} iterations={report.iterations} "
          f"final_relative_residual={report.final_relative_residual:.3e}")
    return EXIT_OK if report.converged else EXIT_NUMERICAL


def cmd_sweep(args) -> int:
    if not args.config:
        raise DimensionMismatchError("sweep requires --config with a dataset config")
    cfg = _dataset_config(_read_config(args.config), args.seed)
    model = gnn.load_model(args.model)
    shifts = tuple(float(s) for s in args.shifts.split(","))
    opts = SolveOptions(thresholds=_thresholds(args.thresholds))
    grouped = bench.generalization_sweep(
        model, cfg, shifts, opts,
        baselines=tuple(args.baselines.split(",")) if args.baselines else (),
        repetitions=args.repetitions, condition_numbers=args.cond)
    records = [r for shift in shifts for r in grouped[shift]]
    _write_text(args.out, bench.emit_tables(records, args.format))
    return EXIT_OK


def cmd_model_info(args) -> int:
    model = gnn.load_model(args.path)
    hp = model.hyper
    print(f"encoders/decoders: {hp.l} hidden layers, width {hp.h}")
    print(f"message passing: {hp.n_mp} rounds, {hp.l_mp} hidden layers, width {hp.h_mp}")
    print(f"x0 head: {hp.with_x0_head}")
    print(f"input normalization: {hp.normalize}")
    print(f"parameters: {model.n_parameters()} in {len(model.params)} tensors")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the seed from configs")
    common.add_argument("--threads", type=int, default=None,
                        help="benchmark worker threads")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--verbose", action="store_true", help="chatty logging")

    parser = argparse.ArgumentParser(prog="pcgkit",
                                     description="sparse PCG toolkit with "
                                                 "classic and learned preconditioners")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate or inspect meshes")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = mesh_sub.add_parser("gen", parents=[common])
    gen.add_argument("--shape", choices=("square", "disk", "disk-grid"),
                     default="square")
    gen.add_argument("--k", type=int, default=8, help="square grid resolution")
    gen.add_argument("--rings", type=int, default=6)
    gen.add_argument("--sectors", type=int, default=24)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_mesh_gen)
    info = mesh_sub.add_parser("info", parents=[common])
    info.add_argument("path")
    info.set_defaults(func=cmd_mesh_info)

    data = sub.add_parser("data", help="generate datasets")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    dgen = data_sub.add_parser("gen", parents=[common])
    dgen.add_argument("--out", required=True)
    dgen.set_defaults(func=cmd_data_gen)

    tr = sub.add_parser("train", parents=[common], help="train a preconditioner")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--loss", choices=("data", "naive"), default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--checkpoint-every", type=int, default=None)
    tr.add_argument("--layers", type=int, default=None)
    tr.add_argument("--width", type=int, default=None)
    tr.add_argument("--rounds", type=int, default=None)
    tr.add_argument("--mp-layers", type=int, default=None)
    tr.add_argument("--mp-width", type=int, default=None)
    tr.add_argument("--x0-head", action="store_true")
    tr.add_argument("--no-normalize", action="store_true")
    tr.add_argument("--model-seed", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    be = sub.add_parser("bench", parents=[common], help="benchmark preconditioners")
    be.add_argument("--data", required=True)
    be.add_argument("--methods", required=True,
                    help="comma list of kinds and/or model checkpoint paths")
    be.add_argument("--split", choices=("train", "test", "all"), default="test")
    be.add_argument("--task", default="bench")
    be.add_argument("--thresholds", default="1e-2,1e-4,1e-6,1e-8,1e-10,1e-12")
    be.add_argument("--repetitions", type=int, default=5)
    be.add_argument("--cond", action="store_true", help="also compute condition numbers")
    be.add_argument("--format", choices=("csv", "markdown"), default="csv")
    be.add_argument("--out", default=None, help="output file (default stdout)")
    be.set_defaults(func=cmd_bench)

    so = sub.add_parser("solve", parents=[common], help="solve one system")
    so.add_argument("--matrix", required=True)
    so.add_argument("--rhs", required=True)
    so.add_argument("--method", default="jacobi")
    so.add_argument("--thresholds", default="1e-2,1e-4,1e-6,1e-8,1e-10,1e-12")
    so.add_argument("--max-iter", type=int, default=None)
    so.add_argument("--absolute", action="store_true")
    so.add_argument("--out", default=None, help="write the solution vector here")
    so.set_defaults(func=cmd_solve)

    sw = sub.add_parser("sweep", parents=[common],
                        help="benchmark a model on shifted test distributions")
    sw.add_argument("--model", required=True)
    sw.add_argument("--shifts", default="1,3,5",
                    help="comma list of sigma multiples")
    sw.add_argument("--baselines", default="jacobi")
    sw.add_argument("--thresholds", default="1e-2,1e-4,1e-6,1e-8,1e-10,1e-12")
    sw.add_argument("--repetitions", type=int, default=1)
    sw.add_argument("--cond", action="store_true")
    sw.add_argument("--format", choices=("csv", "markdown"), default="csv")
    sw.add_argument("--out", default=None)
    sw.set_defaults(func=cmd_sweep)

    mo = sub.add_parser("model", help="inspect model checkpoints")
    mo_sub = mo.add_subparsers(dest="model_command", required=True)
    minfo = mo_sub.add_parser("info", parents=[common])
    minfo.add_argument("path")
    minfo.set_defaults(func=cmd_model_info)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse has already printed its message
        return int(exc.code) if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DimensionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
