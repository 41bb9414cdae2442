"""Graph-network preconditioner: graph construction, the message-passing
model, and assembly of the learned LDL^T factor.

The pipeline maps a linear system (A, b) onto a graph (one node per unknown
carrying b_i, one directed edge per stored nonzero carrying A_ij, self-loops
included), runs an encoder / message-passing / decoder network with 16-wide
features, averages the two directions of every edge, and slots the averaged
scalars into a strictly lower triangular factor L'. The preconditioner

    P = (I + L') diag(A) (I + L')^T

is SPD for any finite network output, because the unit triangle is always
nonsingular and diag(A) > 0 for SPD input.

The forward pass is exactly permutation-equivariant (bitwise): all dense ops
act row-wise and neighborhood sums are accumulated in a canonical order, so
relabeling the nodes relabels the outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataFormatError, DimensionMismatchError, NotSpdError, PcgkitError
from .preconditioners import FactorPreconditioner
from .sparse import LowerFactor, SparseMatrixCsr

FEATURE_WIDTH = 16
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------


def _sorted_stats(values: np.ndarray) -> tuple[float, float]:
    """Mean/std computed over sorted values: invariant to input order, so
    normalization cannot break permutation equivariance."""
    m = len(values)
    if m == 0:
        return 0.0, 1.0
    mean = float(np.sum(np.sort(values)) / m)
    var = float(np.sum(np.sort((values - mean) ** 2)) / m)
    std = var**0.5
    return mean, (std if std > 0.0 else 1.0)


@dataclass(frozen=True)
class GraphData:
    """A linear system laid out for message passing."""

    n_nodes: int
    node_features: np.ndarray  # (n, 1): b_i
    edge_src: np.ndarray  # (m,): i of each directed edge, CSR row-major order
    edge_dst: np.ndarray  # (m,): j
    edge_features: np.ndarray  # (m, 1): A_ij
    edge_pair_index: np.ndarray  # (m,): position of the reverse edge (j, i)
    node_stats: tuple  # (mean, std) of b, recorded at construction
    edge_stats: tuple  # (mean, std) of A values

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)


def graph_from_system(A: SparseMatrixCsr, b) -> GraphData:
    """One node per unknown (feature b_i), one directed edge per stored
    nonzero (feature A_ij). Requires a symmetric matrix with a full diagonal
    so that every edge has a reverse partner and self-loops exist."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise DimensionMismatchError(f"b has shape {b.shape}, expected ({A.n},)")
    if not A.has_full_diagonal():
        raise DataFormatError("matrix is missing explicit diagonal entries")
    if not A.is_symmetric():
        raise DataFormatError("matrix values are not symmetric")
    src = A.row_indices()
    dst = A.col_idx.copy()
    # edges sorted by (dst, src) enumerate the reverses of the (src, dst) order
    order = np.lexsort((src, dst))
    pair = np.empty(len(order), dtype=np.int64)
    pair[order] = np.arange(len(order), dtype=np.int64)
    return GraphData(
        n_nodes=A.n,
        node_features=b[:, None].copy(),
        edge_src=src,
        edge_dst=dst,
        edge_features=A.values[:, None].copy(),
        edge_pair_index=pair,
        node_stats=_sorted_stats(b),
        edge_stats=_sorted_stats(A.values),
    )


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GnnHyperParams:
    """Architecture knobs. ``l``/``h`` size the encoders and decoders
    (hidden-layer count and width); ``l_mp``/``h_mp`` size the per-round
    message MLPs; ``n_mp`` is the number of message-passing rounds."""

    l: int = 1
    h: int = 16
    n_mp: int = 5
    l_mp: int = 1
    h_mp: int = 16
    with_x0_head: bool = False
    normalize: bool = True

    def __post_init__(self):
        if min(self.l, self.h, self.n_mp, self.l_mp, self.h_mp) < 1:
            raise DimensionMismatchError("all architecture sizes must be >= 1")


def _mlp_dims(in_dim: int, hidden: int, layers: int, out_dim: int) -> list:
    widths = [in_dim] + [hidden] * layers + [out_dim]
    return list(zip(widths[:-1], widths[1:]))


def _layer_specs(hyper: GnnHyperParams) -> list:
    """Ordered (name, fan_in, fan_out) for every weight matrix in the model."""
    specs = []

    def stack(prefix, in_dim, hidden, layers, out_dim):
        for k, (fi, fo) in enumerate(_mlp_dims(in_dim, hidden, layers, out_dim)):
            specs.append((f"{prefix}.{k}", fi, fo))

    f = FEATURE_WIDTH
    stack("node_enc", 1, hyper.h, hyper.l, f)
    stack("edge_enc", 1, hyper.h, hyper.l, f)
    for r in range(hyper.n_mp):
        stack(f"mp{r}.node", 2 * f, hyper.h_mp, hyper.l_mp, f)
        stack(f"mp{r}.edge", 3 * f, hyper.h_mp, hyper.l_mp, f)
    stack("edge_dec", f, hyper.h, hyper.l, 1)
    if hyper.with_x0_head:
        stack("node_dec", f, hyper.h, hyper.l, 1)
    return specs


@dataclass
class GnnModel:
    hyper: GnnHyperParams
    params: dict  # name -> np.ndarray; "<stack>.<k>.w" and "<stack>.<k>.b"

    def parameter_names(self) -> list:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "GnnModel":
        return GnnModel(self.hyper, {k: v.copy() for k, v in self.params.items()})


def create_model(hyper: GnnHyperParams = GnnHyperParams(), seed: int = 0) -> GnnModel:
    """Glorot-normal weights, zero biases, deterministic in the seed.

    Processor output layers carry an extra 0.1 gain. The message aggregation
    sums ~degree elementwise products per round, so unit-gain draws
    occasionally compound over five rounds to 1e4-scale edge outputs, and the
    assembled product (I+L')D(I+L')^T then rounds to an indefinite dense
    matrix. Damping both factors of the product keeps a fresh model's output
    near the Jacobi point regardless of the seed.
    """
    rng = np.random.default_rng(seed)
    last_mp = str(hyper.l_mp)
    params = {}
    for name, fi, fo in _layer_specs(hyper):
        scale = (2.0 / (fi + fo)) ** 0.5
        if name.startswith("mp") and name.split(".")[-1] == last_mp:
            scale *= 0.1
        params[name + ".w"] = rng.standard_normal((fi, fo)) * scale
        params[name + ".b"] = np.zeros(fo)
    return GnnModel(hyper, params)


def _validate_params(model: GnnModel) -> None:
    expected = {}
    for name, fi, fo in _layer_specs(model.hyper):
        expected[name + ".w"] = (fi, fo)
        expected[name + ".b"] = (fo,)
    got = {k: v.shape for k, v in model.params.items()}
    if got != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(got) & set(expected) if got[k] != expected[k])
        raise DimensionMismatchError(
            f"parameter set does not match hyperparameters "
            f"(missing={missing}, unexpected={extra}, wrong shape={wrong})")
    for k, v in model.params.items():
        if not np.all(np.isfinite(v)):
            raise DataFormatError(f"non-finite weights in {k}")


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    edge_scalars: Tensor  # (m,) decoded value per directed edge
    node_scalars: Tensor | None  # (n,) when the x0 head exists
    tape: Tape
    param_tensors: dict


def _mlp(prefix: str, x: Tensor, params: dict, n_layers: int) -> Tensor:
    # n_layers hidden layers with ReLU, then a linear output layer
    for k in range(n_layers + 1):
        x = ad.affine(x, params[f"{prefix}.{k}.w"], params[f"{prefix}.{k}.b"])
        if k < n_layers:
            x = ad.relu(x)
    return x


def forward(model: GnnModel, graph: GraphData, param_tensors: dict | None = None,
            tape: Tape | None = None) -> ForwardResult:
    """Run the network; returns tape-backed tensors so callers can
    differentiate. For plain inference use :func:`run`."""
    _validate_params(model)
    hp = model.hyper
    if tape is None:
        tape = Tape()
    if param_tensors is None:
        param_tensors = {k: tape.tensor(v) for k, v in model.params.items()}
    p = param_tensors

    node_in = graph.node_features
    edge_in = graph.edge_features
    if hp.normalize:
        mu, sd = graph.node_stats
        node_in = (node_in - mu) / sd
        mu, sd = graph.edge_stats
        edge_in = (edge_in - mu) / sd

    v = _mlp("node_enc", tape.tensor(node_in), p, hp.l)
    e = _mlp("edge_enc", tape.tensor(edge_in), p, hp.l)
    for r in range(hp.n_mp):
        msg = ad.mul(e, ad.gather_rows(v, graph.edge_dst))
        agg = ad.segment_sum(msg, graph.edge_src, graph.n_nodes)
        v = _mlp(f"mp{r}.node", ad.concat_features((v, agg)), p, hp.l_mp)
        e = _mlp(
            f"mp{r}.edge",
            ad.concat_features((e, ad.gather_rows(v, graph.edge_src),
                                ad.gather_rows(v, graph.edge_dst))),
            p, hp.l_mp,
        )
    edge_scalars = ad.flatten(_mlp("edge_dec", e, p, hp.l))
    node_scalars = None
    if hp.with_x0_head:
        node_scalars = ad.flatten(_mlp("node_dec", v, p, hp.l))
    return ForwardResult(edge_scalars, node_scalars, tape, param_tensors)


def run(model: GnnModel, graph: GraphData):
    """Inference convenience: plain arrays (edge scalars, node scalars|None)."""
    out = forward(model, graph)
    x0 = out.node_scalars.value if out.node_scalars is not None else None
    return out.edge_scalars.value, x0


# ---------------------------------------------------------------------------
# symmetrization and preconditioner assembly
# ---------------------------------------------------------------------------


def lower_edge_indices(graph: GraphData) -> np.ndarray:
    """Positions of strictly-lower edges (src > dst) in edge order; this is
    exactly the slot order of A.strict_lower()."""
    return np.flatnonzero(graph.edge_src > graph.edge_dst)


def symmetrize_triangulate(edge_scalars, graph: GraphData):
    """Average each edge with its reverse and keep the strict lower triangle.

    Accepts a Tensor (training) or an array (inference); self-loop outputs are
    dropped — the assembled factor's diagonal comes from diag(A).
    """
    idx = lower_edge_indices(graph)
    rev = graph.edge_pair_index[idx]
    if isinstance(edge_scalars, Tensor):
        return ad.scale(ad.add(ad.gather_rows(edge_scalars, idx),
                               ad.gather_rows(edge_scalars, rev)), 0.5)
    edge_scalars = np.asarray(edge_scalars, dtype=np.float64)
    return 0.5 * (edge_scalars[idx] + edge_scalars[rev])


def assemble_preconditioner(lower_values: np.ndarray, A: SparseMatrixCsr) -> FactorPreconditioner:
    """P = (I + L') diag(A) (I + L')^T — SPD for any finite lower values."""
    d = A.diagonal()
    if np.any(d <= 0.0):
        bad = int(np.argmax(d <= 0.0))
        raise NotSpdError(f"nonpositive diagonal entry at row {bad}", pivot=bad)
    pattern = A.strict_lower()
    lower_values = np.asarray(lower_values, dtype=np.float64)
    if lower_values.shape != (pattern.nnz,):
        raise DimensionMismatchError(
            f"expected {pattern.nnz} lower-triangle values, got {lower_values.shape}")
    lower = SparseMatrixCsr(A.n, pattern.row_ptr, pattern.col_idx, lower_values)
    return FactorPreconditioner("learned", LowerFactor(A.n, lower, d.copy()))


def build_learned(model: GnnModel, A: SparseMatrixCsr, b) -> FactorPreconditioner:
    """graph -> forward -> symmetrize -> assemble, end to end."""
    graph = graph_from_system(A, b)
    edge_scalars, _ = run(model, graph)
    return assemble_preconditioner(symmetrize_triangulate(edge_scalars, graph), A)


def predict_x0(model: GnnModel, graph: GraphData) -> np.ndarray:
    """Decoded per-node scalars as a PCG starting guess. The graph is built
    from the reduced system, so indices already follow its index map."""
    if not model.hyper.with_x0_head:
        raise PcgkitError("model has no x0 prediction head")
    _, x0 = run(model, graph)
    return x0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_model(path, model: GnnModel) -> None:
    _validate_params(model)
    hyper = json.dumps({
        "l": model.hyper.l, "h": model.hyper.h, "n_mp": model.hyper.n_mp,
        "l_mp": model.hyper.l_mp, "h_mp": model.hyper.h_mp,
        "with_x0_head": model.hyper.with_x0_head,
        "normalize": model.hyper.normalize,
    }, sort_keys=True)
    # Weights are written by hand so every value carries 17 significant
    # digits (enough to reload float64 bitwise); json.dump would shorten them.
    chunks = [f'{{"format_version": {CHECKPOINT_VERSION}, "hyper": {hyper}, "tensors": {{']
    for k, (name, arr) in enumerate(sorted(model.params.items())):
        data = ", ".join(format(x, ".17g") for x in arr.ravel())
        chunks.append(
            f'{", " if k else ""}{json.dumps(name)}: '
            f'{{"data": [{data}], "shape": {json.dumps(list(arr.shape))}}}')
    chunks.append("}}\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(chunks))


def load_model(path) -> GnnModel:
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DataFormatError("unsupported checkpoint format version")
    try:
        hyper = GnnHyperParams(**doc["hyper"])
        params = {
            name: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
            for name, rec in doc["tensors"].items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed checkpoint: {exc}") from exc
    model = GnnModel(hyper, params)
    _validate_params(model)
    return model
