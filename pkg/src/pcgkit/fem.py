"""P1 Galerkin assembly for Poisson/heat/wave problems on triangle meshes,
plus trajectory dataset generation.

Discretizations (all SPD by construction):

    poisson:  K u = f
    heat:     (M + dt*alpha*K) u_next = M u_prev + dt*f      (implicit Euler)
    wave:     (M + dt^2*c^2*K) u_next = M (2 u_prev - u_prev2)

with K the stiffness matrix, M the consistent mass matrix, and f the load
(source mass-weighted, plus lumped Neumann edge fluxes). Dirichlet conditions
are eliminated symmetrically: known values move to the right-hand side and the
reduced system over free vertices is returned with an index map.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mmio
from .errors import (
    DataFormatError,
    DegenerateTriangleError,
    DimensionMismatchError,
    SingularSystemError,
)
from .mesh import (DIRICHLET, NEUMANN, TriangleMesh, generate_disk_grid,
                   generate_unit_square, load_obj, mark_dirichlet_arc,
                   save_obj)
from .sparse import SparseMatrixCsr, spmv

log = logging.getLogger(__name__)

MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def element_stiffness(tri_coords) -> np.ndarray:
    """3x3 stiffness block: area * (grad phi_a . grad phi_b) for linear hats.

    Scale-invariant in 2D (the area cancels the 1/area^2 of the gradients),
    so similar triangles share a block. Rows sum to zero because constants
    lie in the gradient kernel.
    """
    p = np.asarray(tri_coords, dtype=np.float64)
    if p.shape != (3, 2):
        raise DimensionMismatchError("element expects three 2-D vertices")
    twice_area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
    if twice_area == 0.0:
        raise DegenerateTriangleError("zero-area triangle")
    # hat gradient components, up to the 1/(2A) factor
    bs = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
    cs = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
    return (np.outer(bs, bs) + np.outer(cs, cs)) / (2.0 * abs(twice_area))


def element_mass(tri_coords) -> np.ndarray:
    """3x3 consistent mass block (area/12) * [[2,1,1],[1,2,1],[1,1,2]]."""
    p = np.asarray(tri_coords, dtype=np.float64)
    if p.shape != (3, 2):
        raise DimensionMismatchError("element expects three 2-D vertices")
    twice_area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
    if twice_area == 0.0:
        raise DegenerateTriangleError("zero-area triangle")
    return (abs(twice_area) / 2.0) * MASS_TEMPLATE


@dataclass(frozen=True)
class PdeProblem:
    """One PDE instance on a mesh: kind, physics parameters, per-vertex data.

    ``source``/``dirichlet_values``/``neumann_values`` are full-length
    per-vertex arrays (irrelevant positions ignored). The wave kind uses
    neither source nor Neumann data.
    """

    kind: str
    alpha: float = 1.0
    wave_speed: float = 1.0
    dt: float = 0.0
    source: np.ndarray | None = None
    dirichlet_values: np.ndarray | None = None
    neumann_values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "heat", "wave"):
            raise DimensionMismatchError(f"unknown PDE kind {self.kind!r}")
        if self.kind == "heat" and self.alpha <= 0:
            raise DimensionMismatchError("heat requires alpha > 0")
        if self.kind == "wave" and self.wave_speed <= 0:
            raise DimensionMismatchError("wave requires wave_speed > 0")
        if self.kind in ("heat", "wave") and self.dt <= 0:
            raise DimensionMismatchError("time-dependent kinds require dt > 0")


@dataclass(frozen=True)
class AssembledSystem:
    """Reduced SPD system plus the bookkeeping to embed solutions back."""

    A: SparseMatrixCsr
    b: np.ndarray
    free_vertices: np.ndarray  # reduced index -> vertex id
    boundary_values: np.ndarray  # full length; Dirichlet values, 0 elsewhere

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Full per-vertex field from a reduced solution."""
        u = self.boundary_values.copy()
        u[self.free_vertices] = x
        return u


def full_stiffness_and_mass(mesh: TriangleMesh) -> tuple[SparseMatrixCsr, SparseMatrixCsr]:
    """Global K and M over all vertices, sharing one sparsity pattern.

    Element blocks are scattered in element order, so the accumulated values
    are exactly symmetric (each (i,j)/(j,i) slot sums identical addends in
    identical order).
    """
    tris = mesh.triangles
    nv = mesh.n_vertices
    rows = np.repeat(tris, 3, axis=1).ravel()  # i index of each of the 9 slots
    cols = np.tile(tris, (1, 3)).ravel()
    k_vals = np.empty(9 * len(tris))
    m_vals = np.empty(9 * len(tris))
    for e, tri in enumerate(tris):
        k_vals[9 * e : 9 * e + 9] = element_stiffness(mesh.vertices[tri]).ravel()
        m_vals[9 * e : 9 * e + 9] = element_mass(mesh.vertices[tri]).ravel()
    K = SparseMatrixCsr.from_coo(nv, rows, cols, k_vals)
    M = SparseMatrixCsr.from_coo(nv, rows, cols, m_vals)
    return K, M


def _neumann_load(mesh: TriangleMesh, flux: np.ndarray) -> np.ndarray:
    """Lumped boundary-edge fluxes: every neumann endpoint of a boundary edge
    receives (edge length / 2) * flux.

    Lumping this way keeps constant-flux loads exact even on edges whose other
    endpoint is dirichlet (the dirichlet row is eliminated anyway).
    """
    out = np.zeros(mesh.n_vertices)
    marks = mesh.boundary_marks
    for u, v in mesh.boundary_edges():
        length = float(np.hypot(*(mesh.vertices[u] - mesh.vertices[v])))
        if marks[u] == NEUMANN:
            out[u] += 0.5 * length * flux[u]
        if marks[v] == NEUMANN:
            out[v] += 0.5 * length * flux[v]
    return out


def assemble(mesh: TriangleMesh, problem: PdeProblem, state=None) -> AssembledSystem:
    """Assemble the reduced SPD system for one solve/time step.

    ``state`` supplies u_prev for heat and (u_prev, u_prev2) for wave, as
    full-length vertex fields. Dirichlet rows/columns are eliminated
    symmetrically; poisson requires at least one Dirichlet vertex.
    """
    nv = mesh.n_vertices
    K, M = full_stiffness_and_mass(mesh)
    marks = mesh.boundary_marks
    zeros = np.zeros(nv)
    source = zeros if problem.source is None else np.asarray(problem.source, dtype=np.float64)
    g = (
        zeros
        if problem.dirichlet_values is None
        else np.asarray(problem.dirichlet_values, dtype=np.float64)
    )
    flux = (
        zeros
        if problem.neumann_values is None
        else np.asarray(problem.neumann_values, dtype=np.float64)
    )
    for name, arr in (("source", source), ("dirichlet_values", g), ("neumann_values", flux)):
        if arr.shape != (nv,):
            raise DimensionMismatchError(f"{name} must have one entry per vertex")

    if problem.kind == "poisson":
        if not np.any(marks == DIRICHLET):
            raise SingularSystemError("poisson needs at least one dirichlet vertex")
        A_full = K
        load = spmv(M, source) + _neumann_load(mesh, flux)
    elif problem.kind == "heat":
        u_prev = np.asarray(state, dtype=np.float64)
        if u_prev.shape != (nv,):
            raise DimensionMismatchError("heat state must be a full u_prev field")
        A_full = SparseMatrixCsr(
            nv, K.row_ptr, K.col_idx, M.values + (problem.dt * problem.alpha) * K.values
        )
        load = spmv(M, u_prev) + problem.dt * (spmv(M, source) + _neumann_load(mesh, flux))
    elif problem.kind == "wave":
        try:
            u_prev, u_prev2 = state
        except (TypeError, ValueError) as exc:
            raise DimensionMismatchError("wave state must be (u_prev, u_prev2)") from exc
        u_prev = np.asarray(u_prev, dtype=np.float64)
        u_prev2 = np.asarray(u_prev2, dtype=np.float64)
        if u_prev.shape != (nv,) or u_prev2.shape != (nv,):
            raise DimensionMismatchError("wave state fields must cover all vertices")
        coef = problem.dt * problem.dt * problem.wave_speed * problem.wave_speed
        A_full = SparseMatrixCsr(nv, K.row_ptr, K.col_idx, M.values + coef * K.values)
        load = spmv(M, 2.0 * u_prev - u_prev2)
    else:  # unreachable; PdeProblem validates
        raise DimensionMismatchError(problem.kind)

    dirichlet = marks == DIRICHLET
    free = np.flatnonzero(~dirichlet)
    if len(free) == 0:
        raise SingularSystemError("no free vertices left after elimination")
    g_masked = np.where(dirichlet, g, 0.0)
    b = load[free] - spmv(A_full, g_masked)[free]
    return AssembledSystem(A_full.submatrix(free), b, free, g_masked)


# ---------------------------------------------------------------------------
# trajectory datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetTuple:
    A: SparseMatrixCsr
    b: np.ndarray
    x: np.ndarray
    meta: dict


@dataclass(frozen=True)
class Trajectory:
    tuples: list
    meta: dict

    def __len__(self):
        return len(self.tuples)


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that determines a dataset, so a (config, seed) pair is
    reproducible byte for byte."""

    name: str
    kind: str
    mesh_spec: dict
    n_trajectories: int
    steps: int
    seed: int
    n_test_trajectories: int = 0
    dt: float = 5e-3
    alpha_range: tuple = (1.0, 2.0)
    wave_speed_range: tuple = (1.0, 1.0)
    parameter_shift: float = 0.0  # additive shift of the physics parameter
    n_source_bumps: int = 3
    source_amplitude: float = 1.0
    solve_threshold: float = 1e-12

    def __post_init__(self):
        if self.steps < 1:
            raise DimensionMismatchError("a trajectory needs at least one step")
        if self.n_trajectories < 1 or self.n_test_trajectories >= self.n_trajectories:
            raise DimensionMismatchError("bad trajectory split")


def build_mesh(mesh_spec: dict) -> TriangleMesh:
    shape = mesh_spec.get("shape")
    if shape == "square":
        return generate_unit_square(int(mesh_spec["k"]))
    if shape == "disk":
        from .fixtures import disk_obj_text

        return load_obj(disk_obj_text(int(mesh_spec["rings"]), int(mesh_spec["sectors"])))
    if shape == "disk-grid":
        return generate_disk_grid(int(mesh_spec["k"]),
                                  float(mesh_spec.get("radius", 1.0)))
    if shape == "obj":
        return load_obj(mesh_spec["text"])
    raise DataFormatError(f"unknown mesh shape {mesh_spec!r}")


def _bump_field(mesh: TriangleMesh, rng: np.random.Generator, n_bumps: int,
                amplitude: float, centers=None, widths=None, amps=None):
    """Smooth random field: a sum of Gaussian bumps sampled at the vertices.

    The bump parameters may be supplied (for time-evolving sources); fresh
    ones are drawn otherwise. Returns (field, (centers, widths, amps)).
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    diam = float(np.max(hi - lo))
    if centers is None:
        centers = rng.uniform(lo, hi, size=(n_bumps, 2))
        widths = rng.uniform(0.1, 0.35, size=n_bumps) * diam
        amps = rng.uniform(-1.0, 1.0, size=n_bumps) * amplitude
    d2 = ((mesh.vertices[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    field = (amps[None, :] * np.exp(-d2 / (2.0 * widths[None, :] ** 2))).sum(axis=1)
    return field, (centers, widths, amps)


def _solve_tuple(A: SparseMatrixCsr, b: np.ndarray, threshold: float):
    # deferred import: the solver sits above this module in the stack
    from .pcg import SolveOptions, pcg_solve
    from .preconditioners import build_ic0

    opts = SolveOptions(thresholds=(threshold,), max_iter=max(20 * A.n, 200))
    x, report = pcg_solve(A, b, build_ic0(A), opts)
    return x, report


def _simulate_trajectory(cfg: DatasetConfig, base_mesh: TriangleMesh, traj_id: int,
                         rng: np.random.Generator) -> Trajectory:
    mesh = mark_dirichlet_arc(base_mesh, rng)
    params: dict = {"trajectory": traj_id, "kind": cfg.kind, "dt": cfg.dt}
    source, _ = _bump_field(mesh, rng, cfg.n_source_bumps, cfg.source_amplitude)
    g_const = float(rng.uniform(-1.0, 1.0))
    g = np.full(mesh.n_vertices, g_const)
    flux = np.full(mesh.n_vertices, float(rng.uniform(-0.5, 0.5)))

    if cfg.kind == "heat":
        alpha = float(rng.uniform(*cfg.alpha_range) + cfg.parameter_shift)
        params["alpha"] = alpha
        problem = PdeProblem("heat", alpha=alpha, dt=cfg.dt, source=source,
                             dirichlet_values=g, neumann_values=flux)
    elif cfg.kind == "wave":
        speed = float(rng.uniform(*cfg.wave_speed_range) + cfg.parameter_shift)
        params["wave_speed"] = speed
        g = np.zeros(mesh.n_vertices)
        problem = PdeProblem("wave", wave_speed=speed, dt=cfg.dt, dirichlet_values=g)
    elif cfg.kind == "poisson":
        params["dirichlet_level"] = g_const
        problem = PdeProblem("poisson", source=source, dirichlet_values=g,
                             neumann_values=flux)
    else:
        raise DataFormatError(f"unknown PDE kind {cfg.kind!r}")

    u0, _ = _bump_field(mesh, rng, cfg.n_source_bumps, 1.0)
    u0 = np.where(mesh.boundary_marks == DIRICHLET, g, u0)
    v0, _ = _bump_field(mesh, rng, cfg.n_source_bumps, 0.5)
    bump_velocity = rng.uniform(-0.2, 0.2, size=(cfg.n_source_bumps, 2))
    source_state = None

    tuples = []
    u_prev, u_prev2 = u0, u0 - cfg.dt * v0
    for step in range(cfg.steps):
        if cfg.kind == "poisson":
            # evolve the source bumps so b varies along the trajectory
            if source_state is None:
                _, source_state = _bump_field(mesh, rng, cfg.n_source_bumps, cfg.source_amplitude)
            centers, widths, amps = source_state
            moved = centers + step * cfg.dt * 20.0 * bump_velocity
            field, _ = _bump_field(mesh, rng, cfg.n_source_bumps, cfg.source_amplitude,
                                   centers=moved, widths=widths, amps=amps)
            problem_t = PdeProblem("poisson", source=field, dirichlet_values=g,
                                   neumann_values=flux)
            system = assemble(mesh, problem_t)
        elif cfg.kind == "heat":
            system = assemble(mesh, problem, state=u_prev)
        else:
            system = assemble(mesh, problem, state=(u_prev, u_prev2))

        x, report = _solve_tuple(system.A, system.b, cfg.solve_threshold)
        u_full = system.embed(x)
        resid = np.linalg.norm(system.b - spmv(system.A, x))
        scale = np.linalg.norm(system.b)
        accepted = report.converged and (scale == 0.0 or resid / scale <= 1e-10)
        if accepted:
            meta = dict(params, step=step, n=system.A.n)
            tuples.append(DatasetTuple(system.A, system.b, x, meta))
        else:
            log.warning("trajectory %d step %d rejected (converged=%s, rel resid=%.3e)",
                        traj_id, step, report.converged, resid / max(scale, 1e-300))
        if cfg.kind == "wave":
            u_prev, u_prev2 = u_full, u_prev
        else:
            u_prev = u_full
    return Trajectory(tuples, params)


def generate_dataset(cfg: DatasetConfig, out_dir=None) -> list[Trajectory]:
    """Simulate all trajectories of a config; optionally persist to a directory.

    Fully deterministic for a fixed config: per-trajectory RNG streams are
    spawned from the config seed. The first (n_trajectories -
    n_test_trajectories) trajectories are the training split; split boundaries
    never cut through a trajectory.
    """
    base_mesh = build_mesh(cfg.mesh_spec)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trajectories)
    out = []
    n_train = cfg.n_trajectories - cfg.n_test_trajectories
    for t in range(cfg.n_trajectories):
        traj = _simulate_trajectory(cfg, base_mesh, t, np.random.default_rng(streams[t]))
        traj.meta["split"] = "train" if t < n_train else "test"
        out.append(traj)
    if out_dir is not None:
        save_dataset(out_dir, cfg, out, base_mesh)
    return out


def train_test_split(trajectories) -> tuple[list, list]:
    train = [t for traj in trajectories if traj.meta["split"] == "train" for t in traj.tuples]
    test = [t for traj in trajectories if traj.meta["split"] == "test" for t in traj.tuples]
    return train, test


# ---------------------------------------------------------------------------
# dataset persistence (manifest.json + Matrix Market files)
# ---------------------------------------------------------------------------


def _tuple_id(traj_id: int, step: int) -> str:
    return f"t{traj_id:03d}_s{step:03d}"


def save_dataset(out_dir, cfg: DatasetConfig, trajectories, base_mesh=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if base_mesh is None:
        base_mesh = build_mesh(cfg.mesh_spec)
    with open(os.path.join(out_dir, "mesh.obj"), "w", encoding="ascii", newline="\n") as fh:
        fh.write(save_obj(base_mesh))
    manifest = {
        "schema_version": 1,
        "name": cfg.name,
        "kind": cfg.kind,
        "mesh_file": "mesh.obj",
        "seed": cfg.seed,
        "config": _config_as_json(cfg),
        "trajectories": [],
    }
    for traj in trajectories:
        traj_id = traj.meta["trajectory"]
        entry = {"id": traj_id, "split": traj.meta["split"],
                 "params": {k: v for k, v in traj.meta.items() if k not in ("trajectory", "split")},
                 "tuples": []}
        for tup in traj.tuples:
            tid = _tuple_id(traj_id, tup.meta["step"])
            files = {"A": f"A_{tid}.mtx", "b": f"b_{tid}.mtx", "x": f"x_{tid}.mtx"}
            mmio.save_matrix(os.path.join(out_dir, files["A"]), tup.A)
            mmio.save_vector(os.path.join(out_dir, files["b"]), tup.b)
            mmio.save_vector(os.path.join(out_dir, files["x"]), tup.x)
            entry["tuples"].append({"id": tid, "files": files, "meta": tup.meta})
        manifest["trajectories"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _config_as_json(cfg: DatasetConfig) -> dict:
    raw = asdict(cfg)
    raw["alpha_range"] = list(raw["alpha_range"])
    raw["wave_speed_range"] = list(raw["wave_speed_range"])
    return raw


def load_dataset(path) -> tuple[dict, list[Trajectory]]:
    """Read a dataset directory back; returns (manifest, trajectories)."""
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path, encoding="ascii") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read manifest at {manifest_path}: {exc}") from exc
    if manifest.get("schema_version") != 1:
        raise DataFormatError("unsupported dataset schema version")
    trajectories = []
    for entry in manifest["trajectories"]:
        tuples = []
        for rec in entry["tuples"]:
            files = rec["files"]
            A = mmio.load_matrix(os.path.join(path, files["A"]))
            b = mmio.load_vector(os.path.join(path, files["b"]))
            x = mmio.load_vector(os.path.join(path, files["x"]))
            tuples.append(DatasetTuple(A, b, x, rec["meta"]))
        meta = dict(entry["params"], trajectory=entry["id"], split=entry["split"])
        trajectories.append(Trajectory(tuples, meta))
    return manifest, trajectories
