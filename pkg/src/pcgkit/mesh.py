"""Triangle meshes: representation, generators, OBJ loading, boundary marking.

Vertices carry one of three marks: interior, dirichlet, or neumann. Only
vertices on boundary edges (edges belonging to exactly one triangle) may be
marked dirichlet/neumann; generators mark every boundary vertex neumann and
callers then re-mark Dirichlet subsets.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTriangleError,
    DimensionMismatchError,
    EmptyDirichletSetError,
    MeshFormatError,
)

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _boundary_edge_counter(triangles: np.ndarray) -> Counter:
    counter = Counter()
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            counter[(min(u, v), max(u, v))] += 1
    return counter


@dataclass(frozen=True)
class TriangleMesh:
    """2D triangle mesh with per-vertex boundary marks.

    All triangles are counter-clockwise (positive signed area); construction
    rejects anything else.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_marks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(
            self, "boundary_marks", np.ascontiguousarray(self.boundary_marks, dtype=np.uint8)
        )
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise DimensionMismatchError("vertices must be (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise DimensionMismatchError("triangles must be (m, 3)")
        if self.boundary_marks.shape != (nv,):
            raise DimensionMismatchError("one mark per vertex required")
        t = self.triangles
        if len(t):
            if t.min() < 0 or t.max() >= nv:
                raise MeshFormatError("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise MeshFormatError("triangle with repeated vertex")
            areas = signed_areas(self.vertices, t)
            if np.any(areas <= 0.0):
                raise DegenerateTriangleError(
                    f"{int(np.sum(areas <= 0))} triangle(s) with nonpositive signed area"
                )
        if np.any(self.boundary_marks > NEUMANN):
            raise MeshFormatError("unknown boundary mark")
        marked = np.flatnonzero(self.boundary_marks != INTERIOR)
        on_boundary = self.boundary_vertex_mask()
        if np.any(~on_boundary[marked]):
            raise MeshFormatError("dirichlet/neumann mark on a non-boundary vertex")

    # -- queries ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def boundary_edges(self) -> list[tuple[int, int]]:
        """Undirected edges belonging to exactly one triangle, sorted."""
        counter = _boundary_edge_counter(self.triangles)
        return sorted(e for e, c in counter.items() if c == 1)

    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        for u, v in self.boundary_edges():
            mask[u] = True
            mask[v] = True
        return mask

    def boundary_loops(self) -> list[list[int]]:
        """Closed boundary cycles as vertex lists, longest first.

        Directed boundary edges inherit the CCW orientation of their unique
        triangle, so each boundary vertex has exactly one outgoing edge and
        the walk is well defined.
        """
        counter = _boundary_edge_counter(self.triangles)
        boundary = {e for e, c in counter.items() if c == 1}
        nxt: dict[int, int] = {}
        for a, b, c in self.triangles:
            for u, v in ((a, b), (b, c), (c, a)):
                if (min(u, v), max(u, v)) in boundary:
                    if u in nxt:
                        raise MeshFormatError(f"non-manifold boundary at vertex {u}")
                    nxt[int(u)] = int(v)
        loops = []
        seen: set[int] = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            v = nxt[start]
            while v != start:
                loop.append(v)
                seen.add(v)
                v = nxt[v]
            loops.append(loop)
        loops.sort(key=len, reverse=True)
        return loops

    def with_marks(self, marks: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, marks)


# ---------------------------------------------------------------------------
# generators and IO
# ---------------------------------------------------------------------------


def generate_unit_square(k: int) -> TriangleMesh:
    """Uniform triangulation of [0,1]^2 with (k+1)^2 vertices and 2k^2 triangles.

    Each grid cell is split along its lower-left-to-upper-right diagonal; with
    this split the interior stiffness rows of a P1 Laplace assembly reproduce
    the classic 5-point stencil. Boundary vertices start as neumann.
    """
    if k < 1:
        raise DimensionMismatchError("subdivision count must be >= 1")
    axis = np.arange(k + 1) / k
    xs, ys = np.meshgrid(axis, axis, indexing="xy")
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    def vid(ix, iy):
        return iy * (k + 1) + ix

    tris = []
    for iy in range(k):
        for ix in range(k):
            a = vid(ix, iy)
            b = vid(ix + 1, iy)
            c = vid(ix + 1, iy + 1)
            d = vid(ix, iy + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    triangles = np.array(tris, dtype=np.int64)
    marks = np.zeros(len(vertices), dtype=np.uint8)
    edge = (xs == 0.0) | (xs == 1.0) | (ys == 0.0) | (ys == 1.0)
    marks[edge.ravel()] = NEUMANN
    return TriangleMesh(vertices, triangles, marks)


def generate_disk_grid(k: int, radius: float = 1.0) -> TriangleMesh:
    """Uniform-quality disk: k concentric rings with 6*j vertices on ring j.

    Ring spacing is radius/k and the tangential spacing on every ring is
    2*pi*r_j/(6j) = (pi/3)*(radius/k), so all triangles are near-equilateral
    with edges about radius/k — element sizes and angles stay as uniform as
    on a structured square grid. Rings are stitched by an angular merge, so
    vertex degrees stay small everywhere (center 6, ring interiors ~6, the
    six spoke vertices where ring populations differ up to 8). This is the
    disk analogue of :func:`generate_unit_square`: a polar fan would instead
    concentrate one vertex of degree `sectors` at the center, and warped
    square grids concentrate tiny cells at the seams or corners of the map.
    Outermost-ring vertices lie on the circle, marked neumann.
    """
    if k < 1:
        raise MeshFormatError("a disk grid needs at least one ring")
    verts = [(0.0, 0.0)]
    ring_ids = [np.array([0], dtype=np.int64)]
    ring_angles = [np.array([0.0])]
    for j in range(1, k + 1):
        angles = 2.0 * np.pi * np.arange(6 * j) / (6 * j)
        start = len(verts)
        rj = radius * j / k
        verts.extend(zip(rj * np.cos(angles), rj * np.sin(angles)))
        ring_ids.append(np.arange(start, start + 6 * j, dtype=np.int64))
        ring_angles.append(angles)

    triangles = []
    center, first = ring_ids[0][0], ring_ids[1]
    for i in range(6):
        triangles.append((center, first[i], first[(i + 1) % 6]))
    for j in range(2, k + 1):
        inner, outer = ring_ids[j - 1], ring_ids[j]
        ia, oa = ring_angles[j - 1], ring_angles[j]
        ni, no = len(inner), len(outer)
        i = o = 0
        while i < ni or o < no:
            inner_next = ia[i + 1] if i + 1 < ni else ia[0] + 2.0 * np.pi
            outer_next = oa[o + 1] if o + 1 < no else oa[0] + 2.0 * np.pi
            if o >= no or (i < ni and inner_next <= outer_next):
                triangles.append((inner[i], outer[o % no], inner[(i + 1) % ni]))
                i += 1
            else:
                triangles.append((inner[i % ni], outer[o], outer[(o + 1) % no]))
                o += 1

    marks = np.full(len(verts), INTERIOR, dtype=np.int64)
    marks[ring_ids[k]] = NEUMANN
    return TriangleMesh(np.array(verts, dtype=np.float64),
                        np.array(triangles, dtype=np.int64), marks)


def load_obj(text: str) -> TriangleMesh:
    """Parse a Wavefront OBJ subset: 'v x y [z]' (z ignored) and triangular
    'f' records (1-based, 'i/j/k' attribute syntax tolerated).

    Faces arriving clockwise are flipped to counter-clockwise; boundary
    vertices are auto-detected and marked neumann.
    """
    verts: list[tuple[float, float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if toks[0] == "v":
            if len(toks) < 3:
                raise MeshFormatError(f"line {lineno}: vertex needs at least x y")
            try:
                verts.append((float(toks[1]), float(toks[2])))
            except ValueError as exc:
                raise MeshFormatError(f"line {lineno}: bad vertex coordinate") from exc
        elif toks[0] == "f":
            if len(toks) != 4:
                raise MeshFormatError(f"line {lineno}: non-triangular face ({len(toks) - 1} vertices)")
            face = []
            for tok in toks[1:]:
                head = tok.split("/")[0]
                try:
                    idx = int(head)
                except ValueError as exc:
                    raise MeshFormatError(f"line {lineno}: bad face index {tok!r}") from exc
                if idx < 1:
                    raise MeshFormatError(f"line {lineno}: face index must be positive")
                face.append(idx - 1)
            faces.append(face)
        # other record types (vn, vt, o, ...) are ignored
    if len(verts) < 3:
        raise MeshFormatError("fewer than 3 vertices")
    vertices = np.array(verts)
    triangles = np.array(faces, dtype=np.int64)
    if len(triangles) == 0:
        raise MeshFormatError("no faces")
    if triangles.max() >= len(vertices):
        raise MeshFormatError("face index out of range")
    areas = signed_areas(vertices, triangles)
    if np.any(areas == 0.0):
        raise DegenerateTriangleError("zero-area face")
    flip = areas < 0.0
    triangles[flip] = triangles[flip][:, ::-1]
    marks = np.zeros(len(vertices), dtype=np.uint8)
    probe = TriangleMesh(vertices, triangles, marks)
    marks[probe.boundary_vertex_mask()] = NEUMANN
    return probe.with_marks(marks)


def save_obj(mesh: TriangleMesh) -> str:
    """Serialize as OBJ with z=0; coordinates keep 17 significant digits so a
    load round-trips bit-exactly."""
    lines = []
    for x, y in mesh.vertices:
        lines.append("v %.17g %.17g 0" % (x, y))
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    return "\n".join(lines) + "\n"


def mark_dirichlet(mesh: TriangleMesh, predicate) -> TriangleMesh:
    """Re-mark boundary vertices with predicate(x, y) true as dirichlet.

    Interior vertices are never touched; raises if nothing ends up dirichlet
    (a pure-Neumann Poisson operator would be singular).
    """
    marks = mesh.boundary_marks.copy()
    for v in np.flatnonzero(mesh.boundary_vertex_mask()):
        if predicate(mesh.vertices[v, 0], mesh.vertices[v, 1]):
            marks[v] = DIRICHLET
    if not np.any(marks == DIRICHLET):
        raise EmptyDirichletSetError("predicate marked no boundary vertex dirichlet")
    return mesh.with_marks(marks)


def mark_dirichlet_arc(mesh: TriangleMesh, rng: np.random.Generator,
                       frac_range=(0.2, 0.6)) -> TriangleMesh:
    """Mark a random contiguous arc of the longest boundary loop dirichlet.

    Arc length is uniform in ``frac_range`` of the loop's vertex count (at
    least one vertex); the start position is uniform. Everything else keeps
    its existing mark.
    """
    loops = mesh.boundary_loops()
    if not loops:
        raise EmptyDirichletSetError("mesh has no boundary")
    loop = loops[0]
    frac = rng.uniform(*frac_range)
    length = max(1, int(round(frac * len(loop))))
    start = int(rng.integers(0, len(loop)))
    chosen = [loop[(start + i) % len(loop)] for i in range(length)]
    marks = mesh.boundary_marks.copy()
    marks[chosen] = DIRICHLET
    return mesh.with_marks(marks)
