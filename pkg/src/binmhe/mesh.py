"""2D triangular meshes: structured generation, file I/O, point location.

A mesh stores vertex coordinates, triangle connectivity, and a per-vertex
boundary tag. Vertices are ordered so that the free ones (interior or
no-flux boundary) come first and the fixed-value (Dirichlet) ones last;
every consumer of the mesh relies on that ordering to slice assembled
matrices without index gymnastics.

Mesh file format (text)::

    vertices <count> elements <count>
    <x> <y> <tag>        one line per vertex, tag 0=interior 1=neumann 2=dirichlet
    <a> <b> <c>          one line per element, 0-based vertex indices
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INTERIOR, NEUMANN, DIRICHLET = 0, 1, 2

_EDGES = ("bottom", "top", "left", "right")


class MeshError(ValueError):
    """Invalid mesh construction parameters or file contents."""


class PlacementError(ValueError):
    """A query point lies outside the meshed domain."""


@dataclass
class Mesh:
    vertices: np.ndarray       # (n_phi, 2) coordinates in meters
    elements: np.ndarray       # (n_el, 3) vertex indices, positively oriented
    boundary_tags: np.ndarray  # (n_phi,) INTERIOR / NEUMANN / DIRICHLET

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=np.int64)
        self.validate()

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_free(self):
        """Number of non-Dirichlet vertices (the model dimension)."""
        return int(np.sum(self.boundary_tags != DIRICHLET))

    @property
    def n_dirichlet(self):
        return self.n_vertices - self.n_free

    def signed_areas(self):
        p = self.vertices[self.elements]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def validate(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be an (m, 3) array")
        if self.boundary_tags.shape != (self.n_vertices,):
            raise MeshError("one boundary tag per vertex required")
        if not np.all(np.isin(self.boundary_tags, (INTERIOR, NEUMANN, DIRICHLET))):
            raise MeshError("boundary tags must be 0, 1 or 2")
        if self.elements.size and (self.elements.min() < 0
                                   or self.elements.max() >= self.n_vertices):
            raise MeshError("element vertex index out of range")
        free = self.boundary_tags != DIRICHLET
        if np.any(free[self.n_free:]):
            raise MeshError("free vertices must precede Dirichlet vertices")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"element {bad} has non-positive area {areas[bad]:g}")


def generate_structured_mesh(width, height, nx, ny, dirichlet_edge="bottom"):
    """Right-triangulated rectangular grid with one Dirichlet edge.

    Produces (nx+1)*(ny+1) vertices and 2*nx*ny positively oriented
    triangles; vertices on ``dirichlet_edge`` are tagged Dirichlet, the
    rest of the boundary Neumann.
    """
    if width <= 0 or height <= 0:
        raise MeshError(f"domain dimensions must be positive, got {width} x {height}")
    if nx < 1 or ny < 1:
        raise MeshError(f"grid resolution must be at least 1, got {nx} x {ny}")
    if dirichlet_edge not in _EDGES:
        raise MeshError(f"dirichlet_edge must be one of {_EDGES}")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)            # row j = constant y
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    elements = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    elements = np.asarray(elements, dtype=np.int64)

    ii = np.tile(np.arange(nx + 1), ny + 1)
    jj = np.repeat(np.arange(ny + 1), nx + 1)
    on_boundary = (ii == 0) | (ii == nx) | (jj == 0) | (jj == ny)
    on_dirichlet = {
        "bottom": jj == 0,
        "top": jj == ny,
        "left": ii == 0,
        "right": ii == nx,
    }[dirichlet_edge]
    tags = np.full(vertices.shape[0], INTERIOR, dtype=np.int64)
    tags[on_boundary] = NEUMANN
    tags[on_dirichlet] = DIRICHLET

    # reorder: free vertices first, Dirichlet last, both in stable grid order
    perm = np.argsort(tags == DIRICHLET, kind="stable")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return Mesh(vertices[perm], inverse[elements], tags[perm])


def save_mesh(path, mesh):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"vertices {mesh.n_vertices} elements {mesh.n_elements}\n")
        for (x, y), tag in zip(mesh.vertices, mesh.boundary_tags):
            fh.write(f"{float(x)!r} {float(y)!r} {tag}\n")
        for a, b, c in mesh.elements:
            fh.write(f"{a} {b} {c}\n")


def load_mesh(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "vertices" or header[2] != "elements":
        raise MeshError(f"{path}: malformed header {lines[0]!r}")
    try:
        n_v, n_el = int(header[1]), int(header[3])
    except ValueError as exc:
        raise MeshError(f"{path}: malformed header counts") from exc
    if len(lines) != 1 + n_v + n_el:
        raise MeshError(f"{path}: expected {n_v} vertex and {n_el} element lines")
    vertices = np.zeros((n_v, 2))
    tags = np.zeros(n_v, dtype=np.int64)
    for k, ln in enumerate(lines[1:1 + n_v]):
        parts = ln.split()
        if len(parts) != 3:
            raise MeshError(f"{path}: bad vertex line {ln!r}")
        vertices[k] = float(parts[0]), float(parts[1])
        tags[k] = int(parts[2])
    try:
        elements = np.array([[int(v) for v in ln.split()]
                             for ln in lines[1 + n_v:]], dtype=np.int64).reshape(n_el, 3)
    except ValueError as exc:
        raise MeshError(f"{path}: bad element line") from exc
    return Mesh(vertices, elements, tags)


def locate_point(mesh, point, tol=1e-12):
    """Find the triangle containing ``point``.

    Returns (element index, barycentric weights). Points on shared edges
    go to the lowest-index containing element so sensor placement is
    deterministic. Raises PlacementError if no element contains the point.
    """
    p = np.asarray(point, dtype=float)
    verts = mesh.vertices[mesh.elements]       # (n_el, 3, 2)
    p1, p2, p3 = verts[:, 0], verts[:, 1], verts[:, 2]
    e1, e2, d = p2 - p1, p3 - p1, p - p1
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    b2 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
    b3 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
    b1 = 1.0 - b2 - b3
    inside = (b1 >= -tol) & (b2 >= -tol) & (b3 >= -tol)
    if not np.any(inside):
        raise PlacementError(f"point {tuple(p)} is outside the meshed domain")
    el = int(np.argmax(inside))
    bary = np.array([b1[el], b2[el], b3[el]])
    bary = np.clip(bary, 0.0, None)
    return el, bary / bary.sum()


def point_weights(mesh, point, tol=1e-12):
    """Interpolation weights of ``point`` over all mesh vertices.

    Nonzero only on the vertices of the containing triangle; weights are
    nonnegative and sum to one.
    """
    el, bary = locate_point(mesh, point, tol=tol)
    w = np.zeros(mesh.n_vertices)
    w[mesh.elements[el]] = bary
    return w
