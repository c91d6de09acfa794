"""Galerkin assembly and implicit-Euler discrete models for 2D diffusion.

The continuous model is a constant-diffusivity heat/diffusion equation on a
meshed 2D domain with a fixed concentration on one boundary portion and no
flux through the rest. Piecewise-affine elements turn it into

    M dx/dt + S x + S_D * g = 0

with mass matrix M, stiffness S (both over the free vertices), Dirichlet
coupling S_D, and boundary values g. Implicit Euler with step dt then gives
the discrete-time model

    x[t+1] = A x[t] + B u,    A = (I + dt M^-1 S)^-1,
                              B = A M^-1 dt,   u = -S_D g.

A and B are never formed by inversion: stepping solves the sparse system
(M + dt S) x[t+1] = M x[t] + dt u with a factorization computed once, and
the dense A, B are materialized on demand (small meshes only) by columnwise
solves against the same factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, point_weights


class AssemblyError(ValueError):
    """A mesh element cannot be assembled (degenerate geometry)."""


@dataclass
class BoundarySpec:
    """Physical constants of the boundary-value problem."""

    diffusivity: float          # m^2/s
    dirichlet_value: float      # concentration held on the Dirichlet edge, g/m^2
    dt: float                   # integration step, s
    dirichlet_edge: str = "bottom"

    def __post_init__(self):
        if self.diffusivity <= 0:
            raise ValueError(f"diffusivity must be > 0, got {self.diffusivity}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")


@dataclass
class FemMatrices:
    mass: sp.csr_matrix                # n x n, SPD
    stiffness: sp.csr_matrix           # n x n, symmetric PSD
    dirichlet_coupling: sp.csr_matrix  # n x (n_phi - n)

    @property
    def n(self):
        return self.mass.shape[0]


def _element_geometry(mesh):
    p = mesh.vertices[mesh.elements]
    x, y = p[:, :, 0], p[:, :, 1]
    two_a = ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
             - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    scale = np.maximum(np.max(np.abs(x), axis=1), np.max(np.abs(y), axis=1)) ** 2 + 1.0
    degenerate = np.abs(two_a) <= 1e-14 * scale
    if np.any(degenerate):
        bad = int(np.argmax(degenerate))
        raise AssemblyError(f"element {bad} is degenerate (zero area)")
    # gradients of the three barycentric basis functions
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / two_a[:, None]
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / two_a[:, None]
    return two_a / 2.0, bx, by


_MASS_REF = np.array([[2.0, 1.0, 1.0],
                      [1.0, 2.0, 1.0],
                      [1.0, 1.0, 2.0]]) / 12.0


def assemble(mesh: Mesh, spec: BoundarySpec) -> FemMatrices:
    """Assemble mass, stiffness, and Dirichlet-coupling matrices.

    The boundary flux integral is dropped: it vanishes on the no-flux
    portion and the free basis functions vanish on the Dirichlet portion.
    """
    areas, bx, by = _element_geometry(mesh)
    n_el = mesh.n_elements

    mass_local = areas[:, None, None] * _MASS_REF[None, :, :]
    stiff_local = (spec.diffusivity * areas)[:, None, None] * (
        bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :])

    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n_phi = mesh.n_vertices
    mass_full = sp.coo_matrix((mass_local.ravel(), (rows, cols)),
                              shape=(n_phi, n_phi)).tocsr()
    stiff_full = sp.coo_matrix((stiff_local.ravel(), (rows, cols)),
                               shape=(n_phi, n_phi)).tocsr()

    n = mesh.n_free
    return FemMatrices(
        mass=mass_full[:n, :n].tocsr(),
        stiffness=stiff_full[:n, :n].tocsr(),
        dirichlet_coupling=stiff_full[:n, n:].tocsr(),
    )


@dataclass
class LinearSystem:
    """Discrete-time diffusion model x[t+1] = A x[t] + B u + w[t].

    Holds the sparse FEM matrices and the constant input; the implicit
    solver factorization and the dense A, B are built lazily and excluded
    from pickling so instances travel cheaply to worker processes.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    input_vector: np.ndarray        # u = -S_D g
    dt: float
    process_weight: np.ndarray | None = None   # Q, inverse covariance
    prior_mean: np.ndarray | None = None
    prior_weight: np.ndarray | None = None     # P, inverse covariance
    _solver: object = field(default=None, repr=False, compare=False)
    _A: np.ndarray | None = field(default=None, repr=False, compare=False)
    _B: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.mass.shape[0]

    def _factorization(self):
        if self._solver is None:
            self._solver = splu((self.mass + self.dt * self.stiffness).tocsc())
        return self._solver

    def step(self, x):
        """One implicit-Euler step without explicit A."""
        return self._factorization().solve(self.mass @ x + self.dt * self.input_vector)

    @property
    def A(self):
        if self._A is None:
            self._A = self._factorization().solve(self.mass.toarray())
        return self._A

    @property
    def B(self):
        if self._B is None:
            self._B = self._factorization().solve(self.dt * np.eye(self.n))
        return self._B

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_solver"] = None
        return state


def discretize(fm: FemMatrices, spec: BoundarySpec, prior=None, process_weight=None):
    """Implicit-Euler discrete model from assembled matrices.

    ``prior`` is an optional (mean, weight) pair for the initial state;
    ``process_weight`` the inverse covariance used in estimation costs.
    """
    n_d = fm.dirichlet_coupling.shape[1]
    u = -fm.dirichlet_coupling @ np.full(n_d, spec.dirichlet_value)
    prior_mean, prior_weight = prior if prior is not None else (None, None)
    return LinearSystem(
        mass=fm.mass,
        stiffness=fm.stiffness,
        input_vector=u,
        dt=spec.dt,
        process_weight=process_weight,
        prior_mean=prior_mean,
        prior_weight=prior_weight,
    )


def observation_row(mesh: Mesh, point, dirichlet_value=0.0):
    """Pointwise sampling row for a sensor at ``point``.

    Returns (row over free vertices, constant offset): the field value at
    the point is row @ x + offset, the offset collecting the interpolation
    weight that falls on Dirichlet vertices times their known value.
    """
    w = point_weights(mesh, point)
    n = mesh.n_free
    return w[:n], float(dirichlet_value * w[n:].sum())


def observation_matrix(mesh: Mesh, points, dirichlet_value=0.0):
    """Stacked observation rows for many points: (rows, offsets)."""
    points = np.asarray(points, dtype=float)
    rows = np.zeros((points.shape[0], mesh.n_free))
    offsets = np.zeros(points.shape[0])
    for k, p in enumerate(points):
        rows[k], offsets[k] = observation_row(mesh, p, dirichlet_value)
    return rows, offsets


def save_matrix_coo(path, matrix):
    """Dump a matrix as coordinate-format text: header then `i j value` lines."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
