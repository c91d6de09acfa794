"""Tests for mesh handling, Galerkin assembly, and time discretization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binmhe import fem
from binmhe.mesh import (DIRICHLET, INTERIOR, Mesh, MeshError,
                         PlacementError, generate_structured_mesh, load_mesh,
                         locate_point, point_weights, save_mesh)

SPEC = fem.BoundarySpec(diffusivity=0.01, dirichlet_value=30.0, dt=1.0)


def lone_triangle(tags=(INTERIOR, INTERIOR, INTERIOR)):
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]), np.array(tags))


def wheel_mesh():
    """Unit square, one free center vertex, four Dirichlet corners."""
    vertices = np.array([[0.5, 0.5], [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    tags = np.array([INTERIOR, DIRICHLET, DIRICHLET, DIRICHLET, DIRICHLET])
    return Mesh(vertices, elements, tags)


class TestStructuredMesh:
    def test_smallest_grid(self):
        m = generate_structured_mesh(1.0, 1.0, 1, 1, "bottom")
        assert m.n_vertices == 4
        assert m.n_elements == 2
        assert m.n_dirichlet == 2
        assert m.n_free == 2

    def test_case_study_sized_grid(self):
        m = generate_structured_mesh(3.1, 2.4, 30, 23, "bottom")
        assert m.n_vertices == 744
        assert m.signed_areas().sum() == pytest.approx(7.44, abs=1e-12)

    @given(st.integers(1, 6), st.integers(1, 6),
           st.floats(0.2, 5.0), st.floats(0.2, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_areas_partition_the_rectangle(self, nx, ny, w, h):
        m = generate_structured_mesh(w, h, nx, ny)
        assert m.n_vertices == (nx + 1) * (ny + 1)
        assert m.n_elements == 2 * nx * ny
        assert m.signed_areas().sum() == pytest.approx(w * h, abs=1e-12)

    @pytest.mark.parametrize("edge,count", [("bottom", 5), ("top", 5), ("left", 4), ("right", 4)])
    def test_dirichlet_edge_selection(self, edge, count):
        m = generate_structured_mesh(2.0, 1.5, 4, 3, edge)
        assert m.n_dirichlet == count

    def test_free_vertices_come_first(self):
        m = generate_structured_mesh(1.0, 1.0, 3, 3)
        assert np.all(m.boundary_tags[:m.n_free] != DIRICHLET)
        assert np.all(m.boundary_tags[m.n_free:] == DIRICHLET)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(MeshError):
            generate_structured_mesh(0.0, 1.0, 2, 2)
        with pytest.raises(MeshError):
            generate_structured_mesh(1.0, -1.0, 2, 2)
        with pytest.raises(MeshError):
            generate_structured_mesh(1.0, 1.0, 0, 2)
        with pytest.raises(MeshError):
            generate_structured_mesh(1.0, 1.0, 2, 2, "diagonal")

    def test_validation_rejects_disordered_tags(self):
        with pytest.raises(MeshError, match="precede"):
            lone_triangle(tags=(DIRICHLET, INTERIOR, INTERIOR))

    def test_validation_rejects_flipped_element(self):
        with pytest.raises(MeshError, match="area"):
            Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                 np.array([[0, 2, 1]]), np.zeros(3, dtype=int))


class TestMeshIO:
    def test_round_trip(self, tmp_path):
        m = generate_structured_mesh(3.1, 2.4, 5, 4)
        path = tmp_path / "grid.mesh"
        save_mesh(path, m)
        m2 = load_mesh(path)
        np.testing.assert_array_equal(m.vertices, m2.vertices)
        np.testing.assert_array_equal(m.elements, m2.elements)
        np.testing.assert_array_equal(m.boundary_tags, m2.boundary_tags)

    def test_rejects_malformed_header(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("nodes 3 cells 1\n")
        with pytest.raises(MeshError, match="header"):
            load_mesh(path)

    def test_rejects_wrong_counts(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("vertices 3 elements 1\n0 0 0\n1 0 0\n")
        with pytest.raises(MeshError, match="expected"):
            load_mesh(path)

    def test_rejects_disordered_file(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("vertices 3 elements 1\n0.0 0.0 2\n1.0 0.0 0\n0.0 1.0 0\n0 1 2\n")
        with pytest.raises(MeshError, match="precede"):
            load_mesh(path)

    def test_matrix_coo_export(self, tmp_path):
        m = generate_structured_mesh(1.0, 1.0, 2, 2)
        mats = fem.assemble(m, SPEC)
        path = tmp_path / "stiffness.coo"
        fem.save_matrix_coo(path, mats.stiffness)
        lines = path.read_text().strip().splitlines()
        rows, cols, nnz = map(int, lines[0].split())
        assert (rows, cols) == mats.stiffness.shape
        assert nnz == len(lines) - 1
        i, j, v = lines[1].split()
        assert mats.stiffness[int(i), int(j)] == float(v)


class TestPointLocation:
    def test_weights_at_free_vertex_are_indicator(self):
        m = generate_structured_mesh(2.0, 1.0, 4, 2)
        k = 3  # some free vertex
        row, offset = fem.observation_row(m, m.vertices[k], dirichlet_value=7.0)
        expected = np.zeros(m.n_free)
        expected[k] = 1.0
        np.testing.assert_allclose(row, expected, atol=1e-12)
        assert offset == 0.0

    @given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
    @settings(max_examples=60, deadline=None)
    def test_weights_sum_to_one(self, fx, fy):
        m = generate_structured_mesh(3.1, 2.4, 6, 5)
        w = point_weights(m, (3.1 * fx, 2.4 * fy))
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0.0)

    def test_linear_field_reproduced_exactly(self):
        m = generate_structured_mesh(2.0, 1.5, 5, 4)
        nodal = 2.0 * m.vertices[:, 0] + 3.0 * m.vertices[:, 1]
        rng = np.random.default_rng(7)
        pts = rng.uniform((0, 0), (2.0, 1.5), size=(100, 2))
        for p in pts:
            w = point_weights(m, p)
            assert w @ nodal == pytest.approx(2.0 * p[0] + 3.0 * p[1], abs=1e-12)

    def test_constant_field_via_observation_row(self):
        m = generate_structured_mesh(1.0, 1.0, 3, 3)
        row, offset = fem.observation_row(m, (0.5, 0.1), dirichlet_value=30.0)
        assert row @ np.full(m.n_free, 30.0) + offset == pytest.approx(30.0, abs=1e-12)

    def test_edge_tie_goes_to_lowest_element(self):
        m = generate_structured_mesh(1.0, 1.0, 1, 1)
        el, _ = locate_point(m, (0.5, 0.5))  # on the shared diagonal
        assert el == 0

    def test_outside_point_raises(self):
        m = generate_structured_mesh(1.0, 1.0, 2, 2)
        with pytest.raises(PlacementError):
            locate_point(m, (-0.2, 0.5))
        with pytest.raises(PlacementError):
            fem.observation_row(m, (0.5, 1.7))


class TestAssembly:
    def test_reference_triangle_mass_matrix(self):
        mats = fem.assemble(lone_triangle(), SPEC)
        area = 0.5
        expected = (area / 12.0) * np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])
        np.testing.assert_allclose(mats.mass.toarray(), expected, atol=1e-15)

    def test_reference_triangle_stiffness_row_sums(self):
        mats = fem.assemble(lone_triangle(), SPEC)
        np.testing.assert_allclose(mats.stiffness.toarray().sum(axis=1), 0.0, atol=1e-15)

    def test_stiffness_row_sums_with_dirichlet_columns(self):
        m = generate_structured_mesh(3.1, 2.4, 6, 5)
        mats = fem.assemble(m, SPEC)
        total = np.asarray(mats.stiffness.sum(axis=1)).ravel() \
            + np.asarray(mats.dirichlet_coupling.sum(axis=1)).ravel()
        np.testing.assert_allclose(total, 0.0, atol=1e-12)

    def test_small_grid_stiffness_symmetric_psd(self):
        m = generate_structured_mesh(1.0, 1.0, 2, 2)
        s = fem.assemble(m, SPEC).stiffness.toarray()
        np.testing.assert_allclose(s, s.T, atol=1e-15)
        assert np.linalg.eigvalsh(s).min() >= -1e-12

    def test_mass_is_spd(self):
        m = generate_structured_mesh(2.0, 1.0, 3, 2)
        mm = fem.assemble(m, SPEC).mass.toarray()
        np.testing.assert_allclose(mm, mm.T, atol=1e-15)
        assert np.linalg.eigvalsh(mm).min() > 0.0

    def test_mass_row_sums_are_area_thirds(self):
        # with no Dirichlet vertices the full mass matrix is returned and its
        # row sums must integrate each basis function: one third of the area
        # of the elements sharing the vertex
        g = generate_structured_mesh(1.0, 1.0, 2, 2)
        m = Mesh(g.vertices, g.elements, np.zeros(g.n_vertices, dtype=int))
        mats = fem.assemble(m, SPEC)
        areas = m.signed_areas()
        expected = np.zeros(m.n_vertices)
        for el, a in zip(m.elements, areas):
            expected[el] += a / 3.0
        np.testing.assert_allclose(np.asarray(mats.mass.sum(axis=1)).ravel(),
                                   expected, atol=1e-14)

    def test_degenerate_element_identified(self):
        m = generate_structured_mesh(1.0, 1.0, 2, 2)
        m.vertices[m.elements[5, 1]] = m.vertices[m.elements[5, 0]]  # collapse an edge
        with pytest.raises(fem.AssemblyError, match="element"):
            fem.assemble(m, SPEC)


class TestDiscretize:
    def build(self, nx=4, ny=3, dt=1.0):
        m = generate_structured_mesh(3.1, 2.4, nx, ny)
        spec = fem.BoundarySpec(diffusivity=0.01, dirichlet_value=30.0, dt=dt)
        return m, fem.discretize(fem.assemble(m, spec), spec)

    def test_constant_field_is_fixed_point(self):
        _, sys = self.build()
        x_star = np.full(sys.n, 30.0)
        np.testing.assert_allclose(sys.step(x_star), x_star, atol=1e-9)
        np.testing.assert_allclose(sys.A @ x_star + sys.B @ sys.input_vector,
                                   x_star, atol=1e-9)

    def test_step_matrices_satisfy_residuals(self):
        _, sys = self.build()
        k = (sys.mass + sys.dt * sys.stiffness).toarray()
        np.testing.assert_allclose(k @ sys.A, sys.mass.toarray(), atol=1e-10)
        np.testing.assert_allclose(k @ sys.B, sys.dt * np.eye(sys.n), atol=1e-10)

    def test_spectral_radius_at_most_one(self):
        _, sys = self.build()
        assert np.max(np.abs(np.linalg.eigvals(sys.A))) <= 1.0 + 1e-10

    def test_small_dt_limit(self):
        _, sys = self.build(dt=1e-6)
        k = np.linalg.solve(sys.mass.toarray(), sys.stiffness.toarray())
        gap = np.linalg.norm(sys.A - np.eye(sys.n), 2)
        assert gap <= 10.0 * 1e-6 * np.linalg.norm(k, 2)

    def test_single_free_vertex_scalar_model(self):
        m = wheel_mesh()
        spec = fem.BoundarySpec(diffusivity=0.7, dirichlet_value=2.0, dt=0.3)
        mats = fem.assemble(m, spec)
        sys = fem.discretize(mats, spec)
        s = mats.stiffness.toarray()[0, 0]
        mm = mats.mass.toarray()[0, 0]
        assert sys.A[0, 0] == pytest.approx(1.0 / (1.0 + 0.3 * s / mm), rel=1e-12)

    def test_energy_dissipation_homogeneous(self):
        m = generate_structured_mesh(1.0, 1.0, 4, 4)
        spec = fem.BoundarySpec(diffusivity=0.05, dirichlet_value=0.0, dt=2.0)
        sys = fem.discretize(fem.assemble(m, spec), spec)
        mm = sys.mass.toarray()
        rng = np.random.default_rng(3)
        x = rng.standard_normal(sys.n)
        for _ in range(5):
            x_next = sys.step(x)
            assert x_next @ mm @ x_next <= x @ mm @ x + 1e-12
            x = x_next

    def test_refinement_produces_cauchy_sequence(self):
        probe = (0.42, 0.37)
        values = []
        for nx in (4, 8, 16):
            m = generate_structured_mesh(1.0, 1.0, nx, nx)
            spec = fem.BoundarySpec(diffusivity=0.1, dirichlet_value=1.0, dt=0.5)
            sys = fem.discretize(fem.assemble(m, spec), spec)
            x = np.zeros(sys.n)
            for _ in range(20):
                x = sys.step(x)
            row, offset = fem.observation_row(m, probe, dirichlet_value=1.0)
            values.append(row @ x + offset)
        assert abs(values[2] - values[1]) < abs(values[1] - values[0])

    def test_boundary_spec_validation(self):
        with pytest.raises(ValueError):
            fem.BoundarySpec(diffusivity=0.0, dirichlet_value=1.0, dt=1.0)
        with pytest.raises(ValueError):
            fem.BoundarySpec(diffusivity=1.0, dirichlet_value=1.0, dt=-1.0)

    def test_pickle_round_trip_drops_factorization(self):
        import pickle
        _, sys = self.build()
        sys.step(np.zeros(sys.n))  # force factorization
        clone = pickle.loads(pickle.dumps(sys))
        np.testing.assert_allclose(clone.step(np.ones(clone.n)),
                                   sys.step(np.ones(sys.n)), atol=1e-12)
