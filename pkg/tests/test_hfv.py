import numpy as np
import pytest

from thmfrac import hfv
from thmfrac.hfv import DiscreteField
from thmfrac.mesh import FractureGeometrySpec, generate_dfm_mesh, generate_unit_square_mesh


def reference_bilinear_form(mesh, k, D, u_v, u_w):
    """Textbook evaluation of the stabilised local form, scalar loops only.

    u_* are the three face-minus-cell differences of each field.
    """
    area = mesh.cell_area[k]
    grad = lambda u: sum(mesh.face_length[mesh.cell_faces[k, j]] * u[j]
                         * mesh.cell_face_normal[k, j] for j in range(3)) / area
    gv, gw = grad(u_v), grad(u_w)
    total = 0.0
    for j in range(3):
        f = mesh.cell_faces[k, j]
        d = mesh.cell_face_dist[k, j]
        n = mesh.cell_face_normal[k, j]
        c = mesh.face_midpoint[f] - mesh.cell_centroid[k]
        sv = gv + np.sqrt(2.0) / d * (u_v[j] - gv @ c) * n
        sw = gw + np.sqrt(2.0) / d * (u_w[j] - gw @ c) * n
        total += mesh.face_length[f] * d / 2.0 * (D @ sv) @ sw
    return total


@pytest.fixture(scope="module")
def square():
    return generate_unit_square_mesh(2)


@pytest.fixture(scope="module")
def dfm():
    spec = FractureGeometrySpec(segments=[[0.25, 1.0, 0.75, 1.0]],
                                fracture_ids=[0], base_spacing=1.0 / 8.0)
    return generate_dfm_mesh(spec, 0)


def test_constant_field_zero_gradient(square):
    field = DiscreteField(square, np.full(square.n_entities, 3.7))
    for k in range(square.n_cells):
        assert np.allclose(hfv.cell_gradient(square, k, field), 0.0, atol=1e-14)


def test_affine_field_gradient_consistency(square):
    g = np.array([1.3, -0.4])
    field = DiscreteField.from_function(square, lambda x, y: g[0] * x + g[1] * y)
    for k in range(square.n_cells):
        assert np.allclose(hfv.cell_gradient(square, k, field), g, atol=1e-13)


def test_single_face_gradient_linearity(square):
    k = 3
    f0 = square.cell_faces[k, 0]
    vals = np.zeros(square.n_entities)
    vals[square.face_entity(f0)] = 2.5
    field = DiscreteField(square, vals)
    expected = (square.face_length[f0] / square.cell_area[k]) * 2.5 \
        * square.cell_face_normal[k, 0]
    assert np.allclose(hfv.cell_gradient(square, k, field), expected, atol=1e-14)


def test_affine_energy_identity(square):
    # For an affine field the stabilisation residuals vanish and the flux
    # identity must reproduce |K| |g|^2 exactly.
    g = np.array([0.7, 1.9])
    field = DiscreteField.from_function(square, lambda x, y: g[0] * x + g[1] * y)
    A = hfv.cell_flux_matrices(square, np.eye(2))
    for k in range(square.n_cells):
        faces = square.cell_faces[k]
        flux = hfv.evaluate_cell_fluxes(A[k], field.cell[k], field.face[faces])
        energy = np.dot(flux, field.cell[k] - field.face[faces])
        assert energy == pytest.approx(square.cell_area[k] * (g @ g), rel=1e-12)


def test_constant_field_zero_fluxes(square):
    field = DiscreteField(square, np.full(square.n_entities, -2.2))
    A = hfv.cell_flux_matrices(square, np.eye(2))
    for k in range(square.n_cells):
        faces = square.cell_faces[k]
        flux = hfv.evaluate_cell_fluxes(A[k], field.cell[k], field.face[faces])
        assert np.allclose(flux, 0.0, atol=1e-13)


def test_flux_matrix_symmetric_positive_definite(square):
    D = np.array([[2.0, 0.3], [0.3, 1.0]])
    A = hfv.cell_flux_matrices(square, D)
    for k in range(square.n_cells):
        assert np.allclose(A[k], A[k].T, rtol=1e-12)
        w = np.linalg.eigvalsh(A[k])
        assert w.min() > 0.0
        # Rows against a unit drop on every face: strictly positive outflux.
        assert A[k].sum() > 0.0


def test_exactness_identity_random_fields(square):
    rng = np.random.default_rng(42)
    D = np.array([[1.5, 0.2], [0.2, 0.8]])
    A = hfv.cell_flux_matrices(square, D)
    for k in range(square.n_cells):
        for _ in range(100):
            u_v = rng.standard_normal(3)
            u_w = rng.standard_normal(3)
            ref = reference_bilinear_form(square, k, D, u_v, u_w)
            flux = -A[k] @ u_v
            got = np.dot(flux, -u_w)
            assert abs(got - ref) <= 1e-11 * max(abs(ref), 1e-3)


def test_flux_linearity(square):
    rng = np.random.default_rng(1)
    A = hfv.cell_flux_matrices(square, np.eye(2))[0]
    u, w = rng.standard_normal(3), rng.standard_normal(3)
    a, b = 1.7, -0.6
    f = hfv.evaluate_cell_fluxes(A, 0.0, -(a * u + b * w))
    assert np.allclose(f, a * hfv.evaluate_cell_fluxes(A, 0.0, -u)
                       + b * hfv.evaluate_cell_fluxes(A, 0.0, -w), atol=1e-13)


def test_single_cell_builder_matches_vectorized(square):
    D = np.array([[1.0, 0.4], [0.4, 3.0]])
    A_all = hfv.cell_flux_matrices(square, D)
    for k in [0, 5, square.n_cells - 1]:
        assert np.allclose(hfv.build_cell_flux_matrix(square, k, D), A_all[k],
                           rtol=1e-13)


def test_fracture_affine_energy(dfm):
    # Affine field along a fracture: fluxes reproduce int |dv/dtau|^2.
    for pos, f in enumerate(dfm.fracture_faces):
        length = dfm.face_length[f]
        tangent = (dfm.vertices[dfm.face_verts[f, 1]] - dfm.vertices[dfm.face_verts[f, 0]])
        tangent = tangent / np.linalg.norm(tangent)
        g = 1.3
        v_mid = 0.0
        v_ends = np.array([-g * length / 2.0, g * length / 2.0])
        A = hfv.build_fracture_flux_matrix(dfm, pos, 1.0)
        flux = A @ (v_mid - v_ends)
        energy = np.dot(flux, v_mid - v_ends)
        assert energy == pytest.approx(length * g * g, rel=1e-13)


def test_fracture_constant_and_closed(dfm):
    coef = hfv.fracture_flux_coefficients(dfm, 1.0)
    assert np.allclose(hfv.evaluate_fracture_fluxes(coef[0], 2.0, [2.0, 2.0]), 0.0)
    coef0 = hfv.fracture_flux_coefficients(dfm, 0.0)
    assert np.allclose(coef0, 0.0)


def test_two_point_fracture_flux_value(dfm):
    pos = 0
    f = dfm.fracture_faces[pos]
    coef = hfv.fracture_flux_coefficients(dfm, 3.0)[pos]
    assert coef == pytest.approx(2.0 * 3.0 / dfm.face_length[f], rel=1e-14)


def test_dimension_invariant(square, dfm):
    for m in (square, dfm):
        assert m.n_entities == m.n_cells + m.n_faces + m.n_fracture_edges
        field = DiscreteField(m)
        assert field.values.shape == (m.n_entities,)
        assert field.cell.shape == (m.n_cells,)
        assert field.face.shape == (m.n_faces,)
        assert field.fracture_edge.shape == (m.n_fracture_edges,)
