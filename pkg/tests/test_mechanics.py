import numpy as np
import pytest

from thmfrac import constitutive, mechanics
from thmfrac.constitutive import RockParameters
from thmfrac.mechanics import (ContactSolveConfig, DisplacementSpace, MechState,
                               build_problem, contact_complementarity, solve_contact)
from thmfrac.mesh import FractureGeometrySpec, generate_dfm_mesh, generate_unit_square_mesh


def simple_rock(**kw):
    base = dict(young_modulus=10.0, poisson_ratio=0.25, biot_coefficient=0.0,
                biot_modulus=1.0, bulk_modulus=1.0, thermal_dilation_skeleton=0.0,
                thermal_dilation_porosity=0.1, heat_capacity_skeleton=1.0,
                reference_temperature=1.0, initial_porosity=0.1,
                contact_aperture=1e-3, friction=0.5)
    base.update(kw)
    return RockParameters(**base)


@pytest.fixture(scope="module")
def square_space():
    return DisplacementSpace(generate_unit_square_mesh(2))


@pytest.fixture(scope="module")
def fractured_space():
    spec = FractureGeometrySpec(segments=[[0.25, 0.5, 0.75, 0.5]], fracture_ids=[0],
                                domain=(0.0, 1.0, 0.0, 1.0), base_spacing=1.0 / 8.0)
    return DisplacementSpace(generate_dfm_mesh(spec, 0))


def test_dof_count_no_fracture(square_space):
    mesh = square_space.mesh
    assert square_space.n_instances == mesh.vertices.shape[0] + mesh.n_faces


def test_dof_duplication_along_fracture(fractured_space):
    mesh = fractured_space.mesh
    nfrac = mesh.n_fracture_faces
    # Interior fracture vertices duplicate; the two tips stay single.
    n_frac_verts = mesh.n_fracture_edges
    expected = mesh.vertices.shape[0] + (n_frac_verts - 2) + mesh.n_faces + nfrac
    assert fractured_space.n_instances == expected


def test_rigid_separation_jump_sign(fractured_space):
    # Moving the material above a horizontal fracture upward opens it:
    # the normal jump must be negative (aperture grows).
    mesh = fractured_space.mesh
    space = fractured_space
    gap = 0.01
    above = space.instance_position[:, 1] > 0.5 + 1e-9
    on_line = np.abs(space.instance_position[:, 1] - 0.5) < 1e-9
    u = np.zeros(space.n_dofs)
    u[1::2][above] = gap
    # Instances on the fracture line: assign by side of their sector cells.
    for v, table in enumerate(space._vertex_instance):
        for k, inst in table.items():
            if on_line[inst] and mesh.cell_centroid[k][1] > 0.5:
                u[2 * inst + 1] = gap
    for (f, k), inst in space._mid_instance.items():
        if on_line[inst] and mesh.cell_centroid[k][1] > 0.5:
            u[2 * inst + 1] = gap
    state = MechState(space, u, np.zeros(mesh.n_fracture_faces),
                      np.zeros(mesh.n_fracture_faces),
                      np.zeros(mesh.n_fracture_faces, dtype=int))
    jn = state.face_average_jump_normal()
    assert np.all(jn < 0)  # opening is negative normal jump
    # Faces with both endpoints interior to the fracture see the full jump;
    # the end faces only 5/6 of it because the tip vertex stays continuous.
    interior_edges = {e for e, fs in enumerate(mesh.fracture_edge_faces) if len(fs) == 2}
    vert_to_edge = {int(v): e for e, v in enumerate(mesh.fracture_edge_verts)}
    for pos, f in enumerate(mesh.fracture_faces):
        n_int = sum(vert_to_edge[int(v)] in interior_edges for v in mesh.face_verts[f])
        expected = gap if n_int == 2 else gap * 5.0 / 6.0
        assert abs(-jn[pos] - expected) < 1e-12
    d_f = constitutive.aperture(mesh, state, d0=1e-3)
    assert np.allclose(d_f, 1e-3 - jn, atol=1e-15)


def test_patch_test_linear_field(square_space):
    # Linear displacement with matching Dirichlet data is reproduced exactly.
    rock = simple_rock()
    grad = np.array([[0.3, -0.2], [0.1, 0.4]])
    fn = lambda x, y, t=None: (grad[0, 0] * x + grad[0, 1] * y,
                               grad[1, 0] * x + grad[1, 1] * y)
    bcs = {tag: fn for tag in ("left", "right", "top", "bottom")}
    zeros = np.zeros(square_space.mesh.n_cells)
    prob = build_problem(square_space, rock, zeros, np.ones_like(zeros) * 1.0,
                         displacement_bcs=bcs)
    state, its = solve_contact(prob, ContactSolveConfig())
    exact = square_space.interpolate(lambda x, y: fn(x, y))
    assert np.abs(state.u - exact).max() <= 1e-12 * max(1.0, np.abs(exact).max())
    eps = state.cell_strain()
    sym = 0.5 * (grad + grad.T)
    assert np.allclose(eps, sym[None], atol=1e-11)


def test_zero_load_zero_solution(square_space):
    rock = simple_rock()
    zeros = np.zeros(square_space.mesh.n_cells)
    bcs = {tag: (0.0, 0.0) for tag in ("left", "right", "top", "bottom")}
    prob = build_problem(square_space, rock, zeros, np.full_like(zeros, 1.0),
                         displacement_bcs=bcs)
    state, its = solve_contact(prob, ContactSolveConfig())
    assert its <= 1
    assert np.abs(state.u).max() <= 1e-14


def test_uniform_pressure_expansion(square_space):
    # Uniform p with b > 0 and free sides: the stress balance residual of the
    # converged state vanishes and the displacement is nonzero.
    rock = simple_rock(biot_coefficient=1.0)
    mesh = square_space.mesh
    p = np.full(mesh.n_cells, 2.0)
    bcs = {"bottom": (0.0, 0.0)}
    prob = build_problem(square_space, rock, p, np.ones(mesh.n_cells),
                         displacement_bcs=bcs)
    state, _ = solve_contact(prob, ContactSolveConfig())
    assert np.abs(state.u).max() > 1e-4
    r = mechanics.momentum_residual(prob, state.u, state.lambda_n, state.lambda_t)
    free = np.ones(square_space.n_dofs, dtype=bool)
    free[prob.dirichlet_dofs] = False
    assert np.abs(r[free]).max() <= 1e-10 * rock.young_modulus


def test_complementarity_open_state():
    C_n, C_t, active, sliding, _, _ = contact_complementarity(
        np.array([0.0]), np.array([0.0]), np.array([-0.5]), np.array([0.0]),
        np.array([1.0]), np.array([1.0]), np.array([0.5]))
    assert C_n[0] == 0.0 and C_t[0] == 0.0
    assert not active[0] and not sliding[0]


def test_complementarity_stick_state():
    C_n, C_t, active, sliding, _, _ = contact_complementarity(
        np.array([2.0]), np.array([0.3]), np.array([0.0]), np.array([0.0]),
        np.array([1.0]), np.array([1.0]), np.array([0.5]))
    assert C_n[0] == pytest.approx(0.0, abs=1e-15)
    assert C_t[0] == pytest.approx(0.0, abs=1e-15)
    assert active[0] and not sliding[0]


def test_complementarity_slip_sign():
    # With positive slip the root requires lam_t = +F lam_n: the multiplier
    # is aligned with the slip, i.e. the traction (-lambda) opposes it.
    lam_n, F, slip = 1.0, 0.5, 0.2
    aligned = contact_complementarity(
        np.array([lam_n]), np.array([F * lam_n]), np.array([0.0]),
        np.array([slip]), np.array([1.0]), np.array([1.0]), np.array([F]))
    assert aligned[1][0] == pytest.approx(0.0, abs=1e-15)
    opposed = contact_complementarity(
        np.array([lam_n]), np.array([-F * lam_n]), np.array([0.0]),
        np.array([slip]), np.array([1.0]), np.array([1.0]), np.array([F]))
    assert abs(opposed[1][0]) > 0.1


def _compression_setup(fractured_space, squeeze, shear=0.0, friction=0.5):
    rock = simple_rock(young_modulus=10.0, poisson_ratio=0.0, friction=friction)
    mesh = fractured_space.mesh
    zeros = np.zeros(mesh.n_cells)
    bcs = {"bottom": (0.0, 0.0), "top": (shear, -squeeze)}
    prob = build_problem(fractured_space, rock, zeros, np.ones(mesh.n_cells),
                         displacement_bcs=bcs)
    return rock, prob


def test_uniaxial_compression_stick(fractured_space):
    # Closing a horizontal fracture under pure compression: every face in
    # contact, zero normal jump, lam_n equal to the applied stress E * strain.
    squeeze = 1e-3
    rock, prob = _compression_setup(fractured_space, squeeze)
    state, _ = solve_contact(prob, ContactSolveConfig())
    assert np.all(state.status >= 1)
    jn = state.face_average_jump_normal()
    assert np.abs(jn).max() <= 1e-12
    sigma = rock.young_modulus * squeeze  # nu = 0: sigma_yy = E * eps_yy
    assert np.allclose(state.lambda_n, sigma, rtol=1e-8)
    assert np.all(state.lambda_n >= 0)


def test_coulomb_slip_threshold(fractured_space):
    # Tangential load beyond F*lam_n: faces slide and |lam_t| = F lam_n.
    squeeze, shear = 1e-3, 5e-3
    rock, prob = _compression_setup(fractured_space, squeeze, shear, friction=0.3)
    state, _ = solve_contact(prob, ContactSolveConfig())
    slipping = state.status == 2
    assert slipping.any()
    lam_n, lam_t = state.lambda_n[slipping], state.lambda_t[slipping]
    assert np.allclose(np.abs(lam_t), 0.3 * lam_n, rtol=1e-9)
    # Multiplier aligned with slip: traction opposes it.
    slip = state.face_average_jump_tangent()[slipping]
    assert np.all(lam_t * slip >= -1e-15)


def test_contact_dissipation_terms(fractured_space):
    squeeze, shear = 1e-3, 5e-3
    rock, prob = _compression_setup(fractured_space, squeeze, shear, friction=0.3)
    state, _ = solve_contact(prob, ContactSolveConfig())
    djn = state.face_average_jump_normal()   # previous state was zero
    djt = state.face_average_jump_tangent()
    mesh = fractured_space.mesh
    dissip, persist = mechanics.contact_dissipation(
        mesh, prob.friction, state.lambda_n, djn, djt)
    assert dissip > 0.0
    assert persist >= -1e-10 * max(dissip, 1.0)
    # Open faces and exact stick contribute nothing.
    open_state = MechState(fractured_space, np.zeros(fractured_space.n_dofs),
                           np.zeros(mesh.n_fracture_faces),
                           np.zeros(mesh.n_fracture_faces),
                           np.zeros(mesh.n_fracture_faces, dtype=int))
    d0, p0 = mechanics.contact_dissipation(mesh, prob.friction,
                                           open_state.lambda_n, djn, djt)
    assert d0 == 0.0 and p0 == 0.0


def test_fracture_tip_continuity(fractured_space):
    # The tip vertices are not duplicated: exactly one instance each.
    mesh = fractured_space.mesh
    tips = [int(mesh.fracture_edge_verts[e])
            for e, fs in enumerate(mesh.fracture_edge_faces) if len(fs) == 1]
    assert len(tips) == 2
    for v in tips:
        assert len(set(fractured_space._vertex_instance[v].values())) == 1


def test_interior_fracture_vertex_duplicated(fractured_space):
    mesh = fractured_space.mesh
    interior = [int(mesh.fracture_edge_verts[e])
                for e, fs in enumerate(mesh.fracture_edge_faces) if len(fs) == 2]
    for v in interior:
        assert len(set(fractured_space._vertex_instance[v].values())) == 2


def test_inertia_path_mass_conservation(square_space):
    # Quasi-static limit recovered: tiny m0 barely changes the solution.
    rock_static = simple_rock(biot_coefficient=1.0)
    rock_inertial = simple_rock(biot_coefficient=1.0, inertial_density=1e-8)
    mesh = square_space.mesh
    p = np.full(mesh.n_cells, 1.0)
    bcs = {"bottom": (0.0, 0.0)}
    prob_s = build_problem(square_space, rock_static, p, np.ones(mesh.n_cells),
                           displacement_bcs=bcs)
    st_s, _ = solve_contact(prob_s, ContactSolveConfig())
    prob_i = build_problem(square_space, rock_inertial, p, np.ones(mesh.n_cells),
                           displacement_bcs=bcs, dt=1.0)
    st_i, _ = solve_contact(prob_i, ContactSolveConfig())
    assert np.abs(st_s.u - st_i.u).max() <= 1e-6 * np.abs(st_s.u).max()


def test_stiffness_spd_on_constrained_subspace(square_space):
    rock = simple_rock()
    K = square_space.stiffness(rock.lame_mu, rock.lame_lambda)
    bcs = {tag: (0.0, 0.0) for tag in ("left", "right", "top", "bottom")}
    dofs, _ = square_space.dirichlet_dofs(bcs, 0.0)
    free = np.setdiff1d(np.arange(square_space.n_dofs), dofs)
    Kff = K[np.ix_(free, free)].toarray()
    np.linalg.cholesky(Kff + 1e-14 * np.eye(len(free)))
