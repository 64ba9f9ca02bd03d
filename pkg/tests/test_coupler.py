import numpy as np
import pytest

from conftest import FLUIDS
from thmfrac.constitutive import RockParameters
from thmfrac.coupler import (CoupledProblem, Stage, TimeGrid, advance_step,
                             check_equivalence, monitor_energy_estimate,
                             run_simulation)
from thmfrac.flow import FlowConfig, FlowSystem
from thmfrac.mesh import FractureGeometrySpec, generate_dfm_mesh
from thmfrac.scenarios import rock_table2


@pytest.fixture(scope="module")
def box_mesh():
    spec = FractureGeometrySpec(segments=[[0.25, 0.5, 0.75, 0.5]], fracture_ids=[0],
                                domain=(0.0, 1.0, 0.0, 1.0), base_spacing=1.0 / 8.0)
    return generate_dfm_mesh(spec, 0)


def closed_box_problem(mesh, scheme="H", **overrides):
    rock = rock_table2()
    fl = FLUIDS["weakly-compressible-liquid"]
    cfg = FlowConfig(scheme=scheme, convection="upwind", boundary={})
    disp = {"bottom": (0.0, 0.0), "top": (1.0e-4, -5.0e-5)}
    kw = dict(mesh=mesh, rock=rock, fluid=fl, flow_config=cfg,
              displacement_bcs=disp)
    kw.update(overrides)
    return CoupledProblem(**kw)


def test_time_grid_schedule():
    grid = TimeGrid([Stage(100.0, 5.0, 0.1), Stage(200.0, 5.0, None),
                     Stage(432000.0, 8640.0, None)])
    assert grid.first_dt() == pytest.approx(0.1)
    # growth by 2 until the cap
    assert grid.next_dt(0.1, 0.1) == pytest.approx(0.2)
    assert grid.next_dt(50.0, 5.0) == pytest.approx(5.0)
    # land exactly on the stage boundary
    assert grid.next_dt(97.0, 5.0) == pytest.approx(3.0)
    # second stage continues at the cap; third grows toward its own cap
    assert grid.next_dt(100.0, 3.0) == pytest.approx(5.0)
    assert grid.next_dt(200.0, 5.0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        TimeGrid([Stage(10.0, 1.0), Stage(5.0, 1.0)])


def test_time_grid_stage_restart():
    grid = TimeGrid([Stage(100.0, 100.0, 100.0), Stage(500.0, 100.0, 10.0),
                     Stage(3.005e5, 8000.0, None)])
    assert grid.first_dt() == pytest.approx(100.0)  # single step in stage 1
    assert grid.next_dt(100.0, 100.0) == pytest.approx(10.0)  # stage-2 restart


def test_uncoupled_limit_single_outer_iteration(box_mesh):
    # Zero Biot and thermal coupling: the map no longer depends on the
    # mechanics, so the fixed point certifies in one outer iteration.
    rock0 = rock_table2()
    rock = RockParameters(
        young_modulus=rock0.young_modulus, poisson_ratio=rock0.poisson_ratio,
        biot_coefficient=0.0, biot_modulus=rock0.biot_modulus,
        bulk_modulus=rock0.bulk_modulus, thermal_dilation_skeleton=0.0,
        thermal_dilation_porosity=rock0.thermal_dilation_porosity,
        heat_capacity_skeleton=rock0.heat_capacity_skeleton,
        reference_temperature=rock0.reference_temperature,
        initial_porosity=rock0.initial_porosity,
        contact_aperture=rock0.contact_aperture, friction=0.5,
        permeability=rock0.permeability, conductivity_matrix=2.0,
        fracture_conductivity=2.0)
    problem = closed_box_problem(box_mesh, rock=rock)
    # freeze the aperture influence as well: no displacement load at all
    problem.displacement_bcs = {"bottom": (0.0, 0.0), "top": (0.0, 0.0)}
    init = problem.initialize(1.0e5, 300.0)
    state, rep = advance_step(problem, init, 1.0)
    assert rep.outer_iterations == 1


@pytest.mark.parametrize("scheme", ["H", "S"])
def test_closed_box_mass_and_energy_budget(box_mesh, scheme):
    problem = closed_box_problem(box_mesh, scheme=scheme)
    init = problem.initialize(1.0e5, 300.0,
                              initial_bcs={"bottom": (0.0, 0.0), "top": (0.0, 0.0)})
    state = init
    total0 = None
    for k in range(3):
        state, rep = advance_step(problem, state, 1.0 * 2**k)
        # mass conserved each step
        assert abs(rep.mass_increment - rep.mass_injected) <= 1e-10 * rep.mass_scale
        assert rep.mass_injected == pytest.approx(0.0, abs=1e-12 * rep.mass_scale)
        # energy budget closes against the assembled rows
        assert abs(rep.budget_residual) <= 1e-9 * rep.budget_scale
        # estimate slack stays nonnegative up to roundoff
        slack, terms = monitor_energy_estimate(rep)
        assert slack >= -1e-9 * (abs(terms["lhs_total"]) + abs(terms["rhs_total"]) + 1.0)
        if scheme == "S":
            assert rep.darcy_dissipation >= 0.0
            assert rep.fourier_dissipation >= 0.0


def test_acceleration_variants_agree(box_mesh):
    states = {}
    for accel in ("anderson", "none", "newton-krylov"):
        # The inner flow tolerance sets the reproducibility floor of the
        # coupled map (a warm-started solve accepts its input anywhere in
        # the tolerance ball), so both tolerances are tightened to make the
        # 1e-9 agreement between acceleration variants meaningful.
        problem = closed_box_problem(
            box_mesh, flow_config=FlowConfig(
                scheme="H", convection="upwind", newton_tol=1e-13,
                boundary={"left": {"p": 3.0e5, "T": 300.0}}))
        problem.acceleration = accel
        problem.fixed_point_tol = 1e-12
        problem.contact_config.tolerance = 1e-13
        init = problem.initialize(1.0e5, 300.0,
                                  initial_bcs={"bottom": (0.0, 0.0), "top": (0.0, 0.0)})
        state, rep = advance_step(problem, init, 2.0)
        states[accel] = state
    ref = states["anderson"]
    for accel in ("none", "newton-krylov"):
        other = states[accel]
        num = np.linalg.norm(other.flow.pressure - ref.flow.pressure)
        den = np.linalg.norm(ref.flow.pressure)
        assert num <= 1e-9 * den, accel
        numT = np.linalg.norm(other.flow.temperature - ref.flow.temperature)
        assert numT <= 1e-9 * np.linalg.norm(ref.flow.temperature), accel


def test_equivalence_at_converged_states(box_mesh):
    problem = closed_box_problem(
        box_mesh, scheme="S",
        flow_config=FlowConfig(scheme="S", convection="upwind",
                               boundary={"left": {"p": 5.0e5, "T": 310.0}}))
    init = problem.initialize(1.0e5, 300.0,
                              initial_bcs={"bottom": (0.0, 0.0), "top": (0.0, 0.0)})
    state, rep = advance_step(problem, init, 1.0, check_equivalence_rows=True)
    assert rep.equivalence_residual <= 1e-10


def test_run_simulation_series_and_reports(box_mesh):
    problem = closed_box_problem(
        box_mesh, flow_config=FlowConfig(
            scheme="H", convection="upwind",
            boundary={"left": {"p": 2.0e5, "T": 300.0},
                      "right": {"p": 1.0e5, "T": 300.0}}))
    grid = TimeGrid([Stage(4.0, 2.0, 1.0)])
    init = problem.initialize(1.0e5, 300.0,
                              initial_bcs={"bottom": (0.0, 0.0), "top": (0.0, 0.0)})
    result = run_simulation(problem, grid, init)
    assert not result.failed
    assert result.final_state.t == pytest.approx(4.0)
    n = len(result.series["t"])
    assert n == len(result.reports) + 1
    for key in ("mean_p", "mean_T", "mean_p_f", "mean_T_f", "n_open",
                "n_stick", "n_slip", "mean_aperture_change"):
        assert len(result.series[key]) == n
    assert result.series["mean_p"][-1] > result.series["mean_p"][0]


def test_run_simulation_reports_failure_gracefully(box_mesh):
    problem = closed_box_problem(
        box_mesh, flow_config=FlowConfig(
            scheme="H", convection="upwind", newton_max_iter=0,
            boundary={"left": {"p": 2.0e5, "T": 300.0}}))
    grid = TimeGrid([Stage(2.0, 1.0, 1.0)])
    init = problem.initialize(1.0e5, 300.0,
                              initial_bcs={"bottom": (0.0, 0.0), "top": (0.0, 0.0)})
    result = run_simulation(problem, grid, init, max_retries=1)
    assert result.failed
    assert "step at" in result.failure_message
    assert result.final_state is not None
