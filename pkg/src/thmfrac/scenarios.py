"""Built-in scenarios: the manufactured convergence case on the unit square
and the three-stage fractured-domain demonstration, plus the material
presets they use.

The manufactured fields share a single exponential time factor, which keeps
their time derivatives closed-form.  Source terms are provided for both
heat-equation variants: the conservative form and the approximate entropy
form differ exactly by the neglected pressure-convection term and the
linearised conduction weight, so each variant is exercised against an exact
solution of its own model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fluid as fluidmod
from .constitutive import RockParameters
from .coupler import CoupledProblem, SimulationResult, Stage, TimeGrid, run_simulation
from .flow import FlowConfig
from .hfv import all_cell_gradients
from .mesh import FractureGeometrySpec, generate_dfm_mesh, generate_unit_square_mesh


def rock_table1(permeability: float = 1.0) -> RockParameters:
    """Unit-scale material data of the manufactured convergence case."""
    return RockParameters(
        young_modulus=2.5, poisson_ratio=0.25, biot_coefficient=1.0,
        biot_modulus=0.25, bulk_modulus=2.0, thermal_dilation_skeleton=1.0,
        thermal_dilation_porosity=1.0, heat_capacity_skeleton=0.5,
        reference_temperature=1.0, initial_porosity=4.0, contact_aperture=5e-4,
        friction=0.0, permeability=permeability * np.eye(2),
        conductivity_matrix=0.1, fracture_conductivity=0.1)


def rock_table2() -> RockParameters:
    """Fractured-domain demonstration data; derived quantities follow
    a_phi = (b - phi0) a_s, K_s = lambda + mu, N = K_s / ((b - phi0)(1 - b))."""
    E, nu = 40.0e9, 0.15
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    b, phi0, alpha_s = 0.65, 0.1, 1.5e-5
    K_s = lam + mu
    N = K_s / ((b - phi0) * (1.0 - b))
    return RockParameters(
        young_modulus=E, poisson_ratio=nu, biot_coefficient=b,
        biot_modulus=N, bulk_modulus=K_s, thermal_dilation_skeleton=alpha_s,
        thermal_dilation_porosity=(b - phi0) * alpha_s,
        heat_capacity_skeleton=2.0e6, reference_temperature=300.0,
        initial_porosity=phi0, contact_aperture=5.0e-4, friction=0.5,
        permeability=np.diag([1.0e-15, 0.5e-15]), conductivity_matrix=2.0,
        fracture_conductivity=2.0)


ROCK_PRESETS = {"paper-table1": rock_table1, "paper-table2": rock_table2}


# ----------------------------------------------------------------------
# Manufactured solution on the unit square (no fractures)


@dataclass
class ManufacturedCase:
    """Closed-form fields and sources for one permeability value."""

    rock: RockParameters
    permeability: float

    # -- exact fields (broadcasting over numpy arrays) -----------------
    def displacement(self, x, y, t):
        e = 0.1 * np.exp(-t)
        return np.stack([e * x**2 * y**2, -e * x**2 * y**2])

    def displacement_gradient(self, x, y, t):
        e = 0.1 * np.exp(-t)
        gxx = 2 * e * x * y**2
        gxy = 2 * e * x**2 * y
        return np.stack([np.stack([gxx, gxy]), np.stack([-gxx, -gxy])])

    def pressure(self, x, y, t):
        return np.exp(-t) * np.sin(x) * np.sin(y)

    def pressure_gradient(self, x, y, t):
        e = np.exp(-t)
        return np.stack([e * np.cos(x) * np.sin(y), e * np.sin(x) * np.cos(y)])

    def temperature(self, x, y, t):
        return np.exp(-t) * (2.0 - np.cos(x) * np.cos(y))

    def temperature_gradient(self, x, y, t):
        e = np.exp(-t)
        return np.stack([e * np.sin(x) * np.cos(y), e * np.cos(x) * np.sin(y)])

    # -- sources --------------------------------------------------------
    def _hats(self, x, y):
        sx, cx, sy, cy = np.sin(x), np.cos(x), np.sin(y), np.cos(y)
        div_hat = 0.2 * (x * y**2 - x**2 * y)
        return sx, cx, sy, cy, div_hat

    def mass_source(self, x, y, t):
        r = self.rock
        k = self.permeability
        sx, cx, sy, cy, div_hat = self._hats(x, y)
        e = np.exp(-t)
        p_hat, T_hat = sx * sy, 2.0 - cx * cy
        dphi_dt = -e * (r.biot_coefficient * div_hat
                        - r.thermal_dilation_porosity * T_hat
                        + p_hat / r.biot_modulus)
        div_velocity = 2.0 * k * e * sx * sy  # viscosity 1
        return dphi_dt + div_velocity

    def _common_heat_terms(self, x, y, t):
        r = self.rock
        k = self.permeability
        sx, cx, sy, cy, div_hat = self._hats(x, y)
        e = np.exp(-t)
        p = e * sx * sy
        T = e * (2.0 - cx * cy)
        p_hat, T_hat = sx * sy, 2.0 - cx * cy
        dS_dt = -e * (r.thermal_dilation_skeleton * r.bulk_modulus * div_hat
                      - r.thermal_dilation_porosity * p_hat
                      + r.heat_capacity_skeleton / r.reference_temperature * T_hat)
        dphi_dt = -e * (r.biot_coefficient * div_hat
                        - r.thermal_dilation_porosity * T_hat
                        + p_hat / r.biot_modulus)
        phi = (r.initial_porosity
               + (e - 1.0) * (r.biot_coefficient * div_hat
                              - r.thermal_dilation_porosity * T_hat
                              + p_hat / r.biot_modulus))
        vel = -k * e * np.stack([cx * sy, sx * cy])
        div_velocity = 2.0 * k * e * sx * sy
        div_q = -r.conductivity_matrix * 2.0 * e * cx * cy
        return p, T, dS_dt, dphi_dt, phi, vel, div_velocity, div_q, e, (sx, cx, sy, cy)

    def heat_source_conservative(self, x, y, t):
        """Right-hand side of the total-energy form (e = T, rho = 1)."""
        p, T, dS_dt, dphi_dt, phi, vel, divV, div_q, e, trig = \
            self._common_heat_terms(x, y, t)
        sx, cx, sy, cy = trig
        grad_sum = e * (sx * cy + cx * sy)        # both components of grad(T + p)
        adv = (vel[0] + vel[1]) * 0.0 + vel[0] * grad_sum + vel[1] * grad_sum
        return (T * dS_dt + p * dphi_dt + dphi_dt * T - phi * T
                + adv + (T + p) * divV + div_q)

    def heat_source_entropy(self, x, y, t):
        """Right-hand side of the approximate entropy form."""
        r = self.rock
        p, T, dS_dt, dphi_dt, phi, vel, divV, div_q, e, trig = \
            self._common_heat_terms(x, y, t)
        sx, cx, sy, cy = trig
        gradT = e * np.stack([sx * cy, cx * sy])
        v_dot_gT = vel[0] * gradT[0] + vel[1] * gradT[1]
        G = self.mass_source(x, y, t)
        return (T * dS_dt - phi * T + v_dot_gT
                + (T / r.reference_temperature) * div_q + (T + p) * G)

    def mech_source(self, x, y, t):
        r = self.rock
        mu, lam = r.lame_mu, r.lame_lambda
        e = 0.1 * np.exp(-t)
        et = np.exp(-t)
        sx, cx, sy, cy = np.sin(x), np.cos(x), np.sin(y), np.cos(y)
        div_eps = np.stack([e * (2 * y**2 + x**2 - 2 * x * y),
                            e * (2 * x * y - y**2 - 2 * x**2)])
        grad_div = np.stack([2 * e * (y**2 - 2 * x * y),
                             2 * e * (2 * x * y - x**2)])
        grad_p = et * np.stack([cx * sy, sx * cy])
        grad_T = et * np.stack([sx * cy, cx * sy])
        return (-2 * mu * div_eps - lam * grad_div
                + r.biot_coefficient * grad_p
                + r.thermal_dilation_skeleton * r.bulk_modulus * grad_T)


def manufactured_problem(mesh_index: int, scheme: str, convection: str,
                         permeability: float = 1.0,
                         vgradp_correction: bool = False):
    """Coupled problem + case for the unit-square convergence run."""
    mesh = generate_unit_square_mesh(mesh_index)
    rock = rock_table1(permeability)
    case = ManufacturedCase(rock, permeability)
    heat = case.heat_source_entropy if scheme == "S" else case.heat_source_conservative
    bc = {tag: {"p": case.pressure, "T": case.temperature}
          for tag in ("left", "right", "top", "bottom")}
    cfg = FlowConfig(scheme=scheme, convection=convection,
                     vgradp_correction=vgradp_correction, boundary=bc,
                     source_mass=case.mass_source, source_energy=heat)
    disp = {tag: (lambda x, y, t: case.displacement(x, y, t))
            for tag in ("left", "right", "top", "bottom")}
    problem = CoupledProblem(mesh=mesh, rock=rock, fluid=fluidmod.incompressible_linear(),
                             flow_config=cfg, displacement_bcs=disp,
                             mech_source=case.mech_source)
    return problem, case


class ErrorMeter:
    """Accumulates space-time L2 errors of the discrete fields."""

    def __init__(self, problem: CoupledProblem, case: ManufacturedCase):
        self.problem = problem
        self.case = case
        mesh = problem.mesh
        space = problem.space
        # Degree-4 points for the displacement errors.
        from .mechanics import _QP4, _QW4
        verts = mesh.vertices[mesh.cells]
        self.qp = np.einsum("qa,cad->cqd", _QP4, verts)       # (nc, 6, 2)
        self.qw = np.outer(mesh.cell_area, _QW4)              # (nc, 6)
        shape = np.empty((len(_QP4), 6))
        for qi, L in enumerate(_QP4):
            for i in range(3):
                shape[qi, i] = L[i] * (2 * L[i] - 1)
            for j in range(3):
                shape[qi, 3 + j] = 4 * L[(j + 1) % 3] * L[(j + 2) % 3]
        self.shape = shape                                     # (nq, 6)
        self.num = {k: 0.0 for k in ("p", "T", "u", "gp", "gT", "gu")}
        self.den = {k: 0.0 for k in self.num}

    def accumulate(self, state, dt):
        mesh = self.problem.mesh
        space = self.problem.space
        case = self.case
        t = state.t
        nc = mesh.n_cells
        xc, yc = mesh.cell_centroid[:, 0], mesh.cell_centroid[:, 1]
        area = mesh.cell_area
        p, T = state.flow.pressure, state.flow.temperature

        for key, vals, exact in (("p", p[:nc], case.pressure(xc, yc, t)),
                                 ("T", T[:nc], case.temperature(xc, yc, t))):
            self.num[key] += dt * float(area @ (vals - exact) ** 2)
            self.den[key] += dt * float(area @ exact ** 2)
        gp = all_cell_gradients(mesh, p[:nc], p[nc:nc + mesh.n_faces])
        gT = all_cell_gradients(mesh, T[:nc], T[nc:nc + mesh.n_faces])
        for key, g, exact in (("gp", gp, case.pressure_gradient(xc, yc, t)),
                              ("gT", gT, case.temperature_gradient(xc, yc, t))):
            err = (g - exact.T) ** 2
            self.num[key] += dt * float(area @ err.sum(axis=1))
            self.den[key] += dt * float(area @ (exact.T ** 2).sum(axis=1))

        ue = state.mech.u[space.elem_dofs]
        ux = ue[:, 0::2] @ self.shape.T                      # (nc, nq)
        uy = ue[:, 1::2] @ self.shape.T
        exact_u = case.displacement(self.qp[:, :, 0], self.qp[:, :, 1], t)
        self.num["u"] += dt * float((self.qw * ((ux - exact_u[0]) ** 2
                                                + (uy - exact_u[1]) ** 2)).sum())
        self.den["u"] += dt * float((self.qw * (exact_u[0] ** 2
                                                + exact_u[1] ** 2)).sum())
        # P2 strain is linear: 3-point evaluation is exact for its L2 norm.
        gq = []
        for dN in space._dN:
            gx = np.einsum("cn,cnd->cd", ue[:, 0::2], dN)
            gy = np.einsum("cn,cnd->cd", ue[:, 1::2], dN)
            gq.append((gx, gy))
        mids = [(1, 2), (2, 0), (0, 1)]
        verts = mesh.vertices[mesh.cells]
        err = np.zeros(nc)
        den = np.zeros(nc)
        for (gx, gy), (a, b) in zip(gq, mids):
            xq = 0.5 * (verts[:, a, 0] + verts[:, b, 0])
            yq = 0.5 * (verts[:, a, 1] + verts[:, b, 1])
            gex = case.displacement_gradient(xq, yq, t)       # (2, 2, nc)
            err += ((gx[:, 0] - gex[0, 0]) ** 2 + (gx[:, 1] - gex[0, 1]) ** 2
                    + (gy[:, 0] - gex[1, 0]) ** 2 + (gy[:, 1] - gex[1, 1]) ** 2)
            den += (gex ** 2).sum(axis=(0, 1))
        self.num["gu"] += dt * float((area / 3.0) @ err)
        self.den["gu"] += dt * float((area / 3.0) @ den)

    def relative_errors(self) -> dict:
        return {k: float(np.sqrt(self.num[k] / max(self.den[k], 1e-300)))
                for k in self.num}


@dataclass
class ManufacturedResult:
    mesh_index: int
    h: float
    errors: dict
    completed: bool
    failure_message: str = ""
    steps: int = 0
    min_slack: float = float("inf")


def run_manufactured(mesh_index: int, scheme: str = "H",
                     convection: str = "centred", permeability: float = 1.0,
                     vgradp_correction: bool = False, t_final: float = 0.05,
                     dt: float = 1e-4) -> ManufacturedResult:
    """One convergence-study run; solver failures are reported, not raised."""
    problem, case = manufactured_problem(mesh_index, scheme, convection,
                                         permeability, vgradp_correction)
    initial = problem.initialize(lambda x, y: case.pressure(x, y, 0.0),
                                 lambda x, y: case.temperature(x, y, 0.0))
    meter = ErrorMeter(problem, case)

    def hook(state, report):
        if report is not None:
            meter.accumulate(state, report.dt)

    grid = TimeGrid([Stage(t_end=t_final, dt_max=dt, dt_init=dt)], growth=1.0)
    result = run_simulation(problem, grid, initial, max_retries=2,
                            snapshot_hook=hook)
    min_slack = min((r.slack for r in result.reports), default=float("inf"))
    h = 1.0 / 2 ** mesh_index
    if result.failed:
        return ManufacturedResult(mesh_index, h, {}, False,
                                  result.failure_message,
                                  steps=len(result.reports), min_slack=min_slack)
    return ManufacturedResult(mesh_index, h, meter.relative_errors(), True,
                              steps=len(result.reports), min_slack=min_slack)


def fit_orders(results: list) -> dict:
    """Least-squares convergence order per variable from log error vs log h."""
    done = [r for r in results if r.completed]
    orders = {}
    if len(done) < 2:
        return orders
    hs = np.log([r.h for r in done])
    for key in done[0].errors:
        errs = np.log([r.errors[key] for r in done])
        orders[key] = float(np.polyfit(hs, errs, 1)[0])
    return orders


def run_convergence_study(mesh_indices, scheme="H", convection="centred",
                          permeability=1.0, t_final=0.05, dt=1e-4):
    rows = [run_manufactured(m, scheme, convection, permeability,
                             t_final=t_final, dt=dt) for m in mesh_indices]
    return rows, fit_orders(rows)


# ----------------------------------------------------------------------
# Fractured-domain demonstration (three-stage loading)


def demo_fracture_geometry() -> FractureGeometrySpec:
    """Six-fracture demonstration network on (0,1) x (0,2): fracture 0 is a
    two-segment corner, fractures 2 and 3 nearly intersect, fracture 4
    reaches the left boundary."""
    segments = [
        [0.20, 1.50, 0.45, 1.40],
        [0.45, 1.40, 0.72, 1.50],
        [0.15, 1.10, 0.75, 1.25],
        [0.30, 0.80, 0.80, 0.95],
        [0.55, 0.55, 0.85, 0.88],
        [0.00, 0.60, 0.35, 0.50],
        [0.45, 0.20, 0.15, 0.40],
    ]
    ids = [0, 0, 1, 2, 3, 4, 5]
    return FractureGeometrySpec(segments=segments, fracture_ids=ids,
                                domain=(0.0, 1.0, 0.0, 2.0),
                                base_spacing=1.0 / 16.0)


def load_geometry(path) -> FractureGeometrySpec:
    """Read 'x0 y0 x1 y1 id' per line; blank lines and # comments skipped."""
    segs, ids = [], []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            segs.append([float(v) for v in parts[:4]])
            ids.append(int(parts[4]))
    return FractureGeometrySpec(segments=segs, fracture_ids=ids)


def save_geometry(spec: FractureGeometrySpec, path) -> None:
    with open(path, "w") as fh:
        for seg, fid in zip(spec.segments, spec.fracture_ids):
            fh.write(" ".join(repr(float(v)) for v in seg) + f" {int(fid)}\n")


DFM_STAGES = {
    "liquid": dict(t1=100.0, t2=200.0, t_final=432000.0,
                   stages=lambda t1, t2, tf: [Stage(t1, 5.0, 0.1),
                                              Stage(t2, 5.0, None),
                                              Stage(tf, 8640.0, None)]),
    "gas": dict(t1=100.0, t2=500.0, t_final=3.005e5,
                stages=lambda t1, t2, tf: [Stage(t1, 100.0, 100.0),
                                           Stage(t2, 100.0, 10.0),
                                           Stage(tf, 8000.0, None)]),
}


def dfm_problem(fluid_name: str = "liquid", scheme: str = "H",
                vgradp_correction: bool = False, mesh_index: int = 0,
                geometry: FractureGeometrySpec | None = None):
    """Three-stage scenario: mechanical, hydraulic and thermal loading."""
    sched = DFM_STAGES[fluid_name]
    t1, t2, tf = sched["t1"], sched["t2"], sched["t_final"]
    mesh = generate_dfm_mesh(geometry or demo_fracture_geometry(), mesh_index)
    rock = rock_table2()
    fl = fluidmod.weakly_compressible_liquid() if fluid_name == "liquid" \
        else fluidmod.perfect_gas()

    left_p = lambda x, y, t: 8.0e6 if t >= t1 * (1 - 1e-12) else None
    left_T = lambda x, y, t: 285.0 if t >= t2 * (1 - 1e-12) else None
    bc = {"left": {"p": left_p, "T": left_T},
          "right": {"p": 1.0e5, "T": 300.0}}
    cfg = FlowConfig(scheme=scheme, convection="upwind",
                     vgradp_correction=vgradp_correction, boundary=bc)
    disp = {"bottom": (0.0, 0.0), "top": (5.0e-4, -2.0e-4)}
    problem = CoupledProblem(mesh=mesh, rock=rock, fluid=fl, flow_config=cfg,
                             displacement_bcs=disp)
    grid = TimeGrid(sched["stages"](t1, t2, tf))
    initial_bcs = {"bottom": (0.0, 0.0), "top": (0.0, 0.0)}
    return problem, grid, initial_bcs


def run_dfm(fluid_name="liquid", scheme="H", vgradp_correction=False,
            mesh_index=0, snapshot_hook=None,
            geometry=None) -> SimulationResult:
    problem, grid, init_bcs = dfm_problem(fluid_name, scheme, vgradp_correction,
                                          mesh_index, geometry)
    initial = problem.initialize(1.0e5, 300.0, initial_bcs=init_bcs)
    return run_simulation(problem, grid, initial, snapshot_hook=snapshot_hook)
