"""Time stepping and the flow-mechanics fixed point, with energy monitors.

Each step iterates the map (p, T) -> contact solve -> flow solve -> (p, T)
to a relative tolerance, optionally accelerated by Anderson mixing or a
matrix-free Newton-Krylov iteration.  Converged steps are audited: the
per-step energy budget must close (bookkeeping identity) and the energy
estimate slack must stay non-negative up to roundoff; for the entropy-based
scheme the hydraulic and thermal dissipation forms are reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hfv, linalg, mechanics
from .constitutive import discrete_skeleton_energy, update_porosity, update_skeleton_entropy
from .errors import DomainError, EstimateViolation, NonConvergence, StepFailure
from .flow import FlowConfig, FlowSystem, LevelState, MeshFlowOps, solve_flow
from .mechanics import ContactSolveConfig, DisplacementSpace, MechState


@dataclass
class Stage:
    t_end: float
    dt_max: float
    dt_init: float | None = None   # None: continue growing the previous step


@dataclass
class TimeGrid:
    """Stage-wise schedule: steps grow geometrically up to the stage cap and
    land exactly on stage boundaries."""

    stages: list
    growth: float = 2.0
    t_start: float = 0.0

    def __post_init__(self):
        ends = [s.t_end for s in self.stages]
        if any(b <= a for a, b in zip([self.t_start] + ends[:-1], ends)):
            raise ValueError("stage end times must be strictly increasing")

    @property
    def t_final(self) -> float:
        return self.stages[-1].t_end

    def stage_at(self, t: float) -> Stage:
        for s in self.stages:
            if t < s.t_end * (1.0 - 1e-14) - 1e-300:
                return s
        return self.stages[-1]

    def first_dt(self) -> float:
        s = self.stages[0]
        return min(s.dt_init if s.dt_init is not None else s.dt_max, s.dt_max,
                   s.t_end - self.t_start)

    def next_dt(self, t: float, dt_prev: float) -> float:
        s = self.stage_at(t)
        starts = [self.t_start] + [st.t_end for st in self.stages[:-1]]
        stage_start = starts[self.stages.index(s)]
        if s.dt_init is not None and abs(t - stage_start) <= 1e-12 * max(1.0, abs(t)):
            dt = s.dt_init
        else:
            dt = self.growth * dt_prev
        dt = min(dt, s.dt_max, s.t_end - t)
        return dt


@dataclass
class StepReport:
    """Per-step audit: solver effort, contact states and the energy budget."""

    t: float
    dt: float
    outer_iterations: int
    flow_newton: int
    contact_newton: int
    contact_open: int
    contact_stick: int
    contact_slip: int
    energy_terms: dict
    slack: float
    budget_residual: float
    mass_increment: float
    mass_injected: float
    darcy_dissipation: float
    fourier_dissipation: float
    friction_dissipation: float
    persistence: float
    budget_scale: float = 1.0
    mass_scale: float = 1.0
    equivalence_residual: float = float("nan")
    retries: int = 0


@dataclass
class SimState:
    """Everything one time level carries forward."""

    t: float
    flow: LevelState
    mech: MechState
    skeleton_energy: float
    velocity: np.ndarray | None = None


@dataclass
class CoupledProblem:
    """Static problem data shared by all time steps."""

    mesh: object
    rock: object
    fluid: object
    flow_config: FlowConfig
    displacement_bcs: dict
    mech_source: object = None                # F(x, y, t) -> (2, n)
    contact_config: ContactSolveConfig = field(default_factory=ContactSolveConfig)
    acceleration: str = "anderson"            # "anderson" | "none" | "newton-krylov"
    fixed_point_tol: float = 1e-10
    fixed_point_max_iter: int = 60
    anderson_depth: int = 5
    strict_energy_check: bool = False

    def __post_init__(self):
        self.ops = MeshFlowOps(self.mesh)
        self.space = DisplacementSpace(self.mesh)
        self.stiffness = self.space.stiffness(self.rock.lame_mu, self.rock.lame_lambda)
        self.base_perm = hfv.cell_flux_matrices(self.mesh, self.rock.permeability_tensor())
        self.base_unit = hfv.cell_flux_matrices(self.mesh, np.eye(2))

    # ------------------------------------------------------------------
    def mech_volume_load(self, t: float, dt: float | None = None):
        """Cellwise space-time average of the volume force over the step
        ending at t (or its instantaneous value when dt is None)."""
        if self.mech_source is None:
            return None
        cache = getattr(self, "_mech_load_cache", None)
        if cache is not None and cache[0] == (t, dt):
            return cache[1]
        from .flow import average_sources

        t0, t1 = (t - dt, t) if dt else (t, t)
        if t1 <= t0:
            t1 = t0 + max(1e-30, 1e-16 * abs(t0))
        fx = lambda x, y, tt: np.asarray(self.mech_source(x, y, tt))[0]
        fy = lambda x, y, tt: np.asarray(self.mech_source(x, y, tt))[1]
        gx = average_sources(fx, self.mesh, t0, t1)
        gy = average_sources(fy, self.mesh, t0, t1)
        out = np.column_stack([gx, gy])
        self._mech_load_cache = ((t, dt), out)
        return out

    def solve_mechanics(self, p, T, t, dt=None, u_prev=None, warm=None,
                        bcs=None, velocity_prev=None, dt_prev=None):
        mesh = self.mesh
        nc = mesh.n_cells
        p_frac = p[mesh.face_entity(mesh.fracture_faces)] if mesh.n_fracture_faces \
            else np.zeros(0)
        fhat = self.mech_volume_load(t, dt)
        problem = mechanics.build_problem(
            self.space, self.rock, p[:nc], T[:nc], fracture_pressure=p_frac,
            fhat_cells=fhat, displacement_bcs=bcs or self.displacement_bcs,
            t=t, u_previous=u_prev, stiffness=self.stiffness,
            dt=dt, dt_prev=dt_prev, velocity_prev=velocity_prev)
        if (mesh.n_fracture_faces == 0 and self.rock.inertial_density == 0.0):
            # Linear problem with a constant matrix: factorize once.
            state = self._solve_mech_linear(problem)
            return state, problem, 1
        u0 = lam_n0 = lam_t0 = None
        if warm is not None:
            u0, lam_n0, lam_t0 = warm.u, warm.lambda_n, warm.lambda_t
        state, iters = mechanics.solve_contact(problem, self.contact_config,
                                               u0=u0, lam_n0=lam_n0, lam_t0=lam_t0)
        state.contact_aperture = self.rock.contact_aperture
        return state, problem, iters

    def _solve_mech_linear(self, problem) -> MechState:
        key = tuple(problem.dirichlet_dofs.tolist())
        cache = getattr(self, "_mech_fact_cache", None)
        if cache is None or cache[0] != key:
            J = problem.stiffness.tolil(copy=True)
            for d in problem.dirichlet_dofs:
                J.rows[d] = [int(d)]
                J.data[d] = [1.0]
            cache = (key, linalg.factorize(J.tocsr()))
            self._mech_fact_cache = cache
        zero = np.zeros(self.space.n_dofs)
        rhs = -mechanics.momentum_residual(problem, zero, np.zeros(0), np.zeros(0))
        rhs[problem.dirichlet_dofs] = problem.dirichlet_values
        u = cache[1].solve(rhs)
        state = MechState(self.space, u, np.zeros(0), np.zeros(0),
                          np.zeros(0, dtype=int))
        state.contact_aperture = self.rock.contact_aperture
        return state

    def initialize(self, p0, T0, initial_bcs=None, t0: float = 0.0) -> SimState:
        """Initial contact solve at the given (p0, T0) fields."""
        mesh = self.mesh
        pts = mesh.entity_points()
        p = np.full(mesh.n_entities, float(p0)) if np.isscalar(p0) \
            else np.asarray(p0(pts[:, 0], pts[:, 1]), dtype=float)
        T = np.full(mesh.n_entities, float(T0)) if np.isscalar(T0) \
            else np.asarray(T0(pts[:, 0], pts[:, 1]), dtype=float)
        mech, _, _ = self.solve_mechanics(p, T, t0, bcs=initial_bcs
                                          or self.displacement_bcs)
        aperture = self.rock.contact_aperture - mech.face_average_jump_normal()
        flow_level = LevelState(
            pressure=p, temperature=T,
            porosity=np.full(mesh.n_cells, self.rock.initial_porosity),
            entropy=np.zeros(mesh.n_cells),
            aperture=aperture,
            div_mean=mech.div_mean_per_cell())
        nc = mesh.n_cells
        _, es = discrete_skeleton_energy(self.rock, mesh, p[:nc], T[:nc], mech)
        velocity = np.zeros(self.space.n_dofs) if self.rock.inertial_density > 0 else None
        return SimState(t=t0, flow=flow_level, mech=mech,
                        skeleton_energy=es, velocity=velocity)


def _anderson_update(history_x, history_g, depth):
    """Type-II Anderson mixing on the fixed-point residual f = g - x."""
    m = min(depth, len(history_x) - 1)
    if m < 1:
        return history_g[-1]
    F = np.column_stack([
        (history_g[-1] - history_x[-1]) - (history_g[-2 - i] - history_x[-2 - i])
        for i in range(m)])
    G = np.column_stack([history_g[-1] - history_g[-2 - i] for i in range(m)])
    f = history_g[-1] - history_x[-1]
    gamma, *_ = np.linalg.lstsq(F, f, rcond=None)
    return history_g[-1] - G @ gamma


def advance_step(problem: CoupledProblem, state: SimState, dt: float,
                 check_equivalence_rows: bool = False,
                 guess: np.ndarray | None = None) -> tuple[SimState, StepReport]:
    """One coupled step: fixed point on (p, T) with mechanics-first ordering.

    ``guess`` optionally seeds the fixed point (e.g. a linear-in-time
    predictor); the converged result does not depend on it."""
    mesh = problem.mesh
    nc = mesh.n_cells
    t_new = state.t + dt
    prev = state.flow

    system = FlowSystem(mesh, problem.ops, problem.rock, problem.fluid,
                        problem.flow_config, dt, t_new, prev,
                        prev.aperture, prev.div_mean,
                        base_perm_matrices=problem.base_perm,
                        base_unit_matrices=problem.base_unit)
    carried = getattr(problem, "_flow_chord", None)
    if carried is not None and carried[0] == dt:
        system._chord_fact = carried[1]

    flow_newton = 0
    contact_newton = 0
    mech_warm = state.mech
    mech_result: dict = {}

    def g(x):
        nonlocal flow_newton, contact_newton, mech_warm
        p, T = x[: mesh.n_entities], x[mesh.n_entities:]
        mech, mproblem, it_c = problem.solve_mechanics(
            p, T, t_new, dt=dt, u_prev=state.mech.u, warm=mech_warm,
            velocity_prev=state.velocity)
        contact_newton += it_c
        mech_warm = mech
        aperture = problem.rock.contact_aperture - mech.face_average_jump_normal()
        system.aperture_new = aperture
        system.ddiv = mech.div_mean_per_cell() - prev.div_mean
        fstate, rep = solve_flow(system, p, T)
        flow_newton += rep.iterations
        mech_result["mech"] = mech
        mech_result["problem"] = mproblem
        return fstate.stacked()

    x = np.concatenate([prev.pressure, prev.temperature])
    if guess is not None and guess.shape == x.shape:
        N = mesh.n_entities
        if np.all(problem.fluid.admissible(guess[:N], guess[N:])):
            x = guess.copy()
    outer = 0
    res = np.inf
    converged = False
    if problem.acceleration == "newton-krylov":
        # Newton on f(x) = g(x) - x with finite-difference directional
        # derivatives and GMRES; every matvec costs one coupled sweep.  A
        # plain substitution sweep safeguards steps that fail to contract.
        gx = g(x)
        f = gx - x
        scale = np.linalg.norm(x) + 1e-300
        for outer in range(1, problem.fixed_point_max_iter + 1):
            res = np.linalg.norm(f) / scale
            if res <= problem.fixed_point_tol:
                converged = True
                break

            def matvec(v):
                nv = np.linalg.norm(v)
                if nv == 0.0:
                    return np.zeros_like(v)
                eps = 1e-7 * max(np.linalg.norm(x), 1.0) / nv
                try:
                    return (g(x + eps * v) - (x + eps * v) - f) / eps
                except (DomainError, NonConvergence):
                    return v  # degrade to the identity for this direction

            try:
                delta = linalg.gmres(matvec, -f, tol=1e-3, restart=15, maxiter=15)
            except linalg.MaxIterationsError:
                delta = f
            accepted = False
            alpha = 1.0
            for _ in range(4):
                try:
                    cand = x + alpha * delta
                    g_cand = g(cand)
                    f_cand = g_cand - cand
                except (DomainError, NonConvergence):
                    alpha *= 0.5
                    continue
                if np.linalg.norm(f_cand) < np.linalg.norm(f):
                    x, gx, f = cand, g_cand, f_cand
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # Substitution sweep always contracts here.
                x = gx
                gx = g(x)
                f = gx - x
        x = gx if converged else x
    else:
        x_hist, g_hist = [x], [g(x)]
        for outer in range(1, problem.fixed_point_max_iter + 1):
            if problem.acceleration == "anderson":
                x_next = _anderson_update(x_hist, g_hist, problem.anderson_depth)
            else:
                x_next = g_hist[-1]
            gx = g(x_next)
            res = np.linalg.norm(gx - x_next) / (np.linalg.norm(x_next) + 1e-300)
            x_hist.append(x_next)
            g_hist.append(gx)
            if len(x_hist) > problem.anderson_depth + 2:
                x_hist.pop(0)
                g_hist.pop(0)
            if res <= problem.fixed_point_tol:
                converged = True
                x = gx
                break
    if not converged:
        raise NonConvergence("coupled fixed point", iterations=outer,
                             residual=float(res))

    p_new, T_new = x[: mesh.n_entities], x[mesh.n_entities:]
    mech_new: MechState = mech_result["mech"]
    mech_problem = mech_result["problem"]
    fact = getattr(system, "_chord_fact", None)
    problem._flow_chord = (dt, fact) if fact is not None else None

    # Commit the level: constitutive updates and the audit.
    porosity = update_porosity(prev.porosity, p_new[:nc] - prev.pressure[:nc],
                               T_new[:nc] - prev.temperature[:nc],
                               system.ddiv, problem.rock)
    entropy = update_skeleton_entropy(prev.entropy, p_new[:nc] - prev.pressure[:nc],
                                      T_new[:nc] - prev.temperature[:nc],
                                      system.ddiv, problem.rock)
    aperture = system.aperture_new
    level = LevelState(pressure=p_new, temperature=T_new, porosity=porosity,
                       entropy=entropy, aperture=aperture,
                       div_mean=mech_new.div_mean_per_cell())
    velocity = None
    if problem.rock.inertial_density > 0:
        velocity = (mech_new.u - state.mech.u) / dt
    _, es_new = discrete_skeleton_energy(problem.rock, mesh, p_new[:nc],
                                         T_new[:nc], mech_new)
    new_state = SimState(t=t_new, flow=level, mech=mech_new,
                         skeleton_energy=es_new, velocity=velocity)

    report = _audit_step(problem, system, state, new_state, mech_problem,
                         outer, flow_newton, contact_newton, dt)
    if check_equivalence_rows:
        report.equivalence_residual = check_equivalence(system, p_new, T_new,
                                                        assembled_scale=True)
    if problem.strict_energy_check and report.slack < -_slack_tol(report):
        raise EstimateViolation(
            f"energy estimate violated: slack={report.slack:.3e}",
            breakdown=report.energy_terms)
    return new_state, report


def _slack_tol(report: StepReport) -> float:
    terms = report.energy_terms
    return 1e-9 * (abs(terms["lhs_total"]) + abs(terms["rhs_total"]) + 1.0)


def _audit_step(problem, system, old: SimState, new: SimState, mech_problem,
                outer, flow_newton, contact_newton, dt) -> StepReport:
    mesh = problem.mesh
    nc = mesh.n_cells
    rock = problem.rock
    space = problem.space
    prev, cur = old.flow, new.flow
    eos0 = problem.fluid.evaluate(prev.pressure, prev.temperature)
    eos1 = problem.fluid.evaluate(cur.pressure, cur.temperature)
    area = mesh.cell_area
    flen = system.frac_len
    fe = system.frac_ent
    du = new.mech.u - old.mech.u
    up = system.upwind(cur.pressure)

    # Fluid internal energy and mass increments.
    dE_fluid = float(
        (area * (eos1.rho[:nc] * cur.porosity * eos1.e[:nc]
                 - eos0.rho[:nc] * prev.porosity * eos0.e[:nc])).sum())
    dM = float((area * (eos1.rho[:nc] * cur.porosity
                        - eos0.rho[:nc] * prev.porosity)).sum())
    if fe.size:
        dE_fluid += float((flen * (eos1.rho[fe] * cur.aperture * eos1.e[fe]
                                   - eos0.rho[fe] * prev.aperture * eos0.e[fe])).sum())
        dM += float((flen * (eos1.rho[fe] * cur.aperture
                             - eos0.rho[fe] * prev.aperture)).sum())

    # Skeleton energy: increment and its convex upper bound.
    dE_s = new.skeleton_energy - old.skeleton_energy
    pT = np.column_stack([cur.pressure[:nc], cur.temperature[:nc]])
    dpT = np.column_stack([cur.pressure[:nc] - prev.pressure[:nc],
                           cur.temperature[:nc] - prev.temperature[:nc]])
    M = rock.coupling_matrix()
    b_id = float((area * np.einsum("ci,ij,cj->c", pT, M, dpT)).sum())
    b_id += float(new.mech.u @ (problem.stiffness @ du))
    lin = rock.thermal_dilation_skeleton * rock.bulk_modulus * rock.reference_temperature
    b_id += lin * float(np.einsum("ci,ci->", space.div_integral, du[space.elem_dofs]))

    # Contact terms.
    if mesh.n_fracture_faces:
        djn = space.jump_normal @ du
        djt = space.jump_tangent @ du
        d_fric = mechanics.friction_dissipation(mesh, mech_problem.friction,
                                                new.mech.lambda_n, djt)
        persist = mechanics.persistence_work(mesh, new.mech.lambda_n, djn)
        d_id = float((flen * (new.mech.lambda_n * djn + new.mech.lambda_t * djt)).sum())
    else:
        d_fric = persist = d_id = 0.0

    # Inertia (zero in the quasi-static runs).
    a_id = dKE = 0.0
    if rock.inertial_density > 0 and mech_problem.inertia_matrix is not None:
        Mmat = mech_problem.inertia_matrix
        a_id = float((mech_problem.inertia_coef * (Mmat @ new.mech.u)
                      + mech_problem.inertia_rhs) @ du)
        v1 = new.velocity
        v0 = old.velocity if old.velocity is not None else np.zeros_like(v1)
        dKE = 0.5 * rock.inertial_density * float(v1 @ (Mmat @ v1) - v0 @ (Mmat @ v0))

    # Sources and boundary work.
    src = dt * float((area * system.Hhat_m).sum() + (flen * system.Hhat_f).sum())
    w_load = float(mech_problem.load @ du)
    r_full = mechanics.momentum_residual(mech_problem, new.mech.u,
                                         new.mech.lambda_n, new.mech.lambda_t)
    dd = mech_problem.dirichlet_dofs
    w_react = float(r_full[dd] @ du[dd]) if dd.size else 0.0
    outflux = dt * system.boundary_energy_outflux(cur.pressure, cur.temperature, up)
    mass_out = dt * system.boundary_mass_outflux(cur.pressure, cur.temperature, up)
    mass_src = dt * float((area * system.Ghat_m).sum() + (flen * system.Ghat_f).sum())

    # Scheme corrections (zero for the H scheme); Dirichlet edges excluded.
    corr_sum = 0.0
    darcy_form, fourier_form = system.dissipation_forms(cur.pressure, cur.temperature)
    if problem.flow_config.scheme == "S":
        corr = system.corrections(cur.pressure, cur.temperature, up)
        d = system.dirichlet
        ee = system.edge_ent
        if ee.size:
            edge_dir = (d.p_mask | d.T_mask)[ee]
            corr[ee[edge_dir]] = 0.0
        corr_sum = dt * float(corr.sum())

    rhs_total = src + w_load + w_react - outflux
    lhs_slack = dKE + dE_s + dE_fluid + d_fric + corr_sum
    lhs_total = a_id + b_id + dE_fluid + d_id + corr_sum
    slack = rhs_total - lhs_slack
    budget_residual = rhs_total - lhs_total

    # Achievable closure scale: assembled |term| magnitudes of the rows the
    # budget sums.  For the entropy scheme the energy budget follows from
    # T * entropy-row + h * mass-row, so those amplifications bound the
    # reachable dust; the conservative scheme picks up h-amplified mass-row
    # dust through the interior-face convective cancellation.
    _, S_all = system.residual(cur.pressure, cur.temperature, up, with_scale=True)
    N = system.N
    rows = np.concatenate([np.arange(nc), fe, system.edge_ent]).astype(np.int64)
    h_abs = np.abs(eos1.h)
    if problem.flow_config.scheme == "S":
        e_dust = float((np.abs(cur.temperature[rows]) * S_all[N:][rows]).sum())
    else:
        e_dust = float(S_all[N:][rows].sum())
    m_dust = float(h_abs.max() * S_all[:N].sum())
    budget_scale = dt * (e_dust + m_dust) \
        + sum(abs(v) for v in (dKE, dE_s, dE_fluid, d_fric, corr_sum,
                               src, w_load, w_react, outflux)) + 1.0
    mass_scale = dt * float(S_all[:N].sum()) + abs(dM) + abs(mass_src) + 1e-300

    terms = {
        "kinetic_increment": dKE, "kinetic_identity": a_id,
        "skeleton_increment": dE_s, "skeleton_identity": b_id,
        "fluid_increment": dE_fluid, "contact_identity": d_id,
        "friction_dissipation": d_fric, "corrections": corr_sum,
        "sources": src, "load_work": w_load, "reaction_work": w_react,
        "boundary_outflux": outflux, "lhs_total": lhs_slack,
        "rhs_total": rhs_total,
    }
    n_open = int((new.mech.status == 0).sum())
    n_stick = int((new.mech.status == 1).sum())
    n_slip = int((new.mech.status == 2).sum())
    return StepReport(
        t=new.t, dt=dt, outer_iterations=outer, flow_newton=flow_newton,
        contact_newton=contact_newton, contact_open=n_open,
        contact_stick=n_stick, contact_slip=n_slip, energy_terms=terms,
        slack=slack, budget_residual=budget_residual,
        mass_increment=dM, mass_injected=mass_src - mass_out,
        darcy_dissipation=dt * darcy_form, fourier_dissipation=dt * fourier_form,
        friction_dissipation=d_fric, persistence=persist,
        budget_scale=budget_scale, mass_scale=mass_scale)


def monitor_energy_estimate(report: StepReport) -> tuple[float, dict]:
    """Slack of the per-step energy estimate and its term breakdown."""
    return report.slack, report.energy_terms


def check_equivalence(system: FlowSystem, p, T, assembled_scale: bool = False) -> float:
    """Max relative residual of the row identity linking the S rows, the
    mass rows and the H rows through the correction terms.

    At arbitrary states the residuals themselves set the scale; at converged
    states they vanish, so ``assembled_scale`` switches the normalisation to
    the summed magnitudes of the assembled terms.
    """
    up = system.upwind(p)
    N = system.N
    Rm, Sm = None, None
    out = {}
    for scheme in ("H", "S"):
        R, S = system.residual(p, T, up, scheme=scheme, raw_rows=True,
                               with_scale=True)
        out[scheme] = (R, S)
    Rm, Sm = out["H"][0][:N], out["H"][1][:N]
    Rh, Sh = out["H"][0][N:], out["H"][1][N:]
    Rs, Ss = out["S"][0][N:], out["S"][1][N:]
    corr = system.corrections(p, T, up)
    h = system.fluid.evaluate(p, T).h
    mesh = system.mesh
    rows = np.concatenate([np.arange(mesh.n_cells),
                           mesh.face_entity(mesh.fracture_faces),
                           system.edge_ent]).astype(np.int64)
    if not rows.size:
        return 0.0
    lhs = T[rows] * Rs[rows] + h[rows] * Rm[rows]
    rhs = Rh[rows] + corr[rows]
    if assembled_scale:
        scale = (np.abs(T[rows]) * Ss[rows] + np.abs(h[rows]) * Sm[rows]
                 + Sh[rows] + np.abs(corr[rows]))
    else:
        scale = (np.abs(T[rows] * Rs[rows]) + np.abs(h[rows] * Rm[rows])
                 + np.abs(Rh[rows]) + np.abs(corr[rows]))
    floor = 1e-14 * scale.max() + 1e-300
    return float((np.abs(lhs - rhs) / (scale + floor)).max())


@dataclass
class SimulationResult:
    times: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    failed: bool = False
    failure_message: str = ""
    final_state: SimState | None = None


def run_simulation(problem: CoupledProblem, grid: TimeGrid, initial: SimState,
                   max_retries: int = 6, snapshot_hook=None,
                   check_equivalence_rows: bool = False) -> SimulationResult:
    """Execute the schedule; on solver failure halve the step and retry."""
    mesh = problem.mesh
    result = SimulationResult()
    series = {k: [] for k in ("t", "mean_p", "mean_p_f", "mean_T", "mean_T_f",
                              "mean_aperture_change", "mean_slip", "mean_porosity_change",
                              "n_open", "n_stick", "n_slip")}
    state = initial
    area = mesh.cell_area
    wsum = area.sum()
    flen = mesh.face_length[mesh.fracture_faces]
    fsum = flen.sum() if len(flen) else 1.0
    fe = mesh.face_entity(mesh.fracture_faces)

    def record(state: SimState, report: StepReport | None):
        nc = mesh.n_cells
        series["t"].append(state.t)
        series["mean_p"].append(float((area * state.flow.pressure[:nc]).sum() / wsum))
        series["mean_T"].append(float((area * state.flow.temperature[:nc]).sum() / wsum))
        if fe.size:
            series["mean_p_f"].append(float((flen * state.flow.pressure[fe]).sum() / fsum))
            series["mean_T_f"].append(float((flen * state.flow.temperature[fe]).sum() / fsum))
            series["mean_aperture_change"].append(
                float((flen * (state.flow.aperture - problem.rock.contact_aperture)).sum() / fsum))
            series["mean_slip"].append(
                float((flen * np.abs(state.mech.face_average_jump_tangent())).sum() / fsum))
        else:
            for k in ("mean_p_f", "mean_T_f", "mean_aperture_change", "mean_slip"):
                series[k].append(0.0)
        series["mean_porosity_change"].append(
            float((area * (state.flow.porosity - problem.rock.initial_porosity)).sum() / wsum))
        series["n_open"].append(int((state.mech.status == 0).sum()))
        series["n_stick"].append(int((state.mech.status == 1).sum()))
        series["n_slip"].append(int((state.mech.status == 2).sum()))
        if snapshot_hook is not None:
            snapshot_hook(state, report)

    record(state, None)
    dt = grid.first_dt()
    t_final = grid.t_final
    prev_committed = None  # (state, dt) of the step before, for the predictor
    while state.t < t_final * (1.0 - 1e-14):
        retries = 0
        while True:
            guess = None
            if prev_committed is not None:
                older, dt_prev = prev_committed
                w = dt / dt_prev
                guess = np.concatenate([
                    state.flow.pressure + w * (state.flow.pressure - older.flow.pressure),
                    state.flow.temperature + w * (state.flow.temperature
                                                  - older.flow.temperature)])
            try:
                new_state, report = advance_step(
                    problem, state, dt,
                    check_equivalence_rows=check_equivalence_rows, guess=guess)
                break
            except NonConvergence as exc:
                retries += 1
                if retries > max_retries:
                    result.failed = True
                    result.failure_message = f"step at t={state.t:.6g}: {exc}"
                    result.series = series
                    result.final_state = state
                    return result
                dt *= 0.5
        report.retries = retries
        prev_committed = (state, dt)
        state = new_state
        result.times.append(state.t)
        result.reports.append(report)
        record(state, report)
        dt = grid.next_dt(state.t, dt)
        if dt <= 0:
            break
    result.series = series
    result.final_state = state
    return result
