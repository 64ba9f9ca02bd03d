"""Nonlinear flow solves on the mixed-dimensional HFV space.

For a frozen displacement (hence frozen aperture and cell-mean divergence
increments) this module assembles and solves the coupled pressure and
temperature system: mass conservation rows paired with either conservative
total-energy rows ("H") or non-conservative approximate-entropy rows ("S").
Transport coefficients are evaluated at the previous time level, convected
quantities either centred (face/edge value) or upwinded by the sign of the
volume flux, and the non-conservative convection is discretised so that
T * entropy-row + h * mass-row reproduces the energy row up to explicit
correction terms; the coupler verifies that identity row by row.

Unknown layout: one pressure and one temperature per entity (cells, then
faces, then fracture edges), stacked [p, T].  Row layout matches: mass rows
first, energy rows second.  Face rows carry flux conservation (which embeds
zero-flux boundaries) or a Dirichlet replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import hfv, linalg
from .errors import DomainError, NonConvergence, SingularTemperatureError

_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass
class FlowConfig:
    scheme: str = "H"                  # "H" or "S"
    convection: str = "upwind"         # "upwind" or "centred"
    vgradp_correction: bool = False    # S-scheme only
    newton_tol: float = 1e-10
    newton_max_iter: int = 40
    boundary: dict = field(default_factory=dict)  # tag -> {"p": spec, "T": spec}
    source_mass: object = None         # G(x, y, t) volumetric mass source
    source_energy: object = None       # H(x, y, t)
    source_mass_fracture: object = None
    source_energy_fracture: object = None

    def __post_init__(self):
        if self.scheme not in ("H", "S"):
            raise ValueError("scheme must be 'H' or 'S'")
        if self.convection not in ("upwind", "centred"):
            raise ValueError("convection must be 'upwind' or 'centred'")
        if self.vgradp_correction and self.scheme != "S":
            raise ValueError("the pressure-convection correction applies to the S scheme")


@dataclass
class FlowState:
    pressure: np.ndarray
    temperature: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.pressure, self.temperature])


@dataclass
class LevelState:
    """Committed quantities of one time level used by the next step."""

    pressure: np.ndarray        # (N,)
    temperature: np.ndarray     # (N,)
    porosity: np.ndarray        # (nc,)
    entropy: np.ndarray         # (nc,)
    aperture: np.ndarray        # (nfrac,)
    div_mean: np.ndarray        # (nc,) cell-mean displacement divergence


@dataclass
class NewtonReport:
    iterations: int
    residual: float
    converged: bool


class MeshFlowOps:
    """Connectivity and incidence operators reused across time steps."""

    def __init__(self, mesh):
        self.mesh = mesh
        nc, nfa, ne = mesh.n_cells, mesh.n_faces, mesh.n_fracture_edges
        N = mesh.n_entities
        self.N = N

        # cell-face slots
        self.slot_cell = np.repeat(np.arange(nc), 3)
        self.slot_face = mesh.cell_faces.ravel().astype(np.int64)
        self.n_cf = 3 * nc
        frac_mask_face = mesh.is_fracture_face()
        self.slot_is_fracture = frac_mask_face[self.slot_face]
        boundary_face = mesh.face_cells[:, 1] < 0
        self.slot_is_boundary = boundary_face[self.slot_face]
        self.slot_other_cell = (mesh.face_cells[self.slot_face].sum(axis=1)
                                - self.slot_cell)
        # interior non-fracture faces: owner slot = slot of the lower cell id
        self.face_slots = np.full((nfa, 2), -1, dtype=np.int64)
        for s in range(self.n_cf):
            f = self.slot_face[s]
            if self.face_slots[f, 0] < 0:
                self.face_slots[f, 0] = s
            else:
                self.face_slots[f, 1] = s
        owner = np.empty(nfa, dtype=np.int64)
        for f in range(nfa):
            s0, s1 = self.face_slots[f]
            if s1 < 0:
                owner[f] = s0
            else:
                owner[f] = s0 if self.slot_cell[s0] < self.slot_cell[s1] else s1
        self.face_owner_slot = owner

        # fracture-face/edge slots
        nfrac = mesh.n_fracture_faces
        self.n_fz = 2 * nfrac
        self.fz_fracpos = np.repeat(np.arange(nfrac), 2)
        edge_index_of_vertex = {int(v): e for e, v in enumerate(mesh.fracture_edge_verts)}
        fz_edge = np.empty(self.n_fz, dtype=np.int64)
        for pos in range(nfrac):
            f = int(mesh.fracture_faces[pos])
            va, vb = (int(v) for v in mesh.face_verts[f])
            fz_edge[2 * pos] = edge_index_of_vertex[va]
            fz_edge[2 * pos + 1] = edge_index_of_vertex[vb]
        self.fz_edge = fz_edge
        self.fz_face = mesh.fracture_faces[self.fz_fracpos] if nfrac else fz_edge.copy()

        # per-edge slot lists and the two-face ownership rule
        edge_slots: list[list[int]] = [[] for _ in range(ne)]
        for s in range(self.n_fz):
            edge_slots[fz_edge[s]].append(s)
        self.edge_slots = edge_slots
        boundary_vertex = np.zeros(mesh.vertices.shape[0], dtype=bool)
        for f in range(nfa):
            if boundary_face[f]:
                boundary_vertex[mesh.face_verts[f]] = True
        self.edge_on_boundary = boundary_vertex[mesh.fracture_edge_verts] \
            if ne else np.zeros(0, dtype=bool)
        self.edge_pairwise = np.array(
            [len(sl) == 2 and not self.edge_on_boundary[e]
             for e, sl in enumerate(edge_slots)], dtype=bool) \
            if ne else np.zeros(0, dtype=bool)

        # entity ids
        self.ent_face = nc + np.arange(nfa)
        self.ent_edge = nc + nfa + np.arange(ne)
        self.slot_face_entity = nc + self.slot_face
        self.fz_face_entity = nc + self.fz_face
        self.fz_edge_entity = nc + nfa + fz_edge

        def incidence(rows, ncols, mask=None, sign=1.0):
            cols = np.arange(ncols)
            if mask is not None:
                rows, cols = rows[mask], cols[mask]
            vals = np.full(rows.shape, sign)
            return sp.coo_matrix((vals, (rows, cols)), shape=(N, ncols)).tocsr()

        self.SC = incidence(self.slot_cell, self.n_cf)
        self.SFall = incidence(self.slot_face_entity, self.n_cf)
        self.SMF = incidence(self.slot_face_entity, self.n_cf, self.slot_is_fracture)
        self.SCONS = incidence(self.slot_face_entity, self.n_cf, ~self.slot_is_fracture)
        if nfrac:
            self.SF = incidence(self.fz_face_entity, self.n_fz)
            self.SE = incidence(self.fz_edge_entity, self.n_fz)
        else:
            self.SF = sp.csr_matrix((N, 0))
            self.SE = sp.csr_matrix((N, 0))

        # fracture positions of slots for coefficient lookup
        frac_pos_of_face = np.full(nfa, -1, dtype=np.int64)
        frac_pos_of_face[mesh.fracture_faces] = np.arange(nfrac)
        self.slot_frac_pos = frac_pos_of_face[self.slot_face]

    def flux_matrix_cells(self, A_cells) -> sp.csr_matrix:
        """Sparse map p -> V over cell-face slots for per-cell 3x3 matrices."""
        rows, cols, vals = [], [], []
        rowsum = A_cells.sum(axis=2)                      # (nc, 3)
        slot_ids = np.arange(self.n_cf).reshape(-1, 3)
        rows.append(slot_ids.ravel())
        cols.append(np.repeat(np.arange(self.mesh.n_cells), 3))
        vals.append(rowsum.ravel())
        for j in range(3):
            rows.append(slot_ids.ravel())
            cols.append(np.repeat(self.mesh.n_cells + self.mesh.cell_faces[:, j], 3))
            vals.append(-A_cells[:, :, j].ravel())
        return sp.coo_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_cf, self.N)).tocsr()

    def flux_matrix_fracture(self, coef) -> sp.csr_matrix:
        """Sparse map p -> V over fracture-face/edge slots, two-point."""
        if self.n_fz == 0:
            return sp.csr_matrix((0, self.N))
        c = np.repeat(np.asarray(coef, dtype=float), 2)
        rows = np.arange(self.n_fz)
        data = np.concatenate([c, -c])
        r = np.concatenate([rows, rows])
        cc = np.concatenate([self.fz_face_entity, self.fz_edge_entity])
        return sp.coo_matrix((data, (r, cc)), shape=(self.n_fz, self.N)).tocsr()


def select_upwind(ops: MeshFlowOps, V_cf, V_fz, centred: bool):
    """Upwind entity per flux slot; ties (zero flux) keep the cell/face side.

    The choice at an interior non-fracture face is made once per face (from
    its lower-indexed cell) so both sides select the same entity; at
    boundary and fracture faces each cell picks between itself and the face
    unknown; along the fractures an interior edge shared by exactly two
    faces picks between them, and tips, boundary edges and intersections
    pick between the face and the edge unknown.
    """
    mesh = ops.mesh
    if centred:
        return ops.slot_face_entity.copy(), ops.fz_edge_entity.copy()
    up_cf = np.empty(ops.n_cf, dtype=np.int64)
    two_sided = ~(ops.slot_is_fracture | ops.slot_is_boundary)
    own = ops.face_owner_slot[ops.slot_face]
    own_cell = ops.slot_cell[own]
    other = ops.slot_other_cell[own]
    up_two = np.where(V_cf[own] >= 0.0, own_cell, other)
    up_cf[two_sided] = up_two[two_sided]
    one_sided = ~two_sided
    up_cf[one_sided] = np.where(V_cf[one_sided] >= 0.0,
                                ops.slot_cell[one_sided],
                                ops.slot_face_entity[one_sided])
    up_fz = np.empty(ops.n_fz, dtype=np.int64)
    for s in range(ops.n_fz):
        e = ops.fz_edge[s]
        if ops.edge_pairwise[e]:
            s0, s1 = ops.edge_slots[e]
            owner = s0 if ops.fz_fracpos[s0] <= ops.fz_fracpos[s1] else s1
            otherslot = s1 if owner == s0 else s0
            up_fz[s] = (ops.fz_face_entity[owner] if V_fz[owner] >= 0.0
                        else ops.fz_face_entity[otherslot])
        else:
            up_fz[s] = (ops.fz_face_entity[s] if V_fz[s] >= 0.0
                        else ops.fz_edge_entity[s])
    return up_cf, up_fz


def average_sources(fn, mesh, t0, t1, on_fractures=False) -> np.ndarray:
    """Space-time averages of fn(x, y, t) over (t0, t1) x cell (or fracture
    face): 3-midpoint rule in space (degree 2), 2-point Gauss in time."""
    if fn is None:
        n = mesh.n_fracture_faces if on_fractures else mesh.n_cells
        return np.zeros(n)
    dt = t1 - t0
    times = [t0 + g * dt for g in _GAUSS2]
    if on_fractures:
        fv = mesh.vertices[mesh.face_verts[mesh.fracture_faces]]
        mid = mesh.face_midpoint[mesh.fracture_faces]
        half = 0.5 * (fv[:, 1] - fv[:, 0])
        pts = [mid - half / np.sqrt(3.0), mid + half / np.sqrt(3.0)]
        out = np.zeros(mesh.n_fracture_faces)
        for t in times:
            for q in pts:
                out += np.asarray(fn(q[:, 0], q[:, 1], t), dtype=float)
        return out / (2 * len(times))
    verts = mesh.vertices[mesh.cells]
    mids = [(verts[:, 1] + verts[:, 2]) / 2, (verts[:, 2] + verts[:, 0]) / 2,
            (verts[:, 0] + verts[:, 1]) / 2]
    out = np.zeros(mesh.n_cells)
    for t in times:
        for q in mids:
            out += np.asarray(fn(q[:, 0], q[:, 1], t), dtype=float)
    return out / (3 * len(times))


def _bc_value(spec, x, y, t):
    if callable(spec):
        return spec(x, y, t)
    return spec


@dataclass
class DirichletData:
    p_mask: np.ndarray
    p_value: np.ndarray
    T_mask: np.ndarray
    T_value: np.ndarray


def dirichlet_data(mesh, boundary: dict, t: float) -> DirichletData:
    """Entity-wise Dirichlet masks/values from the tag table at time t.

    Fracture edges whose vertex lies on a tagged Dirichlet segment inherit
    that condition.
    """
    N = mesh.n_entities
    p_mask = np.zeros(N, dtype=bool)
    T_mask = np.zeros(N, dtype=bool)
    p_val = np.zeros(N)
    T_val = np.zeros(N)
    def apply(bc, ent, x, y):
        # A callable may return None to switch the condition off in time.
        if bc.get("p") is not None:
            v = _bc_value(bc["p"], x, y, t)
            if v is not None:
                p_mask[ent] = True
                p_val[ent] = v
        if bc.get("T") is not None:
            v = _bc_value(bc["T"], x, y, t)
            if v is not None:
                T_mask[ent] = True
                T_val[ent] = v

    for f in range(mesh.n_faces):
        tag = mesh.boundary_tag[f]
        if tag is None or tag not in boundary:
            continue
        x, y = mesh.face_midpoint[f]
        apply(boundary[tag], mesh.n_cells + f, x, y)
    for e in range(mesh.n_fracture_edges):
        for tag in mesh.fracture_edge_tags[e]:
            bc = boundary.get(tag)
            if not bc:
                continue
            x, y = mesh.vertices[mesh.fracture_edge_verts[e]]
            apply(bc, mesh.n_cells + mesh.n_faces + e, x, y)
    return DirichletData(p_mask, p_val, T_mask, T_val)


class FlowSystem:
    """Assembler for one time step: residuals, Jacobian and monitors.

    Transport coefficients (permeability over viscosity, conductivities,
    fracture conductivities) are frozen at the previous level; the aperture
    and the cell-mean divergence of the displacement at the new level are
    frozen by the caller during each flow solve.
    """

    def __init__(self, mesh, ops: MeshFlowOps, rock, fluid_model,
                 config: FlowConfig, dt: float, t_new: float,
                 prev: LevelState, aperture_new, div_mean_new,
                 base_perm_matrices=None, base_unit_matrices=None):
        self.mesh = mesh
        self.ops = ops
        self.rock = rock
        self.fluid = fluid_model
        self.config = config
        self.dt = float(dt)
        self.t_new = float(t_new)
        self.prev = prev
        self.aperture_new = np.asarray(aperture_new, dtype=float)
        self.ddiv = np.asarray(div_mean_new, dtype=float) - prev.div_mean

        nc = mesh.n_cells
        N = mesh.n_entities
        self.N = N
        eos0 = fluid_model.evaluate(prev.pressure, prev.temperature)
        self.rho0 = eos0.rho
        self.e0 = eos0.e
        eta0 = eos0.eta

        if base_perm_matrices is None:
            base_perm_matrices = hfv.cell_flux_matrices(mesh, rock.permeability_tensor())
        if base_unit_matrices is None:
            base_unit_matrices = hfv.cell_flux_matrices(mesh, np.eye(2))
        self.A_darcy = base_perm_matrices / eta0[:nc, None, None]
        self.A_fourier = base_unit_matrices * rock.matrix_conductivity()
        self.MV = ops.flux_matrix_cells(self.A_darcy)
        self.MQ = ops.flux_matrix_cells(self.A_fourier)
        if mesh.n_fracture_faces:
            eta0_f = eta0[mesh.face_entity(mesh.fracture_faces)]
            cond_hyd = rock.poiseuille_conductivity(prev.aperture) / eta0_f
            self.coef_darcy_f = hfv.fracture_flux_coefficients(mesh, cond_hyd)
            self.coef_fourier_f = hfv.fracture_flux_coefficients(
                mesh, rock.fracture_conductivity_of(prev.aperture))
            self.MVf = ops.flux_matrix_fracture(self.coef_darcy_f)
            self.MQf = ops.flux_matrix_fracture(self.coef_fourier_f)
        else:
            self.coef_darcy_f = np.zeros(0)
            self.coef_fourier_f = np.zeros(0)
            self.MVf = sp.csr_matrix((0, N))
            self.MQf = sp.csr_matrix((0, N))

        t_old = t_new - dt
        self.Ghat_m = average_sources(config.source_mass, mesh, t_old, t_new)
        self.Hhat_m = average_sources(config.source_energy, mesh, t_old, t_new)
        self.Ghat_f = average_sources(config.source_mass_fracture, mesh, t_old,
                                      t_new, on_fractures=True)
        self.Hhat_f = average_sources(config.source_energy_fracture, mesh, t_old,
                                      t_new, on_fractures=True)
        self.dirichlet = dirichlet_data(mesh, config.boundary, t_new)

        self.cell_ent = np.arange(nc)
        self.frac_ent = mesh.face_entity(mesh.fracture_faces)
        self.edge_ent = mesh.fracture_edge_entity(np.arange(mesh.n_fracture_edges))
        self.frac_len = mesh.face_length[mesh.fracture_faces]

    # ------------------------------------------------------------------
    def porosity_new(self, p, T):
        nc = self.mesh.n_cells
        r = self.rock
        return (self.prev.porosity + r.biot_coefficient * self.ddiv
                + (p[:nc] - self.prev.pressure[:nc]) / r.biot_modulus
                - r.thermal_dilation_porosity * (T[:nc] - self.prev.temperature[:nc]))

    def entropy_new(self, p, T):
        nc = self.mesh.n_cells
        r = self.rock
        return (self.prev.entropy
                + r.thermal_dilation_skeleton * r.bulk_modulus * self.ddiv
                - r.thermal_dilation_porosity * (p[:nc] - self.prev.pressure[:nc])
                + r.heat_capacity_skeleton / r.reference_temperature
                * (T[:nc] - self.prev.temperature[:nc]))

    def _cell_fluxes(self, A, v):
        # Difference form: exactly zero for constant fields.
        nc = self.mesh.n_cells
        dv = v[:nc, None] - v[self.mesh.n_cells + self.mesh.cell_faces]
        return np.einsum("cjk,ck->cj", A, dv).ravel()

    def _fracture_fluxes(self, coef, v):
        if self.ops.n_fz == 0:
            return np.zeros(0)
        c = np.repeat(coef, 2)
        return c * (v[self.ops.fz_face_entity] - v[self.ops.fz_edge_entity])

    def fluxes(self, p, T):
        return (self._cell_fluxes(self.A_darcy, p),
                self._fracture_fluxes(self.coef_darcy_f, p),
                self._cell_fluxes(self.A_fourier, T),
                self._fracture_fluxes(self.coef_fourier_f, T))

    def upwind(self, p):
        V_cf = self._cell_fluxes(self.A_darcy, p)
        V_fz = self._fracture_fluxes(self.coef_darcy_f, p)
        return select_upwind(self.ops, V_cf, V_fz,
                             self.config.convection == "centred")

    # ------------------------------------------------------------------
    def residual(self, p, T, up, scheme=None, with_scale=False,
                 raw_rows=False):
        """Stacked residual [mass; energy].  raw_rows skips the Dirichlet
        replacements (used by the scheme-equivalence checks)."""
        mesh, ops = self.mesh, self.ops
        nc = mesh.n_cells
        N = self.N
        scheme = scheme or self.config.scheme
        up_cf, up_fz = up
        eos = self.fluid.evaluate(p, T)
        rho, e, h = eos.rho, eos.e, eos.h
        V_cf, V_fz, Q_cf, Q_fz = self.fluxes(p, T)
        phi = self.porosity_new(p, T)
        Ss = self.entropy_new(p, T)
        area = mesh.cell_area
        dt = self.dt

        Rm = np.zeros(N)
        Sm = np.zeros(N)

        def put(R, S, M, vec):
            R += M @ vec
            if with_scale:
                S += abs(M) @ np.abs(vec)

        conv_m_cf = rho[up_cf] * V_cf
        conv_m_fz = rho[up_fz] * V_fz
        put(Rm, Sm, ops.SC, conv_m_cf)
        put(Rm, Sm, ops.SF, conv_m_fz)
        put(Rm, Sm, -ops.SMF, conv_m_cf)
        put(Rm, Sm, -ops.SE, conv_m_fz)
        put(Rm, Sm, ops.SCONS, V_cf)
        acc_m_c = (area / dt) * (rho[:nc] * phi - self.rho0[:nc] * self.prev.porosity)
        Rm[:nc] += acc_m_c - area * self.Ghat_m
        if with_scale:
            Sm[:nc] += (area / dt) * (np.abs(rho[:nc] * phi)
                                      + np.abs(self.rho0[:nc] * self.prev.porosity)) \
                + area * np.abs(self.Ghat_m)
        if self.frac_ent.size:
            rho_f = rho[self.frac_ent]
            rho0_f = self.rho0[self.frac_ent]
            acc_m_f = (self.frac_len / dt) * (rho_f * self.aperture_new
                                              - rho0_f * self.prev.aperture)
            Rm[self.frac_ent] += acc_m_f - self.frac_len * self.Ghat_f
            if with_scale:
                Sm[self.frac_ent] += (self.frac_len / dt) * (
                    np.abs(rho_f * self.aperture_new)
                    + np.abs(rho0_f * self.prev.aperture)) \
                    + self.frac_len * np.abs(self.Ghat_f)

        Re = np.zeros(N)
        Se = np.zeros(N)
        if scheme == "H":
            g = rho * h
            conv_e_cf = g[up_cf] * V_cf + Q_cf
            conv_e_fz = g[up_fz] * V_fz + Q_fz
            put(Re, Se, ops.SC, conv_e_cf)
            put(Re, Se, ops.SF, conv_e_fz)
            put(Re, Se, -ops.SMF, conv_e_cf)
            put(Re, Se, -ops.SE, conv_e_fz)
            put(Re, Se, ops.SCONS, Q_cf)
            acc_e_c = (area / dt) * (
                T[:nc] * (Ss - self.prev.entropy)
                + p[:nc] * (phi - self.prev.porosity)
                + rho[:nc] * phi * e[:nc]
                - self.rho0[:nc] * self.prev.porosity * self.e0[:nc])
            Re[:nc] += acc_e_c - area * self.Hhat_m
            if with_scale:
                Se[:nc] += (area / dt) * (
                    np.abs(T[:nc] * (Ss - self.prev.entropy))
                    + np.abs(p[:nc] * (phi - self.prev.porosity))
                    + np.abs(rho[:nc] * phi * e[:nc])
                    + np.abs(self.rho0[:nc] * self.prev.porosity * self.e0[:nc])) \
                    + area * np.abs(self.Hhat_m)
            if self.frac_ent.size:
                fe = self.frac_ent
                acc_e_f = (self.frac_len / dt) * (
                    p[fe] * (self.aperture_new - self.prev.aperture)
                    + rho[fe] * self.aperture_new * e[fe]
                    - self.rho0[fe] * self.prev.aperture * self.e0[fe])
                Re[fe] += acc_e_f - self.frac_len * self.Hhat_f
                if with_scale:
                    Se[fe] += (self.frac_len / dt) * (
                        np.abs(p[fe] * (self.aperture_new - self.prev.aperture))
                        + np.abs(rho[fe] * self.aperture_new * e[fe])
                        + np.abs(self.rho0[fe] * self.prev.aperture * self.e0[fe])) \
                        + self.frac_len * np.abs(self.Hhat_f)
        else:
            rows_T = np.concatenate([T[:nc], T[self.frac_ent], T[self.edge_ent]])
            if np.any(rows_T <= 0.0):
                raise SingularTemperatureError("non-positive temperature in entropy rows")
            Tref = self.rock.reference_temperature
            invT = np.zeros(N)
            used = np.concatenate([self.cell_ent, self.frac_ent, self.edge_ent])
            invT[used] = 1.0 / np.concatenate([T[:nc], T[self.frac_ent], T[self.edge_ent]])

            w_cell = (e[up_cf] - e[ops.slot_cell]
                      + p[ops.slot_cell] * (1.0 / rho[up_cf] - 1.0 / rho[ops.slot_cell]))
            w_face_cf = (e[up_cf] - e[ops.slot_face_entity]
                         + p[ops.slot_face_entity]
                         * (1.0 / rho[up_cf] - 1.0 / rho[ops.slot_face_entity]))
            w_face_fz = (e[up_fz] - e[ops.fz_face_entity]
                         + p[ops.fz_face_entity]
                         * (1.0 / rho[up_fz] - 1.0 / rho[ops.fz_face_entity]))
            w_edge = (e[up_fz] - e[ops.fz_edge_entity]
                      + p[ops.fz_edge_entity]
                      * (1.0 / rho[up_fz] - 1.0 / rho[ops.fz_edge_entity]))
            inner = np.zeros(N)
            Si = np.zeros(N)
            put(inner, Si, ops.SC, conv_m_cf * w_cell)
            put(inner, Si, ops.SF, conv_m_fz * w_face_fz)
            put(inner, Si, -ops.SMF, conv_m_cf * w_face_cf)
            put(inner, Si, -ops.SE, conv_m_fz * w_edge)
            if self.config.vgradp_correction:
                vg_cell = V_cf * (p[up_cf] - p[ops.slot_cell])
                vg_face_cf = V_cf * (p[up_cf] - p[ops.slot_face_entity])
                vg_face_fz = V_fz * (p[up_fz] - p[ops.fz_face_entity])
                vg_edge = V_fz * (p[up_fz] - p[ops.fz_edge_entity])
                put(inner, Si, ops.SC, vg_cell)
                put(inner, Si, ops.SF, vg_face_fz)
                put(inner, Si, -ops.SMF, vg_face_cf)
                put(inner, Si, -ops.SE, vg_edge)
            # accumulation and source parts under the same 1/T prefactor
            acc2 = np.zeros(N)
            acc2[:nc] = (area / dt) * self.rho0[:nc] * self.prev.porosity * (
                (e[:nc] - self.e0[:nc])
                + p[:nc] * (1.0 / rho[:nc] - 1.0 / self.rho0[:nc]))
            src = np.zeros(N)
            src[:nc] = -area * (self.Hhat_m - h[:nc] * self.Ghat_m)
            if self.frac_ent.size:
                fe = self.frac_ent
                acc2[fe] = (self.frac_len / dt) * self.rho0[fe] * self.prev.aperture * (
                    (e[fe] - self.e0[fe]) + p[fe] * (1.0 / rho[fe] - 1.0 / self.rho0[fe]))
                src[fe] = -self.frac_len * (self.Hhat_f - h[fe] * self.Ghat_f)
            four = np.zeros(N)
            Sf4 = np.zeros(N)
            put(four, Sf4, ops.SC, Q_cf)
            put(four, Sf4, ops.SF, Q_fz)
            put(four, Sf4, -ops.SMF, Q_cf)
            put(four, Sf4, -ops.SE, Q_fz)
            Re = invT * (inner + acc2 + src) + four / Tref
            Re[:nc] += (area / dt) * (Ss - self.prev.entropy)
            cons = ops.SCONS @ Q_cf
            Re += cons
            if with_scale:
                Se = invT * (Si + np.abs(acc2) + np.abs(src)) + Sf4 / Tref \
                    + abs(ops.SCONS) @ np.abs(Q_cf)
                Se[:nc] += (area / dt) * (np.abs(Ss) + np.abs(self.prev.entropy))

        if not raw_rows:
            d = self.dirichlet
            Rm[d.p_mask] = p[d.p_mask] - d.p_value[d.p_mask]
            Re[d.T_mask] = T[d.T_mask] - d.T_value[d.T_mask]
            if with_scale:
                Sm[d.p_mask] = np.maximum(np.abs(p[d.p_mask])
                                          + np.abs(d.p_value[d.p_mask]), 1.0)
                Se[d.T_mask] = np.maximum(np.abs(T[d.T_mask])
                                          + np.abs(d.T_value[d.T_mask]), 1.0)

        R = np.concatenate([Rm, Re])
        if with_scale:
            return R, np.concatenate([Sm, Se])
        return R

    # ------------------------------------------------------------------
    def corrections(self, p, T, up):
        """Row corrections linking T*S-row + h*mass-row to the H-row.

        Returns the per-entity correction for cells, fracture faces and
        fracture edges (zero on other rows).  With the pressure-convection
        correction enabled only the Fourier parts remain.
        """
        ops = self.ops
        nc = self.mesh.n_cells
        N = self.N
        up_cf, up_fz = up
        V_cf, V_fz, Q_cf, Q_fz = self.fluxes(p, T)
        Tref = self.rock.reference_temperature
        corr = np.zeros(N)
        fourier_cells = ops.SC @ Q_cf
        corr[:nc] += (T[:nc] / Tref - 1.0) * fourier_cells[:nc]
        if self.frac_ent.size:
            fe = self.frac_ent
            ff = (ops.SF @ Q_fz - ops.SMF @ Q_cf)
            corr[fe] += (T[fe] / Tref - 1.0) * ff[fe]
            ee = self.edge_ent
            eqf = ops.SE @ Q_fz
            corr[ee] += -(T[ee] / Tref - 1.0) * eqf[ee]
        if not self.config.vgradp_correction:
            vg_cell = ops.SC @ (V_cf * (p[up_cf] - p[ops.slot_cell]))
            corr[:nc] -= vg_cell[:nc]
            if self.frac_ent.size:
                fe = self.frac_ent
                vg_f = (ops.SF @ (V_fz * (p[up_fz] - p[ops.fz_face_entity]))
                        - ops.SMF @ (V_cf * (p[up_cf] - p[ops.slot_face_entity])))
                corr[fe] -= vg_f[fe]
                ee = self.edge_ent
                vg_e = ops.SE @ (V_fz * (p[up_fz] - p[ops.fz_edge_entity]))
                corr[ee] += vg_e[ee]
        return corr

    def dissipation_forms(self, p, T):
        """Nonnegative quadratic dissipation forms (per unit time):
        (hydraulic, thermal / T_ref)."""
        ops = self.ops
        V_cf, V_fz, Q_cf, Q_fz = self.fluxes(p, T)
        darcy = float(V_cf @ (p[ops.slot_cell] - p[ops.slot_face_entity]))
        fourier = float(Q_cf @ (T[ops.slot_cell] - T[ops.slot_face_entity]))
        if ops.n_fz:
            darcy += float(V_fz @ (p[ops.fz_face_entity] - p[ops.fz_edge_entity]))
            fourier += float(Q_fz @ (T[ops.fz_face_entity] - T[ops.fz_edge_entity]))
        return darcy, fourier / self.rock.reference_temperature

    def boundary_energy_outflux(self, p, T, up):
        """Convective + conductive energy leaving through boundary faces and
        Dirichlet fracture edges (per unit time)."""
        ops = self.ops
        up_cf, up_fz = up
        eos = self.fluid.evaluate(p, T)
        g = eos.rho * eos.h
        V_cf, V_fz, Q_cf, Q_fz = self.fluxes(p, T)
        mask = ops.slot_is_boundary
        out = float(np.sum(g[up_cf[mask]] * V_cf[mask] + Q_cf[mask]))
        if ops.n_fz:
            # Edges with any Dirichlet condition are treated as open ends of
            # the fracture network in the energy budget.
            ent = ops.fz_edge_entity
            any_dir = self.dirichlet.T_mask[ent] | self.dirichlet.p_mask[ent]
            out += float(np.sum(g[up_fz[any_dir]] * V_fz[any_dir] + Q_fz[any_dir]))
        return out

    def boundary_mass_outflux(self, p, T, up):
        ops = self.ops
        up_cf, up_fz = up
        rho = self.fluid.evaluate(p, T).rho
        V_cf, V_fz, _, _ = self.fluxes(p, T)
        mask = ops.slot_is_boundary
        out = float(np.sum(rho[up_cf[mask]] * V_cf[mask]))
        if ops.n_fz:
            ent = ops.fz_edge_entity
            p_dir = self.dirichlet.p_mask[ent]
            out += float(np.sum(rho[up_fz[p_dir]] * V_fz[p_dir]))
        return out

    # ------------------------------------------------------------------
    def _selection(self, idx, n_rows):
        return sp.coo_matrix((np.ones(n_rows), (np.arange(n_rows), idx)),
                             shape=(n_rows, self.N)).tocsr()

    def jacobian(self, p, T, up, scheme=None) -> sp.csr_matrix:
        """Analytic Jacobian of the stacked residual w.r.t. [p, T].

        Upwind selectors are frozen (semismooth treatment); they are
        refreshed between Newton iterations by the caller.
        """
        mesh, ops = self.mesh, self.ops
        nc = mesh.n_cells
        N = self.N
        scheme = scheme or self.config.scheme
        up_cf, up_fz = up
        eos = self.fluid.evaluate(p, T)
        rho, e, h = eos.rho, eos.e, eos.h
        V_cf, V_fz, Q_cf, Q_fz = self.fluxes(p, T)
        phi = self.porosity_new(p, T)
        Ss = self.entropy_new(p, T)
        area = mesh.cell_area
        dt = self.dt
        r = self.rock
        D = sp.diags
        U = self._selection(up_cf, ops.n_cf)
        Uf = self._selection(up_fz, ops.n_fz) if ops.n_fz else sp.csr_matrix((0, N))
        Pc = ops.SC.T.tocsr()         # slot -> own cell entity
        Pfc = ops.SFall.T.tocsr()     # slot -> own face entity
        Pff = ops.SF.T.tocsr()        # fz slot -> face entity
        Pfe = ops.SE.T.tocsr()        # fz slot -> edge entity

        def conv_jac(flux, Mflux, Usel, quantity, dq_dp, dq_dT):
            """d(q_up * flux) for q evaluated at the upwind entity."""
            qu = quantity[ (up_cf if Usel is U else up_fz) ]
            Jp = D(flux) @ Usel @ D(dq_dp) + D(qu) @ Mflux
            JT = D(flux) @ Usel @ D(dq_dT)
            return Jp, JT

        Jm_p, Jm_T, Je_p, Je_T = [], [], [], []

        # ---- mass rows
        cm_p, cm_T = conv_jac(V_cf, self.MV, U, rho, eos.drho_dp, eos.drho_dT)
        SCm = ops.SC - ops.SMF
        Jm_p.append(SCm @ cm_p)
        Jm_T.append(SCm @ cm_T)
        if ops.n_fz:
            fm_p, fm_T = conv_jac(V_fz, self.MVf, Uf, rho, eos.drho_dp, eos.drho_dT)
            SFm = ops.SF - ops.SE
            Jm_p.append(SFm @ fm_p)
            Jm_T.append(SFm @ fm_T)
        Jm_p.append(ops.SCONS @ self.MV)
        dp_acc = np.zeros(N)
        dT_acc = np.zeros(N)
        dp_acc[:nc] = (area / dt) * (eos.drho_dp[:nc] * phi + rho[:nc] / r.biot_modulus)
        dT_acc[:nc] = (area / dt) * (eos.drho_dT[:nc] * phi
                                     - rho[:nc] * r.thermal_dilation_porosity)
        if self.frac_ent.size:
            fe = self.frac_ent
            dp_acc[fe] = (self.frac_len / dt) * eos.drho_dp[fe] * self.aperture_new
            dT_acc[fe] = (self.frac_len / dt) * eos.drho_dT[fe] * self.aperture_new
        Jm_p.append(D(dp_acc))
        Jm_T.append(D(dT_acc))

        # ---- energy rows
        if scheme == "H":
            g = rho * h
            dg_dp = eos.drho_dp * h + rho * eos.dh_dp
            dg_dT = eos.drho_dT * h + rho * eos.dh_dT
            ce_p, ce_T = conv_jac(V_cf, self.MV, U, g, dg_dp, dg_dT)
            Je_p.append(SCm @ ce_p)
            Je_T.append(SCm @ (ce_T) + SCm @ self.MQ)
            if ops.n_fz:
                fe_p, fe_T = conv_jac(V_fz, self.MVf, Uf, g, dg_dp, dg_dT)
                Je_p.append(SFm @ fe_p)
                Je_T.append(SFm @ fe_T + SFm @ self.MQf)
            Je_T.append(ops.SCONS @ self.MQ)
            ep_acc = np.zeros(N)
            eT_acc = np.zeros(N)
            ep_acc[:nc] = (area / dt) * (
                -T[:nc] * r.thermal_dilation_porosity
                + (phi - self.prev.porosity) + p[:nc] / r.biot_modulus
                + (eos.drho_dp[:nc] * phi + rho[:nc] / r.biot_modulus) * e[:nc]
                + rho[:nc] * phi * eos.de_dp[:nc])
            eT_acc[:nc] = (area / dt) * (
                (Ss - self.prev.entropy)
                + T[:nc] * r.heat_capacity_skeleton / r.reference_temperature
                - p[:nc] * r.thermal_dilation_porosity
                + (eos.drho_dT[:nc] * phi - rho[:nc] * r.thermal_dilation_porosity) * e[:nc]
                + rho[:nc] * phi * eos.de_dT[:nc])
            if self.frac_ent.size:
                fe = self.frac_ent
                ep_acc[fe] = (self.frac_len / dt) * (
                    (self.aperture_new - self.prev.aperture)
                    + (eos.drho_dp[fe] * e[fe] + rho[fe] * eos.de_dp[fe])
                    * self.aperture_new)
                eT_acc[fe] = (self.frac_len / dt) * (
                    (eos.drho_dT[fe] * e[fe] + rho[fe] * eos.de_dT[fe])
                    * self.aperture_new)
            Je_p.append(D(ep_acc))
            Je_T.append(D(eT_acc))
        else:
            Tref = r.reference_temperature
            invT = np.zeros(N)
            used = np.concatenate([self.cell_ent, self.frac_ent, self.edge_ent])
            invT[used] = 1.0 / T[used]
            # G = inner + acc2 + src assembled alongside its Jacobian.
            G = np.zeros(N)
            Gp_list, GT_list = [], []

            def add_conv_w(Sc, flux, Mflux, Usel, idx_up, ref_ent):
                w = (e[idx_up] - e[ref_ent]
                     + p[ref_ent] * (1.0 / rho[idx_up] - 1.0 / rho[ref_ent]))
                a = rho[idx_up] * flux * w
                Pref = self._selection(ref_ent, len(ref_ent))
                rv = rho[idx_up] * flux
                cp_ref = (-eos.de_dp[ref_ent]
                          + (1.0 / rho[idx_up] - 1.0 / rho[ref_ent])
                          + p[ref_ent] * eos.drho_dp[ref_ent] / rho[ref_ent] ** 2)
                cT_ref = (-eos.de_dT[ref_ent]
                          + p[ref_ent] * eos.drho_dT[ref_ent] / rho[ref_ent] ** 2)
                Jp = (D(flux * w) @ Usel @ D(eos.drho_dp)
                      + D(rv) @ Usel @ D(eos.de_dp)
                      + D(rv * p[ref_ent]) @ Usel @ D(-eos.drho_dp / rho ** 2)
                      + D(rho[idx_up] * w) @ Mflux
                      + D(rv * cp_ref) @ Pref)
                JT = (D(flux * w) @ Usel @ D(eos.drho_dT)
                      + D(rv) @ Usel @ D(eos.de_dT)
                      + D(rv * p[ref_ent]) @ Usel @ D(-eos.drho_dT / rho ** 2)
                      + D(rv * cT_ref) @ Pref)
                nonlocal G
                G = G + Sc @ a
                Gp_list.append(Sc @ Jp)
                GT_list.append(Sc @ JT)

            add_conv_w(ops.SC, V_cf, self.MV, U, up_cf, ops.slot_cell)
            add_conv_w(-ops.SMF, V_cf, self.MV, U, up_cf,
                       np.asarray(ops.slot_face_entity))
            if ops.n_fz:
                add_conv_w(ops.SF, V_fz, self.MVf, Uf, up_fz,
                           np.asarray(ops.fz_face_entity))
                add_conv_w(-ops.SE, V_fz, self.MVf, Uf, up_fz,
                           np.asarray(ops.fz_edge_entity))
            if self.config.vgradp_correction:
                def add_vgradp(Sc, flux, Mflux, Usel, idx_up, ref_ent):
                    a = flux * (p[idx_up] - p[ref_ent])
                    Pref = self._selection(ref_ent, len(ref_ent))
                    Jp = D(p[idx_up] - p[ref_ent]) @ Mflux + D(flux) @ (Usel - Pref)
                    nonlocal G
                    G = G + Sc @ a
                    Gp_list.append(Sc @ Jp)
                add_vgradp(ops.SC, V_cf, self.MV, U, up_cf, ops.slot_cell)
                add_vgradp(-ops.SMF, V_cf, self.MV, U, up_cf,
                           np.asarray(ops.slot_face_entity))
                if ops.n_fz:
                    add_vgradp(ops.SF, V_fz, self.MVf, Uf, up_fz,
                               np.asarray(ops.fz_face_entity))
                    add_vgradp(-ops.SE, V_fz, self.MVf, Uf, up_fz,
                               np.asarray(ops.fz_edge_entity))

            acc2 = np.zeros(N)
            acc2_p = np.zeros(N)
            acc2_T = np.zeros(N)
            coef_c = (area / dt) * self.rho0[:nc] * self.prev.porosity
            acc2[:nc] = coef_c * ((e[:nc] - self.e0[:nc])
                                  + p[:nc] * (1.0 / rho[:nc] - 1.0 / self.rho0[:nc]))
            acc2_p[:nc] = coef_c * (eos.de_dp[:nc]
                                    + (1.0 / rho[:nc] - 1.0 / self.rho0[:nc])
                                    - p[:nc] * eos.drho_dp[:nc] / rho[:nc] ** 2)
            acc2_T[:nc] = coef_c * (eos.de_dT[:nc]
                                    - p[:nc] * eos.drho_dT[:nc] / rho[:nc] ** 2)
            src = np.zeros(N)
            src_p = np.zeros(N)
            src_T = np.zeros(N)
            src[:nc] = -area * (self.Hhat_m - h[:nc] * self.Ghat_m)
            src_p[:nc] = area * eos.dh_dp[:nc] * self.Ghat_m
            src_T[:nc] = area * eos.dh_dT[:nc] * self.Ghat_m
            if self.frac_ent.size:
                fe = self.frac_ent
                coef_f = (self.frac_len / dt) * self.rho0[fe] * self.prev.aperture
                acc2[fe] = coef_f * ((e[fe] - self.e0[fe])
                                     + p[fe] * (1.0 / rho[fe] - 1.0 / self.rho0[fe]))
                acc2_p[fe] = coef_f * (eos.de_dp[fe]
                                       + (1.0 / rho[fe] - 1.0 / self.rho0[fe])
                                       - p[fe] * eos.drho_dp[fe] / rho[fe] ** 2)
                acc2_T[fe] = coef_f * (eos.de_dT[fe]
                                       - p[fe] * eos.drho_dT[fe] / rho[fe] ** 2)
                src[fe] = -self.frac_len * (self.Hhat_f - h[fe] * self.Ghat_f)
                src_p[fe] = self.frac_len * eos.dh_dp[fe] * self.Ghat_f
                src_T[fe] = self.frac_len * eos.dh_dT[fe] * self.Ghat_f
            G = G + acc2 + src
            Gp_list.append(D(acc2_p + src_p))
            GT_list.append(D(acc2_T + src_T))

            DinvT = D(invT)
            Je_p.append(DinvT @ sum(Gp_list[1:], start=Gp_list[0]))
            Je_T.append(DinvT @ sum(GT_list[1:], start=GT_list[0]))
            Je_T.append(D(-G * invT ** 2))
            four_T = (SCm @ self.MQ) / Tref + ops.SCONS @ self.MQ
            if ops.n_fz:
                four_T = four_T + (SFm @ self.MQf) / Tref
            Je_T.append(four_T)
            dS_p = np.zeros(N)
            dS_T = np.zeros(N)
            dS_p[:nc] = -(area / dt) * r.thermal_dilation_porosity
            dS_T[:nc] = (area / dt) * r.heat_capacity_skeleton / Tref
            Je_p.append(D(dS_p))
            Je_T.append(D(dS_T))

        Jmp = sum(Jm_p[1:], start=Jm_p[0]).tocsr()
        JmT = sum(Jm_T[1:], start=Jm_T[0]).tocsr() if Jm_T else sp.csr_matrix((N, N))
        Jep = sum(Je_p[1:], start=Je_p[0]).tocsr() if Je_p else sp.csr_matrix((N, N))
        JeT = sum(Je_T[1:], start=Je_T[0]).tocsr()

        # Dirichlet rows: identity in the owning block.
        d = self.dirichlet
        keep_m = np.where(d.p_mask, 0.0, 1.0)
        keep_e = np.where(d.T_mask, 0.0, 1.0)
        Jmp = D(keep_m) @ Jmp + D(d.p_mask.astype(float))
        JmT = D(keep_m) @ JmT
        Jep = D(keep_e) @ Jep
        JeT = D(keep_e) @ JeT + D(d.T_mask.astype(float))
        return sp.bmat([[Jmp, JmT], [Jep, JeT]], format="csr")


def _block_norms(R, scale, N):
    out = []
    for sl in (slice(0, N), slice(N, 2 * N)):
        s = np.linalg.norm(scale[sl])
        out.append(np.linalg.norm(R[sl]) / (s + 1e-300))
    return max(out)


def solve_flow(system: FlowSystem, p_init, T_init) -> tuple[FlowState, NewtonReport]:
    """Newton iteration with frozen-per-iteration upwinding and step damping.

    Convergence: blockwise scaled residual or the scaled maximum increment
    below the tolerance.  Equation-of-state domain violations and negative
    temperatures trigger damping instead of extrapolation.  The Jacobian
    factorization is reused across iterations (and across solves within the
    same step) while it keeps contracting; a stall refreshes it.
    """
    cfg = system.config
    N = system.N
    p = np.asarray(p_init, dtype=float).copy()
    T = np.asarray(T_init, dtype=float).copy()
    # Dirichlet entities start at their boundary values: the first
    # linearization then sees the physical gradient, not the jump itself.
    d = system.dirichlet
    p[d.p_mask] = d.p_value[d.p_mask]
    T[d.T_mask] = d.T_value[d.T_mask]
    p_scale = max(np.abs(p).max(), 1.0)
    T_scale = max(np.abs(T).max(), 1.0)
    # Per-iteration update caps keep the advective linearization from
    # throwing the state far outside the admissible region.
    p_cap = 1.0 * p_scale
    T_cap = 0.25 * T_scale
    res = np.inf

    # Trial states are projected into the admissible box (slightly inset):
    # the Newton path may graze the box even when the solution is interior.
    fl = system.fluid
    p_lo, p_hi = fl.p_box
    T_lo, T_hi = fl.T_box
    if np.isfinite(p_lo) or np.isfinite(p_hi):
        pw = (p_hi - p_lo) if np.isfinite(p_hi - p_lo) else max(abs(p_lo), abs(p_hi))
    else:
        pw = 0.0
    Tw = (T_hi - T_lo) if np.isfinite(T_hi - T_lo) else 0.0

    def project(pp, TT):
        if pw:
            np.clip(pp, p_lo + 1e-6 * pw, p_hi - 1e-6 * pw, out=pp)
        if Tw:
            np.clip(TT, T_lo + 1e-6 * Tw, T_hi - 1e-6 * Tw, out=TT)
        return pp, TT

    def try_residual(pp, TT):
        up = system.upwind(pp)
        R, S = system.residual(pp, TT, up, with_scale=True)
        if not np.all(np.isfinite(R)):
            raise DomainError("non-finite residual")
        return up, R, S

    def refresh_factorization():
        J = system.jacobian(p, T, up)
        fact = linalg.factorize(J)
        system._chord_fact = fact
        return fact

    up, R, S = try_residual(p, T)
    scale = S
    for it in range(cfg.newton_max_iter + 1):
        res = _block_norms(R, scale, N)
        if res <= cfg.newton_tol:
            return FlowState(p, T), NewtonReport(it, res, True)
        if it == cfg.newton_max_iter:
            break
        fact = getattr(system, "_chord_fact", None)
        fresh = fact is None
        if fresh:
            try:
                fact = refresh_factorization()
            except linalg.SingularMatrixError:
                break
        dx = fact.solve(-R)
        np.clip(dx[:N], -p_cap, p_cap, out=dx[:N])
        np.clip(dx[N:], -T_cap, T_cap, out=dx[N:])
        step_ok = False
        alpha = 1.0
        for attempt in range(9):
            try:
                p_t, T_t = project(p + alpha * dx[:N], T + alpha * dx[N:])
                up_n, R_n, S_n = try_residual(p_t, T_t)
            except (DomainError, SingularTemperatureError):
                alpha *= 0.5
                continue
            new_res = _block_norms(R_n, scale, N)
            if new_res < res or new_res <= cfg.newton_tol:
                step_ok = True
                break
            if not fresh:
                break  # stale operator: refresh instead of damping
            alpha *= 0.5
        if not step_ok:
            if not fresh:
                try:
                    fact = refresh_factorization()
                except linalg.SingularMatrixError:
                    break
                dx = fact.solve(-R)
                np.clip(dx[:N], -p_cap, p_cap, out=dx[:N])
                np.clip(dx[N:], -T_cap, T_cap, out=dx[N:])
                fresh = True
                alpha = 1.0
                for attempt in range(9):
                    try:
                        p_t, T_t = project(p + alpha * dx[:N], T + alpha * dx[N:])
                        up_n, R_n, S_n = try_residual(p_t, T_t)
                    except (DomainError, SingularTemperatureError):
                        alpha *= 0.5
                        continue
                    new_res = _block_norms(R_n, scale, N)
                    if new_res < res or new_res <= cfg.newton_tol:
                        step_ok = True
                        break
                    alpha *= 0.5
            if not step_ok:
                break
        elif not fresh and new_res > 0.3 * res and new_res > cfg.newton_tol:
            # Converging too slowly on the reused operator: refresh next time.
            system._chord_fact = None
        inc = max(np.abs(p_t - p).max() / p_scale,
                  np.abs(T_t - T).max() / T_scale)
        p, T = p_t, T_t
        up, R, S = up_n, R_n, S_n
        scale = np.maximum(scale, S)
        if inc <= cfg.newton_tol:
            res = _block_norms(R, scale, N)
            return FlowState(p, T), NewtonReport(it + 1, res, True)
    raise NonConvergence("flow solve", iterations=cfg.newton_max_iter,
                         residual=float(res))


# ----------------------------------------------------------------------
# Row-group views used by the verification suite and the coupler.


def darcy_fluxes(system: FlowSystem, p) -> tuple[np.ndarray, np.ndarray]:
    """Volume fluxes per (cell, face) slot and per (fracture face, edge) slot."""
    return system.MV @ p, system.MVf @ p


def fourier_fluxes(system: FlowSystem, T) -> tuple[np.ndarray, np.ndarray]:
    return system.MQ @ T, system.MQf @ T


def assemble_mass_residual(system: FlowSystem, p, T, up=None, raw=False) -> np.ndarray:
    up = system.upwind(p) if up is None else up
    return system.residual(p, T, up, raw_rows=raw)[: system.N]


def assemble_energy_residual_H(system: FlowSystem, p, T, up=None, raw=False) -> np.ndarray:
    up = system.upwind(p) if up is None else up
    return system.residual(p, T, up, scheme="H", raw_rows=raw)[system.N:]


def assemble_energy_residual_S(system: FlowSystem, p, T, up=None, raw=False) -> np.ndarray:
    up = system.upwind(p) if up is None else up
    return system.residual(p, T, up, scheme="S", raw_rows=raw)[system.N:]
