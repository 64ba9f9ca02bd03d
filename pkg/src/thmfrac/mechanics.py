"""Contact mechanics: quadratic displacement elements discontinuous across
the fracture network, facewise constant multipliers, Coulomb friction.

Displacement nodes sit at vertices and face midpoints.  A node on the
fracture network carries one unknown per locally connected matrix sector:
two along an open fracture side, one past an interior tip (the displacement
stays continuous there), one per sector at corners and intersections, and
two at a non-immersed tip vertex on the outer boundary.  Multipliers are
one 2-vector per fracture face, split into normal and tangential parts with
respect to the fixed fracture normal; they represent minus the surface
traction, so the normal part is non-negative in contact.

The contact conditions are enforced through facewise complementarity
functions whose roots are exactly the Coulomb conditions against the
face-averaged displacement jump; they are solved together with the momentum
balance by a semi-smooth Newton method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import NonConvergence

# Midpoint quadrature: degree 2, exact for P2 strain products.
_QP = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
# Degree-4 rule for the inertia mass matrix.
_QP4 = np.array([
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070]])
_QW4 = np.array([0.109951743655322] * 3 + [0.223381589678011] * 3)


class DisplacementSpace:
    """P2 node layout, element operators and fracture trace maps for a mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        nv = mesh.vertices.shape[0]
        nc = mesh.n_cells
        fracture_mask = mesh.is_fracture_face()

        # Cells around each vertex, and sector splitting: cells sharing a
        # non-fracture face incident to the vertex stay in one sector.
        cells_of_vertex: list[list[int]] = [[] for _ in range(nv)]
        for k in range(nc):
            for v in mesh.cells[k]:
                cells_of_vertex[int(v)].append(k)

        self._vertex_instance: list[dict[int, int]] = [dict() for _ in range(nv)]
        positions: list[tuple[float, float]] = []
        self.instance_vertex: list[int] = []

        for v in range(nv):
            around = cells_of_vertex[v]
            parent = {k: k for k in around}

            def find(a):
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                return a

            for k in around:
                for j in range(3):
                    f = int(mesh.cell_faces[k, j])
                    if fracture_mask[f] or v not in mesh.face_verts[f]:
                        continue
                    other = int(mesh.face_cells[f, 0] + mesh.face_cells[f, 1]) - k
                    if other >= 0 and other in parent:
                        ra, rb = find(k), find(other)
                        if ra != rb:
                            parent[ra] = rb
            roots: dict[int, int] = {}
            for k in sorted(around):
                r = find(k)
                if r not in roots:
                    idx = len(positions)
                    positions.append(tuple(mesh.vertices[v]))
                    self.instance_vertex.append(v)
                    roots[r] = idx
                self._vertex_instance[v][k] = roots[r]

        # Midpoint instances: fracture faces get one per side.
        self._mid_instance: dict[tuple[int, int], int] = {}
        for f in range(mesh.n_faces):
            cells = [int(c) for c in mesh.face_cells[f] if c >= 0]
            mid = tuple(mesh.face_midpoint[f])
            if fracture_mask[f]:
                for k in cells:
                    idx = len(positions)
                    positions.append(mid)
                    self.instance_vertex.append(-1)
                    self._mid_instance[(f, k)] = idx
            else:
                idx = len(positions)
                positions.append(mid)
                self.instance_vertex.append(-1)
                for k in cells:
                    self._mid_instance[(f, k)] = idx

        self.n_instances = len(positions)
        self.n_dofs = 2 * self.n_instances
        self.instance_position = np.asarray(positions)

        self.cell_dofs = np.empty((nc, 6), dtype=np.int64)
        for k in range(nc):
            for a in range(3):
                self.cell_dofs[k, a] = self._vertex_instance[int(mesh.cells[k, a])][k]
            for j in range(3):
                self.cell_dofs[k, 3 + j] = self._mid_instance[(int(mesh.cell_faces[k, j]), k)]
        self.elem_dofs = np.empty((nc, 12), dtype=np.int64)
        self.elem_dofs[:, 0::2] = 2 * self.cell_dofs
        self.elem_dofs[:, 1::2] = 2 * self.cell_dofs + 1

        self._build_element_operators()
        self._build_jump_operators()

    # ------------------------------------------------------------------
    def _build_element_operators(self):
        mesh = self.mesh
        nc = mesh.n_cells
        p = mesh.vertices[mesh.cells]                    # (nc, 3, 2)
        area = mesh.cell_area
        rot = lambda v: np.stack([-v[..., 1], v[..., 0]], axis=-1)
        gradL = np.empty((nc, 3, 2))
        for i in range(3):
            gradL[:, i] = rot(p[:, (i + 2) % 3] - p[:, (i + 1) % 3]) / (2 * area)[:, None]

        def shape_gradients(L):
            dN = np.empty((nc, 6, 2))
            for i in range(3):
                dN[:, i] = (4.0 * L[i] - 1.0) * gradL[:, i]
            for j in range(3):
                a, b = (j + 1) % 3, (j + 2) % 3
                dN[:, 3 + j] = 4.0 * (L[a] * gradL[:, b] + L[b] * gradL[:, a])
            return dN

        self._dN = [shape_gradients(L) for L in _QP]      # 3 x (nc, 6, 2)
        self._qw = area / 3.0

        divint = np.zeros((nc, 12))
        for dN in self._dN:
            divint[:, 0::2] += self._qw[:, None] * dN[:, :, 0]
            divint[:, 1::2] += self._qw[:, None] * dN[:, :, 1]
        self.div_integral = divint                        # int_K div(basis)

        intN = np.zeros(6)
        intN[3:] = 1.0 / 3.0                              # * |K| = int_K N_a
        self.basis_integral = intN

    def stiffness(self, mu: float, lam: float) -> sp.csr_matrix:
        """Assembled elastic stiffness for 2 mu eps:eps + lam div div."""
        nc = self.mesh.n_cells
        D = np.array([[2 * mu + lam, lam, 0.0],
                      [lam, 2 * mu + lam, 0.0],
                      [0.0, 0.0, mu]])
        Ke = np.zeros((nc, 12, 12))
        for dN in self._dN:
            B = np.zeros((nc, 3, 12))
            B[:, 0, 0::2] = dN[:, :, 0]
            B[:, 1, 1::2] = dN[:, :, 1]
            B[:, 2, 0::2] = dN[:, :, 1]
            B[:, 2, 1::2] = dN[:, :, 0]
            Ke += self._qw[:, None, None] * np.einsum("cqi,qr,crj->cij", B, D, B)
        rows = np.repeat(self.elem_dofs, 12, axis=1).ravel()
        cols = np.tile(self.elem_dofs, (1, 12)).ravel()
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        K.sum_duplicates()
        return K

    def mass(self) -> sp.csr_matrix:
        """P2 mass matrix (unit density), degree-4 quadrature."""
        nc = self.mesh.n_cells
        Me = np.zeros((nc, 12, 12))
        for L, w in zip(_QP4, _QW4):
            N = np.empty(6)
            for i in range(3):
                N[i] = L[i] * (2 * L[i] - 1)
            for j in range(3):
                N[3 + j] = 4 * L[(j + 1) % 3] * L[(j + 2) % 3]
            Nm = np.zeros((2, 12))
            Nm[0, 0::2] = N
            Nm[1, 1::2] = N
            Me += (w * self.mesh.cell_area)[:, None, None] * (Nm.T @ Nm)
        rows = np.repeat(self.elem_dofs, 12, axis=1).ravel()
        cols = np.tile(self.elem_dofs, (1, 12)).ravel()
        return sp.coo_matrix((Me.ravel(), (rows, cols)),
                             shape=(self.n_dofs, self.n_dofs)).tocsr()

    # ------------------------------------------------------------------
    def _build_jump_operators(self):
        """Face-average jump rows: Simpson weights on the P2 traces."""
        mesh = self.mesh
        nfrac = mesh.n_fracture_faces
        rows_x, cols_x, vals_x = [], [], []
        for pos in range(nfrac):
            f = int(mesh.fracture_faces[pos])
            va, vb = (int(v) for v in mesh.face_verts[f])
            for sign, k in ((1.0, int(mesh.side_plus_cell[pos])),
                            (-1.0, int(mesh.side_minus_cell[pos]))):
                trace = [self._vertex_instance[va][k],
                         self._vertex_instance[vb][k],
                         self._mid_instance[(f, k)]]
                for inst, wgt in zip(trace, (1 / 6, 1 / 6, 4 / 6)):
                    rows_x.append(pos)
                    cols_x.append(inst)
                    vals_x.append(sign * wgt)
        shape = (nfrac, self.n_dofs)
        cols = np.asarray(cols_x, dtype=np.int64)
        rows = np.asarray(rows_x, dtype=np.int64)
        vals = np.asarray(vals_x)
        Jx = sp.coo_matrix((vals, (rows, 2 * cols)), shape=shape).tocsr()
        Jy = sp.coo_matrix((vals, (rows, 2 * cols + 1)), shape=shape).tocsr()
        n = mesh.fracture_normal if nfrac else np.zeros((0, 2))
        t = mesh.fracture_tangent() if nfrac else np.zeros((0, 2))
        self.jump_x, self.jump_y = Jx, Jy
        self.jump_normal = (sp.diags(n[:, 0]) @ Jx + sp.diags(n[:, 1]) @ Jy).tocsr()
        self.jump_tangent = (sp.diags(t[:, 0]) @ Jx + sp.diags(t[:, 1]) @ Jy).tocsr()

    # ------------------------------------------------------------------
    def interpolate(self, fn, t=None) -> np.ndarray:
        """Nodal interpolation of a vector field fn(x, y[, t]) -> (2, n)."""
        u = np.empty(self.n_dofs)
        xy = self.instance_position
        vals = fn(xy[:, 0], xy[:, 1], t) if t is not None else fn(xy[:, 0], xy[:, 1])
        vals = np.asarray(vals, dtype=float).reshape(2, -1)
        u[0::2] = vals[0]
        u[1::2] = vals[1]
        return u

    def dirichlet_dofs(self, bcs: dict, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Constrained dof indices and values for tag -> fn(x, y, t) tables.

        All sectors of a constrained boundary node are pinned.  Results are
        cached per (table, time): the mechanics solve is called repeatedly
        within each coupled step at a fixed time.
        """
        cache = getattr(self, "_dirichlet_cache", None)
        key = (id(bcs), float(t))
        if cache is not None and cache[0] == key:
            return cache[1]
        mesh = self.mesh
        inst_vals: dict[int, tuple[float, float]] = {}
        for f in range(mesh.n_faces):
            tag = mesh.boundary_tag[f]
            if tag is None or bcs.get(tag) is None:
                continue
            fn = bcs[tag]
            targets = []
            for v in mesh.face_verts[f]:
                targets.extend(self._vertex_instance[int(v)].values())
            targets.append(self._mid_instance[(f, int(mesh.face_cells[f, 0]))])
            for inst in set(targets):
                x, y = self.instance_position[inst]
                val = fn(x, y, t) if callable(fn) else fn
                inst_vals[inst] = (float(val[0]), float(val[1]))
        dofs, vals = [], []
        for inst in sorted(inst_vals):
            vx, vy = inst_vals[inst]
            dofs.extend((2 * inst, 2 * inst + 1))
            vals.extend((vx, vy))
        out = (np.asarray(dofs, dtype=np.int64), np.asarray(vals))
        self._dirichlet_cache = (key, out)
        return out


@dataclass
class ContactSolveConfig:
    tolerance: float = 1e-10
    max_iterations: int = 60


@dataclass
class MechState:
    """Displacement, multipliers and contact activity at one time level."""

    space: DisplacementSpace
    u: np.ndarray                      # (n_dofs,)
    lambda_n: np.ndarray               # (nfrac,), >= 0 at convergence
    lambda_t: np.ndarray               # (nfrac,), signed tangential multiplier
    status: np.ndarray                 # 0 open, 1 stick, 2 slip
    velocity: np.ndarray | None = None
    contact_aperture: float | np.ndarray = 0.0

    def face_average_jump(self) -> np.ndarray:
        return np.column_stack([self.space.jump_x @ self.u,
                                self.space.jump_y @ self.u])

    def face_average_jump_normal(self) -> np.ndarray:
        return self.space.jump_normal @ self.u

    def face_average_jump_tangent(self) -> np.ndarray:
        return self.space.jump_tangent @ self.u

    def multipliers(self) -> np.ndarray:
        """Facewise vector multipliers lambda_n n+ + lambda_t tau."""
        n = self.space.mesh.fracture_normal
        t = self.space.mesh.fracture_tangent()
        return self.lambda_n[:, None] * n + self.lambda_t[:, None] * t

    def div_integral_per_cell(self) -> np.ndarray:
        return np.einsum("ci,ci->c", self.space.div_integral,
                         self.u[self.space.elem_dofs])

    def div_mean_per_cell(self) -> np.ndarray:
        return self.div_integral_per_cell() / self.space.mesh.cell_area

    def cell_strain(self) -> np.ndarray:
        """Cell-mean strain tensors (nc, 2, 2); the P2 strain is linear, so
        the midpoint average is exact."""
        sp_ = self.space
        ue = self.u[sp_.elem_dofs]
        eps = np.zeros((sp_.mesh.n_cells, 2, 2))
        for dN in sp_._dN:
            gx = np.einsum("cn,cnd->cd", ue[:, 0::2], dN)
            gy = np.einsum("cn,cnd->cd", ue[:, 1::2], dN)
            grad = np.stack([gx, gy], axis=1)
            eps += (grad + np.swapaxes(grad, 1, 2)) / 2.0
        return eps / 3.0

    def elastic_energy_per_cell(self, mu: float, lam: float) -> np.ndarray:
        """int_K (mu |eps|^2 + lam/2 div^2), exact midpoint quadrature."""
        sp_ = self.space
        ue = self.u[sp_.elem_dofs]
        out = np.zeros(sp_.mesh.n_cells)
        for dN in sp_._dN:
            gx = np.einsum("cn,cnd->cd", ue[:, 0::2], dN)
            gy = np.einsum("cn,cnd->cd", ue[:, 1::2], dN)
            exx, eyy = gx[:, 0], gy[:, 1]
            exy = 0.5 * (gx[:, 1] + gy[:, 0])
            div = exx + eyy
            out += sp_._qw * (mu * (exx**2 + eyy**2 + 2 * exy**2) + lam / 2 * div**2)
        return out

    def vertex_displacement(self) -> np.ndarray:
        """One displacement sample per mesh vertex (first sector), for output."""
        mesh = self.space.mesh
        out = np.zeros((mesh.vertices.shape[0], 2))
        for v, table in enumerate(self.space._vertex_instance):
            if table:
                inst = min(table.values())
                out[v] = self.u[2 * inst: 2 * inst + 2]
        return out


@dataclass
class MechProblem:
    """Frozen per-solve data: operators, loads and boundary conditions."""

    space: DisplacementSpace
    stiffness: sp.csr_matrix
    coupling_cells: np.ndarray          # b p_K + a_s K_s (T_K - T_ref) per cell
    fracture_pressure: np.ndarray       # p on fracture faces
    friction: np.ndarray                # per fracture face
    load: np.ndarray                    # external dof vector int Fhat . v
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray
    c_normal: np.ndarray
    c_tangent: np.ndarray
    u_previous: np.ndarray
    inertia_matrix: sp.csr_matrix | None = None
    inertia_coef: float = 0.0
    inertia_rhs: np.ndarray | None = None


def volume_load_vector(space: DisplacementSpace, fhat_cells) -> np.ndarray:
    """Dof vector of int_K Fhat . v for a cellwise-constant load (nc, 2)."""
    f = np.zeros(space.n_dofs)
    if fhat_cells is None:
        return f
    fhat_cells = np.asarray(fhat_cells, dtype=float)
    mesh = space.mesh
    w = mesh.cell_area[:, None] * space.basis_integral[None, :]
    np.add.at(f, 2 * space.cell_dofs, w * fhat_cells[:, 0:1])
    np.add.at(f, 2 * space.cell_dofs + 1, w * fhat_cells[:, 1:2])
    return f


def momentum_residual(problem: MechProblem, u, lam_n, lam_t) -> np.ndarray:
    """Momentum rows before Dirichlet replacement; also used for reactions."""
    space = problem.space
    mesh = space.mesh
    r = problem.stiffness @ u
    np.subtract.at(r, space.elem_dofs.ravel(),
                   (problem.coupling_cells[:, None] * space.div_integral).ravel())
    if mesh.n_fracture_faces:
        w = mesh.face_length[mesh.fracture_faces]
        r += space.jump_normal.T @ (w * (lam_n + problem.fracture_pressure))
        r += space.jump_tangent.T @ (w * lam_t)
    r -= problem.load
    if problem.inertia_matrix is not None:
        r += problem.inertia_coef * (problem.inertia_matrix @ u) + problem.inertia_rhs
    return r


def contact_complementarity(lam_n, lam_t, gap_n, slip_t, c_n, c_t, friction):
    """Facewise complementarity residuals (C_n, C_t) and branch data.

    gap_n: face-average normal jump at the new level; slip_t: face-average
    tangential jump increment over the step.  Roots coincide with
    lam_n >= 0, gap_n <= 0, lam_n gap_n = 0, |lam_t| <= F lam_n, and on
    sliding faces lam_t = F lam_n sign(slip), i.e. the traction (minus the
    multiplier) opposes the slip.
    """
    trial_n = np.asarray(lam_n) + np.asarray(c_n) * np.asarray(gap_n)
    lam_hat = np.maximum(0.0, trial_n)
    C_n = lam_n - lam_hat
    bound = np.asarray(friction) * lam_hat
    w = np.asarray(lam_t) + np.asarray(c_t) * np.asarray(slip_t)
    C_t = lam_t - np.clip(w, -bound, bound)
    active = trial_n > 0.0
    sliding = active & (np.abs(w) > bound)
    return C_n, C_t, active, sliding, w, lam_hat


def solve_contact(problem: MechProblem, config: ContactSolveConfig,
                  u0=None, lam_n0=None, lam_t0=None) -> tuple[MechState, int]:
    """Semi-smooth Newton on the stacked momentum and contact rows.

    Steps are backtracked on a scaled merit of the momentum and
    complementarity residuals, which suppresses active-set cycling; a full
    step is taken when no decrease is found, to step across kinks.
    Dirichlet rows are weighted by a stiffness scale so boundary violations
    are measured in force units like the other rows.
    """
    space = problem.space
    mesh = space.mesh
    nfrac = mesh.n_fracture_faces
    nd = space.n_dofs

    u = problem.u_previous.copy() if u0 is None else np.asarray(u0, dtype=float).copy()
    lam_n = np.zeros(nfrac) if lam_n0 is None else np.asarray(lam_n0, dtype=float).copy()
    lam_t = np.zeros(nfrac) if lam_t0 is None else np.asarray(lam_t0, dtype=float).copy()

    dir_dofs, dir_vals = problem.dirichlet_dofs, problem.dirichlet_values
    diag = problem.stiffness.diagonal()
    c_dir = np.maximum(diag[dir_dofs], diag.mean() + 1e-300) if dir_dofs.size \
        else np.empty(0)
    w_face = mesh.face_length[mesh.fracture_faces] if nfrac else np.empty(0)
    jump_prev_t = space.jump_tangent @ problem.u_previous if nfrac else np.empty(0)
    Jn = space.jump_normal
    Jt = space.jump_tangent
    Bn = (Jn.T @ sp.diags(w_face)).tocsr() if nfrac else None
    Bt = (Jt.T @ sp.diags(w_face)).tocsr() if nfrac else None

    def evaluate(u, lam_n, lam_t):
        r_u = momentum_residual(problem, u, lam_n, lam_t)
        gap_n = Jn @ u if nfrac else np.empty(0)
        slip_t = (Jt @ u - jump_prev_t) if nfrac else np.empty(0)
        C_n, C_t, active, sliding, w, lam_hat = contact_complementarity(
            lam_n, lam_t, gap_n, slip_t, problem.c_normal, problem.c_tangent,
            problem.friction)
        r_u_bc = r_u.copy()
        if dir_dofs.size:
            r_u_bc[dir_dofs] = c_dir * (u[dir_dofs] - dir_vals)
        scale_u = (np.linalg.norm(problem.stiffness @ u) + np.linalg.norm(problem.load)
                   + np.abs(problem.coupling_cells * mesh.cell_area).sum()
                   + (np.linalg.norm(w_face * problem.fracture_pressure)
                      + np.linalg.norm(w_face * lam_n)
                      + np.linalg.norm(w_face * lam_t) if nfrac else 0.0)
                   + (np.linalg.norm(c_dir * dir_vals) if dir_dofs.size else 0.0)
                   + 1e-300)
        scale_c = ((np.abs(lam_n).max(initial=0.0) + np.abs(lam_t).max(initial=0.0)
                    + (problem.c_normal * np.abs(gap_n)).max(initial=0.0))
                   if nfrac else 1.0) + 1e-300
        res = max(np.linalg.norm(r_u_bc) / scale_u,
                  (np.linalg.norm(np.concatenate([C_n, C_t])) / scale_c)
                  if nfrac else 0.0)
        return r_u_bc, C_n, C_t, active, sliding, w, res

    r_u_bc, C_n, C_t, active, sliding, w, res = evaluate(u, lam_n, lam_t)
    best = np.inf
    stall = 0
    for it in range(config.max_iterations + 1):
        if res <= config.tolerance:
            status = np.where(~active, 0, np.where(sliding, 2, 1))
            state = MechState(space, u, lam_n, lam_t, status)
            return state, it
        if it == config.max_iterations:
            break
        if res < 0.9 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall > 12:
                break

        A = problem.stiffness
        if problem.inertia_matrix is not None:
            A = (A + problem.inertia_coef * problem.inertia_matrix).tocsr()
        if nfrac:
            rn_u = sp.lil_matrix((nfrac, nd))
            rn_n = sp.lil_matrix((nfrac, nfrac))
            rt_u = sp.lil_matrix((nfrac, nd))
            rt_n = sp.lil_matrix((nfrac, nfrac))
            rt_t = sp.identity(nfrac, format="lil")
            for i in range(nfrac):
                if active[i]:
                    rn_u[i] = -problem.c_normal[i] * Jn[[i]]
                else:
                    rn_n[i, i] = 1.0
                if active[i] and sliding[i]:
                    sgn = 1.0 if w[i] >= 0 else -1.0
                    rt_n[i, i] = -sgn * problem.friction[i]
                    rt_u[i] = -sgn * problem.friction[i] * problem.c_normal[i] * Jn[[i]]
                elif active[i]:
                    rt_u[i] = -problem.c_tangent[i] * Jt[[i]]
                    rt_t[i, i] = 0.0
            J = sp.bmat([[A, Bn, Bt],
                         [rn_u.tocsr(), rn_n.tocsr(), None],
                         [rt_u.tocsr(), rt_n.tocsr(), rt_t.tocsr()]], format="lil")
            rhs = -np.concatenate([r_u_bc, C_n, C_t])
        else:
            J = A.tolil()
            rhs = -r_u_bc
        for d, c in zip(dir_dofs, c_dir):
            J.rows[d] = [int(d)]
            J.data[d] = [float(c)]
        delta = linalg.solve(J.tocsr(), rhs)
        du = delta[:nd]
        dln = delta[nd:nd + nfrac] if nfrac else np.empty(0)
        dlt = delta[nd + nfrac:] if nfrac else np.empty(0)

        alpha, accepted = 1.0, False
        for _ in range(8):
            out = evaluate(u + alpha * du, lam_n + alpha * dln, lam_t + alpha * dlt)
            if out[-1] < res:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            alpha = 1.0  # step across the kink and re-linearize there
            out = evaluate(u + du, lam_n + dln, lam_t + dlt)
        u = u + alpha * du
        lam_n = lam_n + alpha * dln
        lam_t = lam_t + alpha * dlt
        r_u_bc, C_n, C_t, active, sliding, w, res = out

    raise NonConvergence("contact solve", iterations=config.max_iterations,
                         residual=float(res))


def persistence_work(mesh, lam_n, jump_increment_n) -> float:
    """int_Gamma lam_n d[[u]]_n over one step (J); >= 0 at converged states."""
    w = mesh.face_length[mesh.fracture_faces]
    return float(np.dot(w * lam_n, jump_increment_n))


def friction_dissipation(mesh, friction, lam_n, jump_increment_t) -> float:
    """int_Gamma F lam_n |d[[u]]_tau| over one step (J); always >= 0."""
    w = mesh.face_length[mesh.fracture_faces]
    return float(np.dot(w * np.asarray(friction) * lam_n, np.abs(jump_increment_t)))


def contact_dissipation(mesh, friction, lam_n, jump_increment_n, jump_increment_t):
    """(friction dissipation, normal persistence work) over one step."""
    return (friction_dissipation(mesh, friction, lam_n, jump_increment_t),
            persistence_work(mesh, lam_n, jump_increment_n))


def build_problem(space: DisplacementSpace, rock, p_cells, T_cells,
                  fracture_pressure=None, fhat_cells=None,
                  displacement_bcs=None, t: float = 0.0,
                  u_previous=None, stiffness=None, dt=None, dt_prev=None,
                  velocity_prev=None) -> MechProblem:
    """Assemble a MechProblem from rock parameters and a frozen flow state."""
    mesh = space.mesh
    nfrac = mesh.n_fracture_faces
    if stiffness is None:
        stiffness = space.stiffness(rock.lame_mu, rock.lame_lambda)
    p_cells = np.asarray(p_cells, dtype=float)
    T_cells = np.asarray(T_cells, dtype=float)
    coupling = (rock.biot_coefficient * p_cells
                + rock.thermal_dilation_skeleton * rock.bulk_modulus
                * (T_cells - rock.reference_temperature))
    if fracture_pressure is None:
        fracture_pressure = np.zeros(nfrac)
    friction = np.broadcast_to(np.asarray(rock.friction, dtype=float), (nfrac,)).copy()
    load = volume_load_vector(space, fhat_cells)
    if displacement_bcs:
        dir_dofs, dir_vals = space.dirichlet_dofs(displacement_bcs, t)
    else:
        dir_dofs = np.empty(0, dtype=np.int64)
        dir_vals = np.empty(0)
    if u_previous is None:
        u_previous = np.zeros(space.n_dofs)
    scale = rock.young_modulus / mesh.face_length[mesh.fracture_faces] if nfrac \
        else np.empty(0)
    inertia_matrix = None
    inertia_coef = 0.0
    inertia_rhs = None
    if rock.inertial_density > 0.0 and dt is not None:
        if dt_prev is None:
            dt_prev = dt
        M = space.mass()
        inertia_matrix = M
        span = dt + dt_prev
        inertia_coef = 2.0 * rock.inertial_density / (span * dt)
        vel_prev = np.zeros(space.n_dofs) if velocity_prev is None else velocity_prev
        inertia_rhs = (-inertia_coef * (M @ u_previous)
                       - (2.0 * rock.inertial_density / span) * (M @ vel_prev))
    return MechProblem(
        space=space, stiffness=stiffness, coupling_cells=coupling,
        fracture_pressure=np.asarray(fracture_pressure, dtype=float),
        friction=friction, load=load, dirichlet_dofs=dir_dofs,
        dirichlet_values=dir_vals, c_normal=scale.copy(), c_tangent=scale.copy(),
        u_previous=np.asarray(u_previous, dtype=float),
        inertia_matrix=inertia_matrix, inertia_coef=inertia_coef,
        inertia_rhs=inertia_rhs)
