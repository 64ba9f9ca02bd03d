"""Hybrid finite volume space: cell/face/fracture-edge unknowns, gradient
reconstructions, and the local flux matrices.

Per cell K the fluxes F_{K,s} are defined by a stabilised bilinear form so
that for all discrete fields v, w

    int_K D grad_D v . grad_D w = sum_s F_{K,s}(D; v) (w_K - w_s),

with sub-face gradients  grad_K v + (sqrt(2)/d_s) R_s(v) n_s,  residuals
R_s(v) = v_s - v_K - grad_K v . (xbar_s - x_K) and sub-volumes |s| d_s / 2.
On a fracture face (a segment) the same construction collapses to two-point
fluxes 2 D / |s| * (v_s - v_z) toward each end.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateCellError

SQRT_D = np.sqrt(2.0)  # stabilisation coefficient sqrt(d), d = 2


class DiscreteField:
    """One scalar unknown vector: values on cells, faces and fracture edges."""

    def __init__(self, mesh, values=None):
        self.mesh = mesh
        if values is None:
            values = np.zeros(mesh.n_entities)
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_entities,):
            raise ValueError(
                f"expected {mesh.n_entities} values, got {values.shape}")
        self.values = values

    @classmethod
    def from_function(cls, mesh, fn):
        """Collocate fn(x, y) at cell centroids, face midpoints, edge vertices."""
        pts = mesh.entity_points()
        return cls(mesh, np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float))

    @property
    def cell(self) -> np.ndarray:
        return self.values[: self.mesh.n_cells]

    @property
    def face(self) -> np.ndarray:
        return self.values[self.mesh.n_cells: self.mesh.n_cells + self.mesh.n_faces]

    @property
    def fracture_edge(self) -> np.ndarray:
        return self.values[self.mesh.n_cells + self.mesh.n_faces:]

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.mesh, self.values.copy())


def cell_gradient(mesh, k: int, field: DiscreteField) -> np.ndarray:
    """Consistent cell gradient (1/|K|) sum |s| (v_s - v_K) n_{K,s}."""
    faces = mesh.cell_faces[k]
    dv = field.face[faces] - field.cell[k]
    return np.einsum("f,f,fd->d", mesh.face_length[faces], dv,
                     mesh.cell_face_normal[k]) / mesh.cell_area[k]


def all_cell_gradients(mesh, cell_values, face_values) -> np.ndarray:
    dv = face_values[mesh.cell_faces] - cell_values[:, None]
    return np.einsum("cf,cf,cfd->cd", mesh.face_length[mesh.cell_faces], dv,
                     mesh.cell_face_normal) / mesh.cell_area[:, None]


def _gradient_operators(mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell linear maps from face-minus-cell differences u (3,) to the
    cell gradient (G: nc x 2 x 3) and the sub-face gradients (S: nc x 3 x 2 x 3)."""
    if np.any(mesh.cell_face_dist <= 0):
        raise DegenerateCellError("cell centroid is not interior")
    L = mesh.face_length[mesh.cell_faces]                       # (nc, 3)
    G = (L[:, None, :] * np.swapaxes(mesh.cell_face_normal, 1, 2)) \
        / mesh.cell_area[:, None, None]                          # (nc, 2, 3)
    c = mesh.face_midpoint[mesh.cell_faces] - mesh.cell_centroid[:, None, :]
    #  S[c, j] = G + (sqrt2 / d_j) n_j (e_j^T - c_j^T G)
    nc = mesh.n_cells
    S = np.empty((nc, 3, 2, 3))
    eye = np.eye(3)
    for j in range(3):
        coef = SQRT_D / mesh.cell_face_dist[:, j]                # (nc,)
        nj = mesh.cell_face_normal[:, j, :]                      # (nc, 2)
        row = eye[j][None, :] - np.einsum("cd,cdk->ck", c[:, j, :], G)  # (nc, 3)
        S[:, j] = G + coef[:, None, None] * nj[:, :, None] * row[:, None, :]
    return G, S


def cell_flux_matrices(mesh, tensor) -> np.ndarray:
    """Local flux matrices A^K (nc x 3 x 3) for a diffusion tensor given as
    one (2, 2) array or per-cell (nc, 2, 2); A is symmetric positive
    definite in the face-minus-cell differences."""
    _, S = _gradient_operators(mesh)
    tensor = np.asarray(tensor, dtype=float)
    if tensor.ndim == 2:
        tensor = np.broadcast_to(tensor, (mesh.n_cells, 2, 2))
    w = (mesh.face_length[mesh.cell_faces] * mesh.cell_face_dist) / 2.0   # (nc, 3)
    DS = np.einsum("cde,cjek->cjdk", tensor, S)
    return np.einsum("cj,cjdk,cjdl->ckl", w, S, DS)


def fracture_flux_coefficients(mesh, scalar) -> np.ndarray:
    """Two-point coefficients 2 D / |s| per fracture face; fluxes toward each
    end are coef * (v_s - v_z).  D = 0 gives a closed fracture with zero flux."""
    scalar = np.broadcast_to(np.asarray(scalar, dtype=float), (mesh.n_fracture_faces,))
    if np.any(scalar < 0):
        raise ValueError("fracture diffusion coefficient must be >= 0")
    return 2.0 * scalar / mesh.face_length[mesh.fracture_faces]


def build_cell_flux_matrix(mesh, k: int, tensor) -> np.ndarray:
    """A^K for one cell; rows/columns follow the local face order."""
    tensor = np.asarray(tensor, dtype=float).reshape(2, 2)
    sub = _single_cell_view(mesh, k)
    return cell_flux_matrices(sub, tensor)[0]


def build_fracture_flux_matrix(mesh, frac_pos: int, scalar: float) -> np.ndarray:
    """A^sigma over the two edge unknowns of one fracture face (diagonal)."""
    coef = 2.0 * float(scalar) / mesh.face_length[mesh.fracture_faces[frac_pos]]
    if scalar < 0:
        raise ValueError("fracture diffusion coefficient must be >= 0")
    return coef * np.eye(2)


def evaluate_cell_fluxes(A_k, v_cell, v_faces) -> np.ndarray:
    """F_{K,s} = sum_s' A_{ss'} (v_K - v_s'); positive means out of the cell."""
    return A_k @ (v_cell - np.asarray(v_faces, dtype=float))


def evaluate_fracture_fluxes(coef, v_face, v_edges) -> np.ndarray:
    """F_{s,z} = coef (v_s - v_z); positive means out of the face toward z."""
    return coef * (v_face - np.asarray(v_edges, dtype=float))


class _single_cell_view:
    """Minimal mesh stand-in exposing one cell to the vectorized builder."""

    def __init__(self, mesh, k):
        self.n_cells = 1
        self.cell_faces = np.array([[0, 1, 2]])
        self.face_length = mesh.face_length[mesh.cell_faces[k]]
        self.cell_face_normal = mesh.cell_face_normal[k][None, :, :]
        self.cell_face_dist = mesh.cell_face_dist[k][None, :]
        self.cell_area = mesh.cell_area[k][None]
        self.face_midpoint = mesh.face_midpoint[mesh.cell_faces[k]]
        self.cell_centroid = mesh.cell_centroid[k][None, :]
