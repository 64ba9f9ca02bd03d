"""Mixed-dimensional 2D meshes: triangulations conforming to a fracture network.

A mesh carries three families of entities the discretisation indexes over:
triangular cells, mesh edges ("faces" in the finite-volume sense), and the
endpoints of fracture faces ("fracture edges").  Fracture faces are interior
mesh edges tagged with a fracture id and a fixed unit normal; the two
adjacent cells are the "+" and "-" sides, with the normal pointing outward
from the "+" side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ParseError, ValidationError

_NORMAL_TOL = 1e-12


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass
class FractureGeometrySpec:
    """Fracture network as straight segments inside a rectangular domain.

    segments: array (n, 4) of (x0, y0, x1, y1); fracture_ids: (n,) ints.
    Segments of one fracture may share endpoints (corners); distinct
    segments must not cross in their interiors.
    """

    segments: np.ndarray
    fracture_ids: np.ndarray
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 2.0)
    base_spacing: float = 1.0 / 16.0

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        self.fracture_ids = np.asarray(self.fracture_ids, dtype=int).ravel()
        if self.segments.shape[0] != self.fracture_ids.shape[0]:
            raise ValueError("one fracture id per segment required")


@dataclass
class MixedDimMesh:
    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) CCW vertex triples
    face_verts: np.ndarray        # (nfa, 2)
    cell_faces: np.ndarray        # (nc, 3), face j opposite local vertex j
    face_cells: np.ndarray        # (nfa, 2), -1 when boundary
    cell_area: np.ndarray
    cell_centroid: np.ndarray
    face_length: np.ndarray
    face_midpoint: np.ndarray
    cell_face_normal: np.ndarray  # (nc, 3, 2) outward unit normals
    cell_face_dist: np.ndarray    # (nc, 3) centroid-to-face distances
    boundary_tag: np.ndarray      # (nfa,) object dtype, None when interior
    fracture_faces: np.ndarray    # indices into the face arrays
    fracture_id: np.ndarray       # per fracture face
    fracture_normal: np.ndarray   # (nfrac, 2) the fixed n+ per fracture face
    side_plus_cell: np.ndarray    # (nfrac,) cell the normal points out of
    side_minus_cell: np.ndarray
    fracture_edge_verts: np.ndarray           # (nfe,) vertex index per fracture edge
    fracture_edge_faces: list = field(default_factory=list)  # per edge: fracture-face positions
    fracture_edge_tags: list = field(default_factory=list)   # boundary tags touching the edge

    # ------------------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_verts.shape[0]

    @property
    def n_fracture_faces(self) -> int:
        return self.fracture_faces.shape[0]

    @property
    def n_fracture_edges(self) -> int:
        return self.fracture_edge_verts.shape[0]

    @property
    def n_entities(self) -> int:
        """Cells + faces + fracture edges: the scalar unknown count."""
        return self.n_cells + self.n_faces + self.n_fracture_edges

    def face_entity(self, f) -> np.ndarray:
        return self.n_cells + np.asarray(f)

    def fracture_edge_entity(self, k) -> np.ndarray:
        return self.n_cells + self.n_faces + np.asarray(k)

    def entity_points(self) -> np.ndarray:
        """Collocation point per entity: centroid / face midpoint / edge vertex."""
        return np.vstack([
            self.cell_centroid,
            self.face_midpoint,
            self.vertices[self.fracture_edge_verts],
        ])

    def is_fracture_face(self) -> np.ndarray:
        mask = np.zeros(self.n_faces, dtype=bool)
        mask[self.fracture_faces] = True
        return mask

    def fracture_tangent(self) -> np.ndarray:
        """Unit tangents obtained by rotating n+ a quarter turn left."""
        n = self.fracture_normal
        return np.column_stack([-n[:, 1], n[:, 0]])

    # ------------------------------------------------------------------
    def validate(self) -> None:
        """Check the structural invariants; raises ValidationError."""
        if np.any(self.cell_area <= 0.0):
            raise ValidationError("non-positive cell area")
        if np.any(self.cell_face_dist <= 0.0):
            raise ValidationError("cell centroid not strictly star-shaped w.r.t. a face")
        closure = np.einsum("cf,cfd->cd", self.face_length[self.cell_faces],
                            self.cell_face_normal)
        perim = self.face_length[self.cell_faces].sum(axis=1)
        if np.any(np.linalg.norm(closure, axis=1) > 1e-13 * perim):
            raise ValidationError("closed-polygon identity violated")
        for pos, f in enumerate(self.fracture_faces):
            if np.any(self.face_cells[f] < 0):
                raise ValidationError(
                    f"fracture face {f} has fewer than two adjacent cells")
            kp, km = self.side_plus_cell[pos], self.side_minus_cell[pos]
            slot = int(np.where(self.cell_faces[kp] == f)[0][0])
            if np.dot(self.cell_face_normal[kp, slot], self.fracture_normal[pos]) < 0.9:
                raise ValidationError("inconsistent fracture side assignment")
            if kp == km:
                raise ValidationError("fracture face with identical sides")
        for faces in self.fracture_edge_faces:
            if len(faces) < 1:
                raise ValidationError("fracture edge without adjacent fracture faces")

    def freeze(self) -> "MixedDimMesh":
        for name in ("vertices", "cells", "face_verts", "cell_faces", "face_cells",
                     "cell_area", "cell_centroid", "face_length", "face_midpoint",
                     "cell_face_normal", "cell_face_dist", "fracture_faces",
                     "fracture_id", "fracture_normal", "side_plus_cell",
                     "side_minus_cell", "fracture_edge_verts"):
            getattr(self, name).setflags(write=False)
        return self


# ----------------------------------------------------------------------
# construction


def _orient_ccw(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    cells = cells.copy()
    flip = cross < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return cells


def build_mesh(vertices, cells, fracture_pairs=(), fracture_pair_ids=(),
               boundary_tags=None) -> MixedDimMesh:
    """Assemble the full connectivity from vertices, cells and fracture tags.

    fracture_pairs: iterable of (v0, v1) vertex pairs that must be mesh
    edges; boundary_tags: dict mapping frozenset({v0, v1}) -> tag, or None
    to leave boundary faces untagged.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    for c in cells:
        if len(set(int(v) for v in c)) != 3:
            raise ValidationError(f"cell with duplicate vertices: {c.tolist()}")
    cells = _orient_ccw(vertices, cells)
    nc = cells.shape[0]

    face_index: dict[tuple[int, int], int] = {}
    face_list: list[tuple[int, int]] = []
    cell_faces = np.empty((nc, 3), dtype=np.int64)
    face_cells_list: list[list[int]] = []
    for k in range(nc):
        for j in range(3):
            a, b = int(cells[k, (j + 1) % 3]), int(cells[k, (j + 2) % 3])
            key = (a, b) if a < b else (b, a)
            f = face_index.get(key)
            if f is None:
                f = len(face_list)
                face_index[key] = f
                face_list.append(key)
                face_cells_list.append([k])
            else:
                if len(face_cells_list[f]) >= 2:
                    raise ValidationError(f"edge {key} shared by more than two cells")
                face_cells_list[f].append(k)
            cell_faces[k, j] = f
    nfa = len(face_list)
    face_verts = np.asarray(face_list, dtype=np.int64)
    face_cells = np.full((nfa, 2), -1, dtype=np.int64)
    for f, ks in enumerate(face_cells_list):
        face_cells[f, : len(ks)] = ks

    p = vertices[cells]
    cell_area = 0.5 * np.abs(_cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]))
    cell_centroid = p.mean(axis=1)
    fv = vertices[face_verts]
    edge_vec = fv[:, 1] - fv[:, 0]
    face_length = np.linalg.norm(edge_vec, axis=1)
    if np.any(face_length <= 0):
        raise ValidationError("zero-length face")
    face_midpoint = 0.5 * (fv[:, 0] + fv[:, 1])

    # Outward normals and centroid distances, per (cell, local face).
    normal = np.empty((nc, 3, 2))
    dist = np.empty((nc, 3))
    for j in range(3):
        f = cell_faces[:, j]
        t = edge_vec[f] / face_length[f][:, None]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        outward = np.einsum("cd,cd->c", face_midpoint[f] - cell_centroid, n)
        n[outward < 0] *= -1.0
        normal[:, j, :] = n
        dist[:, j] = np.abs(outward)

    boundary_tag = np.full(nfa, None, dtype=object)
    if boundary_tags:
        for key, tag in boundary_tags.items():
            a, b = sorted(key)
            f = face_index.get((a, b))
            if f is None:
                raise ValidationError(f"boundary tag on non-existent edge {(a, b)}")
            boundary_tag[f] = tag

    # Fracture faces: locate, orient, assign sides.
    frac_faces, frac_ids = [], []
    for pair, fid in zip(fracture_pairs, fracture_pair_ids):
        a, b = sorted(int(v) for v in pair)
        f = face_index.get((a, b))
        if f is None:
            raise ValidationError(f"fracture segment {(a, b)} is not a mesh edge")
        frac_faces.append(f)
        frac_ids.append(int(fid))
    frac_faces = np.asarray(frac_faces, dtype=np.int64)
    frac_ids = np.asarray(frac_ids, dtype=np.int64)
    order = np.argsort(frac_faces, kind="stable")
    frac_faces, frac_ids = frac_faces[order], frac_ids[order]
    if len(np.unique(frac_faces)) != len(frac_faces):
        raise ValidationError("duplicate fracture face")

    nfrac = len(frac_faces)
    frac_normal = np.empty((nfrac, 2))
    side_plus = np.empty(nfrac, dtype=np.int64)
    side_minus = np.empty(nfrac, dtype=np.int64)
    for pos, f in enumerate(frac_faces):
        if face_cells[f, 1] < 0:
            raise ValidationError(f"fracture face {f} lies on the boundary")
        t = edge_vec[f] / face_length[f]
        n = np.array([t[1], -t[0]])
        # Deterministic orientation: angle with (1, 0) in (-pi/2, pi/2],
        # ties broken toward (0, 1).
        if n[0] < -_NORMAL_TOL or (abs(n[0]) <= _NORMAL_TOL and n[1] < 0):
            n = -n
        frac_normal[pos] = n
        k0, k1 = face_cells[f]
        slot0 = int(np.where(cell_faces[k0] == f)[0][0])
        if np.dot(normal[k0, slot0], n) > 0:
            side_plus[pos], side_minus[pos] = k0, k1
        else:
            side_plus[pos], side_minus[pos] = k1, k0

    # Fracture edges: endpoints of fracture faces (vertices in 2D).
    edge_of_vertex: dict[int, int] = {}
    edge_verts: list[int] = []
    edge_faces: list[list[int]] = []
    for pos, f in enumerate(frac_faces):
        for v in face_verts[f]:
            v = int(v)
            e = edge_of_vertex.get(v)
            if e is None:
                e = len(edge_verts)
                edge_of_vertex[v] = e
                edge_verts.append(v)
                edge_faces.append([])
            edge_faces[e].append(pos)
    # Deterministic ordering by vertex index.
    order = np.argsort(edge_verts, kind="stable")
    edge_verts_arr = np.asarray(edge_verts, dtype=np.int64)[order]
    edge_faces = [edge_faces[i] for i in order]

    # Boundary tags seen by each fracture edge (for Dirichlet conditions).
    vert_tags: dict[int, set] = {}
    for f in range(nfa):
        if boundary_tag[f] is not None:
            for v in face_verts[f]:
                vert_tags.setdefault(int(v), set()).add(boundary_tag[f])
    edge_tags = [sorted(vert_tags.get(int(v), set())) for v in edge_verts_arr]

    mesh = MixedDimMesh(
        vertices=vertices, cells=cells, face_verts=face_verts,
        cell_faces=cell_faces, face_cells=face_cells, cell_area=cell_area,
        cell_centroid=cell_centroid, face_length=face_length,
        face_midpoint=face_midpoint, cell_face_normal=normal,
        cell_face_dist=dist, boundary_tag=boundary_tag,
        fracture_faces=frac_faces, fracture_id=frac_ids,
        fracture_normal=frac_normal, side_plus_cell=side_plus,
        side_minus_cell=side_minus, fracture_edge_verts=edge_verts_arr,
        fracture_edge_faces=edge_faces, fracture_edge_tags=edge_tags,
    )
    mesh.validate()
    return mesh.freeze()


def _tag_rectangle_boundary(vertices, face_verts, face_cells, box):
    x0, x1, y0, y1 = box
    tol = 1e-10 * max(x1 - x0, y1 - y0)
    tags = {}
    for f in range(face_verts.shape[0]):
        if face_cells[f, 1] >= 0:
            continue
        a, b = face_verts[f]
        pa, pb = vertices[a], vertices[b]
        key = frozenset((int(a), int(b)))
        if abs(pa[0] - x0) < tol and abs(pb[0] - x0) < tol:
            tags[key] = "left"
        elif abs(pa[0] - x1) < tol and abs(pb[0] - x1) < tol:
            tags[key] = "right"
        elif abs(pa[1] - y0) < tol and abs(pb[1] - y0) < tol:
            tags[key] = "bottom"
        elif abs(pa[1] - y1) < tol and abs(pb[1] - y1) < tol:
            tags[key] = "top"
        else:
            raise ValidationError("boundary face on no rectangle side")
    return tags


def generate_unit_square_mesh(refinement_index: int) -> MixedDimMesh:
    """Structured crossed-diagonal triangulation of the unit square.

    Index m gives a 2^m x 2^m grid of squares, each split along a diagonal
    whose direction alternates with the square's parity; the cell count is
    2 * 4^m and quadruples per index increment.
    """
    m = int(refinement_index)
    if not 1 <= m <= 8:
        raise ValueError("refinement index must be in 1..8")
    n = 2 ** m
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda i, j: j * (n + 1) + i
    verts = np.array([(xs[i], xs[j]) for j in range(n + 1) for i in range(n + 1)])
    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
            else:
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
    cells = np.asarray(cells, dtype=np.int64)
    # Two passes: connectivity first, then geometric boundary tagging.
    probe = build_mesh(verts, cells)
    tags = _tag_rectangle_boundary(probe.vertices, probe.face_verts,
                                   probe.face_cells, (0.0, 1.0, 0.0, 1.0))
    return build_mesh(verts, cells, boundary_tags=tags)


# ----------------------------------------------------------------------
# DFM mesh generation


def _seg_point_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _segments_conflict(a0, a1, b0, b1, tol) -> bool:
    """True when two segments touch anywhere except at shared endpoints."""
    shared = [np.allclose(x, y, atol=tol) for x in (a0, a1) for y in (b0, b1)]
    d = np.array([a1 - a0, b1 - b0])
    r = b0 - a0
    det = d[0, 0] * (-d[1, 1]) - (-d[1, 0]) * d[0, 1]
    if abs(det) > tol * max(1.0, np.abs(d).max() ** 2):
        t = (r[0] * (-d[1, 1]) - (-d[1, 0]) * r[1]) / det
        s = (d[0, 0] * r[1] - d[0, 1] * r[0]) / det
        eps = 1e-9
        if -eps <= t <= 1 + eps and -eps <= s <= 1 + eps:
            endpoint_hit = (t < eps or t > 1 - eps) and (s < eps or s > 1 - eps)
            return not (endpoint_hit and any(shared))
        return False
    # Parallel: conflict when overlapping beyond a shared endpoint.
    for p in (b0, b1):
        if _seg_point_distance(p, a0, a1) < tol and not any(
                np.allclose(p, q, atol=tol) for q in (a0, a1)):
            return True
    return False


def generate_dfm_mesh(geometry: FractureGeometrySpec, refinement_index: int = 0) -> MixedDimMesh:
    """Conforming triangulation whose edge set covers every fracture segment.

    Fracture segments are subdivided at the target spacing and their points
    protected from nearby background points, which makes each sub-segment a
    Gabriel edge and therefore an edge of the Delaunay triangulation.
    Refinement halves the spacing: cell count grows by ~4, fracture face
    count by 2 per index.
    """
    from scipy.spatial import Delaunay

    m = int(refinement_index)
    if m < 0:
        raise ValueError("refinement index must be >= 0")
    x0, x1, y0, y1 = geometry.domain
    h = geometry.base_spacing / (2 ** m)
    segs = geometry.segments
    tol = 1e-9 * max(x1 - x0, y1 - y0)

    for i in range(len(segs)):
        a0, a1 = segs[i, :2], segs[i, 2:]
        for pt in (a0, a1):
            if not (x0 - tol <= pt[0] <= x1 + tol and y0 - tol <= pt[1] <= y1 + tol):
                raise GeometryError(f"fracture endpoint {pt} outside the domain")
        for j in range(i + 1, len(segs)):
            if _segments_conflict(a0, a1, segs[j, :2], segs[j, 2:], tol):
                raise GeometryError(f"fracture segments {i} and {j} cross")

    # Deduplicated point pool; fracture points first so their indices are known.
    pool: list[np.ndarray] = []
    key_of: dict[tuple[int, int], int] = {}

    def add_point(p) -> int:
        key = (int(round(p[0] / tol)), int(round(p[1] / tol)))
        idx = key_of.get(key)
        if idx is None:
            idx = len(pool)
            key_of[key] = idx
            pool.append(np.asarray(p, dtype=float))
        return idx

    frac_chains: list[list[int]] = []
    for s in segs:
        a, b = s[:2], s[2:]
        nsub = max(1, int(round(np.linalg.norm(b - a) / h)))
        chain = [add_point(a + (b - a) * t) for t in np.linspace(0.0, 1.0, nsub + 1)]
        frac_chains.append(chain)
    n_frac_points = len(pool)
    frac_points = np.array(pool[:n_frac_points])

    def far_from_fractures(p, radius) -> bool:
        for s in segs:
            if _seg_point_distance(p, s[:2], s[2:]) < radius:
                return False
        return True

    guard = 0.55 * h
    for (ax, ay, bx, by) in ((x0, y0, x1, y0), (x1, y0, x1, y1),
                             (x1, y1, x0, y1), (x0, y1, x0, y0)):
        a, b = np.array([ax, ay]), np.array([bx, by])
        nseg = max(1, int(round(np.linalg.norm(b - a) / h)))
        for t in np.linspace(0.0, 1.0, nseg + 1):
            p = a + (b - a) * t
            if far_from_fractures(p, guard) or not far_from_fractures(p, tol):
                add_point(p)

    rng = np.random.default_rng(20240817 + m)
    nx = int(round((x1 - x0) / h))
    ny = int(round((y1 - y0) / h))
    for j in range(1, ny):
        for i in range(1, nx):
            p = np.array([x0 + i * h, y0 + j * h])
            p = p + rng.uniform(-0.12, 0.12, size=2) * h
            p[0] = min(max(p[0], x0 + 0.4 * h), x1 - 0.4 * h)
            p[1] = min(max(p[1], y0 + 0.4 * h), y1 - 0.4 * h)
            if far_from_fractures(p, guard):
                add_point(p)

    points = np.array(pool)
    tri = Delaunay(points)
    cells = tri.simplices.astype(np.int64)
    p = points[cells]
    area = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    cells = cells[np.abs(area) > 1e-12 * h * h]

    edge_set = set()
    for c in cells:
        for j in range(3):
            a, b = int(c[(j + 1) % 3]), int(c[(j + 2) % 3])
            edge_set.add((a, b) if a < b else (b, a))
    frac_pairs, frac_pair_ids = [], []
    for chain, fid in zip(frac_chains, geometry.fracture_ids):
        for a, b in zip(chain[:-1], chain[1:]):
            key = (a, b) if a < b else (b, a)
            if key not in edge_set:
                raise GeometryError(
                    f"triangulation failed to recover a sub-segment of fracture {fid}; "
                    "refine the spacing or separate nearby fractures")
            frac_pairs.append(key)
            frac_pair_ids.append(int(fid))

    probe = build_mesh(points, cells)
    tags = _tag_rectangle_boundary(probe.vertices, probe.face_verts,
                                   probe.face_cells, geometry.domain)
    return build_mesh(points, cells, frac_pairs, frac_pair_ids, boundary_tags=tags)


# ----------------------------------------------------------------------
# plain-text persistence


def save_mesh(mesh: MixedDimMesh, path) -> None:
    lines = ["thmmesh 1"]
    lines.append(f"vertices {mesh.vertices.shape[0]}")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"cells {mesh.n_cells}")
    for i, j, k in mesh.cells:
        lines.append(f"{i} {j} {k}")
    lines.append(f"fracture_faces {mesh.n_fracture_faces}")
    for pos, f in enumerate(mesh.fracture_faces):
        a, b = mesh.face_verts[f]
        lines.append(f"{a} {b} {mesh.fracture_id[pos]}")
    tagged = [f for f in range(mesh.n_faces) if mesh.boundary_tag[f] is not None]
    lines.append(f"boundary {len(tagged)}")
    for f in tagged:
        a, b = mesh.face_verts[f]
        lines.append(f"{a} {b} {mesh.boundary_tag[f]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> MixedDimMesh:
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip()]
    if not lines or lines[0][1].split() != ["thmmesh", "1"]:
        raise ParseError("expected header 'thmmesh 1'", line=1)
    pos = 1

    def block(name, ncols, conv):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"missing block '{name}'", line=lines[-1][0])
        lineno, head = lines[pos]
        parts = head.split()
        if len(parts) != 2 or parts[0] != name:
            raise ParseError(f"expected block header '{name} N'", line=lineno)
        try:
            count = int(parts[1])
        except ValueError:
            raise ParseError(f"bad count in block '{name}'", line=lineno) from None
        pos += 1
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise ParseError(f"truncated block '{name}'", line=lines[-1][0])
            lineno, ln = lines[pos]
            items = ln.split()
            if len(items) != ncols:
                raise ParseError(f"expected {ncols} columns in '{name}'", line=lineno)
            try:
                rows.append(conv(items))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            pos += 1
        return rows, lineno if count else lines[pos - 1][0]

    verts, _ = block("vertices", 2, lambda it: (float(it[0]), float(it[1])))
    cell_rows, cell_line = block("cells", 3, lambda it: tuple(int(v) for v in it))
    frac_rows, _ = block("fracture_faces", 3, lambda it: (int(it[0]), int(it[1]), int(it[2])))
    bnd_rows, _ = block("boundary", 3, lambda it: (int(it[0]), int(it[1]), it[2]))

    nv = len(verts)
    for c in cell_rows:
        if len(set(c)) != 3:
            raise ParseError(f"cell with duplicate vertex indices {c}", line=cell_line)
        if any(v < 0 or v >= nv for v in c):
            raise ParseError(f"cell vertex index out of range {c}", line=cell_line)

    tags = {frozenset((a, b)): tag for a, b, tag in bnd_rows}
    return build_mesh(np.asarray(verts), np.asarray(cell_rows, dtype=np.int64),
                      [(a, b) for a, b, _ in frac_rows],
                      [fid for _, _, fid in frac_rows], boundary_tags=tags)
