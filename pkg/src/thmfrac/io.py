"""Output writers (legacy VTK, CSV time series) and the run-configuration
file format (INI-style sections)."""

from __future__ import annotations

import configparser
import io as _io

import numpy as np

from .errors import ParseError


def write_vtk(mesh, path, cell_data=None, point_data=None, title="thmfrac output"):
    """Legacy ASCII VTK unstructured grid with triangle cells.

    cell_data / point_data: dicts name -> array; vector point data has
    shape (n_points, 2) and is padded to 3D.
    """
    lines = ["# vtk DataFile Version 2.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    nv = mesh.vertices.shape[0]
    lines.append(f"POINTS {nv} double")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r} 0.0")
    nc = mesh.n_cells
    lines.append(f"CELLS {nc} {4 * nc}")
    for tri in mesh.cells:
        lines.append("3 " + " ".join(str(int(v)) for v in tri))
    lines.append(f"CELL_TYPES {nc}")
    lines.extend(["5"] * nc)
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr, dtype=float)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in arr)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{float(a)!r} {float(b)!r} 0.0" for a, b in arr)
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(repr(float(v)) for v in arr)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fracture_vtk(mesh, path, face_data=None, title="fracture network"):
    """Fracture faces as a VTK polyline set with facewise data (aperture,
    multipliers, contact state)."""
    frac = mesh.fracture_faces
    used = sorted({int(v) for f in frac for v in mesh.face_verts[f]})
    remap = {v: i for i, v in enumerate(used)}
    lines = ["# vtk DataFile Version 2.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(used)} double"]
    for v in used:
        x, y = mesh.vertices[v]
        lines.append(f"{float(x)!r} {float(y)!r} 0.0")
    lines.append(f"CELLS {len(frac)} {3 * len(frac)}")
    for f in frac:
        a, b = mesh.face_verts[f]
        lines.append(f"2 {remap[int(a)]} {remap[int(b)]}")
    lines.append(f"CELL_TYPES {len(frac)}")
    lines.extend(["3"] * len(frac))
    if face_data:
        lines.append(f"CELL_DATA {len(frac)}")
        for name, arr in face_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in np.asarray(arr, dtype=float))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(series: dict, path) -> None:
    """Header row + one line per sample; floats carry full precision so a
    read-back reproduces them bit-exactly."""
    keys = list(series)
    n = len(series[keys[0]]) if keys else 0
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for i in range(n):
            fh.write(",".join(repr(float(series[k][i]))
                              if isinstance(series[k][i], (float, np.floating))
                              else str(series[k][i]) for k in keys) + "\n")


def read_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            return {}
        keys = header.split(",")
        out = {k: [] for k in keys}
        for line in fh:
            if not line.strip():
                continue
            for k, v in zip(keys, line.strip().split(",")):
                try:
                    out[k].append(int(v))
                except ValueError:
                    out[k].append(float(v))
    return out


# ----------------------------------------------------------------------
# run configuration files

_DEFAULTS = {
    "scenario": {"kind": "dfm", "fluid": "liquid", "scheme": "H",
                 "convection": "upwind", "vgradp_correction": "false",
                 "mesh_index": "0", "rock": "paper-table2"},
    "solver": {"newton_tol": "1e-10", "newton_max_iter": "40",
               "contact_tol": "1e-10", "contact_max_iter": "60",
               "fixed_point_tol": "1e-10", "acceleration": "anderson"},
    "output": {"directory": "out", "vtk_stride": "0"},
}


def parse_config(text_or_path, from_string=False) -> dict:
    """Read an INI-style run configuration into a nested dict of strings."""
    cp = configparser.ConfigParser()
    try:
        if from_string:
            cp.read_string(text_or_path)
        else:
            with open(text_or_path) as fh:
                cp.read_string(fh.read())
    except configparser.Error as exc:
        raise ParseError(str(exc)) from exc
    out = {}
    for section, defaults in _DEFAULTS.items():
        out[section] = dict(defaults)
        if cp.has_section(section):
            out[section].update({k: v for k, v in cp.items(section)})
    for section in cp.sections():
        if section not in out:
            out[section] = dict(cp.items(section))
    return out


def serialize_config(config: dict) -> str:
    cp = configparser.ConfigParser()
    for section, table in config.items():
        cp.add_section(section)
        for k, v in table.items():
            cp.set(section, k, str(v))
    buf = _io.StringIO()
    cp.write(buf)
    return buf.getvalue()
