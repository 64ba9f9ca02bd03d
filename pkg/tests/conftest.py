import numpy as np
import pytest

from thmfrac import fluid as fluidmod
from thmfrac.constitutive import RockParameters
from thmfrac.flow import FlowConfig, FlowSystem, LevelState, MeshFlowOps
from thmfrac.mesh import FractureGeometrySpec, generate_dfm_mesh, generate_unit_square_mesh


def table1_rock(permeability=1.0):
    return RockParameters(
        young_modulus=2.5, poisson_ratio=0.25, biot_coefficient=1.0,
        biot_modulus=0.25, bulk_modulus=2.0, thermal_dilation_skeleton=1.0,
        thermal_dilation_porosity=1.0, heat_capacity_skeleton=0.5,
        reference_temperature=1.0, initial_porosity=4.0, contact_aperture=5e-4,
        friction=0.0, permeability=permeability * np.eye(2),
        conductivity_matrix=0.1, fracture_conductivity=0.1)


FLUID_BOX = {
    "incompressible-linear-e": ((0.0, 1.0), (0.8, 3.0)),
    "weakly-compressible-liquid": ((5.0e4, 5.0e6), (270.0, 330.0)),
    "perfect-gas": ((5.0e4, 5.0e5), (260.0, 340.0)),
}


def random_level(mesh, fluid_model, rng, rock):
    (p0, p1), (T0, T1) = FLUID_BOX[fluid_model.variant]
    N = mesh.n_entities
    return LevelState(
        pressure=rng.uniform(p0, p1, N),
        temperature=rng.uniform(T0, T1, N),
        porosity=rng.uniform(0.5, 1.5, mesh.n_cells) * rock.initial_porosity,
        entropy=rng.uniform(-1.0, 1.0, mesh.n_cells),
        aperture=rng.uniform(0.5, 2.0, mesh.n_fracture_faces) * rock.contact_aperture,
        div_mean=rng.uniform(-1e-3, 1e-3, mesh.n_cells),
    )


def uniform_level(mesh, p, T, rock):
    N = mesh.n_entities
    return LevelState(
        pressure=np.full(N, float(p)), temperature=np.full(N, float(T)),
        porosity=np.full(mesh.n_cells, rock.initial_porosity),
        entropy=np.zeros(mesh.n_cells),
        aperture=np.full(mesh.n_fracture_faces, rock.contact_aperture),
        div_mean=np.zeros(mesh.n_cells),
    )


def make_system(mesh, fluid_model, rock, config, prev, dt=0.25, t_new=0.25,
                aperture_new=None, div_mean_new=None, ops=None):
    ops = ops or MeshFlowOps(mesh)
    if aperture_new is None:
        aperture_new = prev.aperture
    if div_mean_new is None:
        div_mean_new = prev.div_mean
    return FlowSystem(mesh, ops, rock, fluid_model, config, dt, t_new, prev,
                      aperture_new, div_mean_new)


@pytest.fixture(scope="session")
def square_mesh():
    return generate_unit_square_mesh(2)


@pytest.fixture(scope="session")
def single_frac_mesh():
    spec = FractureGeometrySpec(segments=[[0.25, 1.0, 0.75, 1.0]],
                                fracture_ids=[0], base_spacing=1.0 / 8.0)
    return generate_dfm_mesh(spec, 0)


def demo_six_fracture_spec():
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
                                domain=(0.0, 1.0, 0.0, 2.0), base_spacing=1.0 / 16.0)


@pytest.fixture(scope="session")
def six_frac_mesh():
    return generate_dfm_mesh(demo_six_fracture_spec(), 0)


FLUIDS = {
    "incompressible-linear-e": fluidmod.incompressible_linear(),
    "weakly-compressible-liquid": fluidmod.weakly_compressible_liquid(),
    "perfect-gas": fluidmod.perfect_gas(),
}
