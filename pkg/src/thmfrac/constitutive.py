"""Thermo-poro-elastic rock laws: porosity and skeleton-entropy updates,
fracture aperture, stress tensors, and the stored skeleton energy.

All updates are linear in the state increments, so summing them over time
steps telescopes exactly: the final porosity depends on the total increment,
not on the step partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class RockParameters:
    """Material constants of the skeleton and the coupling laws.

    The coupling matrix [[1/N, -a_phi], [-a_phi, C_s/T_ref]] must be
    positive definite; construction aborts otherwise.  Permeability and
    the matrix conductivity are constants here; the accessor methods keep
    the porosity argument as the extension point for state-dependent laws.
    """

    young_modulus: float
    poisson_ratio: float
    biot_coefficient: float
    biot_modulus: float
    bulk_modulus: float
    thermal_dilation_skeleton: float      # volumetric, 1/K
    thermal_dilation_porosity: float      # 1/K
    heat_capacity_skeleton: float         # J/m^3/K
    reference_temperature: float          # K
    initial_porosity: float
    contact_aperture: float = 5.0e-4      # m, aperture at contact state
    friction: float = 0.0
    inertial_density: float = 0.0         # kg/m^3, zero = quasi-static
    permeability: np.ndarray = field(default_factory=lambda: np.eye(2))  # m^2
    conductivity_matrix: float = 1.0      # W/m/K
    fracture_conductivity: float = 2.0    # W/m/K, scaled by the aperture

    def __post_init__(self):
        object.__setattr__(self, "permeability",
                           np.asarray(self.permeability, dtype=float).reshape(2, 2))
        if self.young_modulus <= 0 or not 0 <= self.poisson_ratio < 0.5:
            raise ValidationError("need E > 0 and Poisson ratio in [0, 1/2)")
        if self.biot_modulus <= 0:
            raise ValidationError("Biot modulus must be positive")
        if self.contact_aperture <= 0:
            raise ValidationError("contact aperture must be positive")
        if self.friction < 0:
            raise ValidationError("friction coefficient must be non-negative")
        M = self.coupling_matrix()
        if np.linalg.det(M) <= 0 or M[0, 0] <= 0:
            raise ValidationError(
                "coupling matrix [[1/N, -a_phi], [-a_phi, C_s/T_ref]] not positive definite")
        w = np.linalg.eigvalsh(0.5 * (self.permeability + self.permeability.T))
        if np.any(w < 0):
            raise ValidationError("permeability tensor must be positive semidefinite")

    @property
    def lame_mu(self) -> float:
        return self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson_ratio
        return self.young_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def coupling_matrix(self) -> np.ndarray:
        a = self.thermal_dilation_porosity
        return np.array([[1.0 / self.biot_modulus, -a],
                         [-a, self.heat_capacity_skeleton / self.reference_temperature]])

    def permeability_tensor(self, porosity=None) -> np.ndarray:
        return self.permeability

    def matrix_conductivity(self, porosity=None) -> float:
        return self.conductivity_matrix

    def fracture_conductivity_of(self, aperture) -> np.ndarray:
        """Integrated tangential conductivity (W/K) of a fracture of the
        given aperture; scales linearly with the opening like the
        equi-dimensional average."""
        return self.fracture_conductivity * np.asarray(aperture, dtype=float)

    @staticmethod
    def poiseuille_conductivity(aperture) -> np.ndarray:
        """Cubic-law tangential hydraulic conductivity d_f^3 / 12 (m^3)."""
        d = np.asarray(aperture, dtype=float)
        return d ** 3 / 12.0


@dataclass
class PoroState:
    """Cellwise porosity and skeleton entropy plus facewise aperture at one
    time level; published snapshots are immutable."""

    porosity: np.ndarray          # (n_cells,)
    skeleton_entropy: np.ndarray  # (n_cells,) J/m^3/K
    aperture: np.ndarray          # (n_fracture_faces,) m

    def freeze(self) -> "PoroState":
        for a in (self.porosity, self.skeleton_entropy, self.aperture):
            a.setflags(write=False)
        return self


def update_porosity(porosity_prev, dp, dT, ddiv, rock: RockParameters) -> np.ndarray:
    """New cellwise porosity from the increments of p, T and the cell-mean
    displacement divergence over one step."""
    return (np.asarray(porosity_prev, dtype=float)
            + rock.biot_coefficient * np.asarray(ddiv, dtype=float)
            - rock.thermal_dilation_porosity * np.asarray(dT, dtype=float)
            + np.asarray(dp, dtype=float) / rock.biot_modulus)


def update_skeleton_entropy(entropy_prev, dp, dT, ddiv, rock: RockParameters) -> np.ndarray:
    return (np.asarray(entropy_prev, dtype=float)
            + rock.thermal_dilation_skeleton * rock.bulk_modulus * np.asarray(ddiv, dtype=float)
            - rock.thermal_dilation_porosity * np.asarray(dp, dtype=float)
            + rock.heat_capacity_skeleton / rock.reference_temperature
            * np.asarray(dT, dtype=float))


def aperture(mesh, mech_state, d0=None) -> np.ndarray:
    """Facewise aperture d0 minus the face-averaged normal displacement jump.

    The jump average uses two-point Gauss quadrature on each fracture face,
    exact for the quadratic displacement trace.
    """
    jumps = mech_state.face_average_jump()           # (nfrac, 2)
    normal = mesh.fracture_normal
    jn = np.einsum("fd,fd->f", jumps, normal)
    if d0 is None:
        d0 = mech_state.contact_aperture
    return np.asarray(d0) - jn


def effective_stress(rock: RockParameters, strain: np.ndarray) -> np.ndarray:
    """Cellwise effective stress 2 mu eps + lambda tr(eps) I from cellwise
    (cell-averaged) strain tensors of shape (n, 2, 2)."""
    strain = np.asarray(strain, dtype=float)
    tr = np.trace(strain, axis1=-2, axis2=-1)
    eye = np.eye(2)
    return 2.0 * rock.lame_mu * strain + rock.lame_lambda * tr[..., None, None] * eye


def total_stress(rock: RockParameters, strain, p, T) -> np.ndarray:
    """Total stress: effective stress minus Biot pressure and thermal parts."""
    sig = effective_stress(rock, strain)
    coupling = (rock.biot_coefficient * np.asarray(p, dtype=float)
                + rock.thermal_dilation_skeleton * rock.bulk_modulus
                * (np.asarray(T, dtype=float) - rock.reference_temperature))
    return sig - coupling[..., None, None] * np.eye(2)


def discrete_skeleton_energy(rock: RockParameters, mesh, p_cells, T_cells,
                             mech_state) -> tuple[np.ndarray, float]:
    """Stored skeleton energy density per cell and its integral (J).

    Combines the pressure-temperature quadratic form (cellwise constants,
    exact), the linear thermal-divergence term, and the elastic energy
    integrated with quadrature exact for quadratic displacement fields.
    """
    pT = np.column_stack([np.asarray(p_cells, dtype=float),
                          np.asarray(T_cells, dtype=float)])
    M = rock.coupling_matrix()
    quad_density = 0.5 * np.einsum("ci,ij,cj->c", pT, M, pT)
    div_int = mech_state.div_integral_per_cell()
    elastic_int = mech_state.elastic_energy_per_cell(rock.lame_mu, rock.lame_lambda)
    lin = rock.thermal_dilation_skeleton * rock.bulk_modulus * rock.reference_temperature
    density = quad_density + (lin * div_int + elastic_int) / mesh.cell_area
    total = float(np.dot(quad_density, mesh.cell_area) + lin * div_int.sum()
                  + elastic_int.sum())
    return density, total
