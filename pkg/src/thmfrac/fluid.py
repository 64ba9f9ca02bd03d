"""Fluid thermodynamics: density, internal energy, enthalpy, viscosity.

Three variants cover the simulated regimes: an incompressible fluid with
linear internal energy (manufactured-solution runs), a weakly compressible
liquid, and a perfect gas.  All variants satisfy h = e + p / rho identically
and provide hand-differentiated partial derivatives for the flow Jacobian;
the test suite checks the derivatives against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_UNBOUNDED = (-np.inf, np.inf)


@dataclass(frozen=True)
class EosValues:
    """Fluid properties and partial derivatives at a batch of (p, T) points."""

    rho: np.ndarray
    e: np.ndarray
    h: np.ndarray
    eta: np.ndarray
    drho_dp: np.ndarray
    drho_dT: np.ndarray
    de_dp: np.ndarray
    de_dT: np.ndarray
    dh_dp: np.ndarray
    dh_dT: np.ndarray


@dataclass(frozen=True)
class FluidModel:
    """One equation-of-state variant plus its constants.

    The admissible (p, T) box is enforced on evaluation: leaving it raises
    DomainError, which the flow Newton treats as a request to damp the
    update rather than extrapolate silently.
    """

    variant: str
    viscosity_value: float
    p_box: tuple[float, float] = _UNBOUNDED
    T_box: tuple[float, float] = _UNBOUNDED
    constants: dict = field(default_factory=dict)

    def admissible(self, p, T) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        T = np.asarray(T, dtype=float)
        ok = (p >= self.p_box[0]) & (p <= self.p_box[1]) \
            & (T >= self.T_box[0]) & (T <= self.T_box[1])
        if self.variant == "weakly-compressible-liquid":
            c = self.constants
            denom = 1.0 - (p - c["p_ref"]) / c["K_f"] + c["alpha_f"] * (T - c["T_ref"])
            ok = ok & (denom > 0.0) & (T > 0.0)
        elif self.variant == "perfect-gas":
            ok = ok & (T > 0.0) & (p > 0.0)
        return ok

    def _check(self, p, T) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        T = np.asarray(T, dtype=float)
        ok = self.admissible(p, T)
        if not np.all(ok):
            bad = np.argwhere(~np.atleast_1d(ok))
            i = tuple(bad[0]) if bad.size else ()
            pv = np.atleast_1d(p)[i] if np.atleast_1d(p).size > 1 else float(p)
            Tv = np.atleast_1d(T)[i] if np.atleast_1d(T).size > 1 else float(T)
            raise DomainError(
                f"{self.variant}: state outside admissible box, e.g. p={pv}, T={Tv}")
        return p, T

    def evaluate(self, p, T) -> EosValues:
        """All properties and derivatives at (p, T); shapes broadcast."""
        p, T = self._check(p, T)
        c = self.constants
        eta = np.broadcast_to(np.float64(self.viscosity_value), np.broadcast(p, T).shape).copy()
        if self.variant == "incompressible-linear-e":
            one = np.ones_like(p + T)
            zero = np.zeros_like(one)
            rho = one
            e = T * one
            h = e + p / rho
            return EosValues(rho, e, h, eta, zero, zero, zero, one.copy(),
                             one.copy(), one.copy())
        if self.variant == "weakly-compressible-liquid":
            rr, Kf, af, Cf = c["rho_ref"], c["K_f"], c["alpha_f"], c["C_f"]
            pr, Tr = c["p_ref"], c["T_ref"]
            denom = 1.0 - (p - pr) / Kf + af * (T - Tr)
            rho = rr / denom
            drho_dp = rr / (Kf * denom**2)
            drho_dT = -rr * af / denom**2
            e = Cf * T - (af / rr) * ((p - pr) * Tr + p * (T - Tr)) \
                + (p**2 - pr**2) / (2.0 * rr * Kf)
            de_dp = -(af / rr) * T + p / (rr * Kf)
            de_dT = (Cf - af * p / rr) * np.ones_like(denom)
            h = e + p * denom / rr
            dh_dp = de_dp + (denom - p / Kf) / rr
            dh_dT = Cf * np.ones_like(denom)
            return EosValues(rho, e, h, eta, drho_dp, drho_dT, de_dp, de_dT,
                             dh_dp, dh_dT)
        if self.variant == "perfect-gas":
            Mf, R, Cf = c["M_f"], c["R"], c["C_f"]
            rho = Mf * p / (R * T)
            drho_dp = Mf / (R * T) * np.ones_like(rho)
            drho_dT = -Mf * p / (R * T**2)
            h = Cf * T * np.ones_like(rho)
            e = h - R * T / Mf
            zero = np.zeros_like(rho)
            de_dT = (Cf - R / Mf) * np.ones_like(rho)
            dh_dT = Cf * np.ones_like(rho)
            return EosValues(rho, e, h, eta, drho_dp, drho_dT, zero.copy(),
                             de_dT, zero.copy(), dh_dT)
        raise ValueError(f"unknown fluid variant {self.variant!r}")

    # Scalar-friendly accessors used by tests and presets.
    def density(self, p, T):
        return self.evaluate(p, T).rho

    def internal_energy(self, p, T):
        return self.evaluate(p, T).e

    def specific_enthalpy(self, p, T):
        return self.evaluate(p, T).h

    def viscosity(self, p=None, T=None):
        return self.viscosity_value


def incompressible_linear(viscosity: float = 1.0) -> FluidModel:
    """Unit-density fluid with e(T) = T; used by the manufactured runs."""
    return FluidModel(variant="incompressible-linear-e", viscosity_value=viscosity)


def weakly_compressible_liquid(T_ref: float = 300.0, p_ref: float = 1.0e5,
                               rho_ref: float = 1.0e3, K_f: float = 2.18e9,
                               alpha_f: float = 2.07e-4, C_f: float = 4180.0,
                               viscosity: float = 1.0e-3) -> FluidModel:
    # The lower pressure bound admits the suction that the undrained
    # response of a sheared, fractured domain produces; the density
    # denominator stays positive far below it.
    return FluidModel(
        variant="weakly-compressible-liquid",
        viscosity_value=viscosity,
        p_box=(-5.0e7, 5.0e7),
        T_box=(250.0, 400.0),
        constants={"T_ref": T_ref, "p_ref": p_ref, "rho_ref": rho_ref,
                   "K_f": K_f, "alpha_f": alpha_f, "C_f": C_f},
    )


def perfect_gas(C_f: float = 1000.0, M_f: float = 28.9645e-3,
                R: float = 8.3149, viscosity: float = 1.72e-5) -> FluidModel:
    return FluidModel(
        variant="perfect-gas",
        viscosity_value=viscosity,
        p_box=(1.0e3, 5.0e7),
        T_box=(200.0, 500.0),
        constants={"C_f": C_f, "M_f": M_f, "R": R},
    )
