"""
Point-mass longitudinal dynamics and friction-ellipse limits.

Every function works on floats, numpy arrays and casadi columns alike, so the
transcription and the numeric diagnostics evaluate the same expressions. Slope and
curvature arguments are track data: numpy or casadi DM, never symbolic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .symbolic import is_symbolic, ops


@dataclass(frozen=True)
class VehicleParams:
    M_v: float = 426.0
    R_w: float = 0.3454
    C_drag: float = 0.3927
    C_down: float = 0.9526
    C_roll: float = 0.015
    mu_x: float = 1.2
    mu_y: float = 1.2
    g: float = 9.81
    v0: float = 1.0
    v_floor: float = 1.0
    v_cap: float = 100.0

    def __post_init__(self):
        for name in ("M_v", "R_w", "g", "v_floor", "v_cap"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"vehicle.{name} must be positive")
        # Zero resistances are allowed for analytic checks
        for name in ("C_drag", "C_down", "C_roll"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"vehicle.{name} must be non-negative")
        for name in ("mu_x", "mu_y"):
            if not 0 < getattr(self, name) <= 3:
                raise ConfigurationError(f"vehicle.{name} must lie in (0, 3]")
        if self.v0 < self.v_floor:
            raise ConfigurationError("vehicle.v0 must be at least vehicle.v_floor")
        if self.v_cap <= self.v_floor:
            raise ConfigurationError("vehicle.v_cap must exceed vehicle.v_floor")

    @property
    def resistance(self) -> float:
        """Speed-squared resistance: aerodynamic drag plus downforce-induced rolling."""
        return self.C_drag + self.C_roll * self.C_down

    def total_mass(self, M_b: float) -> float:
        return self.M_v + M_b


@dataclass(frozen=True)
class LongitudinalState:
    v: float
    E_kin: float
    dtds: float

    @classmethod
    def from_speed(cls, v: float, M: float) -> "LongitudinalState":
        return cls(v=v, E_kin=0.5 * M * v**2, dtds=1.0 / v)


def _check_floor(v, params: VehicleParams) -> None:
    if is_symbolic(v):
        return
    arr = np.asarray(v, dtype=float)
    if np.any(arr < params.v_floor * (1 - 1e-12)):
        raise DomainError(f"speed {float(np.min(arr)):.6g} m/s below floor {params.v_floor} m/s")


def grade_force(theta, M: float, params: VehicleParams):
    o = ops(theta)
    return M * params.g * (o.sin(theta) + params.C_roll * o.cos(theta))


def speed_derivative(v, T_w, theta, M: float, params: VehicleParams):
    _check_floor(v, params)
    return (T_w / params.R_w - params.resistance * v**2 - grade_force(theta, M, params)) / (M * v)


def kinetic_derivative(E_kin, T_w, theta, M: float, params: VehicleParams):
    return T_w / params.R_w - (2.0 / M) * params.resistance * E_kin - grade_force(theta, M, params)


def friction_ellipse_residual(T_w, v, rho, theta, M: float, params: VehicleParams):
    o = ops(theta)
    longitudinal = T_w / (params.mu_x * params.R_w)
    lateral = M * rho * v**2 / params.mu_y
    vertical = M * params.g * o.cos(theta) + params.C_down * v**2
    return longitudinal**2 + lateral**2 - vertical**2


def ellipse_cone_terms(T_w, E_kin, rho, theta, M: float, params: VehicleParams):
    """Norm form in kinetic energy: ||(u1, u2)|| <= t."""
    o = ops(theta)
    t = M * params.g * o.cos(theta) + (2.0 / M) * params.C_down * E_kin
    return t, (T_w / (params.mu_x * params.R_w), 2.0 * rho * E_kin / params.mu_y)


def lethargy_cone_terms(v, dtds, v_bar: float = 1.0):
    """||(2, v/v_bar - v_bar*dtds)|| <= v/v_bar + v_bar*dtds, i.e. v*dtds >= 1."""
    two = 2.0 + 0.0 * v
    return v / v_bar + v_bar * dtds, (two, v / v_bar - v_bar * dtds)


def kinetic_relaxation_terms(v, E_kin, M: float, v_ref: float):
    """E_kin >= M*v^2/2 as a rotated cone with a = 2E/(M*v_ref), b = v_ref."""
    a = 2.0 * E_kin / (M * v_ref)
    return a + v_ref, (2.0 * v, a - v_ref)


def max_cornering_speed(rho, theta, M: float, params: VehicleParams):
    rho = np.abs(np.asarray(rho, dtype=float))
    theta = np.asarray(theta, dtype=float)
    denom = M * rho / params.mu_y - params.C_down
    with np.errstate(divide="ignore", invalid="ignore"):
        v2 = np.where(denom > 0, M * params.g * np.cos(theta) / denom, np.inf)
    v = np.minimum(np.sqrt(v2), params.v_cap)
    return float(v) if v.ndim == 0 else v
