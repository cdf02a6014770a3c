"""Battery-to-wheel coupling with a single average efficiency."""
from __future__ import annotations

from dataclasses import dataclass

from .exceptions import ConfigurationError
from .symbolic import ops


@dataclass(frozen=True)
class PowertrainParams:
    eta: float = 0.87
    beta_eta: float = 5.0
    # Optional bound on |T_br| for power-limited mechanical brakes, non-convex path only
    brake_torque_max: float | None = None

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigurationError("powertrain.eta must lie in (0, 1)")
        if not self.beta_eta > 0:
            raise ConfigurationError("powertrain.beta_eta must be positive")
        if self.brake_torque_max is not None and not self.brake_torque_max >= 0:
            raise ConfigurationError("powertrain.brake_torque_max must be non-negative")


@dataclass(frozen=True)
class TorqueSplit:
    T_m: float
    T_br: float

    def __post_init__(self):
        if self.T_br > 0:
            raise ConfigurationError("brake torque must be non-positive")

    @property
    def T_w(self) -> float:
        return self.T_m + self.T_br


def smoothed_efficiency(I_b, params: PowertrainParams):
    """eta for discharge, 1/eta for charge, blended by tanh; equals (eta + 1/eta)/2 at I_b = 0."""
    o = ops(I_b)
    inv = 1.0 / params.eta
    return 0.5 * (inv + params.eta) + 0.5 * (inv - params.eta) * o.tanh(-params.beta_eta * I_b)


def coupling_residual(T_m, v, V_b, I_b, params: PowertrainParams, R_w: float):
    return T_m * v / R_w - V_b * I_b * smoothed_efficiency(I_b, params)


def convex_coupling_residuals(T_w, F_b, params: PowertrainParams, R_w: float):
    return T_w / R_w - params.eta * F_b, T_w / R_w - F_b / params.eta


def recover_brake_torque(T_w, F_b, params: PowertrainParams, R_w: float):
    return T_w - (R_w / params.eta) * F_b
