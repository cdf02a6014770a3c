from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import BatteryStateError, ConfigurationError, DomainError
from .symbolic import fmax, is_symbolic

AH_TO_AS = 3600.0


class BatteryModelKind(str, Enum):
    VN_R = "vn-r"
    VSOC_R = "vsoc-r"
    VSOC_RC = "vsoc-rc"

    @property
    def label(self) -> str:
        return {"vn-r": "Vn-R", "vsoc-r": "VSoC-R", "vsoc-rc": "VSoC-RC"}[self.value]


@dataclass(frozen=True, eq=False)
class OcvCurve:
    """Cell open-circuit voltage against SoC, piecewise linear between breakpoints."""

    zeta: np.ndarray
    v_oc: np.ndarray

    def __post_init__(self):
        zeta = np.array(self.zeta, dtype=float)
        v_oc = np.array(self.v_oc, dtype=float)
        if zeta.ndim != 1 or zeta.shape != v_oc.shape or len(zeta) < 2:
            raise ConfigurationError("OCV table needs at least two (zeta, v_oc) rows")
        if np.any(np.diff(zeta) <= 0):
            raise ConfigurationError("OCV breakpoints must be strictly increasing in zeta")
        if abs(zeta[0]) > 1e-12 or abs(zeta[-1] - 1.0) > 1e-12:
            raise ConfigurationError("OCV breakpoints must cover zeta in [0, 1]")
        if np.any(np.diff(v_oc) < 0):
            raise ConfigurationError("OCV must be non-decreasing in zeta")
        zeta.setflags(write=False)
        v_oc.setflags(write=False)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "v_oc", v_oc)

    @classmethod
    def constant(cls, v_n: float) -> "OcvCurve":
        return cls(zeta=np.array([0.0, 1.0]), v_oc=np.array([v_n, v_n]))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.v_oc == self.v_oc[0]))

    def mean(self) -> float:
        return float(trapezoid(self.v_oc, self.zeta))

    def cell_voltage(self, zeta):
        if not is_symbolic(zeta):
            return np.interp(zeta, self.zeta, self.v_oc)
        if self.is_constant:
            return float(self.v_oc[0]) + 0.0 * zeta
        # Sum of ramps: exact piecewise-linear interpolation on [0, 1]
        slopes = np.diff(self.v_oc) / np.diff(self.zeta)
        out = float(self.v_oc[0]) + float(slopes[0]) * (zeta - float(self.zeta[0]))
        for knot, change in zip(self.zeta[1:-1], np.diff(slopes)):
            if change != 0.0:
                out = out + float(change) * fmax(zeta - float(knot), 0.0)
        return out


@dataclass(frozen=True)
class RcPair:
    r1: float
    c1: float

    @property
    def time_constant(self) -> float:
        return self.r1 * self.c1


@dataclass(frozen=True, eq=False)
class CellParams:
    q_cell: float
    m_cell: float
    v_n: float
    v_min: float
    v_max: float
    i_min: float
    i_max: float
    r0_cell: float
    ocv: OcvCurve
    rc_pairs: dict[str, RcPair] = field(default_factory=dict)
    name: str = "cell"

    def __post_init__(self):
        for attr in ("q_cell", "m_cell", "v_n", "v_max", "i_max", "r0_cell"):
            if not getattr(self, attr) > 0:
                raise ConfigurationError(f"cell.{attr} must be positive")
        if not self.v_min < self.v_n < self.v_max:
            raise ConfigurationError("cell voltages must satisfy v_min < v_n < v_max")
        if not self.i_min < 0 < self.i_max:
            raise ConfigurationError("cell currents must satisfy i_min < 0 < i_max")
        if self.ocv.v_oc[0] < self.v_min - 1e-12 or self.ocv.v_oc[-1] > self.v_max + 1e-12:
            raise ConfigurationError("OCV table leaves the [v_min, v_max] window")
        for key, pair in self.rc_pairs.items():
            if not (pair.r1 > 0 and pair.c1 > 0):
                raise ConfigurationError(f"RC set {key}: r1 and c1 must be positive")

    def select_rc(self, name: str = "auto") -> tuple[str, RcPair]:
        """RC pair by name; `auto` picks the slowest one (largest r1*c1)."""
        if not self.rc_pairs:
            raise ConfigurationError(f"cell {self.name} defines no RC sets")
        if name == "auto":
            name = max(self.rc_pairs, key=lambda k: self.rc_pairs[k].time_constant)
        if name not in self.rc_pairs:
            raise ConfigurationError(f"unknown RC set {name!r}; available: {', '.join(sorted(self.rc_pairs))}")
        return name, self.rc_pairs[name]


@dataclass(frozen=True)
class PackConfig:
    N_s: int
    N_p: int
    alpha: float = 0.8

    def __post_init__(self):
        if int(self.N_s) < 1 or int(self.N_p) < 1:
            raise ConfigurationError("N_s and N_p must be positive integers")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("packaging factor alpha must lie in (0, 1]")

    @staticmethod
    def series_for_voltage(V_max: float, v_max_cell: float) -> int:
        return int(math.floor(V_max / v_max_cell + 1e-9))


@dataclass(frozen=True, eq=False)
class PackParams:
    N_s: int
    N_p: int
    V_n: float
    R0: float
    Q_b: float
    M_b: float
    I_min_pack: float
    I_max_pack: float
    V_min_pack: float
    V_max_pack: float
    P_b_min: float
    P_b_max: float
    E_b_max: float
    ocv: OcvCurve
    R1: float | None = None
    C1: float | None = None
    rc_set: str | None = None

    def __post_init__(self):
        # Limit ordering is deliberately not checked: contradictory limits are a solver-level infeasibility
        for attr in ("V_n", "R0", "Q_b", "M_b"):
            if not getattr(self, attr) > 0:
                raise ConfigurationError(f"pack {attr} must be positive")

    def ocv_pack(self, zeta):
        return ocv_pack(self.ocv, zeta, self.N_s)


@dataclass(frozen=True)
class BatteryState:
    zeta: float
    V1: float | None = None
    E_b: float | None = None

    def __post_init__(self):
        if is_symbolic(self.zeta):
            return
        if np.any(np.asarray(self.zeta) < -1e-12) or np.any(np.asarray(self.zeta) > 1 + 1e-12):
            raise DomainError("state of charge outside [0, 1]")


def derive_pack(cell: CellParams, cfg: PackConfig, limits: dict, rc_set: str | None = None) -> PackParams:
    ratio = cfg.N_s / cfg.N_p
    Q_b = cfg.N_p * cell.q_cell * AH_TO_AS
    V_n = cfg.N_s * cell.v_n
    R1 = C1 = None
    if rc_set is not None:
        rc_set, pair = cell.select_rc(rc_set)
        R1 = ratio * pair.r1
        C1 = pair.c1 / ratio
    return PackParams(
        N_s=cfg.N_s,
        N_p=cfg.N_p,
        V_n=V_n,
        R0=ratio * cell.r0_cell,
        Q_b=Q_b,
        M_b=cfg.N_p * cfg.N_s * cell.m_cell / cfg.alpha,
        I_min_pack=cfg.N_p * cell.i_min,
        I_max_pack=cfg.N_p * cell.i_max,
        V_min_pack=cfg.N_s * cell.v_min,
        V_max_pack=cfg.N_s * cell.v_max,
        P_b_min=float(limits["P_b_min"]),
        P_b_max=float(limits["P_b_max"]),
        E_b_max=Q_b * V_n,
        ocv=cell.ocv,
        R1=R1,
        C1=C1,
        rc_set=rc_set,
    )


def ocv_pack(curve: OcvCurve, zeta, N_s: int):
    if not is_symbolic(zeta):
        z = np.asarray(zeta, dtype=float)
        if np.any(z < -1e-12) or np.any(z > 1 + 1e-12):
            raise DomainError(f"state of charge {float(np.min(z)) if np.any(z < 0) else float(np.max(z)):.6g} outside [0, 1]")
    return N_s * curve.cell_voltage(zeta)


def _check_speed(v, v_floor: float) -> None:
    if not is_symbolic(v) and np.any(np.asarray(v, dtype=float) < v_floor * (1 - 1e-12)):
        raise DomainError(f"speed below floor {v_floor} m/s")


def soc_derivative(I_b, v, Q_b: float, v_floor: float = 1.0):
    _check_speed(v, v_floor)
    return -I_b / (Q_b * v)


def rc_derivative(V1, I_b, v, R1: float, C1: float, v_floor: float = 1.0):
    _check_speed(v, v_floor)
    return (I_b - V1 / R1) / (v * C1)


def terminal_voltage(model: BatteryModelKind, state: BatteryState, I_b, pack: PackParams):
    model = BatteryModelKind(model)
    if model is BatteryModelKind.VN_R:
        return pack.V_n - pack.R0 * I_b
    v_b = ocv_pack(pack.ocv, state.zeta, pack.N_s) - pack.R0 * I_b
    if model is BatteryModelKind.VSOC_RC:
        if state.V1 is None:
            raise BatteryStateError("VSoC-RC terminal voltage needs the RC voltage V1")
        v_b = v_b - state.V1
    return v_b


def limit_residuals(model: BatteryModelKind, state: BatteryState, I_b, pack: PackParams) -> dict[str, float]:
    """Signed residuals of the current, voltage, SoC and power boxes; feasible iff all <= 0."""
    v_b = terminal_voltage(model, state, I_b, pack)
    p_b = v_b * I_b
    return {
        "current_min": pack.I_min_pack - I_b,
        "current_max": I_b - pack.I_max_pack,
        "voltage_min": pack.V_min_pack - v_b,
        "voltage_max": v_b - pack.V_max_pack,
        "soc_min": -state.zeta,
        "soc_max": state.zeta - 1.0,
        "power_min": pack.P_b_min - p_b,
        "power_max": p_b - pack.P_b_max,
    }


def battery_cone_terms(F_oc, F_b, dtds, pack: PackParams, v_bar: float = 1.0, F_bar: float = 1.0):
    """R0*F_oc^2/V_n^2 <= (F_oc - F_b)*dtds as a normalized rotated cone: ||(u1, u2)|| <= t."""
    a = (F_oc - F_b) / F_bar
    b = v_bar * dtds
    x = 2.0 * math.sqrt(pack.R0) / pack.V_n * math.sqrt(v_bar / F_bar) * F_oc
    return a + b, (x, a - b)
