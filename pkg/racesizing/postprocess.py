"""
Diagnostics on race solutions: relaxation tightness, equivalent resistance and
efficiency, re-simulation defects and per-lap envelopes.

Control-dependent series use the interval nodes 0..N-2; the last node only
closes the horizon and carries pinned zero controls.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .battery import BatteryModelKind, BatteryState, PackParams, ocv_pack, rc_derivative, soc_derivative, terminal_voltage
from .exceptions import DomainError
from .powertrain import PowertrainParams, recover_brake_torque
from .solution import Formulation, RaceSolution
from .solver import initialize_from_convex
from .track import TrackProfile
from .transcription import AssembledProblem, ProblemContext, rk4_state_step
from .vehicle import VehicleParams, speed_derivative

logger = logging.getLogger(__name__)

QUANTILES = (5, 25, 50, 75, 95)
FORCE_FLOOR = 1.0
POWER_FLOOR = 1e3


def quantiles(values) -> dict[str, float]:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {f"p{q}": math.nan for q in QUANTILES}
    return {f"p{q}": float(v) for q, v in zip(QUANTILES, np.percentile(values, QUANTILES))}


def _interval(series: np.ndarray) -> np.ndarray:
    return np.asarray(series, dtype=float)[:-1]


@dataclass(frozen=True)
class ResistanceSeries:
    s: np.ndarray
    R0_star: np.ndarray
    included: np.ndarray
    R0: float

    @property
    def ratio(self) -> np.ndarray:
        return self.R0_star[self.included] / self.R0

    def summary(self) -> dict:
        ratio = self.ratio
        return {
            "R0_ohm": self.R0,
            "included_nodes": int(self.included.sum()),
            "excluded_nodes": int((~self.included).sum()),
            "ratio_quantiles": quantiles(ratio),
            "min_ratio": float(ratio.min()) if ratio.size else math.nan,
            "slack_fraction": float(np.mean(ratio > 1 + 1e-6)) if ratio.size else math.nan,
        }


def equivalent_resistance(solution: RaceSolution, pack: PackParams, floor: float = FORCE_FLOOR) -> ResistanceSeries:
    """R0* = V_n^2 (F_oc - F_b) dtds / F_oc^2 on interval nodes with |F_oc| >= floor."""
    F_oc, F_b, dtds = _interval(solution.F_oc), _interval(solution.F_b), _interval(solution.dtds)
    included = np.abs(F_oc) >= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        r_star = np.where(included, pack.V_n**2 * (F_oc - F_b) * dtds / F_oc**2, np.nan)
    return ResistanceSeries(s=_interval(solution.s), R0_star=r_star, included=included, R0=pack.R0)


@dataclass(frozen=True)
class FamilySlack:
    slack: np.ndarray

    @property
    def max(self) -> float:
        finite = self.slack[np.isfinite(self.slack)]
        return float(finite.max()) if finite.size else math.nan

    @property
    def min(self) -> float:
        finite = self.slack[np.isfinite(self.slack)]
        return float(finite.min()) if finite.size else math.nan

    def positive_fraction(self, tol: float = 1e-6) -> float:
        finite = self.slack[np.isfinite(self.slack)]
        return float(np.mean(finite > tol)) if finite.size else math.nan

    def summary(self) -> dict:
        return {"max": self.max, "min": self.min, "quantiles": quantiles(self.slack), "positive_fraction": self.positive_fraction()}


@dataclass(frozen=True)
class TightnessReport:
    families: dict[str, FamilySlack] = field(default_factory=dict)

    def __getitem__(self, name: str) -> FamilySlack:
        return self.families[name]

    def summary(self) -> dict:
        return {name: family.summary() for name, family in self.families.items()}


def tightness(solution: RaceSolution, problem: AssembledProblem) -> TightnessReport:
    """Relative slack of each relaxed constraint family; empty for non-convex solutions."""
    if solution.formulation is not Formulation.CONVEX:
        return TightnessReport()
    ctx = problem.context
    M, R_w, eta = ctx.M, ctx.vehicle.R_w, ctx.powertrain.eta
    v, dtds, E = _interval(solution.v), _interval(solution.dtds), _interval(solution.E_kin)
    T_w, F_b = _interval(solution.T_w), _interval(solution.F_b)
    resistance = equivalent_resistance(solution, ctx.pack)
    wheel_force = T_w / R_w
    force_scale = np.maximum(np.abs(F_b), FORCE_FLOOR)
    traction = (eta * F_b - wheel_force) / force_scale
    braking = (F_b / eta - wheel_force) / force_scale
    return TightnessReport(
        families={
            "lethargy": FamilySlack(v * dtds - 1.0),
            "kinetic_energy": FamilySlack(2.0 * E / (M * v**2) - 1.0),
            "battery_cone": FamilySlack(resistance.R0_star / ctx.pack.R0 - 1.0),
            "coupling": FamilySlack(np.minimum(traction, braking)),
        }
    )


@dataclass(frozen=True)
class EfficiencySeries:
    P_b: np.ndarray
    P_wheel: np.ndarray
    eta_star: np.ndarray
    included: np.ndarray
    traction: np.ndarray

    def summary(self, eta: float) -> dict:
        trac = self.included & self.traction
        brake = self.included & ~self.traction
        deviation = np.abs(self.eta_star[trac] - eta)
        return {
            "traction_nodes": int(trac.sum()),
            "braking_nodes": int(brake.sum()),
            "traction_within_1e-3": float(np.mean(deviation <= 1e-3)) if deviation.size else math.nan,
            "eta_star_quantiles": quantiles(self.eta_star[self.included]),
        }


def equivalent_efficiency(solution: RaceSolution, vehicle: VehicleParams, floor: float = POWER_FLOOR) -> EfficiencySeries:
    """Points (P_b, P_wheel, eta*) with eta* = P_wheel / P_b where |P_b| >= floor."""
    v, dtds = _interval(solution.v), _interval(solution.dtds)
    P_b = _interval(solution.F_b) / dtds
    P_wheel = _interval(solution.T_w) * v / vehicle.R_w
    included = np.abs(P_b) >= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        eta_star = np.where(included, P_wheel / P_b, np.nan)
    return EfficiencySeries(P_b=P_b, P_wheel=P_wheel, eta_star=eta_star, included=included, traction=P_wheel > 0)


def brake_recovery(solution: RaceSolution, powertrain: PowertrainParams, vehicle: VehicleParams) -> np.ndarray:
    return recover_brake_torque(solution.T_w, solution.F_b, powertrain, vehicle.R_w)


@dataclass(frozen=True)
class ElectricalSeries:
    I_b: np.ndarray
    V_b: np.ndarray
    zeta: np.ndarray
    V_oc: np.ndarray
    dtds: np.ndarray


def electrical_series(solution: RaceSolution, pack: PackParams) -> ElectricalSeries:
    """Current, terminal voltage and SoC of any solution; convex ones through the Vn-R mapping."""
    if solution.formulation is Formulation.CONVEX:
        v = solution.v
        I_b = solution.F_oc * v / pack.V_n
        zeta = solution.E_b / pack.E_b_max
        V_b = pack.V_n - pack.R0 * I_b
        return ElectricalSeries(I_b=I_b, V_b=V_b, zeta=zeta, V_oc=np.full_like(v, pack.V_n), dtds=solution.dtds)
    zeta = np.clip(solution.zeta, 0.0, 1.0)
    state = BatteryState(zeta=zeta, V1=solution.V1)
    V_b = terminal_voltage(solution.model, state, solution.I_b, pack)
    if solution.model is BatteryModelKind.VN_R:
        V_oc = np.full_like(zeta, pack.V_n)
    else:
        V_oc = ocv_pack(pack.ocv, zeta, pack.N_s)
    return ElectricalSeries(I_b=solution.I_b, V_b=V_b, zeta=solution.zeta, V_oc=V_oc, dtds=1.0 / solution.v)


@dataclass(frozen=True)
class LapEnvelope:
    lap: int
    I_min: float
    I_max: float
    V_min: float
    V_max: float
    soc_start: float
    soc_end: float
    lap_time: float
    energy_used: float


def _lap_nodes(solution: RaceSolution, track: TrackProfile, lap: int) -> tuple[int, int]:
    """First and closing node of `lap`, both on the solution grid."""
    start = int(np.searchsorted(solution.s, lap * track.lap_length - 1e-9))
    end = int(np.searchsorted(solution.s, (lap + 1) * track.lap_length - 1e-9))
    return start, min(end, solution.n_nodes - 1)


def envelopes(solution: RaceSolution, track: TrackProfile, pack: PackParams) -> list[LapEnvelope]:
    series = electrical_series(solution, pack)
    ds = np.diff(solution.s)
    result = []
    for lap in range(track.n_laps):
        start, end = _lap_nodes(solution, track, lap)
        window = slice(start, end)
        I, V = series.I_b[window], series.V_b[window]
        result.append(
            LapEnvelope(
                lap=lap + 1,
                I_min=float(I.min()),
                I_max=float(I.max()),
                V_min=float(V.min()),
                V_max=float(V.max()),
                soc_start=float(series.zeta[start]),
                soc_end=float(series.zeta[end]),
                lap_time=float(np.sum(series.dtds[window] * ds[window])),
                energy_used=float(np.sum(series.V_oc[window] * series.I_b[window] * series.dtds[window] * ds[window])),
            )
        )
    return result


@dataclass(frozen=True)
class LapProfile:
    lap: int
    s: np.ndarray
    v: np.ndarray
    I_b: np.ndarray
    V_b: np.ndarray
    zeta: np.ndarray


def lap_profile(solution: RaceSolution, track: TrackProfile, pack: PackParams, lap: int) -> LapProfile:
    """Per-node series of one lap (1-based), with lap-relative arc length."""
    if not 1 <= lap <= track.n_laps:
        raise ValueError(f"lap must lie in 1..{track.n_laps}, got {lap}")
    series = electrical_series(solution, pack)
    start, end = _lap_nodes(solution, track, lap - 1)
    window = slice(start, end + 1)
    return LapProfile(
        lap=lap,
        s=solution.s[window] - (lap - 1) * track.lap_length,
        v=solution.v[window],
        I_b=series.I_b[window],
        V_b=series.V_b[window],
        zeta=series.zeta[window],
    )


@dataclass(frozen=True)
class DefectReport:
    refinement: int
    completed: bool
    speed_rms: float
    speed_rms_relative: float
    soc_rms: float
    terminal_speed_deviation: float
    terminal_soc_deviation: float
    v_sim: np.ndarray
    zeta_sim: np.ndarray
    message: str = ""

    def summary(self) -> dict:
        return {
            "refinement": self.refinement,
            "completed": self.completed,
            "speed_rms_mps": self.speed_rms,
            "speed_rms_relative": self.speed_rms_relative,
            "soc_rms": self.soc_rms,
            "terminal_speed_deviation_mps": self.terminal_speed_deviation,
            "terminal_soc_deviation": self.terminal_soc_deviation,
            "message": self.message,
        }


def resimulate(solution: RaceSolution, context: ProblemContext, refinement: int = 10) -> DefectReport:
    """Forward-integrate the non-convex dynamics under the solution's controls at step ds/refinement."""
    if refinement < 1:
        raise ValueError("refinement must be a positive integer")
    vehicle, pack, powertrain = context.vehicle, context.pack, context.powertrain
    if solution.formulation is Formulation.CONVEX:
        solution = initialize_from_convex(solution, BatteryModelKind.VN_R, pack=pack, powertrain=powertrain, vehicle=vehicle)
    model = solution.model
    rc = model is BatteryModelKind.VSOC_RC
    M, theta = solution.M, context.track.theta
    n = solution.n_nodes
    h = (solution.s[1] - solution.s[0]) / refinement

    v_sim = np.full(n, np.nan)
    zeta_sim = np.full(n, np.nan)
    state = [float(solution.v[0]), float(solution.zeta[0])] + ([float(solution.V1[0])] if rc else [])
    v_sim[0], zeta_sim[0] = state[0], state[1]
    completed, message = True, ""

    def rhs(x, u, s, k):
        out = (
            speed_derivative(x[0], u[0], theta[k], M, vehicle),
            soc_derivative(u[1], x[0], pack.Q_b, vehicle.v_floor),
        )
        if rc:
            out += (rc_derivative(x[2], u[1], x[0], pack.R1, pack.C1, vehicle.v_floor),)
        return out

    try:
        for k in range(n - 1):
            controls = (float(solution.T_w[k]), float(solution.I_b[k]))
            x = tuple(state)
            for j in range(refinement):
                x = rk4_state_step(lambda xs, u, s: rhs(xs, u, s, k), x, controls, solution.s[k] + j * h, h)
            state = list(x)
            v_sim[k + 1], zeta_sim[k + 1] = state[0], state[1]
    except DomainError as exc:
        completed = False
        message = f"speed floor violated after s = {solution.s[k]:.1f} m: {exc}"
        logger.warning("resimulation stopped: %s", message)

    reached = np.isfinite(v_sim)
    dv = v_sim[reached] - solution.v[reached]
    dz = zeta_sim[reached] - solution.zeta[reached]
    speed_rms = float(np.sqrt(np.mean(dv**2)))
    return DefectReport(
        refinement=refinement,
        completed=completed,
        speed_rms=speed_rms,
        speed_rms_relative=speed_rms / float(np.sqrt(np.mean(solution.v[reached] ** 2))),
        soc_rms=float(np.sqrt(np.mean(dz**2))),
        terminal_speed_deviation=float(abs(v_sim[-1] - solution.v[-1])) if completed else math.nan,
        terminal_soc_deviation=float(abs(zeta_sim[-1] - solution.zeta[-1])) if completed else math.nan,
        v_sim=v_sim,
        zeta_sim=zeta_sim,
        message=message,
    )


def speed_difference(a: RaceSolution, b: RaceSolution) -> np.ndarray:
    """Node-wise |v_a - v_b| on a shared grid."""
    if a.n_nodes != b.n_nodes:
        raise ValueError("solutions are on different grids")
    return np.abs(np.asarray(a.v) - np.asarray(b.v))
