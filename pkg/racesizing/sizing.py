"""Outer layer of the sizing problem: sweep N_p and solve the inner race for each pack."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .battery import BatteryModelKind, CellParams, PackConfig, PackParams, derive_pack
from .exceptions import ConfigurationError, EmptyOptimumError, UnsupportedCombinationError
from .powertrain import PowertrainParams
from .solution import Formulation, RaceSolution, SolveStatus
from .solver import SolveReport, SolveSettings, initialize_from_convex, solve_conic, solve_nlp
from .track import TrackProfile
from .transcription import DiscretizationConfig, assemble_convex, assemble_nonconvex
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)

DEFAULT_POWER_LIMITS = {"P_b_min": -600e3, "P_b_max": 350e3}


def parse_model_spec(spec: str) -> tuple[BatteryModelKind, str | None]:
    """`vn-r`, `vsoc-r`, `vsoc-rc` or `vsoc-rc:<set>` to (model, rc_set)."""
    name, _, rc_set = spec.strip().partition(":")
    try:
        model = BatteryModelKind(name)
    except ValueError:
        choices = ", ".join(m.value for m in BatteryModelKind)
        raise ConfigurationError(f"unknown battery model {name!r}; choose from {choices}") from None
    if rc_set and model is not BatteryModelKind.VSOC_RC:
        raise ConfigurationError(f"RC set given for {model.label}, which has no RC pair")
    if model is BatteryModelKind.VSOC_RC:
        return model, rc_set or "auto"
    return model, None


def model_label(model: BatteryModelKind, rc_set: str | None) -> str:
    if model is BatteryModelKind.VSOC_RC and rc_set:
        return f"{model.value}:{rc_set}"
    return model.value


@dataclass(frozen=True, eq=False)
class SizingScenario:
    track: TrackProfile
    cell: CellParams
    N_s: int
    Np_range: tuple[int, int] = (10, 30)
    Np_step: int = 1
    alpha: float = 0.8
    model: BatteryModelKind = BatteryModelKind.VN_R
    formulation: Formulation = Formulation.CONVEX
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    powertrain: PowertrainParams = field(default_factory=PowertrainParams)
    disc: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    power_limits: dict = field(default_factory=lambda: dict(DEFAULT_POWER_LIMITS))
    rc_set: str | None = None
    initial_soc: float = 1.0
    settings: SolveSettings = field(default_factory=SolveSettings)
    # Non-convex solves start from the mapped convex optimum of the same pack when possible
    warm_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, "model", BatteryModelKind(self.model))
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        lo, hi = (int(n) for n in self.Np_range)
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"N_p range must be non-empty and positive, got {lo}..{hi}")
        if int(self.Np_step) < 1:
            raise ConfigurationError("N_p step must be at least 1")
        if self.formulation is Formulation.CONVEX and self.model is not BatteryModelKind.VN_R:
            raise UnsupportedCombinationError(
                f"unsupported combination: convex formulation with {self.model.label}; the convex path needs Vn-R"
            )
        if not 0 < self.initial_soc <= 1:
            raise ConfigurationError("initial SoC must lie in (0, 1]")
        if self.model is BatteryModelKind.VSOC_RC and self.rc_set is None:
            object.__setattr__(self, "rc_set", "auto")
        object.__setattr__(self, "Np_range", (lo, hi))

    @property
    def label(self) -> str:
        return model_label(self.model, self.rc_set)

    def n_p_values(self) -> list[int]:
        lo, hi = self.Np_range
        return list(range(lo, hi + 1, int(self.Np_step)))

    def pack_for(self, N_p: int) -> PackParams:
        cfg = PackConfig(N_s=self.N_s, N_p=int(N_p), alpha=self.alpha)
        rc_set = self.rc_set if self.model is BatteryModelKind.VSOC_RC else None
        return derive_pack(self.cell, cfg, self.power_limits, rc_set=rc_set)

    def with_model(self, model: BatteryModelKind, rc_set: str | None = None, formulation: Formulation | None = None):
        model = BatteryModelKind(model)
        if formulation is None:
            formulation = Formulation.CONVEX if model is BatteryModelKind.VN_R and self.formulation is Formulation.CONVEX else Formulation.NONCONVEX
        return replace(self, model=model, rc_set=rc_set, formulation=formulation)


def terminal_soc(solution: RaceSolution, pack: PackParams) -> float:
    if solution.zeta is not None:
        return float(solution.zeta[-1])
    if solution.E_b is not None:
        return float(solution.E_b[-1] / pack.E_b_max)
    return math.nan


def _warm_start(scenario: SizingScenario, pack: PackParams) -> RaceSolution | None:
    convex = assemble_convex(
        scenario.track, scenario.vehicle, pack, scenario.powertrain, scenario.disc, initial_soc=scenario.initial_soc
    )
    solution, report = solve_conic(convex, SolveSettings(verbose=scenario.settings.verbose))
    if not solution.is_optimal:
        logger.warning("convex warm start unavailable for N_p=%d (status=%s)", pack.N_p, report.status.value)
        return None
    return initialize_from_convex(
        solution, scenario.model, pack=pack, powertrain=scenario.powertrain, vehicle=scenario.vehicle
    )


def race_time(scenario: SizingScenario, N_p: int) -> tuple[float, RaceSolution, SolveReport]:
    pack = scenario.pack_for(N_p)
    logger.debug(
        "race_time N_p=%d model=%s formulation=%s M_b=%.2f", N_p, scenario.label, scenario.formulation.value, pack.M_b
    )
    if scenario.formulation is Formulation.CONVEX:
        problem = assemble_convex(
            scenario.track, scenario.vehicle, pack, scenario.powertrain, scenario.disc,
            model=scenario.model, initial_soc=scenario.initial_soc,
        )
        solution, report = solve_conic(problem, scenario.settings)
    else:
        settings = scenario.settings
        if settings.warm_start is None and scenario.warm_start:
            start = _warm_start(scenario, pack)
            if start is not None:
                settings = replace(settings, warm_start=start)
        problem = assemble_nonconvex(
            scenario.track, scenario.vehicle, pack, scenario.model, scenario.powertrain, scenario.disc,
            initial_soc=scenario.initial_soc,
        )
        solution, report = solve_nlp(problem, settings)
    return solution.race_time, solution, report


@dataclass(frozen=True)
class SizingEntry:
    N_p: int
    race_time: float
    status: SolveStatus
    terminal_soc: float
    M_b: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


@dataclass(frozen=True)
class SizingCurve:
    entries: tuple[SizingEntry, ...]
    label: str = BatteryModelKind.VN_R.value
    formulation: Formulation = Formulation.CONVEX

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e.N_p)))

    @property
    def feasible(self) -> tuple[SizingEntry, ...]:
        return tuple(e for e in self.entries if e.is_optimal)

    @property
    def best(self) -> SizingEntry | None:
        # Ties resolve to the smaller pack
        candidates = self.feasible
        if not candidates:
            return None
        return min(candidates, key=lambda e: (e.race_time, e.N_p))

    @property
    def argmin_Np(self) -> int | None:
        best = self.best
        return best.N_p if best is not None else None

    def entry(self, N_p: int) -> SizingEntry | None:
        for e in self.entries:
            if e.N_p == N_p:
                return e
        return None

    def is_interior_minimum(self) -> bool:
        if self.argmin_Np is None or len(self.entries) < 3:
            return False
        return self.entries[0].N_p < self.argmin_Np < self.entries[-1].N_p


def _evaluate(scenario: SizingScenario, N_p: int) -> SizingEntry:
    t, solution, report = race_time(scenario, N_p)
    pack = scenario.pack_for(N_p)
    entry = SizingEntry(
        N_p=N_p,
        race_time=t,
        status=report.status,
        terminal_soc=terminal_soc(solution, pack),
        M_b=pack.M_b,
        iterations=report.iterations,
        wall_time=report.wall_time,
    )
    logger.info(
        "sizing model=%s N_p=%d status=%s race_time=%.4f terminal_soc=%.4f",
        scenario.label, N_p, entry.status.value, entry.race_time, entry.terminal_soc,
    )
    return entry


def grid_search(scenario: SizingScenario, jobs: int = 1) -> SizingCurve:
    values = scenario.n_p_values()
    if jobs > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(values))) as pool:
            entries = list(pool.map(_evaluate, [scenario] * len(values), values))
    else:
        entries = [_evaluate(scenario, n) for n in values]
    curve = SizingCurve(entries=tuple(entries), label=scenario.label, formulation=scenario.formulation)
    if curve.argmin_Np is None:
        raise EmptyOptimumError(
            f"no N_p in {values[0]}..{values[-1]} produced an optimal race for {scenario.label}", curve=curve
        )
    return curve


def compare_curves(curves: dict[str, SizingCurve], tol: float = 1e-6) -> dict:
    """Per-N_p race times of each curve (in the given order) and whether they are non-decreasing."""
    labels = list(curves)
    shared = sorted(set.intersection(*(set(e.N_p for e in c.entries) for c in curves.values()))) if curves else []
    per_np = []
    for N_p in shared:
        times = {}
        for label in labels:
            e = curves[label].entry(N_p)
            times[label] = e.race_time if e is not None and e.is_optimal else None
        known = [t for t in times.values() if t is not None]
        ordered = len(known) == len(labels) and all(
            later >= earlier - tol * max(1.0, abs(earlier)) for earlier, later in zip(known, known[1:])
        )
        per_np.append({"N_p": N_p, "race_time_s": times, "ordered": ordered})
    return {
        "models": labels,
        "argmin_Np": {label: curves[label].argmin_Np for label in labels},
        "per_Np": per_np,
        "ordered_everywhere": bool(per_np) and all(row["ordered"] for row in per_np),
    }


def widened(scenario: SizingScenario, factor: float = 100.0) -> SizingScenario:
    """Same scenario with battery power, energy, current and resistive limits relaxed by `factor`."""
    limits = {key: value * factor for key, value in scenario.power_limits.items()}
    cell = scenario.cell
    cell = replace(
        cell,
        q_cell=cell.q_cell * factor,
        i_min=cell.i_min * factor,
        i_max=cell.i_max * factor,
        r0_cell=cell.r0_cell / factor,
    )
    return replace(scenario, power_limits=limits, cell=cell)


def curve_array(curve: SizingCurve) -> np.ndarray:
    return np.array([[e.N_p, e.race_time] for e in curve.entries], dtype=float)
