from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .battery import BatteryModelKind


class Formulation(str, Enum):
    CONVEX = "convex"
    NONCONVEX = "nonconvex"


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max-iter"
    NUMERICAL_FAILURE = "numerical-failure"


# Column order of trajectory.csv; a column a formulation does not carry is written empty
TRAJECTORY_HEADER = [
    "s_m", "v_mps", "Ekin_J", "dtds_spm", "Tw_Nm", "Tm_Nm", "Tbr_Nm",
    "Ib_A", "soc", "V1_V", "Eb_J", "Foc_N", "Fb_N",
]
TRAJECTORY_FIELDS = ("s", "v", "E_kin", "dtds", "T_w", "T_m", "T_br", "I_b", "zeta", "V1", "E_b", "F_oc", "F_b")


@dataclass(frozen=True, eq=False)
class RaceSolution:
    formulation: Formulation
    model: BatteryModelKind
    s: np.ndarray
    race_time: float
    status: SolveStatus
    N_p: int | None = None
    M: float = math.nan
    v: np.ndarray | None = None
    E_kin: np.ndarray | None = None
    dtds: np.ndarray | None = None
    T_w: np.ndarray | None = None
    T_m: np.ndarray | None = None
    T_br: np.ndarray | None = None
    I_b: np.ndarray | None = None
    zeta: np.ndarray | None = None
    V1: np.ndarray | None = None
    E_b: np.ndarray | None = None
    F_oc: np.ndarray | None = None
    F_b: np.ndarray | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    @property
    def n_nodes(self) -> int:
        return len(self.s)

    @property
    def terminal_soc(self) -> float:
        if self.zeta is not None:
            return float(self.zeta[-1])
        return math.nan

    def column(self, name: str) -> np.ndarray | None:
        return getattr(self, name)

    def with_status(self, status: SolveStatus) -> "RaceSolution":
        return replace(self, status=SolveStatus(status))

    def rows(self):
        """Trajectory rows in TRAJECTORY_HEADER order, None for absent columns."""
        columns = [self.column(name) for name in TRAJECTORY_FIELDS]
        for k in range(self.n_nodes):
            yield [None if col is None else float(col[k]) for col in columns]
