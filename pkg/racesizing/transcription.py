"""
Direct transcription of the minimum-race-time problem on the track grid.

States live at nodes; controls are held constant over each interval and the
dynamics are integrated with classical RK4 across it. Track data (slope,
curvature) is taken at the interval's start node. Decision variables are scaled
(physical value = scale * z) and laid out node-major: index = node * n_symbols + j.
The last node carries states only, its controls are pinned to zero.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Mapping

import casadi as cs
import numpy as np
from scipy import sparse

from .battery import (
    BatteryModelKind,
    BatteryState,
    PackParams,
    battery_cone_terms,
    rc_derivative,
    soc_derivative,
    terminal_voltage,
)
from .exceptions import ConfigurationError, DomainError, UnsupportedCombinationError
from .powertrain import PowertrainParams, convex_coupling_residuals, coupling_residual
from .solution import Formulation, RaceSolution, SolveStatus
from .symbolic import column
from .track import TrackProfile
from .vehicle import (
    VehicleParams,
    ellipse_cone_terms,
    friction_ellipse_residual,
    kinetic_derivative,
    kinetic_relaxation_terms,
    lethargy_cone_terms,
    speed_derivative,
)

logger = logging.getLogger(__name__)

# Typical race speed; sets variable scales and the reference of the kinetic relaxation cone
V_REF = 30.0

CONVEX_SYMBOLS = ("dtds", "v", "E_kin", "T_w", "E_b", "F_oc", "F_b")
CONTROL_SYMBOLS = frozenset({"T_w", "T_m", "T_br", "I_b", "F_oc", "F_b"})


def nonconvex_symbols(model: BatteryModelKind) -> tuple[str, ...]:
    states = ("v", "zeta", "V1") if BatteryModelKind(model) is BatteryModelKind.VSOC_RC else ("v", "zeta")
    return states + ("T_w", "T_m", "T_br", "I_b")


@dataclass(frozen=True)
class DiscretizationConfig:
    ds: float = 15.0
    integrator: str = "rk4"
    objective_rule: str = "left-riemann"
    # Normalization speed and force of the conic constraints
    v_bar: float = 1.0
    F_bar: float = 1.0

    def __post_init__(self):
        if not self.ds > 0:
            raise ConfigurationError(f"discretization.ds must be positive, got {self.ds}")
        if self.integrator != "rk4":
            raise ConfigurationError(f"unsupported integrator {self.integrator!r}; only explicit rk4 is available")
        if self.objective_rule != "left-riemann":
            raise ConfigurationError(f"unsupported objective rule {self.objective_rule!r}")
        if not (self.v_bar > 0 and self.F_bar > 0):
            raise ConfigurationError("normalization terms v_bar and F_bar must be positive")

    def check_track(self, track: TrackProfile) -> None:
        intervals = track.lap_length / self.ds
        if abs(intervals - round(intervals)) > 1e-9 * max(intervals, 1.0):
            raise ConfigurationError(f"ds = {self.ds} m does not divide the lap length {track.lap_length} m")
        if np.max(np.abs(np.diff(track.s) - self.ds)) >= 1e-9 * self.ds:
            raise ConfigurationError(f"track {track.name!r} is not on a uniform {self.ds} m grid; resample it first")


@dataclass(frozen=True)
class DecisionLayout:
    symbols: tuple[str, ...]
    n_nodes: int
    scales: tuple[float, ...]

    @classmethod
    def for_problem(
        cls, formulation: Formulation, model: BatteryModelKind, n_nodes: int, scales: Mapping[str, float]
    ) -> "DecisionLayout":
        if Formulation(formulation) is Formulation.CONVEX:
            symbols = CONVEX_SYMBOLS
        else:
            symbols = nonconvex_symbols(model)
        return cls(symbols=symbols, n_nodes=n_nodes, scales=tuple(float(scales.get(s, 1.0)) for s in symbols))

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    @property
    def n_vars(self) -> int:
        return self.n_nodes * self.n_symbols

    def offset(self, name: str) -> int:
        try:
            return self.symbols.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a decision variable of this layout") from None

    def index(self, name: str, node: int) -> int:
        if node < 0:
            node += self.n_nodes
        return node * self.n_symbols + self.offset(name)

    def indices(self, name: str) -> np.ndarray:
        return np.arange(self.n_nodes) * self.n_symbols + self.offset(name)

    def scale(self, name: str) -> float:
        return self.scales[self.offset(name)]


def rk4_state_step(f: Callable, x_k, u_k, s_k, ds: float):
    """Classical RK4 step of dx/ds = f(x, u, s) with the control held over the step.

    `x_k` is a single value or a tuple of state components. numpy arrays and casadi
    columns step every interval at once.
    """
    single = not isinstance(x_k, tuple)
    x = (x_k,) if single else x_k

    def stage(i, xs, s):
        try:
            out = f(xs[0] if single else xs, u_k, s)
        except DomainError as exc:
            raise DomainError(f"RK4 stage {i}: {exc}") from exc
        return (out,) if single else tuple(out)

    def shift(xs, ks, h):
        return tuple(a + h * b for a, b in zip(xs, ks))

    k1 = stage(1, x, s_k)
    k2 = stage(2, shift(x, k1, ds / 2), s_k + ds / 2)
    k3 = stage(3, shift(x, k2, ds / 2), s_k + ds / 2)
    k4 = stage(4, shift(x, k3, ds), s_k + ds)
    out = tuple(a + ds / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))
    return out[0] if single else out


class BlockKind(str, Enum):
    LINEAR_EQUALITY = "linear-equality"
    LINEAR_INEQUALITY = "linear-inequality"
    SECOND_ORDER_CONE = "second-order-cone"
    SMOOTH_NONLINEAR = "smooth-nonlinear"


@dataclass(frozen=True, eq=False)
class ConstraintBlock:
    """Rows `expr == 0` / `expr <= 0`, or cone rows `||(u1, u2)|| <= t`. `nodes[r]` is row r's first node."""

    name: str
    kind: BlockKind
    nodes: np.ndarray
    expr: cs.SX | None = None
    sense: str = "eq"
    cone: tuple | None = None

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def is_cone(self) -> bool:
        return self.kind is BlockKind.SECOND_ORDER_CONE

    def residual_expr(self) -> cs.SX:
        if self.is_cone:
            t, u = self.cone
            return cs.sqrt(sum(ui**2 for ui in u)) - t
        return self.expr

    def parts(self) -> list[cs.SX]:
        if self.is_cone:
            t, u = self.cone
            return [t, *u]
        return [self.expr]


@dataclass(frozen=True, eq=False)
class ProblemContext:
    formulation: Formulation
    model: BatteryModelKind
    track: TrackProfile
    vehicle: VehicleParams
    pack: PackParams
    powertrain: PowertrainParams
    disc: DiscretizationConfig
    initial_soc: float = 1.0

    @property
    def M(self) -> float:
        return self.vehicle.total_mass(self.pack.M_b)


def _to_csr(matrix: cs.DM) -> sparse.csr_matrix:
    rows, cols = matrix.sparsity().get_triplet()
    return sparse.csr_matrix((np.array(matrix.nonzeros(), dtype=float), (rows, cols)), shape=matrix.shape)


@dataclass(frozen=True, eq=False)
class AssembledProblem:
    layout: DecisionLayout
    context: ProblemContext
    z: cs.SX
    objective: cs.SX
    objective_kind: str
    blocks: tuple[ConstraintBlock, ...]
    lbz: np.ndarray
    ubz: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    @property
    def is_convex(self) -> bool:
        objective_linear = not cs.depends_on(cs.gradient(self.objective, self.z), self.z)
        return objective_linear and all(b.kind is not BlockKind.SMOOTH_NONLINEAR for b in self.blocks)

    def block(self, name: str) -> ConstraintBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def blocks_of(self, *kinds: BlockKind) -> list[ConstraintBlock]:
        return [b for b in self.blocks if b.kind in kinds]

    @cached_property
    def _residuals(self) -> cs.Function:
        outputs = [b.residual_expr() for b in self.blocks] + [self.objective]
        return cs.Function("residuals", [self.z], outputs)

    def evaluate(self, z) -> dict[str, np.ndarray]:
        """Raw block values at `z`: equality defects, inequality left-hand sides, cone gaps ||u|| - t."""
        out = self._residuals(np.asarray(z, dtype=float))
        return {b.name: np.array(val).ravel() for b, val in zip(self.blocks, out[:-1])}

    def objective_value(self, z) -> float:
        return float(self._residuals(np.asarray(z, dtype=float))[-1])

    def violations(self, z) -> dict[str, np.ndarray]:
        z = np.asarray(z, dtype=float)
        result = {}
        for b, values in zip(self.blocks, self.evaluate(z).values()):
            if b.kind is BlockKind.LINEAR_EQUALITY or (b.kind is BlockKind.SMOOTH_NONLINEAR and b.sense == "eq"):
                result[b.name] = np.abs(values)
            else:
                result[b.name] = np.maximum(values, 0.0)
        result["bounds"] = np.maximum(np.maximum(self.lbz - z, z - self.ubz), 0.0)
        return result

    def max_violation(self, z) -> float:
        return max((float(np.max(v)) for v in self.violations(z).values() if v.size), default=0.0)

    def linear_form(self, expr: cs.SX) -> tuple[sparse.csr_matrix, np.ndarray]:
        """(A, b) with expr(z) = A z + b; only meaningful for affine expressions."""
        fn = cs.Function("affine", [self.z], [expr, cs.jacobian(expr, self.z)])
        b0, jac = fn(np.zeros(self.n_vars))
        return _to_csr(jac), np.array(b0, dtype=float).ravel()

    def jacobian(self, z, blocks: list[ConstraintBlock]) -> tuple[np.ndarray, sparse.csr_matrix]:
        expr = cs.vertcat(*[b.expr for b in blocks])
        fn = cs.Function("constraint_jac", [self.z], [expr, cs.jacobian(expr, self.z)])
        g, jac = fn(np.asarray(z, dtype=float))
        return np.array(g, dtype=float).ravel(), _to_csr(jac)

    def objective_gradient(self, z) -> np.ndarray:
        fn = cs.Function("grad", [self.z], [cs.gradient(self.objective, self.z)])
        return np.array(fn(np.asarray(z, dtype=float)), dtype=float).ravel()

    def node_span(self) -> int:
        """Largest node distance between variables touched by one constraint row."""
        span = 0
        n_sym = self.layout.n_symbols
        for b in self.blocks:
            touched = defaultdict(set)
            for part in b.parts():
                rows, cols = cs.jacobian(part, self.z).sparsity().get_triplet()
                for r, c in zip(rows, cols):
                    touched[r].add(c // n_sym)
            for nodes in touched.values():
                span = max(span, max(nodes) - min(nodes))
        return span

    def constraint_counts(self) -> dict[str, int]:
        counts = {kind.value: 0 for kind in BlockKind}
        for b in self.blocks:
            counts[b.kind.value] += b.size
        return counts

    def stats(self) -> dict:
        finite = np.isfinite(self.lbz).sum() + np.isfinite(self.ubz).sum()
        return {
            "formulation": self.context.formulation.value,
            "model": self.context.model.value,
            "nodes": self.layout.n_nodes,
            "variables": self.n_vars,
            "variables_per_node": self.layout.n_symbols,
            "constraints": self.constraint_counts(),
            "constraint_rows": sum(b.size for b in self.blocks),
            "finite_bounds": int(finite),
        }

    def pack(self, values: Mapping[str, np.ndarray | None]) -> np.ndarray:
        """Scaled decision vector from physical per-node series; missing symbols become zero."""
        z = np.zeros(self.n_vars)
        for name in self.layout.symbols:
            series = values.get(name)
            if series is not None:
                z[self.layout.indices(name)] = np.asarray(series, dtype=float) / self.layout.scale(name)
        return z

    def pack_solution(self, solution: RaceSolution) -> np.ndarray:
        return self.pack({name: solution.column(name) for name in self.layout.symbols})

    def unpack(self, z, status: SolveStatus, race_time: float | None = None) -> RaceSolution:
        z = np.asarray(z, dtype=float)
        x = z.reshape(self.layout.n_nodes, self.layout.n_symbols) * np.array(self.layout.scales)
        values = {name: x[:, j].copy() for j, name in enumerate(self.layout.symbols)}
        ctx = self.context
        return RaceSolution(
            formulation=ctx.formulation,
            model=ctx.model,
            s=np.array(ctx.track.s),
            race_time=self.objective_value(z) if race_time is None else float(race_time),
            status=SolveStatus(status),
            N_p=ctx.pack.N_p,
            M=ctx.M,
            **values,
        )

    def initial_guess(self) -> np.ndarray:
        """Constant-speed guess at v0 with zero controls, clipped into the bounds."""
        ctx = self.context
        v0 = ctx.vehicle.v0
        n = self.layout.n_nodes
        guess = {
            "v": np.full(n, v0),
            "dtds": np.full(n, 1.0 / v0),
            "E_kin": np.full(n, 0.5 * ctx.M * v0**2),
            "E_b": np.full(n, ctx.initial_soc * ctx.pack.E_b_max),
            "zeta": np.full(n, ctx.initial_soc),
        }
        return np.clip(self.pack(guess), self.lbz, self.ubz)


class ProblemBuilder:
    def __init__(self, layout: DecisionLayout, context: ProblemContext):
        self.layout = layout
        self.context = context
        self.z = cs.SX.sym("z", layout.n_vars)
        self.lbz = np.full(layout.n_vars, -np.inf)
        self.ubz = np.full(layout.n_vars, np.inf)
        self.blocks: list[ConstraintBlock] = []

    def var(self, name: str) -> cs.SX:
        return self.layout.scale(name) * self.z[self.layout.indices(name).tolist()]

    def bound(self, name: str, lower: float | None = None, upper: float | None = None) -> None:
        idx = self.layout.indices(name)
        scale = self.layout.scale(name)
        if lower is not None:
            self.lbz[idx] = np.maximum(self.lbz[idx], lower / scale)
        if upper is not None:
            self.ubz[idx] = np.minimum(self.ubz[idx], upper / scale)

    def fix(self, name: str, value: float, node: int) -> None:
        i = self.layout.index(name, node)
        self.lbz[i] = self.ubz[i] = value / self.layout.scale(name)

    def add(self, name: str, expr, nodes, sense: str = "eq", scale: float = 1.0) -> None:
        expr = cs.SX(expr) / scale
        linear = not cs.depends_on(cs.jacobian(expr, self.z), self.z)
        if linear:
            kind = BlockKind.LINEAR_EQUALITY if sense == "eq" else BlockKind.LINEAR_INEQUALITY
        else:
            kind = BlockKind.SMOOTH_NONLINEAR
        self.blocks.append(ConstraintBlock(name, kind, np.asarray(nodes), expr=expr, sense=sense))

    def add_cone(self, name: str, t, u, nodes, scale: float = 1.0) -> None:
        cone = (cs.SX(t) / scale, tuple(cs.SX(ui) / scale for ui in u))
        for part in (cone[0], *cone[1]):
            if cs.depends_on(cs.jacobian(part, self.z), self.z):
                raise ValueError(f"cone block {name} is not affine in the decision variables")
        self.blocks.append(ConstraintBlock(name, BlockKind.SECOND_ORDER_CONE, np.asarray(nodes), cone=cone))

    def pin_terminal_controls(self) -> None:
        for name in self.layout.symbols:
            if name in CONTROL_SYMBOLS:
                self.fix(name, 0.0, self.layout.n_nodes - 1)

    def build(self, objective, objective_kind: str) -> AssembledProblem:
        problem = AssembledProblem(
            layout=self.layout,
            context=self.context,
            z=self.z,
            objective=cs.SX(objective),
            objective_kind=objective_kind,
            blocks=tuple(self.blocks),
            lbz=self.lbz,
            ubz=self.ubz,
        )
        logger.debug(
            "assembled %s/%s problem: nodes=%d vars=%d rows=%s",
            self.context.formulation.value,
            self.context.model.value,
            self.layout.n_nodes,
            self.layout.n_vars,
            problem.constraint_counts(),
        )
        return problem


def _torque_scale(vehicle: VehicleParams, M: float) -> float:
    return vehicle.mu_x * vehicle.R_w * M * vehicle.g


def _current_scale(pack: PackParams) -> float:
    return max(abs(pack.I_max_pack), abs(pack.I_min_pack), 1.0)


def _power_scale(pack: PackParams) -> float:
    return max(abs(pack.P_b_max), abs(pack.P_b_min), 1.0)


def assemble_convex(
    track: TrackProfile,
    vehicle: VehicleParams,
    pack: PackParams,
    powertrain: PowertrainParams,
    disc: DiscretizationConfig,
    model: BatteryModelKind = BatteryModelKind.VN_R,
    initial_soc: float = 1.0,
) -> AssembledProblem:
    model = BatteryModelKind(model)
    if model is not BatteryModelKind.VN_R:
        raise UnsupportedCombinationError(
            f"unsupported combination: the convex formulation needs a constant open-circuit voltage (Vn-R), got {model.label}"
        )
    disc.check_track(track)
    ctx = ProblemContext(Formulation.CONVEX, model, track, vehicle, pack, powertrain, disc, initial_soc)
    M, g, N, ds = ctx.M, vehicle.g, track.n_nodes, disc.ds
    Mg = M * g
    scales = {
        "dtds": 1.0 / V_REF,
        "v": V_REF,
        "E_kin": 0.5 * M * V_REF**2,
        "T_w": _torque_scale(vehicle, M),
        "E_b": pack.E_b_max,
        "F_oc": Mg,
        "F_b": Mg,
    }
    layout = DecisionLayout.for_problem(Formulation.CONVEX, model, N, scales)
    b = ProblemBuilder(layout, ctx)
    dtds, v, E, T_w, E_b, F_oc, F_b = (b.var(name) for name in CONVEX_SYMBOLS)
    nodes, intervals = np.arange(N), np.arange(N - 1)
    rho, theta = column(track.rho), column(track.theta)
    theta_k = column(track.theta[:-1])
    s_k = track.s[:-1]

    b.bound("v", lower=vehicle.v_floor, upper=vehicle.v_cap)
    b.bound("dtds", lower=1.0 / vehicle.v_cap)
    b.bound("E_kin", lower=0.5 * M * vehicle.v_floor**2)
    b.bound("E_b", lower=0.0, upper=pack.E_b_max)
    b.fix("v", vehicle.v0, 0)
    b.fix("E_kin", 0.5 * M * vehicle.v0**2, 0)
    b.fix("E_b", initial_soc * pack.E_b_max, 0)
    b.pin_terminal_controls()

    t, u = lethargy_cone_terms(v, dtds, disc.v_bar)
    b.add_cone("lethargy_cone", t, u, nodes, scale=V_REF / disc.v_bar)
    t, u = kinetic_relaxation_terms(v, E, M, V_REF)
    b.add_cone("kinetic_relaxation", t, u, nodes, scale=V_REF)
    t, u = ellipse_cone_terms(T_w, E, rho, theta, M, vehicle)
    b.add_cone("friction_ellipse", t, u, nodes, scale=Mg)

    E_next = rk4_state_step(
        lambda x, tw, s: kinetic_derivative(x, tw, theta_k, M, vehicle), E[0 : N - 1], T_w[0 : N - 1], s_k, ds
    )
    b.add("kinetic_dynamics", E[1:N] - E_next, intervals, scale=scales["E_kin"])
    Eb_next = rk4_state_step(lambda x, f_oc, s: -f_oc, E_b[0 : N - 1], F_oc[0 : N - 1], s_k, ds)
    b.add("battery_dynamics", E_b[1:N] - Eb_next, intervals, scale=pack.E_b_max)

    t, u = battery_cone_terms(F_oc, F_b, dtds, pack, disc.v_bar, disc.F_bar)
    b.add_cone("battery_cone", t, u, nodes, scale=Mg / disc.F_bar)

    # Battery limits multiplied through by dtds: I_b*dtds = F_oc/V_n, V_b*dtds, P_b*dtds = F_b
    current_flow = F_oc / pack.V_n
    voltage_flow = pack.V_n * dtds - pack.R0 * F_oc / pack.V_n
    current_scale = _current_scale(pack) / V_REF
    voltage_scale = pack.V_n / V_REF
    b.add("battery_current_low", pack.I_min_pack * dtds - current_flow, nodes, "le", scale=current_scale)
    b.add("battery_current_high", current_flow - pack.I_max_pack * dtds, nodes, "le", scale=current_scale)
    b.add("battery_voltage_low", pack.V_min_pack * dtds - voltage_flow, nodes, "le", scale=voltage_scale)
    b.add("battery_voltage_high", voltage_flow - pack.V_max_pack * dtds, nodes, "le", scale=voltage_scale)
    b.add("battery_power_low", pack.P_b_min * dtds - F_b, nodes, "le", scale=Mg)
    b.add("battery_power_high", F_b - pack.P_b_max * dtds, nodes, "le", scale=Mg)

    traction, braking = convex_coupling_residuals(T_w, F_b, powertrain, vehicle.R_w)
    b.add("coupling_traction", traction, nodes, "le", scale=Mg)
    b.add("coupling_braking", braking, nodes, "le", scale=Mg)

    return b.build(ds * cs.sum1(dtds[0 : N - 1]), "lethargy-sum")


def assemble_nonconvex(
    track: TrackProfile,
    vehicle: VehicleParams,
    pack: PackParams,
    model: BatteryModelKind,
    powertrain: PowertrainParams,
    disc: DiscretizationConfig,
    initial_soc: float = 1.0,
) -> AssembledProblem:
    model = BatteryModelKind(model)
    rc = model is BatteryModelKind.VSOC_RC
    if rc and (pack.R1 is None or pack.C1 is None):
        raise ConfigurationError("VSoC-RC needs an RC pair; derive the pack with an rc_set")
    disc.check_track(track)
    ctx = ProblemContext(Formulation.NONCONVEX, model, track, vehicle, pack, powertrain, disc, initial_soc)
    M, g, N, ds = ctx.M, vehicle.g, track.n_nodes, disc.ds
    torque_scale = _torque_scale(vehicle, M)
    current_scale = _current_scale(pack)
    power_scale = _power_scale(pack)
    scales = {
        "v": V_REF,
        "zeta": 1.0,
        "V1": max(pack.R1 * current_scale, 1.0) if rc else 1.0,
        "T_w": torque_scale,
        "T_m": torque_scale,
        "T_br": torque_scale,
        "I_b": current_scale,
    }
    layout = DecisionLayout.for_problem(Formulation.NONCONVEX, model, N, scales)
    b = ProblemBuilder(layout, ctx)
    v, zeta = b.var("v"), b.var("zeta")
    V1 = b.var("V1") if rc else None
    T_w, T_m, T_br, I_b = (b.var(name) for name in ("T_w", "T_m", "T_br", "I_b"))
    nodes, intervals = np.arange(N), np.arange(N - 1)
    rho, theta = column(track.rho), column(track.theta)
    theta_k = column(track.theta[:-1])
    s_k = track.s[:-1]

    b.bound("v", lower=vehicle.v_floor, upper=vehicle.v_cap)
    b.bound("zeta", lower=0.0, upper=1.0)
    b.bound("I_b", lower=pack.I_min_pack, upper=pack.I_max_pack)
    b.bound("T_br", upper=0.0, lower=-powertrain.brake_torque_max if powertrain.brake_torque_max is not None else None)
    b.fix("v", vehicle.v0, 0)
    b.fix("zeta", initial_soc, 0)
    if rc:
        b.fix("V1", 0.0, 0)
    b.pin_terminal_controls()

    def rhs(x, controls, s):
        v_, zeta_ = x[0], x[1]
        tw, ib = controls
        derivatives = (
            speed_derivative(v_, tw, theta_k, M, vehicle),
            soc_derivative(ib, v_, pack.Q_b, vehicle.v_floor),
        )
        if rc:
            derivatives += (rc_derivative(x[2], ib, v_, pack.R1, pack.C1, vehicle.v_floor),)
        return derivatives

    states = (v[0 : N - 1], zeta[0 : N - 1]) + ((V1[0 : N - 1],) if rc else ())
    following = rk4_state_step(rhs, states, (T_w[0 : N - 1], I_b[0 : N - 1]), s_k, ds)
    b.add("speed_dynamics", v[1:N] - following[0], intervals, scale=V_REF)
    b.add("soc_dynamics", zeta[1:N] - following[1], intervals)
    if rc:
        b.add("rc_dynamics", V1[1:N] - following[2], intervals, scale=scales["V1"])

    b.add("torque_split", T_w - T_m - T_br, nodes, scale=torque_scale)
    b.add("friction_ellipse", friction_ellipse_residual(T_w, v, rho, theta, M, vehicle), nodes, "le", scale=(M * g) ** 2)

    V_b = terminal_voltage(model, BatteryState(zeta=zeta, V1=V1), I_b, pack)
    P_b = V_b * I_b
    b.add("battery_voltage_low", pack.V_min_pack - V_b, nodes, "le", scale=pack.V_n)
    b.add("battery_voltage_high", V_b - pack.V_max_pack, nodes, "le", scale=pack.V_n)
    b.add("battery_power_low", pack.P_b_min - P_b, nodes, "le", scale=power_scale)
    b.add("battery_power_high", P_b - pack.P_b_max, nodes, "le", scale=power_scale)
    b.add(
        "powertrain_coupling",
        coupling_residual(T_m, v, V_b, I_b, powertrain, vehicle.R_w),
        nodes,
        scale=power_scale,
    )

    return b.build(ds * cs.sum1(1.0 / v[0 : N - 1]), "inverse-speed-sum")


def assemble(formulation: Formulation, track, vehicle, pack, model, powertrain, disc, initial_soc: float = 1.0) -> AssembledProblem:
    """Dispatch on the formulation."""
    if Formulation(formulation) is Formulation.CONVEX:
        return assemble_convex(track, vehicle, pack, powertrain, disc, model=model, initial_soc=initial_soc)
    return assemble_nonconvex(track, vehicle, pack, model, powertrain, disc, initial_soc=initial_soc)


def simulate_controls(problem: AssembledProblem, controls: Mapping[str, np.ndarray]) -> np.ndarray:
    """Forward RK4 of the problem's own dynamics under given per-node controls; returns z."""
    ctx = problem.context
    n = problem.layout.n_nodes
    values: dict[str, np.ndarray] = {name: np.zeros(n) for name in problem.layout.symbols}
    for name, series in controls.items():
        values[name] = np.asarray(series, dtype=float).copy()
        values[name][-1] = 0.0
    M, ds, vehicle, pack = ctx.M, ctx.disc.ds, ctx.vehicle, ctx.pack
    theta = ctx.track.theta

    if ctx.formulation is Formulation.CONVEX:
        values["E_kin"][0] = 0.5 * M * vehicle.v0**2
        values["E_b"][0] = ctx.initial_soc * pack.E_b_max
        for k in range(n - 1):
            values["E_kin"][k + 1] = rk4_state_step(
                lambda x, tw, s: kinetic_derivative(x, tw, theta[k], M, vehicle),
                values["E_kin"][k], values["T_w"][k], ctx.track.s[k], ds,
            )
            values["E_b"][k + 1] = values["E_b"][k] - ds * values["F_oc"][k]
        values["v"] = np.sqrt(np.maximum(2.0 * values["E_kin"] / M, 0.0))
        with np.errstate(divide="ignore"):
            values["dtds"] = 1.0 / values["v"]
        return problem.pack(values)

    rc = ctx.model is BatteryModelKind.VSOC_RC
    if "T_w" not in controls:
        values["T_w"] = values["T_m"] + values["T_br"]
    values["v"][0] = vehicle.v0
    values["zeta"][0] = ctx.initial_soc
    for k in range(n - 1):
        def rhs(x, u, s):
            out = (
                speed_derivative(x[0], u[0], theta[k], M, vehicle),
                soc_derivative(u[1], x[0], pack.Q_b, vehicle.v_floor),
            )
            if rc:
                out += (rc_derivative(x[2], u[1], x[0], pack.R1, pack.C1, vehicle.v_floor),)
            return out

        state = (values["v"][k], values["zeta"][k]) + ((values["V1"][k],) if rc else ())
        nxt = rk4_state_step(rhs, state, (values["T_w"][k], values["I_b"][k]), ctx.track.s[k], ds)
        values["v"][k + 1], values["zeta"][k + 1] = nxt[0], nxt[1]
        if rc:
            values["V1"][k + 1] = nxt[2]
    return problem.pack(values)
