"""
Solvers for assembled race problems.

The convex formulation goes to Clarabel through cvxpy. The non-convex formulation
goes to IPOPT through casadi's nlpsol, or through a trust-region successive
convexification whose linearized subproblems reuse the conic engine. Solver
outcomes are reported as SolveStatus values, never raised.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import casadi as cs
import cvxpy as cp
import numpy as np

from .battery import BatteryModelKind, PackParams
from .exceptions import ConfigurationError, UnsupportedCombinationError, WarmStartError
from .powertrain import PowertrainParams, recover_brake_torque
from .solution import Formulation, RaceSolution, SolveStatus
from .transcription import AssembledProblem, BlockKind
from .vehicle import VehicleParams

logger = logging.getLogger(__name__)

NLP_METHODS = ("ipopt", "scp")

_IPOPT_STATUS = {
    "Solve_Succeeded": SolveStatus.OPTIMAL,
    "Solved_To_Acceptable_Level": SolveStatus.OPTIMAL,
    "Infeasible_Problem_Detected": SolveStatus.INFEASIBLE,
    "Maximum_Iterations_Exceeded": SolveStatus.MAX_ITER,
}

_CVXPY_STATUS = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.OPTIMAL_INACCURATE: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INFEASIBLE,
    cp.USER_LIMIT: SolveStatus.MAX_ITER,
}


@dataclass(frozen=True)
class SolveSettings:
    tol_feas: float | None = None
    tol_opt: float | None = None
    max_iter: int = 500
    nlp_method: str = "ipopt"
    trust_region_initial: float = 1.0
    trust_region_shrink: float = 0.5
    trust_region_grow: float = 2.0
    merit_weight: float = 1e3
    # A solve is only reported optimal if the measured scaled violation stays below this
    tol_accept: float = 1e-5
    verbose: bool = False
    warm_start: RaceSolution | None = None

    def __post_init__(self):
        for name in ("tol_feas", "tol_opt"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigurationError(f"solver.{name} must be positive")
        if not self.tol_accept > 0:
            raise ConfigurationError("solver.tol_accept must be positive")
        if int(self.max_iter) < 1:
            raise ConfigurationError("solver.max_iter must be at least 1")
        if self.nlp_method not in NLP_METHODS:
            raise ConfigurationError(f"solver.nlp_method must be one of {', '.join(NLP_METHODS)}")
        if not 0 < self.trust_region_shrink < 1 or not self.trust_region_grow > 1:
            raise ConfigurationError("trust region factors need 0 < shrink < 1 < grow")
        if not self.trust_region_initial > 0:
            raise ConfigurationError("solver.trust_region_initial must be positive")

    def feasibility(self, conic: bool) -> float:
        return self.tol_feas if self.tol_feas is not None else (1e-8 if conic else 1e-6)

    def optimality(self, conic: bool) -> float:
        return self.tol_opt if self.tol_opt is not None else (1e-8 if conic else 1e-6)


@dataclass(frozen=True)
class SolveReport:
    status: SolveStatus
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    wall_time: float
    max_violation: float
    solver: str
    message: str = ""

    def as_dict(self) -> dict:
        data = asdict(self)
        data["status"] = self.status.value
        return data


def _accept(status: SolveStatus, violation: float, settings: SolveSettings) -> tuple[SolveStatus, str]:
    if status is SolveStatus.OPTIMAL and not violation <= settings.tol_accept:
        return SolveStatus.NUMERICAL_FAILURE, f"solver claimed optimality but max violation is {violation:.3g}"
    return status, ""


def _failed(problem: AssembledProblem, z, status: SolveStatus, solver: str, start: float, message: str):
    z = np.asarray(z, dtype=float)
    report = SolveReport(
        status=status,
        objective=math.nan,
        primal_residual=math.nan,
        dual_residual=math.nan,
        iterations=0,
        wall_time=time.perf_counter() - start,
        max_violation=problem.max_violation(z),
        solver=solver,
        message=message,
    )
    logger.info("solve solver=%s status=%s message=%r", solver, status.value, message)
    return problem.unpack(z, status, race_time=math.nan), report


def _contradictory_bounds(problem: AssembledProblem) -> bool:
    return bool(np.any(problem.lbz > problem.ubz))


def _bound_constraints(problem: AssembledProblem, z: cp.Expression) -> list:
    constraints = []
    lower = np.flatnonzero(np.isfinite(problem.lbz))
    upper = np.flatnonzero(np.isfinite(problem.ubz))
    if lower.size:
        constraints.append(z[lower] >= problem.lbz[lower])
    if upper.size:
        constraints.append(z[upper] <= problem.ubz[upper])
    return constraints


def conic_constraints(problem: AssembledProblem, z: cp.Variable) -> list:
    """cvxpy constraints of every block; linear rows from the casadi Jacobian at z = 0."""
    constraints = _bound_constraints(problem, z)
    for block in problem.blocks:
        if block.is_cone:
            t, u = block.cone
            T, t0 = problem.linear_form(t)
            parts = [problem.linear_form(ui) for ui in u]
            constraints.append(cp.SOC(T @ z + t0, cp.vstack([U @ z + u0 for U, u0 in parts]), axis=0))
        elif block.kind is BlockKind.LINEAR_EQUALITY:
            A, b0 = problem.linear_form(block.expr)
            constraints.append(A @ z + b0 == 0)
        elif block.kind is BlockKind.LINEAR_INEQUALITY:
            A, b0 = problem.linear_form(block.expr)
            constraints.append(A @ z + b0 <= 0)
        else:
            raise UnsupportedCombinationError(f"block {block.name} is not conic-representable")
    return constraints


def _clarabel_options(settings: SolveSettings, feas: float, opt: float) -> dict:
    return {
        "tol_feas": feas,
        "tol_gap_abs": opt,
        "tol_gap_rel": opt,
        "max_iter": int(settings.max_iter),
    }


def solve_conic(problem: AssembledProblem, settings: SolveSettings | None = None) -> tuple[RaceSolution, SolveReport]:
    settings = settings or SolveSettings()
    if not problem.is_convex:
        raise UnsupportedCombinationError("the conic path needs a convex problem (no smooth-nonlinear blocks)")
    start = time.perf_counter()
    if _contradictory_bounds(problem):
        return _failed(problem, problem.initial_guess(), SolveStatus.INFEASIBLE, "clarabel", start, "contradictory variable bounds")

    z = cp.Variable(problem.n_vars)
    c, c0 = problem.linear_form(problem.objective)
    objective = cp.Minimize(np.asarray(c.todense()).ravel() @ z + float(c0[0]))
    prob = cp.Problem(objective, conic_constraints(problem, z))
    feas, opt = settings.feasibility(True), settings.optimality(True)
    try:
        prob.solve(solver=cp.CLARABEL, verbose=settings.verbose, **_clarabel_options(settings, feas, opt))
    except cp.error.SolverError as exc:
        return _failed(problem, problem.initial_guess(), SolveStatus.NUMERICAL_FAILURE, "clarabel", start, str(exc))

    status = _CVXPY_STATUS.get(prob.status, SolveStatus.NUMERICAL_FAILURE)
    if z.value is None:
        message = f"no primal point returned (cvxpy status {prob.status})"
        return _failed(problem, problem.initial_guess(), status if status is not SolveStatus.OPTIMAL else SolveStatus.NUMERICAL_FAILURE, "clarabel", start, message)

    z_val = np.asarray(z.value, dtype=float)
    violation = problem.max_violation(z_val)
    status, message = _accept(status, violation, settings)
    if prob.status == cp.OPTIMAL_INACCURATE and status is SolveStatus.OPTIMAL:
        message = "reduced accuracy exit accepted"
    extra = prob.solver_stats.extra_stats
    report = SolveReport(
        status=status,
        objective=problem.objective_value(z_val),
        primal_residual=float(getattr(extra, "r_prim", math.nan)),
        dual_residual=float(getattr(extra, "r_dual", math.nan)),
        iterations=int(prob.solver_stats.num_iters or 0),
        wall_time=time.perf_counter() - start,
        max_violation=violation,
        solver="clarabel",
        message=message,
    )
    logger.info(
        "solve solver=clarabel status=%s objective=%.6f iterations=%d violation=%.3g wall_time=%.2f",
        report.status.value, report.objective, report.iterations, violation, report.wall_time,
    )
    return problem.unpack(z_val, status, race_time=report.objective), report


def _initial_point(problem: AssembledProblem, settings: SolveSettings) -> np.ndarray:
    if settings.warm_start is None:
        return problem.initial_guess()
    z0 = problem.pack_solution(settings.warm_start)
    return np.clip(z0, problem.lbz, problem.ubz)


def _constraint_bounds(blocks) -> tuple[np.ndarray, np.ndarray]:
    lower, upper = [], []
    for block in blocks:
        lower.append(np.zeros(block.size) if block.sense == "eq" else np.full(block.size, -np.inf))
        upper.append(np.zeros(block.size))
    return np.concatenate(lower), np.concatenate(upper)


def solve_nlp(problem: AssembledProblem, settings: SolveSettings | None = None) -> tuple[RaceSolution, SolveReport]:
    settings = settings or SolveSettings()
    if any(block.is_cone for block in problem.blocks):
        raise UnsupportedCombinationError("the nonlinear path expects a problem without cone blocks")
    start = time.perf_counter()
    z0 = _initial_point(problem, settings)
    solver_name = settings.nlp_method
    if _contradictory_bounds(problem):
        return _failed(problem, z0, SolveStatus.INFEASIBLE, solver_name, start, "contradictory variable bounds")
    if settings.nlp_method == "scp":
        return _solve_scp(problem, settings, z0, start)

    g = cs.vertcat(*[block.expr for block in problem.blocks])
    lbg, ubg = _constraint_bounds(problem.blocks)
    opts = {
        "ipopt.tol": settings.optimality(False),
        "ipopt.constr_viol_tol": settings.feasibility(False),
        "ipopt.max_iter": int(settings.max_iter),
        "ipopt.print_level": 5 if settings.verbose else 0,
        "ipopt.sb": "yes",
        "print_time": False,
    }
    if settings.warm_start is not None:
        opts.update({
            "ipopt.warm_start_init_point": "yes",
            "ipopt.warm_start_bound_push": 1e-6,
            "ipopt.warm_start_slack_bound_push": 1e-6,
            "ipopt.mu_init": 1e-3,
        })
    nlp = cs.nlpsol("race", "ipopt", {"x": problem.z, "f": problem.objective, "g": g}, opts)
    try:
        sol = nlp(x0=z0, lbx=problem.lbz, ubx=problem.ubz, lbg=lbg, ubg=ubg)
    except RuntimeError as exc:
        return _failed(problem, z0, SolveStatus.NUMERICAL_FAILURE, "ipopt", start, str(exc))

    stats = nlp.stats()
    return_status = stats.get("return_status", "")
    status = _IPOPT_STATUS.get(return_status, SolveStatus.NUMERICAL_FAILURE)
    z_val = np.array(sol["x"], dtype=float).ravel()
    violation = problem.max_violation(z_val)
    status, message = _accept(status, violation, settings)
    iterations = stats.get("iterations") or {}
    report = SolveReport(
        status=status,
        objective=problem.objective_value(z_val),
        primal_residual=float(iterations["inf_pr"][-1]) if iterations.get("inf_pr") else math.nan,
        dual_residual=float(iterations["inf_du"][-1]) if iterations.get("inf_du") else math.nan,
        iterations=int(stats.get("iter_count", 0)),
        wall_time=time.perf_counter() - start,
        max_violation=violation,
        solver="ipopt",
        message=message or return_status,
    )
    logger.info(
        "solve solver=ipopt status=%s return_status=%s objective=%.6f iterations=%d violation=%.3g wall_time=%.2f",
        report.status.value, return_status, report.objective, report.iterations, violation, report.wall_time,
    )
    return problem.unpack(z_val, status, race_time=report.objective), report


def _solve_scp(problem: AssembledProblem, settings: SolveSettings, z0: np.ndarray, start: float):
    eq_blocks = [b for b in problem.blocks if b.sense == "eq"]
    le_blocks = [b for b in problem.blocks if b.sense == "le"]
    weight = settings.merit_weight
    feas, opt = settings.feasibility(False), settings.optimality(False)

    def infeasibility(z) -> float:
        total = 0.0
        values = problem.evaluate(z)
        for b in eq_blocks:
            total += float(np.sum(np.abs(values[b.name])))
        for b in le_blocks:
            total += float(np.sum(np.maximum(values[b.name], 0.0)))
        return total

    def merit(z) -> float:
        return problem.objective_value(z) + weight * infeasibility(z)

    z = np.asarray(z0, dtype=float)
    radius = settings.trust_region_initial
    current = merit(z)
    last_ratio = math.nan
    for iteration in range(1, int(settings.max_iter) + 1):
        g_eq, J_eq = problem.jacobian(z, eq_blocks)
        g_le, J_le = problem.jacobian(z, le_blocks)
        grad = problem.objective_gradient(z)

        d = cp.Variable(problem.n_vars)
        s_pos = cp.Variable(len(g_eq), nonneg=True)
        s_neg = cp.Variable(len(g_eq), nonneg=True)
        s_le = cp.Variable(len(g_le), nonneg=True)
        constraints = [
            g_eq + J_eq @ d == s_pos - s_neg,
            g_le + J_le @ d <= s_le,
            d <= radius,
            d >= -radius,
        ]
        constraints += _bound_constraints(problem, z + d)
        model = grad @ d + weight * (cp.sum(s_pos) + cp.sum(s_neg) + cp.sum(s_le))
        sub = cp.Problem(cp.Minimize(model), constraints)
        try:
            sub.solve(solver=cp.CLARABEL, verbose=False)
        except cp.error.SolverError:
            sub = None
        if sub is None or d.value is None or sub.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            radius *= settings.trust_region_shrink
            if radius < 1e-10:
                break
            continue

        step = np.asarray(d.value, dtype=float)
        predicted = current - (problem.objective_value(z) + float(sub.value))
        violation = problem.max_violation(z)
        if predicted <= opt * max(1.0, abs(current)) and violation <= feas:
            status, message = _accept(SolveStatus.OPTIMAL, violation, settings)
            return _scp_report(problem, z, status, iteration, violation, last_ratio, start, message)

        candidate = merit(z + step)
        ratio = (current - candidate) / predicted if predicted > 0 else -math.inf
        last_ratio = ratio
        if ratio >= 0.1:
            z = z + step
            current = candidate
        if ratio < 0.25:
            radius *= settings.trust_region_shrink
        elif ratio > 0.75 and np.max(np.abs(step)) >= 0.99 * radius:
            radius *= settings.trust_region_grow
        logger.debug(
            "scp iter=%d merit=%.9g predicted=%.3g ratio=%.3f radius=%.3g violation=%.3g",
            iteration, current, predicted, ratio, radius, violation,
        )
        if radius < 1e-10:
            break
    else:
        violation = problem.max_violation(z)
        return _scp_report(problem, z, SolveStatus.MAX_ITER, int(settings.max_iter), violation, last_ratio, start,
                           "iteration limit reached; best point returned")

    violation = problem.max_violation(z)
    return _scp_report(problem, z, SolveStatus.NUMERICAL_FAILURE, iteration, violation, last_ratio, start,
                       "trust region collapsed")


def _scp_report(problem, z, status, iterations, violation, ratio, start, message):
    objective = problem.objective_value(z)
    report = SolveReport(
        status=status,
        objective=objective,
        primal_residual=violation,
        dual_residual=math.nan,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        max_violation=violation,
        solver="scp",
        message=message,
    )
    logger.info(
        "solve solver=scp status=%s objective=%.6f iterations=%d violation=%.3g last_ratio=%.3f",
        status.value, objective, iterations, violation, ratio,
    )
    return problem.unpack(z, status, race_time=objective), report


def solve(problem: AssembledProblem, settings: SolveSettings | None = None) -> tuple[RaceSolution, SolveReport]:
    if problem.context.formulation is Formulation.CONVEX:
        return solve_conic(problem, settings)
    return solve_nlp(problem, settings)


def initialize_from_convex(
    convex_solution: RaceSolution,
    model: BatteryModelKind,
    *,
    pack: PackParams,
    powertrain: PowertrainParams,
    vehicle: VehicleParams,
) -> RaceSolution:
    """Map an optimal convex solution onto the non-convex variables of `model`."""
    if convex_solution.formulation is not Formulation.CONVEX:
        raise WarmStartError("warm start needs a convex solution")
    if not convex_solution.is_optimal:
        raise WarmStartError(f"refusing to warm start from a {convex_solution.status.value} convex solution")
    model = BatteryModelKind(model)
    sol = convex_solution
    M = sol.M
    v = np.maximum(np.sqrt(2.0 * np.maximum(sol.E_kin, 0.0) / M), vehicle.v_floor)
    I_b = np.clip(sol.F_oc * v / pack.V_n, pack.I_min_pack, pack.I_max_pack)
    zeta = np.clip(sol.E_b / (pack.Q_b * pack.V_n), 0.0, 1.0)
    recovered = np.minimum(recover_brake_torque(sol.T_w, sol.F_b, powertrain, vehicle.R_w), 0.0)
    T_br = np.where(sol.T_w < 0, recovered, 0.0)
    T_m = sol.T_w - T_br
    V1 = np.zeros_like(v) if model is BatteryModelKind.VSOC_RC else None
    return RaceSolution(
        formulation=Formulation.NONCONVEX,
        model=model,
        s=np.array(sol.s),
        race_time=sol.race_time,
        status=sol.status,
        N_p=sol.N_p,
        M=M,
        v=v,
        T_w=np.array(sol.T_w),
        T_m=T_m,
        T_br=T_br,
        I_b=I_b,
        zeta=zeta,
        V1=V1,
    )
