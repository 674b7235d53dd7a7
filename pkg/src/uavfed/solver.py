"""Inner convex solver: sequential quadratic steps over a scaled problem.

The subproblem builders emit smooth convex objectives and inequality
constraints with analytic gradients in physical units, whose magnitudes
span many decades (Hz vs W vs J). ``solve_convex`` rescales every
variable by its initial magnitude, normalizes the objective and each
constraint by a characteristic scale, and runs SLSQP on the normalized
problem; feasibility is enforced on the scaled residuals and first-order
stationarity is measured afterwards from a nonnegative least-squares fit
of the KKT multipliers on the active set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize, nnls

__all__ = [
    "Constraint",
    "SubproblemSpec",
    "SolveResult",
    "SolverError",
    "InfeasibleSubproblemError",
    "SolverConvergenceError",
    "solve_convex",
]


@dataclass(frozen=True)
class Constraint:
    """Smooth inequality g(x) <= 0 with gradient and a magnitude scale."""

    name: str
    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    scale: float = 1.0


@dataclass(frozen=True)
class SubproblemSpec:
    """Convex program in evaluator form: objective, constraints, box."""

    n_vars: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: list[Constraint]
    lower: np.ndarray
    upper: np.ndarray
    var_names: tuple[str, ...] = ()
    objective_offset: float = 0.0
    scale_hint: np.ndarray | None = None

    def violations(self, x: np.ndarray) -> dict[str, float]:
        """Scaled residuals g(x)/scale per constraint (<= 0 satisfied)."""
        return {c.name: c.fun(x) / c.scale for c in self.constraints}

    def max_violation(self, x: np.ndarray) -> float:
        if not self.constraints:
            return 0.0
        return max(self.violations(x).values())


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    objective: float
    n_iters: int
    max_violation: float
    stationarity: float
    stationarity_ok: bool
    status: str = "optimal"


class SolverError(RuntimeError):
    pass


class InfeasibleSubproblemError(SolverError):
    pass


class SolverConvergenceError(SolverError):
    pass


def solve_convex(
    spec: SubproblemSpec,
    init: np.ndarray,
    feas_tol: float = 1e-6,
    stat_tol: float = 1e-4,
    maxiter: int = 300,
) -> SolveResult:
    """Minimize the spec from ``init``; deterministic given (spec, init).

    Raises :class:`InfeasibleSubproblemError` when the SQP core reports
    incompatible inequalities and :class:`SolverConvergenceError` when the
    scaled feasibility tolerance cannot be met. Stationarity below
    ``stat_tol`` is retried once with a larger iteration budget and then
    reported via ``stationarity_ok`` rather than raised, since near a
    block-coordinate fixed point the objective gradient itself is tiny.
    """
    init = np.clip(np.asarray(init, dtype=float), spec.lower, spec.upper)
    scale = np.maximum(np.abs(init), 1e-12)
    if spec.scale_hint is not None:
        scale = np.maximum(scale, spec.scale_hint)
    f_scale = max(abs(spec.objective(init)), 1e-12)

    def obj_u(u: np.ndarray) -> float:
        return spec.objective(u * scale) / f_scale

    def grad_u(u: np.ndarray) -> np.ndarray:
        return spec.gradient(u * scale) * scale / f_scale

    cons = []
    if spec.constraints:
        c_scales = np.array([c.scale for c in spec.constraints])

        def cons_u(u: np.ndarray) -> np.ndarray:
            x = u * scale
            return -np.array([c.fun(x) for c in spec.constraints]) / c_scales

        def cons_jac_u(u: np.ndarray) -> np.ndarray:
            x = u * scale
            rows = [c.grad(x) * scale for c in spec.constraints]
            return -np.vstack(rows) / c_scales[:, None]

        cons = [{"type": "ineq", "fun": cons_u, "jac": cons_jac_u}]

    bounds = list(zip(spec.lower / scale, spec.upper / scale))
    u0 = init / scale

    statuses = []
    total_iters = 0
    u = u0
    for iters in (maxiter, 3 * maxiter):
        res = minimize(
            obj_u,
            u,
            jac=grad_u,
            bounds=bounds,
            constraints=cons,
            method="SLSQP",
            options={"maxiter": iters, "ftol": 1e-12},
        )
        statuses.append(res.status)
        total_iters += res.nit
        u = np.clip(res.x, spec.lower / scale, spec.upper / scale)
        x = u * scale
        viol = spec.max_violation(x)
        stat = _stationarity(spec, x, scale, f_scale)
        if viol <= feas_tol and stat <= stat_tol:
            break
    else:
        if viol > feas_tol:
            if 4 in statuses:
                raise InfeasibleSubproblemError(
                    f"inequality constraints incompatible (max violation {viol:.3e})"
                )
            raise SolverConvergenceError(
                f"feasibility not reached: max scaled violation {viol:.3e} "
                f"(statuses {statuses})"
            )

    return SolveResult(
        x=x,
        objective=spec.objective(x) + spec.objective_offset,
        n_iters=total_iters,
        max_violation=viol,
        stationarity=stat,
        stationarity_ok=stat <= stat_tol,
        status="optimal" if statuses[-1] == 0 else f"slsqp_status_{statuses[-1]}",
    )


def _stationarity(
    spec: SubproblemSpec, x: np.ndarray, scale: np.ndarray, f_scale: float
) -> float:
    """KKT residual in the scaled space, normalized by the gradient size.

    Fits nonnegative multipliers on active inequality and box gradients:
    min_{lambda >= 0} || grad f + sum lambda_i grad g_i ||.
    """
    act_tol = 1e-6
    gf = spec.gradient(x) * scale / f_scale
    cols = []
    for c in spec.constraints:
        if c.fun(x) / c.scale >= -act_tol:
            cols.append(c.grad(x) * scale / c.scale)
    u = x / scale
    lo = spec.lower / scale
    hi = spec.upper / scale
    for j in range(spec.n_vars):
        e = np.zeros(spec.n_vars)
        if u[j] - lo[j] <= act_tol * max(1.0, abs(lo[j])):
            e[j] = -1.0
            cols.append(e)
        elif np.isfinite(hi[j]) and hi[j] - u[j] <= act_tol * max(1.0, abs(hi[j])):
            e[j] = 1.0
            cols.append(e)
    denom = max(1.0, float(np.linalg.norm(gf)))
    if not cols:
        return float(np.linalg.norm(gf)) / denom
    a = np.column_stack(cols)
    _, resid = nnls(a, -gf)
    return float(resid) / denom
