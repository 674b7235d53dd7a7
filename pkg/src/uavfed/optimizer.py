"""Block-coordinate descent over the two convexified subproblems.

Each outer iteration solves the user block (frequencies and transmit
powers) to its own successive-approximation fixed point, then the UAV
block (waypoints and per-slot powers), re-linearizing after every inner
pass. A candidate block solution is accepted only if the true round
energy (worst-slot accounting, :func:`uavfed.model.round_totals`) does
not increase, which together with the tightness of every bound at the
linearization point makes the recorded energy trace non-increasing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AllocationSolution,
    SystemConfig,
    UserProfile,
    constraint_residuals,
    round_totals,
)
from .solver import SolverError, solve_convex
from .subproblems import (
    LinearizationPoint,
    build_joint,
    build_subproblem1,
    build_subproblem2,
    initial_solution,
    joint_extract,
    joint_init_vector,
    sp1_extract,
    sp1_init_vector,
    sp2_extract,
    sp2_init_vector,
    straight_line_trajectory,
)
from .twin import TwinState

__all__ = [
    "OuterRecord",
    "SolveTrace",
    "BcdError",
    "InfeasibleInitError",
    "bcd_optimize",
    "baseline_fixed_trajectory",
    "baseline_fixed_allocation",
]

_REL_EPS = 1e-30


class BcdError(RuntimeError):
    pass


class InfeasibleInitError(BcdError):
    pass


@dataclass(frozen=True)
class OuterRecord:
    outer_iter: int
    energy_j: float
    feas_residual: float
    sp1_inner: int
    sp2_inner: int
    joint_inner: int = 0
    wall_ms: float = 0.0


@dataclass
class SolveTrace:
    records: list[OuterRecord] = field(default_factory=list)
    status: str = "converged"
    iterates: list[AllocationSolution] = field(default_factory=list)

    def energies(self) -> list[float]:
        return [r.energy_j for r in self.records]

    def csv_rows(self) -> list[str]:
        rows = ["outer_iter,energy_j,feas_residual,inner_iters,ms"]
        for r in self.records:
            rows.append(
                f"{r.outer_iter},{r.energy_j:.12g},{r.feas_residual:.6g},"
                f"{r.sp1_inner + r.sp2_inner + r.joint_inner},{r.wall_ms:.3f}"
            )
        return rows


@dataclass
class _BcdSettings:
    outer_tol: float = 1e-3
    max_outer: int = 30
    inner_tol: float = 1e-4
    max_inner: int = 60
    feas_tol: float = 1e-6
    trust_factor: float = 30.0
    record_timings: bool = False
    record_iterates: bool = False


def _energy(solution: AllocationSolution, users, cfg) -> float:
    return round_totals(solution, users, cfg).total_energy_j


def _solve_user_block(current, users, cfg, st: _BcdSettings, trace: SolveTrace):
    """Inner SCA loop on subproblem 1; returns (solution, passes)."""
    best = current
    best_e = _energy(best, users, cfg)
    passes = 0
    for _ in range(st.max_inner):
        lin = LinearizationPoint.from_solution(best, users, cfg)
        spec = build_subproblem1(
            users, best.trajectory, best.uav_power, lin, cfg, trust_factor=st.trust_factor
        )
        res = solve_convex(spec, sp1_init_vector(lin), feas_tol=st.feas_tol)
        passes += 1
        f, q = sp1_extract(res.x, len(users))
        cand = best.replace(freq=f, user_power=q)
        e = _energy(cand, users, cfg)
        if e >= best_e:
            break
        rel = (best_e - e) / max(best_e, _REL_EPS)
        best, best_e = cand, e
        if st.record_iterates:
            trace.iterates.append(cand)
        if rel < st.inner_tol:
            break
    return best, passes


def _solve_uav_block(current, users, cfg, st: _BcdSettings, trace: SolveTrace):
    """Inner SCA loop on subproblem 2; returns (solution, passes)."""
    best = current
    best_e = _energy(best, users, cfg)
    passes = 0
    for _ in range(st.max_inner):
        lin = LinearizationPoint.from_solution(best, users, cfg)
        spec = build_subproblem2(
            users, best.freq, best.user_power, lin, cfg, trust_factor=st.trust_factor
        )
        res = solve_convex(spec, sp2_init_vector(best, lin, cfg), feas_tol=st.feas_tol)
        passes += 1
        traj, q_uav = sp2_extract(res.x, cfg)
        cand = best.replace(trajectory=traj, uav_power=q_uav)
        e = _energy(cand, users, cfg)
        if e >= best_e:
            break
        rel = (best_e - e) / max(best_e, _REL_EPS)
        best, best_e = cand, e
        if st.record_iterates:
            trace.iterates.append(cand)
        if rel < st.inner_tol:
            break
    return best, passes


def _solve_joint_block(current, users, cfg, st: _BcdSettings, trace: SolveTrace):
    """Joint convexified pass over all variables; rebalances the shared
    latency budget that the block alternation cannot renegotiate."""
    best = current
    best_e = _energy(best, users, cfg)
    passes = 0
    for _ in range(st.max_inner):
        lin = LinearizationPoint.from_solution(best, users, cfg)
        spec = build_joint(users, lin, cfg, trust_factor=st.trust_factor)
        res = solve_convex(spec, joint_init_vector(best, lin, cfg), feas_tol=st.feas_tol)
        passes += 1
        cand = joint_extract(res.x, cfg, len(users))
        e = _energy(cand, users, cfg)
        if e >= best_e:
            break
        rel = (best_e - e) / max(best_e, _REL_EPS)
        best, best_e = cand, e
        if st.record_iterates:
            trace.iterates.append(cand)
        if rel < st.inner_tol:
            break
    return best, passes


def _run_bcd(
    users: list[UserProfile],
    cfg: SystemConfig,
    init: AllocationSolution,
    st: _BcdSettings,
    blocks: str = "both",
) -> tuple[AllocationSolution, SolveTrace]:
    trace = SolveTrace()
    res0 = constraint_residuals(init, users, cfg)
    if res0.max_scaled > 1e-9:
        worst = max(res0.scaled().items(), key=lambda kv: kv[1])
        raise InfeasibleInitError(
            f"initial solution violates '{worst[0]}' by {worst[1]:.3e} (scaled)"
        )
    if not users:
        trace.status = "converged"
        return init, trace

    current = init
    e_cur = _energy(current, users, cfg)
    trace.status = "max_outer"
    for it in range(1, st.max_outer + 1):
        t0 = time.perf_counter() if st.record_timings else 0.0
        n1 = n2 = nj = 0
        try:
            if blocks in ("both", "sp1"):
                current_cand, n1 = _solve_user_block(current, users, cfg, st, trace)
            else:
                current_cand = current
            if blocks in ("both", "sp2"):
                current_cand, n2 = _solve_uav_block(current_cand, users, cfg, st, trace)
            if blocks == "both":
                current_cand, nj = _solve_joint_block(current_cand, users, cfg, st, trace)
        except SolverError as err:
            raise BcdError(f"subproblem failed at outer iteration {it}: {err}") from err
        e_new = _energy(current_cand, users, cfg)
        wall_ms = (time.perf_counter() - t0) * 1e3 if st.record_timings else 0.0

        if e_new > e_cur * (1.0 + 1e-9):
            trace.records.append(
                OuterRecord(
                    outer_iter=it,
                    energy_j=e_cur,
                    feas_residual=constraint_residuals(current, users, cfg).max_scaled,
                    sp1_inner=n1,
                    sp2_inner=n2,
                    joint_inner=nj,
                    wall_ms=wall_ms,
                )
            )
            trace.status = "stalled"
            break

        current = current_cand
        rel = (e_cur - e_new) / max(e_cur, _REL_EPS)
        e_cur = e_new
        trace.records.append(
            OuterRecord(
                outer_iter=it,
                energy_j=e_new,
                feas_residual=constraint_residuals(current, users, cfg).max_scaled,
                sp1_inner=n1,
                sp2_inner=n2,
                joint_inner=nj,
                wall_ms=wall_ms,
            )
        )
        if rel < st.outer_tol:
            trace.status = "converged"
            break
    return current, trace


def bcd_optimize(
    users: list[UserProfile],
    cfg: SystemConfig,
    init: AllocationSolution | None = None,
    twin: TwinState | None = None,
    outer_tol: float = 1e-3,
    max_outer: int = 30,
    inner_tol: float = 1e-4,
    max_inner: int = 60,
    record_timings: bool = False,
    record_iterates: bool = False,
) -> tuple[AllocationSolution, SolveTrace]:
    """Joint optimization, alternating the user and UAV blocks.

    The problem is posed in compensated (actual) variables; when a twin
    is supplied the initial estimates are mapped through its deviations
    first. Raises :class:`InfeasibleInitError` if the start violates the
    original constraints and :class:`BcdError` (with the outer iteration
    index) if an inner solve fails.
    """
    if init is None:
        init = initial_solution(users, cfg)
    if twin is not None:
        init = twin.apply_to(init)
    st = _BcdSettings(
        outer_tol=outer_tol,
        max_outer=max_outer,
        inner_tol=inner_tol,
        max_inner=max_inner,
        record_timings=record_timings,
        record_iterates=record_iterates,
    )
    return _run_bcd(users, cfg, init, st, blocks="both")


def baseline_fixed_trajectory(
    users: list[UserProfile],
    cfg: SystemConfig,
    init: AllocationSolution | None = None,
    **kw,
) -> tuple[AllocationSolution, SolveTrace]:
    """Pin the waypoints to the straight start-to-end line; optimize only
    the user block (UAV powers stay at their initial values)."""
    if init is None:
        init = initial_solution(users, cfg)
    init = init.replace(trajectory=straight_line_trajectory(cfg))
    st = _BcdSettings(**kw)
    return _run_bcd(users, cfg, init, st, blocks="sp1")


def baseline_fixed_allocation(
    users: list[UserProfile],
    cfg: SystemConfig,
    init: AllocationSolution | None = None,
    **kw,
) -> tuple[AllocationSolution, SolveTrace]:
    """Pin (f_n, q_n) to the midpoint defaults; optimize only the UAV block."""
    if init is None:
        init = initial_solution(users, cfg)
    n = len(users)
    init = init.replace(
        freq=np.full(n, 0.5 * cfg.f_max_hz),
        user_power=np.full(n, 0.5 * min(cfg.q_max_w, cfg.avg_power_w)),
    )
    st = _BcdSettings(**kw)
    return _run_bcd(users, cfg, init, st, blocks="sp2")
