"""Slack reformulations and convexified subproblem construction.

Both blocks follow the same recipe. The upload/download energy terms
q * payload/B / log2(1 + SNR) are pulled apart with slack chains

    theta <= SNR,  psi <= log2(1 + theta),  z * psi >= beta * q,

whose non-convex members are restricted by the three primitives in
:mod:`uavfed.bounds`: products bounded below via the quarter-square
identity plus an affine minorant, the log via its -c/x lower bound, and
products bounded above via AM-GM. Every bound is tight at the
linearization point, so the previous iterate (with tight slacks) is
always feasible and the true objective can only descend.

The SNR chains carry the reference factor beta0 explicitly so that a
tightened chain reconstructs the physical rate exactly; slot-indexed
constraints are enforced for every slot, which pins each user's
communication cost at its worst slot along the trajectory, matching the
accounting in :mod:`uavfed.model`.

Subproblem 1 (user block: f_n, q_n) treats the trajectory and UAV powers
as constants. Subproblem 2 (UAV block: waypoints, per-slot powers) keeps
the training energy constant but carries the uplink energy and latency
through a second slack chain in the shared worst-distance variable, so
that trajectory moves cannot silently break the latency cap or inflate
the uplink cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    AllocationSolution,
    SystemConfig,
    UavTrajectory,
    UserProfile,
    download_time_energy,
    sq_distances,
)
from .solver import Constraint, SubproblemSpec

__all__ = [
    "LinearizationPoint",
    "LatencyBudgetError",
    "build_subproblem1",
    "build_subproblem2",
    "build_joint",
    "straight_line_trajectory",
    "initial_solution",
    "sp1_init_vector",
    "sp1_extract",
    "sp2_init_vector",
    "sp2_extract",
    "joint_init_vector",
    "joint_extract",
]

LN2 = math.log(2.0)
SLACK_FLOOR = 1e-9


class LatencyBudgetError(ValueError):
    """Structured infeasibility: constant phases already exceed T_max."""


@dataclass(frozen=True)
class LinearizationPoint:
    """Previous-iterate values of every convexified quantity.

    User block: upload energy slack ``z``, spectral efficiency ``psi``,
    SNR ``theta`` and the upload-time slack ``t`` (paired with ``q`` in
    the bilinear time restriction). UAV block: download energy ``omega``,
    spectral efficiency ``xi``, SNR ``eta``, worst squared distance
    ``lam``, plus the uplink chain ``theta_up``/``psi_up`` evaluated in
    the same ``lam``. All components are clamped strictly positive.
    """

    f: np.ndarray
    q: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    t: np.ndarray
    omega: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    theta_up: np.ndarray
    psi_up: np.ndarray
    q_uav: np.ndarray

    @classmethod
    def from_solution(
        cls,
        solution: AllocationSolution,
        users: list[UserProfile],
        cfg: SystemConfig,
        floor: float = SLACK_FLOOR,
    ) -> "LinearizationPoint":
        """Tight slack values at the current iterate, floored at ``floor``."""
        n = len(users)
        d2 = sq_distances(solution.trajectory, users, cfg)
        worst = d2.max(axis=1) if n else np.zeros(0)
        q = np.maximum(solution.user_power, floor)
        f = np.maximum(solution.freq, floor)
        beta = np.array([u.upload_payload_bits / cfg.bandwidth_hz for u in users])
        gamma = np.array([u.model_bits / cfg.bandwidth_hz for u in users])

        theta = np.maximum(cfg.beta0 * q / worst, floor) if n else np.zeros(0)
        psi = np.maximum(np.log2(1.0 + theta), floor)
        z = np.maximum(beta * q / psi, floor)
        t = np.maximum(z / q, floor)

        q_uav = np.maximum(solution.uav_power, floor)
        q_min = float(np.min(q_uav))
        q_max = float(np.max(q_uav))
        lam = np.maximum(worst, floor)
        eta = np.maximum(cfg.beta0 * q_min / lam, floor) if n else np.zeros(0)
        xi = np.maximum(np.log2(1.0 + eta), floor)
        omega = np.maximum(gamma * q_max / xi, floor)
        theta_up = np.maximum(cfg.beta0 * q / lam, floor) if n else np.zeros(0)
        psi_up = np.maximum(np.log2(1.0 + theta_up), floor)

        return cls(
            f=f,
            q=q,
            z=z,
            psi=psi,
            theta=theta,
            t=t,
            omega=omega,
            xi=xi,
            eta=eta,
            lam=lam,
            theta_up=theta_up,
            psi_up=psi_up,
            q_uav=q_uav,
        )


def straight_line_trajectory(cfg: SystemConfig) -> UavTrajectory:
    """K waypoints evenly spaced from start to end (end point included)."""
    start = np.asarray(cfg.start_pos, dtype=float)
    end = np.asarray(cfg.end_pos, dtype=float)
    frac = np.arange(1, cfg.k_slots + 1, dtype=float) / cfg.k_slots
    wp = start[None, :] + frac[:, None] * (end - start)[None, :]
    traj = UavTrajectory(wp)
    if np.any(traj.step_residuals(cfg) > 0):
        raise ValueError("straight-line trajectory violates the per-slot step budget")
    return traj


def initial_solution(users: list[UserProfile], cfg: SystemConfig) -> AllocationSolution:
    """Reproducible strictly feasible start: straight line, half the caps."""
    n = len(users)
    return AllocationSolution(
        trajectory=straight_line_trajectory(cfg),
        freq=np.full(n, 0.5 * cfg.f_max_hz),
        user_power=np.full(n, 0.5 * min(cfg.q_max_w, cfg.avg_power_w)),
        uav_power=np.full(cfg.k_slots, 0.5 * min(cfg.q_uav_max_w, cfg.avg_power_w)),
    )


# ---------------------------------------------------------------------------
# Subproblem 1: user frequencies and powers at fixed trajectory / UAV power
# ---------------------------------------------------------------------------

SP1_VARS = ("f", "q", "z", "psi", "theta", "t")


def _sp1_idx(i: int, name: str) -> int:
    return i * len(SP1_VARS) + SP1_VARS.index(name)


def build_subproblem1(
    users: list[UserProfile],
    trajectory: UavTrajectory,
    uav_power: np.ndarray,
    lin: LinearizationPoint,
    cfg: SystemConfig,
    trust_factor: float | None = None,
) -> SubproblemSpec:
    """Convexified user block; trajectory and q_UAV enter as constants.

    Decision vector per user: (f, q, z, psi, theta, t). The constant
    downlink time and energy are evaluated at the user's worst slot and
    the latency budget left for computing and uploading is
    T_max - T_down; a non-positive budget raises
    :class:`LatencyBudgetError`.

    ``trust_factor`` R restricts every positive variable to
    [value/R, value*R] around the linearization point; the bounds are
    loose there anyway, and the box keeps the sequential solver out of
    the 1/theta blow-up region. The outer SCA loop re-centers it.
    """
    n = len(users)
    d2 = sq_distances(trajectory, users, cfg)
    worst = d2.max(axis=1)
    beta0 = cfg.beta0

    t_down = np.zeros(n)
    e_down = np.zeros(n)
    for i, user in enumerate(users):
        times, energies = [], []
        for k in range(trajectory.k_slots):
            tk, ek = download_time_energy(user, float(uav_power[k]), float(d2[i, k]), cfg)
            times.append(tk)
            energies.append(ek)
        t_down[i] = max(times)
        e_down[i] = max(energies)
        if t_down[i] >= cfg.t_max_s:
            raise LatencyBudgetError(
                f"user {i}: downlink time {t_down[i]:.3g}s exhausts T_max={cfg.t_max_s}s"
            )

    nv = n * len(SP1_VARS)
    a_coef = np.array(
        [cfg.capacitance_coeff * u.work_cycles for u in users]
    )  # alpha*I*C*D
    cycles = np.array([u.work_cycles for u in users])
    beta = np.array([u.upload_payload_bits / cfg.bandwidth_hz for u in users])

    def objective(x: np.ndarray) -> float:
        total = 0.0
        for i in range(n):
            total += a_coef[i] * x[_sp1_idx(i, "f")] ** 2 + x[_sp1_idx(i, "z")]
        return total

    def gradient(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        for i in range(n):
            g[_sp1_idx(i, "f")] = 2.0 * a_coef[i] * x[_sp1_idx(i, "f")]
            g[_sp1_idx(i, "z")] = 1.0
        return g

    constraints: list[Constraint] = []
    for i in range(n):
        i_f, i_q = _sp1_idx(i, "f"), _sp1_idx(i, "q")
        i_z, i_ps = _sp1_idx(i, "z"), _sp1_idx(i, "psi")
        i_th, i_t = _sp1_idx(i, "theta"), _sp1_idx(i, "t")
        z_i, psi_i = float(lin.z[i]), float(lin.psi[i])
        t_i, q_i = float(lin.t[i]), float(lin.q[i])
        th_i = float(lin.theta[i])
        log_a = math.log1p(th_i) + th_i / (1.0 + th_i)
        log_c = th_i * th_i / (1.0 + th_i)
        d2w = float(worst[i])
        bt = float(beta[i])

        constraints.append(
            Constraint(
                name=f"rate_energy_{i}",
                fun=_quarter_product_fun(i_z, i_ps, i_q, bt, z_i, psi_i),
                grad=_quarter_product_grad(nv, i_z, i_ps, i_q, bt, z_i, psi_i),
                scale=1.0,
            )
        )
        constraints.append(
            Constraint(
                name=f"log_bound_{i}",
                fun=_log_bound_fun(i_ps, i_th, log_a, log_c),
                grad=_log_bound_grad(nv, i_ps, i_th, log_c),
                scale=max(log_a, 1.0),
            )
        )
        constraints.append(
            Constraint(
                name=f"snr_def_{i}",
                fun=lambda x, i_th=i_th, i_q=i_q, d2w=d2w, b0=beta0: x[i_th] * d2w
                - b0 * x[i_q],
                grad=_linear_grad(nv, {i_th: d2w, i_q: -beta0}),
                scale=max(beta0 * float(lin.q[i]), th_i * d2w, 1e-12),
            )
        )
        budget = cfg.t_max_s - float(t_down[i])
        constraints.append(
            Constraint(
                name=f"latency_{i}",
                fun=lambda x, i_f=i_f, i_t=i_t, g=float(cycles[i]), b=budget: g / x[i_f]
                + x[i_t]
                - b,
                grad=_latency1_grad(nv, i_f, i_t, float(cycles[i])),
                scale=cfg.t_max_s,
            )
        )
        constraints.append(
            Constraint(
                name=f"time_energy_{i}",
                fun=_quarter_product_fun(i_t, i_q, i_z, 1.0, t_i, q_i),
                grad=_quarter_product_grad(nv, i_t, i_q, i_z, 1.0, t_i, q_i),
                scale=1.0,
            )
        )

    lower = np.full(nv, 1e-12)
    upper = np.full(nv, np.inf)
    scale_hint = np.full(nv, 1e-12)
    for i in range(n):
        lower[_sp1_idx(i, "f")] = 1e-3
        upper[_sp1_idx(i, "f")] = cfg.f_max_hz
        lower[_sp1_idx(i, "q")] = 1e-15
        upper[_sp1_idx(i, "q")] = min(cfg.q_max_w, cfg.avg_power_w)
    if trust_factor is not None:
        center = sp1_init_vector(lin)
        lower = np.maximum(lower, center / trust_factor)
        upper = np.minimum(upper, center * trust_factor)

    names = tuple(f"{v}_{i}" for i in range(n) for v in SP1_VARS)
    return SubproblemSpec(
        n_vars=nv,
        objective=objective,
        gradient=gradient,
        constraints=constraints,
        lower=lower,
        upper=upper,
        var_names=names,
        objective_offset=float(np.sum(e_down)),
        scale_hint=scale_hint,
    )


def sp1_init_vector(lin: LinearizationPoint) -> np.ndarray:
    n = len(lin.f)
    x = np.zeros(n * len(SP1_VARS))
    for i in range(n):
        x[_sp1_idx(i, "f")] = lin.f[i]
        x[_sp1_idx(i, "q")] = lin.q[i]
        x[_sp1_idx(i, "z")] = lin.z[i]
        x[_sp1_idx(i, "psi")] = lin.psi[i]
        x[_sp1_idx(i, "theta")] = lin.theta[i]
        x[_sp1_idx(i, "t")] = lin.t[i]
    return x


def sp1_extract(x: np.ndarray, n_users: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.array([x[_sp1_idx(i, "f")] for i in range(n_users)])
    q = np.array([x[_sp1_idx(i, "q")] for i in range(n_users)])
    return f, q


# ---------------------------------------------------------------------------
# Subproblem 2: trajectory and UAV powers at fixed user frequencies/powers
# ---------------------------------------------------------------------------

SP2_VARS = ("omega", "xi", "eta", "lam", "theta_up", "psi_up")


def _sp2_idx(k_slots: int, i: int, name: str) -> int:
    return 3 * k_slots + i * len(SP2_VARS) + SP2_VARS.index(name)


def build_subproblem2(
    users: list[UserProfile],
    freq: np.ndarray,
    user_power: np.ndarray,
    lin: LinearizationPoint,
    cfg: SystemConfig,
    trust_factor: float | None = None,
) -> SubproblemSpec:
    """Convexified UAV block: waypoints, per-slot powers, per-user slacks.

    Training energy is a constant offset; uplink energy and the latency
    cap ride on the (theta_up, psi_up) chain through the shared worst
    squared distance lam so the trajectory cannot drift somewhere the
    fixed user powers could not tolerate. Includes the step budget, the
    terminal ball, the per-slot power box and the slot-averaged power cap.
    """
    n = len(users)
    kk = cfg.k_slots
    nv = 3 * kk + n * len(SP2_VARS)
    beta0 = cfg.beta0
    h2 = cfg.altitude_m**2
    l2 = cfg.max_step_m**2
    start = np.asarray(cfg.start_pos, dtype=float)
    end = np.asarray(cfg.end_pos, dtype=float)

    e_train = np.zeros(n)
    t_train = np.zeros(n)
    for i, user in enumerate(users):
        if user.data_size:
            t_train[i] = user.work_cycles / float(freq[i])
            e_train[i] = cfg.capacitance_coeff * user.work_cycles * float(freq[i]) ** 2
        if t_train[i] >= cfg.t_max_s:
            raise LatencyBudgetError(
                f"user {i}: training time {t_train[i]:.3g}s exhausts T_max={cfg.t_max_s}s"
            )

    beta = np.array([u.upload_payload_bits / cfg.bandwidth_hz for u in users])
    gamma = np.array([u.model_bits / cfg.bandwidth_hz for u in users])
    q_fixed = np.asarray(user_power, dtype=float)

    def objective(x: np.ndarray) -> float:
        total = 0.0
        for i in range(n):
            total += x[_sp2_idx(kk, i, "omega")]
            total += q_fixed[i] * beta[i] / x[_sp2_idx(kk, i, "psi_up")]
        return total

    def gradient(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        for i in range(n):
            g[_sp2_idx(kk, i, "omega")] = 1.0
            pu = x[_sp2_idx(kk, i, "psi_up")]
            g[_sp2_idx(kk, i, "psi_up")] = -q_fixed[i] * beta[i] / (pu * pu)
        return g

    constraints: list[Constraint] = []

    # trajectory step budget: start -> wp1, consecutive hops, wpK -> end
    def hop_constraint(name, ax, ay, bx, by, const_a=None, const_b=None):
        def fun(x: np.ndarray) -> float:
            xa = const_a[0] if ax is None else x[ax]
            ya = const_a[1] if ay is None else x[ay]
            xb = const_b[0] if bx is None else x[bx]
            yb = const_b[1] if by is None else x[by]
            return (xb - xa) ** 2 + (yb - ya) ** 2 - l2

        def grad(x: np.ndarray) -> np.ndarray:
            g = np.zeros(nv)
            xa = const_a[0] if ax is None else x[ax]
            ya = const_a[1] if ay is None else x[ay]
            xb = const_b[0] if bx is None else x[bx]
            yb = const_b[1] if by is None else x[by]
            if ax is not None:
                g[ax] = -2.0 * (xb - xa)
                g[ay] = -2.0 * (yb - ya)
            if bx is not None:
                g[bx] = 2.0 * (xb - xa)
                g[by] = 2.0 * (yb - ya)
            return g

        return Constraint(name=name, fun=fun, grad=grad, scale=l2)

    constraints.append(
        hop_constraint("step_start", None, None, 0, kk, const_a=start)
    )
    for k in range(kk - 1):
        constraints.append(
            hop_constraint(f"step_{k}", k, kk + k, k + 1, kk + k + 1)
        )
    constraints.append(
        hop_constraint("step_end", kk - 1, 2 * kk - 1, None, None, const_b=end)
    )

    # slot-averaged UAV power cap (linear)
    avg_grad = np.zeros(nv)
    avg_grad[2 * kk : 3 * kk] = 1.0 / kk

    def avg_fun(x: np.ndarray) -> float:
        return float(np.mean(x[2 * kk : 3 * kk])) - cfg.avg_power_w

    constraints.append(
        Constraint(
            name="quav_avg",
            fun=avg_fun,
            grad=lambda x, g=avg_grad: g,
            scale=cfg.avg_power_w,
        )
    )

    for i, user in enumerate(users):
        i_om = _sp2_idx(kk, i, "omega")
        i_xi = _sp2_idx(kk, i, "xi")
        i_et = _sp2_idx(kk, i, "eta")
        i_lm = _sp2_idx(kk, i, "lam")
        i_tu = _sp2_idx(kk, i, "theta_up")
        i_pu = _sp2_idx(kk, i, "psi_up")
        om_i, xi_i = float(lin.omega[i]), float(lin.xi[i])
        eta_i, lam_i = float(lin.eta[i]), float(lin.lam[i])
        tu_i = float(lin.theta_up[i])
        ux, uy = user.pos
        gm = float(gamma[i])

        for k in range(kk):
            i_xk, i_yk, i_qk = k, kk + k, 2 * kk + k
            constraints.append(
                Constraint(
                    name=f"dist_{i}_{k}",
                    fun=lambda x, a=i_xk, b=i_yk, l=i_lm, ux=ux, uy=uy, h2=h2: (
                        (x[a] - ux) ** 2 + (x[b] - uy) ** 2 + h2 - x[l]
                    ),
                    grad=_dist_grad(nv, i_xk, i_yk, i_lm, ux, uy),
                    scale=max(lam_i, h2),
                )
            )
            constraints.append(
                Constraint(
                    name=f"dl_energy_{i}_{k}",
                    fun=_quarter_product_fun(i_om, i_xi, i_qk, gm, om_i, xi_i),
                    grad=_quarter_product_grad(nv, i_om, i_xi, i_qk, gm, om_i, xi_i),
                    scale=1.0,
                )
            )
            constraints.append(
                Constraint(
                    name=f"dl_snr_{i}_{k}",
                    fun=_amgm_fun(i_et, i_lm, i_qk, beta0, eta_i, lam_i),
                    grad=_amgm_grad(nv, i_et, i_lm, i_qk, beta0, eta_i, lam_i),
                    scale=max(eta_i * lam_i, 1e-12),
                )
            )

        log_a = math.log1p(eta_i) + eta_i / (1.0 + eta_i)
        log_c = eta_i * eta_i / (1.0 + eta_i)
        constraints.append(
            Constraint(
                name=f"dl_log_{i}",
                fun=_log_bound_fun(i_xi, i_et, log_a, log_c),
                grad=_log_bound_grad(nv, i_xi, i_et, log_c),
                scale=max(log_a, 1.0),
            )
        )

        # uplink chain in the shared lam: theta_up * lam <= beta0 * q_fixed
        qf = float(q_fixed[i])
        constraints.append(
            Constraint(
                name=f"ul_snr_{i}",
                fun=_amgm_const_fun(i_tu, i_lm, beta0 * qf, tu_i, lam_i),
                grad=_amgm_const_grad(nv, i_tu, i_lm, tu_i, lam_i),
                scale=max(beta0 * qf, 1e-12),
            )
        )
        log_au = math.log1p(tu_i) + tu_i / (1.0 + tu_i)
        log_cu = tu_i * tu_i / (1.0 + tu_i)
        constraints.append(
            Constraint(
                name=f"ul_log_{i}",
                fun=_log_bound_fun(i_pu, i_tu, log_au, log_cu),
                grad=_log_bound_grad(nv, i_pu, i_tu, log_cu),
                scale=max(log_au, 1.0),
            )
        )
        budget = cfg.t_max_s - float(t_train[i])
        constraints.append(
            Constraint(
                name=f"latency_{i}",
                fun=lambda x, a=i_pu, b=i_xi, bt=float(beta[i]), gm=gm, bud=budget: (
                    bt / x[a] + gm / x[b] - bud
                ),
                grad=_latency2_grad(nv, i_pu, i_xi, float(beta[i]), gm),
                scale=cfg.t_max_s,
            )
        )

    lower = np.full(nv, 1e-12)
    upper = np.full(nv, np.inf)
    lower[0 : 2 * kk] = -np.inf
    lower[2 * kk : 3 * kk] = 1e-15
    upper[2 * kk : 3 * kk] = cfg.q_uav_max_w
    scale_hint = np.full(nv, 1e-12)
    scale_hint[0 : 2 * kk] = cfg.max_step_m
    for i in range(n):
        lower[_sp2_idx(kk, i, "lam")] = h2
    if trust_factor is not None:
        # positive variables only; waypoints are already fenced by the
        # step-budget constraints
        center = np.concatenate(
            [
                np.maximum(lin.q_uav, 1e-15),
                np.ravel(
                    [
                        [
                            lin.omega[i],
                            lin.xi[i],
                            lin.eta[i],
                            lin.lam[i],
                            lin.theta_up[i],
                            lin.psi_up[i],
                        ]
                        for i in range(n)
                    ]
                )
                if n
                else np.zeros(0),
            ]
        )
        lower[2 * kk :] = np.maximum(lower[2 * kk :], center / trust_factor)
        upper[2 * kk :] = np.minimum(upper[2 * kk :], center * trust_factor)

    names = (
        tuple(f"x_{k}" for k in range(kk))
        + tuple(f"y_{k}" for k in range(kk))
        + tuple(f"q_uav_{k}" for k in range(kk))
        + tuple(f"{v}_{i}" for i in range(n) for v in SP2_VARS)
    )
    return SubproblemSpec(
        n_vars=nv,
        objective=objective,
        gradient=gradient,
        constraints=constraints,
        lower=lower,
        upper=upper,
        var_names=names,
        objective_offset=float(np.sum(e_train)),
        scale_hint=scale_hint,
    )


def sp2_init_vector(
    solution: AllocationSolution, lin: LinearizationPoint, cfg: SystemConfig
) -> np.ndarray:
    kk = cfg.k_slots
    n = len(lin.f)
    x = np.zeros(3 * kk + n * len(SP2_VARS))
    x[0:kk] = solution.trajectory.waypoints[:, 0]
    x[kk : 2 * kk] = solution.trajectory.waypoints[:, 1]
    x[2 * kk : 3 * kk] = solution.uav_power
    for i in range(n):
        x[_sp2_idx(kk, i, "omega")] = lin.omega[i]
        x[_sp2_idx(kk, i, "xi")] = lin.xi[i]
        x[_sp2_idx(kk, i, "eta")] = lin.eta[i]
        x[_sp2_idx(kk, i, "lam")] = lin.lam[i]
        x[_sp2_idx(kk, i, "theta_up")] = lin.theta_up[i]
        x[_sp2_idx(kk, i, "psi_up")] = lin.psi_up[i]
    return x


def sp2_extract(x: np.ndarray, cfg: SystemConfig) -> tuple[UavTrajectory, np.ndarray]:
    kk = cfg.k_slots
    wp = np.column_stack([x[0:kk], x[kk : 2 * kk]])
    return UavTrajectory(wp), x[2 * kk : 3 * kk].copy()


# ---------------------------------------------------------------------------
# closure factories (default-argument binding keeps indices stable)
# ---------------------------------------------------------------------------


def _quarter_product_fun(ia: int, ib: int, iq: int, coef: float, a_i: float, b_i: float):
    """Restriction of a*b >= coef*q via the quarter-square identity,
    applied to the preconditioned variables a/a_i, b/b_i.

    With A = a/a_i, B = b/b_i the identity AB = ((A+B)^2 - (A-B)^2)/4 and
    the affine minorant of (A+B)^2 at A_i+B_i = 2 give

        (A - B)^2/4 + coef*q/(a_i*b_i) - (A + B - 1) <= 0.

    Tight at the linearization point when a_i*b_i == coef*q_i; the
    preconditioning makes the Taylor gap (A+B-2)^2/4 a multiplicative
    trust radius instead of an absolute one, which is what lets the
    successive approximation cross decades in a few passes.
    """

    def fun(x: np.ndarray) -> float:
        a = x[ia] / a_i
        b = x[ib] / b_i
        return 0.25 * (a - b) ** 2 + coef * x[iq] / (a_i * b_i) - (a + b - 1.0)

    return fun


def _quarter_product_grad(
    nv: int, ia: int, ib: int, iq: int, coef: float, a_i: float, b_i: float
):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        a = x[ia] / a_i
        b = x[ib] / b_i
        g[ia] = (0.5 * (a - b) - 1.0) / a_i
        g[ib] = (-0.5 * (a - b) - 1.0) / b_i
        g[iq] = coef / (a_i * b_i)
        return g

    return grad


def _log_bound_fun(ipsi: int, itheta: int, log_a: float, log_c: float):
    """psi*ln2 - [log_a - log_c/theta] <= 0, i.e. psi <= log2(1+theta) bound."""

    def fun(x: np.ndarray) -> float:
        return x[ipsi] * LN2 - log_a + log_c / x[itheta]

    return fun


def _log_bound_grad(nv: int, ipsi: int, itheta: int, log_c: float):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[ipsi] = LN2
        g[itheta] = -log_c / (x[itheta] * x[itheta])
        return g

    return grad


def _linear_grad(nv: int, entries: dict[int, float]):
    g0 = np.zeros(nv)
    for idx, val in entries.items():
        g0[idx] = val

    def grad(x: np.ndarray) -> np.ndarray:
        return g0

    return grad


def _latency1_grad(nv: int, i_f: int, i_t: int, cycles: float):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[i_f] = -cycles / (x[i_f] * x[i_f])
        g[i_t] = 1.0
        return g

    return grad


def _latency2_grad(nv: int, i_pu: int, i_xi: int, beta: float, gamma: float):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[i_pu] = -beta / (x[i_pu] * x[i_pu])
        g[i_xi] = -gamma / (x[i_xi] * x[i_xi])
        return g

    return grad


def _dist_grad(nv: int, ix: int, iy: int, il: int, ux: float, uy: float):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[ix] = 2.0 * (x[ix] - ux)
        g[iy] = 2.0 * (x[iy] - uy)
        g[il] = -1.0
        return g

    return grad


def _amgm_fun(ie: int, il: int, iq: int, beta0: float, eta_i: float, lam_i: float):
    """AM-GM restriction of eta*lam <= beta0*q_uav[k]."""
    ca = 0.5 * lam_i / eta_i
    cb = 0.5 * eta_i / lam_i

    def fun(x: np.ndarray) -> float:
        return ca * x[ie] ** 2 + cb * x[il] ** 2 - beta0 * x[iq]

    return fun


def _amgm_grad(nv: int, ie: int, il: int, iq: int, beta0: float, eta_i: float, lam_i: float):
    ca = lam_i / eta_i
    cb = eta_i / lam_i

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[ie] = ca * x[ie]
        g[il] = cb * x[il]
        g[iq] = -beta0
        return g

    return grad


def _amgm_const_fun(ie: int, il: int, rhs: float, eta_i: float, lam_i: float):
    """AM-GM restriction of eta*lam <= rhs (constant right-hand side)."""
    ca = 0.5 * lam_i / eta_i
    cb = 0.5 * eta_i / lam_i

    def fun(x: np.ndarray) -> float:
        return ca * x[ie] ** 2 + cb * x[il] ** 2 - rhs

    return fun


def _amgm_const_grad(nv: int, ie: int, il: int, eta_i: float, lam_i: float):
    ca = lam_i / eta_i
    cb = eta_i / lam_i

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[ie] = ca * x[ie]
        g[il] = cb * x[il]
        return g

    return grad


def _amgm_var_fun(ie: int, il: int, iq: int, coef: float, eta_i: float, lam_i: float):
    """AM-GM restriction of eta*lam <= coef*q with q a decision variable."""
    ca = 0.5 * lam_i / eta_i
    cb = 0.5 * eta_i / lam_i

    def fun(x: np.ndarray) -> float:
        return ca * x[ie] ** 2 + cb * x[il] ** 2 - coef * x[iq]

    return fun


def _amgm_var_grad(nv: int, ie: int, il: int, iq: int, coef: float, eta_i: float, lam_i: float):
    ca = lam_i / eta_i
    cb = eta_i / lam_i

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[ie] = ca * x[ie]
        g[il] = cb * x[il]
        g[iq] = -coef
        return g

    return grad


# ---------------------------------------------------------------------------
# Joint refinement: all variables in one convexified program
# ---------------------------------------------------------------------------

JOINT_VARS = ("f", "q", "z", "psi", "theta", "t", "omega", "xi", "eta", "lam")


def _j_idx(k_slots: int, i: int, name: str) -> int:
    return 3 * k_slots + i * len(JOINT_VARS) + JOINT_VARS.index(name)


def build_joint(
    users: list[UserProfile],
    lin: LinearizationPoint,
    cfg: SystemConfig,
    trust_factor: float | None = None,
) -> SubproblemSpec:
    """Convexified program over the union of both blocks' variables.

    Pure block alternation can deadlock when the latency cap binds: each
    block greedily fills the budget and leaves the other no room to trade
    time for energy. This program carries the full per-user latency chain
    (train + upload + download) with every variable live, so one inner
    pass per outer iteration rebalances the shared budget. Identical
    convexification primitives, identical tightness at the linearization
    point, hence the same descent guarantee.

    Per-user slack block: (f, q, z, psi, theta, t, omega, xi, eta, lam);
    the uplink SNR theta is tied to the worst squared distance lam by the
    AM-GM restriction of theta*lam <= beta0*q.
    """
    n = len(users)
    kk = cfg.k_slots
    nv = 3 * kk + n * len(JOINT_VARS)
    beta0 = cfg.beta0
    h2 = cfg.altitude_m**2
    l2 = cfg.max_step_m**2
    start = np.asarray(cfg.start_pos, dtype=float)
    end = np.asarray(cfg.end_pos, dtype=float)
    a_coef = np.array([cfg.capacitance_coeff * u.work_cycles for u in users])
    cycles = np.array([u.work_cycles for u in users])
    beta = np.array([u.upload_payload_bits / cfg.bandwidth_hz for u in users])
    gamma = np.array([u.model_bits / cfg.bandwidth_hz for u in users])

    def objective(x: np.ndarray) -> float:
        total = 0.0
        for i in range(n):
            total += a_coef[i] * x[_j_idx(kk, i, "f")] ** 2
            total += x[_j_idx(kk, i, "z")] + x[_j_idx(kk, i, "omega")]
        return total

    def gradient(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        for i in range(n):
            g[_j_idx(kk, i, "f")] = 2.0 * a_coef[i] * x[_j_idx(kk, i, "f")]
            g[_j_idx(kk, i, "z")] = 1.0
            g[_j_idx(kk, i, "omega")] = 1.0
        return g

    constraints: list[Constraint] = []

    def hop(name, ia, ib, const_a=None, const_b=None):
        def fun(x: np.ndarray) -> float:
            pa = const_a if ia is None else (x[ia], x[kk + ia])
            pb = const_b if ib is None else (x[ib], x[kk + ib])
            return (pb[0] - pa[0]) ** 2 + (pb[1] - pa[1]) ** 2 - l2

        def grad(x: np.ndarray) -> np.ndarray:
            g = np.zeros(nv)
            pa = const_a if ia is None else (x[ia], x[kk + ia])
            pb = const_b if ib is None else (x[ib], x[kk + ib])
            dx, dy = pb[0] - pa[0], pb[1] - pa[1]
            if ia is not None:
                g[ia] = -2.0 * dx
                g[kk + ia] = -2.0 * dy
            if ib is not None:
                g[ib] = 2.0 * dx
                g[kk + ib] = 2.0 * dy
            return g

        return Constraint(name=name, fun=fun, grad=grad, scale=l2)

    constraints.append(hop("step_start", None, 0, const_a=tuple(start)))
    for k in range(kk - 1):
        constraints.append(hop(f"step_{k}", k, k + 1))
    constraints.append(hop("step_end", kk - 1, None, const_b=tuple(end)))

    avg_grad = np.zeros(nv)
    avg_grad[2 * kk : 3 * kk] = 1.0 / kk
    constraints.append(
        Constraint(
            name="quav_avg",
            fun=lambda x: float(np.mean(x[2 * kk : 3 * kk])) - cfg.avg_power_w,
            grad=lambda x, g=avg_grad: g,
            scale=cfg.avg_power_w,
        )
    )

    for i, user in enumerate(users):
        ux, uy = user.pos
        i_f = _j_idx(kk, i, "f")
        i_q = _j_idx(kk, i, "q")
        i_z = _j_idx(kk, i, "z")
        i_ps = _j_idx(kk, i, "psi")
        i_th = _j_idx(kk, i, "theta")
        i_t = _j_idx(kk, i, "t")
        i_om = _j_idx(kk, i, "omega")
        i_xi = _j_idx(kk, i, "xi")
        i_et = _j_idx(kk, i, "eta")
        i_lm = _j_idx(kk, i, "lam")
        z_i, psi_i = float(lin.z[i]), float(lin.psi[i])
        t_i, q_i = float(lin.t[i]), float(lin.q[i])
        th_i = float(lin.theta[i])
        om_i, xi_i = float(lin.omega[i]), float(lin.xi[i])
        eta_i, lam_i = float(lin.eta[i]), float(lin.lam[i])
        bt, gm = float(beta[i]), float(gamma[i])

        constraints.append(
            Constraint(
                f"rate_energy_{i}",
                _quarter_product_fun(i_z, i_ps, i_q, bt, z_i, psi_i),
                _quarter_product_grad(nv, i_z, i_ps, i_q, bt, z_i, psi_i),
                1.0,
            )
        )
        log_a = math.log1p(th_i) + th_i / (1.0 + th_i)
        log_c = th_i * th_i / (1.0 + th_i)
        constraints.append(
            Constraint(
                f"ul_log_{i}",
                _log_bound_fun(i_ps, i_th, log_a, log_c),
                _log_bound_grad(nv, i_ps, i_th, log_c),
                max(log_a, 1.0),
            )
        )
        constraints.append(
            Constraint(
                f"ul_snr_{i}",
                _amgm_var_fun(i_th, i_lm, i_q, beta0, th_i, lam_i),
                _amgm_var_grad(nv, i_th, i_lm, i_q, beta0, th_i, lam_i),
                max(th_i * lam_i, 1e-12),
            )
        )
        constraints.append(
            Constraint(
                f"time_energy_{i}",
                _quarter_product_fun(i_t, i_q, i_z, 1.0, t_i, q_i),
                _quarter_product_grad(nv, i_t, i_q, i_z, 1.0, t_i, q_i),
                1.0,
            )
        )
        constraints.append(
            Constraint(
                f"latency_{i}",
                lambda x, i_f=i_f, i_t=i_t, i_xi=i_xi, g=float(cycles[i]), gm=gm: (
                    g / x[i_f] + x[i_t] + gm / x[i_xi] - cfg.t_max_s
                ),
                _latency_joint_grad(nv, i_f, i_t, i_xi, float(cycles[i]), gm),
                cfg.t_max_s,
            )
        )
        log_ad = math.log1p(eta_i) + eta_i / (1.0 + eta_i)
        log_cd = eta_i * eta_i / (1.0 + eta_i)
        constraints.append(
            Constraint(
                f"dl_log_{i}",
                _log_bound_fun(i_xi, i_et, log_ad, log_cd),
                _log_bound_grad(nv, i_xi, i_et, log_cd),
                max(log_ad, 1.0),
            )
        )
        for k in range(kk):
            i_xk, i_yk, i_qk = k, kk + k, 2 * kk + k
            constraints.append(
                Constraint(
                    f"dist_{i}_{k}",
                    lambda x, a=i_xk, b=i_yk, l=i_lm, ux=ux, uy=uy: (
                        (x[a] - ux) ** 2 + (x[b] - uy) ** 2 + h2 - x[l]
                    ),
                    _dist_grad(nv, i_xk, i_yk, i_lm, ux, uy),
                    max(lam_i, h2),
                )
            )
            constraints.append(
                Constraint(
                    f"dl_energy_{i}_{k}",
                    _quarter_product_fun(i_om, i_xi, i_qk, gm, om_i, xi_i),
                    _quarter_product_grad(nv, i_om, i_xi, i_qk, gm, om_i, xi_i),
                    1.0,
                )
            )
            constraints.append(
                Constraint(
                    f"dl_snr_{i}_{k}",
                    _amgm_var_fun(i_et, i_lm, i_qk, beta0, eta_i, lam_i),
                    _amgm_var_grad(nv, i_et, i_lm, i_qk, beta0, eta_i, lam_i),
                    max(eta_i * lam_i, 1e-12),
                )
            )

    lower = np.full(nv, 1e-12)
    upper = np.full(nv, np.inf)
    lower[0 : 2 * kk] = -np.inf
    lower[2 * kk : 3 * kk] = 1e-15
    upper[2 * kk : 3 * kk] = cfg.q_uav_max_w
    scale_hint = np.full(nv, 1e-12)
    scale_hint[0 : 2 * kk] = cfg.max_step_m
    for i in range(n):
        lower[_j_idx(kk, i, "f")] = 1e-3
        upper[_j_idx(kk, i, "f")] = cfg.f_max_hz
        lower[_j_idx(kk, i, "q")] = 1e-15
        upper[_j_idx(kk, i, "q")] = min(cfg.q_max_w, cfg.avg_power_w)
        lower[_j_idx(kk, i, "lam")] = h2
    if trust_factor is not None:
        center = joint_init_vector(None, lin, cfg)
        pos = slice(3 * kk, nv)
        lower[pos] = np.maximum(lower[pos], center[pos] / trust_factor)
        upper[pos] = np.minimum(upper[pos], center[pos] * trust_factor)
        qslice = slice(2 * kk, 3 * kk)
        lower[qslice] = np.maximum(lower[qslice], center[qslice] / trust_factor)
        upper[qslice] = np.minimum(upper[qslice], center[qslice] * trust_factor)

    names = (
        tuple(f"x_{k}" for k in range(kk))
        + tuple(f"y_{k}" for k in range(kk))
        + tuple(f"q_uav_{k}" for k in range(kk))
        + tuple(f"{v}_{i}" for i in range(n) for v in JOINT_VARS)
    )
    return SubproblemSpec(
        n_vars=nv,
        objective=objective,
        gradient=gradient,
        constraints=constraints,
        lower=lower,
        upper=upper,
        var_names=names,
        objective_offset=0.0,
        scale_hint=scale_hint,
    )


def _latency_joint_grad(nv: int, i_f: int, i_t: int, i_xi: int, cycles: float, gm: float):
    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(nv)
        g[i_f] = -cycles / (x[i_f] * x[i_f])
        g[i_t] = 1.0
        g[i_xi] = -gm / (x[i_xi] * x[i_xi])
        return g

    return grad


def joint_init_vector(
    solution: AllocationSolution | None, lin: LinearizationPoint, cfg: SystemConfig
) -> np.ndarray:
    """Stacked start point; with ``solution=None`` the trajectory slots are
    left at zero (used only to derive trust boxes for positive variables)."""
    kk = cfg.k_slots
    n = len(lin.f)
    x = np.zeros(3 * kk + n * len(JOINT_VARS))
    if solution is not None:
        x[0:kk] = solution.trajectory.waypoints[:, 0]
        x[kk : 2 * kk] = solution.trajectory.waypoints[:, 1]
    x[2 * kk : 3 * kk] = lin.q_uav
    for i in range(n):
        for name in JOINT_VARS:
            x[_j_idx(kk, i, name)] = getattr(lin, name)[i]
    return x


def joint_extract(x: np.ndarray, cfg: SystemConfig, n_users: int) -> AllocationSolution:
    kk = cfg.k_slots
    wp = np.column_stack([x[0:kk], x[kk : 2 * kk]])
    return AllocationSolution(
        trajectory=UavTrajectory(wp),
        freq=np.array([x[_j_idx(kk, i, "f")] for i in range(n_users)]),
        user_power=np.array([x[_j_idx(kk, i, "q")] for i in range(n_users)]),
        uav_power=x[2 * kk : 3 * kk].copy(),
    )

