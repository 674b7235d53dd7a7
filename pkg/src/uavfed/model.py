"""Physical-layer model of a single-UAV federated learning round.

Pure deterministic functions over frozen dataclasses: free-space channel
gain, Shannon rates, per-phase time and energy, round totals, and signed
constraint residuals. All quantities are SI (m, s, W, J, Hz); powers of
ten only, no dB inside the math (the noise PSD is converted once).

Slot convention: the user transmit power ``q_n`` and CPU frequency
``f_n`` are slot-constant, so per-user uplink quantities are charged at
the user's worst slot along the trajectory (largest squared distance).
Downlink quantities are likewise charged at each user's worst slot; with
slot-uniform UAV power (what the optimizer converges to) this is exactly
the farthest-slot broadcast cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemConfig",
    "UserProfile",
    "UavTrajectory",
    "AllocationSolution",
    "ConstraintResiduals",
    "EnergyLatencyReport",
    "channel_gain",
    "uplink_rate",
    "downlink_rate",
    "train_time_energy",
    "upload_time_energy",
    "download_time_energy",
    "sq_distances",
    "round_totals",
    "constraint_residuals",
]


@dataclass(frozen=True)
class SystemConfig:
    """All physical and optimization constants of the scenario.

    ``max_step_m`` must equal ``v_max_mps * slot_len_s`` (per-slot flight
    budget). ``noise_psd_dbm_hz`` is the AWGN power spectral density; the
    linear noise power is PSD * bandwidth and ``beta0`` is the derived
    reference SNR factor ref_gain / noise_power.
    """

    n_users: int = 5
    k_slots: int = 5
    altitude_m: float = 50.0
    slot_len_s: float = 10.0
    v_max_mps: float = 50.0
    max_step_m: float = 500.0
    start_pos: tuple[float, float] = (0.0, 0.0)
    end_pos: tuple[float, float] = (70.0, 70.0)
    bandwidth_hz: float = 1.0e6
    noise_psd_dbm_hz: float = -174.0
    ref_gain: float = 1.0e-3
    t_max_s: float = 500.0
    f_max_hz: float = 1.0e9
    q_max_w: float = 50.0
    q_uav_max_w: float = 100.0
    avg_power_w: float = 50.0
    capacitance_coeff: float = 1.0e-28

    def __post_init__(self) -> None:
        for name in (
            "altitude_m",
            "slot_len_s",
            "v_max_mps",
            "max_step_m",
            "bandwidth_hz",
            "ref_gain",
            "t_max_s",
            "f_max_hz",
            "q_max_w",
            "q_uav_max_w",
            "avg_power_w",
            "capacitance_coeff",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.n_users < 0 or self.k_slots < 1:
            raise ValueError("n_users must be >= 0 and k_slots >= 1")
        expected = self.v_max_mps * self.slot_len_s
        if not math.isclose(self.max_step_m, expected, rel_tol=1e-9):
            raise ValueError(
                f"max_step_m={self.max_step_m} inconsistent with "
                f"v_max_mps*slot_len_s={expected}"
            )

    @property
    def noise_power_w(self) -> float:
        """Linear AWGN power over one user's band: PSD(dBm/Hz) * B."""
        psd_w_hz = 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)
        return psd_w_hz * self.bandwidth_hz

    @property
    def beta0(self) -> float:
        """Reference SNR scaling: ref gain at 1 m over linear noise power."""
        return self.ref_gain / self.noise_power_w


@dataclass(frozen=True)
class UserProfile:
    """Static per-user workload: position, data volume, payload sizes.

    ``upload_bits`` defaults to ``model_bits`` (symmetric payload, i.e.
    32-bit weights both ways); ``data_size`` counts training samples and
    only enters the computation phase.
    """

    pos: tuple[float, float]
    data_size: int = 1000
    cycles_per_sample: float = 1000.0
    local_iters: int = 10
    model_bits: float = 2.0e7
    upload_bits: float | None = None

    def __post_init__(self) -> None:
        if self.data_size < 0:
            raise ValueError("data_size must be non-negative")
        for name in ("cycles_per_sample", "local_iters", "model_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.upload_bits is not None and self.upload_bits < 0:
            raise ValueError("upload_bits must be non-negative")

    @property
    def upload_payload_bits(self) -> float:
        return self.model_bits if self.upload_bits is None else self.upload_bits

    @property
    def work_cycles(self) -> float:
        """Total CPU cycles per round: C_n * I_n * D_n."""
        return self.cycles_per_sample * self.local_iters * self.data_size


@dataclass(frozen=True)
class UavTrajectory:
    """K horizontal waypoints (x[k], y[k]); altitude lives in the config."""

    waypoints: np.ndarray

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2:
            raise ValueError("waypoints must have shape (K, 2)")
        object.__setattr__(self, "waypoints", wp)

    @property
    def k_slots(self) -> int:
        return self.waypoints.shape[0]

    def step_residuals(self, cfg: SystemConfig) -> np.ndarray:
        """Signed step-budget residuals, one per hop including the
        start->first and last->end legs; <= 0 means the hop fits in L^2."""
        l2 = cfg.max_step_m**2
        pts = np.vstack(
            [np.asarray(cfg.start_pos), self.waypoints, np.asarray(cfg.end_pos)]
        )
        hops = np.diff(pts, axis=0)
        return np.sum(hops**2, axis=1) - l2


@dataclass(frozen=True)
class AllocationSolution:
    """Decision variables of the joint problem.

    freq[n] and user_power[n] are slot-constant per user; uav_power[k] is
    per slot. Feasibility is not enforced at construction (optimizer
    iterates pass through here); use ``constraint_residuals``.
    """

    trajectory: UavTrajectory
    freq: np.ndarray
    user_power: np.ndarray
    uav_power: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "freq", np.asarray(self.freq, dtype=float))
        object.__setattr__(self, "user_power", np.asarray(self.user_power, dtype=float))
        object.__setattr__(self, "uav_power", np.asarray(self.uav_power, dtype=float))

    def replace(self, **kw) -> "AllocationSolution":
        data = {
            "trajectory": self.trajectory,
            "freq": self.freq,
            "user_power": self.user_power,
            "uav_power": self.uav_power,
        }
        data.update(kw)
        return AllocationSolution(**data)


@dataclass(frozen=True)
class ConstraintResiduals:
    """Signed residuals of every joint-problem constraint.

    ``values`` are in natural units (Hz, W, s, m^2); ``scales`` hold the
    per-constraint normalizers (caps, T_max, L^2) so that
    ``scaled()[name] <= tol`` is a unit-free feasibility test.
    """

    values: dict[str, float]
    scales: dict[str, float]

    def scaled(self) -> dict[str, float]:
        return {k: v / self.scales[k] for k, v in self.values.items()}

    @property
    def max_scaled(self) -> float:
        if not self.values:
            return 0.0
        return max(self.scaled().values())

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return self.max_scaled <= tol


@dataclass(frozen=True)
class EnergyLatencyReport:
    """Per-phase energies/times plus totals and constraint residuals."""

    train_energy_j: np.ndarray
    upload_energy_j: np.ndarray
    download_energy_j: np.ndarray
    train_time_s: np.ndarray
    upload_time_s: np.ndarray
    download_time_s: np.ndarray
    total_energy_j: float
    total_latency_s: float
    residuals: ConstraintResiduals = field(repr=False)

    @property
    def per_user_energy_j(self) -> np.ndarray:
        return self.train_energy_j + self.upload_energy_j + self.download_energy_j

    @property
    def per_user_latency_s(self) -> np.ndarray:
        return self.train_time_s + self.upload_time_s + self.download_time_s


def channel_gain(
    uav_xy: tuple[float, float], user_xy: tuple[float, float], cfg: SystemConfig
) -> float:
    """Free-space LoS power gain alpha0 / (dx^2 + dy^2 + H^2)."""
    dx = uav_xy[0] - user_xy[0]
    dy = uav_xy[1] - user_xy[1]
    return cfg.ref_gain / (dx * dx + dy * dy + cfg.altitude_m**2)


def uplink_rate(d2_m2: float, q_w: float, cfg: SystemConfig) -> float:
    """Shannon uplink rate B*log2(1 + beta0*q/d^2) in bit/s.

    ``d2_m2`` is the squared 3-D UAV-user distance (includes H^2).
    Zero power gives exactly zero rate.
    """
    if q_w < 0:
        raise ValueError("transmit power must be non-negative")
    if d2_m2 <= 0:
        raise ValueError("squared distance must be positive")
    return cfg.bandwidth_hz * math.log2(1.0 + cfg.beta0 * q_w / d2_m2)


def downlink_rate(d2_m2: float, q_uav_w: float, cfg: SystemConfig) -> float:
    """Downlink broadcast rate; same functional form with the UAV power."""
    return uplink_rate(d2_m2, q_uav_w, cfg)


def train_time_energy(
    user: UserProfile, f_hz: float, cfg: SystemConfig
) -> tuple[float, float]:
    """Local-training time C*I*D/f and energy alpha*I*C*D*f^2.

    An empty dataset costs nothing regardless of f; otherwise f must be
    strictly positive (zero frequency means infinite time).
    """
    if user.data_size == 0:
        return 0.0, 0.0
    if f_hz <= 0:
        raise ValueError("CPU frequency must be strictly positive")
    cycles = user.work_cycles
    return cycles / f_hz, cfg.capacitance_coeff * cycles * f_hz**2


def upload_time_energy(
    user: UserProfile, q_w: float, d2_m2: float, cfg: SystemConfig
) -> tuple[float, float]:
    """Uplink time payload/rate and energy q * time; energy/time == q."""
    payload = user.upload_payload_bits
    if payload == 0:
        return 0.0, 0.0
    if q_w <= 0:
        raise ValueError("upload power must be strictly positive")
    rate = uplink_rate(d2_m2, q_w, cfg)
    t = payload / rate
    return t, q_w * t


def download_time_energy(
    user: UserProfile, q_uav_w: float, d2_m2: float, cfg: SystemConfig
) -> tuple[float, float]:
    """Downlink time model_bits/rate and energy q_UAV * time."""
    payload = user.model_bits
    if payload == 0:
        return 0.0, 0.0
    if q_uav_w <= 0:
        raise ValueError("UAV power must be strictly positive")
    rate = downlink_rate(d2_m2, q_uav_w, cfg)
    t = payload / rate
    return t, q_uav_w * t


def sq_distances(
    trajectory: UavTrajectory, users: list[UserProfile], cfg: SystemConfig
) -> np.ndarray:
    """Squared 3-D distances, shape (N, K)."""
    if not users:
        return np.zeros((0, trajectory.k_slots))
    upos = np.array([u.pos for u in users], dtype=float)  # (N, 2)
    diff = upos[:, None, :] - trajectory.waypoints[None, :, :]  # (N, K, 2)
    return np.sum(diff**2, axis=2) + cfg.altitude_m**2


def round_totals(
    solution: AllocationSolution,
    users: list[UserProfile],
    cfg: SystemConfig,
    twin=None,
) -> EnergyLatencyReport:
    """Aggregate one FL round: per-phase values, totals, residuals.

    If ``twin`` is given the solution is read as estimated setpoints and
    mapped through the twin's deviations first (actual = estimate - dev).
    Total energy is the sum over users of all phases; total latency is
    the per-user maximum of the phase-time sums.
    """
    if twin is not None:
        solution = twin.apply_to(solution)
    n = len(users)
    if solution.freq.shape != (n,) or solution.user_power.shape != (n,):
        raise ValueError("solution user dimensions do not match the user list")
    if solution.uav_power.shape != (solution.trajectory.k_slots,):
        raise ValueError("uav_power length does not match the trajectory")
    if solution.trajectory.k_slots != cfg.k_slots:
        raise ValueError("trajectory slot count does not match the config")

    e_tr = np.zeros(n)
    e_up = np.zeros(n)
    e_dn = np.zeros(n)
    t_tr = np.zeros(n)
    t_up = np.zeros(n)
    t_dn = np.zeros(n)
    d2 = sq_distances(solution.trajectory, users, cfg)
    for i, user in enumerate(users):
        t_tr[i], e_tr[i] = train_time_energy(user, solution.freq[i], cfg)
        worst = float(np.max(d2[i]))
        t_up[i], e_up[i] = upload_time_energy(user, solution.user_power[i], worst, cfg)
        times = []
        energies = []
        for k in range(cfg.k_slots):
            tk, ek = download_time_energy(
                user, solution.uav_power[k], float(d2[i, k]), cfg
            )
            times.append(tk)
            energies.append(ek)
        t_dn[i] = max(times)
        e_dn[i] = max(energies)

    total_e = float(np.sum(e_tr) + np.sum(e_up) + np.sum(e_dn))
    total_t = float(np.max(t_tr + t_up + t_dn)) if n else 0.0
    res = constraint_residuals(solution, users, cfg)
    return EnergyLatencyReport(
        train_energy_j=e_tr,
        upload_energy_j=e_up,
        download_energy_j=e_dn,
        train_time_s=t_tr,
        upload_time_s=t_up,
        download_time_s=t_dn,
        total_energy_j=total_e,
        total_latency_s=total_t,
        residuals=res,
    )


def constraint_residuals(
    solution: AllocationSolution, users: list[UserProfile], cfg: SystemConfig
) -> ConstraintResiduals:
    """One signed residual per joint-problem constraint; <= 0 satisfied.

    Covers the trajectory step budget (start, hops, terminal ball), the
    box bounds on f_n, q_n and q_UAV[k], the per-user average-power cap
    (slot-constant q_n) plus the slot-averaged UAV power cap, and the
    per-user latency cap.
    """
    values: dict[str, float] = {}
    scales: dict[str, float] = {}
    l2 = cfg.max_step_m**2

    step = solution.trajectory.step_residuals(cfg)
    values["traj_start"] = float(step[0])
    for k in range(1, len(step) - 1):
        values[f"traj_step_{k}"] = float(step[k])
    values["traj_end"] = float(step[-1])
    for name in values:
        scales[name] = l2

    for i in range(len(users)):
        f = float(solution.freq[i])
        q = float(solution.user_power[i])
        values[f"f_lo_{i}"] = -f
        values[f"f_hi_{i}"] = f - cfg.f_max_hz
        scales[f"f_lo_{i}"] = scales[f"f_hi_{i}"] = cfg.f_max_hz
        values[f"q_lo_{i}"] = -q
        values[f"q_hi_{i}"] = q - cfg.q_max_w
        scales[f"q_lo_{i}"] = scales[f"q_hi_{i}"] = cfg.q_max_w
        values[f"q_avg_{i}"] = q - cfg.avg_power_w
        scales[f"q_avg_{i}"] = cfg.avg_power_w

    for k in range(solution.trajectory.k_slots):
        qk = float(solution.uav_power[k])
        values[f"quav_lo_{k}"] = -qk
        values[f"quav_hi_{k}"] = qk - cfg.q_uav_max_w
        scales[f"quav_lo_{k}"] = scales[f"quav_hi_{k}"] = cfg.q_uav_max_w
    values["quav_avg"] = float(np.mean(solution.uav_power)) - cfg.avg_power_w
    scales["quav_avg"] = cfg.avg_power_w

    if users:
        d2 = sq_distances(solution.trajectory, users, cfg)
        for i, user in enumerate(users):
            f = float(solution.freq[i])
            q = float(solution.user_power[i])
            t_total = _user_latency(user, f, q, solution.uav_power, d2[i], cfg)
            values[f"latency_{i}"] = t_total - cfg.t_max_s
            scales[f"latency_{i}"] = cfg.t_max_s

    return ConstraintResiduals(values=values, scales=scales)


def _user_latency(
    user: UserProfile,
    f_hz: float,
    q_w: float,
    uav_power: np.ndarray,
    d2_row: np.ndarray,
    cfg: SystemConfig,
) -> float:
    """Worst-slot phase-time sum for one user; +inf when a phase stalls
    (zero frequency with work pending, or zero power with a payload)."""
    if user.data_size == 0:
        t_tr = 0.0
    elif f_hz <= 0:
        return math.inf
    else:
        t_tr = user.work_cycles / f_hz

    worst = float(np.max(d2_row))
    if user.upload_payload_bits == 0:
        t_up = 0.0
    elif q_w <= 0:
        return math.inf
    else:
        t_up = user.upload_payload_bits / uplink_rate(worst, q_w, cfg)

    if user.model_bits == 0:
        t_dn = 0.0
    else:
        t_dn = 0.0
        for k in range(len(d2_row)):
            qk = float(uav_power[k])
            if qk <= 0:
                return math.inf
            t_dn = max(t_dn, user.model_bits / downlink_rate(float(d2_row[k]), qk, cfg))
    return t_tr + t_up + t_dn
