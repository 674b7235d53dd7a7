"""Digital-twin layer: estimated quantities, deviations, compensation.

The twin tracks, per entity, an estimated setpoint and the deviation
between that estimate and the physical value; the actual value is always
``estimate - deviation``. Compensation is therefore componentwise
subtraction, and a gain-style :class:`DeviationModel` provides the
physical ground truth for the ablation runs (a commanded setpoint is
realized as ``gain * command``, i.e. the hardware runs slightly hot
relative to what the twin believes).

Synchronization is simulated, not transported: deviations drift as a
seeded random walk between refreshes and collapse to a residual fraction
at each telemetry / user-metrics boundary, with a feedback delay strictly
below the configured bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import AllocationSolution, SystemConfig, UserProfile

__all__ = [
    "TwinState",
    "SyncSchedule",
    "SyncEvent",
    "DeviationModel",
    "estimated_train_time",
    "latency_gap",
    "compensate",
    "sync_tick",
    "DtSimulator",
]


@dataclass(frozen=True)
class TwinState:
    """Per-entity estimates and deviations; actual = estimate - deviation."""

    est_freq: np.ndarray
    freq_dev: np.ndarray
    est_power: np.ndarray
    power_dev: np.ndarray
    est_uav_power: np.ndarray
    uav_power_dev: np.ndarray

    def __post_init__(self) -> None:
        for name in (
            "est_freq",
            "freq_dev",
            "est_power",
            "power_dev",
            "est_uav_power",
            "uav_power_dev",
        ):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for est, dev, what in (
            (self.est_freq, self.freq_dev, "frequency"),
            (self.est_power, self.power_dev, "user power"),
            (self.est_uav_power, self.uav_power_dev, "UAV power"),
        ):
            if est.shape != dev.shape:
                raise ValueError(f"{what} estimate/deviation shapes differ")
            if np.any(est - dev <= 0):
                raise ValueError(f"actual {what} (estimate - deviation) must stay positive")

    @classmethod
    def zero(cls, n_users: int, k_slots: int, f: float, q: float, q_uav: float) -> "TwinState":
        """Twin with zero deviations around uniform setpoints."""
        return cls(
            est_freq=np.full(n_users, f),
            freq_dev=np.zeros(n_users),
            est_power=np.full(n_users, q),
            power_dev=np.zeros(n_users),
            est_uav_power=np.full(k_slots, q_uav),
            uav_power_dev=np.zeros(k_slots),
        )

    def apply_to(self, solution: AllocationSolution) -> AllocationSolution:
        """Read ``solution`` as estimated setpoints and return the actuals."""
        return solution.replace(
            freq=solution.freq - self.freq_dev,
            user_power=solution.user_power - self.power_dev,
            uav_power=solution.uav_power - self.uav_power_dev,
        )


@dataclass(frozen=True)
class SyncSchedule:
    """Refresh cadence: UAV telemetry every 1-2 s, user metrics slower,
    feedback applied with a sub-bound reporting delay."""

    telemetry_period_s: float = 1.5
    user_metrics_period_s: float = 5.0
    feedback_delay_s: float = 0.2

    def __post_init__(self) -> None:
        if not 1.0 <= self.telemetry_period_s <= 2.0:
            raise ValueError("telemetry_period_s must lie in [1, 2]")
        if self.user_metrics_period_s <= 0:
            raise ValueError("user_metrics_period_s must be positive")
        if not 0.0 < self.feedback_delay_s <= 0.2:
            raise ValueError("feedback_delay_s must lie in (0, 0.2]")


@dataclass(frozen=True)
class SyncEvent:
    sim_time_s: float
    entity_id: str
    field: str
    old_dev: float
    new_dev: float
    delay_ms: float


def estimated_train_time(user: UserProfile, phi_est_hz: float) -> float:
    """Twin-side training-time estimate C*I*D / phi_est."""
    if phi_est_hz <= 0:
        raise ValueError("estimated frequency must be strictly positive")
    return user.work_cycles / phi_est_hz

def latency_gap(user: UserProfile, phi_est_hz: float, phi_dev_hz: float) -> float:
    """Training-latency gap C*I*D*dev / (est*(est - dev)).

    Satisfies estimated_train_time + gap == C*I*D/(est - dev), the actual
    training time after compensation.
    """
    if phi_est_hz <= 0:
        raise ValueError("estimated frequency must be strictly positive")
    if phi_est_hz - phi_dev_hz <= 0:
        raise ValueError("estimate - deviation must stay positive (singular at equality)")
    return user.work_cycles * phi_dev_hz / (phi_est_hz * (phi_est_hz - phi_dev_hz))


def compensate(twin: TwinState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Actual parameter set (f_n, q_n, q_UAV[k]) via est - dev."""
    return (
        twin.est_freq - twin.freq_dev,
        twin.est_power - twin.power_dev,
        twin.est_uav_power - twin.uav_power_dev,
    )


@dataclass(frozen=True)
class DeviationModel:
    """Multiplicative ground truth: commanding ``v`` realizes ``gain * v``.

    Gains sit slightly above 1 by default (the physical entity overshoots
    the twin's estimate), so an uncompensated command wastes energy while
    a compensated command ``target / gain`` realizes the target exactly.
    """

    freq_gain: np.ndarray
    power_gain: np.ndarray
    uav_gain: np.ndarray

    def __post_init__(self) -> None:
        for name in ("freq_gain", "power_gain", "uav_gain"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if np.any(arr <= 0):
                raise ValueError("gains must be strictly positive")

    @classmethod
    def identity(cls, n_users: int, k_slots: int) -> "DeviationModel":
        return cls(np.ones(n_users), np.ones(n_users), np.ones(k_slots))

    @classmethod
    def seeded(
        cls,
        n_users: int,
        k_slots: int,
        rng: np.random.Generator,
        deviation_frac: float = 0.1,
        spread: float = 0.5,
    ) -> "DeviationModel":
        """Per-entity gains 1 + frac*[1-spread, 1+spread]; all above 1."""

        def draw(size: int) -> np.ndarray:
            u = rng.uniform(1.0 - spread, 1.0 + spread, size)
            return 1.0 + deviation_frac * u

        return cls(draw(n_users), draw(n_users), draw(k_slots))

    def realize(self, commanded: AllocationSolution, cfg: SystemConfig) -> AllocationSolution:
        """Physical response to commanded setpoints, clipped to hardware caps."""
        return commanded.replace(
            freq=np.minimum(commanded.freq * self.freq_gain, cfg.f_max_hz),
            user_power=np.minimum(commanded.user_power * self.power_gain, cfg.q_max_w),
            uav_power=np.minimum(commanded.uav_power * self.uav_gain, cfg.q_uav_max_w),
        )

    def compensate_command(self, target: AllocationSolution) -> AllocationSolution:
        """Command that realizes ``target`` exactly (DT-informed)."""
        return target.replace(
            freq=target.freq / self.freq_gain,
            user_power=target.user_power / self.power_gain,
            uav_power=target.uav_power / self.uav_gain,
        )

    def twin_for(self, commanded: AllocationSolution, cfg: SystemConfig) -> TwinState:
        actual = self.realize(commanded, cfg)
        return TwinState(
            est_freq=commanded.freq,
            freq_dev=commanded.freq - actual.freq,
            est_power=commanded.user_power,
            power_dev=commanded.user_power - actual.user_power,
            est_uav_power=commanded.uav_power,
            uav_power_dev=commanded.uav_power - actual.uav_power,
        )


_FIELD_GROUPS = {
    "telemetry": (("uav", "uav_power_dev", "est_uav_power"),),
    "user_metrics": (
        ("user", "freq_dev", "est_freq"),
        ("user", "power_dev", "est_power"),
    ),
}


def _boundaries(t_prev: float, t_now: float, period: float) -> list[float]:
    """Multiples of ``period`` in (t_prev, t_now]."""
    first = math.floor(t_prev / period) + 1
    last = math.floor(t_now / period + 1e-12)
    return [k * period for k in range(first, last + 1)]


def sync_tick(
    t_prev: float,
    t_now: float,
    schedule: SyncSchedule,
    twin: TwinState,
    rng: np.random.Generator,
    drift_frac_per_sqrt_s: float = 0.0,
    residual_frac: float = 0.01,
) -> tuple[TwinState, list[SyncEvent]]:
    """Advance the twin from t_prev to t_now.

    Deviations random-walk between refreshes (relative std per sqrt
    second) and collapse to ``residual_frac`` of themselves at each
    period boundary; estimates are re-pinned so actual values never move
    (the physical system is the reference). Deterministic given the
    clock pair and the generator state.
    """
    if t_now < t_prev:
        raise ValueError("clock must be monotone")
    actual_f, actual_q, actual_uav = compensate(twin)
    dev = {
        "freq_dev": twin.freq_dev.copy(),
        "power_dev": twin.power_dev.copy(),
        "uav_power_dev": twin.uav_power_dev.copy(),
    }
    est_for = {"freq_dev": actual_f, "power_dev": actual_q, "uav_power_dev": actual_uav}

    marks: list[tuple[float, str]] = []
    for group, period in (
        ("telemetry", schedule.telemetry_period_s),
        ("user_metrics", schedule.user_metrics_period_s),
    ):
        marks.extend((t, group) for t in _boundaries(t_prev, t_now, period))
    marks.sort(key=lambda m: (m[0], m[1]))

    events: list[SyncEvent] = []
    cursor = t_prev
    for t_mark, group in marks:
        _drift(dev, est_for, t_mark - cursor, drift_frac_per_sqrt_s, rng)
        cursor = t_mark
        for prefix, dev_name, _ in _FIELD_GROUPS[group]:
            old = dev[dev_name].copy()
            dev[dev_name] = old * residual_frac
            for idx in range(len(old)):
                delay_ms = float(rng.uniform(0.0, schedule.feedback_delay_s)) * 1e3
                events.append(
                    SyncEvent(
                        sim_time_s=t_mark,
                        entity_id=f"{prefix}{idx}",
                        field=dev_name,
                        old_dev=float(old[idx]),
                        new_dev=float(dev[dev_name][idx]),
                        delay_ms=delay_ms,
                    )
                )
    _drift(dev, est_for, t_now - cursor, drift_frac_per_sqrt_s, rng)

    new_twin = TwinState(
        est_freq=est_for["freq_dev"] + dev["freq_dev"],
        freq_dev=dev["freq_dev"],
        est_power=est_for["power_dev"] + dev["power_dev"],
        power_dev=dev["power_dev"],
        est_uav_power=est_for["uav_power_dev"] + dev["uav_power_dev"],
        uav_power_dev=dev["uav_power_dev"],
    )
    return new_twin, events


def _drift(dev, est_for, dt: float, frac: float, rng: np.random.Generator) -> None:
    if dt <= 0 or frac == 0.0:
        return
    for name, arr in dev.items():
        scale = frac * math.sqrt(dt) * np.abs(est_for[name] + arr)
        dev[name] = arr + rng.normal(0.0, 1.0, arr.shape) * scale


class DtSimulator:
    """Clock-owning wrapper around :func:`sync_tick` for CSV emission."""

    def __init__(
        self,
        twin: TwinState,
        schedule: SyncSchedule,
        rng: np.random.Generator,
        drift_frac_per_sqrt_s: float = 0.0,
        residual_frac: float = 0.01,
    ) -> None:
        self.twin = twin
        self.schedule = schedule
        self.rng = rng
        self.drift = drift_frac_per_sqrt_s
        self.residual = residual_frac
        self.clock_s = 0.0

    def tick(self, to_time_s: float) -> list[SyncEvent]:
        twin, events = sync_tick(
            self.clock_s,
            to_time_s,
            self.schedule,
            self.twin,
            self.rng,
            self.drift,
            self.residual,
        )
        self.twin = twin
        self.clock_s = to_time_s
        return events
