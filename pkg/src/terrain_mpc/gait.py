"""Periodic gaits and the stance-change schedule over two gait cycles."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEGS = ("LF", "RF", "LH", "RH")
# diagonal pairs LF/RH and RF/LH half a cycle apart
TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)

_TIME_EPS = 1e-9


class GaitError(ValueError):
    pass


@dataclass(frozen=True)
class GaitParams:
    duty_factor: float = 0.6
    step_frequency: float = 1.4
    offsets: tuple = TROT_OFFSETS

    def __post_init__(self):
        if not 0.0 < self.duty_factor < 1.0:
            raise GaitError(f"duty factor must lie in (0, 1), got {self.duty_factor}")
        if not self.step_frequency > 0.0:
            raise GaitError(f"step frequency must be positive, got {self.step_frequency}")
        offs = tuple(float(o) for o in self.offsets)
        if len(offs) < 1 or any(not 0.0 <= o < 1.0 for o in offs):
            raise GaitError(f"phase offsets must lie in [0, 1), got {offs}")
        object.__setattr__(self, "offsets", offs)

    @property
    def legs(self) -> int:
        return len(self.offsets)

    @property
    def cycle(self) -> float:
        return 1.0 / self.step_frequency

    @property
    def stance_duration(self) -> float:
        return self.duty_factor / self.step_frequency

    @property
    def swing_duration(self) -> float:
        return (1.0 - self.duty_factor) / self.step_frequency

    def leg_phase(self, phase: float) -> np.ndarray:
        """Per-leg phase in [0, 1); stance occupies [0, duty_factor)."""
        return np.mod(phase - np.asarray(self.offsets), 1.0)

    def stance(self, phase: float) -> np.ndarray:
        return self.leg_phase(phase) < self.duty_factor

    def swing_times(self, phase: float) -> np.ndarray:
        """Elapsed time since the latest lift-off (0 for stance legs)."""
        lp = self.leg_phase(phase)
        return np.where(self.stance(phase), 0.0,
                        np.maximum(lp - self.duty_factor, 0.0) / self.step_frequency)


@dataclass
class ContactSchedule:
    """Stance changes over the next two gait cycles.

    Event ``kappa = 0`` is "now" and carries the current contact flags; each
    later event is a single leg lifting off or touching down. Legs that switch
    at the same instant produce consecutive events with equal times.
    """

    times: np.ndarray          # (K + 1,)
    legs: np.ndarray           # (K + 1,), -1 for kappa = 0
    touchdown: np.ndarray      # (K + 1,) bool
    flags: np.ndarray          # (K + 1, l) contact flags after each event
    swing_times: np.ndarray    # (l,)
    span: float
    params: GaitParams = field(repr=False)

    @property
    def count(self) -> int:
        """Number of per-leg stance changes (16 for a four-legged gait)."""
        return len(self.times) - 1

    def merged(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct event times with the flags in force after each of them."""
        keep = np.append(np.diff(self.times) > _TIME_EPS, True)
        keep[0] = True
        idx = [i for i in range(len(self.times)) if keep[i]]
        # kappa = 0 stays separate unless another event is also at t = 0
        return self.times[idx], self.flags[idx]

    def touchdowns(self) -> list[int]:
        return [k for k in range(1, len(self.times)) if self.touchdown[k]]


def build_schedule(params: GaitParams, phase: float,
                   swing_times: Sequence[float] | None = None) -> ContactSchedule:
    """Stance changes in ``(0, 2 / f_s]`` starting from gait phase ``phase``.

    For a leg in swing the next touchdown is placed at
    ``(1 - D_f) / f_s - t_sw``; all later events of that leg follow at the
    gait period.
    """
    phase = float(phase) % 1.0
    T = params.cycle
    l = params.legs
    stance = params.stance(phase)
    lp = params.leg_phase(phase)
    if swing_times is None:
        t_sw = params.swing_times(phase)
    else:
        t_sw = np.asarray(swing_times, dtype=float).reshape(l)
        if np.any(t_sw < -_TIME_EPS) or np.any(t_sw > params.swing_duration + _TIME_EPS):
            raise GaitError(
                f"elapsed swing time {t_sw} outside [0, {params.swing_duration:.6f}] s")

    events = []
    for i in range(l):
        if stance[i]:
            lift = (params.duty_factor - lp[i]) / params.step_frequency
            first = [(lift, i, False), (lift + params.swing_duration, i, True)]
        else:
            td = params.swing_duration - t_sw[i]
            first = [(td, i, True), (td + params.stance_duration, i, False)]
        for t, leg, down in first:
            # rounding can push the second event a hair past one period
            t = min(t, T)
            events.append((t, leg, down))
            events.append((t + T, leg, down))
    events.sort(key=lambda e: (e[0], e[1]))

    times = [0.0]
    legs = [-1]
    downs = [False]
    flags = [stance.copy()]
    cur = stance.copy()
    for t, leg, down in events:
        cur = cur.copy()
        cur[leg] = down
        times.append(t)
        legs.append(leg)
        downs.append(down)
        flags.append(cur)
    return ContactSchedule(np.array(times), np.array(legs), np.array(downs),
                           np.array(flags), np.where(stance, 0.0, t_sw), 2.0 * T, params)


def contact_flags_at(schedule: ContactSchedule, t: float) -> np.ndarray:
    """Flags of the latest event with time at or before ``t``."""
    if t < -_TIME_EPS or t > schedule.span + _TIME_EPS:
        raise GaitError(f"t = {t} outside schedule span [0, {schedule.span}]")
    k = int(np.searchsorted(schedule.times, t + _TIME_EPS, side="right")) - 1
    return schedule.flags[max(k, 0)].copy()


def stance_flags(schedule: ContactSchedule, n: int, period: float) -> np.ndarray:
    """Contact flags in force at the start of each of ``n`` horizon steps."""
    return np.array([contact_flags_at(schedule, min(k * period, schedule.span))
                     for k in range(n)])
