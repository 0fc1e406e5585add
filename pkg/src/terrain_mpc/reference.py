"""COM reference trajectory over the prediction horizon.

References are anchored at the stance changes of the contact schedule:
yaw and planar position are extrapolated from the user command, roll,
pitch and height follow a plane fitted to the contacts after each stance
change. The anchors are then sampled on the horizon grid with a zero-order
hold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .foothold import ContactSequence
from .gait import ContactSchedule
from .model import GRAVITY, NX, euler_rate_map, rot_z
from .terrain import fit_plane

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class UserCommand:
    velocity: tuple = (0.0, 0.0)   # planar, heading frame (m/s)
    yaw_rate: float = 0.0

    def __post_init__(self):
        v = tuple(float(x) for x in self.velocity)
        if len(v) != 2 or not all(np.isfinite(v)) or not np.isfinite(self.yaw_rate):
            raise ValueError("command must be finite: 2D velocity and a yaw rate")
        object.__setattr__(self, "velocity", v)


@dataclass
class Anchors:
    times: np.ndarray       # (K,)
    euler: np.ndarray       # (K, 3) roll, pitch, yaw
    position: np.ndarray    # (K, 3)
    velocity: np.ndarray    # (K, 3); planar part from the command, z filled by rates
    euler_rate: np.ndarray | None = None
    span: float | None = None   # time the anchors remain valid; last anchor time if None

    @property
    def horizon_span(self) -> float:
        return float(self.times[-1] if self.span is None else self.span)

    def __len__(self):
        return len(self.times)


@dataclass
class ReferenceTrajectory:
    x: np.ndarray           # (n, 15)
    times: np.ndarray       # (n,)
    period: float
    anchors: Anchors
    index: np.ndarray       # anchor used by each sample

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def stacked(self) -> np.ndarray:
        return self.x.ravel()


def anchor_references(state, command: UserCommand, schedule: ContactSchedule,
                      contacts: ContactSequence, body_height: float = 0.58) -> Anchors:
    """One reference pose per stance change (including ``kappa = 0``)."""
    dt = np.asarray(schedule.times, dtype=float)
    if contacts.positions.shape[0] != len(dt):
        raise ValueError("schedule and contact sequence have different lengths")
    psi = state.euler[2]
    v_cmd = rot_z(psi) @ np.array([command.velocity[0], command.velocity[1], 0.0])
    K = len(dt)
    euler = np.zeros((K, 3))
    pos = np.zeros((K, 3))
    vel = np.zeros((K, 3))
    for k in range(K):
        yaw = psi + dt[k] * command.yaw_rate
        Rz = rot_z(yaw - psi)
        plane = fit_plane(contacts.positions[k])
        roll, pitch = plane.roll_pitch(yaw)
        p = state.position + dt[k] * (Rz @ v_cmd)
        p[2] = plane.centroid[2] + body_height
        euler[k] = roll, pitch, yaw
        pos[k] = p
        vel[k] = Rz @ v_cmd
    return Anchors(dt.copy(), euler, pos, vel, span=schedule.span)


def rates_from_anchors(anchors: Anchors) -> Anchors:
    """Forward differences of roll, pitch, yaw and height between anchors.

    Anchors sharing a time stamp are treated as one sample (the last of the
    group, which is the one the zero-order hold keeps). The final group
    repeats the previous rate.
    """
    t = anchors.times
    if len(t) < 1:
        raise ValueError("need at least one anchor")
    last = np.flatnonzero(np.append(np.diff(t) > _TIME_EPS, True))
    group = np.searchsorted(last, np.arange(len(t)))
    vals = np.column_stack([anchors.euler, anchors.position[:, 2]])[last]
    g_rates = np.zeros((len(last), 4))
    if len(last) > 1:
        g_rates[:-1] = np.diff(vals, axis=0) / np.diff(t[last])[:, None]
        g_rates[-1] = g_rates[-2]
    rates = g_rates[group]
    velocity = anchors.velocity.copy()
    velocity[:, 2] = rates[:, 3]
    return Anchors(t.copy(), anchors.euler.copy(), anchors.position.copy(), velocity,
                   rates[:, :3].copy(), anchors.span)


def resample_zoh(anchors: Anchors, n: int, period: float, start: int = 1) -> ReferenceTrajectory:
    """Sample the anchors at ``(start + k) * period`` for ``k < n``.

    Each sample holds the latest anchor at or before its time. With the
    default ``start = 1`` the samples line up with the predicted states
    ``x[1] .. x[n]``.
    """
    if n < 1 or not period > 0:
        raise ValueError("need n >= 1 and a positive period")
    if anchors.euler_rate is None:
        anchors = rates_from_anchors(anchors)
    times = period * np.arange(start, start + n)
    span = anchors.horizon_span
    if len(anchors) > 1 and times[-1] > span + _TIME_EPS:
        raise ValueError(f"horizon end {times[-1]:.6f} s exceeds anchor span {span:.6f} s")
    idx = np.searchsorted(anchors.times, times + _TIME_EPS, side="right") - 1
    idx = np.clip(idx, 0, len(anchors) - 1)
    x = np.zeros((n, NX))
    for k, a in enumerate(idx):
        T, _ = euler_rate_map(anchors.euler[a])
        x[k, 0:3] = anchors.euler[a]
        x[k, 3:6] = anchors.position[a]
        x[k, 6:9] = T @ anchors.euler_rate[a]
        x[k, 9:12] = anchors.velocity[a]
        x[k, 12:15] = GRAVITY
    return ReferenceTrajectory(x, times, period, anchors, idx)


def com_path(anchors: Anchors, times) -> np.ndarray:
    """COM positions along the reference at arbitrary times.

    The planar part continues from the latest anchor at that anchor's
    velocity; the height is held. Unlike the zero-order-hold samples this
    moves continuously, which suits moment arms in the linearization.
    """
    times = np.asarray(times, dtype=float)
    idx = np.searchsorted(anchors.times, times + _TIME_EPS, side="right") - 1
    idx = np.clip(idx, 0, len(anchors) - 1)
    out = anchors.position[idx].copy()
    lag = (times - anchors.times[idx])[:, None]
    out[:, :2] += lag * anchors.velocity[idx, :2]
    return out
