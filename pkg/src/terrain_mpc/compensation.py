"""Leg-inertia compensation and wrench distribution.

Legs are chains of point masses. With the base held fixed, a joint
acceleration ``qdd_j`` moves every mass distal to joint ``j`` and the rate
of change of the leg momentum is ``M_ua @ qdd``. The stance feet have to
supply that wrench on top of the MPC wrench, so the total desired wrench is
``w_d = w_mpc + M_ua @ qdd_d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import rot_x, rot_y

LEG_JOINTS = 3


def chain_cross_inertia(com, joint_origins, joint_axes, masses, mass_positions,
                        distal) -> np.ndarray:
    """Cross inertia of a generic point-mass chain with revolute joints.

    ``distal[k, j]`` is True when mass ``k`` moves with joint ``j``. Column
    ``j`` is ``sum_k m_k [(c_k - com) x v_kj ; v_kj]`` with
    ``v_kj = a_j x (c_k - o_j)``.
    """
    o = np.asarray(joint_origins, dtype=float).reshape(-1, 3)
    a = np.asarray(joint_axes, dtype=float).reshape(-1, 3)
    m = np.asarray(masses, dtype=float).ravel()
    c = np.asarray(mass_positions, dtype=float).reshape(-1, 3)
    distal = np.asarray(distal, dtype=bool).reshape(len(m), len(o))
    com = np.asarray(com, dtype=float)
    M = np.zeros((6, len(o)))
    for j in range(len(o)):
        sel = distal[:, j] & (m != 0)
        if not sel.any():
            continue
        v = np.cross(a[j], c[sel] - o[j])
        mv = m[sel, None] * v
        M[:3, j] = np.cross(c[sel] - com, mv).sum(axis=0)
        M[3:, j] = mv.sum(axis=0)
    return M


@dataclass(frozen=True)
class LegModel:
    """Three-joint legs (HAA about x, HFE and KFE about y) with point masses.

    The HAA joint sits at the hip; the HFE joint is offset sideways by
    ``abduction_offset`` (outwards). Each link carries one point mass at
    ``mass_fractions`` of its length. Defaults are placeholders for a
    130 kg class robot, not measured values.
    """

    hips: np.ndarray = field(default_factory=lambda: np.array(
        [[0.44, 0.30, 0.0], [0.44, -0.30, 0.0], [-0.44, 0.30, 0.0], [-0.44, -0.30, 0.0]]))
    abduction_offset: float = 0.10
    thigh_length: float = 0.36
    shank_length: float = 0.38
    hip_mass: float = 2.0
    thigh_mass: float = 4.0
    shank_mass: float = 1.5
    mass_fractions: tuple = (0.5, 0.5)
    knee_sign: float = -1.0    # sign of the knee angle in the default posture

    def __post_init__(self):
        hips = np.asarray(self.hips, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "hips", hips)
        if min(self.hip_mass, self.thigh_mass, self.shank_mass) < 0:
            raise ValueError("link masses must be nonnegative")
        if min(self.thigh_length, self.shank_length) <= 0 or self.abduction_offset < 0:
            raise ValueError("link lengths must be positive")

    @property
    def legs(self) -> int:
        return len(self.hips)

    @property
    def joints(self) -> int:
        return LEG_JOINTS * self.legs

    def side(self, leg: int) -> float:
        return 1.0 if self.hips[leg, 1] >= 0 else -1.0

    def frames(self, leg: int, q):
        """Joint origins, axes, mass positions and foot in the base frame."""
        q0, q1, q2 = q
        hip = self.hips[leg]
        R0 = rot_x(q0)
        R1 = R0 @ rot_y(q1)
        R2 = R1 @ rot_y(q2)
        hfe = hip + R0 @ np.array([0.0, self.side(leg) * self.abduction_offset, 0.0])
        down1 = R1 @ np.array([0.0, 0.0, -self.thigh_length])
        down2 = R2 @ np.array([0.0, 0.0, -self.shank_length])
        knee = hfe + down1
        foot = knee + down2
        fa, fb = self.mass_fractions
        origins = np.array([hip, hfe, knee])
        axes = np.array([[1.0, 0.0, 0.0], R0[:, 1], R0[:, 1]])
        masses = np.array([self.hip_mass, self.thigh_mass, self.shank_mass])
        points = np.array([hfe, hfe + fa * down1, knee + fb * down2])
        return origins, axes, masses, points, foot

    def foot_position(self, leg: int, q) -> np.ndarray:
        return self.frames(leg, q)[4]

    def inverse_kinematics(self, leg: int, foot) -> np.ndarray:
        """Joint angles placing the foot at ``foot`` (base frame).

        Points out of reach are pulled onto the workspace boundary.
        """
        p = np.asarray(foot, dtype=float) - self.hips[leg]
        s = self.side(leg)
        l0, l1, l2 = self.abduction_offset, self.thigh_length, self.shank_length
        r_yz = max(p[1] ** 2 + p[2] ** 2 - l0 ** 2, 0.0)
        zp = -np.sqrt(r_yz)
        q0 = np.arctan2(p[2], p[1]) - np.arctan2(zp, s * l0)
        q0 = (q0 + np.pi) % (2.0 * np.pi) - np.pi
        xp = p[0]
        D = (xp ** 2 + zp ** 2 - l1 ** 2 - l2 ** 2) / (2.0 * l1 * l2)
        q2 = self.knee_sign * np.arccos(np.clip(D, -1.0, 1.0))
        q1 = np.arctan2(-xp, -zp) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
        return np.array([q0, q1, q2])


def cross_inertia(model: LegModel, rotation, position, q) -> np.ndarray:
    """``M_ua`` (6 x 3l) in the world frame about the base position.

    ``q`` holds the joint angles of all legs, leg after leg.
    """
    R = np.asarray(rotation, dtype=float)
    r = np.asarray(position, dtype=float)
    q = np.asarray(q, dtype=float).reshape(model.legs, LEG_JOINTS)
    distal = np.tril(np.ones((LEG_JOINTS, LEG_JOINTS), dtype=bool))
    M = np.zeros((6, model.joints))
    for leg in range(model.legs):
        o, a, m, c, _ = model.frames(leg, q[leg])
        cols = slice(LEG_JOINTS * leg, LEG_JOINTS * (leg + 1))
        M[:, cols] = chain_cross_inertia(r, r + o @ R.T, a @ R.T, m, r + c @ R.T, distal)
    return M


def compensation_wrench(M_ua, qdd) -> np.ndarray:
    """``w_l = M_ua @ qdd``."""
    M_ua = np.asarray(M_ua, dtype=float)
    qdd = np.asarray(qdd, dtype=float).ravel()
    if M_ua.shape[1] != qdd.size:
        raise ValueError(f"M_ua has {M_ua.shape[1]} columns, got {qdd.size} accelerations")
    return M_ua @ qdd


@dataclass
class CompensationResult:
    M_ua: np.ndarray
    w_l: np.ndarray
    w_d: np.ndarray


def compensate(model: LegModel, rotation, position, q, qdd, w_mpc) -> CompensationResult:
    M = cross_inertia(model, rotation, position, q)
    w_l = compensation_wrench(M, qdd)
    return CompensationResult(M, w_l, np.asarray(w_mpc, dtype=float) + w_l)


def grasp_map(feet, com) -> np.ndarray:
    """6 x 3k map from stacked foot forces to ``[torque about com; force]``."""
    arms = np.asarray(feet, dtype=float).reshape(-1, 3) - np.asarray(com, dtype=float)
    G = np.zeros((6, 3 * len(arms)))
    for i, d in enumerate(arms):
        cols = slice(3 * i, 3 * i + 3)
        G[:3, cols] = np.array([[0.0, -d[2], d[1]], [d[2], 0.0, -d[0]], [-d[1], d[0], 0.0]])
        G[3:, cols] = np.eye(3)
    return G


def least_norm_forces(w, feet, com) -> np.ndarray:
    """Smallest stacked foot forces whose wrench about ``com`` is ``w`` (no bounds).

    Used for corrections added on top of already feasible forces, where
    clamping the correction on its own would discard its pulling part.
    """
    feet = np.asarray(feet, dtype=float).reshape(-1, 3)
    if len(feet) == 0:
        return np.zeros((0, 3))
    return (np.linalg.pinv(grasp_map(feet, com)) @ np.asarray(w, dtype=float)).reshape(-1, 3)


@dataclass
class Distribution:
    forces: np.ndarray      # (k, 3)
    residual: float         # norm of w_d minus the recomposed wrench
    clamped: bool
    feasible: bool


def _clamp(F, mu, u_min, u_max):
    F = F.copy()
    F[:, 2] = np.clip(F[:, 2], u_min, u_max)
    lim = mu * F[:, 2]
    F[:, 0] = np.clip(F[:, 0], -lim, lim)
    F[:, 1] = np.clip(F[:, 1], -lim, lim)
    return F


def _violates(F, mu, u_min, u_max, tol):
    fz = F[:, 2]
    return ((fz < u_min - tol) | (fz > u_max + tol)
            | (np.abs(F[:, 0]) > mu * fz + tol) | (np.abs(F[:, 1]) > mu * fz + tol))


def distribute_wrench(w_d, feet, com, mu: float, u_min: float = 0.0, u_max: float = np.inf,
                      tol: float = 1e-8, residual_tol: float = 1e-6) -> Distribution:
    """Least-norm foot forces reproducing ``w_d``, with one clamp-and-resolve pass.

    Feet that violate friction or bounds are clamped and held; the remaining
    wrench is redistributed least-norm over the other feet and the result is
    clamped once more. ``feasible`` is False when the residual exceeds
    ``residual_tol``; the forces are returned either way.
    """
    w_d = np.asarray(w_d, dtype=float)
    feet = np.asarray(feet, dtype=float).reshape(-1, 3)
    k = len(feet)
    if k == 0:
        res = float(np.linalg.norm(w_d))
        return Distribution(np.zeros((0, 3)), res, False, res <= residual_tol)
    G = grasp_map(feet, com)
    F = (np.linalg.pinv(G) @ w_d).reshape(k, 3)
    bad = _violates(F, mu, u_min, u_max, tol)
    clamped = bool(bad.any())
    if clamped:
        F = _clamp(F, mu, u_min, u_max)
        free = ~bad
        if free.any():
            cols = np.repeat(free, 3)
            rest = w_d - G[:, ~cols] @ F[~free].ravel()
            F[free] = (np.linalg.pinv(G[:, cols]) @ rest).reshape(-1, 3)
            F = _clamp(F, mu, u_min, u_max)
    res = float(np.linalg.norm(G @ F.ravel() - w_d))
    return Distribution(F, res, clamped, res <= residual_tol)
