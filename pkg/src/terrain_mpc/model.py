"""Centroidal rigid-body model and its linear time-varying discretization.

State layout (15): euler (roll, pitch, yaw), COM position, world angular
velocity, COM velocity, gravity. Inputs (12): one world-frame force per leg.
Euler angles follow the ZYX convention, ``R = Rz(yaw) Ry(pitch) Rx(roll)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])
NX = 15
NU_LEG = 3
SINGULAR_EPS = 1e-6

# state slices
EULER = slice(0, 3)
POS = slice(3, 6)
OMEGA = slice(6, 9)
VEL = slice(9, 12)
GRAV = slice(12, 15)


class SingularOrientation(ValueError):
    """Pitch too close to +-pi/2 for the Euler-rate map to be inverted."""


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_zyx(euler) -> np.ndarray:
    roll, pitch, yaw = euler
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def euler_from_rotation(R) -> np.ndarray:
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def so3_exp(w) -> np.ndarray:
    """Rotation matrix of the rotation vector ``w`` (Rodrigues)."""
    th = np.linalg.norm(w)
    K = skew(w)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th ** 2 * K @ K


def euler_rate_map(euler) -> tuple[np.ndarray, np.ndarray]:
    """``T`` with ``omega = T(euler) @ euler_rates`` and its inverse."""
    _, pitch, yaw = euler
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    if abs(cp) <= np.sin(SINGULAR_EPS):
        raise SingularOrientation(f"pitch {pitch:.9f} rad is within {SINGULAR_EPS} of +-pi/2")
    T = np.array([[cp * cy, -sy, 0.0],
                  [cp * sy, cy, 0.0],
                  [-sp, 0.0, 1.0]])
    T_inv = np.array([[cy / cp, sy / cp, 0.0],
                      [-sy, cy, 0.0],
                      [cy * sp / cp, sy * sp / cp, 1.0]])
    return T, T_inv


@dataclass(frozen=True)
class RobotParams:
    """Lumped robot parameters. Defaults approximate a 130 kg quadruped."""

    mass: float = 130.0
    inertia: np.ndarray = field(default_factory=lambda: np.diag([6.0, 18.0, 20.0]))
    mu: float = 0.7
    u_min: float = 0.0
    u_max: float | None = None
    legs: int = 4

    def __post_init__(self):
        I = np.asarray(self.inertia, dtype=float)
        if I.shape == (3,):
            I = np.diag(I)
        object.__setattr__(self, "inertia", I)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.allclose(I, I.T) or np.linalg.eigvalsh(I).min() <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        if not self.mu >= 0:
            raise ValueError("friction coefficient must be nonnegative")
        if self.u_max is None:
            object.__setattr__(self, "u_max", 2.5 * self.mass * 9.81 / 2.0)
        if not 0.0 <= self.u_min <= self.u_max:
            raise ValueError("force bounds must satisfy 0 <= u_min <= u_max")

    @property
    def weight(self) -> float:
        return self.mass * -GRAVITY[2]


@dataclass
class RobotState:
    euler: np.ndarray
    position: np.ndarray
    omega: np.ndarray
    velocity: np.ndarray
    feet: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))

    def __post_init__(self):
        self.euler = np.asarray(self.euler, dtype=float).reshape(3)
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.feet = np.asarray(self.feet, dtype=float).reshape(-1, 3)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.euler, self.position, self.omega, self.velocity, GRAVITY])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_zyx(self.euler)

    def copy(self) -> "RobotState":
        return RobotState(self.euler.copy(), self.position.copy(), self.omega.copy(),
                          self.velocity.copy(), self.feet.copy())


def continuous_matrices(euler_ref, feet, com, params: RobotParams):
    """``A(euler_ref)`` and ``B(euler_ref, feet)`` of the centroidal model.

    Moment arms are the foot positions relative to ``com``; the body inertia
    is rotated to the world frame at ``euler_ref``.
    """
    _, T_inv = euler_rate_map(euler_ref)
    A = np.zeros((NX, NX))
    A[EULER, OMEGA] = T_inv
    A[POS, VEL] = np.eye(3)
    A[VEL, GRAV] = np.eye(3)

    R = rotation_zyx(euler_ref)
    I_world_inv = R @ np.linalg.inv(params.inertia) @ R.T
    feet = np.asarray(feet, dtype=float).reshape(-1, 3)
    B = np.zeros((NX, NU_LEG * len(feet)))
    for i, p in enumerate(feet):
        cols = slice(NU_LEG * i, NU_LEG * (i + 1))
        B[OMEGA, cols] = I_world_inv @ skew(p - com)
        B[VEL, cols] = np.eye(3) / params.mass
    return A, B


_PADE_ORDER = 6
_PADE_COEFFS = np.array([
    factorial(2 * _PADE_ORDER - k) * factorial(_PADE_ORDER)
    / (factorial(2 * _PADE_ORDER) * factorial(k) * factorial(_PADE_ORDER - k))
    for k in range(_PADE_ORDER + 1)
])


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a (6, 6) Pade approximant.

    The matrix is scaled by ``2**-s`` until its 1-norm is at most 0.5.
    """
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M, 1)
    s = 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))
    X = M / 2.0 ** s
    n = M.shape[0]
    P = np.eye(n)
    N = _PADE_COEFFS[0] * P
    D = _PADE_COEFFS[0] * P
    for k in range(1, _PADE_ORDER + 1):
        P = P @ X
        N = N + _PADE_COEFFS[k] * P
        D = D + (-1) ** k * _PADE_COEFFS[k] * P
    E = np.linalg.solve(D, N)
    for _ in range(s):
        E = E @ E
    return E


def discretize_zoh(A, B, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented exponential."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    nx, nu = B.shape
    M = np.zeros((nx + nu, nx + nu))
    M[:nx, :nx] = A * dt
    M[:nx, nx:] = B * dt
    E = expm(M)
    return E[:nx, :nx], E[:nx, nx:]


@dataclass
class DiscreteLtv:
    A: np.ndarray   # (n, nx, nx)
    B: np.ndarray   # (n, nx, nu)
    dt: float

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class CondensedHorizon:
    A_bar: np.ndarray   # (nx n, nx)
    B_bar: np.ndarray   # (nx n, nu n)
    x0: np.ndarray
    x_ref: np.ndarray | None = None   # (nx n,)

    @property
    def n(self) -> int:
        return self.A_bar.shape[0] // self.A_bar.shape[1]

    def predict(self, u) -> np.ndarray:
        return self.A_bar @ self.x0 + self.B_bar @ np.asarray(u, dtype=float)


def linearize_horizon(euler_refs, feet_seq, com_refs, params: RobotParams, dt: float) -> DiscreteLtv:
    """Discrete matrices for every horizon step from its reference sample."""
    n = len(euler_refs)
    nu = NU_LEG * np.asarray(feet_seq[0]).reshape(-1, 3).shape[0]
    Ad = np.empty((n, NX, NX))
    Bd = np.empty((n, NX, nu))
    for k in range(n):
        A, B = continuous_matrices(euler_refs[k], feet_seq[k], com_refs[k], params)
        Ad[k], Bd[k] = discretize_zoh(A, B, dt)
    return DiscreteLtv(Ad, Bd, dt)


def condense(ltv: DiscreteLtv, x0, x_ref=None) -> CondensedHorizon:
    """Prediction matrices with ``X = A_bar x0 + B_bar u`` by successive substitution."""
    n = ltv.n
    nx = ltv.A.shape[1]
    nu = ltv.B.shape[2]
    A_bar = np.zeros((nx * n, nx))
    B_bar = np.zeros((nx * n, nu * n))
    P = np.eye(nx)
    for k in range(n):
        rows = slice(nx * k, nx * (k + 1))
        P = ltv.A[k] @ P
        A_bar[rows] = P
        if k > 0:
            B_bar[rows, :nu * k] = ltv.A[k] @ B_bar[nx * (k - 1):nx * k, :nu * k]
        B_bar[rows, nu * k:nu * (k + 1)] = ltv.B[k]
    x0 = np.asarray(x0.vector() if isinstance(x0, RobotState) else x0, dtype=float)
    return CondensedHorizon(A_bar, B_bar, x0, None if x_ref is None else np.asarray(x_ref).ravel())
