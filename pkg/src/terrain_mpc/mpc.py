"""Condensed linear time-varying MPC for ground reaction forces."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import qpsolver
from .gait import ContactSchedule, stance_flags
from .model import (NX, NU_LEG, CondensedHorizon, RobotParams, RobotState, condense,
                    linearize_horizon)
from .qpsolver import QpProblem
from .reference import ReferenceTrajectory, com_path, resample_zoh

log = logging.getLogger(__name__)


class MpcError(RuntimeError):
    pass


@dataclass
class MpcWeights:
    """Diagonals of the state weight ``L`` (15 n) and input weight ``K`` (12 n)."""

    state: np.ndarray
    input: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).ravel()
        self.input = np.asarray(self.input, dtype=float).ravel()
        if np.any(self.state < 0):
            raise ValueError("state weights must be nonnegative")
        if np.any(self.input <= 0):
            raise ValueError("input weights must be positive")

    @classmethod
    def uniform(cls, n: int, state=1.0, input: float = 1e-9, legs: int = 4) -> "MpcWeights":
        """Same weights at every step; ``state`` is a scalar or one weight per state."""
        per_step = np.broadcast_to(np.asarray(state, dtype=float), (NX,))
        return cls(np.tile(per_step, n), np.full(NU_LEG * legs * n, input))


@dataclass
class MpcQp:
    problem: QpProblem
    stance: np.ndarray          # (n, l)
    weights: MpcWeights         # after zeroing flight steps
    params: RobotParams
    flight_steps: list = field(default_factory=list)


def build_qp(horizon: CondensedHorizon, weights: MpcWeights, stance,
             params: RobotParams) -> MpcQp:
    """Quadratic program over the stacked forces of the whole horizon.

    ``stance`` is either an ``(n, l)`` array of contact flags per step or a
    ``ContactSchedule``, sampled at the horizon period implied by the number
    of steps over its span.
    """
    n = horizon.n
    if isinstance(stance, ContactSchedule):
        stance = stance_flags(stance, n, stance.span / n)
    stance = np.asarray(stance, dtype=bool).reshape(n, -1)
    legs = stance.shape[1]
    nu = NU_LEG * legs
    if horizon.B_bar.shape != (NX * n, nu * n):
        raise ValueError("horizon and stance flags disagree on dimensions")
    if weights.state.size != NX * n or weights.input.size != nu * n:
        raise ValueError("weights do not match the horizon length")
    if horizon.x_ref is None:
        raise ValueError("horizon has no reference")

    Lw = weights.state.copy()
    flight = [k for k in range(n) if not stance[k].any()]
    for k in flight:
        log.warning("horizon step %d has no stance leg; dropping its state weight", k)
        Lw[NX * k:NX * (k + 1)] = 0.0

    Bb = horizon.B_bar
    LB = Lw[:, None] * Bb
    H = 2.0 * (Bb.T @ LB)
    H[np.diag_indices_from(H)] += 2.0 * weights.input
    H = 0.5 * (H + H.T)
    err = horizon.A_bar @ horizon.x0 - horizon.x_ref
    f = 2.0 * (LB.T @ err)

    mu = params.mu
    rows_in, b_in, rows_eq = [], [], []
    for k in range(n):
        for i in range(legs):
            base = nu * k + NU_LEG * i
            ix, iy, iz = base, base + 1, base + 2
            if stance[k, i] and mu == 0.0:
                # the pyramid collapses; opposing rows would be dependent, so pin instead
                rows_eq += [ix, iy]
                rows_in += [((iz, 1.0),), ((iz, -1.0),)]
                b_in += [params.u_min, -params.u_max]
            elif stance[k, i]:
                rows_in += [((iz, mu), (ix, -1.0)), ((iz, mu), (ix, 1.0)),
                            ((iz, mu), (iy, -1.0)), ((iz, mu), (iy, 1.0)),
                            ((iz, 1.0),), ((iz, -1.0),)]
                b_in += [0.0, 0.0, 0.0, 0.0, params.u_min, -params.u_max]
            else:
                rows_eq += [ix, iy, iz]
    A_in = np.zeros((len(rows_in), nu * n))
    for r, entries in enumerate(rows_in):
        for j, v in entries:
            A_in[r, j] = v
    A_eq = np.zeros((len(rows_eq), nu * n))
    A_eq[np.arange(len(rows_eq)), rows_eq] = 1.0
    problem = QpProblem(H, f, A_eq, np.zeros(len(rows_eq)), A_in, np.array(b_in))
    return MpcQp(problem, stance, MpcWeights(Lw, weights.input), params, flight)


def constraint_violation(u, stance, params: RobotParams) -> float:
    """Largest violation of the friction pyramid, force bounds and swing nulling."""
    stance = np.asarray(stance, dtype=bool)
    F = np.asarray(u, dtype=float).reshape(stance.shape[0], stance.shape[1], 3)
    fx, fy, fz = F[..., 0], F[..., 1], F[..., 2]
    mu = params.mu
    v = np.stack([np.abs(fx) - mu * fz, np.abs(fy) - mu * fz,
                  params.u_min - fz, fz - params.u_max])
    worst_stance = np.max(np.where(stance[None], v, -np.inf), initial=0.0)
    worst_swing = np.max(np.where(stance[..., None], 0.0, np.abs(F)), initial=0.0)
    return float(max(worst_stance, worst_swing, 0.0))


@dataclass
class GrfPlan:
    u: np.ndarray               # (12 n,)
    forces: np.ndarray          # (l, 3) first-step forces
    stance: np.ndarray          # (n, l)
    objective: float
    iterations: int
    status: str
    solve_time: float
    max_violation: float
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def solve_mpc(qp: MpcQp, horizon: CondensedHorizon, tol: float = 1e-8,
              warm_start=None) -> GrfPlan:
    """Solve the assembled QP; swing-leg forces are eliminated exactly."""
    t0 = time.perf_counter()
    try:
        reduced = qpsolver.eliminate_fixed_variables(qp.problem)
        sol = qpsolver.solve(reduced.problem, tol=tol, warm_start=warm_start)
    except qpsolver.QpError as exc:
        raise MpcError(f"MPC QP failed over {horizon.n} steps "
                       f"({int(qp.stance.sum())} stance leg-steps): {exc}") from exc
    u = reduced.expand(sol.x)
    legs = qp.stance.shape[1]
    X = horizon.predict(u)
    e = X - horizon.x_ref
    objective = float(e @ (qp.weights.state * e) + u @ (qp.weights.input * u))
    # active rows in the reduced problem -> rows of the full problem
    active = reduced.kept_rows[sol.active]
    return GrfPlan(u, u[:NU_LEG * legs].reshape(legs, NU_LEG).copy(), qp.stance, objective,
                   sol.iterations, sol.status, time.perf_counter() - t0,
                   constraint_violation(u, qp.stance, qp.params), active)


def wrench_from_plan(forces, feet, com) -> np.ndarray:
    """``[sum (p_i - com) x F_i ; sum F_i]``."""
    F = np.asarray(forces, dtype=float).reshape(-1, 3)
    arms = np.asarray(feet, dtype=float).reshape(-1, 3) - np.asarray(com, dtype=float)
    return np.concatenate([np.cross(arms, F).sum(axis=0), F.sum(axis=0)])


@dataclass
class MpcConfig:
    horizon: int = 20
    state_weight: float | tuple = 1.0   # scalar or 15 per-state weights
    input_weight: float = 1e-9
    tol: float = 1e-8
    moment_arms: str = "reference"       # "reference" (zero-order hold) or "path"


def horizon_inputs(state: RobotState, reference_anchors, schedule: ContactSchedule,
                   contact_positions, n: int, period: float, moment_arms: str = "reference"):
    """Per-step linearization points: reference samples, stance flags, feet.

    Step ``k`` uses the reference orientation and contacts in force at
    ``k * period``. Moment arms come from the held reference position, or
    with ``moment_arms="path"`` from the COM path at the middle of the step.
    """
    stage = resample_zoh(reference_anchors, n, period, start=0)
    stance = stance_flags(schedule, n, period)
    feet = contact_positions[stage.index]
    if moment_arms == "reference":
        coms = stage.x[:, 3:6]
    elif moment_arms == "path":
        coms = com_path(reference_anchors, period * (np.arange(n) + 0.5))
    else:
        raise ValueError(f"unknown moment arm source {moment_arms!r}")
    return stage, stance, feet, coms


def plan_forces(state: RobotState, reference: ReferenceTrajectory, schedule: ContactSchedule,
                contact_positions, params: RobotParams, config: MpcConfig = MpcConfig(),
                weights: MpcWeights | None = None, warm_start=None):
    """Linearize, condense and solve the MPC for one control tick.

    Returns ``(plan, horizon, qp)``.
    """
    n = reference.n
    stage, stance, feet, coms = horizon_inputs(state, reference.anchors, schedule,
                                               contact_positions, n, reference.period,
                                               config.moment_arms)
    ltv = linearize_horizon(stage.x[:, 0:3], feet, coms, params, reference.period)
    horizon = condense(ltv, state.vector(), reference.stacked)
    if weights is None:
        weights = MpcWeights.uniform(n, config.state_weight, config.input_weight, feet.shape[1])
    qp = build_qp(horizon, weights, stance, params)
    plan = solve_mpc(qp, horizon, config.tol, warm_start)
    return plan, horizon, qp
