"""Closed-loop trunk simulator.

The plant is a single rigid trunk with pinned stance feet. Swing feet follow
a half-ellipse kinematically and push back on the trunk with the reaction
of their acceleration (``-M_ua qdd``). The controller runs at two rates:
planning and the MPC at ``mpc_rate``, force distribution at ``task_rate``.
Everything runs in one thread; the MPC result is swapped in atomically at
the planning tick and held until the next one.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qpsolver
from .compensation import (LegModel, cross_inertia, distribute_wrench, grasp_map,
                           least_norm_forces)
from .foothold import (FootholdConfig, NoSafeFoothold, SwingGeometry, build_contact_sequence,
                       choose_foothold, hip_positions, predict_foothold)
from .gait import GaitParams, build_schedule
from .model import (GRAVITY, RobotParams, RobotState, SingularOrientation, euler_from_rotation,
                    euler_rate_map, rotation_zyx, so3_exp)
from .mpc import MpcConfig, MpcError, plan_forces, wrench_from_plan
from .qpsolver import QpProblem
from .reference import UserCommand, anchor_references, resample_zoh
from .terrain import HeightMap, flat_heightmap

log = logging.getLogger(__name__)

LOG_SCHEMA = "terrain_mpc.simlog/1"
_EPS = 1e-9


class ControllerFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- plant

def step_physics(state: RobotState, forces, leg_wrench, disturbance, dt: float,
                 params: RobotParams) -> RobotState:
    """One semi-implicit Euler step of the trunk.

    ``forces`` act at ``state.feet`` (rows of zeros for swing feet);
    ``leg_wrench`` and ``disturbance`` are ``[torque; force]`` about the COM
    in the world frame. The gyroscopic term is kept.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = np.asarray(forces, dtype=float).reshape(-1, 3)
    arms = state.feet - state.position
    force = F.sum(axis=0) + params.mass * GRAVITY + leg_wrench[3:] + disturbance[3:]
    torque = np.cross(arms, F).sum(axis=0) + leg_wrench[:3] + disturbance[:3]

    R = rotation_zyx(state.euler)
    Iw = R @ params.inertia @ R.T
    w = state.omega
    omega_dot = np.linalg.solve(Iw, torque - np.cross(w, Iw @ w))
    v = state.velocity + dt * force / params.mass
    w = w + dt * omega_dot
    r = state.position + dt * v
    R = so3_exp(w * dt) @ R
    euler = euler_from_rotation(R)
    if abs(np.cos(euler[1])) < 1e-6:
        raise SingularOrientation("trunk pitch reached +-pi/2")
    return RobotState(euler, r, w, v, state.feet.copy())


# ---------------------------------------------------------------- swing

def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u), 6.0 - 12.0 * u


def half_ellipse(s: float, origin, target, apex_height: float):
    """Position and first/second derivatives in ``s`` of the half-ellipse.

    The ellipse angle follows a smoothstep of ``s`` so the foot starts and
    ends at rest.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(target, dtype=float) - o
    s = min(max(float(s), 0.0), 1.0)
    g0, g1, g2 = _smoothstep(s)
    g0, g1, g2 = np.pi * g0, np.pi * g1, np.pi * g2
    sg, cg = np.sin(g0), np.cos(g0)
    w0 = 0.5 * (1.0 - cg)
    w1 = 0.5 * sg * g1
    w2 = 0.5 * (cg * g1 * g1 + sg * g2)
    ez = np.array([0.0, 0.0, 1.0])
    p = o + d * w0 + ez * apex_height * sg
    dp = d * w1 + ez * apex_height * cg * g1
    ddp = d * w2 + ez * apex_height * (-sg * g1 * g1 + cg * g2)
    return p, dp, ddp


@dataclass
class SwingPlan:
    """Half-ellipse with an optional decaying offset from a retarget at ``s0``."""

    origin: np.ndarray
    target: np.ndarray
    apex_height: float
    s0: float = 0.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def evaluate(self, s: float):
        p, dp, ddp = half_ellipse(s, self.origin, self.target, self.apex_height)
        if self.s0 < 1.0 and np.any(self.offset):
            span = 1.0 - self.s0
            u = min(max((s - self.s0) / span, 0.0), 1.0)
            b0, b1, b2 = _smoothstep(u)
            p = p + self.offset * (1.0 - b0)
            dp = dp - self.offset * b1 / span
            ddp = ddp - self.offset * b2 / span ** 2
        return p, dp, ddp

    def retarget(self, s: float, target) -> "SwingPlan":
        """New plan towards ``target`` that passes through the current position at ``s``."""
        here = self.evaluate(s)[0]
        fresh = SwingPlan(self.origin, np.asarray(target, dtype=float), self.apex_height)
        return SwingPlan(fresh.origin, fresh.target, self.apex_height, float(s),
                         here - fresh.evaluate(s)[0])


def swing_kinematics(phase: float, origin, target, apex_height: float = 0.12,
                     duration: float = 1.0):
    """Foot position, velocity and acceleration at swing ``phase`` in [0, 1]."""
    if not 0.0 <= phase <= 1.0:
        raise ValueError(f"swing phase {phase} outside [0, 1]")
    p, dp, ddp = half_ellipse(phase, origin, target, apex_height)
    return p, dp / duration, ddp / duration ** 2


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class CommandSegment:
    start: float
    velocity: tuple = (0.0, 0.0)
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class Disturbance:
    start: float
    duration: float
    force: tuple = (0.0, 0.0, 0.0)
    torque: tuple = (0.0, 0.0, 0.0)

    def wrench(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.torque, float), np.asarray(self.force, float)])


@dataclass
class QpGains:
    """PD gains of the single-step QP trunk controller."""

    kp_height: float = 100.0
    kd_linear: float = 20.0
    kp_angular: float = 100.0
    kd_angular: float = 20.0
    regularization: float = 1e-4


@dataclass
class SimConfig:
    duration: float = 15.0
    physics_dt: float = 1e-3
    task_rate: float = 250.0
    mpc_rate: float = 25.0
    horizon: int = 20
    gait: GaitParams = field(default_factory=lambda: GaitParams(0.6, 1.4))
    params: RobotParams = field(default_factory=RobotParams)
    legs: LegModel = field(default_factory=LegModel)
    foothold: FootholdConfig = field(default_factory=FootholdConfig)
    terrain: HeightMap | None = None
    body_height: float = 0.58
    commands: list = field(default_factory=lambda: [CommandSegment(0.0)])
    disturbances: list = field(default_factory=list)
    controller: str = "mpc"            # "mpc" or "qp"
    leg_compensation: bool = True
    state_weight: float | tuple = 1.0
    moment_arms: str = "reference"
    applied_forces: str = "plan"       # "plan": first-step forces at the feet; "wrench": distribute w_d
    input_weight: float = 1e-9
    qp_gains: QpGains = field(default_factory=QpGains)
    retarget_limit: float = 0.8        # swing phase after which targets are frozen
    initial_position: tuple = (0.0, 0.0)
    initial_yaw: float = 0.0
    fall_angle: float = 0.7
    min_clearance: float = 0.25
    goal_x: float | None = None
    state_noise: float = 0.0
    seed: int = 0
    max_violation_tol: float = 1e-6

    def __post_init__(self):
        if self.controller not in ("mpc", "qp"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.applied_forces not in ("plan", "wrench"):
            raise ValueError(f"unknown force mode {self.applied_forces!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        self.physics_per_task = self._ratio(1.0 / self.task_rate, self.physics_dt, "physics step", "task period")
        self.task_per_mpc = self._ratio(1.0 / self.mpc_rate, 1.0 / self.task_rate, "task period", "MPC period")

    @staticmethod
    def _ratio(big, small, a, b) -> int:
        k = int(round(big / small))
        if k < 1 or abs(k * small - big) > 1e-9:
            raise ValueError(f"{a} must divide the {b}")
        return k

    def command_at(self, t: float) -> UserCommand:
        seg = self.commands[0]
        for c in self.commands:
            if c.start <= t + _EPS:
                seg = c
        return UserCommand(seg.velocity, seg.yaw_rate)

    def disturbance_at(self, t: float) -> np.ndarray:
        w = np.zeros(6)
        for d in self.disturbances:
            if d.start - _EPS <= t < d.start + d.duration - _EPS:
                w += d.wrench()
        return w


# ---------------------------------------------------------------- log

@dataclass
class Touchdown:
    time: float
    leg: int
    landing: np.ndarray
    prediction: np.ndarray
    error: float


@dataclass
class SolveRecord:
    time: float
    status: str
    iterations: int
    objective: float
    forces: np.ndarray
    max_violation: float
    solve_time: float       # wall clock, excluded from the deterministic log


TICK_COLUMNS = (["t"] + [f"euler_{a}" for a in "xyz"] + [f"pos_{a}" for a in "xyz"]
                + [f"omega_{a}" for a in "xyz"] + [f"vel_{a}" for a in "xyz"]
                + [f"ref_euler_{a}" for a in "xyz"] + [f"ref_pos_{a}" for a in "xyz"]
                + [f"ref_vel_{a}" for a in "xyz"]
                + [f"f{i}_{a}" for i in range(4) for a in "xyz"]
                + [f"w_mpc_{i}" for i in range(6)] + [f"w_l_{i}" for i in range(6)]
                + [f"stance_{i}" for i in range(4)] + ["plan_age"])


@dataclass
class SimLog:
    ticks: list = field(default_factory=list)
    touchdowns: list = field(default_factory=list)
    solves: list = field(default_factory=list)
    fallen: bool = False
    fall_time: float | None = None
    fall_reason: str = ""
    failure: str = ""
    config: SimConfig | None = None
    max_wrench_residual: float = 0.0   # worst mismatch when distributing w_d

    @property
    def table(self) -> np.ndarray:
        return np.array(self.ticks, dtype=float).reshape(-1, len(TICK_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.table[:, TICK_COLUMNS.index(name)]

    @property
    def completed(self) -> bool:
        if self.fallen or self.failure:
            return False
        if self.config is not None and self.config.goal_x is not None:
            return bool(self.column("pos_x")[-1] >= self.config.goal_x)
        return True

    def foothold_errors(self, legs: int = 4) -> dict:
        """RMS and max of the foothold prediction error per leg."""
        out = {}
        for i in range(legs):
            e = np.array([td.error for td in self.touchdowns if td.leg == i])
            out[i] = {"count": int(e.size),
                      "rms": float(np.sqrt(np.mean(e ** 2))) if e.size else 0.0,
                      "max": float(np.max(np.abs(e))) if e.size else 0.0}
        return out

    def max_violation(self) -> float:
        return max((s.max_violation for s in self.solves), default=0.0)

    def write_csv(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "ticks.csv", "w", newline="") as fh:
            fh.write(f"# schema: {LOG_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(TICK_COLUMNS)
            for row in self.ticks:
                w.writerow([f"{v:.9g}" for v in row])
        with open(d / "touchdowns.csv", "w", newline="") as fh:
            fh.write(f"# schema: {LOG_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t", "leg", "land_x", "land_y", "land_z", "pred_x", "pred_y", "pred_z", "error"])
            for td in self.touchdowns:
                w.writerow([f"{td.time:.9g}", td.leg] + [f"{v:.9g}" for v in td.landing]
                           + [f"{v:.9g}" for v in td.prediction] + [f"{td.error:.9g}"])
        with open(d / "solves.csv", "w", newline="") as fh:
            fh.write(f"# schema: {LOG_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t", "status", "iterations", "objective", "max_violation"]
                       + [f"f{i}_{a}" for i in range(4) for a in "xyz"])
            for s in self.solves:
                w.writerow([f"{s.time:.9g}", s.status, s.iterations, f"{s.objective:.9g}",
                            f"{s.max_violation:.9g}"] + [f"{v:.9g}" for v in s.forces.ravel()])
        with open(d / "solve_times.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "solve_time"])
            for s in self.solves:
                w.writerow([f"{s.time:.9g}", f"{s.solve_time:.9g}"])


# ---------------------------------------------------------------- controller pieces

def joint_accelerations(model: LegModel, leg: int, plan: SwingPlan, s: float, swing_duration: float,
                        state: RobotState, delta: float = 4e-3):
    """Joint angles and feedforward accelerations of a swing leg.

    The foot follows ``plan``; the base is extrapolated at constant velocity
    and orientation. Accelerations are central differences of the inverse
    kinematics over ``delta`` seconds.
    """
    R = state.rotation
    qs = []
    for k in (-1, 0, 1):
        tau = k * delta
        sk = min(max(s + tau / swing_duration, 0.0), 1.0)
        foot = plan.evaluate(sk)[0]
        base = state.position + tau * state.velocity
        qs.append(model.inverse_kinematics(leg, R.T @ (foot - base)))
    return qs[1], (qs[0] - 2.0 * qs[1] + qs[2]) / delta ** 2


def stance_joint_angles(model: LegModel, leg: int, state: RobotState) -> np.ndarray:
    return model.inverse_kinematics(leg, state.rotation.T @ (state.feet[leg] - state.position))


def qp_trunk_wrench(state: RobotState, ref_euler, ref_height: float, ref_velocity, params: RobotParams,
                    gains: QpGains) -> np.ndarray:
    """PD plus gravity compensation wrench of the single-step trunk controller."""
    m = params.mass
    acc = gains.kd_linear * (np.asarray(ref_velocity, float) - state.velocity)
    acc[2] = gains.kp_height * (ref_height - state.position[2]) - gains.kd_linear * state.velocity[2]
    force = m * (acc - GRAVITY)
    T, _ = euler_rate_map(state.euler)
    err = np.asarray(ref_euler, float) - state.euler
    err[2] = (err[2] + np.pi) % (2.0 * np.pi) - np.pi
    R = state.rotation
    Iw = R @ params.inertia @ R.T
    torque = Iw @ (gains.kp_angular * (T @ err) - gains.kd_angular * state.omega)
    return np.concatenate([torque, force])


def qp_distribute(w, feet, com, params: RobotParams, regularization: float) -> np.ndarray:
    """Friction-constrained least-squares wrench tracking over the given feet."""
    feet = np.asarray(feet, dtype=float).reshape(-1, 3)
    k = len(feet)
    if k == 0:
        return np.zeros((0, 3))
    G = grasp_map(feet, com)
    H = 2.0 * (G.T @ G + regularization * np.eye(3 * k))
    f = -2.0 * G.T @ w
    rows, b = [], []
    mu = params.mu
    for i in range(k):
        x, y, z = 3 * i, 3 * i + 1, 3 * i + 2
        for j, sgn in ((x, -1.0), (x, 1.0), (y, -1.0), (y, 1.0)):
            r = np.zeros(3 * k)
            r[z], r[j] = mu, sgn
            rows.append(r)
            b.append(0.0)
        r = np.zeros(3 * k)
        r[z] = 1.0
        rows.append(r)
        b.append(params.u_min)
        rows.append(-r)
        b.append(-params.u_max)
    sol = qpsolver.solve(QpProblem(H, f, None, None, np.array(rows), np.array(b)))
    return sol.x.reshape(k, 3)


# ---------------------------------------------------------------- closed loop

def _terrain_height(hmap: HeightMap, xy) -> float:
    z, known = hmap.lookup(np.asarray(xy, dtype=float)[None, :2])
    return float(z[0]) if known[0] else 0.0


def initial_state(config: SimConfig, hmap: HeightMap) -> RobotState:
    x0, y0 = config.initial_position
    euler = np.array([0.0, 0.0, config.initial_yaw])
    feet = np.zeros((config.legs.legs, 3))
    R = rotation_zyx(euler)
    base = np.array([x0, y0, 0.0])
    for i, h in enumerate(config.legs.hips):
        p = base + R @ h
        feet[i] = p[0], p[1], _terrain_height(hmap, p)
    ground = float(np.mean(feet[:, 2]))
    return RobotState(euler, [x0, y0, ground + config.body_height], np.zeros(3), np.zeros(3), feet)


class _Controller:
    """Planner, MPC and task-rate force computation for one run."""

    def __init__(self, config: SimConfig, hmap: HeightMap):
        self.cfg = config
        self.hmap = hmap
        self.gait = config.gait
        self.params = config.params
        self.model = config.legs
        self.rng = np.random.default_rng(config.seed)
        self.mpc_cfg = MpcConfig(config.horizon, config.state_weight, config.input_weight,
                                 moment_arms=config.moment_arms)
        self.w_mpc = np.zeros(6)
        self.w_mpc_point = np.zeros(3)   # moment reference of the held wrench
        self.residual = 0.0
        self.plan_time = -np.inf
        self.anchor_ref = None
        self.swing: dict[int, SwingPlan] = {}
        self.predicted: dict[int, np.ndarray] = {}

    def estimate(self, state: RobotState) -> RobotState:
        est = state.copy()
        if self.cfg.state_noise > 0:
            s = self.cfg.state_noise
            est.euler = est.euler + s * self.rng.standard_normal(3)
            est.position = est.position + s * self.rng.standard_normal(3)
            est.omega = est.omega + s * self.rng.standard_normal(3)
            est.velocity = est.velocity + s * self.rng.standard_normal(3)
        return est

    def lift_off(self, leg: int, state: RobotState, t_sw: float) -> None:
        """Predict the landing of a leg that just lifted off and start its swing."""
        g = self.gait
        fc = self.cfg.foothold
        v = np.array([state.velocity[0], state.velocity[1], 0.0])
        hip = hip_positions(state, self.model.hips)[leg]
        center = np.array([hip[0], hip[1], 0.0])
        dt = max(g.swing_duration - t_sw, 0.0)
        pred = predict_foothold(leg, center, v * g.stance_duration, dt, v)
        geom = SwingGeometry(state.feet[leg], fc.swing_height, center[:2] + dt * v[:2], fc.reach_radius)
        try:
            target, _ = choose_foothold(self.hmap, pred.position, geom, fc)
        except NoSafeFoothold as exc:
            raise ControllerFailure(f"no safe foothold for leg {leg} at lift-off") from exc
        self.predicted[leg] = target
        self.swing[leg] = SwingPlan(state.feet[leg].copy(), target, fc.swing_height)

    def plan(self, t: float, state: RobotState, phase: float, log_: SimLog) -> None:
        g = self.gait
        schedule = build_schedule(g, phase)
        try:
            contacts = build_contact_sequence(state, schedule, self.hmap, g, self.model.hips,
                                              self.cfg.foothold)
        except NoSafeFoothold as exc:
            raise ControllerFailure(str(exc)) from exc
        anchors = anchor_references(state, self.cfg.command_at(t), schedule, contacts,
                                    self.cfg.body_height)
        n = self.cfg.horizon
        ref = resample_zoh(anchors, n, schedule.span / n)
        self.anchor_ref = ref.anchors

        # retarget swing legs to their next planned touchdown
        s_now = self.swing_phases(phase)
        for leg, plan in list(self.swing.items()):
            k = [i for i in schedule.touchdowns() if schedule.legs[i] == leg]
            if k and s_now[leg] <= self.cfg.retarget_limit:
                self.swing[leg] = plan.retarget(s_now[leg], contacts.positions[k[0], leg])

        if self.cfg.controller != "mpc":
            self.plan_time = t
            return
        try:
            plan, _, _ = plan_forces(state, ref, schedule, contacts.positions, self.params, self.mpc_cfg)
        except MpcError as exc:
            raise ControllerFailure(f"MPC failed at t = {t:.3f} s: {exc}") from exc
        if plan.max_violation > self.cfg.max_violation_tol:
            log.warning("MPC constraint violation %.3g at t = %.3f s", plan.max_violation, t)
        self.w_mpc = wrench_from_plan(plan.forces, contacts.positions[0], state.position)
        self.w_mpc_point = state.position.copy()
        self.plan_forces = plan.forces.copy()
        self.plan_stance = plan.stance[0].copy()
        self.plan_time = t
        log_.solves.append(SolveRecord(t, plan.status, plan.iterations, plan.objective,
                                       plan.forces.copy(), plan.max_violation, plan.solve_time))

    def swing_phases(self, phase: float) -> np.ndarray:
        g = self.gait
        lp = g.leg_phase(phase)
        return np.clip((lp - g.duty_factor) / (1.0 - g.duty_factor), 0.0, 1.0)

    def task(self, t: float, state: RobotState, stance, phase: float):
        """Foot forces and the physical leg reaction for the next task period."""
        g = self.gait
        s = self.swing_phases(phase)
        q = np.zeros((self.model.legs, 3))
        qdd = np.zeros((self.model.legs, 3))
        for leg in range(self.model.legs):
            if stance[leg]:
                q[leg] = stance_joint_angles(self.model, leg, state)
            else:
                q[leg], qdd[leg] = joint_accelerations(self.model, leg, self.swing[leg], s[leg],
                                                       g.swing_duration, state)
        M = cross_inertia(self.model, state.rotation, state.position, q.ravel())
        w_leg = M @ qdd.ravel()
        w_l = w_leg if self.cfg.leg_compensation else np.zeros(6)
        feet = state.feet[stance]
        forces = np.zeros((self.model.legs, 3))
        if self.cfg.controller == "mpc":
            # the held wrench acts about the current COM, not the one at solve time
            w_mpc = self.w_mpc.copy()
            w_mpc[:3] += np.cross(self.w_mpc_point - state.position, w_mpc[3:])
            w_d = w_mpc + w_l
            dist = distribute_wrench(w_d, feet, state.position, self.params.mu,
                                     self.params.u_min, self.params.u_max)
            self.residual = dist.residual
            if self.cfg.applied_forces == "plan":
                keep = stance & self.plan_stance
                forces[keep] = self.plan_forces[keep]
                if self.cfg.leg_compensation:
                    forces[stance] += least_norm_forces(w_l, feet, state.position)
            else:
                forces[stance] = dist.forces
        else:
            a = self.anchor_ref
            w_mpc = qp_trunk_wrench(state, a.euler[0], a.position[0, 2], a.velocity[0],
                                    self.params, self.cfg.qp_gains)
            forces[stance] = qp_distribute(w_mpc + w_l, feet, state.position, self.params,
                                           self.cfg.qp_gains.regularization)
        return forces, -w_leg, w_mpc, w_l


def run_closed_loop(config: SimConfig) -> SimLog:
    """Simulate ``config.duration`` seconds and return the log.

    Falls end the run early and are flagged in the log; controller failures
    are recorded in ``failure``. With ``goal_x`` set the run also stops once
    the COM passes the goal.
    """
    hmap = config.terrain if config.terrain is not None else flat_heightmap((-3.0, -3.0), (12.0, 6.0))
    ctl = _Controller(config, hmap)
    state = initial_state(config, hmap)
    g = config.gait
    out = SimLog(config=config)
    n_steps = int(round(config.duration / config.physics_dt))
    per_task = config.physics_per_task
    per_mpc = per_task * config.task_per_mpc
    mpc_period = per_mpc * config.physics_dt
    stance_prev = g.stance(0.0)
    forces = np.zeros((config.legs.legs, 3))
    w_react = np.zeros(6)

    for k in range(n_steps):
        t = k * config.physics_dt
        if k % per_task == 0:
            phase = (t * g.step_frequency) % 1.0
            stance = g.stance(phase)
            t_sw = g.swing_times(phase)
            for leg in range(config.legs.legs):
                if stance_prev[leg] and not stance[leg]:
                    ctl.lift_off(leg, state, t_sw[leg])
                elif stance[leg] and not stance_prev[leg]:
                    land = ctl.swing[leg].evaluate(1.0)[0]
                    state.feet[leg] = land
                    pred = ctl.predicted.pop(leg)
                    out.touchdowns.append(Touchdown(t, leg, land.copy(), pred,
                                                    float(np.linalg.norm(land - pred))))
                    del ctl.swing[leg]
            stance_prev = stance
            est = ctl.estimate(state)
            try:
                if k % per_mpc == 0:
                    ctl.plan(t, est, phase, out)
                age = t - ctl.plan_time
                assert age <= mpc_period + 1e-9, f"stale plan ({age:.4f} s) at t = {t:.3f} s"
                forces, w_react, w_mpc, w_l = ctl.task(t, est, stance, phase)
            except ControllerFailure as exc:
                out.failure = str(exc)
                log.error("%s", exc)
                break
            out.max_wrench_residual = max(out.max_wrench_residual, ctl.residual)
            a = ctl.anchor_ref
            out.ticks.append([t, *state.euler, *state.position, *state.omega, *state.velocity,
                              *a.euler[0], *a.position[0], *a.velocity[0], *forces.ravel(),
                              *w_mpc, *w_l, *stance.astype(float), age])
            z_ground = _terrain_height(hmap, state.position)
            if max(abs(state.euler[0]), abs(state.euler[1])) > config.fall_angle:
                out.fallen, out.fall_time, out.fall_reason = True, t, "orientation"
            elif state.position[2] - z_ground < config.min_clearance:
                out.fallen, out.fall_time, out.fall_reason = True, t, "height"
            if out.fallen:
                log.warning("fall (%s) at t = %.3f s", out.fall_reason, t)
                break
            if config.goal_x is not None and state.position[0] >= config.goal_x:
                log.info("goal reached at t = %.3f s", t)
                break
        try:
            state = step_physics(state, forces, w_react, config.disturbance_at(t),
                                 config.physics_dt, config.params)
        except SingularOrientation:
            out.fallen, out.fall_time, out.fall_reason = True, t, "singular orientation"
            break
    return out


def summarize(log_: SimLog, final_window: float = 5.0) -> dict:
    """Velocity tracking, foothold errors, fall flag and solve-time stats."""
    cfg = log_.config
    tab = log_.table
    out = {"fallen": log_.fallen, "fall_time": log_.fall_time, "fall_reason": log_.fall_reason,
           "failure": log_.failure, "completed": log_.completed}
    if len(tab):
        t = tab[:, 0]
        yaw = tab[:, TICK_COLUMNS.index("euler_z")]
        vx = tab[:, TICK_COLUMNS.index("vel_x")]
        vy = tab[:, TICK_COLUMNS.index("vel_y")]
        fwd = np.cos(yaw) * vx + np.sin(yaw) * vy
        ref = np.array([cfg.command_at(ti).velocity[0] for ti in t]) if cfg else np.zeros_like(t)
        win = t >= t[-1] - final_window
        out.update({
            "duration": float(t[-1]),
            "mean_forward_velocity": float(np.mean(fwd[win])),
            "commanded_forward_velocity": float(np.mean(ref[win])),
            "velocity_error_mean": float(abs(np.mean(fwd[win] - ref[win]))),
            "velocity_error_rms": float(np.sqrt(np.mean((fwd[win] - ref[win]) ** 2))),
            "final_position": [float(v) for v in tab[-1, 4:7]],
        })
    out["foothold_error"] = {str(k): v for k, v in log_.foothold_errors().items()}
    st = np.array([s.solve_time for s in log_.solves])
    out["solve_time"] = ({"count": int(st.size), "mean": float(st.mean()), "max": float(st.max())}
                         if st.size else {"count": 0, "mean": 0.0, "max": 0.0})
    out["max_constraint_violation"] = log_.max_violation()
    return out


def timed_run(config: SimConfig):
    t0 = time.perf_counter()
    out = run_closed_loop(config)
    return out, time.perf_counter() - t0
