"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Scenario runs go through the command-line entry point and are shared
between tests; their wall time is measured around the run itself.
"""
import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from terrain_mpc import cli
from terrain_mpc.compensation import LegModel, cross_inertia
from terrain_mpc.foothold import FootholdConfig, SwingGeometry, choose_foothold, edge_band
from terrain_mpc.gait import GaitParams, build_schedule
from terrain_mpc.model import (DiscreteLtv, RobotParams, RobotState, SingularOrientation,
                               condense, discretize_zoh, euler_rate_map, rotation_zyx)
from terrain_mpc.mpc import MpcConfig, MpcWeights, build_qp, plan_forces, solve_mpc
from terrain_mpc.qpsolver import QpProblem, solve
from terrain_mpc.reference import UserCommand, anchor_references, resample_zoh
from terrain_mpc.foothold import build_contact_sequence
from terrain_mpc.terrain import beam_course_description, flat_heightmap, load_heightmap

from oracles import (angular_velocity_fwd, leg_momentum_rate_fd, qp_bruteforce,
                     simulate_recursion, zoh_series)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
P = RobotParams()
MG = P.mass * 9.81
SQUARE = np.array([[0.44, 0.3, 0], [0.44, -0.3, 0], [-0.44, 0.3, 0], [-0.44, -0.3, 0]])


class Run:
    def __init__(self, directory, code, seconds):
        self.dir, self.code, self.seconds = Path(directory), code, seconds
        self.summary = json.loads((self.dir / "summary.json").read_text())

    def table(self, name):
        with open(self.dir / name) as fh:
            rows = list(csv.reader(fh))[1:]
        return rows[0], rows[1:]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(name, ablate=None, tag=""):
        key = (name, ablate, tag)
        if key not in cache:
            out = root / f"{name}-{ablate or 'full'}{tag}"
            t0 = time.perf_counter()
            code = cli.run(SCENARIOS / name, ablate=ablate, out=out)
            cache[key] = Run(out, code, time.perf_counter() - t0)
        return cache[key]
    return get


# ------------------------------------------------------------------ 1

def test_c01_static_force_balance(criterion):
    t0 = time.perf_counter()
    n = 20
    com = np.array([0.0, 0.0, 0.58])
    from terrain_mpc.model import linearize_horizon, GRAVITY
    hold = np.concatenate([np.zeros(3), com, np.zeros(6), GRAVITY])
    ltv = linearize_horizon(np.zeros((n, 3)), [SQUARE] * n, [com] * n, P, 2 / 1.4 / n)
    h = condense(ltv, hold, np.tile(hold, n))
    plan = solve_mpc(build_qp(h, MpcWeights.uniform(n), np.ones((n, 4), bool), P), h)
    F = plan.forces
    force_err = np.abs(F.sum(axis=0) - [0, 0, MG]).max()
    moment_err = np.abs(np.cross(SQUARE - com, F).sum(axis=0)).max()
    dt = time.perf_counter() - t0
    ok = force_err <= 1e-6 * MG and moment_err <= 1e-6 * MG and dt < 1.0
    criterion(1, ok, f"|sum F - mg| {force_err:.2e} N, |moment| {moment_err:.2e} N m "
                     f"(limit {1e-6 * MG:.2e}), {dt:.2f} s")
    assert ok


# ------------------------------------------------------------------ 2

def test_c02_discretization_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        d, m = rng.integers(2, 16), rng.integers(1, 13)
        A = rng.normal(size=(d, d))
        B = rng.normal(size=(d, m))
        dt = rng.uniform(0.005, 0.3)
        Ad, Bd = discretize_zoh(A, B, dt)
        Ao, Bo = zoh_series(A, B, dt)
        worst = max(worst, np.abs(Ad - Ao).max(), np.abs(Bd - Bo).max())
    sec = time.perf_counter() - t0
    ok = worst <= 1e-9 and sec < 5.0
    criterion(2, ok, f"max elementwise error {worst:.2e} over 50 pairs, {sec:.2f} s")
    assert ok


# ------------------------------------------------------------------ 3

def test_c03_condensation_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(3, 11))
        ltv = DiscreteLtv(rng.normal(size=(n, 15, 15)) * 0.3, rng.normal(size=(n, 15, 12)), 0.07)
        x0 = rng.normal(size=15)
        u = rng.normal(size=12 * n)
        X = simulate_recursion(ltv.A, ltv.B, x0, u)
        worst = max(worst, np.abs(condense(ltv, x0).predict(u) - X).max() / max(1.0, np.abs(X).max()))
    sec = time.perf_counter() - t0
    ok = worst <= 1e-10 and sec < 5.0
    criterion(3, ok, f"max scaled error {worst:.2e} over 20 systems, {sec:.2f} s")
    assert ok


# ------------------------------------------------------------------ 4

def test_c04_qp_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_x, worst_kkt = 0.0, 0.0
    for _ in range(200):
        d = int(rng.integers(2, 7))
        m_in = int(rng.integers(0, 9))
        m_eq = int(rng.integers(0, min(3, d)))
        M = rng.normal(size=(d, d))
        H = M @ M.T + 0.05 * np.eye(d)
        f = rng.normal(size=d) * 3
        xf = rng.normal(size=d)
        A_in = rng.normal(size=(m_in, d))
        b_in = A_in @ xf - rng.random(m_in)
        A_eq = rng.normal(size=(m_eq, d))
        b_eq = A_eq @ xf
        p = QpProblem(H, f, A_eq, b_eq, A_in, b_in)
        sol = solve(p)
        x_ref, _ = qp_bruteforce(H, f, A_eq, b_eq, A_in, b_in)
        worst_x = max(worst_x, np.abs(sol.x - x_ref).max())
        worst_kkt = max(worst_kkt, max(p.kkt_residuals(sol).values()))
    sec = time.perf_counter() - t0
    ok = worst_x <= 1e-7 and worst_kkt <= 1e-8 and sec < 30.0
    criterion(4, ok, f"max |x - x_enum| {worst_x:.2e}, max KKT residual {worst_kkt:.2e}, {sec:.2f} s")
    assert ok


# ------------------------------------------------------------------ 5

SHIPPED = ("flat_trot", "stand", "disturbance", "beam_course")


def test_c05_constraints_on_every_tick(runs, criterion):
    worst, swing_nonzero, solves = 0.0, 0, 0
    for name in SHIPPED:
        r = runs(name)
        head, rows = r.table("solves.csv")
        col = head.index("max_violation")
        worst = max([worst] + [float(row[col]) for row in rows])
        solves += len(rows)
        head, rows = r.table("ticks.csv")
        for row in rows:
            for i in range(4):
                if float(row[head.index(f"stance_{i}")]) == 0.0:
                    swing_nonzero += sum(float(row[head.index(f"f{i}_{a}")]) != 0.0 for a in "xyz")
    ok = worst <= 1e-6 and swing_nonzero == 0 and solves > 0
    criterion(5, ok, f"{solves} solves over {len(SHIPPED)} scenarios, worst violation {worst:.2e}, "
                     f"nonzero swing-leg components {swing_nonzero}")
    assert ok


# ------------------------------------------------------------------ 6

def test_c06_euler_rate_map(criterion):
    rng = np.random.default_rng(6)
    worst_ratio = (np.inf, -np.inf)
    for _ in range(20):
        e = rng.uniform([-0.9, -1.2, -np.pi], [0.9, 1.2, np.pi])
        de = rng.normal(size=3)
        T, _ = euler_rate_map(e)
        errs = np.array([np.linalg.norm(angular_velocity_fwd(e, de, h) - T @ de)
                         for h in (1e-3, 5e-4, 2.5e-4, 1.25e-4)])
        ratios = errs[:-1] / errs[1:]
        worst_ratio = (min(worst_ratio[0], ratios.min()), max(worst_ratio[1], ratios.max()))
    try:
        euler_rate_map([0.0, np.pi / 2, 0.0])
        raised = False
    except SingularOrientation:
        raised = True
    ok = 1.8 <= worst_ratio[0] and worst_ratio[1] <= 2.2 and raised
    criterion(6, ok, f"error ratio under h-halving in [{worst_ratio[0]:.3f}, {worst_ratio[1]:.3f}], "
                     f"singularity raises: {raised}")
    assert ok


# ------------------------------------------------------------------ 7

def test_c07_leg_inertia_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    model = LegModel()
    masses = np.tile([model.hip_mass, model.thigh_mass, model.shank_mass], 4)
    hs = (4e-2, 2e-2, 1e-2)
    worst, converging = 0.0, True
    for _ in range(20):
        R = rotation_zyx(rng.uniform(-0.3, 0.3, 3))
        r = rng.normal(size=3)
        q = np.tile([0.0, 0.6, -1.2], 4) + rng.uniform(-0.4, 0.4, 12)

        def positions(qq):
            qq = qq.reshape(4, 3)
            return r + np.vstack([model.frames(i, qq[i])[3] for i in range(4)]) @ R.T

        M = cross_inertia(model, R, r, q)
        for j in range(12):
            qdd = np.zeros(12)
            qdd[j] = 1.0
            errs = [np.abs(leg_momentum_rate_fd(positions, masses, r, q, qdd, h) - M[:, j]).max()
                    for h in hs]
            worst = max(worst, errs[-1])
            # exact columns (zero truncation error) count as converged
            converging &= all(b <= a or a < 1e-12 for a, b in zip(errs, errs[1:]))
    sec = time.perf_counter() - t0
    ok = converging and worst < 1e-4 and sec < 10.0
    criterion(7, ok, f"240 columns, error non-increasing under h-halving: {converging}, "
                     f"finest error {worst:.2e}, {sec:.2f} s")
    assert ok


# ------------------------------------------------------------------ 8

def test_c08_flat_trot_tracking(runs, criterion):
    r = runs("flat_trot")
    s = r.summary
    err = s["velocity_error_mean"]
    ok = (r.code == cli.EXIT_OK and not s["fallen"] and err <= 0.05 and r.seconds < 120)
    criterion(8, ok, f"mean forward velocity {s['mean_forward_velocity']:.4f} m/s over the final 5 s, "
                     f"error {err:.4f} (limit 0.05), fallen {s['fallen']}, {r.seconds:.1f} s")
    assert ok


# ------------------------------------------------------------------ 9

def test_c09_disturbance_direction(runs, criterion):
    full = runs("disturbance")
    qp = runs("disturbance", ablate="mpc")
    cmp = cli.compare(full.dir, qp.dir)
    worse = []
    for leg, m in cmp["legs"].items():
        for metric in ("rms", "max"):
            if m[metric]["a"] > m[metric]["b"]:
                worse.append(f"leg {leg} {metric} {m[metric]['a']:.4f} > {m[metric]['b']:.4f}")
    seconds = full.seconds + qp.seconds
    ok = not worse and seconds < 240 and cmp["completed"]["a"]
    detail = "MPC+IC <= QP on every leg" if not worse else "; ".join(worse)
    criterion(9, ok, f"{detail}, {seconds:.1f} s")
    print(cli.format_comparison(cmp))
    assert ok


# ------------------------------------------------------------------ 10

def test_c10_beam_course(runs, criterion):
    full = runs("beam_course")
    qp = runs("beam_course", ablate="mpc")
    hmap = load_heightmap(beam_course_description())
    cfg = FootholdConfig()
    band = edge_band(hmap, cfg.edge_threshold, cfg.edge_margin)
    head, rows = full.table("touchdowns.csv")
    in_band = 0
    for row in rows:
        xy = np.array([float(row[head.index("land_x")]), float(row[head.index("land_y")])])
        i, j, inside = hmap.cell_index(xy)
        in_band += bool(inside and band[i, j])
    cmp = cli.compare(full.dir, qp.dir)
    report = cli.format_comparison(cmp)
    seconds = full.seconds + qp.seconds
    ok = (full.summary["completed"] and in_band == 0 and len(rows) > 0 and seconds < 300
          and "completed: a" in report)
    criterion(10, ok, f"MPC+IC completed {full.summary['completed']}, QP completed "
                      f"{qp.summary['completed']}, {len(rows)} touchdowns, {in_band} in edge bands, "
                      f"{seconds:.1f} s")
    print(report)
    assert ok


# ------------------------------------------------------------------ 11

def test_c11_determinism(runs, criterion):
    a = runs("stand")
    b = runs("stand", tag="-repeat")
    files = ("ticks.csv", "touchdowns.csv", "solves.csv", "summary.json")
    same = {f: (a.dir / f).read_bytes() == (b.dir / f).read_bytes() for f in files}
    ok = all(same.values())
    criterion(11, ok, "repeated stand run: " + ", ".join(f"{f} {'identical' if v else 'DIFFERS'}"
                                                           for f, v in same.items()))
    assert ok


# ------------------------------------------------------------------ 12

def test_c12_performance_budget(criterion):
    hmap = load_heightmap(beam_course_description())
    cfg = FootholdConfig()
    rng = np.random.default_rng(12)
    pts = np.column_stack([rng.uniform(1.0, 4.8, 50), rng.uniform(-0.4, 0.4, 50)])
    choose_foothold(hmap, np.array([2.0, 0.0, 0.0]), SwingGeometry(np.array([1.8, 0.0, 0.0]), 0.12), cfg)
    t0 = time.perf_counter()
    for x, y in pts:
        choose_foothold(hmap, np.array([x, y, 0.0]), SwingGeometry(np.array([x - 0.25, y, 0.0]), 0.12), cfg)
    foothold_ms = 1e3 * (time.perf_counter() - t0) / len(pts)

    gait = GaitParams(0.6, 1.4)
    st = RobotState([0, 0, 0], [0, 0, 0.58], [0, 0, 0], [0.5, 0, 0], SQUARE.copy())
    times = []
    for phase in np.linspace(0, 0.95, 20):
        sched = build_schedule(gait, phase)
        seq = build_contact_sequence(st, sched, flat_heightmap((-2, -2), (6, 4)), gait, SQUARE)
        ref = resample_zoh(anchor_references(st, UserCommand((0.5, 0.0)), sched, seq), 20, sched.span / 20)
        t0 = time.perf_counter()
        plan_forces(st, ref, sched, seq.positions, P, MpcConfig())
        times.append(time.perf_counter() - t0)
    mpc_ms = 1e3 * np.median(times)
    ok = foothold_ms <= 5.0 and mpc_ms <= 40.0
    criterion(12, ok, f"foothold evaluation {foothold_ms:.2f} ms per crop (mean of 50), MPC solve "
                      f"{mpc_ms:.1f} ms (median of 20, max {1e3 * max(times):.1f}) with 240 variables")
    assert ok


# ------------------------------------------------------------------ extra closed-loop checks

def test_stand_regulation_and_vertical_impulse(runs):
    r = runs("stand")
    head, rows = r.table("ticks.csv")
    tab = np.array(rows, dtype=float)
    pos = tab[:, [head.index("pos_x"), head.index("pos_y")]]
    assert np.linalg.norm(pos[-1] - pos[0]) < 0.02
    # vertical impulse per gait cycle, forces held over each 4 ms tick
    cycle = 1 / 1.4
    t = tab[:, 0]
    fz = tab[:, [head.index(f"f{i}_z") for i in range(4)]].sum(axis=1)
    for c in range(2, int(t[-1] / cycle)):
        win = (t >= c * cycle) & (t < (c + 1) * cycle)
        impulse = fz[win].sum() * (1 / 250)
        assert impulse == pytest.approx(MG * win.sum() / 250, rel=0.02)


def test_flat_trot_summary_velocity(runs):
    assert runs("flat_trot").summary["mean_forward_velocity"] == pytest.approx(0.5, abs=0.05)
