import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from terrain_mpc.foothold import (FootholdConfig, NoSafeFoothold, SwingGeometry,
                                  build_contact_sequence, choose_foothold, edge_band,
                                  evaluate_foothold, predict_foothold)
from terrain_mpc.gait import GaitParams, build_schedule
from terrain_mpc.model import RobotState
from terrain_mpc.terrain import (HeightMap, beam_course_description, crop,
                                 discontinuity_segments, distance_to_segments, flat_heightmap,
                                 load_heightmap)

HIPS = np.array([[0.44, 0.30, 0.0], [0.44, -0.30, 0.0], [-0.44, 0.30, 0.0], [-0.44, -0.30, 0.0]])
TROT = GaitParams(0.6, 1.4)


def test_prediction_half_step():
    p = predict_foothold(0, (0, 0, 0), (0.2, 0, 0), 0.0, (0, 0, 0))
    np.testing.assert_allclose(p.position, [0.1, 0, 0])


def test_prediction_velocity_term():
    # 0.5 m/s over the 0.2857 s swing
    p = predict_foothold(0, (1, 0, 0), (0, 0, 0), 0.2857, (0.5, 0, 0))
    np.testing.assert_allclose(p.position, [1.14285, 0, 0], atol=1e-12)


def test_prediction_zero_velocity_ignores_dt():
    a = predict_foothold(1, (0.3, -0.2, 0), (0.1, 0, 0), 0.1, (0, 0, 0))
    b = predict_foothold(1, (0.3, -0.2, 0), (0.1, 0, 0), 5.0, (0, 0, 0))
    np.testing.assert_array_equal(a.position, b.position)


def test_prediction_negative_dt():
    with pytest.raises(ValueError):
        predict_foothold(0, (0, 0, 0), (0, 0, 0), -0.1, (0, 0, 0))


def _swing(origin=(0.0, 0.0, 0.0)):
    return SwingGeometry(np.asarray(origin, float), 0.12)


def test_flat_keeps_nominal():
    m = crop(flat_heightmap((-1, -1), (2, 2)), (0.31, 0.05), 0.3)
    k = (m.height - 1) // 2
    ch = evaluate_foothold(m, (k, k), _swing((0.1, 0.05, 0.0)))
    assert ch.cell == (k, k)
    np.testing.assert_array_equal(ch.offset, 0.0)


def test_near_edge_moves_off_band():
    hmap = load_heightmap(beam_course_description())
    cfg = FootholdConfig()
    nominal = np.array([2.29, 0.0, 0.0])        # 1 cm before the first raised beam
    pos, ch = choose_foothold(hmap, nominal, _swing((2.0, 0.0, 0.0)), cfg)
    segs = discontinuity_segments(hmap, cfg.edge_threshold)
    r, c, _ = hmap.cell_index(pos[:2])
    center = hmap.cell_center(r, c)
    # the whole chosen cell keeps the margin from every edge
    half = 0.5 * hmap.resolution
    corners = center + np.array([[-half, -half], [half, -half], [-half, half], [half, half]])
    assert distance_to_segments(corners, segs).min() >= cfg.edge_margin - 1e-9
    assert np.all(np.abs(ch.offset) <= cfg.half_extent + 1e-12)
    assert np.linalg.norm(ch.offset) > 0


def test_all_unknown():
    m = HeightMap((0, 0), 0.02, np.zeros((5, 5)), np.zeros((5, 5), bool))
    with pytest.raises(NoSafeFoothold):
        evaluate_foothold(m, (2, 2), _swing())


def test_nominal_outside_crop():
    m = flat_heightmap((0, 0), (0.1, 0.1))
    with pytest.raises(ValueError):
        evaluate_foothold(m, (10, 0), _swing())


def _random_terrain(rng, n=31, res=0.02):
    elev = np.round(rng.random((n, n)) * 3) * 0.06 * (rng.random((n, n)) < 0.3)
    known = rng.random((n, n)) > 0.05
    return HeightMap((0.0, 0.0), res, elev, known)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_choice_is_minimal(seed):
    rng = np.random.default_rng(seed)
    m = _random_terrain(rng)
    k = 15
    try:
        ch = evaluate_foothold(m, (k, k), _swing((0.1, 0.3, 0.0)))
    except NoSafeFoothold:
        return
    ok = np.isfinite(ch.costs)
    assert ch.cost <= ch.costs[ok].min()
    # lowest row-major index among the minimal cells
    first = np.flatnonzero(ch.costs.ravel() == ch.costs[ok].min())[0]
    assert divmod(first, m.width) == ch.cell


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(-20, 20), st.integers(-20, 20))
def test_translation_invariance(seed, di, dj):
    rng = np.random.default_rng(seed)
    m = _random_terrain(rng)
    shift = np.array([di, dj]) * m.resolution
    moved = HeightMap(m.origin + shift, m.resolution, m.elevations, m.known)
    sw = _swing((0.1, 0.3, 0.0))
    sw2 = _swing((0.1 + shift[0], 0.3 + shift[1], 0.0))
    try:
        a = evaluate_foothold(m, (15, 15), sw)
    except NoSafeFoothold:
        with pytest.raises(NoSafeFoothold):
            evaluate_foothold(moved, (15, 15), sw2)
        return
    b = evaluate_foothold(moved, (15, 15), sw2)
    assert a.cell == b.cell
    np.testing.assert_allclose(a.costs, b.costs, atol=1e-12)


def test_collision_rejects_path_over_wall():
    # a tall wall between the lift-off point and the far side of the crop
    n = 31
    elev = np.zeros((n, n))
    elev[:, 18:20] = 0.5
    m = HeightMap((0.0, 0.0), 0.02, elev, np.ones((n, n), bool))
    ch = evaluate_foothold(m, (15, 25), _swing((0.05, 0.31, 0.0)))
    # landing beyond the wall is costlier than staying in front of it
    assert ch.cell[1] < 18


def _state(v=(0.0, 0.0, 0.0), xy=(0.0, 0.0)):
    feet = np.array([[xy[0] + h[0], xy[1] + h[1], 0.0] for h in HIPS])
    return RobotState([0, 0, 0], [xy[0], xy[1], 0.58], [0, 0, 0], v, feet)


def test_sequence_spacing_flat():
    # 0.4 m/s at 1.4 Hz gives touchdowns of one leg 0.2857 m apart
    hmap = flat_heightmap((-2, -2), (6, 4))
    sched = build_schedule(TROT, 0.0)
    seq = build_contact_sequence(_state((0.4, 0, 0)), sched, hmap, TROT, HIPS)
    assert seq.touchdown_count == 8
    for leg in range(4):
        ks = [k for k in sched.touchdowns() if sched.legs[k] == leg]
        d = np.diff(seq.positions[ks, leg, 0])
        # positions are snapped to cells, so spacing holds to one cell
        np.testing.assert_allclose(d, 0.4 / 1.4, atol=0.02 + 1e-9)


def test_sequence_stationary():
    hmap = flat_heightmap((-2, -2), (4, 4))
    st0 = _state()
    sched = build_schedule(TROT, 0.3)
    seq = build_contact_sequence(st0, sched, hmap, TROT, HIPS)
    for k in range(len(sched.times)):
        np.testing.assert_allclose(seq.positions[k], st0.feet, atol=1e-12)
    # fixed point: starting from the resulting stance changes nothing
    st1 = _state()
    st1.feet = seq.positions[-1].copy()
    seq2 = build_contact_sequence(st1, sched, hmap, TROT, HIPS)
    np.testing.assert_allclose(seq2.positions, seq.positions, atol=0.02)


def test_sequence_holds_non_touchdown_entries():
    hmap = flat_heightmap((-2, -2), (6, 4))
    sched = build_schedule(TROT, 0.2)
    seq = build_contact_sequence(_state((0.3, 0.1, 0)), sched, hmap, TROT, HIPS)
    for k in range(1, len(sched.times)):
        changed = np.any(seq.positions[k] != seq.positions[k - 1], axis=1)
        if not sched.touchdown[k]:
            assert not changed.any()
        else:
            assert not np.delete(changed, sched.legs[k]).any()


def test_sequence_on_beams_respects_margin():
    hmap = load_heightmap(beam_course_description())
    cfg = FootholdConfig()
    band = edge_band(hmap, cfg.edge_threshold, cfg.edge_margin)
    rng = np.random.default_rng(3)
    for x in rng.uniform(1.0, 4.5, 12):
        sched = build_schedule(TROT, float(rng.random()))
        seq = build_contact_sequence(_state((0.4, 0, 0), (x, 0.0)), sched, hmap, TROT, HIPS, cfg)
        for k in sched.touchdowns():
            p = seq.positions[k, sched.legs[k]]
            r, c, _ = hmap.cell_index(p[:2])
            assert not band[r, c]
            assert np.all(np.abs(seq.adjustments[k, sched.legs[k], :2]) <= cfg.half_extent + 1e-12)


def test_no_safe_foothold_names_leg():
    hmap = HeightMap((-5, -5), 0.02, np.zeros((10, 10)), np.zeros((10, 10), bool))
    sched = build_schedule(TROT, 0.0)
    with pytest.raises(NoSafeFoothold) as exc:
        build_contact_sequence(_state(), sched, hmap, TROT, HIPS)
    assert exc.value.leg is not None and exc.value.kappa is not None


def test_score_grid_csv(tmp_path):
    m = crop(flat_heightmap((-1, -1), (2, 2)), (0.0, 0.0), 0.1)
    ch = evaluate_foothold(m, (5, 5), _swing())
    ch.to_csv(tmp_path / "s.csv")
    back = np.loadtxt(tmp_path / "s.csv", delimiter=",")
    np.testing.assert_allclose(back, ch.costs, rtol=1e-8)


def test_evaluation_budget():
    hmap = load_heightmap(beam_course_description())
    nominal = np.array([2.29, 0.1, 0.0])
    sw = _swing((2.0, 0.1, 0.0))
    choose_foothold(hmap, nominal, sw)
    t0 = time.perf_counter()
    for _ in range(20):
        choose_foothold(hmap, nominal, sw)
    assert (time.perf_counter() - t0) / 20 < 5e-3
