"""Foothold prediction, heightmap-based foothold evaluation and contact sequences.

The evaluator scores every cell of a cropped heightmap around the nominal
foothold: swing-path collision, local roughness and distance from the
nominal, with hard rejection of unknown cells, unreachable cells and cells
closer than a margin to a height discontinuity. It is an exhaustive search,
so its choice is optimal for the cost by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .gait import ContactSchedule, GaitParams
from .terrain import HeightMap, crop


class NoSafeFoothold(RuntimeError):
    def __init__(self, message, leg=None, kappa=None):
        super().__init__(message)
        self.leg = leg
        self.kappa = kappa


@dataclass(frozen=True)
class FootholdConfig:
    half_extent: float = 0.30
    w_collision: float = 1.0
    w_roughness: float = 1.0
    w_adjust: float = 0.25
    edge_margin: float = 0.04
    edge_threshold: float = 0.05
    reach_radius: float = 0.40
    swing_height: float = 0.12
    path_samples: int = 16


@dataclass(frozen=True)
class FootholdPrediction:
    leg: int
    position: np.ndarray
    dt: float
    ellipse_center: np.ndarray
    step_length: np.ndarray


def predict_foothold(leg: int, ellipse_center, step_length, dt: float,
                     base_velocity) -> FootholdPrediction:
    """``p = center + step_length / 2 + dt * base_velocity``."""
    if dt < 0:
        raise ValueError(f"time to stance change must be nonnegative, got {dt}")
    c = np.asarray(ellipse_center, dtype=float)
    ls = np.asarray(step_length, dtype=float)
    p = c + 0.5 * ls + dt * np.asarray(base_velocity, dtype=float)
    return FootholdPrediction(leg, p, float(dt), c, ls)


@dataclass(frozen=True)
class SwingGeometry:
    """Lift-off point, apex height above the chord and reachable disc."""

    origin: np.ndarray
    apex_height: float = 0.12
    reach_center: np.ndarray | None = None
    reach_radius: float = np.inf


@dataclass
class FootholdChoice:
    cell: tuple
    offset: np.ndarray       # chosen minus nominal cell center (xy)
    cost: float
    costs: np.ndarray        # inf where rejected
    rejected: np.ndarray
    height: float

    def to_csv(self, path) -> None:
        np.savetxt(Path(path), self.costs, delimiter=",", fmt="%.9g")


@lru_cache(maxsize=32)
def _band_offsets(margin_cells: float):
    """Offsets (dr, dc) from a cell to vertical / horizontal boundary segments
    whose distance to the cell square is below the margin."""
    reach = int(np.ceil(margin_cells)) + 2
    vert, horiz = [], []
    for b in range(-reach, reach + 1):
        for a in range(-reach, reach + 1):
            # vertical segment between columns j+a and j+a+1 in row i+b
            dx = max(0, a, -a - 1)
            dy = max(0, b - 1, -b - 1)
            if np.hypot(dx, dy) < margin_cells:
                vert.append((b, a))
            # horizontal segment between rows i+b and i+b+1 in column j+a
            dx = max(0, a - 1, -a - 1)
            dy = max(0, b, -b - 1)
            if np.hypot(dx, dy) < margin_cells:
                horiz.append((b, a))
    return tuple(vert), tuple(horiz)


def _shift_or(mask, src, dr, dc):
    """mask[i, j] |= src[i + dr, j + dc] where defined."""
    n0, n1 = mask.shape
    s0, s1 = src.shape
    i0, i1 = max(0, -dr), min(n0, s0 - dr)
    j0, j1 = max(0, -dc), min(n1, s1 - dc)
    if i0 < i1 and j0 < j1:
        mask[i0:i1, j0:j1] |= src[i0 + dr:i1 + dr, j0 + dc:j1 + dc]


def edge_band(hmap: HeightMap, threshold: float, margin: float) -> np.ndarray:
    """Cells whose square comes closer than ``margin`` to a discontinuity.

    Boundaries between known cells with a height jump of at least
    ``threshold`` and boundaries between known and unknown cells count as
    discontinuities.
    """
    e, k = hmap.elevations, hmap.known
    jump_x = (k[:, 1:] != k[:, :-1]) | (k[:, 1:] & k[:, :-1] & (np.abs(np.diff(e, axis=1)) >= threshold))
    jump_y = (k[1:, :] != k[:-1, :]) | (k[1:, :] & k[:-1, :] & (np.abs(np.diff(e, axis=0)) >= threshold))
    band = np.zeros(e.shape, dtype=bool)
    if margin <= 0:
        return band
    vert, horiz = _band_offsets(margin / hmap.resolution)
    for dr, dc in vert:
        _shift_or(band, jump_x, dr, dc)
    for dr, dc in horiz:
        _shift_or(band, jump_y, dr, dc)
    return band


def _roughness(hmap: HeightMap) -> np.ndarray:
    e = np.where(hmap.known, hmap.elevations, np.nan)
    p = np.pad(e, 1, constant_values=np.nan)
    n0, n1 = e.shape
    stack = np.stack([p[i:i + n0, j:j + n1] for i in range(3) for j in range(3)])
    cnt = np.sum(~np.isnan(stack), axis=0)
    mean = np.nansum(stack, axis=0) / np.maximum(cnt, 1)
    var = np.nansum((stack - mean) ** 2, axis=0) / np.maximum(cnt, 1)
    return np.sqrt(var)


def evaluate_foothold(hmap: HeightMap, nominal_cell, swing: SwingGeometry,
                      config: FootholdConfig = FootholdConfig()) -> FootholdChoice:
    """Exhaustively score every cell of ``hmap`` (a crop) and pick the best.

    Raises ``NoSafeFoothold`` when every cell is rejected.
    """
    nr, nc = int(nominal_cell[0]), int(nominal_cell[1])
    if not (0 <= nr < hmap.height and 0 <= nc < hmap.width):
        raise ValueError(f"nominal cell {nominal_cell} outside the crop")
    res = hmap.resolution
    rows, cols = np.meshgrid(np.arange(hmap.height), np.arange(hmap.width), indexing="ij")
    centers = hmap.cell_center(rows, cols)
    nominal_xy = hmap.cell_center(nr, nc)

    rejected = ~hmap.known
    rejected |= edge_band(hmap, config.edge_threshold, config.edge_margin)
    if swing.reach_center is not None and np.isfinite(swing.reach_radius):
        rc = np.asarray(swing.reach_center, dtype=float)[:2]
        rejected |= np.linalg.norm(centers - rc, axis=-1) > swing.reach_radius

    # final approach of the half-ellipse from the lift-off point to each cell
    o = np.asarray(swing.origin, dtype=float)
    z_target = hmap.elevations
    gam = np.linspace(0.5 * np.pi, np.pi, config.path_samples + 1)[:-1]
    w = 0.5 * (1.0 - np.cos(gam))
    path_xy = o[:2] + (centers[None] - o[:2]) * w[:, None, None, None]
    path_z = o[2] + (z_target[None] - o[2]) * w[:, None, None] + swing.apex_height * np.sin(gam)[:, None, None]
    terrain_z, seen = hmap.lookup(path_xy)
    hit = seen & (terrain_z > path_z + 1e-9)
    collision = np.any(hit, axis=0).astype(float)

    dist = np.linalg.norm(centers - nominal_xy, axis=-1)
    costs = (config.w_collision * collision + config.w_roughness * _roughness(hmap)
             + config.w_adjust * dist)
    costs = np.where(rejected, np.inf, costs)
    flat = int(np.argmin(costs))
    if not np.isfinite(costs.flat[flat]):
        raise NoSafeFoothold("no safe foothold in crop")
    r, c = divmod(flat, hmap.width)
    offset = res * np.array([c - nc, r - nr], dtype=float)
    return FootholdChoice((r, c), offset, float(costs[r, c]), costs, rejected,
                          float(hmap.elevations[r, c]))


def choose_foothold(hmap: HeightMap, nominal, swing: SwingGeometry,
                    config: FootholdConfig = FootholdConfig()):
    """Crop around a nominal world point, evaluate, and return the adjusted foothold.

    Returns ``(position, choice)``; the position keeps the sub-cell part of
    the nominal and takes its height from the chosen cell.
    """
    sub = crop(hmap, nominal[:2], config.half_extent)
    k = (sub.height - 1) // 2
    choice = evaluate_foothold(sub, (k, k), swing, config)
    xy = np.asarray(nominal, dtype=float)[:2] + choice.offset
    return np.array([xy[0], xy[1], choice.height]), choice


@dataclass
class ContactSequence:
    """Contact location of every leg after every stance change."""

    positions: np.ndarray      # (K + 1, l, 3)
    scores: np.ndarray         # (K + 1, l); nan where not re-evaluated
    adjustments: np.ndarray    # (K + 1, l, 3)
    predictions: dict = field(default_factory=dict)   # kappa -> FootholdPrediction

    @property
    def touchdown_count(self) -> int:
        return len(self.predictions)


def hip_positions(state, hips) -> np.ndarray:
    """World positions of the hips (base-frame offsets ``hips``)."""
    return state.position + np.asarray(hips) @ state.rotation.T


def build_contact_sequence(state, schedule: ContactSchedule, hmap: HeightMap,
                           gait: GaitParams, hips, config: FootholdConfig = FootholdConfig(),
                           step_length=None, choices: dict | None = None) -> ContactSequence:
    """Predict and adjust every touchdown of the next two gait cycles.

    ``state.feet`` holds the current contacts (the lift-off points for legs
    in swing). The step length defaults to the planar base velocity times
    the stance duration.
    """
    v = np.array([state.velocity[0], state.velocity[1], 0.0])
    if step_length is None:
        step_length = v * gait.stance_duration
    step_length = np.asarray(step_length, dtype=float).copy()
    step_length[2] = 0.0
    hip_now = hip_positions(state, hips)
    n_ev = len(schedule.times)
    l = gait.legs
    positions = np.empty((n_ev, l, 3))
    positions[0] = state.feet
    scores = np.full((n_ev, l), np.nan)
    adjust = np.zeros((n_ev, l, 3))
    predictions = {}
    for kappa in range(1, n_ev):
        positions[kappa] = positions[kappa - 1]
        if not schedule.touchdown[kappa]:
            continue
        leg = int(schedule.legs[kappa])
        dt = float(schedule.times[kappa])
        center = np.array([hip_now[leg, 0], hip_now[leg, 1], 0.0])
        pred = predict_foothold(leg, center, step_length, dt, v)
        swing = SwingGeometry(positions[kappa - 1, leg], config.swing_height,
                              center[:2] + dt * v[:2], config.reach_radius)
        try:
            pos, choice = choose_foothold(hmap, pred.position, swing, config)
        except NoSafeFoothold as exc:
            raise NoSafeFoothold(f"no safe foothold for leg {leg} at stance change {kappa}",
                                 leg, kappa) from exc
        positions[kappa, leg] = pos
        scores[kappa, leg] = choice.cost
        adjust[kappa, leg, :2] = choice.offset
        adjust[kappa, leg, 2] = pos[2] - pred.position[2]
        predictions[kappa] = pred
        if choices is not None:
            choices[kappa] = choice
    return ContactSequence(positions, scores, adjust, predictions)
