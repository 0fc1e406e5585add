"""Heightmaps, cropping and least-squares terrain planes.

Grid convention: ``elevations[row, col]`` with ``row`` along world y and
``col`` along world x. Cell ``(row, col)`` covers
``[origin + (col, row) * resolution, origin + (col + 1, row + 1) * resolution)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class TerrainError(ValueError):
    """Malformed terrain description or degenerate geometry."""


@dataclass(frozen=True)
class HeightMap:
    """Regular elevation grid. Unknown cells are flagged in ``known``."""

    origin: np.ndarray
    resolution: float
    elevations: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(2)
        elev = np.array(self.elevations, dtype=float)
        known = np.array(self.known, dtype=bool)
        if not self.resolution > 0:
            raise TerrainError(f"resolution must be positive, got {self.resolution}")
        if elev.ndim != 2 or elev.shape[0] < 1 or elev.shape[1] < 1:
            raise TerrainError(f"elevations must be a non-empty 2D grid, got {elev.shape}")
        if known.shape != elev.shape:
            raise TerrainError("known mask does not match elevation grid")
        elev[~known] = 0.0
        elev.flags.writeable = False
        known.flags.writeable = False
        origin.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "elevations", elev)
        object.__setattr__(self, "known", known)

    @property
    def height(self) -> int:
        return self.elevations.shape[0]

    @property
    def width(self) -> int:
        return self.elevations.shape[1]

    @property
    def extent(self) -> np.ndarray:
        """Upper world corner of the grid."""
        return self.origin + self.resolution * np.array([self.width, self.height])

    def cell_index(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Map world points to ``(row, col, inside)``.

        Cells are half-open; a point on the far edge of the grid is assigned
        to the last cell so the closed grid rectangle is fully addressable.
        """
        xy = np.asarray(xy, dtype=float)
        rel = (xy - self.origin) / self.resolution
        col = np.floor(rel[..., 0]).astype(int)
        row = np.floor(rel[..., 1]).astype(int)
        col = np.where(col == self.width, self.width - 1, col)
        row = np.where(row == self.height, self.height - 1, row)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        inside &= (rel[..., 0] <= self.width) & (rel[..., 1] <= self.height)
        return row, col, inside

    def cell_center(self, row, col) -> np.ndarray:
        row = np.asarray(row, dtype=float)
        col = np.asarray(col, dtype=float)
        return self.origin + self.resolution * np.stack([col + 0.5, row + 0.5], axis=-1)

    def lookup(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """Heights and known-flags at world points; outside the grid is unknown."""
        row, col, inside = self.cell_index(xy)
        r = np.clip(row, 0, self.height - 1)
        c = np.clip(col, 0, self.width - 1)
        known = inside & self.known[r, c]
        heights = np.where(known, self.elevations[r, c], np.nan)
        return heights, known

    def height_at(self, xy) -> float:
        """Height of the cell containing ``xy`` (NaN when unknown)."""
        h, _ = self.lookup(np.asarray(xy, dtype=float)[:2])
        return float(h)

    def to_description(self) -> dict:
        elev = np.where(self.known, self.elevations, np.nan)
        return {
            "origin": self.origin.tolist(),
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "elevations": [None if np.isnan(v) else float(v) for v in elev.ravel()],
        }


@dataclass(frozen=True)
class TerrainPlane:
    normal: np.ndarray
    centroid: np.ndarray
    residual: float

    def height_at(self, xy) -> float:
        """Plane height above the world point ``xy``."""
        n, c = self.normal, self.centroid
        return float(c[2] - (n[0] * (xy[0] - c[0]) + n[1] * (xy[1] - c[1])) / n[2])

    def roll_pitch(self, yaw: float = 0.0) -> tuple[float, float]:
        """ZYX roll and pitch that align the body z axis with the normal.

        The normal is expressed in the heading frame first, so the result
        does not depend on the body yaw.
        """
        c, s = np.cos(yaw), np.sin(yaw)
        nx = c * self.normal[0] + s * self.normal[1]
        ny = -s * self.normal[0] + c * self.normal[1]
        nz = self.normal[2]
        roll = -np.arcsin(np.clip(ny, -1.0, 1.0))
        pitch = np.arctan2(nx, nz)
        return float(roll), float(pitch)


def _from_mapping(desc: Mapping) -> HeightMap:
    try:
        origin = np.asarray(desc.get("origin", (0.0, 0.0)), dtype=float)
        resolution = float(desc["resolution"])
        width = int(desc["width"])
        height = int(desc["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TerrainError(f"bad terrain description: {exc}") from exc
    if origin.shape != (2,):
        raise TerrainError("origin must be a 2D point")
    if not resolution > 0:
        raise TerrainError(f"resolution must be positive, got {resolution}")
    if width < 1 or height < 1:
        raise TerrainError(f"grid dimensions must be positive, got {width}x{height}")

    if "elevations" in desc:
        raw = list(desc["elevations"])
        if len(raw) != width * height:
            raise TerrainError(
                f"elevations has {len(raw)} entries, expected {width * height}")
        known = np.array([v is not None for v in raw]).reshape(height, width)
        elev = np.array([0.0 if v is None else float(v) for v in raw]).reshape(height, width)
        known &= np.isfinite(elev)
    else:
        elev = np.full((height, width), float(desc.get("base_height", 0.0)))
        known = np.ones((height, width), dtype=bool)
        centers = origin + resolution * np.stack(
            np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5), axis=-1)
        for box in desc.get("boxes", []):
            lo = np.asarray(box["min"], dtype=float)
            hi = np.asarray(box["max"], dtype=float)
            inside = np.all((centers >= lo) & (centers < hi), axis=-1)
            # overlapping boxes: the tallest wins
            elev[inside] = np.maximum(elev[inside], float(box["height"]))
        for region in desc.get("unknown", []):
            lo = np.asarray(region["min"], dtype=float)
            hi = np.asarray(region["max"], dtype=float)
            known[np.all((centers >= lo) & (centers < hi), axis=-1)] = False
    return HeightMap(origin, resolution, elev, known)


def load_heightmap(source) -> HeightMap:
    """Build a heightmap from a JSON file path, JSON text or a mapping.

    Accepted fields: ``origin``, ``resolution``, ``width``, ``height`` and
    either a dense row-major ``elevations`` list (``null`` = unknown) or a
    list of ``boxes`` (``min``/``max`` xy corners and ``height``) rasterized
    at cell centers on top of ``base_height``.
    """
    if isinstance(source, Mapping):
        return _from_mapping(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise TerrainError(f"cannot read terrain file {path}: {exc}") from exc
    else:
        text = source
    try:
        desc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TerrainError(f"terrain description does not parse: {exc}") from exc
    if not isinstance(desc, Mapping):
        raise TerrainError("terrain description must be a JSON object")
    return _from_mapping(desc)


def flat_heightmap(origin=(-2.0, -2.0), size=(4.0, 4.0), resolution=0.02,
                   height: float = 0.0) -> HeightMap:
    width = int(round(size[0] / resolution))
    rows = int(round(size[1] / resolution))
    return HeightMap(np.asarray(origin, float), resolution,
                     np.full((rows, width), height), np.ones((rows, width), bool))


def beam_course_description(start_x: float = 1.5, beam_width: float = 0.20,
                            half_length: float = 1.0, resolution: float = 0.02,
                            origin=(-1.0, -1.5), size=(7.0, 3.0),
                            heights: Sequence[float] | None = None) -> dict:
    """Fourteen adjacent beams crossing the x axis.

    Beams 1-4 and 11-14 are at ground level, 5-7 and 10 at 0.15 m, beam 8 at
    0.12 m and beam 9 at ground level.
    """
    if heights is None:
        heights = [0.0] * 4 + [0.15] * 3 + [0.12, 0.0, 0.15] + [0.0] * 4
    boxes = []
    for i, h in enumerate(heights):
        if h == 0.0:
            continue
        x0 = start_x + i * beam_width
        boxes.append({"min": [x0, -half_length], "max": [x0 + beam_width, half_length],
                      "height": h})
    return {
        "origin": list(origin),
        "resolution": resolution,
        "width": int(round(size[0] / resolution)),
        "height": int(round(size[1] / resolution)),
        "base_height": 0.0,
        "boxes": boxes,
    }


def crop(hmap: HeightMap, center, half_extent: float) -> HeightMap:
    """Square sub-map centered on the cell containing ``center``.

    The window spans ``round(half_extent / resolution)`` cells on each side
    of the center cell; cells outside the source are unknown.
    """
    if not half_extent > 0:
        raise TerrainError("half_extent must be positive")
    res = hmap.resolution
    k = max(int(round(half_extent / res)), 0)
    rel = (np.asarray(center, dtype=float)[:2] - hmap.origin) / res
    c0 = int(np.floor(rel[0])) - k
    r0 = int(np.floor(rel[1])) - k
    n = 2 * k + 1
    elev = np.zeros((n, n))
    known = np.zeros((n, n), dtype=bool)
    rs, re = max(r0, 0), min(r0 + n, hmap.height)
    cs, ce = max(c0, 0), min(c0 + n, hmap.width)
    if rs < re and cs < ce:
        elev[rs - r0:re - r0, cs - c0:ce - c0] = hmap.elevations[rs:re, cs:ce]
        known[rs - r0:re - r0, cs - c0:ce - c0] = hmap.known[rs:re, cs:ce]
    origin = hmap.origin + res * np.array([c0, r0], dtype=float)
    return HeightMap(origin, res, elev, known)


def discontinuity_segments(hmap: HeightMap, threshold: float) -> np.ndarray:
    """Cell-boundary segments across which the height jumps by ``threshold`` or more.

    Returns an ``(m, 2, 2)`` array of world-frame segment endpoints.
    """
    e, k, res, o = hmap.elevations, hmap.known, hmap.resolution, hmap.origin
    segs = []
    jump_x = (np.abs(np.diff(e, axis=1)) >= threshold) & k[:, 1:] & k[:, :-1]
    for r, c in zip(*np.nonzero(jump_x)):
        x = o[0] + (c + 1) * res
        segs.append(((x, o[1] + r * res), (x, o[1] + (r + 1) * res)))
    jump_y = (np.abs(np.diff(e, axis=0)) >= threshold) & k[1:, :] & k[:-1, :]
    for r, c in zip(*np.nonzero(jump_y)):
        y = o[1] + (r + 1) * res
        segs.append(((o[0] + c * res, y), (o[0] + (c + 1) * res, y)))
    return np.array(segs, dtype=float).reshape(-1, 2, 2)


def distance_to_segments(points, segments) -> np.ndarray:
    """Euclidean distance from each 2D point to the nearest segment (inf if none)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    if len(segments) == 0:
        return np.full(len(pts), np.inf)
    a = segments[:, 0][None]
    b = segments[:, 1][None]
    ab = b - a
    t = np.einsum("psk,psk->ps", pts[:, None] - a, np.broadcast_to(ab, (len(pts),) + ab.shape[1:]))
    t = np.clip(t / np.maximum(np.einsum("psk,psk->ps", ab, ab), 1e-300), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(pts[:, None] - closest, axis=-1).min(axis=1)


def fit_plane(points) -> TerrainPlane:
    """Least-squares plane through at least three non-collinear points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise TerrainError("fit_plane needs at least three 3D points")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    scatter = d.T @ d
    evals, evecs = np.linalg.eigh(scatter)
    scale = max(evals[-1], 1e-300)
    if evals[1] <= 1e-12 * scale or evals[-1] <= 0.0:
        raise TerrainError("points are collinear or coincident; plane is undefined")
    normal = evecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    if normal[2] == 0.0:
        raise TerrainError("plane is vertical")
    normal = normal / np.linalg.norm(normal)
    dist = d @ normal
    return TerrainPlane(normal, centroid, float(np.sqrt(np.mean(dist ** 2))))
