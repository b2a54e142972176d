"""Lane-corridor road map and the probability queries the filters need.

A lane is a centerline polyline with a constant width. Membership means the
point projects onto some segment (within its longitudinal extent) with
lateral offset at most half the width. The blurred variant convolves the
lane indicator with an isotropic Gaussian, closed form per straight segment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr as _phi  # standard normal CDF, vectorized


@dataclass(frozen=True)
class Lane:
    centerline: np.ndarray  # (P, 2) meters
    width: float

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        if self.width <= 0:
            raise ValueError("lane width must be > 0")
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("centerline needs at least two 2-D points")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0.0):
            raise ValueError("centerline points must be distinct")
        object.__setattr__(self, "centerline", pts)


@dataclass
class LaneMap:
    lanes: list[Lane]
    # flattened segment arrays, built once for vectorized queries
    _starts: np.ndarray = field(init=False, repr=False)
    _units: np.ndarray = field(init=False, repr=False)
    _lengths: np.ndarray = field(init=False, repr=False)
    _halfwidths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lanes:
            raise ValueError("lane map must contain at least one lane")
        starts, units, lengths, halfw = [], [], [], []
        for lane in self.lanes:
            pts = lane.centerline
            seg = np.diff(pts, axis=0)
            ln = np.linalg.norm(seg, axis=1)
            starts.append(pts[:-1])
            units.append(seg / ln[:, None])
            lengths.append(ln)
            halfw.append(np.full(len(ln), lane.width / 2.0))
        self._starts = np.concatenate(starts)
        self._units = np.concatenate(units)
        self._lengths = np.concatenate(lengths)
        self._halfwidths = np.concatenate(halfw)


def points_in_lane(lane_map: LaneMap, points: np.ndarray) -> np.ndarray:
    """Vectorized membership test for an (N, 2) array of points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    px, py = p[:, 0], p[:, 1]
    inside = np.zeros(len(p), dtype=bool)
    for s in range(len(lane_map._lengths)):
        sx, sy = lane_map._starts[s]
        ux, uy = lane_map._units[s]
        rx = px - sx
        ry = py - sy
        t = rx * ux + ry * uy
        lat = np.abs(rx * uy - ry * ux)
        inside |= (t >= 0.0) & (t <= lane_map._lengths[s]) & (lat <= lane_map._halfwidths[s])
    return inside


def in_lane(lane_map: LaneMap, point) -> bool:
    return bool(points_in_lane(lane_map, np.asarray(point, dtype=float))[0])


def lane_mass_from_normals(lane_map: LaneMap, mean: np.ndarray, cov: np.ndarray,
                           normals: np.ndarray) -> float:
    """Monte Carlo lane mass with externally supplied standard-normal draws."""
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    samples = np.asarray(mean, dtype=float) + normals @ chol.T
    return float(points_in_lane(lane_map, samples).mean())


def lane_mass(lane_map: LaneMap, mean: np.ndarray, cov: np.ndarray,
              n_samples: int, rng: np.random.Generator) -> float:
    """Probability mass of N(mean, cov) inside the lanes, by MC integration.

    Raises numpy.linalg.LinAlgError if cov is not symmetric positive definite.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    normals = rng.standard_normal(size=(n_samples, 2))
    return lane_mass_from_normals(lane_map, mean, cov, normals)


def blurred_weights(lane_map: LaneMap, points: np.ndarray, blur_sigma: float) -> np.ndarray:
    """Lane indicator convolved with an isotropic Gaussian, at each point.

    Per segment the convolution separates into lateral and longitudinal
    1-D box convolutions (each a difference of normal CDFs); the map value
    is the maximum over segments.
    """
    if blur_sigma <= 0:
        raise ValueError("blur_sigma must be > 0")
    p = np.atleast_2d(np.asarray(points, dtype=float))
    rel = p[:, None, :] - lane_map._starts[None, :, :]
    t = np.einsum("nsk,sk->ns", rel, lane_map._units)
    lat = np.abs(rel[:, :, 0] * lane_map._units[:, 1] - rel[:, :, 1] * lane_map._units[:, 0])
    h = lane_map._halfwidths[None, :]
    lateral = _phi((h - lat) / blur_sigma) + _phi((h + lat) / blur_sigma) - 1.0
    longitudinal = _phi((lane_map._lengths[None, :] - t) / blur_sigma) + _phi(t / blur_sigma) - 1.0
    w = np.clip(lateral, 0.0, 1.0) * np.clip(longitudinal, 0.0, 1.0)
    return w.max(axis=1)


def blurred_weight(lane_map: LaneMap, point, blur_sigma: float) -> float:
    return float(blurred_weights(lane_map, np.asarray(point, dtype=float), blur_sigma)[0])


def load_lane_map(path: str | Path) -> LaneMap:
    """Read a map file: one lane per line, "width x1 y1 x2 y2 ..." in meters."""
    lanes = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) < 5 or len(vals) % 2 == 0:
            raise ValueError(
                f"{path}:{lineno}: expected 'width x1 y1 x2 y2 ...' with >= 2 points"
            )
        width, coords = vals[0], np.array(vals[1:], dtype=float).reshape(-1, 2)
        lanes.append(Lane(centerline=coords, width=width))
    return LaneMap(lanes=lanes)


def save_lane_map(lane_map: LaneMap, path: str | Path) -> None:
    lines = []
    for lane in lane_map.lanes:
        coords = " ".join(f"{v:.6f}" for v in lane.centerline.ravel())
        lines.append(f"{lane.width:.6f} {coords}")
    Path(path).write_text("\n".join(lines) + "\n")
