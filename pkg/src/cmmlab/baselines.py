"""Comparison methods: per-vehicle GNSS point fix, the static map-matching
correction search, and its Kalman-smoothed variant.

The static method is memoryless: at each epoch it samples candidate 2-D
corrections common to all vehicles, weights each by the product of blurred
lane-map values at the shifted fixes, and applies the weighted-mean
correction. The smoothed variant first runs each vehicle's fixes through a
constant-velocity Kalman filter in position space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import UnderdeterminedFixError
from .lanemap import LaneMap, blurred_weights


@dataclass
class PointFix:
    """Single-epoch least-squares position/clock solution for one vehicle."""

    position: np.ndarray     # (2,) m
    clock_bias: float        # m
    residual_rms: float      # m
    fix_cov: np.ndarray      # (3, 3) for (x, y, b)
    converged: bool


def point_fix(sat_positions: np.ndarray, pseudoranges: np.ndarray,
              sigma2_z: float = 1.0, initial_guess: np.ndarray | None = None,
              tol: float = 1e-6, max_iter: int = 20) -> PointFix:
    """Gauss-Newton solve for (x, y, clock) with vehicle z known to be 0.

    Common biases and multipath are ignored by construction; any error shared
    by every satellite is absorbed into the clock estimate.
    """
    sats = np.atleast_2d(np.asarray(sat_positions, dtype=float))
    z = np.asarray(pseudoranges, dtype=float)
    if len(z) < 3:
        raise UnderdeterminedFixError(
            f"need >= 3 pseudo-ranges for a 2-D + clock fix, got {len(z)}")
    x = np.zeros(3) if initial_guess is None else np.asarray(initial_guess, dtype=float).copy()

    converged = False
    jac = np.zeros((len(z), 3))
    res = np.zeros(len(z))
    for _ in range(max_iter):
        d = np.column_stack([x[0] - sats[:, 0], x[1] - sats[:, 1], -sats[:, 2]])
        rho = np.linalg.norm(d, axis=1)
        res = z - (rho + x[2])
        jac[:, 0] = d[:, 0] / rho
        jac[:, 1] = d[:, 1] / rho
        jac[:, 2] = 1.0
        delta, *_ = np.linalg.lstsq(jac, res, rcond=None)
        x += delta
        if np.linalg.norm(delta) < tol:
            converged = True
            break
    cov = sigma2_z * np.linalg.inv(jac.T @ jac)
    return PointFix(position=x[:2].copy(), clock_bias=float(x[2]),
                    residual_rms=float(np.sqrt(np.mean(res ** 2))),
                    fix_cov=0.5 * (cov + cov.T), converged=converged)


def robust_point_fix(sat_positions: np.ndarray, pseudoranges: np.ndarray,
                     sigma2_z: float = 1.0,
                     initial_guess: np.ndarray | None = None,
                     reject_sigma: float = 2.5,
                     min_kept: int = 4) -> PointFix:
    """Point fix with residual-screened refits, for startup use.

    Iteratively drops the worst measurement while its post-fit residual
    exceeds reject_sigma standard deviations and enough satellites remain.
    The plain fix stays available for methods that must feel multipath.
    """
    sats = np.atleast_2d(np.asarray(sat_positions, dtype=float))
    z = np.asarray(pseudoranges, dtype=float)
    keep = np.ones(len(z), dtype=bool)
    threshold = reject_sigma * math.sqrt(sigma2_z)
    while True:
        fix = point_fix(sats[keep], z[keep], sigma2_z=sigma2_z,
                        initial_guess=initial_guess)
        d = np.column_stack([fix.position[0] - sats[keep, 0],
                             fix.position[1] - sats[keep, 1],
                             -sats[keep, 2]])
        residuals = z[keep] - (np.linalg.norm(d, axis=1) + fix.clock_bias)
        worst = np.argmax(np.abs(residuals))
        if abs(residuals[worst]) <= threshold or keep.sum() <= min_kept:
            return fix
        keep[np.flatnonzero(keep)[worst]] = False


@dataclass
class CorrectionParticleSet:
    corrections: np.ndarray  # (n, 2) m
    weights: np.ndarray      # (n,), normalized unless degenerate


@dataclass
class CmmResult:
    corrected_positions: np.ndarray  # (Nv, 2)
    particle_set: CorrectionParticleSet
    degenerate: bool

    @property
    def correction_cov(self) -> np.ndarray:
        """Weighted sample covariance of the surviving correction cloud."""
        w = self.particle_set.weights
        c = self.particle_set.corrections
        mean = w @ c
        dev = c - mean
        cov = np.einsum("n,nk,nl->kl", w, dev, dev)
        return 0.5 * (cov + cov.T)


def static_cmm_step(fix_positions: np.ndarray, lane_map: LaneMap, n_particles: int,
                    search_radius: float, blur_sigma: float,
                    rng: np.random.Generator) -> CmmResult:
    """One memoryless correction search over a disc of candidate shifts."""
    fixes = np.atleast_2d(np.asarray(fix_positions, dtype=float))
    r = search_radius * np.sqrt(rng.random(n_particles))
    theta = 2.0 * math.pi * rng.random(n_particles)
    corrections = np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    shifted = fixes[None, :, :] + corrections[:, None, :]     # (n, Nv, 2)
    w = blurred_weights(lane_map, shifted.reshape(-1, 2), blur_sigma)
    weights = w.reshape(n_particles, -1).prod(axis=1)

    total = weights.sum()
    if total <= 0.0:
        uniform = np.full(n_particles, 1.0 / n_particles)
        return CmmResult(corrected_positions=fixes.copy(),
                         particle_set=CorrectionParticleSet(corrections, uniform),
                         degenerate=True)
    weights = weights / total
    best = weights @ corrections
    return CmmResult(corrected_positions=fixes + best,
                     particle_set=CorrectionParticleSet(corrections, weights),
                     degenerate=False)


class PositionSmoother:
    """Constant-velocity Kalman filter over one vehicle's fix stream."""

    def __init__(self, first_fix: PointFix, dt: float, sigma2_a: float,
                 velocity_var: float = 100.0):
        self.dt = dt
        self.sigma2_a = sigma2_a
        self.mean = np.array([first_fix.position[0], 0.0, first_fix.position[1], 0.0])
        self.cov = np.diag([first_fix.fix_cov[0, 0], velocity_var,
                            first_fix.fix_cov[1, 1], velocity_var])

    def step(self, fix: PointFix) -> tuple[np.ndarray, np.ndarray]:
        """Predict and update with one fix; returns (position, position cov)."""
        dt = self.dt
        a = np.eye(4)
        a[0, 1] = a[2, 3] = dt
        wa = self.sigma2_a * np.array([[dt ** 4 / 4.0, dt ** 3 / 2.0],
                                       [dt ** 3 / 2.0, dt ** 2]])
        q = np.zeros((4, 4))
        q[0:2, 0:2] = wa
        q[2:4, 2:4] = wa
        mean = a @ self.mean
        cov = a @ self.cov @ a.T + q

        h = np.zeros((2, 4))
        h[0, 0] = h[1, 2] = 1.0
        r = fix.fix_cov[:2, :2]
        s = h @ cov @ h.T + r
        k = np.linalg.solve(s.T, (cov @ h.T).T).T
        innov = fix.position - h @ mean
        self.mean = mean + k @ innov
        ikh = np.eye(4) - k @ h
        cov = ikh @ cov @ ikh.T + k @ r @ k.T
        self.cov = 0.5 * (cov + cov.T)
        return self.mean[[0, 2]].copy(), self.cov[np.ix_([0, 2], [0, 2])].copy()


class SmoothedStaticTracker:
    """Per-vehicle position smoothing feeding the static correction search."""

    def __init__(self, first_fixes: list[PointFix], dt: float, sigma2_a: float):
        self.smoothers = [PositionSmoother(f, dt, sigma2_a) for f in first_fixes]

    def step(self, fixes: list[PointFix], lane_map: LaneMap, n_particles: int,
             search_radius: float, blur_sigma: float,
             rng: np.random.Generator) -> tuple[CmmResult, np.ndarray, np.ndarray]:
        """Smooth each fix, then run the correction search on smoothed positions.

        Returns (cmm result, smoothed positions (Nv,2), position covs (Nv,2,2)).
        """
        smoothed = np.empty((len(fixes), 2))
        pos_covs = np.empty((len(fixes), 2, 2))
        for i, fix in enumerate(fixes):
            smoothed[i], pos_covs[i] = self.smoothers[i].step(fix)
        result = static_cmm_step(smoothed, lane_map, n_particles,
                                 search_radius, blur_sigma, rng)
        return result, smoothed, pos_covs


def estimate_common_biases(epoch_entries: dict[tuple[int, int], float],
                           sat_positions: dict[int, np.ndarray],
                           corrected_positions: np.ndarray,
                           anchor_mean: float) -> tuple[np.ndarray, np.ndarray]:
    """Measurement-space common-bias estimate for the baseline methods.

    Per satellite, averages z - range(corrected position) over vehicles; the
    satellite-mean level (which is indistinguishable from the vehicle clocks)
    is pinned to anchor_mean, the mean of the noisy initial bias knowledge
    that the particle filter also receives. Returns (estimate, per-satellite
    spread across vehicles).
    """
    sat_ids = sorted(sat_positions)
    veh_ids = sorted({i for _, i in epoch_entries})
    resid = np.empty((len(sat_ids), len(veh_ids)))
    for a, j in enumerate(sat_ids):
        for b, i in enumerate(veh_ids):
            p = corrected_positions[b]
            d = np.array([p[0], p[1], 0.0]) - sat_positions[j]
            resid[a, b] = epoch_entries[(j, i)] - np.linalg.norm(d)
    per_sat = resid.mean(axis=1)
    estimate = per_sat - (per_sat.mean() - anchor_mean)
    centered = resid - resid.mean(axis=0, keepdims=True)
    spread = centered.std(axis=1, ddof=1) if len(veh_ids) > 1 else np.zeros(len(sat_ids))
    return estimate, spread
