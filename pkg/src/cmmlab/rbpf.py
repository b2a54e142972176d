"""Rao-Blackwellized particle filter over GNSS common biases.

Each particle carries one hypothesis of the per-satellite common biases plus
one conditional EKF belief per vehicle. A step predicts biases and beliefs,
gates every pseudo-range, folds gate likelihoods and lane-map mass into the
particle weights (in log space), updates the EKFs with accepted measurements,
and resamples systematically.

The per-particle state lives in stacked arrays so a step is a handful of
vectorized operations; the scalar kernels in filtercore define the reference
semantics and the tests pin the two against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import filtercore as fc
from .exceptions import DegenerateFilterError
from .lanemap import LaneMap, points_in_lane
from .world import MeasurementEpoch, NoiseConfig, SatelliteState


@dataclass
class Particle:
    """One hypothesis: bias vector, per-vehicle beliefs, scalar weight."""

    biases: np.ndarray
    beliefs: list[fc.VehicleBelief]
    weight: float


@dataclass
class Estimate:
    """Weighted-mixture summary of the particle set."""

    vehicle_means: np.ndarray  # (Nv, 6)
    vehicle_covs: np.ndarray   # (Nv, 6, 6)
    bias_mean: np.ndarray      # (Ns,)
    bias_cov: np.ndarray       # (Ns, Ns)


@dataclass
class StepDiagnostics:
    ess: float
    flagged_fraction: np.ndarray   # (Nv, Ns) mean over particles
    lane_mass_mean: np.ndarray     # (Nv,) weight-free mean over particles
    max_log_weight: float
    resampled: bool


@dataclass
class FilterConfig:
    noise: NoiseConfig
    gate: fc.GateConfig
    n_mc_samples: int = 100
    adaptive_resample: bool = False   # default: resample every epoch
    ess_fraction: float = 0.5
    # per-vehicle world-frame acceleration variances (Nv, 2); None means the
    # NoiseConfig values apply to world x/y directly for every vehicle
    accel_world: np.ndarray | None = None


@dataclass
class RbpfState:
    biases: np.ndarray       # (n, Ns)
    means: np.ndarray        # (n, Nv, 6)
    covs: np.ndarray         # (n, Nv, 6, 6)
    log_weights: np.ndarray  # (n,), normalized so logsumexp = 0
    epoch: int = 0
    t: float = 0.0

    @property
    def n_particles(self) -> int:
        return self.biases.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def particles(self) -> list[Particle]:
        w = self.weights
        return [
            Particle(
                biases=self.biases[k].copy(),
                beliefs=[fc.VehicleBelief(self.means[k, i].copy(), self.covs[k, i].copy())
                         for i in range(self.n_vehicles)],
                weight=float(w[k]),
            )
            for k in range(self.n_particles)
        ]


def init(truth_biases: np.ndarray, initial_vehicle_fixes: list[tuple[np.ndarray, np.ndarray]],
         n_particles: int, sigma2_n: float, rng: np.random.Generator) -> RbpfState:
    """Uniform-weight particle set around the given bias truth and vehicle fixes."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if sigma2_n < 0:
        raise ValueError("sigma2_n must be >= 0")
    ns = len(truth_biases)
    nv = len(initial_vehicle_fixes)
    biases = np.asarray(truth_biases, float) + rng.normal(
        0.0, math.sqrt(sigma2_n), size=(n_particles, ns))
    means = np.empty((n_particles, nv, 6))
    covs = np.empty((n_particles, nv, 6, 6))
    for i, (mean, cov) in enumerate(initial_vehicle_fixes):
        means[:, i] = np.asarray(mean, float)
        covs[:, i] = np.asarray(cov, float)
    log_w = np.full(n_particles, -math.log(n_particles))
    return RbpfState(biases=biases, means=means, covs=covs, log_weights=log_w)


def extract_estimate(state: RbpfState) -> Estimate:
    """Mixture mean/covariance of vehicles and biases (law of total variance)."""
    w = state.weights
    vm = np.einsum("n,nvk->vk", w, state.means)
    dev = state.means - vm[None, :, :]
    between = np.einsum("n,nvk,nvl->vkl", w, dev, dev)
    within = np.einsum("n,nvkl->vkl", w, state.covs)
    vcov = between + within
    vcov = 0.5 * (vcov + np.swapaxes(vcov, -1, -2))

    bm = w @ state.biases
    bdev = state.biases - bm[None, :]
    bcov = np.einsum("n,nk,nl->kl", w, bdev, bdev)
    bcov = 0.5 * (bcov + bcov.T)
    return Estimate(vehicle_means=vm, vehicle_covs=vcov, bias_mean=bm, bias_cov=bcov)


def _predict_all(state: RbpfState, dt: float, cfg: FilterConfig) -> None:
    a = fc.transition_matrix(dt)
    state.means = state.means @ a.T
    covs = a @ state.covs @ a.T
    nv = state.n_vehicles
    for i in range(nv):
        noise_i = cfg.noise
        if cfg.accel_world is not None:
            s2x, s2y = cfg.accel_world[i]
            noise_i = replace(cfg.noise, sigma2_ax=float(s2x), sigma2_ay=float(s2y))
        covs[:, i] += fc.process_noise(dt, noise_i)[None, :, :]
    state.covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))


def _lane_mass_batch(lane_map: LaneMap, means_xy: np.ndarray, covs_xy: np.ndarray,
                     normals: np.ndarray) -> np.ndarray:
    """MC lane mass for a batch of 2-D Gaussians; normals is (n, N_m, 2)."""
    a = covs_xy[:, 0, 0]
    c = covs_xy[:, 0, 1]
    b = covs_xy[:, 1, 1]
    l11 = np.sqrt(np.maximum(a, 1e-300))
    l21 = c / l11
    l22 = np.sqrt(np.maximum(b - l21 * l21, 0.0))
    x = means_xy[:, None, 0] + l11[:, None] * normals[:, :, 0]
    y = means_xy[:, None, 1] + l21[:, None] * normals[:, :, 0] + l22[:, None] * normals[:, :, 1]
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    inside = points_in_lane(lane_map, pts).reshape(means_xy.shape[0], -1)
    return inside.mean(axis=1)


def step(state: RbpfState, epoch: MeasurementEpoch, sats: list[SatelliteState],
         lane_map: LaneMap, cfg: FilterConfig, rng: np.random.Generator,
         vehicle_order: list[int] | None = None
         ) -> tuple[RbpfState, Estimate, StepDiagnostics]:
    """Advance the filter by one measurement epoch.

    Random inputs are drawn up front, keyed by (particle, vehicle, satellite),
    so the vehicle processing order cannot change the result. The estimate is
    extracted from the weighted set before resampling.
    """
    dt = epoch.t - state.t
    if dt <= 0:
        raise ValueError("epoch time must advance beyond the state time")
    n, nv, ns = state.n_particles, state.n_vehicles, state.biases.shape[1]
    order = list(range(nv)) if vehicle_order is None else list(vehicle_order)
    if sorted(order) != list(range(nv)):
        raise ValueError("vehicle_order must permute 0..Nv-1")

    sat_by_id = {s.id: s for s in sats}
    sat_ids = sorted(sat_by_id)
    if len(sat_ids) != ns:
        raise ValueError("satellite count does not match the bias dimension")

    # canonical draw order: bias drift, gate uniforms, lane-mass normals, resample
    bias_noise = rng.normal(0.0, math.sqrt(cfg.noise.sigma2_c), size=(n, ns)) * dt
    u_gate = rng.random(size=(n, nv, ns))
    lane_normals = rng.standard_normal(size=(n, nv, cfg.n_mc_samples, 2))
    u_resample = rng.random()

    new = RbpfState(biases=state.biases + bias_noise, means=state.means.copy(),
                    covs=state.covs.copy(), log_weights=state.log_weights.copy(),
                    epoch=state.epoch + 1, t=epoch.t)
    _predict_all(new, dt, cfg)

    log_w = new.log_weights.copy()
    flagged_frac = np.zeros((nv, ns))
    lane_means = np.zeros(nv)
    t1, t2, q3 = cfg.gate.t1, cfg.gate.t2, cfg.gate.flagged_d2
    a1, a2 = cfg.gate.alpha1, cfg.gate.alpha2

    for i in order:
        visible = [j for j in sat_ids if (j, i) in epoch.entries]
        if visible:
            m = len(visible)
            sat_pos = np.stack([sat_by_id[j].position for j in visible])  # (m, 3)
            z = np.array([epoch.entries[(j, i)] for j in visible])
            c_idx = np.array([sat_ids.index(j) for j in visible])

            mean_i = new.means[:, i, :]
            cov_i = new.covs[:, i, :, :]
            px = mean_i[:, 0][:, None] - sat_pos[None, :, 0]
            py = mean_i[:, 2][:, None] - sat_pos[None, :, 1]
            pz = -sat_pos[None, :, 2]
            rho = np.sqrt(px * px + py * py + pz * pz)        # (n, m)
            hx, hy = px / rho, py / rho
            z_pred = rho + new.biases[:, c_idx] + mean_i[:, 4][:, None]

            # gate every satellite against the predicted belief; the test
            # statistic carries the clock-bias uncertainty too (unlike the
            # position-only projection of the scalar kernel), which keeps it
            # calibrated during the initialization transient and after
            # coasting stretches (flagging storms would otherwise never end)
            sxx = cov_i[:, 0, 0][:, None]
            sxy = cov_i[:, 0, 2][:, None]
            syy = cov_i[:, 2, 2][:, None]
            sbb = cov_i[:, 4, 4][:, None]
            sxb = cov_i[:, 0, 4][:, None]
            syb = cov_i[:, 2, 4][:, None]
            p_innov = (hx * hx * sxx + 2.0 * hx * hy * sxy + hy * hy * syy
                       + 2.0 * hx * sxb + 2.0 * hy * syb + sbb + cfg.noise.sigma2_z)
            innov = z[None, :] - z_pred
            d2 = innov ** 2 / p_innov
            ramp = (fc.chi2_cdf_array(d2) - a1) / (a2 - a1)
            u_i = u_gate[:, i, :][:, c_idx]
            flagged = np.where(d2 <= t1, False,
                               np.where(d2 >= t2, True, u_i <= ramp))

            log_w = log_w + np.sum(
                -0.5 * np.log(2.0 * math.pi * p_innov)
                - 0.5 * np.where(flagged, q3, d2), axis=1)
            flagged_frac[i, c_idx] = flagged.mean(axis=0)

            # sequential scalar updates, linearized once at the predicted mean;
            # equals the batch update with the accepted rows
            dm = np.zeros((n, 6))
            h_full = np.zeros((n, 6))
            eye = np.eye(6)[None, :, :]
            for col in range(m):
                accept = ~flagged[:, col]
                if not accept.any():
                    continue
                h_full[:, 0] = hx[:, col]
                h_full[:, 2] = hy[:, col]
                h_full[:, 4] = 1.0
                ch = (cov_i @ h_full[:, :, None])[:, :, 0]
                s = np.einsum("nk,nk->n", h_full, ch) + cfg.noise.sigma2_z
                gain = ch / s[:, None]
                resid = z[col] - z_pred[:, col] - np.einsum("nk,nk->n", h_full, dm)
                dm_step = gain * resid[:, None]
                ikh = eye - gain[:, :, None] * h_full[:, None, :]
                cov_new = ikh @ cov_i @ np.swapaxes(ikh, -1, -2) \
                    + cfg.noise.sigma2_z * gain[:, :, None] * gain[:, None, :]
                cov_new = 0.5 * (cov_new + np.swapaxes(cov_new, -1, -2))
                dm = dm + np.where(accept[:, None], dm_step, 0.0)
                cov_i = np.where(accept[:, None, None], cov_new, cov_i)
            new.means[:, i, :] = mean_i + dm
            new.covs[:, i, :, :] = cov_i

        # lane-map mass of the updated horizontal belief
        mxy = new.means[:, i][:, [0, 2]]
        cxy = new.covs[:, i][:, [0, 2]][:, :, [0, 2]]
        mass = _lane_mass_batch(lane_map, mxy, cxy, lane_normals[:, i])
        lane_means[i] = mass.mean()
        with np.errstate(divide="ignore"):
            log_w = log_w + np.log(mass)

    m = log_w.max()
    if not np.isfinite(m):
        raise DegenerateFilterError(
            "all particles incompatible with measurements and map",
            {"epoch": new.epoch, "t": new.t, "max_log_weight": float(m),
             "lane_mass_mean": lane_means.tolist()})
    w = np.exp(log_w - m)
    w_sum = w.sum()
    w /= w_sum
    with np.errstate(divide="ignore"):
        new.log_weights = np.log(w)

    estimate = extract_estimate(new)

    ess = 1.0 / float(np.sum(w * w))
    do_resample = (not cfg.adaptive_resample) or ess < cfg.ess_fraction * n
    if do_resample:
        idx = fc.systematic_indices(w, u_resample, n)
        new.biases = new.biases[idx]
        new.means = new.means[idx]
        new.covs = new.covs[idx]
        new.log_weights = np.full(n, -math.log(n))

    diags = StepDiagnostics(ess=ess, flagged_fraction=flagged_frac,
                            lane_mass_mean=lane_means, max_log_weight=float(m),
                            resampled=bool(do_resample))
    return new, estimate, diags
