"""Per-vehicle conditional filtering kernels.

Holds the constant-velocity / two-state-clock EKF (prediction and batch
update), the chi-square multipath gate with its probabilistic accept band,
the per-measurement importance-weight factor, and systematic resampling.
All functions are pure; covariances are symmetrized after every operation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

from .exceptions import DegenerateFilterError
from .world import NoiseConfig

CHI2_QUANTILE_ONE = float("inf")  # chi2_quantile(1.0): unbounded upper tail


def chi2_cdf(x: float) -> float:
    """CDF of the chi-square distribution with one degree of freedom."""
    if x < 0:
        raise ValueError("x must be >= 0")
    return math.erf(math.sqrt(x / 2.0))


def chi2_cdf_array(x: np.ndarray) -> np.ndarray:
    """Vectorized chi-square(1) CDF."""
    return _erf(np.sqrt(np.asarray(x, dtype=float) / 2.0))


def chi2_quantile(p: float) -> float:
    """Inverse chi-square(1) CDF by bisection; quantile(1) is +inf."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 1.0:
        return CHI2_QUANTILE_ONE
    if p == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while chi2_cdf(hi) < p:
        hi *= 2.0
    # bisect to floating-point resolution; the CDF slope is unbounded at 0,
    # so interval width alone is not a safe stopping rule
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class VehicleBelief:
    """Gaussian belief over one vehicle: mean (x, vx, y, vy, b, bdot), 6x6 cov."""

    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "VehicleBelief":
        return VehicleBelief(self.mean.copy(), self.cov.copy())

    @property
    def position(self) -> np.ndarray:
        return self.mean[[0, 2]]

    @property
    def position_cov(self) -> np.ndarray:
        return self.cov[np.ix_([0, 2], [0, 2])]


@dataclass(frozen=True)
class GateConfig:
    """Confidence levels of the multipath gate.

    Measurements with squared Mahalanobis distance below the alpha1 quantile
    are accepted as clean; between alpha1 and alpha2 they are flagged with a
    probability that ramps linearly in CDF space; beyond alpha2 they are
    flagged outright. alpha3 sets the flat likelihood used for flagged ones.
    """

    alpha1: float = 0.95
    alpha2: float = 1.0
    alpha3: float = 0.99
    # chi-square(1) quantiles of the alphas, cached at construction
    t1: float = field(init=False, repr=False)
    t2: float = field(init=False, repr=False)
    flagged_d2: float = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha1 < self.alpha2 <= 1.0:
            raise ValueError("need 0 < alpha1 < alpha2 <= 1")
        if not 0.0 < self.alpha3 < 1.0:
            raise ValueError("need 0 < alpha3 < 1")
        object.__setattr__(self, "t1", chi2_quantile(self.alpha1))
        object.__setattr__(self, "t2", chi2_quantile(self.alpha2))
        object.__setattr__(self, "flagged_d2", chi2_quantile(self.alpha3))


@dataclass(frozen=True)
class GateDecision:
    flagged: bool     # True: treated as multipath-corrupted, excluded from update
    d2: float         # squared Mahalanobis distance of the innovation
    p_innov: float    # predicted innovation variance, m^2


def transition_matrix(dt: float) -> np.ndarray:
    """Block-diagonal constant-velocity transition for (x, vx, y, vy, b, bdot)."""
    b = np.array([[1.0, dt], [0.0, 1.0]])
    a = np.zeros((6, 6))
    for k in range(3):
        a[2 * k:2 * k + 2, 2 * k:2 * k + 2] = b
    return a


def process_noise(dt: float, noise: NoiseConfig) -> np.ndarray:
    """White-acceleration blocks for x and y plus the two-state clock block."""
    dt2, dt3, dt4 = dt * dt, dt ** 3, dt ** 4
    wa = np.array([[dt4 / 4.0, dt3 / 2.0], [dt3 / 2.0, dt2]])
    r = np.zeros((6, 6))
    r[0:2, 0:2] = noise.sigma2_ax * wa
    r[2:4, 2:4] = noise.sigma2_ay * wa
    r[4:6, 4:6] = np.array([
        [noise.sigma2_d * dt4 / 4.0 + noise.sigma2_b * dt2, noise.sigma2_d * dt3 / 2.0],
        [noise.sigma2_d * dt3 / 2.0, noise.sigma2_d * dt2],
    ])
    return r


def predict_belief(belief: VehicleBelief, dt: float, noise: NoiseConfig) -> VehicleBelief:
    """Propagate mean and covariance one step ahead."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    a = transition_matrix(dt)
    mean = a @ belief.mean
    cov = a @ belief.cov @ a.T + process_noise(dt, noise)
    return VehicleBelief(mean=mean, cov=0.5 * (cov + cov.T))


def predicted_range(belief: VehicleBelief, sat_position: np.ndarray, c_j: float) -> float:
    """Predicted pseudo-range: geometric range (vehicle z = 0) + common bias + clock."""
    p3 = np.array([belief.mean[0], belief.mean[2], 0.0])
    return float(np.linalg.norm(p3 - sat_position)) + c_j + belief.mean[4]


def range_jacobian_xy(belief: VehicleBelief, sat_position: np.ndarray) -> np.ndarray:
    """d(range)/d(x, y) at the belief mean: horizontal line-of-sight components."""
    p3 = np.array([belief.mean[0], belief.mean[2], 0.0])
    d = p3 - sat_position
    rho = np.linalg.norm(d)
    if rho == 0.0:
        raise ValueError("satellite coincides with vehicle")
    return d[:2] / rho


def gate_measurement(z: float, z_pred: float, belief: VehicleBelief,
                     sat_position: np.ndarray, cfg: GateConfig, u: float,
                     sigma2_z: float) -> GateDecision:
    """Chi-square test of one pseudo-range against the predicted belief.

    The innovation variance projects only the horizontal position uncertainty
    into range space (plus receiver noise); u resolves the probabilistic band.
    """
    h = range_jacobian_xy(belief, sat_position)
    p_innov = float(h @ belief.position_cov @ h) + sigma2_z
    if p_innov <= 0:
        raise ValueError("non-positive innovation variance")
    d2 = (z - z_pred) ** 2 / p_innov
    if d2 <= cfg.t1:
        flagged = False
    elif d2 >= cfg.t2:
        flagged = True
    else:
        flagged = u <= (chi2_cdf(d2) - cfg.alpha1) / (cfg.alpha2 - cfg.alpha1)
    return GateDecision(flagged=bool(flagged), d2=float(d2), p_innov=p_innov)


def weight_factor(decision: GateDecision, cfg: GateConfig) -> float:
    """Importance-weight multiplier for one gated pseudo-range.

    Clean measurements contribute the Gaussian innovation density; flagged
    ones a flat density pinned at the alpha3 quantile, so one factor never
    zeroes a particle outright.
    """
    return math.exp(log_weight_factor(decision, cfg))


def log_weight_factor(decision: GateDecision, cfg: GateConfig) -> float:
    d2 = cfg.flagged_d2 if decision.flagged else decision.d2
    return -0.5 * math.log(2.0 * math.pi * decision.p_innov) - 0.5 * d2


def ekf_update(belief: VehicleBelief, accepted: list[tuple[np.ndarray, float, float]],
               sigma2_z: float) -> VehicleBelief:
    """Batch measurement update with all gate-accepted pseudo-ranges.

    accepted holds (satellite position, measured range, common bias) triples.
    Rows of the stacked Jacobian carry the horizontal line-of-sight components
    in the x and y columns and 1 in the clock-bias column. Uses the Joseph
    form internally; the result matches (I - KH) * cov to high accuracy.
    """
    if not accepted:
        return belief.copy()
    n = len(accepted)
    h = np.zeros((n, 6))
    innov = np.zeros(n)
    for row, (sat_pos, z, c_j) in enumerate(accepted):
        jac = range_jacobian_xy(belief, sat_pos)
        h[row, 0], h[row, 2], h[row, 4] = jac[0], jac[1], 1.0
        innov[row] = z - predicted_range(belief, sat_pos, c_j)
    q = sigma2_z * np.eye(n)
    s = h @ belief.cov @ h.T + q
    gain = np.linalg.solve(s.T, (belief.cov @ h.T).T).T  # cov H^T S^-1
    mean = belief.mean + gain @ innov
    ikh = np.eye(6) - gain @ h
    cov = ikh @ belief.cov @ ikh.T + gain @ q @ gain.T
    return VehicleBelief(mean=mean, cov=0.5 * (cov + cov.T))


def systematic_indices(weights: np.ndarray, u0: float, n: int) -> np.ndarray:
    """Systematic resampling indices from one uniform draw u0 in [0, 1)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise DegenerateFilterError("all particle weights zero or non-finite",
                                    {"weight_sum": float(total)})
    cum = np.cumsum(w) / total
    cum[-1] = 1.0
    points = (u0 + np.arange(n)) / n
    return np.searchsorted(cum, points, side="right").astype(np.int64)


def resample(weights: np.ndarray, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Systematic resampling; expected copy count of index k is n*w_k/sum(w)."""
    w = np.asarray(weights, dtype=float)
    if n is None:
        n = len(w)
    return systematic_indices(w, rng.random(), n)
