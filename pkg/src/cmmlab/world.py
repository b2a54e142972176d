"""Synthetic GNSS world: constellation, common biases, vehicle truth, pseudo-ranges.

Everything here is a pure function of its inputs and an explicit RNG stream,
so a fixed seed reproduces a measurement stream bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

VISIBILITY_MASK_DEG = 10.0


@dataclass(frozen=True)
class SatelliteState:
    """One satellite at one epoch, position in the local ENU frame (meters)."""

    id: int
    position: np.ndarray


@dataclass(frozen=True)
class ConstellationConfig:
    """Circular-arc constellation: fixed elevations, azimuths advancing at a
    common angular rate."""

    count: int
    elevations_deg: tuple[float, ...]
    azimuths_deg: tuple[float, ...]
    radius_m: float = 2.2e7
    angular_rate: float = 7.3e-5  # rad/s, azimuthal
    mask_deg: float = VISIBILITY_MASK_DEG

    def __post_init__(self):
        if self.count < 3:
            raise ConfigurationError(
                f"need at least 3 visible satellites for a 2-D + clock fix, got {self.count}"
            )
        if len(self.elevations_deg) != self.count or len(self.azimuths_deg) != self.count:
            raise ConfigurationError("elevation/azimuth lists must match satellite count")
        visible = sum(1 for e in self.elevations_deg if e >= self.mask_deg)
        if visible < 3:
            raise ConfigurationError(
                f"only {visible} satellites above the {self.mask_deg} deg mask"
            )
        if any(e < self.mask_deg for e in self.elevations_deg):
            raise ConfigurationError("all configured satellites must clear the elevation mask")
        if not (2.0e7 <= self.radius_m <= 2.6e7):
            raise ConfigurationError("orbital radius outside the 2.0e7..2.6e7 m envelope")


@dataclass(frozen=True)
class NoiseConfig:
    """Variances for every stochastic channel in the world and the filters.

    sigma2_ax is the along-lane acceleration variance and sigma2_ay the
    transversal one; callers working in world coordinates swap them per
    vehicle heading.
    """

    sigma2_c: float = 0.01    # m^2/s^2, common-bias drift
    sigma2_z: float = 1.0     # m^2, receiver white noise
    sigma2_b: float = 1.0     # m^2/s^2, clock-bias derivative
    sigma2_d: float = 1.0     # m^2/s^4, clock-drift derivative
    sigma2_ax: float = 1.0    # m^2/s^4
    sigma2_ay: float = 0.01   # m^2/s^4
    multipath_magnitude: float = 4.0  # m, always additive
    multipath_prob: float = 0.25
    sigma2_n: float = 0.25    # m^2, particle bias initialization noise

    def __post_init__(self):
        for name in ("sigma2_c", "sigma2_z", "sigma2_b", "sigma2_d",
                     "sigma2_ax", "sigma2_ay", "sigma2_n"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not 0.0 <= self.multipath_prob <= 1.0:
            raise ConfigurationError("multipath_prob must lie in [0, 1]")


@dataclass
class TruthVehicleState:
    """Ground-truth kinematics and receiver clock of one vehicle (z fixed 0)."""

    position: np.ndarray   # (2,) m
    velocity: np.ndarray   # (2,) m/s
    clock_bias: float      # m
    clock_drift: float     # m/s


@dataclass
class CommonBiasTruth:
    """Per-satellite common pseudo-range bias, meters."""

    biases: np.ndarray  # (Ns,)


@dataclass
class MeasurementEpoch:
    """All pseudo-ranges of one time step, keyed by (satellite id, vehicle id).

    truth_multipath is diagnostic ground truth; filters must never read it.
    """

    t: float
    entries: dict[tuple[int, int], float] = field(default_factory=dict)
    truth_multipath: dict[tuple[int, int], bool] = field(default_factory=dict)

    def satellite_ids(self) -> list[int]:
        return sorted({j for j, _ in self.entries})

    def vehicle_ids(self) -> list[int]:
        return sorted({i for _, i in self.entries})


def enu_from_angles(elevation_deg: float, azimuth_deg: float, radius_m: float) -> np.ndarray:
    """ENU position for an elevation/azimuth pair, azimuth clockwise from north."""
    el = math.radians(elevation_deg)
    az = math.radians(azimuth_deg)
    return radius_m * np.array(
        [math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)]
    )


def propagate_constellation(cfg: ConstellationConfig, t: float) -> list[SatelliteState]:
    """Satellite states at time t: azimuths advanced by angular_rate * t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rate_deg = math.degrees(cfg.angular_rate)
    sats = []
    for k in range(cfg.count):
        az = cfg.azimuths_deg[k] + rate_deg * t
        sats.append(SatelliteState(id=k + 1, position=enu_from_angles(cfg.elevations_deg[k], az, cfg.radius_m)))
    return sats


def step_common_bias(prev: CommonBiasTruth, dt: float, sigma2_c: float,
                     rng: np.random.Generator) -> CommonBiasTruth:
    """Random-walk step: each bias gains w*dt with w ~ N(0, sigma2_c)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    w = rng.normal(0.0, math.sqrt(sigma2_c), size=prev.biases.shape)
    return CommonBiasTruth(biases=prev.biases + w * dt)


def step_truth_vehicle(state: TruthVehicleState, dt: float, noise: NoiseConfig,
                       rng: np.random.Generator) -> TruthVehicleState:
    """Advance one vehicle: constant scripted velocity, two-state clock model.

    The clock noise is injected so that the per-step increment covariance is
    [[s2d*dt^4/4 + s2b*dt^2, s2d*dt^3/2], [s2d*dt^3/2, s2d*dt^2]].
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    w_d = rng.normal(0.0, math.sqrt(noise.sigma2_d))
    w_b = rng.normal(0.0, math.sqrt(noise.sigma2_b))
    new_bias = state.clock_bias + state.clock_drift * dt + 0.5 * w_d * dt * dt + w_b * dt
    new_drift = state.clock_drift + w_d * dt
    return TruthVehicleState(
        position=state.position + state.velocity * dt,
        velocity=state.velocity.copy(),
        clock_bias=new_bias,
        clock_drift=new_drift,
    )


def measure_pseudoranges(vehicles: list[TruthVehicleState], sats: list[SatelliteState],
                         bias_truth: CommonBiasTruth, noise: NoiseConfig,
                         multipath_enabled: bool, rng: np.random.Generator,
                         t: float = 0.0) -> MeasurementEpoch:
    """Pseudo-ranges for every (satellite, vehicle) pair at one epoch.

    entry = 3-D geometric range (vehicle z = 0) + common bias + clock bias
            + multipath (Bernoulli, fixed positive magnitude) + white noise.
    """
    ns, nv = len(sats), len(vehicles)
    white = rng.normal(0.0, math.sqrt(noise.sigma2_z), size=(ns, nv))
    if multipath_enabled and noise.multipath_prob > 0:
        flags = rng.random(size=(ns, nv)) < noise.multipath_prob
    else:
        flags = np.zeros((ns, nv), dtype=bool)

    epoch = MeasurementEpoch(t=t)
    for a, sat in enumerate(sats):
        for i, veh in enumerate(vehicles):
            d = np.array([veh.position[0], veh.position[1], 0.0]) - sat.position
            rho = float(np.linalg.norm(d))
            z = (rho + bias_truth.biases[a] + veh.clock_bias
                 + (noise.multipath_magnitude if flags[a, i] else 0.0) + white[a, i])
            epoch.entries[(sat.id, i)] = z
            epoch.truth_multipath[(sat.id, i)] = bool(flags[a, i])
    return epoch
