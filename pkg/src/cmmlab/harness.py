"""Experiment driver: configuration, scenario x method x noise x seed runs,
error metrics, and the CSV artifacts the tests and plots consume."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import baselines, rbpf
from .exceptions import ConfigurationError, DegenerateFilterError
from .filtercore import GateConfig
from .lanemap import LaneMap, load_lane_map
from .scenario import (default_constellation, default_vehicle_scripts,
                       generate_truth, intersection_lane_map)
from .world import NoiseConfig

METHODS = ("rbpf", "static", "smoothed-static")
NOISE_MODELS = ("common+white", "common+white+multipath")
WARMUP_S = 5.0  # excluded from RMS and steady-state statistics

# covariance inflation applied to the initial point fix before it seeds the
# filter, plus priors for the unobserved velocity/drift components
INIT_FIX_COV_INFLATION = 10.0
INIT_VELOCITY_VAR = 100.0   # (m/s)^2
INIT_DRIFT_VAR = 4.0        # (m/s)^2
# fixes used by the startup line fit that seeds the filter; a whole-second of
# fixes pins velocity well enough that the filter enters its measurement loop
# without a kinematic transient (which would skew the early particle weights)
STARTUP_FIT_EPOCHS = 10


@dataclass
class ScenarioConfig:
    dt: float = 0.1
    duration: float = 60.0
    Ns: int = 6
    Nv: int = 4
    sigma2_c: float = 0.01
    sigma2_z: float = 1.0
    sigma2_b: float = 1.0
    sigma2_d: float = 1.0
    sigma2_ax: float = 1.0
    sigma2_ay: float = 0.01
    multipath_magnitude: float = 4.0
    multipath_prob: float = 0.25
    sigma2_n: float = 0.25
    alpha1: float = 0.95
    alpha2: float = 1.0
    alpha3: float = 0.99
    n_particles: int = 200
    N_m: int = 100
    method: str = "rbpf"
    noise_model: str = "common+white"
    seed: int = 0
    map_file: str = ""
    search_radius: float = 10.0
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ConfigurationError("dt and duration must be > 0")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.noise_model not in NOISE_MODELS:
            raise ConfigurationError(
                f"noise_model must be one of {NOISE_MODELS}, got {self.noise_model!r}")
        if self.n_particles < 1 or self.N_m < 1:
            raise ConfigurationError("n_particles and N_m must be >= 1")

    def noise(self) -> NoiseConfig:
        return NoiseConfig(sigma2_c=self.sigma2_c, sigma2_z=self.sigma2_z,
                           sigma2_b=self.sigma2_b, sigma2_d=self.sigma2_d,
                           sigma2_ax=self.sigma2_ax, sigma2_ay=self.sigma2_ay,
                           multipath_magnitude=self.multipath_magnitude,
                           multipath_prob=self.multipath_prob, sigma2_n=self.sigma2_n)

    def gate(self) -> GateConfig:
        return GateConfig(alpha1=self.alpha1, alpha2=self.alpha2, alpha3=self.alpha3)

    def multipath_enabled(self) -> bool:
        return self.noise_model == "common+white+multipath"

    def tag(self) -> str:
        noise = self.noise_model.replace("+", "-")
        return f"{self.method}_{noise}_seed{self.seed}"


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def config_from_dict(raw: dict[str, str], **overrides) -> ScenarioConfig:
    kwargs = {}
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"unknown configuration key: {key!r}")
        kind = _FIELD_TYPES[key]
        if kind == "int":
            kwargs[key] = int(value)
        elif kind == "float":
            kwargs[key] = float(value)
        else:
            kwargs[key] = str(value)
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Parse a plain-text 'key = value' file; unknown keys are rejected."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    return config_from_dict(raw, **overrides)


@dataclass
class RunResult:
    config: ScenarioConfig
    epoch_csv: Path
    summary_csv: Path
    rms_per_vehicle: np.ndarray
    run_rms: float
    mean_cov_det: float
    median_cov_det: float
    bias_err_var: np.ndarray
    failed: bool = False
    failure: dict | None = None
    clean_flag_rate: float = float("nan")
    multipath_detection_rate: float = float("nan")


def compute_rms(err_norms) -> float:
    """Root mean square of a horizontal error-norm series."""
    arr = np.asarray(err_norms, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot take the RMS of an empty series")
    return float(np.sqrt(np.mean(arr ** 2)))


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _initial_fix_belief(fix: baselines.PointFix) -> tuple[np.ndarray, np.ndarray]:
    mean = np.array([fix.position[0], 0.0, fix.position[1], 0.0, fix.clock_bias, 0.0])
    cov = np.zeros((6, 6))
    idx = [0, 2, 4]
    for a, ia in enumerate(idx):
        for b, ib in enumerate(idx):
            cov[ia, ib] = INIT_FIX_COV_INFLATION * fix.fix_cov[a, b]
    cov[1, 1] = INIT_VELOCITY_VAR
    cov[3, 3] = INIT_VELOCITY_VAR
    cov[5, 5] = INIT_DRIFT_VAR
    return mean, cov


def startup_beliefs(rollout, sigma2_z: float,
                    n_fit: int = STARTUP_FIT_EPOCHS
                    ) -> tuple[list[tuple[np.ndarray, np.ndarray]],
                               list[list[baselines.PointFix]], int]:
    """Seed beliefs from a straight-line fit over the first n_fit epochs.

    Per vehicle, bias-corrected point fixes from epochs 0..n_fit-1 feed an
    unweighted least-squares line per coordinate (x, y, clock), giving value
    and rate at the last startup epoch. Covariances carry the same inflation
    as a single-fix seed. Returns (beliefs, per-epoch fixes, start epoch).
    """
    n_fit = max(2, min(n_fit, len(rollout.epochs)))
    bias0 = rollout.biases[0].biases
    all_fixes = [
        _epoch_fixes(rollout.epochs[k], rollout.satellites[k], sigma2_z,
                     bias_correction=bias0, robust=True)
        for k in range(n_fit)
    ]
    t = rollout.times[:n_fit]
    t_ref = t[-1]
    design = np.column_stack([np.ones(n_fit), t - t_ref])
    normal_inv = np.linalg.inv(design.T @ design)

    beliefs = []
    nv = len(all_fixes[0])
    for i in range(nv):
        series = np.array([[all_fixes[k][i].position[0],
                            all_fixes[k][i].position[1],
                            all_fixes[k][i].clock_bias] for k in range(n_fit)])
        params, *_ = np.linalg.lstsq(design, series, rcond=None)
        fix_cov = np.mean([all_fixes[k][i].fix_cov for k in range(n_fit)], axis=0)
        mean = np.array([params[0, 0], params[1, 0], params[0, 1], params[1, 1],
                         params[0, 2], params[1, 2]])
        cov = np.zeros((6, 6))
        for coord, base in enumerate((0, 2, 4)):
            block = INIT_FIX_COV_INFLATION * fix_cov[coord, coord] * normal_inv
            cov[base:base + 2, base:base + 2] = block
        beliefs.append((mean, cov))
    return beliefs, all_fixes, n_fit - 1


def _epoch_fixes(epoch, sats, sigma2_z, guesses=None, bias_correction=None,
                 robust=False) -> list[baselines.PointFix]:
    sat_pos = np.stack([s.position for s in sats])
    solver = baselines.robust_point_fix if robust else baselines.point_fix
    fixes = []
    for i in epoch.vehicle_ids():
        z = np.array([epoch.entries[(s.id, i)] for s in sats])
        if bias_correction is not None:
            z = z - bias_correction
        guess = None if guesses is None else guesses[i]
        fixes.append(solver(sat_pos, z, sigma2_z=sigma2_z, initial_guess=guess))
    return fixes


def run_experiment(cfg: ScenarioConfig, out_dir: str | Path,
                   dump_truth: bool = False) -> RunResult:
    """Run one (method, noise model, seed) cell and write its CSV artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    world_ss, filter_ss, baseline_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    world_rng = np.random.default_rng(world_ss)
    filter_rng = np.random.default_rng(filter_ss)
    baseline_rng = np.random.default_rng(baseline_ss)

    constellation = default_constellation(cfg.Ns)
    scripts = default_vehicle_scripts(cfg.Nv)
    lane_map: LaneMap = load_lane_map(cfg.map_file) if cfg.map_file else intersection_lane_map()
    noise = cfg.noise()
    n_epochs = int(round(cfg.duration / cfg.dt))

    rollout = generate_truth(constellation, scripts, lane_map, noise, cfg.dt,
                             n_epochs, cfg.multipath_enabled(), world_rng)
    if dump_truth:
        _dump_truth(rollout, out, cfg)

    # noisy initial bias knowledge shared by all methods (the filter receives
    # it through its particle initialization, the baselines as a level anchor)
    anchor = rollout.biases[0].biases + baseline_rng.normal(
        0.0, math.sqrt(cfg.sigma2_n), size=cfg.Ns)
    anchor_mean = float(anchor.mean())

    truth_pos = np.array([[v.position for v in vs] for vs in rollout.vehicles])
    truth_bias = np.array([b.biases for b in rollout.biases])

    try:
        if cfg.method == "rbpf":
            series = _run_rbpf(cfg, rollout, lane_map, noise, filter_rng)
        elif cfg.method == "static":
            series = _run_static(cfg, rollout, lane_map, baseline_rng, anchor_mean)
        else:
            series = _run_smoothed(cfg, rollout, lane_map, baseline_rng, anchor_mean)
        failure = None
    except DegenerateFilterError as err:
        series = err.diagnostics.get("partial_series")
        failure = {"error": str(err), **{k: v for k, v in err.diagnostics.items()
                                         if k != "partial_series"}}
        if series is None:
            series = _empty_series(cfg)

    est_pos, cov_dets, bias_est, bias_std, gate_stats = series

    n_done = est_pos.shape[0]
    epochs_done = np.arange(1, n_done + 1)
    times = rollout.times[1:n_done + 1]
    err = est_pos - truth_pos[1:n_done + 1]
    err_norm = np.linalg.norm(err, axis=2)
    bias_err = bias_est - truth_bias[1:n_done + 1]

    epoch_csv = out / f"epochs_{cfg.tag()}.csv"
    _write_epoch_csv(epoch_csv, cfg, epochs_done, times, err, err_norm, cov_dets,
                     bias_err, bias_std)

    keep = times > WARMUP_S
    failed = failure is not None or not keep.any()
    if keep.any():
        rms_per_vehicle = np.sqrt((err_norm[keep] ** 2).mean(axis=0))
        run_rms = compute_rms(err_norm[keep].ravel())
        mean_cov_det = float(cov_dets[keep].mean())
        median_cov_det = float(np.median(cov_dets[keep]))
        bias_err_var = bias_err[keep].var(axis=0, ddof=0)
    else:
        rms_per_vehicle = np.full(cfg.Nv, np.nan)
        run_rms = float("nan")
        mean_cov_det = float("nan")
        median_cov_det = float("nan")
        bias_err_var = np.full(cfg.Ns, np.nan)

    summary_csv = out / f"summary_{cfg.tag()}.csv"
    result = RunResult(config=cfg, epoch_csv=epoch_csv, summary_csv=summary_csv,
                       rms_per_vehicle=rms_per_vehicle, run_rms=run_rms,
                       mean_cov_det=mean_cov_det, median_cov_det=median_cov_det,
                       bias_err_var=bias_err_var, failed=failed, failure=failure,
                       clean_flag_rate=gate_stats[0],
                       multipath_detection_rate=gate_stats[1])
    _write_summary_csv(result)
    return result


def _empty_series(cfg: ScenarioConfig):
    return (np.zeros((0, cfg.Nv, 2)), np.zeros((0, cfg.Nv)),
            np.zeros((0, cfg.Ns)), np.zeros((0, cfg.Ns)),
            (float("nan"), float("nan")))


def _run_rbpf(cfg, rollout, lane_map, noise, filter_rng):
    # the filter is handed the initial biases (up to sigma2_n), so the startup
    # fixes solve on bias-corrected pseudo-ranges; otherwise the fix clock
    # would absorb the mean common bias and skew the first innovations
    beliefs0, startup_fixes, start = startup_beliefs(rollout, cfg.sigma2_z)
    accel = np.array([[cfg.sigma2_ax, cfg.sigma2_ay] if s.along_axis == "x"
                      else [cfg.sigma2_ay, cfg.sigma2_ax] for s in rollout.scripts])
    fcfg = rbpf.FilterConfig(noise=noise, gate=cfg.gate(), n_mc_samples=cfg.N_m,
                             accel_world=accel)
    state = rbpf.init(rollout.biases[0].biases, beliefs0, cfg.n_particles,
                      cfg.sigma2_n, filter_rng)
    state.t = float(rollout.times[start])
    init_bias_mean = state.biases.mean(axis=0)
    init_bias_std = state.biases.std(axis=0)

    n_epochs = len(rollout.epochs) - 1
    est_pos = np.zeros((n_epochs, cfg.Nv, 2))
    cov_dets = np.zeros((n_epochs, cfg.Nv))
    bias_est = np.zeros((n_epochs, cfg.Ns))
    bias_std = np.zeros((n_epochs, cfg.Ns))
    clean_flag, clean_count = 0.0, 0
    detect_flag, detect_count = 0.0, 0

    # while the startup fit accumulates, the per-epoch fix is the estimate
    for k in range(1, min(start, n_epochs) + 1):
        fixes = startup_fixes[k]
        est_pos[k - 1] = [f.position for f in fixes]
        cov_dets[k - 1] = [np.linalg.det(INIT_FIX_COV_INFLATION * f.fix_cov[:2, :2])
                           for f in fixes]
        bias_est[k - 1] = init_bias_mean
        bias_std[k - 1] = init_bias_std

    for k in range(start + 1, n_epochs + 1):
        epoch = rollout.epochs[k]
        try:
            state, est, diags = rbpf.step(state, epoch, rollout.satellites[k],
                                          lane_map, fcfg, filter_rng)
        except DegenerateFilterError as err:
            err.diagnostics["partial_series"] = (
                est_pos[:k - 1], cov_dets[:k - 1], bias_est[:k - 1], bias_std[:k - 1],
                _gate_rates(clean_flag, clean_count, detect_flag, detect_count))
            raise
        est_pos[k - 1] = est.vehicle_means[:, [0, 2]]
        cov_dets[k - 1] = np.linalg.det(
            est.vehicle_covs[:, [0, 2]][:, :, [0, 2]])
        bias_est[k - 1] = est.bias_mean
        bias_std[k - 1] = np.sqrt(np.diag(est.bias_cov))
        if epoch.t > WARMUP_S:
            for (j, i), corrupted in epoch.truth_multipath.items():
                frac = diags.flagged_fraction[i, j - 1]
                if corrupted:
                    detect_flag += frac
                    detect_count += 1
                else:
                    clean_flag += frac
                    clean_count += 1
    return est_pos, cov_dets, bias_est, bias_std, _gate_rates(
        clean_flag, clean_count, detect_flag, detect_count)


def _gate_rates(clean_flag, clean_count, detect_flag, detect_count):
    clean = clean_flag / clean_count if clean_count else float("nan")
    detect = detect_flag / detect_count if detect_count else float("nan")
    return clean, detect


def _run_static(cfg, rollout, lane_map, baseline_rng, anchor_mean):
    n_epochs = len(rollout.epochs) - 1
    est_pos = np.zeros((n_epochs, cfg.Nv, 2))
    cov_dets = np.zeros((n_epochs, cfg.Nv))
    bias_est = np.zeros((n_epochs, cfg.Ns))
    bias_std = np.zeros((n_epochs, cfg.Ns))
    guesses = None
    for k in range(1, n_epochs + 1):
        sats = rollout.satellites[k]
        epoch = rollout.epochs[k]
        fixes = _epoch_fixes(epoch, sats, cfg.sigma2_z, guesses)
        guesses = [np.array([f.position[0], f.position[1], f.clock_bias]) for f in fixes]
        result = baselines.static_cmm_step(
            np.stack([f.position for f in fixes]), lane_map, cfg.n_particles,
            cfg.search_radius, cfg.blur_sigma, baseline_rng)
        est_pos[k - 1] = result.corrected_positions
        cov_dets[k - 1] = np.linalg.det(result.correction_cov)
        sat_pos = {s.id: s.position for s in sats}
        bias_est[k - 1], bias_std[k - 1] = baselines.estimate_common_biases(
            epoch.entries, sat_pos, result.corrected_positions, anchor_mean)
    return est_pos, cov_dets, bias_est, bias_std, (float("nan"), float("nan"))


def _run_smoothed(cfg, rollout, lane_map, baseline_rng, anchor_mean):
    n_epochs = len(rollout.epochs) - 1
    est_pos = np.zeros((n_epochs, cfg.Nv, 2))
    cov_dets = np.zeros((n_epochs, cfg.Nv))
    bias_est = np.zeros((n_epochs, cfg.Ns))
    bias_std = np.zeros((n_epochs, cfg.Ns))
    fixes0 = _epoch_fixes(rollout.epochs[0], rollout.satellites[0], cfg.sigma2_z)
    tracker = baselines.SmoothedStaticTracker(fixes0, cfg.dt, cfg.sigma2_ax)
    guesses = [np.array([f.position[0], f.position[1], f.clock_bias]) for f in fixes0]
    for k in range(1, n_epochs + 1):
        sats = rollout.satellites[k]
        epoch = rollout.epochs[k]
        fixes = _epoch_fixes(epoch, sats, cfg.sigma2_z, guesses)
        guesses = [np.array([f.position[0], f.position[1], f.clock_bias]) for f in fixes]
        result, smoothed, pos_covs = tracker.step(
            fixes, lane_map, cfg.n_particles, cfg.search_radius, cfg.blur_sigma,
            baseline_rng)
        est_pos[k - 1] = result.corrected_positions
        corr_cov = result.correction_cov
        cov_dets[k - 1] = [np.linalg.det(corr_cov + pos_covs[i]) for i in range(cfg.Nv)]
        sat_pos = {s.id: s.position for s in sats}
        bias_est[k - 1], bias_std[k - 1] = baselines.estimate_common_biases(
            epoch.entries, sat_pos, result.corrected_positions, anchor_mean)
    return est_pos, cov_dets, bias_est, bias_std, (float("nan"), float("nan"))


def _write_epoch_csv(path, cfg, epochs, times, err, err_norm, cov_dets,
                     bias_err, bias_std):
    cols = ["epoch", "t", "vehicle_id", "err_x", "err_y", "err_norm", "cov_det_xy"]
    cols += [f"bias_err_{j}" for j in range(1, cfg.Ns + 1)]
    cols += [f"bias_std_{j}" for j in range(1, cfg.Ns + 1)]
    lines = [",".join(cols)]
    for k, epoch in enumerate(epochs):
        for i in range(cfg.Nv):
            row = [str(int(epoch)), _fmt(times[k]), str(i),
                   _fmt(err[k, i, 0]), _fmt(err[k, i, 1]), _fmt(err_norm[k, i]),
                   _fmt(cov_dets[k, i])]
            row += [_fmt(v) for v in bias_err[k]]
            row += [_fmt(v) for v in bias_std[k]]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _write_summary_csv(result: RunResult):
    cfg = result.config
    lines = [f"# rms excludes the first {WARMUP_S:g} s warm-up window"]
    cols = ["method", "noise_model", "seed", "vehicle_id", "rms_m", "run_rms_m",
            "mean_cov_det_xy", "median_cov_det_xy"]
    cols += [f"bias_err_var_{j}" for j in range(1, cfg.Ns + 1)]
    cols += ["status", "clean_flag_rate", "multipath_detection_rate"]
    lines.append(",".join(cols))
    status = "failed" if result.failed else "ok"
    for i in range(cfg.Nv):
        row = [cfg.method, cfg.noise_model, str(cfg.seed), str(i),
               _fmt(result.rms_per_vehicle[i]), _fmt(result.run_rms),
               _fmt(result.mean_cov_det), _fmt(result.median_cov_det)]
        row += [_fmt(v) for v in result.bias_err_var]
        row += [status, _fmt(result.clean_flag_rate),
                _fmt(result.multipath_detection_rate)]
        lines.append(",".join(row))
    result.summary_csv.write_text("\n".join(lines) + "\n")


def _dump_truth(rollout, out: Path, cfg: ScenarioConfig):
    lines = ["epoch,vehicle_id,x,y,vx,vy,clock_bias,clock_drift"]
    for k, vehicles in enumerate(rollout.vehicles):
        for i, v in enumerate(vehicles):
            lines.append(",".join([str(k), str(i), _fmt(v.position[0]), _fmt(v.position[1]),
                                   _fmt(v.velocity[0]), _fmt(v.velocity[1]),
                                   _fmt(v.clock_bias), _fmt(v.clock_drift)]))
    (out / f"truth_vehicles_{cfg.tag()}.csv").write_text("\n".join(lines) + "\n")
    lines = ["epoch,sat_id,bias_m"]
    for k, biases in enumerate(rollout.biases):
        for j, b in enumerate(biases.biases, start=1):
            lines.append(f"{k},{j},{_fmt(b)}")
    (out / f"truth_biases_{cfg.tag()}.csv").write_text("\n".join(lines) + "\n")


def read_epoch_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Load an epoch CSV into named columns."""
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    return {name: data[:, k] for k, name in enumerate(header)}


def summarize(out_dir: str | Path) -> Path:
    """Aggregate every run found in out_dir into grid_summary.csv.

    RMS values are recomputed from the epoch CSVs, so the grid summary is an
    independent check on the per-run summaries.
    """
    out = Path(out_dir)
    runs = sorted(out.glob("epochs_*.csv"))
    if not runs:
        raise FileNotFoundError(f"no epochs_*.csv files under {out}")
    cells: dict[tuple[str, str], list[float]] = {}
    for path in runs:
        tag = path.stem[len("epochs_"):]
        method, noise, _seed = tag.rsplit("_", 2)
        cols = read_epoch_csv(path)
        keep = cols["t"] > WARMUP_S
        rms = compute_rms(cols["err_norm"][keep])
        med_cov = float(np.median(cols["cov_det_xy"][keep]))
        cells.setdefault((method, noise), []).append((rms, med_cov))

    lines = ["method,noise_model,n_runs,mean_rms_m,median_cov_det_xy"]
    for (method, noise), vals in sorted(cells.items()):
        rms = np.mean([v[0] for v in vals])
        med = np.median([v[1] for v in vals])
        lines.append(f"{method},{noise.replace('-', '+')},{len(vals)},{_fmt(rms)},{_fmt(med)}")
    path = out / "grid_summary.csv"
    path.write_text("\n".join(lines) + "\n")
    return path
