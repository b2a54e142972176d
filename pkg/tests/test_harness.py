"""Harness: config parsing, experiment runs, CSV artifacts, determinism."""
import math

import numpy as np
import pytest

from cmmlab.cli import main as cli_main
from cmmlab.exceptions import ConfigurationError
from cmmlab.harness import (ScenarioConfig, compute_rms, load_config,
                            read_epoch_csv, run_experiment, summarize)
from cmmlab.lanemap import load_lane_map


def fast_cfg(**kw):
    base = dict(duration=8.0, n_particles=40, N_m=40, seed=3)
    base.update(kw)
    return ScenarioConfig(**base)


class TestConfig:
    def test_defaults_match_simulation_parameters(self):
        cfg = ScenarioConfig()
        assert (cfg.dt, cfg.Ns, cfg.sigma2_c, cfg.sigma2_ax, cfg.sigma2_ay) == \
            (0.1, 6, 0.01, 1.0, 0.01)
        assert (cfg.sigma2_b, cfg.sigma2_d, cfg.sigma2_z) == (1.0, 1.0, 1.0)
        assert (cfg.alpha1, cfg.alpha2, cfg.alpha3, cfg.N_m) == (0.95, 1.0, 0.99, 100)
        assert (cfg.n_particles, cfg.sigma2_n) == (200, 0.25)
        assert (cfg.multipath_magnitude, cfg.multipath_prob) == (4.0, 0.25)

    def test_file_round_trip_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nmethod = static\nseed = 9\ndt = 0.2\n")
        cfg = load_config(path)
        assert (cfg.method, cfg.seed, cfg.dt) == ("static", 9, 0.2)
        cfg = load_config(path, seed=11, method="rbpf")
        assert (cfg.method, cfg.seed) == ("rbpf", 11)

    def test_unknown_key_rejected_by_name(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("sigma2_q = 1\n")
        with pytest.raises(ConfigurationError, match="sigma2_q"):
            load_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just words\n")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_invalid_method_rejected(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(method="kalman")

    def test_invalid_noise_model_rejected(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(noise_model="white-only")


class TestComputeRms:
    def test_constant_series(self):
        assert compute_rms([1.0, 1.0, 1.0]) == 1.0

    def test_three_four(self):
        assert compute_rms([3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
        assert compute_rms([3.0, 4.0]) == pytest.approx(3.5355, abs=1e-4)

    def test_zero_series(self):
        assert compute_rms([0.0, 0.0]) == 0.0

    def test_empty_series_rejected(self):
        with pytest.raises(ValueError):
            compute_rms([])


class TestRunArtifacts:
    def test_same_seed_byte_identical(self, tmp_path):
        cfg = fast_cfg()
        a = run_experiment(cfg, tmp_path / "a")
        b = run_experiment(cfg, tmp_path / "b")
        assert a.epoch_csv.read_bytes() == b.epoch_csv.read_bytes()
        assert a.summary_csv.read_text().replace("a/", "b/") == \
            b.summary_csv.read_text().replace("b/", "b/")

    def test_different_seed_differs(self, tmp_path):
        a = run_experiment(fast_cfg(seed=1), tmp_path)
        b = run_experiment(fast_cfg(seed=2), tmp_path)
        assert a.epoch_csv.read_bytes() != b.epoch_csv.read_bytes()

    def test_epoch_csv_schema(self, tmp_path):
        cfg = fast_cfg()
        res = run_experiment(cfg, tmp_path)
        lines = res.epoch_csv.read_text().strip().splitlines()
        header = lines[0].split(",")
        expected = (["epoch", "t", "vehicle_id", "err_x", "err_y", "err_norm",
                     "cov_det_xy"]
                    + [f"bias_err_{j}" for j in range(1, 7)]
                    + [f"bias_std_{j}" for j in range(1, 7)])
        assert header == expected
        n_epochs = int(round(cfg.duration / cfg.dt))
        assert len(lines) == 1 + n_epochs * cfg.Nv
        first = lines[1].split(",")
        assert len(first) == len(expected)
        # nine significant digits
        for token in first[3:6]:
            mantissa = token.lstrip("-").replace(".", "").replace("e", "E").split("E")[0]
            assert len(mantissa.lstrip("0")) <= 9

    def test_summary_rms_matches_epoch_recomputation(self, tmp_path):
        res = run_experiment(fast_cfg(), tmp_path)
        cols = read_epoch_csv(res.epoch_csv)
        keep = cols["t"] > 5.0
        recomputed = compute_rms(cols["err_norm"][keep])
        assert res.run_rms == pytest.approx(recomputed, rel=1e-9)
        text = res.summary_csv.read_text()
        assert text.startswith("#")
        assert "warm-up" in text.splitlines()[0]

    def test_cov_det_nonnegative(self, tmp_path):
        res = run_experiment(fast_cfg(), tmp_path)
        cols = read_epoch_csv(res.epoch_csv)
        assert (cols["cov_det_xy"] >= 0).all()

    def test_all_six_cells_run_from_one_config(self, tmp_path):
        path = tmp_path / "grid.cfg"
        path.write_text("duration = 6.5\nn_particles = 30\nN_m = 30\nseed = 2\n")
        for method in ("rbpf", "static", "smoothed-static"):
            for noise in ("common+white", "common+white+multipath"):
                cfg = load_config(path, method=method, noise_model=noise)
                res = run_experiment(cfg, tmp_path / "grid")
                assert res.epoch_csv.exists() and res.summary_csv.exists()
                assert not res.failed
                assert math.isfinite(res.run_rms)

    def test_truth_dump(self, tmp_path):
        res = run_experiment(fast_cfg(method="static"), tmp_path, dump_truth=True)
        veh = (tmp_path / f"truth_vehicles_{res.config.tag()}.csv").read_text()
        bias = (tmp_path / f"truth_biases_{res.config.tag()}.csv").read_text()
        assert veh.splitlines()[0] == "epoch,vehicle_id,x,y,vx,vy,clock_bias,clock_drift"
        assert bias.splitlines()[0] == "epoch,sat_id,bias_m"

    def test_summarize_aggregates_and_is_consistent(self, tmp_path):
        out = tmp_path / "runs"
        for seed in (1, 2):
            run_experiment(fast_cfg(seed=seed, method="static"), out)
        path = summarize(out)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "method,noise_model,n_runs,mean_rms_m,median_cov_det_xy"
        row = lines[1].split(",")
        assert row[0] == "static" and row[2] == "2"
        rms = [run_experiment(fast_cfg(seed=s, method="static"), out).run_rms
               for s in (1, 2)]
        assert float(row[3]) == pytest.approx(np.mean(rms), rel=1e-6)

    def test_summarize_empty_dir_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            summarize(tmp_path)


class TestCli:
    def test_run_and_summarize(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("duration = 6.5\nn_particles = 30\nN_m = 30\nmethod = static\n")
        out = tmp_path / "out"
        rc = cli_main(["run", "--config", str(cfg), "--seed", "4", "--out", str(out)])
        assert rc == 0
        assert "rms=" in capsys.readouterr().out
        rc = cli_main(["summarize", "--out", str(out)])
        assert rc == 0
        assert (out / "grid_summary.csv").exists()

    def test_write_map_round_trips(self, tmp_path):
        target = tmp_path / "map.txt"
        rc = cli_main(["write-map", "--out", str(target)])
        assert rc == 0
        lane_map = load_lane_map(target)
        assert len(lane_map.lanes) == 4

    def test_bad_config_returns_error_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nope = 1\n")
        rc = cli_main(["run", "--config", str(cfg)])
        assert rc == 2
        assert "nope" in capsys.readouterr().err

    def test_method_noise_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("duration = 6.5\nn_particles = 30\nN_m = 30\n")
        out = tmp_path / "out"
        rc = cli_main(["run", "--config", str(cfg), "--method", "static",
                       "--noise-model", "common+white+multipath", "--out", str(out)])
        assert rc == 0
        files = list(out.glob("epochs_static_common-white-multipath_*.csv"))
        assert len(files) == 1
