"""Secondary acceptance: the three figure kinds render from fixture CSVs,
the covariance figure uses a log axis, and the bias band is a pass-through
of the bias_std column."""
import subprocess
import sys

import matplotlib.pyplot as plt
import numpy as np
import pytest

from cmmplots import FigureSpec, SchemaError, build_figure, render
from cmmplots.cli import main as cli_main

N_EPOCHS = 40
NV = 2
NS = 3


def write_fixture_csv(path, seed=0):
    """Epoch CSV in the harness schema, small but fully populated."""
    rng = np.random.default_rng(seed)
    cols = (["epoch", "t", "vehicle_id", "err_x", "err_y", "err_norm", "cov_det_xy"]
            + [f"bias_err_{j}" for j in range(1, NS + 1)]
            + [f"bias_std_{j}" for j in range(1, NS + 1)])
    lines = [",".join(cols)]
    for k in range(1, N_EPOCHS + 1):
        bias_err = 0.5 * np.sin(0.1 * k + np.arange(NS))
        bias_std = 0.1 + 0.05 * rng.random(NS)
        for i in range(NV):
            ex, ey = rng.normal(0, 0.5, 2)
            row = [str(k), f"{0.1 * k:.9g}", str(i), f"{ex:.9g}", f"{ey:.9g}",
                   f"{np.hypot(ex, ey):.9g}", f"{abs(rng.normal(1e-2, 1e-3)):.9g}"]
            row += [f"{v:.9g}" for v in bias_err]
            row += [f"{v:.9g}" for v in bias_std]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def fixture_csvs(tmp_path):
    return [write_fixture_csv(tmp_path / f"epochs_{name}_seed0.csv", seed=i)
            for i, name in enumerate(("rbpf", "static", "smoothed-static"))]


class TestRender:
    def test_error_trace_renders_three_series(self, fixture_csvs, tmp_path):
        spec = FigureSpec(kind="error_trace", inputs=fixture_csvs,
                          output=tmp_path / "err.svg")
        fig, ax = build_figure(spec)
        assert len(ax.get_lines()) == 3
        labels = [line.get_label() for line in ax.get_lines()]
        assert any("rbpf" in lbl for lbl in labels)
        plt.close(fig)
        out = render(spec)
        assert out.exists() and out.stat().st_size > 0

    def test_cov_det_uses_log_axis(self, fixture_csvs, tmp_path):
        spec = FigureSpec(kind="cov_det", inputs=fixture_csvs,
                          output=tmp_path / "cov.png")
        fig, ax = build_figure(spec)
        assert ax.get_yscale() == "log"
        plt.close(fig)
        out = render(spec)
        assert out.exists() and out.stat().st_size > 0

    def test_bias_band_halfwidth_equals_bias_std(self, fixture_csvs, tmp_path):
        spec = FigureSpec(kind="bias_error", inputs=fixture_csvs[:1],
                          output=tmp_path / "bias.svg", satellite=2)
        fig, ax = build_figure(spec)

        from cmmplots.figures import read_columns
        cols = read_columns(fixture_csvs[0])
        mask = cols["vehicle_id"] == cols["vehicle_id"][0]
        err = cols["bias_err_2"][mask]
        std = cols["bias_std_2"][mask]

        band = ax.collections[0]
        verts = band.get_paths()[0].vertices
        ys = verts[:, 1]
        # the band polygon spans [err - std, err + std]: recover the half
        # width at the first epoch's x coordinate
        t0 = cols["t"][mask][0]
        at_t0 = sorted(ys[np.isclose(verts[:, 0], t0)])
        assert at_t0[0] == pytest.approx(err[0] - std[0], rel=1e-6)
        assert at_t0[-1] == pytest.approx(err[0] + std[0], rel=1e-6)
        plt.close(fig)
        out = render(spec)
        assert out.exists()

    def test_rerender_is_idempotent(self, fixture_csvs, tmp_path):
        spec = FigureSpec(kind="error_trace", inputs=fixture_csvs,
                          output=tmp_path / "err.svg")
        first = render(spec).read_bytes()
        second = render(spec).read_bytes()
        assert first == second

    def test_missing_column_names_offender(self, tmp_path):
        bad = tmp_path / "epochs_bad_seed0.csv"
        bad.write_text("epoch,t,vehicle_id,err_x\n1,0.1,0,0.5\n")
        spec = FigureSpec(kind="cov_det", inputs=[bad], output=tmp_path / "x.svg")
        with pytest.raises(SchemaError, match="cov_det_xy"):
            build_figure(spec)

    def test_unknown_kind_rejected(self, fixture_csvs, tmp_path):
        with pytest.raises(ValueError):
            FigureSpec(kind="scatter", inputs=fixture_csvs,
                       output=tmp_path / "x.svg")

    def test_missing_input_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            FigureSpec(kind="error_trace", inputs=[tmp_path / "nope.csv"],
                       output=tmp_path / "x.svg")


class TestCli:
    def test_cli_renders(self, fixture_csvs, tmp_path, capsys):
        out = tmp_path / "fig.svg"
        rc = cli_main(["--kind", "error_trace",
                       "--inputs", *[str(p) for p in fixture_csvs],
                       "--out", str(out)])
        assert rc == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_cli_schema_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("epoch,t,vehicle_id\n1,0.1,0\n")
        rc = cli_main(["--kind", "bias_error", "--inputs", str(bad),
                       "--out", str(tmp_path / "x.svg")])
        assert rc == 2
        assert "bias_err_1" in capsys.readouterr().err

    def test_cli_is_installed_entry_point(self, fixture_csvs, tmp_path):
        out = tmp_path / "fig.png"
        proc = subprocess.run(
            [sys.executable, "-m", "cmmplots.cli", "--kind", "cov_det",
             "--inputs", *[str(p) for p in fixture_csvs], "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
