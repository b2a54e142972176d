"""Figure builders over harness epoch CSVs.

Three figure kinds: horizontal error traces per method, covariance
determinant traces on a log axis, and the common-bias estimation error with
a +/- one sigma band taken verbatim from the bias_std columns. All statistics
come from the CSVs; nothing is recomputed here beyond plotting transforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("error_trace", "cov_det", "bias_error")

# columns each figure kind reads from the epoch CSV
_REQUIRED = {
    "error_trace": ("t", "vehicle_id", "err_norm"),
    "cov_det": ("t", "vehicle_id", "cov_det_xy"),
    "bias_error": ("t", "vehicle_id"),  # plus bias_err_j / bias_std_j
}

# deterministic SVG output so re-rendering is byte-identical
matplotlib.rcParams["svg.hashsalt"] = "cmmplots"


class SchemaError(ValueError):
    """An input CSV does not carry a column the figure kind needs."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[Path]
    output: Path
    labels: list[str] = field(default_factory=list)
    vehicle_id: int = 0
    satellite: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)
        for p in self.inputs:
            if not p.exists():
                raise FileNotFoundError(p)


def read_columns(path: Path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return {name: data[:, k] for k, name in enumerate(header)}


def _check_schema(cols: dict[str, np.ndarray], spec: FigureSpec, path: Path):
    needed = list(_REQUIRED[spec.kind])
    if spec.kind == "bias_error":
        needed += [f"bias_err_{spec.satellite}", f"bias_std_{spec.satellite}"]
    for name in needed:
        if name not in cols:
            raise SchemaError(f"{path}: missing column {name!r} for {spec.kind}")


def _label_for(path: Path, spec: FigureSpec, index: int) -> str:
    if index < len(spec.labels):
        return spec.labels[index]
    stem = path.stem
    return stem[len("epochs_"):] if stem.startswith("epochs_") else stem


def build_figure(spec: FigureSpec):
    """Assemble the matplotlib figure; render() saves it to spec.output."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for idx, path in enumerate(spec.inputs):
        cols = read_columns(path)
        _check_schema(cols, spec, path)
        label = _label_for(path, spec, idx)
        if spec.kind == "bias_error":
            mask = cols["vehicle_id"] == cols["vehicle_id"][0]
            t = cols["t"][mask]
            err = cols[f"bias_err_{spec.satellite}"][mask]
            std = cols[f"bias_std_{spec.satellite}"][mask]
            line, = ax.plot(t, err, label=label, linewidth=1.0)
            ax.fill_between(t, err - std, err + std, alpha=0.25,
                            color=line.get_color(), linewidth=0)
        else:
            mask = cols["vehicle_id"] == spec.vehicle_id
            t = cols["t"][mask]
            column = "err_norm" if spec.kind == "error_trace" else "cov_det_xy"
            ax.plot(t, cols[column][mask], label=label, linewidth=1.0)

    ax.set_xlabel("time [s]")
    if spec.kind == "error_trace":
        ax.set_ylabel("horizontal position error [m]")
        ax.set_title(f"Horizontal position error, vehicle {spec.vehicle_id}")
    elif spec.kind == "cov_det":
        ax.set_yscale("log")
        ax.set_ylabel("det of horizontal position covariance [m^4]")
        ax.set_title(f"Position covariance determinant, vehicle {spec.vehicle_id}")
    else:
        ax.set_ylabel("common bias estimation error [m]")
        ax.set_title(f"Common bias error, satellite {spec.satellite}"
                     " (band: +/- 1 sigma)")
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig, ax


def render(spec: FigureSpec) -> Path:
    """Write the figure to spec.output (format from the file suffix)."""
    fig, _ = build_figure(spec)
    try:
        metadata = {"Date": None} if spec.output.suffix == ".svg" else None
        fig.savefig(spec.output, metadata=metadata)
    finally:
        plt.close(fig)
    return spec.output
