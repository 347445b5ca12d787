"""Render time-frequency heatmaps and change-point posteriors to PNG.

Consumes only the documented output contract of a run directory:

* grid CSVs (``logf11.csv``, ``rho21.csv``, ...) with the time axis in the
  first column and the frequency axis in the first row;
* ``pm.json`` with the posterior of the number of segments;
* ``ploc.json`` with the conditional breakpoint histograms.

Inputs are never modified; rerendering the same inputs reproduces the same
image dimensions and pixel data.  Every PNG carries ``grid-rows`` and
``grid-cols`` text metadata describing the grid it was drawn from.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class RenderError(ValueError):
    """Raised when an input file is missing, ragged or malformed."""


def read_grid_csv(path):
    """(time, freq, grid) from a header-carrying grid CSV."""
    path = Path(path)
    if not path.exists():
        raise RenderError(f"grid file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2 or len(rows[0]) < 2:
        raise RenderError(f"{path}: not a grid CSV")
    width = len(rows[0])
    try:
        freq = np.array([float(v) for v in rows[0][1:]])
        time = np.empty(len(rows) - 1)
        grid = np.empty((len(rows) - 1, width - 1))
        for i, row in enumerate(rows[1:]):
            if len(row) != width:
                raise RenderError(f"{path}: ragged row {i + 2}")
            time[i] = float(row[0])
            grid[i] = [float(v) for v in row[1:]]
    except ValueError as exc:
        raise RenderError(f"{path}: non-numeric cell: {exc}") from exc
    return time, freq, grid


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise RenderError(f"file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise RenderError(f"{path}: malformed JSON: {exc}") from exc


@dataclass
class FigureSpec:
    """What to render: input run directory, functional selection, scales, output."""

    input_dir: Path
    out_dir: Path
    functionals: list[str] | None = None
    color_bounds: dict = field(default_factory=dict)  # name -> (vmin, vmax)
    fig_width: float = 4.0
    fig_height: float = 3.2
    dpi: int = 110

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.out_dir = Path(self.out_dir)


def discover_functionals(input_dir: Path) -> list[str]:
    """Display functionals present in a run directory: log-spectra then coherences."""
    names = {p.stem for p in Path(input_dir).glob("*.csv")
             if not p.stem.endswith(("_lo", "_hi"))}
    logf = sorted(n for n in names if n.startswith("logf"))
    rho = sorted(n for n in names if n.startswith("rho"))
    return logf + rho


def _png_metadata(n_rows: int, n_cols: int, extra: dict | None = None) -> dict:
    meta = {"grid-rows": str(n_rows), "grid-cols": str(n_cols)}
    if extra:
        meta.update(extra)
    return meta


def render_heatmaps(spec: FigureSpec) -> list[Path]:
    """One heatmap panel per functional; rows share a color bar.

    Log-spectrum panels form one row with a common color scale, coherence
    panels a second row pinned to [0, 1] unless overridden.  Time runs along
    x, frequency along y, with axes taken from the CSV headers.
    """
    names = spec.functionals or discover_functionals(spec.input_dir)
    if not names:
        raise RenderError(f"no functional grids found in {spec.input_dir}")
    grids = {}
    shape = None
    for name in names:
        time, freq, grid = read_grid_csv(spec.input_dir / f"{name}.csv")
        if shape is None:
            shape = grid.shape
        elif grid.shape != shape:
            raise RenderError(f"{name}.csv grid shape {grid.shape} differs from {shape}")
        grids[name] = (time, freq, grid)

    rows = [[n for n in names if n.startswith("logf")],
            [n for n in names if not n.startswith("logf")]]
    rows = [r for r in rows if r]
    n_cols = max(len(r) for r in rows)
    fig, axes = plt.subplots(
        len(rows), n_cols, squeeze=False,
        figsize=(spec.fig_width * n_cols + 1.2, spec.fig_height * len(rows)),
    )
    for ri, row_names in enumerate(rows):
        vmin = min(grids[n][2].min() for n in row_names)
        vmax = max(grids[n][2].max() for n in row_names)
        if all(n.startswith("rho") for n in row_names):
            vmin, vmax = 0.0, 1.0
        for n in row_names:
            if n in spec.color_bounds:
                vmin, vmax = spec.color_bounds[n]
        if vmax <= vmin:  # constant grid: keep the constant visible in the legend
            vmin, vmax = vmin - 0.5, vmax + 0.5
        mesh = None
        for ci in range(n_cols):
            ax = axes[ri][ci]
            if ci >= len(row_names):
                ax.set_axis_off()
                continue
            name = row_names[ci]
            time, freq, grid = grids[name]
            mesh = ax.pcolormesh(time, freq, grid.T, vmin=vmin, vmax=vmax,
                                 shading="nearest")
            ax.set_title(name)
            ax.set_xlabel("time")
            if ci == 0:
                ax.set_ylabel("frequency (cycles/sample)")
        fig.colorbar(mesh, ax=[axes[ri][ci] for ci in range(n_cols)], shrink=0.9)

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    out = spec.out_dir / "heatmaps.png"
    fig.savefig(out, dpi=spec.dpi,
                metadata=_png_metadata(shape[0], shape[1],
                                       {"functionals": ",".join(names)}))
    plt.close(fig)
    return [out]


def render_changepoints(spec: FigureSpec) -> list[Path]:
    """Bar chart of Pr(m) plus one histogram per conditional breakpoint."""
    pm_doc = read_json(spec.input_dir / "pm.json")
    ploc_doc = read_json(spec.input_dir / "ploc.json")
    try:
        pm_items = sorted(((int(k), float(v)) for k, v in pm_doc["pm"].items()))
        entries = ploc_doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RenderError(f"unexpected pm/ploc schema: {exc}") from exc

    n_hist = len(entries)
    n_panels = 1 + n_hist
    n_cols = min(3, n_panels)
    n_rows = (n_panels + n_cols - 1) // n_cols
    fig, axes = plt.subplots(n_rows, n_cols, squeeze=False,
                             figsize=(spec.fig_width * n_cols,
                                      spec.fig_height * n_rows))
    flat = [ax for row in axes for ax in row]
    for ax in flat[n_panels:]:
        ax.set_axis_off()

    ax = flat[0]
    ax.bar([k for k, _ in pm_items], [v for _, v in pm_items], color="0.3")
    ax.set_xlabel("number of segments m")
    ax.set_ylabel("posterior probability")
    ax.set_ylim(0.0, 1.0)
    ax.set_xticks([k for k, _ in pm_items])
    ax.set_title("Pr(m | data)")

    for i, entry in enumerate(entries):
        ax = flat[1 + i]
        positions = np.asarray(entry["positions"], dtype=float)
        probs = np.asarray(entry["probs"], dtype=float)
        width = max(1.0, (positions.max() - positions.min()) / max(len(positions), 1) * 0.9) \
            if positions.size > 1 else 1.0
        ax.bar(positions, probs, width=width, color="0.3")
        ax.set_title(f"delta_{entry['q']} | m={entry['m']}")
        ax.set_xlabel("time (samples)")
        ax.set_ylabel("probability")

    fig.tight_layout()
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    out = spec.out_dir / "changepoints.png"
    fig.savefig(out, dpi=spec.dpi,
                metadata=_png_metadata(len(pm_items), n_hist))
    plt.close(fig)
    return [out]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="specseg-plots",
        description="Render heatmaps and change-point posteriors from a specseg run",
    )
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="run output directory")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="directory for the PNG files")
    parser.add_argument("--functionals", nargs="*", default=None,
                        help="subset of grids to draw (default: all present)")
    parser.add_argument("--vmin", type=float, default=None)
    parser.add_argument("--vmax", type=float, default=None)
    parser.add_argument("--dpi", type=int, default=110)
    args = parser.parse_args(argv)

    bounds = {}
    if args.vmin is not None and args.vmax is not None and args.functionals:
        bounds = {name: (args.vmin, args.vmax) for name in args.functionals}
    spec = FigureSpec(input_dir=Path(args.input_dir), out_dir=Path(args.out_dir),
                      functionals=args.functionals, color_bounds=bounds, dpi=args.dpi)
    try:
        written = render_heatmaps(spec)
        written += render_changepoints(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
