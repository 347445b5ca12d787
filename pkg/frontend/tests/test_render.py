import json

import numpy as np
import pytest
from PIL import Image

from specseg_plots.render import (
    FigureSpec,
    RenderError,
    discover_functionals,
    main,
    read_grid_csv,
    render_changepoints,
    render_heatmaps,
)


def write_grid(path, time, freq, grid):
    with open(path, "w") as fh:
        fh.write("time," + ",".join(f"{w:.6g}" for w in freq) + "\n")
        for t, row in zip(time, grid):
            fh.write(f"{t:.6g}," + ",".join(f"{v:.10g}" for v in row) + "\n")


def make_run_dir(tmp_path, n_time=12, n_freq=9, constant=None, names=("logf11", "logf22", "rho21")):
    tmp_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    time = np.arange(1, n_time + 1, dtype=float)
    freq = np.linspace(0, 0.5, n_freq)
    for name in names:
        grid = (np.full((n_time, n_freq), constant) if constant is not None
                else rng.standard_normal((n_time, n_freq)))
        if name.startswith("rho") and constant is None:
            grid = 1.0 / (1.0 + np.exp(-grid))
        write_grid(tmp_path / f"{name}.csv", time, freq, grid)
    pm = {"max_segments": 4,
          "pm": {"1": 0.3286, "2": 0.6521, "3": 0.0096, "4": 0.0097}}
    (tmp_path / "pm.json").write_text(json.dumps(pm))
    ploc = {"entries": [
        {"m": 2, "q": 1, "positions": [5, 6, 7], "probs": [0.2, 0.7, 0.1]},
        {"m": 3, "q": 1, "positions": [4], "probs": [1.0]},
        {"m": 3, "q": 2, "positions": [8, 9], "probs": [0.5, 0.5]},
    ]}
    (tmp_path / "ploc.json").write_text(json.dumps(ploc))
    return tmp_path


class TestHeatmaps:
    def test_renders_with_metadata(self, tmp_path):
        run = make_run_dir(tmp_path / "run", 12, 9)
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out,) = render_heatmaps(spec)
        assert out.exists()
        img = Image.open(out)
        assert img.text["grid-rows"] == "12"
        assert img.text["grid-cols"] == "9"
        assert set(img.text["functionals"].split(",")) == {"logf11", "logf22", "rho21"}

    def test_three_row_toy_grid(self, tmp_path):
        run = make_run_dir(tmp_path, n_time=3, n_freq=51, names=("logf11",))
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs",
                          functionals=["logf11"])
        (out,) = render_heatmaps(spec)
        img = Image.open(out)
        assert img.text["grid-rows"] == "3"
        assert img.text["grid-cols"] == "51"

    def test_constant_grid_renders(self, tmp_path):
        run = make_run_dir(tmp_path, constant=2.5)
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out,) = render_heatmaps(spec)
        assert out.exists()

    def test_idempotent_rerender(self, tmp_path):
        run = make_run_dir(tmp_path / "run")
        before = {p.name: p.read_bytes() for p in run.iterdir()}
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out1,) = render_heatmaps(spec)
        first = np.asarray(Image.open(out1)).copy()
        first_size = Image.open(out1).size
        (out2,) = render_heatmaps(spec)
        second = np.asarray(Image.open(out2))
        assert Image.open(out2).size == first_size
        assert np.array_equal(first, second)
        # inputs untouched
        after = {p.name: p.read_bytes() for p in run.iterdir()}
        assert before == after

    def test_missing_file_named(self, tmp_path):
        run = make_run_dir(tmp_path)
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs",
                          functionals=["logf33"])
        with pytest.raises(RenderError, match="logf33"):
            render_heatmaps(spec)

    def test_ragged_csv_named(self, tmp_path):
        run = make_run_dir(tmp_path)
        lines = (run / "logf11.csv").read_text().splitlines()
        lines[2] = lines[2].rsplit(",", 1)[0]
        (run / "logf11.csv").write_text("\n".join(lines) + "\n")
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        with pytest.raises(RenderError, match="ragged row 3"):
            render_heatmaps(spec)

    def test_discovery_skips_bands(self, tmp_path):
        run = make_run_dir(tmp_path)
        write_grid(run / "logf11_lo.csv", np.arange(1, 13), np.linspace(0, 0.5, 9),
                   np.zeros((12, 9)))
        write_grid(run / "f11.csv", np.arange(1, 13), np.linspace(0, 0.5, 9),
                   np.ones((12, 9)))
        assert discover_functionals(run) == ["logf11", "logf22", "rho21"]


class TestChangepoints:
    def test_renders_table_shaped_pm(self, tmp_path):
        run = make_run_dir(tmp_path)
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out,) = render_changepoints(spec)
        img = Image.open(out)
        assert img.text["grid-rows"] == "4"   # pm entries
        assert img.text["grid-cols"] == "3"   # histograms

    def test_point_mass_pm(self, tmp_path):
        run = make_run_dir(tmp_path)
        (run / "pm.json").write_text(json.dumps(
            {"max_segments": 3, "pm": {"1": 1.0, "2": 0.0, "3": 0.0}}))
        (run / "ploc.json").write_text(json.dumps({"entries": []}))
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out,) = render_changepoints(spec)
        assert out.exists()

    def test_flat_histogram(self, tmp_path):
        run = make_run_dir(tmp_path)
        (run / "ploc.json").write_text(json.dumps({"entries": [
            {"m": 2, "q": 1, "positions": list(range(60, 90)),
             "probs": [1 / 30] * 30}]}))
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (out,) = render_changepoints(spec)
        assert out.exists()

    def test_malformed_json(self, tmp_path):
        run = make_run_dir(tmp_path)
        (run / "pm.json").write_text("{broken")
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        with pytest.raises(RenderError, match="malformed JSON"):
            render_changepoints(spec)

    def test_wrong_schema(self, tmp_path):
        run = make_run_dir(tmp_path)
        (run / "pm.json").write_text(json.dumps({"masses": [1.0]}))
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        with pytest.raises(RenderError, match="schema"):
            render_changepoints(spec)


class TestCli:
    def test_main_renders_both(self, tmp_path, capsys):
        run = make_run_dir(tmp_path)
        out = tmp_path / "figs"
        assert main(["--in", str(run), "--out", str(out)]) == 0
        assert (out / "heatmaps.png").exists()
        assert (out / "changepoints.png").exists()

    def test_main_reports_errors(self, tmp_path, capsys):
        assert main(["--in", str(tmp_path / "nope"), "--out", str(tmp_path / "f")]) == 1
        assert "error" in capsys.readouterr().err


class TestAgainstPrimaryRun:
    def test_renders_real_primary_outputs(self, tmp_path):
        # integration against the actual estimation pipeline when present
        pytest.importorskip("specseg")
        from specseg import cli as primary_cli

        cfg = {
            "input": {"generator": {"name": "piecewise_vma", "n_samples": 300, "seed": 2}},
            "prior": {"n_min": 60, "max_segments": 3},
            "sampler": {"iterations": 150, "burn_in": 50, "seed": 1, "s_trunc": 6,
                        "leapfrog_steps": 4, "consistency_check_every": 100},
            "output": {"n_freq": 15, "n_time": 40},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        run = tmp_path / "run"
        assert primary_cli.main(["analyze", "--config", str(cfg_path),
                                 "--out", str(run)]) == 0
        spec = FigureSpec(input_dir=run, out_dir=tmp_path / "figs")
        (heat,) = render_heatmaps(spec)
        (cp,) = render_changepoints(spec)
        img = Image.open(heat)
        t, f, grid = read_grid_csv(run / "logf11.csv")
        assert img.text["grid-rows"] == str(grid.shape[0])
        assert img.text["grid-cols"] == str(grid.shape[1])
        assert Image.open(cp).size[0] > 0
