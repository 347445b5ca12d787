"""Command line interface: analyze, simulate, ase, summarize.

A run is described by a JSON config (flags override file values); the fully
resolved config is echoed to ``manifest.json`` so any run can be reproduced
bit-for-bit with ``specseg analyze --config manifest.json``.

Output directory layout (per replicate when ``replicates > 1``):

    <name>.csv            functional grids, time in first column, frequency
                          in the first row (f11.csv, logf11.csv, rho21.csv, ...)
    <name>_lo.csv/_hi.csv pointwise credible bands for log-spectra/coherences
    pm.json               posterior of the number of segments
    ploc.json             conditional breakpoint histograms
    diagnostics.json      acceptance rates, divergences, runtime per iteration
    manifest.json         resolved config (top level only)
    snapshots.jsonl.gz    optional chain dump for `specseg summarize`

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import gzip
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import posterior as post
from . import simgen
from .errors import (
    ConfigError,
    DataError,
    InvalidArgumentError,
    InvalidStateError,
    NumericalError,
    SpecsegError,
)
from .model import MultivariateSeries, Partition, SegmentCoefficients
from .priors import PriorConfig
from .sampler import ChainState, SamplerConfig, run_chain

FLOAT_FMT = "%.17g"

DEFAULT_CONFIG = {
    "input": {},
    "prior": {"n_min": 60, "kappa": 1e5, "sigma_alpha_sq": 1e4, "max_segments": None},
    "sampler": {
        "iterations": 10000,
        "burn_in": 2000,
        "seed": 0,
        "prob_birth": 0.5,
        "leapfrog_steps": 20,
        "step_size": 0.01,
        "step_size_jitter": 0.2,
        "target_accept": 0.8,
        "relocate_local_prob": 0.75,
        "relocate_window": 25,
        "consistency_check_every": 500,
        "thin": 1,
        "s_trunc": 10,
        "flat_likelihood": False,
    },
    "output": {"dir": None, "n_freq": 51, "n_time": None, "level": 0.95,
               "dump_snapshots": False},
    "replicates": 1,
}

GENERATORS = ("piecewise_vma", "slowvarying_vma", "piecewise_var")


# ----------------------------------------------------------------- config I/O

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(file_cfg) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, file_cfg)
    return _merge(cfg, overrides)


def resolve_output_dir(cfg: dict, flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    if cfg["output"].get("dir"):
        return Path(cfg["output"]["dir"])
    root = os.environ.get("SPECSEG_OUT", "specseg-out")
    return Path(root) / "run"


def build_prior(cfg: dict, n_samples: int) -> PriorConfig:
    prior = cfg["prior"]
    max_segments = prior.get("max_segments")
    if max_segments is None:
        max_segments = min(10, n_samples // prior["n_min"])
    return PriorConfig(max_segments=int(max_segments), n_min=int(prior["n_min"]),
                       kappa=float(prior["kappa"]),
                       sigma_alpha_sq=float(prior["sigma_alpha_sq"]))


def build_sampler_config(cfg: dict, seed: int | None = None) -> SamplerConfig:
    s = dict(cfg["sampler"])
    if seed is not None:
        s["seed"] = seed
    try:
        return SamplerConfig(**s)
    except TypeError as exc:
        raise ConfigError(f"bad sampler config: {exc}") from exc


# ------------------------------------------------------------------- data I/O

def load_csv(path, n_min: int | None = None) -> MultivariateSeries:
    """Numeric rectangular CSV (optional single header row) -> series."""
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if row:
                    rows.append(row)
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    if not rows:
        raise DataError(f"{path}: file is empty")

    start = 0
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        start = 1  # single header row
    body = rows[start:]
    if not body:
        raise DataError(f"{path}: no data rows")
    width = len(body[0])
    values = np.empty((len(body), width))
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: row {i + start + 1} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"{path}: non-numeric cell at row {i + start + 1}, column {j + 1}: {cell!r}"
                ) from exc
            if not math.isfinite(values[i, j]):
                raise DataError(
                    f"{path}: non-finite value at row {i + start + 1}, column {j + 1}"
                )
    if n_min is not None and values.shape[0] < 2 * n_min:
        raise DataError(
            f"{path}: series length {values.shape[0]} is below 2 * n_min = {2 * n_min}"
        )
    return MultivariateSeries(values)


def write_series_csv(path, series: MultivariateSeries) -> None:
    header = ",".join(f"x{j + 1}" for j in range(series.n_dim))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in series.values:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def write_grid_csv(path, time_points, freq_points, grid) -> None:
    grid = np.asarray(grid)
    with open(path, "w") as fh:
        fh.write("time," + ",".join(FLOAT_FMT % w for w in freq_points) + "\n")
        for t, row in zip(time_points, grid):
            fh.write(FLOAT_FMT % t + "," + ",".join(FLOAT_FMT % v for v in row) + "\n")


def read_grid_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"grid file not found: {path}") from exc
    if len(rows) < 2 or len(rows[0]) < 2:
        raise DataError(f"{path}: not a grid CSV")
    try:
        freq = np.array([float(v) for v in rows[0][1:]])
        time = np.array([float(r[0]) for r in rows[1:]])
        width = len(rows[0])
        for i, r in enumerate(rows[1:]):
            if len(r) != width:
                raise DataError(f"{path}: ragged row {i + 2}")
        grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric grid cell: {exc}") from exc
    return time, freq, grid


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def pm_payload(pm: np.ndarray) -> dict:
    return {"max_segments": len(pm),
            "pm": {str(k + 1): float(p) for k, p in enumerate(pm)}}


def ploc_payload(ploc: dict) -> dict:
    entries = []
    for (k, q), (positions, probs) in sorted(ploc.items()):
        entries.append({"m": int(k), "q": int(q),
                        "positions": [int(p) for p in positions],
                        "probs": [float(p) for p in probs]})
    return {"entries": entries}


# -------------------------------------------------------------- snapshot dump

def dump_snapshots(path, snapshots, prior: PriorConfig, series: MultivariateSeries) -> None:
    header = {
        "n_samples": series.n_samples,
        "n_dim": series.n_dim,
        "s_trunc": snapshots[0].coeffs.s_trunc,
        "max_segments": prior.max_segments,
    }
    with gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0) as gz:
        gz.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for state in snapshots:
            rec = {
                "iteration": state.iteration,
                "delta": list(state.partition.delta),
                "phi": [sorted(s) for s in state.partition.phi],
                "vectors": [[v.tolist() for v in per] for per in state.coeffs.vectors],
                "lambdas": [list(per) for per in state.coeffs.lambdas],
                "seg_loglik": state.seg_loglik.tolist(),
            }
            gz.write((json.dumps(rec, sort_keys=True) + "\n").encode())


def load_snapshots(path):
    try:
        with gzip.open(path, "rt") as fh:
            lines = [line for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise DataError(f"snapshot dump not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"snapshot dump unreadable: {exc}") from exc
    if not lines:
        raise DataError("snapshot dump is empty")
    header = json.loads(lines[0])
    snapshots = []
    for line in lines[1:]:
        rec = json.loads(line)
        partition = Partition(delta=tuple(rec["delta"]),
                              phi=tuple(frozenset(s) for s in rec["phi"]),
                              n_dim=header["n_dim"])
        coeffs = SegmentCoefficients(
            n_dim=header["n_dim"], s_trunc=header["s_trunc"],
            vectors=tuple(tuple(np.asarray(v) for v in per) for per in rec["vectors"]),
            lambdas=tuple(tuple(per) for per in rec["lambdas"]),
        )
        ll = np.asarray(rec["seg_loglik"])
        ll.setflags(write=False)
        snapshots.append(ChainState(partition=partition, coeffs=coeffs,
                                    seg_loglik=ll, iteration=rec["iteration"]))
    return header, snapshots


# ------------------------------------------------------------------ pipelines

def make_input_series(cfg: dict, rep: int = 0):
    """Returns (series, truth_spec or None) for one replicate."""
    inp = cfg["input"]
    if "path" in inp and inp["path"]:
        series = load_csv(inp["path"], n_min=cfg["prior"]["n_min"])
        return series, None
    gen = inp.get("generator")
    if not gen or gen.get("name") not in GENERATORS:
        raise ConfigError("input must give a CSV 'path' or a known 'generator'")
    seed = int(gen.get("seed", 0)) + rep
    rng = np.random.default_rng(seed)
    name = gen["name"]
    if name == "piecewise_vma":
        spec = simgen.make_piecewise_vma_spec(int(gen.get("n_samples", 600)))
        return simgen.simulate_vma(spec, rng), spec
    if name == "slowvarying_vma":
        spec = simgen.make_slowvarying_vma_spec(int(gen.get("n_samples", 1024)))
        return simgen.simulate_vma(spec, rng), spec
    spec = simgen.make_piecewise_var_spec(float(gen.get("scale", 1.0)),
                                          n_min=int(cfg["prior"]["n_min"]))
    return simgen.simulate_var(spec, rng), spec


def output_grids(cfg: dict, n_samples: int):
    n_time = cfg["output"].get("n_time") or n_samples
    n_freq = int(cfg["output"]["n_freq"])
    if int(n_time) == n_samples:
        time_grid = np.arange(1, n_samples + 1, dtype=float)
    else:
        time_grid = np.linspace(1.0, float(n_samples), int(n_time))
    freq_grid = np.linspace(0.0, 0.5, n_freq)
    return time_grid, freq_grid


def write_summary_outputs(out_dir: Path, summary: post.PosteriorSummary,
                          diagnostics: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    tp, fp = summary.time_points, summary.freq_points
    for name, grid in sorted(summary.functional_means.items()):
        write_grid_csv(out_dir / f"{name}.csv", tp, fp, grid)
    for name, (lo, hi) in sorted(summary.bands.items()):
        write_grid_csv(out_dir / f"{name}_lo.csv", tp, fp, lo)
        write_grid_csv(out_dir / f"{name}_hi.csv", tp, fp, hi)
    write_json(out_dir / "pm.json", pm_payload(summary.pm))
    write_json(out_dir / "ploc.json", ploc_payload(summary.ploc))
    if diagnostics is not None:
        write_json(out_dir / "diagnostics.json", diagnostics)


def write_truth_outputs(out_dir: Path, spec, time_grid, freq_grid) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = simgen.truth_grid(spec, time_grid, freq_grid)
    for j in range(1, spec.n_dim + 1):
        write_grid_csv(out_dir / f"f{j}{j}.csv", time_grid, freq_grid,
                       grid.functional(f"f{j}{j}"))
        write_grid_csv(out_dir / f"logf{j}{j}.csv", time_grid, freq_grid,
                       grid.functional(f"logf{j}{j}"))
    for j in range(2, spec.n_dim + 1):
        for k in range(1, j):
            write_grid_csv(out_dir / f"rho{j}{k}.csv", time_grid, freq_grid,
                           grid.functional(f"rho{j}{k}"))


def run_replicate(cfg: dict, rep: int, out_dir: Path) -> dict:
    """Chain + summaries for one replicate; returns the diagnostics dict."""
    series, spec = make_input_series(cfg, rep)
    prior = build_prior(cfg, series.n_samples)
    sampler_cfg = build_sampler_config(cfg, seed=int(cfg["sampler"]["seed"]) + rep)
    snapshots, diag = run_chain(series, prior, sampler_cfg)
    time_grid, freq_grid = output_grids(cfg, series.n_samples)
    summary = post.summarize(snapshots, time_grid, freq_grid,
                             max_segments=prior.max_segments,
                             level=float(cfg["output"]["level"]))
    write_summary_outputs(out_dir, summary, diagnostics=diag.as_dict())
    if spec is not None:
        write_truth_outputs(out_dir / "truth", spec, time_grid, freq_grid)
    if cfg["output"].get("dump_snapshots"):
        dump_snapshots(out_dir / "snapshots.jsonl.gz", snapshots, prior, series)
    return diag.as_dict()


def _replicate_worker(args):
    cfg, rep, out_dir = args
    return run_replicate(cfg, rep, Path(out_dir))


def cmd_analyze(cfg: dict, out_dir: Path, jobs: int = 1) -> int:
    replicates = int(cfg.get("replicates", 1))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "manifest.json", cfg)
    if replicates == 1:
        run_replicate(cfg, 0, out_dir)
    else:
        rep_dirs = [out_dir / f"rep{r:03d}" for r in range(replicates)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(_replicate_worker,
                              [(cfg, r, str(d)) for r, d in enumerate(rep_dirs)]))
        else:
            for r, d in enumerate(rep_dirs):
                run_replicate(cfg, r, d)
    return 0


def cmd_simulate(cfg: dict, out_dir: Path) -> int:
    series, spec = make_input_series(cfg, rep=0)
    if spec is None:
        raise ConfigError("simulate requires a generator input")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "manifest.json", cfg)
    write_series_csv(out_dir / "series.csv", series)
    time_grid, freq_grid = output_grids(cfg, series.n_samples)
    write_truth_outputs(out_dir / "truth", spec, time_grid, freq_grid)
    return 0


def ase_table(estimate_dir: Path, truth_dir: Path) -> list[tuple[str, float]]:
    names = sorted(p.stem for p in Path(truth_dir).glob("*.csv")
                   if not p.stem.endswith(("_lo", "_hi")) and not p.stem.startswith("logf"))
    if not names:
        raise DataError(f"no functional grids found in {truth_dir}")
    out = []
    for name in names:
        est_path = Path(estimate_dir) / f"{name}.csv"
        true_path = Path(truth_dir) / f"{name}.csv"
        t1, f1, g1 = read_grid_csv(est_path)
        t2, f2, g2 = read_grid_csv(true_path)
        if g1.shape != g2.shape or not np.allclose(t1, t2) or not np.allclose(f1, f2):
            raise DataError(f"grids for {name} are not congruent")
        out.append((name, post.ase_grids(g1, g2)))
    return out


def cmd_ase(estimate_dir: Path, truth_dir: Path) -> int:
    table = ase_table(estimate_dir, truth_dir)
    print(f"{'functional':<12}{'ASE':>14}{'ASE x 100':>14}")
    for name, value in table:
        print(f"{name:<12}{value:>14.6g}{100.0 * value:>14.6g}")
    return 0


def cmd_summarize(dump_path: Path, out_dir: Path, n_freq: int = 51,
                  n_time: int | None = None, level: float = 0.95) -> int:
    header, snapshots = load_snapshots(dump_path)
    if not snapshots:
        raise DataError("snapshot dump holds no states")
    cfg = {"output": {"n_time": n_time, "n_freq": n_freq, "level": level}}
    time_grid, freq_grid = output_grids(cfg, header["n_samples"])
    summary = post.summarize(snapshots, time_grid, freq_grid,
                             max_segments=header["max_segments"], level=level)
    write_summary_outputs(Path(out_dir), summary)
    return 0


# ------------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specseg",
        description="Adaptive Bayesian time-varying spectrum estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override sampler seed")

    p_an = sub.add_parser("analyze", help="run the sampler and write summaries")
    add_common(p_an)
    p_an.add_argument("--jobs", type=int, default=1, help="parallel replicates")
    p_an.add_argument("--input", help="input CSV path (overrides config)")
    p_an.add_argument("--iterations", type=int)
    p_an.add_argument("--burn-in", type=int, dest="burn_in")

    p_sim = sub.add_parser("simulate", help="write a generated series and its true spectra")
    add_common(p_sim)
    p_sim.add_argument("--generator", choices=GENERATORS)

    p_ase = sub.add_parser("ase", help="average squared error between two output grids")
    p_ase.add_argument("estimate_dir")
    p_ase.add_argument("truth_dir")

    p_sum = sub.add_parser("summarize", help="recompute summaries from a snapshot dump")
    p_sum.add_argument("dump")
    p_sum.add_argument("--out", required=True)
    p_sum.add_argument("--n-freq", type=int, default=51)
    p_sum.add_argument("--n-time", type=int, default=None)
    p_sum.add_argument("--level", type=float, default=0.95)
    return parser


def _config_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("sampler", {})["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides.setdefault("sampler", {})["iterations"] = args.iterations
    if getattr(args, "burn_in", None) is not None:
        overrides.setdefault("sampler", {})["burn_in"] = args.burn_in
    if getattr(args, "input", None):
        overrides["input"] = {"path": args.input}
    if getattr(args, "generator", None):
        overrides["input"] = {"generator": {"name": args.generator}}
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ase":
            return cmd_ase(Path(args.estimate_dir), Path(args.truth_dir))
        if args.command == "summarize":
            return cmd_summarize(Path(args.dump), Path(args.out),
                                 n_freq=args.n_freq, n_time=args.n_time,
                                 level=args.level)
        cfg = load_config(args.config, _config_overrides(args))
        out_dir = resolve_output_dir(cfg, args.out)
        cfg["output"]["dir"] = str(out_dir)
        if args.command == "analyze":
            return cmd_analyze(cfg, out_dir, jobs=args.jobs)
        return cmd_simulate(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidArgumentError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (InvalidStateError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SpecsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
