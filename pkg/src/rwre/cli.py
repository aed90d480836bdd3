"""Command line: configure, validate and run experiments, persist results.

Usage:
    rwre <experiment> --config cfg.json [--seed N] [--workers K] [--out DIR]
    rwre validate --config cfg.json

The config file is JSON whose keys mirror the experiment parameters (see
README).  Environment variables prefixed RWRE_ override config keys, e.g.
RWRE_SEED=7 or RWRE_WALKERS=1000.  Every output data row carries the config
hash and master seed; rerunning an identical config reproduces every data
file byte for byte, independently of --workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments
from .errors import ConfigurationError, RwreError
from .regeneration import level_spacing
from .reporting import (ARTIFACT_VERSION, RunManifest, checksum_outputs,
                        config_hash, figure_heatmap, figure_scatter,
                        figure_series, write_csv, write_json)

ENV_PREFIX = "RWRE_"


def load_config(path: str | None) -> dict:
    cfg = {}
    if path:
        with open(path) as fh:
            cfg = json.load(fh)
    for key, val in os.environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            try:
                cfg[name] = json.loads(val)
            except json.JSONDecodeError:
                cfg[name] = val
    return cfg


def validate(config: dict) -> list:
    """Static diagnostics: violated parameter constraints, without running."""
    diags = []
    exp = config.get("experiment")
    if exp is not None and exp not in experiments.EXPERIMENTS:
        diags.append(f"unknown experiment {exp!r}; choose from "
                     f"{', '.join(experiments.EXPERIMENTS)}")
    d = int(config.get("d", 2))
    kappa = config.get("kappa")
    if kappa is not None and float(kappa) > 1.0 / (2 * d) + 1e-15:
        diags.append(f"kappa <= 1/(2d) required: kappa={kappa}, d={d}")
    try:
        experiments.model_from_config(config)
    except ConfigurationError as exc:
        diags.append(f"model: {exc}")
    lam = config.get("lam")
    if lam is not None and not (0 <= float(lam) < 1):
        diags.append(f"lam must lie in [0, 1): {lam}")
    if lam and float(lam) > 0:
        ell = config.get("ell", [1.0] + [0.0] * (d - 1))
        if abs(float(np.linalg.norm(ell)) - 1.0) > 1e-12:
            diags.append(f"|ell| must be 1: {ell}")
        elif ell[0] and config.get("experiment") in ("regen", "hitting"):
            lam1 = level_spacing(float(lam), float(ell[0]))
            if abs(round(0.5 / lam1) - 0.5 / lam1) > 1e-9:
                diags.append("0.5/lambda1 must be an integer")
    beta = config.get("beta")
    c1 = config.get("c1_estimate")
    if beta is not None and c1 is not None and float(beta) >= float(c1):
        diags.append(
            f"beta={beta} must stay below the conditioned-law domination "
            f"constant estimate c1={c1}")
    if config.get("experiment") == "simulate" and float(config.get("lam", 0)) > 0:
        horizon = config.get("steps", 10_000)
        if float(horizon) < 10 / float(config["lam"]) ** 2:
            diags.append("steps must be at least 10 / lam^2 for velocity runs")
    W = config.get("W")
    if W is not None and int(W) < 8:
        diags.append(f"slab half-width W={W} is too small to hold any law")
    return diags


def run(config: dict, out_dir: str | Path) -> RunManifest:
    """Execute one experiment config and write CSV + JSON + figures + manifest."""
    exp = config.get("experiment")
    if exp not in experiments.EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {exp!r}")
    diags = validate(config)
    if diags:
        raise ConfigurationError("; ".join(diags))
    seed = int(config.get("seed", 0))
    workers = int(config.get("workers", 1))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the hash identifies the scientific content; execution knobs (worker
    # count, output location) must not change a single output byte
    chash = config_hash({k: v for k, v in sorted(config.items())
                         if k not in ("workers", "out")})
    t0 = time.perf_counter()
    runner = experiments.RUNNERS[exp]
    try:
        result = runner(config, seed, workers)
    except Exception as exc:
        manifest = RunManifest(
            config_hash=chash, experiment=exp,
            artifact_version=ARTIFACT_VERSION, seed=seed, workers=workers,
            wall_time_s=time.perf_counter() - t0, task_seeds=[],
            outputs={}, status="failed",
            error=f"{type(exc).__name__}: {exc}")
        manifest.write(out / "manifest.json")
        raise
    rows, report = result[0], result[1]
    extra = result[2] if len(result) > 2 else None
    for row in rows:
        row["config_hash"] = chash
        row["seed"] = seed
    names = []
    csv_path = out / f"{exp}.csv"
    write_csv(csv_path, rows)
    names.append(csv_path.name)
    report_path = out / "report.json"
    write_json(report_path, {"experiment": exp, "config_hash": chash,
                             "seed": seed, "report": report})
    names.append(report_path.name)
    if exp == "phi" and extra:
        header = json.dumps({"d": int(config.get("d", 2)),
                             "rows": report["rows"]}, sort_keys=True)
        np.savez(out / "phi_grids.npz", header=header,
                 **{k: v for k, v in extra.items()})
        names.append("phi_grids.npz")
    if exp == "percolation" and extra:
        for row in extra:
            row["config_hash"] = chash
            row["seed"] = seed
        write_csv(out / "clusters.csv", extra)
        names.append("clusters.csv")
    fig_names = _render_figures(exp, rows, report, extra, out)
    if exp == "simulate" and report.get("level_stats"):
        lrows = [dict(r, config_hash=chash, seed=seed)
                 for r in report["level_stats"]]
        write_csv(out / "level_stats.csv", lrows)
        names.append("level_stats.csv")
    manifest = RunManifest(
        config_hash=chash, experiment=exp, artifact_version=ARTIFACT_VERSION,
        seed=seed, workers=workers, wall_time_s=time.perf_counter() - t0,
        task_seeds=[int(s) for s in report.get("task_seeds", [])],
        outputs=checksum_outputs(out, names + fig_names))
    manifest.write(out / "manifest.json")
    return manifest


def _render_figures(exp, rows, report, extra, out: Path) -> list:
    figs = Path(out) / "figures"
    figs.mkdir(exist_ok=True)
    names = []

    def add(name):
        names.append(f"figures/{name}")

    if exp == "phi" and extra:
        key = sorted(extra.keys())[0]
        grid = extra[key]
        if grid.ndim == 2:
            figure_heatmap(figs / "phi_density.png", grid,
                           f"stationary density ({key})")
            add("phi_density.png")
    elif exp == "einstein":
        for axis in {r["axis"] for r in rows}:
            pts = [r for r in rows
                   if r["axis"] == axis and r["flavor"] == "annealed"]
            ts = sorted({r["t"] for r in pts})
            series = []
            for t in ts:
                sub = sorted((r for r in pts if r["t"] == t),
                             key=lambda r: r["lam"])
                series.append({"label": f"t={t}",
                               "x": [r["lam"] for r in sub],
                               "y": [r["estimate"] for r in sub],
                               "yerr": [r["ci3"] for r in sub]})
            if pts:
                series.append({"label": "diffusivity",
                               "x": [min(r['lam'] for r in pts),
                                     max(r['lam'] for r in pts)],
                               "y": [pts[0]["d_ell"]] * 2})
            figure_series(figs / f"response_axis{axis}.png", series,
                          "tilt strength", "rescaled mean displacement",
                          f"linear response, axis {axis}")
            add(f"response_axis{axis}.png")
    elif exp == "percolation":
        pts = sorted(rows, key=lambda r: r["n"])
        pts = [r for r in pts if r["q"] > 0]
        if pts:
            figure_series(figs / "reach_decay.png",
                          [{"label": "q_n", "x": [r["n"] for r in pts],
                            "y": [r["q"] for r in pts],
                            "yerr": [r["ci3"] for r in pts]}],
                          "n", "reach probability", "cluster reach decay",
                          logy=True)
            add("reach_decay.png")
    elif exp == "harnack":
        per_R = report.get("per_R", {})
        Rs = sorted(per_R, key=float)
        figure_series(figs / "harnack_ratios.png",
                      [{"label": "instances",
                        "x": [r["R"] for r in rows],
                        "y": [r["ratio"] for r in rows]},
                       {"label": "max per R",
                        "x": [float(R) for R in Rs],
                        "y": [per_R[R]["max_ratio"] for R in Rs]}],
                      "ball radius", "max/min over inner ball",
                      "Harnack ratios")
        add("harnack_ratios.png")
    elif exp == "maxprinciple":
        with_rhs = [r for r in rows if r["with_rhs"]]
        if with_rhs:
            figure_scatter(figs / "bound_scatter.png",
                           [r["rhs_bound"] for r in with_rhs],
                           [r["max_interior"] for r in with_rhs],
                           "bound", "interior max",
                           "maximum principle bound", diagonal=True)
            add("bound_scatter.png")
    elif exp == "regen":
        taus = [r["tau"] for r in rows]
        if taus:
            fig_rows = np.sort(np.asarray(taus, dtype=float))
            figure_series(figs / "regen_times.png",
                          [{"label": "tau_k (pooled)",
                            "x": list(range(1, len(fig_rows) + 1)),
                            "y": fig_rows.tolist()}],
                          "order statistic", "time",
                          "regeneration times", logy=True)
            add("regen_times.png")
    elif exp == "hitting":
        r = rows[0]
        figure_series(figs / "hitting.png",
                      [{"label": "exact", "x": [r["n"]], "y": [r["exact"]]},
                       {"label": "mc", "x": [r["n"]], "y": [r["mc"]],
                        "yerr": [r["mc_ci3"]]}],
                      "n", "P(up n before down m)", "level hitting check")
        add("hitting.png")
    elif exp == "simulate":
        for axis in {r["axis"] for r in rows}:
            sub = [r for r in rows if r["axis"] == axis]
            figure_series(figs / f"variance_axis{axis}.png",
                          [{"label": "var/t",
                            "x": [r["time"] for r in sub],
                            "y": [r["var_per_step"] for r in sub]}],
                          "time", "variance per step",
                          f"diffusive scaling, axis {axis}", logx=True)
            add(f"variance_axis{axis}.png")
    elif exp == "diffusivity":
        figure_scatter(figs / "diffusivity_seeds.png",
                       [r["seed_index"] for r in rows],
                       [r["diag"] for r in rows],
                       "seed index", "diagonal entry", "diffusivity by seed")
        add("diffusivity_seeds.png")
    return names


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rwre",
        description="random walks in balanced random environments: "
                    "simulation and verification experiments")
    parser.add_argument("experiment",
                        choices=list(experiments.EXPERIMENTS) + ["validate"])
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default="out")
    args = parser.parse_args(argv)
    config = load_config(args.config)
    if args.experiment != "validate":
        config["experiment"] = args.experiment
    if args.seed is not None:
        config["seed"] = args.seed
    if args.workers is not None:
        config["workers"] = args.workers
    if args.experiment == "validate":
        diags = validate(config)
        print(json.dumps({"diagnostics": diags}, indent=1))
        return 0
    try:
        manifest = run(config, Path(args.out) / args.experiment)
    except RwreError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    print(json.dumps({"status": manifest.status,
                      "config_hash": manifest.config_hash,
                      "outputs": sorted(manifest.outputs)}, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
