"""Command-line entry point ``psdg``.

    psdg mesh-gen --config run.ini
    psdg run --config run.ini
    psdg convergence --config run.ini --mode spatial|temporal

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
``PSDG_THREADS`` caps the number of worker processes used by sweeps.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from .config import ConfigError, RunConfig, parse_config
from .experiments import cached_mesh, run_case, subtract_floor
from .mesh import PolyMesh, classify_boundary, load_mesh, regularity_report, save_mesh
from .postproc import (EnergyErrorProbe, VelocityAccumulator, convergence_rates, export_csv,
                       export_vtk)
from .solver import Problem, TimeIntegrator, run
from .space import DgSpace

log = logging.getLogger("psdg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
THREADS_ENV = "PSDG_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and cfg.source_path is not None:
        p = Path(cfg.source_path).resolve().parent / p
    return p


def build_mesh(cfg: RunConfig, n_elements: int | None = None) -> PolyMesh:
    scenario = cfg.build_scenario()
    if cfg.mesh_source == "file":
        mesh = load_mesh(_resolve(cfg, cfg.mesh_path), domain=scenario.domain)
    else:
        mesh = cached_mesh(scenario.domain, n_elements or cfg.n_elements, cfg.lloyd_iters, cfg.seed)
    return mesh


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, data: dict) -> None:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return str(o)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=default) + "\n", encoding="utf-8")


def _environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


# --------------------------------------------------------------------------
# mesh-gen

def cmd_mesh_gen(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    scenario = cfg.build_scenario()
    mesh = classify_boundary(build_mesh(cfg), scenario.classifier)
    out = _out_dir(cfg)
    save_mesh(mesh, out / "mesh.txt")
    ratios = regularity_report(mesh)
    meta = {"config": cfg.as_dict(), "n_elements": mesh.n_elements, "n_faces": mesh.n_faces,
            "n_vertices": len(mesh.vertices), "h": mesh.h, "h_mean": mesh.h_mean,
            "area": mesh.area, "regularity_min": float(ratios.min()),
            "lloyd": mesh.meta.get("lloyd"), "wall_time": time.perf_counter() - t0,
            "environment": _environment()}
    _write_json(out / "mesh_metadata.json", meta)
    log.info("wrote %s (%d elements, h=%.4g)", out / "mesh.txt", mesh.n_elements, mesh.h)
    return EXIT_OK


# --------------------------------------------------------------------------
# run

class VtkProbe:
    """Writes a snapshot every ``every`` steps (and at the final step)."""

    def __init__(self, space, out: Path, every: int, n_steps: int, velocity=None):
        self.space, self.out, self.every, self.n_steps = space, out, every, n_steps
        self.velocity = velocity
        self.written: list[str] = []

    def __call__(self, n, t, x):
        if n % self.every and n != self.n_steps:
            return
        data = {"velocity": self.velocity.u} if self.velocity is not None else None
        path = self.out / f"snapshot_{n:06d}.vtk"
        export_vtk(self.space, path, x, data, title=f"sigma_h at t={t:.6g}")
        self.written.append(path.name)


def cmd_run(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    scenario = cfg.build_scenario()
    integ = cfg.integrator
    out = _out_dir(cfg)
    mesh = build_mesh(cfg)
    extra = []
    cmesh = classify_boundary(mesh, scenario.classifier)
    space = DgSpace(cmesh, cfg.degree)
    vel = VelocityAccumulator(space, scenario, integ.dt) if cfg.recovery else None
    if vel is not None:
        extra.append(vel)
    vtk = None
    if cfg.vtk_every > 0:
        vtk = VtkProbe(space, out, cfg.vtk_every, integ.n_steps, vel)
        extra.append(vtk)
    res = _run_on_space(space, scenario, cfg, extra)
    hist = res["history"]
    x = hist.final
    point_data = {"velocity": vel.u} if vel is not None else None
    export_vtk(space, out / "final.vtk", x, point_data, title=f"sigma_h at T={cfg.T:.6g}")
    if not np.all(np.isfinite(x)) or (vel is not None and not np.all(np.isfinite(vel.u))):
        raise RuntimeError("non-finite values in the final fields")
    meta = {
        "config": cfg.as_dict(), "environment": _environment(),
        "n_elements": cmesh.n_elements, "h": cmesh.h, "h_mean": cmesh.h_mean,
        "n_dofs": space.n_dofs, "quad_order": space.quad_order, "n_steps": integ.n_steps,
        "theta_validated": integ.validated,
        "solver": {"method": cfg.solver_method, "iterations_total": int(sum(hist.iterations)),
                   "iterations_max": int(max(hist.iterations, default=0)),
                   "iterations_mean": float(np.mean(hist.iterations)) if hist.iterations else 0.0},
        "setup_time": hist.setup_time, "solve_time": hist.wall_time,
        "wall_time": time.perf_counter() - t0,
        "vtk_files": (vtk.written if vtk else []) + ["final.vtk"],
    }
    rep = res["report"]
    if rep is not None:
        row = {"h": cmesh.h, "p": cfg.degree, "dt": cfg.dt, "err_energy": rep.energy,
               "err_dev_max": rep.err_dev_max, "err_div": rep.err_div, "rate": math.nan}
        export_csv([row], out / "errors.csv")
        meta["errors"] = {k: row[k] for k in ("err_energy", "err_dev_max", "err_div")}
    if not integ.validated:
        meta["warning"] = f"theta={cfg.theta} is unvalidated (validated: 1/2, 1)"
    _write_json(out / "metadata.json", meta)
    log.info("run finished in %.1fs, %d dofs", meta["wall_time"], space.n_dofs)
    return EXIT_OK


def _run_on_space(space, scenario, cfg: RunConfig, extra) -> dict:
    probes = list(extra)
    rep = None
    if cfg.errors and scenario.has_exact:
        rep = EnergyErrorProbe(space, scenario, cfg.dt, cfg.penalty)
        probes.insert(0, rep)
    problem = Problem(space, scenario, cfg.penalty)
    hist = run(space, scenario, cfg.integrator, cfg.solve_options, probes, cfg.penalty,
               store="final", problem=problem)
    return {"history": hist, "report": rep.report if rep else None}


# --------------------------------------------------------------------------
# convergence

def _point(cfg: RunConfig, p: int, n_elements: int, theta: float, dt: float) -> dict:
    """One sweep point; returns plain numbers so it can cross process boundaries."""
    try:
        scenario = cfg.build_scenario()
        if not scenario.has_exact:
            raise ValueError(f"scenario {scenario.name!r} has no exact solution for error sweeps")
        mesh = build_mesh(cfg, n_elements)
        r = run_case(mesh, scenario, p, TimeIntegrator(theta, dt, cfg.T), cfg.penalty,
                     cfg.solve_options)
        rep = r.report
        return {"ok": True, "p": p, "theta": theta, "dt": dt, "n_elements": r.n_elements,
                "h": r.h, "h_mean": r.h_mean, "n_dofs": r.n_dofs, "err_energy": rep.energy,
                "err_dev_max": rep.err_dev_max, "err_div": rep.err_div, "wall_time": r.wall_time}
    except Exception as exc:  # recorded per point; the sweep continues
        return {"ok": False, "p": p, "theta": theta, "dt": dt, "n_elements": n_elements,
                "error": f"{type(exc).__name__}: {exc}"}


def _map_points(cfg: RunConfig, jobs: list[tuple]) -> list[dict]:
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [_point(cfg, *j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_point, [cfg] * len(jobs), *zip(*jobs)))


def _write_dat(path: Path, series: list[tuple[str, list[float], list[float], list[float]]]) -> None:
    lines = ["# gnuplot data: use 'index i' to select a series; columns x err rate"]
    for k, (label, xs, es, rs) in enumerate(series):
        if k:
            lines += ["", ""]
        lines.append(f"# {label}")
        for x, e, r in zip(xs, es, rs):
            lines.append(f"{x:.12g} {e:.12g} {'nan' if math.isnan(r) else f'{r:.12g}'}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_convergence(cfg: RunConfig, mode: str) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    rows, series, failures = [], [], []
    meta: dict = {"config": cfg.as_dict(), "mode": mode, "environment": _environment()}
    if mode == "spatial":
        if cfg.mesh_source != "generate":
            raise ConfigError("spatial sweeps need generated meshes", key="mesh.source")
        if not cfg.sweep_n_elements or len(cfg.sweep_n_elements) < 2:
            raise ConfigError("spatial sweep needs at least 2 entries", key="sweep.n_elements")
        degrees = cfg.sweep_degrees or (cfg.degree,)
        jobs = [(p, n, cfg.theta, cfg.dt) for p in degrees for n in cfg.sweep_n_elements]
        results = _map_points(cfg, jobs)
        key = "h_mean" if cfg.h_measure == "mean" else "h"
        for p in degrees:
            pts = [r for r in results if r["p"] == p]
            ok = [r for r in pts if r["ok"]]
            failures += [r for r in pts if not r["ok"]]
            table = convergence_rates([r[key] for r in ok], [r["err_energy"] for r in ok])
            for r, rate in zip(ok, table.rates):
                rows.append({"h": r[key], "p": p, "dt": r["dt"], "err_energy": r["err_energy"],
                             "err_dev_max": r["err_dev_max"], "err_div": r["err_div"], "rate": rate})
            series.append((f"p={p}", list(table.x), list(table.err), list(table.rates)))
        meta["points"] = results
        export_csv(rows, out / "convergence_spatial.csv")
        _write_dat(out / "convergence_spatial.dat", series)
    elif mode == "temporal":
        if not cfg.sweep_dts or len(cfg.sweep_dts) < 2:
            raise ConfigError("temporal sweep needs at least 2 entries", key="sweep.dts")
        dts = sorted(cfg.sweep_dts, reverse=True)
        floor_dt = min(dts) / cfg.floor_refine
        jobs = [(cfg.degree, cfg.n_elements, 0.5, floor_dt)]
        jobs += [(cfg.degree, cfg.n_elements, th, dt) for th in cfg.sweep_thetas for dt in dts]
        results = _map_points(cfg, jobs)
        floor_res, results = results[0], results[1:]
        if not floor_res["ok"]:
            failures.append(floor_res)
            floor = 0.0
        else:
            floor = floor_res["err_energy"]
        meta["floor"] = {"dt": floor_dt, "err_energy": floor}
        for th in cfg.sweep_thetas:
            pts = [r for r in results if r["theta"] == th]
            ok = [r for r in pts if r["ok"]]
            failures += [r for r in pts if not r["ok"]]
            corrected = subtract_floor([r["err_energy"] for r in ok], floor)
            table = convergence_rates([r["dt"] for r in ok], corrected)
            th_rows = [{"h": r["h"], "p": r["p"], "dt": r["dt"], "err_energy": r["err_energy"],
                        "err_dev_max": r["err_dev_max"], "err_div": r["err_div"], "rate": rate}
                       for r, rate in zip(ok, table.rates)]
            rows += th_rows
            export_csv(th_rows, out / f"convergence_temporal_theta{th:g}.csv")
            series.append((f"theta={th:g} (floor-corrected error)", list(table.x), list(table.err),
                           list(table.rates)))
        meta["points"] = results
        _write_dat(out / "convergence_temporal.dat", series)
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}", key="--mode")
    meta["failures"] = failures
    meta["wall_time"] = time.perf_counter() - t0
    _write_json(out / f"convergence_{mode}_metadata.json", meta)
    for label, xs, es, rs in series:
        log.info("%s: rates %s", label, ", ".join("-" if math.isnan(r) else f"{r:.3f}" for r in rs))
    if failures:
        for f in failures:
            log.error("failed point %s", f)
        return EXIT_RUNTIME
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psdg", description="PolydG pseudo-stress Stokes solver")
    ap.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("mesh-gen", "generate and save a Voronoi mesh"),
                        ("run", "run a single simulation"),
                        ("convergence", "run a convergence sweep")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="INI configuration file")
        if name == "convergence":
            sp.add_argument("--mode", choices=("spatial", "temporal"), required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        worker_count()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "mesh-gen":
            return cmd_mesh_gen(cfg)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_convergence(cfg, args.mode)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
