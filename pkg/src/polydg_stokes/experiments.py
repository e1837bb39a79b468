"""Single runs and convergence sweeps shared by the CLI and the test-suite."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .assembly import PenaltyParams
from .mesh import Domain, PolyMesh, classify_boundary, generate_voronoi_mesh
from .postproc import (EnergyErrorProbe, ErrorReport, RateTable, StabilityProbe,
                       VelocityAccumulator, convergence_rates)
from .scenarios import Scenario
from .solver import History, Problem, SolveOptions, TimeIntegrator, run
from .space import DgSpace

log = logging.getLogger(__name__)


@lru_cache(maxsize=16)
def cached_mesh(domain: Domain, n_elements: int, lloyd_iters: int, seed: int) -> PolyMesh:
    return generate_voronoi_mesh(domain, n_elements=n_elements, lloyd_iters=lloyd_iters, seed=seed)


@dataclass
class CaseResult:
    """Outcome of one run."""

    n_elements: int
    h: float
    h_mean: float
    p: int
    theta: float
    dt: float
    n_dofs: int
    history: History
    report: ErrorReport | None = None
    stability: StabilityProbe | None = None
    velocity: VelocityAccumulator | None = None
    wall_time: float = 0.0
    space: DgSpace | None = field(default=None, repr=False)


def run_case(mesh: PolyMesh, scenario: Scenario, p: int, integrator: TimeIntegrator,
             params: PenaltyParams = PenaltyParams(), opts: SolveOptions = SolveOptions("lu"),
             errors: bool = True, stability: bool = False, velocity: bool = False,
             store="final", extra_probes: Sequence = ()) -> CaseResult:
    """Classify, build the space, assemble, integrate and attach probes."""
    t0 = time.perf_counter()
    mesh = classify_boundary(mesh, scenario.classifier)
    space = DgSpace(mesh, p)
    probes = list(extra_probes)
    rep = stab = vel = None
    if errors and scenario.has_exact:
        rep = EnergyErrorProbe(space, scenario, integrator.dt, params)
        probes.append(rep)
    if stability:
        stab = StabilityProbe(space, scenario, integrator.dt, params)
        probes.append(stab)
    if velocity:
        vel = VelocityAccumulator(space, scenario, integrator.dt)
        probes.append(vel)
    problem = Problem(space, scenario, params)
    hist = run(space, scenario, integrator, opts, probes, params, store=store, problem=problem)
    res = CaseResult(mesh.n_elements, mesh.h, mesh.h_mean, p, integrator.theta, integrator.dt,
                     space.n_dofs, hist, rep.report if rep else None, stab, vel, time.perf_counter() - t0, space)
    log.info("run n_el=%d p=%d theta=%g dt=%g dofs=%d: %.1fs%s", res.n_elements, p,
             integrator.theta, integrator.dt, space.n_dofs, res.wall_time,
             f", energy error {res.report.energy:.3e}" if res.report else "")
    return res


@dataclass
class SweepPoint:
    p: int
    x: float
    result: CaseResult | None
    error: str | None = None

    @property
    def err(self) -> float:
        return self.result.report.energy if self.result and self.result.report else math.nan


def spatial_sweep(scenario: Scenario, meshes: Sequence[PolyMesh], degrees: Sequence[int],
                  integrator: TimeIntegrator, params: PenaltyParams = PenaltyParams(),
                  opts: SolveOptions = SolveOptions("lu"), stability: bool = False,
                  h_measure: str = "mean"):
    """Energy error for every (degree, mesh); rates against h per degree.

    ``h_measure`` selects the abscissa: ``"mean"`` (mean element diameter)
    or ``"max"``.  On generated Voronoi meshes the maximum is set by a
    single boundary cell and jitters between refinements, which distorts
    the fitted slopes; the mean follows the refinement factor closely.
    """
    if h_measure not in ("mean", "max"):
        raise ValueError("h_measure must be 'mean' or 'max'")
    points: dict[int, list[SweepPoint]] = {}
    for p in degrees:
        points[p] = []
        for m in meshes:
            try:
                r = run_case(m, scenario, p, integrator, params, opts, stability=stability)
                points[p].append(SweepPoint(p, r.h_mean if h_measure == "mean" else r.h, r))
            except Exception as exc:  # recorded, sweep continues
                log.error("sweep point p=%d n_el=%d failed: %s", p, m.n_elements, exc)
                points[p].append(SweepPoint(p, m.h_mean if h_measure == "mean" else m.h, None, str(exc)))
    tables = {p: convergence_rates([q.x for q in pts], [q.err for q in pts])
              for p, pts in points.items()}
    return points, tables


def subtract_floor(err: Sequence[float], floor: float) -> np.ndarray:
    """Remove an independent error contribution assuming squared additivity."""
    err = np.asarray(err, dtype=float)
    return np.sqrt(np.maximum(err ** 2 - floor ** 2, 0.0))


def temporal_sweep(scenario: Scenario, mesh: PolyMesh, p: int, thetas: Sequence[float],
                   dts: Sequence[float], T: float, params: PenaltyParams = PenaltyParams(),
                   opts: SolveOptions = SolveOptions("lu"), floor_refine: int = 4):
    """Energy error against dt for each theta with the spatial floor removed.

    The floor is the error of a Crank-Nicolson run with ``dt`` reduced by
    ``floor_refine`` below the smallest swept value, so its own time error
    is negligible.
    """
    dts = sorted(dts, reverse=True)
    floor_dt = min(dts) / floor_refine
    floor_res = run_case(mesh, scenario, p, TimeIntegrator(0.5, floor_dt, T), params, opts)
    floor = floor_res.report.energy
    points: dict[float, list[SweepPoint]] = {}
    tables: dict[float, RateTable] = {}
    for th in thetas:
        points[th] = []
        for dt in dts:
            try:
                r = run_case(mesh, scenario, p, TimeIntegrator(th, dt, T), params, opts)
                points[th].append(SweepPoint(p, dt, r))
            except Exception as exc:
                log.error("sweep point theta=%g dt=%g failed: %s", th, dt, exc)
                points[th].append(SweepPoint(p, dt, None, str(exc)))
        errs = subtract_floor([q.err for q in points[th]], floor)
        tables[th] = convergence_rates(dts, errs)
    return points, tables, floor
