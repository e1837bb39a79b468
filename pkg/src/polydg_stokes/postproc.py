"""Recovery of pressure and velocity, error norms, rates and file export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .assembly import PenaltyParams, dev, error_pieces
from .scenarios import Scenario
from .space import COMPONENTS, DgSpace


# --------------------------------------------------------------------------
# pressure and velocity

def recover_pressure(space: DgSpace, x: np.ndarray, pts, elems=None) -> np.ndarray:
    """``p_h = -tr(sigma_h) / 2`` at the given points."""
    val, _ = space.evaluate(x, pts, elems)
    return -0.5 * np.trace(val, axis1=-2, axis2=-1)


class SampledField:
    """Cached evaluation of discrete fields at a fixed point cloud."""

    def __init__(self, space: DgSpace, pts, elems=None):
        self.space = space
        self.points = np.atleast_2d(np.asarray(pts, dtype=float))
        self.phi, self.dx, self.dy = space.point_operators(self.points, elems)

    def values(self, x: np.ndarray) -> np.ndarray:
        comps = self.space.components(x)
        out = np.empty((len(self.points), 2, 2))
        for c, (i, j) in enumerate(COMPONENTS):
            out[:, i, j] = self.phi @ comps[c]
        return out

    def divergence(self, x: np.ndarray) -> np.ndarray:
        comps = self.space.components(x)
        return np.column_stack([self.dx @ comps[2 * i] + self.dy @ comps[2 * i + 1]
                                for i in range(2)])

    def pressure(self, x: np.ndarray) -> np.ndarray:
        return -0.5 * np.trace(self.values(x), axis1=-2, axis2=-1)


class VelocityAccumulator:
    """Trapezoidal time integral ``u_0 + int_0^t (div_h sigma_h + f) ds`` at samples.

    Call once per time level, in order, starting at ``n = 0``; usable
    directly as a probe of :func:`~polydg_stokes.solver.run`.
    """

    def __init__(self, space: DgSpace, scenario: Scenario, dt: float, pts=None, elems=None):
        if pts is None:
            cloud = space.sample_cloud
            pts, elems = cloud["points"], cloud["elements"]
        self.sampler = SampledField(space, pts, elems)
        self.scenario = scenario
        self.dt = float(dt)
        X = self.sampler.points
        if scenario.velocity_exact is not None:
            u0 = scenario.velocity_exact(X[:, 0], X[:, 1], 0.0)
        else:
            u0 = scenario.velocity_initial(X[:, 0], X[:, 1])
        self.u = np.asarray(u0, dtype=float).reshape(len(X), 2).copy()
        self.last = -1
        self.t = 0.0
        self._g = None

    @property
    def points(self) -> np.ndarray:
        return self.sampler.points

    def integrand(self, t: float, x: np.ndarray) -> np.ndarray:
        X = self.sampler.points
        f = np.asarray(self.scenario.velocity_source(X[:, 0], X[:, 1], t)).reshape(len(X), 2)
        return self.sampler.divergence(x) + f

    def accumulate(self, n: int, t: float, g: np.ndarray) -> None:
        """Add time level ``n`` with integrand samples ``g``."""
        if n != self.last + 1:
            raise ValueError(f"velocity accumulation out of order: expected level {self.last + 1}, got {n}")
        if n > 0:
            self.u += 0.5 * self.dt * (self._g + g)
        self._g = np.asarray(g, dtype=float).copy()
        self.last = n
        self.t = t

    def __call__(self, n: int, t: float, x: np.ndarray) -> None:
        self.accumulate(n, t, self.integrand(t, x))


# --------------------------------------------------------------------------
# errors

@dataclass
class ErrorReport:
    """Per-level squared error pieces and the combined energy error."""

    h: float
    p: int
    dt: float
    times: list[float] = field(default_factory=list)
    dev_sq: list[float] = field(default_factory=list)
    dg_sq: list[float] = field(default_factory=list)
    l2_sq: list[float] = field(default_factory=list)

    @property
    def err_dev_max(self) -> float:
        return math.sqrt(max(self.dev_sq))

    @property
    def err_div(self) -> float:
        """``sqrt(dt sum_{n>=1} |e^n|_dG^2)``."""
        return math.sqrt(self.dt * sum(self.dg_sq[1:]))

    @property
    def energy(self) -> float:
        return math.sqrt(max(self.dev_sq) + self.dt * sum(self.dg_sq[1:]))


def level_error(space: DgSpace, params: PenaltyParams, mu: float, x: np.ndarray,
                sigma: Callable | None, div: Callable | None):
    """Squared ``||mu^-1/2 dev e||``, ``|e|_dG`` and ``||e||`` for ``e = sigma - sigma_h``."""
    vd = space.volume_data
    X, w = vd["points"], vd["weights"]
    val, _ = space.volume_values(x)
    if sigma is not None:
        val = np.asarray(sigma(X[:, 0], X[:, 1])).reshape(-1, 2, 2) - val
    d = dev(val)
    dev_sq = float(w @ (d ** 2).sum((1, 2))) / mu
    l2_sq = float(w @ (val ** 2).sum((1, 2)))
    pc = error_pieces(space, params, x, sigma, div)
    return dev_sq, pc["div"] + pc["jump"], l2_sq


class EnergyErrorProbe:
    """Probe recording the error against the scenario's exact solution."""

    def __init__(self, space: DgSpace, scenario: Scenario, dt: float,
                 params: PenaltyParams = PenaltyParams()):
        if not scenario.has_exact:
            raise ValueError(f"scenario {scenario.name!r} has no exact solution")
        self.space, self.scenario, self.params = space, scenario, params
        self.report = ErrorReport(h=space.mesh.h, p=int(space.degrees.max()), dt=dt)

    def __call__(self, n: int, t: float, x: np.ndarray) -> None:
        sc = self.scenario
        dsq, gsq, lsq = level_error(self.space, self.params, sc.mu, x,
                                    lambda a, b: sc.sigma_exact(a, b, t),
                                    lambda a, b: sc.div_exact(a, b, t))
        r = self.report
        r.times.append(t)
        r.dev_sq.append(dsq)
        r.dg_sq.append(gsq)
        r.l2_sq.append(lsq)


def energy_error(space: DgSpace, history, scenario: Scenario, params: PenaltyParams,
                 dt: float | None = None) -> ErrorReport:
    """Energy error of a history in which every time level was stored."""
    n_all = len(history.times)
    if sorted(history.states) != list(range(n_all)):
        raise ValueError("energy_error needs every time level stored (store='all')")
    dt = float(history.times[1] - history.times[0]) if dt is None else dt
    probe = EnergyErrorProbe(space, scenario, dt, params)
    for n, t, x in history.stored():
        probe(n, t, x)
    return probe.report


class StabilityProbe:
    """Left and right sides of the discrete stability bound.

    ``lhs = max_n ||mu^-1/2 dev s^n||^2 + dt sum_{n>=1} |s^n|_dG^2`` and
    ``rhs = ||mu^-1/2 dev s^0||^2 + dt sum_{n>=1} ||F^n||^2``.
    """

    def __init__(self, space: DgSpace, scenario: Scenario, dt: float,
                 params: PenaltyParams = PenaltyParams()):
        self.space, self.scenario, self.params, self.dt = space, scenario, params, dt
        self.dev_norms: list[float] = []
        self.dg_sum = 0.0
        self.source_sum = 0.0

    def __call__(self, n: int, t: float, x: np.ndarray) -> None:
        dsq, gsq, _ = level_error(self.space, self.params, self.scenario.mu, x, None, None)
        self.dev_norms.append(math.sqrt(dsq))
        if n > 0:
            self.dg_sum += gsq
            vd = self.space.volume_data
            X = vd["points"]
            F = np.asarray(self.scenario.source(X[:, 0], X[:, 1], t)).reshape(-1, 2, 2)
            self.source_sum += float(vd["weights"] @ (F ** 2).sum((1, 2)))

    @property
    def lhs(self) -> float:
        return max(d * d for d in self.dev_norms) + self.dt * self.dg_sum

    @property
    def rhs(self) -> float:
        return self.dev_norms[0] ** 2 + self.dt * self.source_sum

    @property
    def constant(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.nan


# --------------------------------------------------------------------------
# rates and tables

@dataclass
class RateTable:
    x: np.ndarray
    err: np.ndarray
    rates: np.ndarray


def convergence_rates(x: Sequence[float], err: Sequence[float]) -> RateTable:
    """Rates ``log(e_i / e_{i+1}) / log(x_i / x_{i+1})``; first entry is NaN."""
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    if x.shape != err.shape:
        raise ValueError("x and err must have equal length")
    rates = np.full(len(x), np.nan)
    if len(x) >= 2:
        rates[1:] = np.log(err[:-1] / err[1:]) / np.log(x[:-1] / x[1:])
    return RateTable(x, err, rates)


CSV_COLUMNS = ("h", "p", "dt", "err_energy", "err_dev_max", "err_div", "rate")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def report_rows(reports: Sequence[ErrorReport], rates: Sequence[float] | None = None) -> list[dict]:
    rates = [math.nan] * len(reports) if rates is None else list(rates)
    return [{"h": r.h, "p": r.p, "dt": r.dt, "err_energy": r.energy,
             "err_dev_max": r.err_dev_max, "err_div": r.err_div, "rate": q}
            for r, q in zip(reports, rates)]


def export_csv(rows: Sequence[dict], path) -> Path:
    """Write rows with the standard error-table columns (12 significant digits)."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            rows = []
            for rec in reader:
                rows.append({k: (int(v) if k == "p" else float(v)) if v != "" else math.nan
                             for k, v in rec.items()})
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    return rows


# --------------------------------------------------------------------------
# VTK

def export_vtk(space: DgSpace, path, x: np.ndarray | None = None,
               point_data: dict[str, np.ndarray] | None = None, title: str = "polydg") -> Path:
    """Legacy ASCII VTK on the element sub-triangulation.

    Points are the sample cloud of ``space`` (duplicated per element).  The
    field ``x`` is written as its four components plus the recovered
    pressure; ``point_data`` adds scalars (n,) or 2-vectors (n, 2).
    """
    cloud = space.sample_cloud
    pts, tris = cloud["points"], cloud["triangles"]
    npts = len(pts)
    data = {}
    if x is not None:
        val = SampledField(space, pts, cloud["elements"]).values(x)
        for i, j in COMPONENTS:
            data[f"sigma_{'xy'[i]}{'xy'[j]}"] = val[:, i, j]
        data["pressure"] = -0.5 * (val[:, 0, 0] + val[:, 1, 1])
    for k, v in (point_data or {}).items():
        data[k] = np.asarray(v, dtype=float)
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {npts} double"]
    lines += [f"{a:.17g} {b:.17g} 0" for a, b in pts]
    lines.append(f"CELLS {len(tris)} {4 * len(tris)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tris]
    lines.append(f"CELL_TYPES {len(tris)}")
    lines += ["5"] * len(tris)
    if data:
        lines.append(f"POINT_DATA {npts}")
    for name, v in data.items():
        if v.shape == (npts,):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{a:.17g}" for a in v]
        elif v.shape == (npts, 2):
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.17g} {b:.17g} 0" for a, b in v]
        else:
            raise ValueError(f"point data {name!r} has shape {v.shape}, expected ({npts},) or ({npts}, 2)")
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`export_vtk`."""
    tokens = Path(path).read_text(encoding="utf-8").split("\n")
    i = 0
    out: dict = {"point_data": {}}
    while i < len(tokens):
        line = tokens[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([tokens[i + 1 + k].split()[:2] for k in range(n)], dtype=float)
            i += n + 1
        elif parts[0] == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([tokens[i + 1 + k].split()[1:] for k in range(n)], dtype=int)
            i += n + 1
        elif parts[0] == "CELL_TYPES":
            n = int(parts[1])
            out["cell_types"] = np.array([tokens[i + 1 + k] for k in range(n)], dtype=int)
            i += n + 1
        elif parts[0] == "SCALARS":
            n = len(out["points"])
            out["point_data"][parts[1]] = np.array(tokens[i + 2:i + 2 + n], dtype=float)
            i += n + 2
        elif parts[0] == "VECTORS":
            n = len(out["points"])
            out["point_data"][parts[1]] = np.array([tokens[i + 1 + k].split()[:2] for k in range(n)],
                                                   dtype=float)
            i += n + 1
        else:
            i += 1
    return out
