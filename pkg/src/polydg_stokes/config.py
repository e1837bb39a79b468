"""INI run configuration with strict validation.

Every key is checked against a schema; unknown keys, missing required
keys, type mismatches and range violations raise :class:`ConfigError`
naming the key and its line.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

from .assembly import PenaltyParams
from .mesh import BoundaryClassifier, FaceKind, Segment, UNIT_SQUARE
from .scenarios import BUILTIN, Polynomial, Scenario, custom
from .solver import SolveOptions, TimeIntegrator


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


_REQUIRED = object()


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v: str) -> str:
    return v.strip()


def _list(conv):
    def parse(v: str):
        items = [s for s in re.split(r"[,\s]+", v.strip()) if s]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(s) for s in items)
    return parse


SIDES = ("left", "right", "bottom", "top")

# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "scenario": {"name": (_str, _REQUIRED), "mu": (_float, None)},
    "mesh": {"source": (_str, "generate"), "n_elements": (_int, 100), "lloyd_iters": (_int, 50),
             "seed": (_int, 0), "path": (_str, None)},
    "discretization": {"degree": (_int, _REQUIRED), "alpha": (_float, 10.0)},
    "time": {"theta": (_float, 0.5), "dt": (_float, _REQUIRED), "T": (_float, _REQUIRED)},
    "solver": {"method": (_str, "cg"), "tol": (_float, 1e-10), "max_iters": (_int, 20000)},
    "output": {"directory": (_str, "output"), "errors": (_bool, True), "recovery": (_bool, True),
               "vtk_every": (_int, 0)},
    "sweep": {"degrees": (_list(_int), None), "n_elements": (_list(_int), None),
              "dts": (_list(_float), None), "thetas": (_list(_float), (1.0, 0.5)),
              "h_measure": (_str, "mean"), "floor_refine": (_int, 4)},
    "custom": {"neumann": (_list(_str), ()),
               **{f"source_{c}": (Polynomial.parse, None) for c in ("xx", "xy", "yx", "yy")},
               **{f"initial_{c}": (Polynomial.parse, None) for c in ("xx", "xy", "yx", "yy")},
               **{f"dirichlet_{c}": (Polynomial.parse, None) for c in ("x", "y")},
               **{f"traction_{c}": (Polynomial.parse, None) for c in ("x", "y")},
               **{f"velocity_source_{c}": (Polynomial.parse, None) for c in ("x", "y")}},
}

SCENARIO_MU = {"manufactured_sine": 1.0, "recovery_poly": 1.0, "cylinder": 2.0}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    mu: float
    mesh_source: str
    n_elements: int
    lloyd_iters: int
    seed: int
    mesh_path: str | None
    degree: int
    alpha: float
    theta: float
    dt: float
    T: float
    solver_method: str
    solver_tol: float
    solver_max_iters: int
    output_dir: str
    errors: bool
    recovery: bool
    vtk_every: int
    sweep_degrees: tuple[int, ...] | None = None
    sweep_n_elements: tuple[int, ...] | None = None
    sweep_dts: tuple[float, ...] | None = None
    sweep_thetas: tuple[float, ...] = (1.0, 0.5)
    h_measure: str = "mean"
    floor_refine: int = 4
    custom: dict = field(default_factory=dict)
    source_path: str | None = None

    @property
    def integrator(self) -> TimeIntegrator:
        return TimeIntegrator(self.theta, self.dt, self.T)

    @property
    def penalty(self) -> PenaltyParams:
        return PenaltyParams(self.alpha)

    @property
    def solve_options(self) -> SolveOptions:
        return SolveOptions(self.solver_method, self.solver_tol, self.solver_max_iters)

    def build_scenario(self) -> Scenario:
        if self.scenario in BUILTIN:
            return BUILTIN[self.scenario](self.mu)
        c = self.custom
        neumann = set(c.get("neumann", ()))
        bounds = {"left": ("x", 0.0), "right": ("x", 1.0), "bottom": ("y", 0.0), "top": ("y", 1.0)}
        regions = tuple((Segment(*bounds[s]), FaceKind.NEUMANN if s in neumann else FaceKind.DIRICHLET)
                        for s in SIDES)
        get = lambda prefix, comps: [c.get(f"{prefix}_{k}") or Polynomial() for k in comps]  # noqa: E731
        return custom(self.mu, BoundaryClassifier(regions), UNIT_SQUARE,
                      source=get("source", ("xx", "xy", "yx", "yy")),
                      dirichlet=get("dirichlet", ("x", "y")),
                      traction=get("traction", ("x", "y")),
                      initial=get("initial", ("xx", "xy", "yx", "yy")),
                      velocity_source=get("velocity_source", ("x", "y")))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["custom"] = {k: (v.terms if isinstance(v, Polynomial) else v) for k, v in self.custom.items()}
        return d


def _line_map(text: str) -> dict[tuple[str, str], int]:
    """(section, key) -> 1-based line number."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip())] = i
    return out


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    lines = _line_map(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (T vs t)
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed configuration: {exc.message if hasattr(exc, 'message') else exc}",
                          line=line) from exc

    values: dict[str, dict[str, Any]] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", key=f"[{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        present = cp[sec] if cp.has_section(sec) else {}
        for k in present:
            if k not in keys:
                raise ConfigError("unknown key", key=f"{sec}.{k}", line=lines.get((sec, k)))
        for k, (conv, default) in keys.items():
            if k in present:
                raw = present[k]
                try:
                    values[sec][k] = conv(raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"type mismatch: {exc}", key=f"{sec}.{k}",
                                      line=lines.get((sec, k))) from exc
            elif default is _REQUIRED:
                raise ConfigError("missing required key", key=f"{sec}.{k}")
            else:
                values[sec][k] = default

    def fail(sec, k, msg):
        raise ConfigError(msg, key=f"{sec}.{k}", line=lines.get((sec, k)))

    sc, ms, ds, tm, sv, out, sw = (values[s] for s in
                                   ("scenario", "mesh", "discretization", "time", "solver", "output", "sweep"))
    name = sc["name"]
    if name not in BUILTIN and name != "custom":
        fail("scenario", "name", f"unknown scenario {name!r}; expected one of "
             f"{sorted(BUILTIN) + ['custom']}")
    mu = sc["mu"] if sc["mu"] is not None else SCENARIO_MU.get(name)
    if mu is None:
        fail("scenario", "mu", "missing required key for the custom scenario")
    if not mu > 0:
        fail("scenario", "mu", "must be positive")
    if ms["source"] not in ("generate", "file"):
        fail("mesh", "source", "must be 'generate' or 'file'")
    if ms["source"] == "file" and not ms["path"]:
        raise ConfigError("missing required key when source = file", key="mesh.path")
    if ms["n_elements"] < 1:
        fail("mesh", "n_elements", "must be >= 1")
    if ms["lloyd_iters"] < 0:
        fail("mesh", "lloyd_iters", "must be >= 0")
    if ds["degree"] < 1:
        fail("discretization", "degree", "must be >= 1")
    if not ds["alpha"] > 0:
        fail("discretization", "alpha", "must be positive")
    if not 0.0 <= tm["theta"] <= 1.0:
        fail("time", "theta", f"range error: theta must lie in [0, 1], got {tm['theta']}")
    if not tm["dt"] > 0:
        fail("time", "dt", "must be positive")
    if not tm["T"] > 0:
        fail("time", "T", "must be positive")
    try:
        TimeIntegrator(tm["theta"], tm["dt"], tm["T"])
    except ValueError as exc:
        fail("time", "dt", str(exc))
    try:
        SolveOptions(sv["method"], sv["tol"], sv["max_iters"])
    except ValueError as exc:
        msg = str(exc)
        k = "method" if "method" in msg else ("tol" if "tol" in msg else "max_iters")
        fail("solver", k, msg)
    if out["vtk_every"] < 0:
        fail("output", "vtk_every", "must be >= 0")
    if sw["degrees"] is not None and min(sw["degrees"]) < 1:
        fail("sweep", "degrees", "degrees must be >= 1")
    if sw["n_elements"] is not None and min(sw["n_elements"]) < 1:
        fail("sweep", "n_elements", "must be >= 1")
    if sw["dts"] is not None:
        if min(sw["dts"]) <= 0:
            fail("sweep", "dts", "must be positive")
        for dt in sw["dts"]:
            try:
                TimeIntegrator(0.5, dt, tm["T"])
            except ValueError as exc:
                fail("sweep", "dts", str(exc))
    if any(not 0 <= t <= 1 for t in sw["thetas"]):
        fail("sweep", "thetas", "range error: theta must lie in [0, 1]")
    if sw["h_measure"] not in ("mean", "max"):
        fail("sweep", "h_measure", "must be 'mean' or 'max'")
    if sw["floor_refine"] < 1:
        fail("sweep", "floor_refine", "must be >= 1")
    cust = {k: v for k, v in values["custom"].items() if v not in (None, ())}
    if cp.has_section("custom") and name != "custom":
        raise ConfigError("[custom] section is only valid with name = custom", key="[custom]")
    for s in cust.get("neumann", ()):
        if s not in SIDES:
            fail("custom", "neumann", f"unknown side {s!r}; expected {SIDES}")

    return RunConfig(
        scenario=name, mu=float(mu), mesh_source=ms["source"], n_elements=ms["n_elements"],
        lloyd_iters=ms["lloyd_iters"], seed=ms["seed"], mesh_path=ms["path"],
        degree=ds["degree"], alpha=ds["alpha"], theta=tm["theta"], dt=tm["dt"], T=tm["T"],
        solver_method=sv["method"], solver_tol=sv["tol"], solver_max_iters=sv["max_iters"],
        output_dir=out["directory"], errors=out["errors"], recovery=out["recovery"],
        vtk_every=out["vtk_every"], sweep_degrees=sw["degrees"], sweep_n_elements=sw["n_elements"],
        sweep_dts=sw["dts"], sweep_thetas=sw["thetas"], h_measure=sw["h_measure"],
        floor_refine=sw["floor_refine"], custom=cust, source_path=source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid UTF-8") from exc
    return parse_config_text(text, str(path))
