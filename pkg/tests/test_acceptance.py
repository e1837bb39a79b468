"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

The spatial and temporal sweeps and the cylinder run take a few minutes in
total on one core.
"""
import gc
import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from polydg_stokes.assembly import PenaltyParams, assemble_mass, assemble_stiffness, seminorm_matrix
from polydg_stokes.config import parse_config_text
from polydg_stokes.experiments import cached_mesh, run_case, spatial_sweep, temporal_sweep
from polydg_stokes.mesh import UNIT_SQUARE, classify_boundary, load_mesh, save_mesh
from polydg_stokes.postproc import (SampledField, StabilityProbe, VelocityAccumulator,
                                    convergence_rates, export_csv, export_vtk, read_csv, read_vtk)
from polydg_stokes.quadrature import map_triangle, triangle_rule
from polydg_stokes.scenarios import CYLINDER_DOMAIN, custom, cylinder, manufactured_sine, recovery_poly
from polydg_stokes.solver import (LinearSolver, SolveOptions, TimeIntegrator,
                                  element_block_ordering, run)
from polydg_stokes.space import DgSpace

LU = SolveOptions("lu")
PARAMS = PenaltyParams(10.0)
SIZES = (100, 200, 400, 800)
DEGREES = (1, 2, 3)


def _meshes():
    return [cached_mesh(UNIT_SQUARE, n, 50, 1) for n in SIZES]


def _report(capsys, criterion: int, checks):
    """Print one line per criterion and fail if any check failed."""
    ok = all(c[1] for c in checks)
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}")
        for name, passed, detail in checks:
            print(f"    [{'ok' if passed else 'xx'}] {name}: {detail}")
    assert ok, [c for c in checks if not c[1]]


@pytest.fixture(scope="module")
def spatial():
    """Energy errors, h values and stability constants of the 3 x 4 sweep."""
    points, tables = spatial_sweep(manufactured_sine(), _meshes(), DEGREES,
                                   TimeIntegrator(0.5, 1e-3, 0.25), PARAMS, LU, stability=True)
    out = {}
    for p, pts in points.items():
        out[p] = {"err": [q.err for q in pts], "h_mean": [q.result.h_mean for q in pts],
                  "h_max": [q.result.h for q in pts], "rates": tables[p].rates,
                  "C": [q.result.stability.constant for q in pts],
                  "failed": [q.error for q in pts if q.error]}
    del points
    gc.collect()
    return out


# ----------------------------------------------------------------------------

def test_criterion_1_spatial_convergence(spatial, capsys):
    checks = []
    for p in DEGREES:
        d = spatial[p]
        rates = d["rates"][1:]
        ok = not d["failed"] and all(p - 0.25 <= r <= p + 0.5 for r in rates)
        max_h_rates = convergence_rates(d["h_max"], d["err"]).rates[1:]
        checks.append((f"p={p} rates vs mean h in [{p - 0.25}, {p + 0.5}]", ok,
                       "errors " + ", ".join(f"{e:.3e}" for e in d["err"])
                       + " | rates " + ", ".join(f"{r:.3f}" for r in rates)
                       + " | (vs max h: " + ", ".join(f"{r:.3f}" for r in max_h_rates) + ")"))
    _report(capsys, 1, checks)


def test_criterion_2_temporal_convergence(capsys):
    mesh = cached_mesh(UNIT_SQUARE, 400, 50, 1)
    dts = (4e-2, 2e-2, 1e-2, 5e-3)
    points, tables, floor = temporal_sweep(manufactured_sine(), mesh, 4, (1.0, 0.5), dts, 0.2,
                                           PARAMS, LU, floor_refine=4)
    checks = []
    for th, need in ((1.0, 0.9), (0.5, 1.8)):
        t = tables[th]
        slope = np.polyfit(np.log(t.x), np.log(t.err), 1)[0]
        raw = [q.err for q in points[th]]
        checks.append((f"theta={th:g} fitted slope >= {need}", bool(slope >= need),
                       f"slope {slope:.3f}; successive " + ", ".join(f"{r:.3f}" for r in t.rates[1:])
                       + "; raw errors " + ", ".join(f"{e:.3e}" for e in raw)
                       + f"; spatial floor {floor:.3e}"))
    del points
    gc.collect()
    _report(capsys, 2, checks)


def test_criterion_3_crank_nicolson_exactness(capsys):
    sc = recovery_poly()
    mesh = classify_boundary(cached_mesh(UNIT_SQUARE, 200, 50, 1), sc.classifier)
    space = DgSpace(mesh, 3)
    ti = TimeIntegrator(0.5, 1e-2, 1.0)
    vel = VelocityAccumulator(space, sc, ti.dt)
    hist = run(space, sc, ti, LU, probes=[vel], store="all", params=PARAMS)
    err, ref = 0.0, 0.0
    for n, t, x in hist.stored():
        ex = space.l2_project(lambda a, b: sc.sigma_exact(a, b, t))
        err, ref = max(err, np.linalg.norm(x - ex)), max(ref, np.linalg.norm(ex))
    state_rel = err / ref
    pts = space.sample_cloud["points"]
    p_h = SampledField(space, pts, space.sample_cloud["elements"]).pressure(hist.final)
    p_ex = sc.pressure_exact(pts[:, 0], pts[:, 1], 1.0)
    p_rel = np.abs(p_h - p_ex).max() / np.abs(p_ex).max()
    u_ex = sc.velocity_exact(vel.points[:, 0], vel.points[:, 1], 1.0)
    u_rel = np.abs(vel.u - u_ex).max() / np.abs(u_ex).max()
    _report(capsys, 3, [
        ("state max_n |s_h - P s| <= 1e-8 max_n |P s|", state_rel <= 1e-8, f"{state_rel:.2e}"),
        ("pressure = -mu t^2 to 1e-8 relative", p_rel <= 1e-8, f"{p_rel:.2e}"),
        ("velocity at samples to 1e-3 relative", u_rel <= 1e-3, f"{u_rel:.2e}"),
    ])


def test_criterion_4_discrete_stability(spatial, capsys):
    sc = manufactured_sine()
    mesh100 = cached_mesh(UNIT_SQUARE, 100, 50, 1)
    C = {f"p={p} n={n}": c for p in DEGREES for n, c in zip(SIZES, spatial[p]["C"])}
    for dt in (2e-3, 5e-4):
        r = run_case(mesh100, sc, 2, TimeIntegrator(0.5, dt, 0.25), PARAMS, LU, errors=False, stability=True)
        C[f"p=2 n=100 dt={dt:g}"] = r.stability.constant
    vals = np.array(list(C.values()))
    spread = vals.max() / vals.min()

    zero = custom(1.0, sc.classifier)
    space = DgSpace(classify_boundary(mesh100, sc.classifier), 2)
    probe = StabilityProbe(space, zero, 1e-2, PARAMS)
    x0 = np.random.default_rng(11).normal(size=space.n_dofs)
    run(space, zero, TimeIntegrator(1.0, 1e-2, 0.25), LU, probes=[probe], params=PARAMS, x0=x0)
    d = np.array(probe.dev_norms)
    worst = float(np.max(d[1:] / d[:-1]))
    _report(capsys, 4, [
        ("stability constant spread < 3 across meshes, degrees and dt", spread < 3,
         f"C in [{vals.min():.4f}, {vals.max():.4f}], spread {spread:.3f}"),
        ("zero data, random start, theta=1: dev norm non-increasing", worst <= 1.0 + 1e-12,
         f"max step ratio {worst:.6f} over {len(d) - 1} steps, {d[0]:.3e} -> {d[-1]:.3e}"),
    ])


def test_criterion_5_operator_properties(capsys):
    sc = manufactured_sine()
    rng = np.random.default_rng(2024)
    checks = []
    sym, ker, coer = [], [], []
    sup = {p: [] for p in DEGREES}
    rand = {p: [] for p in DEGREES}
    for n, mesh in zip(SIZES, _meshes()):
        mesh = classify_boundary(mesh, sc.classifier)
        for p in DEGREES:
            space = DgSpace(mesh, p)
            M, A = assemble_mass(space, sc.mu), assemble_stiffness(space, PARAMS)
            S = seminorm_matrix(space, PARAMS)
            sym += [abs(X - X.T).max() / abs(X).max() for X in (M, A)]
            cd = space.component_dofs
            cols = np.arange(space.n_scalar)
            iso = sp.csr_matrix((np.ones(2 * len(cols)), (np.r_[cd[0], cd[3]], np.r_[cols, cols])),
                                shape=(space.n_dofs, space.n_scalar))
            ker.append(abs(M @ iso).max())
            X = rng.normal(size=(space.n_dofs, 100))
            coer.append(((X * (A @ X)).sum(0) / (X * (S @ X)).sum(0)).min())
            # the basis is L2-orthonormal, so ||s||^2 = x.x and the sharp constant
            # sup ||s||^2 / (||dev s||^2_mu + |s|^2_dG) is 1 / lambda_min(M + S)
            B = (M + S).tocsr()
            lu = LinearSolver(B, LU, element_block_ordering(space))
            inv = spla.LinearOperator(B.shape, matvec=lambda v, lu=lu: lu.solve(np.ravel(v)), dtype=float)
            lam = spla.eigsh(B, k=1, sigma=0, which="LM", OPinv=inv, return_eigenvectors=False)[0]
            sup[p].append(1.0 / lam)
            rand[p].append(((X * X).sum(0) / (X * (B @ X)).sum(0)).max())
            del M, A, S, B, lu, inv, space
            gc.collect()
    checks.append(("M, A symmetric to 1e-12 relative", max(sym) <= 1e-12, f"max {max(sym):.2e}"))
    checks.append(("M (q I) = 0 to round-off", max(ker) <= 1e-14, f"max |M q| {max(ker):.2e}"))
    checks.append(("x'Ax / |x|_dG^2 >= 0.2 (100 random vectors, 4 meshes, p=1..3)", min(coer) >= 0.2,
                   f"min {min(coer):.3f}"))
    for p in DEGREES:
        r = max(sup[p]) / min(sup[p])
        checks.append((f"p={p} norm-equivalence constant: max/min over meshes <= 2", r <= 2,
                       "sup " + ", ".join(f"{v:.3f}" for v in sup[p]) + f", ratio {r:.3f}"
                       + " | random-vector max " + ", ".join(f"{v:.2e}" for v in rand[p])))
    _report(capsys, 5, checks)


def test_criterion_6_cylinder(tmp_path, capsys):
    sc = cylinder(2.0)
    mesh = cached_mesh(CYLINDER_DOMAIN, 2000, 50, 1)
    inflow = np.array([[-0.98, 0.0]])
    outflow = np.array([[3.98, y] for y in (-0.05, 0.0, 0.05)])
    probe_pts = np.vstack([inflow, outflow])
    cmesh = classify_boundary(mesh, sc.classifier)
    space = DgSpace(cmesh, 3)
    ti = TimeIntegrator(0.5, 1e-2, 1.0)
    vel = VelocityAccumulator(space, sc, ti.dt)
    mid = VelocityAccumulator(space, sc, ti.dt, probe_pts)
    hist = run(space, sc, ti, LU, probes=[vel, mid], params=PARAMS)
    x = hist.final
    path = export_vtk(space, tmp_path / "cylinder.vtk", x, {"velocity": vel.u})
    pd = read_vtk(path)["point_data"]
    finite = all(np.isfinite(v).all() for v in pd.values()) and np.isfinite(x).all()
    p_mid = SampledField(space, probe_pts).pressure(x)
    drop = p_mid[0] - p_mid[1:].mean()
    ux = mid.u[1:, 0]
    _report(capsys, 6, [
        ("run completes, exported sigma, p, u finite", bool(finite),
         f"{space.n_dofs} dofs, {len(pd)} fields, solve {hist.wall_time:.1f}s"),
        ("u_x > 0 on the outflow midline", bool((ux > 0).all()), ", ".join(f"{u:.3f}" for u in ux)),
        ("pressure drop inflow -> outflow > 0", bool(drop > 0),
         f"p(-0.98,0)={p_mid[0]:.3f}, p(3.98,0)={p_mid[2]:.3f}, drop {drop:.3f}"),
    ])


def test_criterion_7_infrastructure(tmp_path, capsys, rng):
    checks = []
    rule = triangle_rule(4)
    total = 0.0
    for tri in (np.array([[0, 0], [1, 0], [1, 1]], float), np.array([[0, 0], [1, 1], [0, 1]], float)):
        pts, w = map_triangle(rule, tri)
        total += w @ (pts[:, 0] ** 2 * pts[:, 1] ** 2)
    checks.append(("quadrature: x^2 y^2 on unit square = 1/9 to 1e-13", abs(total - 1 / 9) <= 1e-13,
                   f"error {abs(total - 1 / 9):.1e}"))

    mesh = cached_mesh(UNIT_SQUARE, 100, 50, 1)
    worst = 0.0
    for p in (1, 2, 3, 4):
        space = DgSpace(mesh, p)
        c = rng.normal(size=(4, p + 1, p + 1))

        def poly(a, b, c=c, p=p):
            vals = [sum(c[k, i, j] * a ** i * b ** j for i in range(p + 1) for j in range(p + 1 - i))
                    for k in range(4)]
            return np.stack(vals, -1).reshape(np.shape(a) + (2, 2))
        x = space.l2_project(poly)
        pts = rng.uniform(0.02, 0.98, size=(50, 2))
        val, _ = space.evaluate(x, pts)
        worst = max(worst, np.abs(val - poly(pts[:, 0], pts[:, 1])).max())
    checks.append(("projection reproduces P_p tensors to 1e-12", worst <= 1e-12, f"max error {worst:.1e}"))

    area_err = max(abs(cached_mesh(UNIT_SQUARE, n, 50, 1).area - 1.0) for n in SIZES)
    checks.append(("mesh area additivity to 1e-10", area_err <= 1e-10, f"max error {area_err:.1e}"))

    save_mesh(mesh, tmp_path / "m.txt")
    m2 = load_mesh(tmp_path / "m.txt")
    mesh_ok = m2.n_elements == mesh.n_elements and np.allclose(m2.areas, mesh.areas, rtol=1e-14)
    cfg = parse_config_text("[scenario]\nname = manufactured_sine\n[discretization]\ndegree = 2\n"
                            "[time]\ntheta = 0.5\ndt = 1e-3\nT = 0.25\n")
    cfg_ok = cfg.integrator.n_steps == 250 and cfg.mu == 1.0
    rows = [{"h": 0.1, "p": 2, "dt": 1e-3, "err_energy": 1.23456789012e-4, "err_dev_max": 1e-5,
             "err_div": 1e-4, "rate": math.nan}]
    back = read_csv(export_csv(rows, tmp_path / "e.csv"))[0]
    csv_ok = back["err_energy"] == rows[0]["err_energy"] and math.isnan(back["rate"])
    space = DgSpace(classify_boundary(mesh, recovery_poly().classifier), 1)
    x = space.l2_project(lambda a, b: recovery_poly().sigma_exact(a, b, 1.0))
    pd = read_vtk(export_vtk(space, tmp_path / "f.vtk", x))["point_data"]
    vtk_ok = np.allclose(pd["pressure"], -1.0, atol=1e-10)
    checks.append(("mesh / config / CSV / VTK round trips", mesh_ok and cfg_ok and csv_ok and vtk_ok,
                   f"mesh {mesh_ok}, config {cfg_ok}, csv {csv_ok}, vtk {vtk_ok}"))
    _report(capsys, 7, checks)
