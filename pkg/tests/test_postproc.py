import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polydg_stokes.assembly import PenaltyParams
from polydg_stokes.mesh import classify_boundary
from polydg_stokes.postproc import (CSV_COLUMNS, EnergyErrorProbe, ErrorReport, SampledField,
                                    StabilityProbe, VelocityAccumulator, convergence_rates,
                                    energy_error, export_csv, export_vtk, read_csv, read_vtk,
                                    recover_pressure, report_rows)
from polydg_stokes.scenarios import custom, tensor
from polydg_stokes.solver import SolveOptions, TimeIntegrator, run
from polydg_stokes.space import DgSpace

LU = SolveOptions("lu")
PARAMS = PenaltyParams()


@pytest.fixture(scope="module")
def poly_space(poly_mesh100):
    return DgSpace(poly_mesh100, 1)


@pytest.fixture(scope="module")
def zero_scenario(poly):
    return custom(1.0, poly.classifier)


# ------------------------------------------------------------- pressure

def test_pressure_examples(poly_space):
    pts = np.array([[0.3, 0.4], [0.8, 0.1]])
    x = poly_space.l2_project(lambda a, b: tensor(3 + 0 * a, 1 + 0 * a, 0 * a, 5 + 0 * a))
    np.testing.assert_allclose(recover_pressure(poly_space, x, pts), -4.0, atol=1e-12)
    x = poly_space.l2_project(lambda a, b: tensor(2 * a, 7 + 0 * a, -1 + 0 * a, 2 * b))
    np.testing.assert_allclose(recover_pressure(poly_space, x, pts), -(pts[:, 0] + pts[:, 1]), atol=1e-12)
    np.testing.assert_allclose(SampledField(poly_space, pts).pressure(x), -(pts[:, 0] + pts[:, 1]), atol=1e-12)


def test_pressure_invariant_to_deviatoric_part(poly_space, rng):
    pts = rng.uniform(0.05, 0.95, size=(20, 2))
    base = poly_space.l2_project(lambda a, b: tensor(a * b, 0 * a, 0 * a, a))
    shear = poly_space.l2_project(lambda a, b: tensor(b, a, a * a, -b))  # traceless
    np.testing.assert_allclose(recover_pressure(poly_space, base + shear, pts),
                               recover_pressure(poly_space, base, pts), atol=1e-12)


def test_sampled_divergence(poly_space, rng):
    pts = rng.uniform(0.05, 0.95, size=(15, 2))
    x = poly_space.l2_project(lambda a, b: tensor(3 * a, 2 * b, -a, 5 * b))
    np.testing.assert_allclose(SampledField(poly_space, pts).divergence(x), [[5.0, 4.0]] * 15, atol=1e-11)


# ------------------------------------------------------------- velocity

def test_velocity_constant_integrand(poly_space, zero_scenario):
    acc = VelocityAccumulator(poly_space, zero_scenario, 0.1)
    g = np.tile([1.5, -2.0], (len(acc.points), 1))
    for n in range(11):
        acc.accumulate(n, 0.1 * n, g)
    np.testing.assert_allclose(acc.u, np.tile([1.5, -2.0], (len(acc.points), 1)), rtol=1e-13)


def test_velocity_linear_integrand_is_exact(poly_space, zero_scenario):
    acc = VelocityAccumulator(poly_space, zero_scenario, 0.25)
    one = np.ones((len(acc.points), 2))
    for n in range(5):
        acc.accumulate(n, 0.25 * n, 0.25 * n * one)
    np.testing.assert_allclose(acc.u, 0.5 * one, rtol=1e-13)


def test_velocity_out_of_order(poly_space, zero_scenario):
    acc = VelocityAccumulator(poly_space, zero_scenario, 0.1)
    g = np.zeros((len(acc.points), 2))
    acc.accumulate(0, 0.0, g)
    with pytest.raises(ValueError, match="out of order"):
        acc.accumulate(2, 0.2, g)


def test_velocity_zero_run(poly_space, zero_scenario):
    acc = VelocityAccumulator(poly_space, zero_scenario, 0.25)
    run(poly_space, zero_scenario, TimeIntegrator(0.5, 0.25, 1.0), LU, probes=[acc])
    assert not acc.u.any()


def test_velocity_recovery_exact(poly_space, poly):
    ti = TimeIntegrator(0.5, 0.1, 1.0)
    acc = VelocityAccumulator(poly_space, poly, ti.dt)
    run(poly_space, poly, ti, LU, probes=[acc])
    X = acc.points
    ue = poly.velocity_exact(X[:, 0], X[:, 1], 1.0)
    assert np.abs(acc.u - ue).max() <= 1e-8 * np.abs(ue).max()


# ------------------------------------------------------------- errors

def test_error_report_pieces():
    r = ErrorReport(h=0.1, p=1, dt=0.5, times=[0, 0.5, 1.0], dev_sq=[1.0, 4.0, 0.0],
                    dg_sq=[100.0, 2.0, 6.0])
    assert r.err_dev_max == pytest.approx(2.0)
    assert r.err_div == pytest.approx(2.0)
    assert r.energy == pytest.approx(math.sqrt(8.0))


def test_energy_error_zero_and_exact(poly_space, poly, zero_scenario):
    zs = custom(1.0, poly.classifier)
    object.__setattr__(zs, "sigma_exact", lambda x, y, t: tensor(0 * x, 0 * x, 0 * x, 0 * x))
    object.__setattr__(zs, "div_exact", lambda x, y, t: np.zeros(np.shape(x) + (2,)))
    ti = TimeIntegrator(0.5, 0.25, 1.0)
    h = run(poly_space, zs, ti, LU, store="all")
    assert energy_error(poly_space, h, zs, PARAMS).energy == 0.0
    h = run(poly_space, poly, TimeIntegrator(0.5, 0.1, 1.0), LU, store="all")
    assert energy_error(poly_space, h, poly, PARAMS).energy <= 1e-8
    with pytest.raises(ValueError, match="store='all'"):
        energy_error(poly_space, run(poly_space, poly, ti, LU), poly, PARAMS)
    with pytest.raises(ValueError, match="no exact solution"):
        EnergyErrorProbe(poly_space, zero_scenario, 0.1)


def test_probe_matches_post_hoc(poly_space, poly):
    ti = TimeIntegrator(1.0, 0.25, 1.0)
    probe = EnergyErrorProbe(poly_space, poly, ti.dt)
    h = run(poly_space, poly, ti, LU, probes=[probe], store="all")
    assert probe.report.energy == pytest.approx(energy_error(poly_space, h, poly, PARAMS).energy, rel=1e-14)
    assert probe.report.energy > 1e-4


def test_stability_probe_zero_source(poly_space, poly):
    ti = TimeIntegrator(1.0, 0.1, 1.0)
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=poly_space.n_dofs)
    zs = custom(1.0, poly.classifier)
    probe = StabilityProbe(poly_space, zs, ti.dt)
    run(poly_space, zs, ti, LU, probes=[probe], x0=x0)
    d = probe.dev_norms
    assert all(b <= a * (1 + 1e-12) for a, b in zip(d, d[1:]))
    # energy identity: lhs <= (1 + 1 / (2 c)) rhs with coercivity constant c >= 0.2
    assert 0 < probe.constant <= 3.5


# ------------------------------------------------------------- rates

def test_rate_examples():
    t = convergence_rates([0.2, 0.1], [1e-2, 2.5e-3])
    assert math.isnan(t.rates[0])
    assert t.rates[1] == pytest.approx(2.0)
    assert np.isnan(convergence_rates([0.1], [1.0]).rates).all()
    with pytest.raises(ValueError):
        convergence_rates([0.1, 0.2], [1.0])


@given(st.floats(0.5, 6.0), st.floats(0.1, 10.0), st.floats(1.2, 4.0))
def test_rates_recover_power_law(k, c, r):
    h = 0.3 / r ** np.arange(4)
    assert np.allclose(convergence_rates(h, c * h ** k).rates[1:], k, rtol=1e-9)


# ------------------------------------------------------------- files

def test_csv_round_trip(tmp_path):
    reps = [ErrorReport(0.2, 2, 0.01, [0, 1], [1e-4, 4e-4], [0, 9e-4]),
            ErrorReport(0.1, 2, 0.01, [0, 1], [1e-5, 2.5e-5], [0, 6e-5])]
    rows = report_rows(reps, convergence_rates([0.2, 0.1], [r.energy for r in reps]).rates)
    path = export_csv(rows, tmp_path / "e.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].endswith(",")  # first rate is empty
    back = read_csv(path)
    assert back[0]["p"] == 2 and math.isnan(back[0]["rate"])
    for a, b in zip(rows, back):
        for c in CSV_COLUMNS:
            if not (isinstance(a[c], float) and math.isnan(a[c])):
                assert b[c] == pytest.approx(a[c], rel=1e-11)


def test_csv_errors(tmp_path):
    with pytest.raises(OSError):
        export_csv([], tmp_path / "missing" / "e.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(bad)


def test_vtk_round_trip(tmp_path, poly_space, poly):
    x = poly_space.l2_project(lambda a, b: poly.sigma_exact(a, b, 1.0))
    cloud = poly_space.sample_cloud
    npts = len(cloud["points"])
    u = np.column_stack([cloud["points"][:, 1], -cloud["points"][:, 0]])
    path = export_vtk(poly_space, tmp_path / "f.vtk", x, {"velocity": u})
    text = path.read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 2.0"
    assert text[2] == "ASCII" and text[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINT_DATA {npts}" in text
    data = read_vtk(path)
    assert (data["cell_types"] == 5).all()
    assert data["cells"].max() < npts
    np.testing.assert_array_equal(data["points"], cloud["points"])
    pd = data["point_data"]
    assert set(pd) == {"sigma_xx", "sigma_xy", "sigma_yx", "sigma_yy", "pressure", "velocity"}
    np.testing.assert_allclose(pd["pressure"], -1.0, atol=1e-11)
    np.testing.assert_array_equal(pd["velocity"], u)
    with pytest.raises(ValueError, match="shape"):
        export_vtk(poly_space, tmp_path / "g.vtk", None, {"bad": np.zeros(3)})
