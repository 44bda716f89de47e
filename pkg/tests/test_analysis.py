import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlmd import (ConstantCoupling, ErrorRecord, ExtendedPhaseState, PhaseState, Scalar1d,
                  SimConfig, ToyModel, convergence_study, energy_drift, estimate_order,
                  homogeneous_flow_map, make_initial_condition, residual_trajectory,
                  simulate, sup_error_accumulate)
from xlmd.analysis import (Trajectory, _co_simulate, convergence_studies, default_eps_grid,
                           record_trajectory)
from xlmd.errors import DegenerateInput, DimensionMismatch, TimeMismatch


@pytest.fixture(scope="module")
def toy():
    return ToyModel()


def test_sup_error_identical_states():
    s = ExtendedPhaseState(0.5, np.ones(3), np.ones(3), np.ones(4), np.zeros(4))
    acc = sup_error_accumulate(ErrorRecord(eps=1e-3), s, s, dt=1e-3)
    assert (acc.err_r, acc.err_p, acc.err_x) == (0.0, 0.0, 0.0)


def test_sup_error_offset():
    a = PhaseState(1.0, np.zeros(3), np.zeros(3))
    c = np.array([3.0, 0.0, 4.0])
    b = PhaseState(1.0, c, np.zeros(3))
    acc = sup_error_accumulate(ErrorRecord(eps=1.0), a, b)
    assert acc.err_r == 5.0 and acc.err_p == 0.0 and acc.err_x == 0.0
    # sup keeps the largest value
    acc = sup_error_accumulate(acc, a, PhaseState(1.0, 0.1 * c, np.zeros(3)))
    assert acc.err_r == 5.0


def test_sup_error_time_mismatch():
    a = PhaseState(1.0, np.zeros(1), np.zeros(1))
    b = PhaseState(1.1, np.zeros(1), np.zeros(1))
    with pytest.raises(TimeMismatch):
        sup_error_accumulate(ErrorRecord(eps=1.0), a, b, dt=0.1)
    sup_error_accumulate(ErrorRecord(eps=1.0), a, PhaseState(1.04, a.r, a.p), dt=0.1)


def test_estimate_order_examples():
    eps = np.array([1e-2, 1e-3, 1e-4])
    assert estimate_order(eps, 7 * eps) == pytest.approx(1.0, abs=1e-12)
    assert estimate_order(eps, 3 * np.sqrt(eps)) == pytest.approx(0.5, abs=1e-12)
    assert estimate_order(eps, eps**0.5351) == pytest.approx(0.5351, abs=1e-12)


@settings(max_examples=100)
@given(C=st.floats(1e-6, 1e6), q=st.floats(0.25, 2.0), n=st.integers(3, 12),
       lo=st.floats(-8, -3))
def test_estimate_order_exact_on_power_laws(C, q, n, lo):
    eps = np.logspace(lo, lo + 2, n)
    assert abs(estimate_order(eps, C * eps**q) - q) < 1e-12


def test_estimate_order_degenerate():
    with pytest.raises(DegenerateInput):
        estimate_order([1e-2, 1e-3, 1e-4], [1.0, 0.0, 1.0])
    with pytest.raises(DegenerateInput):
        estimate_order([1e-3, 1e-3, 1e-3], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        estimate_order([1e-2, 1e-3], [1.0, 2.0])


def test_default_grid():
    g = default_eps_grid()
    assert len(g) == 9 and g[0] == pytest.approx(1e-2) and g[-1] == pytest.approx(1e-4)
    np.testing.assert_allclose(g[:-1] / g[1:], 10**0.25)


def test_constant_coupling_flags_exactly_zero():
    m = ConstantCoupling([[2.0, 0.3], [0.3, 1.0]], [1.0, 0.5], d=2, r0=[1.0, 0.0],
                         p0=[0.0, 1.0])
    rep = convergence_study(m, [1e-1, 1e-2, 1e-3], "incompatible", dt=1e-3, t_final=0.5)
    assert rep.flags["r"] == rep.flags["p"] == "exactly_zero"
    assert rep.order_r is None and rep.order_p is None
    assert rep.flags["x"] == "fitted"
    assert not rep.is_convergent("r")


def test_study_rejects_bad_grid(toy):
    with pytest.raises(DegenerateInput):
        convergence_study(toy, [1e-3, 1e-3, 1e-4], dt=1e-5, t_final=1e-4)


def test_study_records_sorted_and_deterministic(toy):
    grid = [1e-3, 1e-2, 3e-3, 3e-4]
    a = convergence_study(toy, grid, "optimal", dt=1e-5, t_final=2e-3)
    assert list(a.eps) == sorted(grid, reverse=True)
    b = convergence_study(toy, grid, "optimal", dt=1e-5, t_final=2e-3, workers=3)
    for ra, rb in zip(a.records, b.records):
        assert (ra.err_r, ra.err_p, ra.err_x) == (rb.err_r, rb.err_p, rb.err_x)
    assert a.orders == b.orders


def test_batch_rows_independent(toy):
    """A row's errors are bit-identical whatever else shares its batch."""
    grid = np.geomspace(1e-2, 1e-4, 5)
    r0, p0 = toy.default_r0, toy.default_p0
    ics = [make_initial_condition(toy, k, r0, p0) for k in ("optimal", "incompatible")]
    x0 = np.array([ics[0].x] * 5 + [ics[1].x] * 5)
    v0 = np.array([ics[0].v] * 5 + [ics[1].v] * 5)
    eps = np.concatenate([grid, grid])
    full = _co_simulate(toy, eps, x0, v0, 1e-5, 5e-3, r0, p0, True)
    for i in (0, 3, 7):
        single = _co_simulate(toy, eps[i:i + 1], x0[i:i + 1], v0[i:i + 1], 1e-5, 5e-3,
                              r0, p0, True)[0]
        assert single == full[i]


def test_studies_match_single_study(toy):
    grid = [1e-2, 1e-3, 1e-4]
    many = convergence_studies(toy, grid, ["compatible", "incompatible"], dt=1e-5,
                               t_final=2e-3)
    one = convergence_study(toy, grid, "incompatible", dt=1e-5, t_final=2e-3)
    assert many["incompatible"].records == one.records


def test_report_csv_roundtrip(toy):
    rep = convergence_study(toy, [1e-2, 1e-3, 1e-4], "compatible", dt=1e-5, t_final=1e-3)
    buf = io.StringIO()
    rep.write_csv(buf, comments=["model=toy"])
    text = buf.getvalue()
    lines = text.splitlines()
    assert lines[0] == "# model=toy"
    rows = list(csv.reader(line for line in lines if not line.startswith("#")))
    assert rows[0] == ["epsilon", "err_r", "err_p", "err_x", "status"]
    assert len(rows) == 4
    for row, rec in zip(rows[1:], rep.records):
        assert float(row[0]) == rec.eps and float(row[3]) == rec.err_x and row[4] == "ok"
    footer = [line for line in lines if line.startswith("# order_")]
    assert len(footer) == 3
    assert float(footer[0].split("=")[1]) == rep.order_r
    assert any(line.startswith("# fit_window=") for line in lines)

    buf = io.StringIO()
    rep.write_plot_data(buf)
    rows = list(csv.reader(buf.getvalue().splitlines()))
    assert rows[0] == ["epsilon", "err_r", "err_p", "err_x"]
    assert [float(r[0]) for r in rows[1:]] == sorted(rep.eps)


class StiffeningCoupling(ConstantCoupling):
    """Free flight with a latent stiffness ``1 + 100 r^2`` that outgrows small ``eps``."""

    def __init__(self):
        super().__init__([[1.0]], [1.0], d=1, stiffness=0.0, r0=[0.0], p0=[5.0])

    def coupling_matrix(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 + 100.0 * r * r)[..., None]

    def coupling_matrix_grad(self, r):
        r = np.asarray(r, dtype=float)
        return (200.0 * r)[..., None, None]


def test_blowup_rows_excluded_and_reported():
    m = StiffeningCoupling()
    rep = convergence_study(m, [1e-2, 3e-3, 1e-3, 1e-4], "compatible", dt=5e-4, t_final=2.0)
    assert [rec.eps for rec in rep.failed] == [1e-4]
    bad = rep.failed[0]
    assert bad.status == "blowup" and 0 < bad.failed_step <= 4000
    assert rep.fit_window == (1e-3, 1e-2)
    assert all(np.isfinite([r.err_r, r.err_p, r.err_x]).all() for r in rep.records if r.ok)


def test_failed_records_flagged(toy, monkeypatch):
    import xlmd.analysis as an

    real = an._co_simulate

    def fake(*args):
        recs = real(*args)
        recs[1].status = "blowup"
        recs[1].failed_step = 7
        return recs

    monkeypatch.setattr(an, "_co_simulate", fake)
    rep = convergence_study(toy, [1e-2, 3e-3, 1e-3, 3e-4], "compatible", dt=1e-5,
                            t_final=1e-3)
    assert [rec.eps for rec in rep.failed] == [3e-3]
    assert rep.fit_window == (3e-4, 1e-2)
    buf = io.StringIO()
    rep.write_csv(buf)
    assert ",blowup" in buf.getvalue()


def test_residual_initial_values(toy):
    r0, p0 = toy.default_r0, toy.default_p0
    comp = make_initial_condition(toy, "compatible", r0, p0)
    t, y, ydot = next(residual_trajectory(toy, [comp]))
    assert t == 0.0 and np.all(y == 0.0)
    opt = make_initial_condition(toy, "optimal", r0, p0)
    t, y, ydot = next(residual_trajectory(toy, [opt]))
    assert np.all(y == 0.0)
    assert np.max(np.abs(ydot)) <= 1e-15


def test_residual_rate_matches_finite_difference(toy):
    states = []
    cfg = SimConfig(eps=1e-3, dt=1e-6, t_final=2e-4, ic_kind="compatible")
    simulate(toy, cfg, "xlmd", observers=[states.append])
    out = list(residual_trajectory(toy, states))
    ys = np.array([y for _, y, _ in out])
    ydots = np.array([yd for _, _, yd in out])
    fd = (ys[2:] - ys[:-2]) / (2 * cfg.dt)
    np.testing.assert_allclose(fd, ydots[1:-1], atol=1e-6, rtol=0)


def test_energy_drift_zero_force():
    m = ConstantCoupling([[1.0]], [0.0], d=2, stiffness=0.0)
    cfg = SimConfig(dt=0.1, t_final=5.0, r0=np.array([1.0, 2.0]), p0=np.array([0.3, -0.4]))
    assert energy_drift(m, cfg, "exact") <= 1e-15


def test_energy_drift_harmonic_second_order():
    m = ConstantCoupling([[2.0]], [1.0], d=1, r0=[1.0], p0=[0.0])
    d1 = energy_drift(m, SimConfig(dt=0.1, t_final=2 * math.pi), "exact")
    d2 = energy_drift(m, SimConfig(dt=0.05, t_final=2 * math.pi), "exact")
    assert 3.5 <= d1 / d2 <= 4.5


def test_energy_drift_xlmd_second_order():
    m = ConstantCoupling([[2.0]], [1.0], d=1, r0=[1.0], p0=[0.0])

    def drift(dt):
        return energy_drift(m, SimConfig(eps=0.5, dt=dt, t_final=2 * math.pi,
                                         ic_kind="incompatible"), "xlmd")

    assert 3.5 <= drift(0.02) / drift(0.01) <= 4.5


def constant_trajectory(a, dt, t_end):
    """Trajectory of a d=1 model whose coupling is the constant ``a``."""
    n = int(round(t_end / dt))
    return ConstantCoupling([[a]], [0.0], d=1), Trajectory(dt, np.zeros((n + 1, 1)))


def test_flow_map_zero_data():
    m, traj = constant_trajectory(2.0, 1e-3, 1.0)
    res = homogeneous_flow_map(m, traj, 1e-2, 0.2, 0.9, eta0=0.0, xi0=0.0)
    assert res.numeric == (0.0, 0.0)
    assert res.predicted == (0.0, 0.0)
    assert np.all(res.numeric_path == 0.0)


@pytest.mark.parametrize("a,eps", [(2.0, 1e-2), (1.5, 1e-3)])
def test_flow_map_constant_coefficient(a, eps):
    dt = 1e-4
    m, traj = constant_trajectory(a, dt, 1.0)
    s, t, xi0 = 0.1, 0.8, 1.3
    res = homogeneous_flow_map(m, traj, eps, s, t, xi0=xi0)
    w = math.sqrt(a / eps)
    tau = res.taus - s
    exact = np.stack([np.sin(w * tau) / w * xi0, np.cos(w * tau) * xi0], axis=1)
    # the leading term is exact for constant coefficients
    np.testing.assert_allclose(res.predicted_path, exact, atol=1e-11, rtol=0)
    # Verlet phase error grows like w^3 dt^2 (t - s)
    bound = (w * dt) ** 2 * w * (t - s) * abs(xi0)
    assert np.max(np.abs(res.numeric_path[:, 1] - exact[:, 1])) <= bound
    assert np.max(np.abs(res.numeric_path[:, 0] - exact[:, 0])) <= bound / w


def test_flow_map_dt_refinement():
    a, eps, s, t = 2.0, 1e-2, 0.0, 1.0
    errs = []
    for dt in (2e-4, 1e-4):
        m, traj = constant_trajectory(a, dt, 1.0)
        res = homogeneous_flow_map(m, traj, eps, s, t, xi0=1.0)
        errs.append(np.max(np.abs(res.numeric_path - res.predicted_path)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_flow_map_errors(toy):
    _, traj = constant_trajectory(2.0, 1e-3, 1.0)
    with pytest.raises(DimensionMismatch):
        homogeneous_flow_map(toy, traj, 1e-2, 0.0, 0.5)
    m = Scalar1d()
    with pytest.raises(ValueError):
        homogeneous_flow_map(m, traj, 1e-2, 0.5, 1.5)
    with pytest.raises(ValueError):
        homogeneous_flow_map(m, traj, 1e-2, 0.6, 0.5)


def test_flow_map_nonzero_eta_has_no_prediction():
    m, traj = constant_trajectory(2.0, 1e-3, 1.0)
    res = homogeneous_flow_map(m, traj, 1e-2, 0.0, 0.5, eta0=1.0, xi0=0.0)
    assert res.predicted is None
    w = math.sqrt(200.0)
    assert res.numeric[0] == pytest.approx(math.cos(w * 0.5), abs=1e-3)


def test_record_trajectory_scalar1d():
    m = Scalar1d()
    traj = record_trajectory(m, SimConfig(eps=1e-3, dt=1e-4, t_final=0.1))
    assert traj.r.shape == (1001, 1)
    assert traj.t_end == pytest.approx(0.1)
    assert traj.r[0, 0] == m.default_r0[0]
    np.testing.assert_allclose(traj.positions([0.05]), traj.r[500:501], rtol=0, atol=1e-15)
