"""Error measurement, convergence orders, conservation and flow-map checks."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .dynamics import (ExtendedPhaseState, ICKind, Integrator, PhaseState, SimConfig,
                       check_stability, exact_forces, exact_md_step, latent_residual,
                       make_initial_condition, simulate, step_count, xlmd_step)
from .errors import DegenerateInput, DimensionMismatch, TimeMismatch
from .linalg import spd_solve, sqrt_spd
from .model import ModelSpec, exact_energy, extended_energy

# Smallest fitted slope read as convergence.
CONVERGENCE_MIN_ORDER = 0.25


def default_eps_grid(n=9, largest=1e-2, smallest=1e-4) -> np.ndarray:
    return np.geomspace(largest, smallest, n)


@dataclass
class ErrorRecord:
    """Sup-over-time Euclidean errors of one XLMD run against the exact run.

    ``sup_residual`` is the sup of ``|x - A(r)^-1 b(r)|`` along the XLMD run
    when it was tracked. ``status`` is ``ok`` or ``blowup``.
    """

    eps: float
    err_r: float = 0.0
    err_p: float = 0.0
    err_x: float = 0.0
    sup_residual: Optional[float] = None
    status: str = "ok"
    failed_step: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def sup_error_accumulate(acc: ErrorRecord, state_a, state_b, dt=None) -> ErrorRecord:
    """Fold the distance between two simultaneous states into ``acc``.

    The latent error is included when both states carry ``x``.
    """
    tol = 0.5 * dt if dt is not None else 1e-12 * max(1.0, abs(state_a.t))
    if abs(state_a.t - state_b.t) > tol:
        raise TimeMismatch(f"states at t={state_a.t!r} and t={state_b.t!r}")
    acc.err_r = max(acc.err_r, float(np.linalg.norm(state_a.r - state_b.r)))
    acc.err_p = max(acc.err_p, float(np.linalg.norm(state_a.p - state_b.p)))
    if getattr(state_a, "x", None) is not None and getattr(state_b, "x", None) is not None:
        acc.err_x = max(acc.err_x, float(np.linalg.norm(state_a.x - state_b.x)))
    return acc


def estimate_order(eps_list, err_list) -> float:
    """Least-squares slope of log(err) against log(eps)."""
    eps = np.asarray(eps_list, dtype=float)
    err = np.asarray(err_list, dtype=float)
    if eps.shape != err.shape or eps.ndim != 1:
        raise DegenerateInput("eps and err must be 1-d and equally long")
    if len(eps) < 3:
        raise DegenerateInput("need at least 3 points")
    if np.any(eps <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise DegenerateInput("eps and err must be strictly positive")
    le = np.log(eps)
    lr = np.log(err)
    le = le - le.mean()
    denom = float(np.dot(le, le))
    if denom == 0.0:
        raise DegenerateInput("all eps equal")
    return float(np.dot(le, lr - lr.mean()) / denom)


VARIABLES = ("r", "p", "x")


@dataclass
class ConvergenceReport:
    """Per-eps errors (eps descending) and fitted convergence orders.

    ``flags[var]`` is ``fitted``, ``exactly_zero`` (every error vanished),
    ``insufficient`` (fewer than 3 usable points) or ``degenerate``.
    """

    records: list
    ic_kind: ICKind
    dt: float
    t_final: float
    orders: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    fit_window: Optional[tuple] = None

    @property
    def order_r(self):
        return self.orders.get("r")

    @property
    def order_p(self):
        return self.orders.get("p")

    @property
    def order_x(self):
        return self.orders.get("x")

    @property
    def failed(self) -> list:
        return [rec for rec in self.records if not rec.ok]

    def errors(self, var) -> np.ndarray:
        return np.array([getattr(rec, f"err_{var}") for rec in self.records])

    @property
    def eps(self) -> np.ndarray:
        return np.array([rec.eps for rec in self.records])

    def is_convergent(self, var) -> bool:
        q = self.orders.get(var)
        return q is not None and q >= CONVERGENCE_MIN_ORDER

    def write_csv(self, stream, comments: Iterable[str] = ()):
        for line in comments:
            stream.write(f"# {line}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["epsilon", "err_r", "err_p", "err_x", "status"])
        for rec in self.records:
            w.writerow([_fmt(rec.eps), _fmt(rec.err_r), _fmt(rec.err_p), _fmt(rec.err_x),
                        rec.status])
        for var in VARIABLES:
            q = self.orders.get(var)
            stream.write(f"# order_{var}={_fmt(q) if q is not None else self.flags[var]}\n")
        if self.fit_window is None:
            stream.write("# fit_window=none\n")
        else:
            lo, hi = self.fit_window
            stream.write(f"# fit_window={_fmt(lo)}:{_fmt(hi)}\n")
        for var in VARIABLES:
            stream.write(f"# convergent_{var}={str(self.is_convergent(var)).lower()}\n")

    def write_plot_data(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["epsilon", "err_r", "err_p", "err_x"])
        for rec in sorted(self.records, key=lambda rec: rec.eps):
            w.writerow([_fmt(rec.eps), _fmt(rec.err_r), _fmt(rec.err_p), _fmt(rec.err_x)])


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _co_simulate(model, eps, x0, v0, dt, t_final, r0, p0, track_residual):
    """Exact MD and a batch of XLMD runs advanced in lockstep.

    Row ``i`` of the batch has latent mass ``eps[i]`` and latent initial
    condition ``(x0[i], v0[i])``; all rows share ``(r0, p0)`` with the exact
    run. Rows are independent: a row's result does not depend on its
    batch-mates.
    """
    eps = np.asarray(eps, dtype=float)
    B = len(eps)
    ext = ExtendedPhaseState(0.0, np.tile(r0, (B, 1)), np.tile(p0, (B, 1)),
                             np.array(x0, dtype=float), np.array(v0, dtype=float))
    xs0, a0 = exact_forces(model, r0)
    ex = PhaseState(0.0, r0, p0, x=xs0, a=a0)

    err = {var: np.zeros(B) for var in VARIABLES}
    res = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    failed_step = [None] * B

    def measure(ex, ext):
        for var in VARIABLES:
            diff = getattr(ext, var) - getattr(ex, var)
            d = np.sqrt(np.sum(diff * diff, axis=-1))
            np.maximum(err[var], d, out=err[var], where=alive)
        if track_residual and alive.any():
            y = latent_residual(model, ext.r[alive], ext.x[alive])
            res[alive] = np.maximum(res[alive], np.sqrt(np.sum(y * y, axis=-1)))

    measure(ex, ext)
    with np.errstate(all="ignore"):
        for n in range(1, step_count(t_final, dt) + 1):
            ex = exact_md_step(model, ex, dt)
            ext = xlmd_step(model, ext, eps, dt, check_finite=False)
            finite = (np.isfinite(ext.r).all(-1) & np.isfinite(ext.p).all(-1)
                      & np.isfinite(ext.x).all(-1) & np.isfinite(ext.v).all(-1))
            for i in np.flatnonzero(alive & ~finite):
                failed_step[i] = n
            alive &= finite
            measure(ex, ext)

    return [ErrorRecord(eps=float(eps[i]), err_r=float(err["r"][i]),
                        err_p=float(err["p"][i]), err_x=float(err["x"][i]),
                        sup_residual=float(res[i]) if track_residual else None,
                        status="ok" if failed_step[i] is None else "blowup",
                        failed_step=failed_step[i])
            for i in range(B)]


def _co_simulate_star(args):
    return _co_simulate(*args)


def _fit(records, ic_kind, dt, t_final) -> ConvergenceReport:
    report = ConvergenceReport(records=records, ic_kind=ic_kind, dt=dt, t_final=t_final)
    usable = [rec for rec in records if rec.ok]
    if len(usable) >= 3:
        report.fit_window = (min(rec.eps for rec in usable), max(rec.eps for rec in usable))
    for var in VARIABLES:
        errs = np.array([getattr(rec, f"err_{var}") for rec in usable])
        if len(usable) >= 1 and np.all(errs == 0.0):
            report.flags[var] = "exactly_zero"
        elif len(usable) < 3:
            report.flags[var] = "insufficient"
        else:
            try:
                report.orders[var] = estimate_order([rec.eps for rec in usable], errs)
                report.flags[var] = "fitted"
            except DegenerateInput:
                report.flags[var] = "degenerate"
    return report


def convergence_studies(model: ModelSpec, eps_grid=None, ic_kinds=tuple(ICKind),
                        dt=1e-5, t_final=5.0, r0=None, p0=None, offset=None,
                        track_residual=False, workers=1) -> dict:
    """Run :func:`convergence_study` for several initial-condition kinds at once.

    Every (kind, eps) pair becomes one row of a single lockstep batch, so the
    exact trajectory is computed once. Returns ``{kind: ConvergenceReport}``.
    """
    kinds = [ICKind(k) for k in ic_kinds]
    eps = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=float)
    if eps.ndim != 1 or len(np.unique(eps)) < 3 or np.any(eps <= 0):
        raise DegenerateInput("eps_grid needs at least 3 distinct positive values")
    eps = np.sort(eps)[::-1]
    r0 = np.asarray(model.default_r0 if r0 is None else r0, dtype=float)
    p0 = np.asarray(model.default_p0 if p0 is None else p0, dtype=float)
    check_stability(model, float(eps.min()), dt, r0)

    row_eps, row_x, row_v = [], [], []
    for kind in kinds:
        ic = make_initial_condition(model, kind, r0, p0, offset)
        row_eps.extend(eps)
        row_x.extend([ic.x] * len(eps))
        row_v.extend([ic.v] * len(eps))
    row_eps = np.array(row_eps)
    row_x = np.array(row_x)
    row_v = np.array(row_v)

    workers = max(1, min(int(workers), len(row_eps)))
    chunks = [c for c in np.array_split(np.arange(len(row_eps)), workers) if len(c)]
    jobs = [(model, row_eps[c], row_x[c], row_v[c], dt, t_final, r0, p0, track_residual)
            for c in chunks]
    if workers == 1:
        parts = [_co_simulate_star(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_co_simulate_star, jobs))
    records = [rec for part in parts for rec in part]

    n = len(eps)
    return {kind: _fit(records[i * n:(i + 1) * n], kind, dt, t_final)
            for i, kind in enumerate(kinds)}


def convergence_study(model: ModelSpec, eps_grid=None, ic_kind=ICKind.COMPATIBLE,
                      dt=1e-5, t_final=5.0, r0=None, p0=None, offset=None,
                      track_residual=False, workers=1) -> ConvergenceReport:
    """Sup errors of XLMD against exact MD for each eps, plus fitted orders.

    All XLMD runs start from the same ``(r0, p0)`` as the exact run and are
    advanced in lockstep with it, so errors are measured at every step. With
    ``workers > 1`` the grid is split across processes; the result does not
    depend on the split.
    """
    ic_kind = ICKind(ic_kind)
    return convergence_studies(model, eps_grid, [ic_kind], dt, t_final, r0, p0, offset,
                               track_residual, workers)[ic_kind]


def residual_trajectory(model: ModelSpec, states: Iterable[ExtendedPhaseState]) -> Iterator:
    """Yield ``(t, y, ydot)`` with ``y = x - A^-1 b`` along an XLMD state stream.

    ``ydot`` subtracts the analytic time derivative of ``A(r)^-1 b(r)``
    along velocity ``p``.
    """
    for s in states:
        if np.shape(s.x)[-1:] != (model.d_prime,):
            raise DimensionMismatch("state has no latent vector of the model's dimension")
        A = model.coupling_matrix(s.r)
        b = model.coupling_vector(s.r)
        xs = spd_solve(A, b)
        dA_p = np.sum(s.p[..., :, None, None] * model.coupling_matrix_grad(s.r), axis=-3)
        db_p = (model.coupling_vector_grad(s.r) @ s.p[..., :, None])[..., 0]
        xs_dot = spd_solve(A, db_p - (dA_p @ xs[..., :, None])[..., 0])
        yield s.t, s.x - xs, s.v - xs_dot


class _EnergyMonitor:
    def __init__(self, energy):
        self.energy = energy
        self.e0 = None
        self.drift = 0.0

    def __call__(self, state):
        e = float(self.energy(state))
        if self.e0 is None:
            self.e0 = e
        self.drift = max(self.drift, abs(e - self.e0))


def energy_monitor(model: ModelSpec, integrator, eps=None) -> _EnergyMonitor:
    if Integrator(integrator) is Integrator.XLMD:
        return _EnergyMonitor(lambda s: extended_energy(model, eps, s.r, s.p, s.x, s.v))
    return _EnergyMonitor(lambda s: exact_energy(model, s.r, s.p))


def energy_drift(model: ModelSpec, config: SimConfig, integrator=Integrator.XLMD) -> float:
    """``max_t |E(t) - E(0)|`` of the conserved energy along the discrete trajectory."""
    mon = energy_monitor(model, integrator, config.eps)
    simulate(model, config, integrator, observers=[mon])
    return mon.drift


@dataclass
class Trajectory:
    """Atomic positions sampled at every step, ``r[n]`` at ``t = n * dt``."""

    dt: float
    r: np.ndarray

    @property
    def t_end(self) -> float:
        return (len(self.r) - 1) * self.dt

    def positions(self, times) -> np.ndarray:
        """Positions at arbitrary times, linearly interpolated per coordinate."""
        grid = np.arange(len(self.r)) * self.dt
        times = np.asarray(times, dtype=float)
        return np.stack([np.interp(times, grid, self.r[:, k]) for k in range(self.r.shape[1])],
                        axis=-1)


def record_trajectory(model: ModelSpec, config: SimConfig,
                      integrator=Integrator.XLMD) -> Trajectory:
    rs = []
    simulate(model, config, integrator, observers=[lambda s: rs.append(np.array(s.r))])
    return Trajectory(config.dt, np.array(rs))


@dataclass
class FlowMapResult:
    """Homogeneous latent flow from ``s`` to ``t`` with initial ``(eta0, xi0)``.

    ``numeric`` and ``predicted`` are ``(y(t), ydot(t))``. The ``*_path``
    arrays hold the same quantities at every ``taus`` node so sup norms over
    ``[s, t]`` can be taken. ``predicted`` is only available for ``eta0 == 0``.
    """

    s: float
    t: float
    eta0: float
    xi0: float
    eps: float
    numeric: tuple
    predicted: Optional[tuple]
    residual: Optional[tuple]
    taus: np.ndarray
    numeric_path: np.ndarray
    predicted_path: Optional[np.ndarray]

    def sup_residual(self) -> np.ndarray:
        """Max over ``[s, t]`` of the absolute residual, ``(y, ydot)``."""
        if self.predicted_path is None:
            raise ValueError("no prediction for eta0 != 0")
        return np.max(np.abs(self.numeric_path - self.predicted_path), axis=0)


def homogeneous_flow_map(model_1d: ModelSpec, trajectory: Trajectory, eps: float,
                         s: float, t: float, eta0: float = 0.0,
                         xi0: float = 1.0) -> FlowMapResult:
    """Integrate ``eps * yddot = -A(r(tau)) y`` and compare with the WKB leading term.

    The numerical flow uses velocity Verlet at the trajectory step with ``A``
    evaluated along the stored positions. For ``eta0 = 0`` the prediction is

        y    = sqrt(eps) (k(t) k(s))^(-1/2) sin(phase) xi0
        ydot = (k(t) / k(s))^(1/2) cos(phase) xi0

    with ``k = sqrt(A)`` and ``phase = (kappa(t) - kappa(s)) / sqrt(eps)``,
    ``kappa`` being the trapezoid-rule integral of ``k``.
    """
    if model_1d.d_prime != 1:
        raise DimensionMismatch("flow map asymptotics need a scalar latent variable")
    if not 0.0 <= s <= t or t > trajectory.t_end * (1 + 1e-12):
        raise ValueError(f"[{s}, {t}] outside trajectory span [0, {trajectory.t_end}]")
    dt = trajectory.dt
    n = step_count(t - s, dt)
    taus = s + dt * np.arange(n + 1)
    taus[-1] = t
    h = np.diff(taus)
    a = model_1d.coupling_matrix(trajectory.positions(taus))[:, 0, 0]
    k = np.array([sqrt_spd([[ai]]).entries[0, 0] for ai in a])

    path = np.empty((n + 1, 2))
    y, ydot = float(eta0), float(xi0)
    path[0] = y, ydot
    for i in range(n):
        ydot += 0.5 * h[i] * (-a[i] * y / eps)
        y += h[i] * ydot
        ydot += 0.5 * h[i] * (-a[i + 1] * y / eps)
        path[i + 1] = y, ydot

    predicted_path = None
    predicted = residual = None
    if eta0 == 0.0:
        kappa = np.concatenate([[0.0], np.cumsum(0.5 * h * (k[1:] + k[:-1]))])
        phase = kappa / math.sqrt(eps)
        predicted_path = np.stack([
            math.sqrt(eps) / np.sqrt(k * k[0]) * np.sin(phase) * xi0,
            np.sqrt(k / k[0]) * np.cos(phase) * xi0,
        ], axis=1)
        predicted = tuple(predicted_path[-1])
        residual = tuple(path[-1] - predicted_path[-1])
    return FlowMapResult(s=s, t=t, eta0=eta0, xi0=xi0, eps=eps, numeric=tuple(path[-1]),
                         predicted=predicted, residual=residual, taus=taus,
                         numeric_path=path, predicted_path=predicted_path)
