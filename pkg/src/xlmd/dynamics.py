"""Velocity Verlet integration of the exact and extended Lagrangian dynamics.

The exact dynamics eliminate the latent vector through the constraint
``A(r) x = b(r)`` at every force evaluation. The extended Lagrangian dynamics
(XLMD) instead give the latent vector a fictitious mass ``eps`` and propagate
it with

    eps * xddot = b(r) - A(r) x,

alongside the atoms. Both are stepped kick-drift-kick; the acceleration at
the end of a step is cached on the returned state and reused as the start
acceleration of the next step, so each step costs one force evaluation.

States may carry leading batch dimensions (``r`` of shape ``(B, d)``); the
convergence study uses this to advance many ``eps`` values in one loop.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import BlowUp, DimensionMismatch, StabilityError
from .linalg import max_eigenvalue, spd_solve
from .model import ModelSpec, constraint_solve, coupled_force, optimal_velocity

STABILITY_RATIO = 0.1


class ICKind(str, enum.Enum):
    OPTIMALLY_COMPATIBLE = "optimal"
    COMPATIBLE = "compatible"
    INCOMPATIBLE = "incompatible"


class Integrator(str, enum.Enum):
    EXACT = "exact"
    XLMD = "xlmd"


@dataclass(frozen=True)
class PhaseState:
    """Atomic state of the exact dynamics (unit masses, ``p`` is velocity).

    ``x`` and ``a`` cache the constrained latent vector and the acceleration
    at ``r``; they are filled by the integrator.
    """

    t: float
    r: np.ndarray
    p: np.ndarray
    x: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    a: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ExtendedPhaseState:
    """State of the extended dynamics; ``v`` is the latent velocity.

    ``a`` caches the atomic acceleration and ``g`` the latent restoring force
    ``b(r) - A(r) x`` (independent of ``eps``).
    """

    t: float
    r: np.ndarray
    p: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    g: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def phase(self) -> PhaseState:
        return PhaseState(self.t, self.r, self.p)


@dataclass
class SimConfig:
    eps: float = 1e-3
    dt: float = 1e-5
    t_final: float = 5.0
    ic_kind: ICKind = ICKind.COMPATIBLE
    incompatible_offset: Optional[np.ndarray] = None
    sample_stride: int = 100
    r0: Optional[np.ndarray] = None
    p0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ic_kind = ICKind(self.ic_kind)
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be non-negative")
        if int(self.sample_stride) < 1:
            raise ValueError("sample_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return step_count(self.t_final, self.dt)

    def initial_positions(self, model: ModelSpec):
        r0 = model.default_r0 if self.r0 is None else self.r0
        p0 = model.default_p0 if self.p0 is None else self.p0
        return np.asarray(r0, dtype=float).copy(), np.asarray(p0, dtype=float).copy()


def step_count(t_final: float, dt: float) -> int:
    # tolerate t_final/dt landing a few ulps above an integer
    return max(0, math.ceil(t_final / dt * (1.0 - 1e-12)))


def stability_limit(model: ModelSpec, eps: float, r0) -> float:
    """Period scale of the fastest latent oscillation, ``sqrt(eps / lambda_max)``."""
    return math.sqrt(eps / max_eigenvalue(model.coupling_matrix(r0)))


def check_stability(model: ModelSpec, eps: float, dt: float, r0) -> None:
    """Warn if ``dt`` resolves the latent period with too few steps, raise if unstable."""
    limit = stability_limit(model, eps, r0)
    if dt >= limit:
        raise StabilityError(
            f"dt={dt:g} >= sqrt(eps/lambda_max)={limit:g}; XLMD would be unstable")
    if dt > STABILITY_RATIO * limit:
        warnings.warn(
            f"dt={dt:g} exceeds {STABILITY_RATIO} * sqrt(eps/lambda_max)={STABILITY_RATIO * limit:g}",
            RuntimeWarning, stacklevel=2)


def make_initial_condition(model: ModelSpec, kind, r0, p0, offset=None) -> ExtendedPhaseState:
    """Initial extended state sharing ``(r0, p0)`` with the exact dynamics.

    optimal: constrained latent vector and its exact time derivative.
    compatible: constrained latent vector, zero latent velocity.
    incompatible: constrained latent vector plus ``offset`` (default
    ``(1, -1, 1, -1, ...) / 2``), zero latent velocity.
    """
    kind = ICKind(kind)
    r0 = np.array(r0, dtype=float)
    p0 = np.array(p0, dtype=float)
    if r0.shape != (model.d,) or p0.shape != (model.d,):
        raise DimensionMismatch(f"r0 and p0 must have length {model.d}")
    x0 = constraint_solve(model, r0)
    v0 = np.zeros(model.d_prime)
    if kind is ICKind.OPTIMALLY_COMPATIBLE:
        v0 = optimal_velocity(model, r0, p0)
    elif kind is ICKind.INCOMPATIBLE:
        if offset is None:
            offset = default_offset(model.d_prime)
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (model.d_prime,):
            raise DimensionMismatch(f"offset must have length {model.d_prime}")
        x0 = x0 + offset
    return ExtendedPhaseState(0.0, r0, p0, x0, v0)


def default_offset(d_prime: int) -> np.ndarray:
    return 0.5 * np.where(np.arange(d_prime) % 2 == 0, 1.0, -1.0)


def _all_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def exact_forces(model: ModelSpec, r):
    """Constrained latent vector and atomic acceleration at ``r``."""
    x = constraint_solve(model, r)
    return x, coupled_force(model, r, x)


def exact_md_step(model: ModelSpec, state: PhaseState, dt: float) -> PhaseState:
    """One kick-drift-kick step of the exact constrained dynamics.

    A negative ``dt`` steps backwards in time.
    """
    a = state.a
    if a is None:
        _, a = exact_forces(model, state.r)
    p_half = state.p + 0.5 * dt * a
    r = state.r + dt * p_half
    if not _all_finite(r):
        raise BlowUp("non-finite position in exact MD", state=state)
    x, a = exact_forces(model, r)
    p = p_half + 0.5 * dt * a
    if not _all_finite(p, x):
        raise BlowUp("non-finite state in exact MD", state=state)
    return PhaseState(state.t + dt, r, p, x=x, a=a)


def xlmd_forces(model: ModelSpec, r, x):
    """Atomic acceleration and latent restoring force ``b - A x``."""
    A = model.coupling_matrix(r)
    g = model.coupling_vector(r) - (A @ x[..., :, None])[..., 0]
    return coupled_force(model, r, x), g


def xlmd_step(model: ModelSpec, state: ExtendedPhaseState, eps, dt: float,
              check_finite: bool = True) -> ExtendedPhaseState:
    """One kick-drift-kick step of the extended dynamics.

    ``eps`` may be an array matching the batch shape of ``state``.
    """
    inv_eps = 1.0 / np.asarray(eps, dtype=float)[..., None]
    a, g = state.a, state.g
    if a is None or g is None:
        a, g = xlmd_forces(model, state.r, state.x)
    p_half = state.p + 0.5 * dt * a
    v_half = state.v + (0.5 * dt) * (g * inv_eps)
    r = state.r + dt * p_half
    x = state.x + dt * v_half
    a, g = xlmd_forces(model, r, x)
    p = p_half + 0.5 * dt * a
    v = v_half + (0.5 * dt) * (g * inv_eps)
    if check_finite and not _all_finite(r, p, x, v):
        raise BlowUp("non-finite state in XLMD", state=state)
    return ExtendedPhaseState(state.t + dt, r, p, x, v, a=a, g=g)


Observer = Callable[[object], None]


def simulate(model: ModelSpec, config: SimConfig, integrator=Integrator.XLMD,
             observers: Iterable[Observer] = (), sink: Optional[Observer] = None):
    """Advance from the configured initial condition to ``t_final``.

    Observers see every state including the initial one; ``sink`` sees every
    ``sample_stride``-th state (step 0 included). Times are ``n * dt`` so runs
    are bit-reproducible. Returns the final state.
    """
    integrator = Integrator(integrator)
    observers = list(observers)
    r0, p0 = config.initial_positions(model)
    if integrator is Integrator.XLMD:
        check_stability(model, config.eps, config.dt, r0)
        state = make_initial_condition(model, config.ic_kind, r0, p0,
                                       config.incompatible_offset)

        def step(s):
            return xlmd_step(model, s, config.eps, config.dt)
    else:
        if r0.shape != (model.d,) or p0.shape != (model.d,):
            raise DimensionMismatch(f"r0 and p0 must have length {model.d}")
        x0, a0 = exact_forces(model, r0)
        state = PhaseState(0.0, r0, p0, x=x0, a=a0)

        def step(s):
            return exact_md_step(model, s, config.dt)

    stride = int(config.sample_stride)
    for obs in observers:
        obs(state)
    if sink is not None:
        sink(state)
    for n in range(1, config.n_steps + 1):
        try:
            new = step(state)
        except BlowUp as exc:
            raise BlowUp(f"{exc} at step {n}", state=state, step=n) from None
        state = replace(new, t=n * config.dt)
        for obs in observers:
            obs(state)
        if sink is not None and n % stride == 0:
            sink(state)
    return state


def _fmt(v) -> str:
    return format(float(v), ".17g")


def trajectory_header(model: ModelSpec, extended: bool) -> list:
    cols = ["t"]
    cols += [f"r_{i}" for i in range(1, model.d + 1)]
    cols += [f"p_{i}" for i in range(1, model.d + 1)]
    if extended:
        cols += [f"x_{i}" for i in range(1, model.d_prime + 1)]
        cols += [f"v_{i}" for i in range(1, model.d_prime + 1)]
    return cols


class TrajectoryWriter:
    """Sink writing one CSV row per sampled state."""

    def __init__(self, stream, model: ModelSpec, extended: bool, comments=()):
        self.stream = stream
        self.extended = extended
        for line in comments:
            stream.write(f"# {line}\n")
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(trajectory_header(model, extended))

    def __call__(self, state):
        row = [_fmt(state.t)]
        parts = [state.r, state.p]
        if self.extended:
            parts += [state.x, state.v]
        for part in parts:
            row.extend(_fmt(v) for v in np.ravel(part))
        self._writer.writerow(row)


class ConstraintResidualMonitor:
    """Records the largest ``|A(r) x - b(r)|`` seen by an exact trajectory."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.max_residual = 0.0

    def __call__(self, state: PhaseState):
        x = state.x if state.x is not None else constraint_solve(self.model, state.r)
        res = (self.model.coupling_matrix(state.r) @ x) - self.model.coupling_vector(state.r)
        self.max_residual = max(self.max_residual, float(np.linalg.norm(res)))


def latent_residual(model: ModelSpec, r, x):
    """``x - A(r)^-1 b(r)``, vectorized over batch rows."""
    return x - spd_solve(model.coupling_matrix(r), model.coupling_vector(r))
