"""Models with a quadratic latent interaction energy.

A model supplies the atomic potential ``U(r)``, its force ``F = -dU/dr``, the
coupling matrix ``A(r)`` (symmetric positive definite), the coupling vector
``b(r)`` and the analytic r-derivatives of ``A`` and ``b``. The interaction
energy is ``Q(r, x) = x.A(r).x / 2 - b(r).x``.

Every model method is vectorized over leading batch dimensions of ``r``:
``r`` of shape ``(..., d)`` gives ``A`` of shape ``(..., d', d')`` and so on.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .linalg import SpdMatrix, spd_solve


class ModelSpec:
    """Base class for a problem definition.

    Subclasses set ``d``, ``d_prime`` and implement the six evaluation
    methods. ``default_r0`` and ``default_p0`` are the initial atomic
    positions and velocities used when a configuration does not supply them.
    """

    name = "model"
    d: int
    d_prime: int
    default_r0: np.ndarray
    default_p0: np.ndarray

    def potential(self, r):
        raise NotImplementedError

    def force(self, r):
        raise NotImplementedError

    def coupling_matrix(self, r):
        raise NotImplementedError

    def coupling_vector(self, r):
        raise NotImplementedError

    def coupling_matrix_grad(self, r):
        """``dA[..., k, :, :]`` is the derivative of ``A`` along ``r_k``."""
        raise NotImplementedError

    def coupling_vector_grad(self, r):
        """``db[..., :, k]`` is the derivative of ``b`` along ``r_k``."""
        raise NotImplementedError

    def interaction_gradient(self, r, x):
        """``dQ/dr`` at fixed ``x``; override when a cheaper closed form exists."""
        x = np.asarray(x, dtype=float)
        dA = self.coupling_matrix_grad(r)
        db = self.coupling_vector_grad(r)
        quad = np.sum((dA @ x[..., None, :, None])[..., 0] * x[..., None, :], axis=-1)
        return 0.5 * quad - (x[..., None, :] @ db)[..., 0, :]

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d}, d_prime={self.d_prime})"


class ToyModel(ModelSpec):
    """Three atomic coordinates coupled to a 20-dimensional latent field.

    U(r) = |r|^4/4 + cos(2(r1+r2+r3)); A(r) is pentadiagonal with diagonal
    2+|r|^2, first off-diagonals -1 and second off-diagonals (1-|r|^2)/2;
    b_k(r) = sin((k/10) r1 + (1-k/20) r2 + r3).
    """

    name = "toy"
    d = 3
    d_prime = 20

    def __init__(self):
        k = np.arange(1, self.d_prime + 1, dtype=float)
        # row k holds the coefficients of r in the argument of b_k
        self._wave = np.stack([k / 10.0, 1.0 - k / 20.0, np.ones_like(k)], axis=1)
        n = self.d_prime
        diag = np.eye(n)
        off1 = np.eye(n, k=1) + np.eye(n, k=-1)
        self._off2 = np.eye(n, k=2) + np.eye(n, k=-2)
        self._diag = diag
        self._const = 2.0 * diag - off1
        self._dA_unit = diag - 0.5 * self._off2
        self.default_r0 = np.array([0.0, 0.5, 1.0])
        self.default_p0 = np.array([1.0, 0.5, -1.0])

    def potential(self, r):
        r = np.asarray(r, dtype=float)
        s = np.sum(r * r, axis=-1)
        return 0.25 * s * s + np.cos(2.0 * np.sum(r, axis=-1))

    def force(self, r):
        r = np.asarray(r, dtype=float)
        s = np.sum(r * r, axis=-1, keepdims=True)
        return -s * r + 2.0 * np.sin(2.0 * np.sum(r, axis=-1, keepdims=True))

    def coupling_matrix(self, r):
        r = np.asarray(r, dtype=float)
        s = np.sum(r * r, axis=-1)[..., None, None]
        # masks are 0/1 so every entry equals its defining formula exactly
        return self._const + s * self._diag + (0.5 * (1.0 - s)) * self._off2

    def _phase(self, r):
        # explicit sums rather than BLAS so each batch row rounds the same as a single call
        r = np.asarray(r, dtype=float)
        w = self._wave
        return r[..., 0:1] * w[:, 0] + r[..., 1:2] * w[:, 1] + r[..., 2:3] * w[:, 2]

    def coupling_vector(self, r):
        return np.sin(self._phase(r))

    def coupling_matrix_grad(self, r):
        r = np.asarray(r, dtype=float)
        return 2.0 * r[..., :, None, None] * self._dA_unit

    def coupling_vector_grad(self, r):
        r = np.asarray(r, dtype=float)
        return np.cos(self._phase(r))[..., :, None] * self._wave

    def interaction_gradient(self, r, x):
        # dA_k = 2 r_k M, so x.dA_k.x / 2 = r_k x.M.x
        r = np.asarray(r, dtype=float)
        x = np.asarray(x, dtype=float)
        xMx = np.sum(x * x, axis=-1) - np.sum(x[..., :-2] * x[..., 2:], axis=-1)
        c = x * np.cos(self._phase(r))
        db_x = np.stack([np.sum(c * w, axis=-1) for w in self._wave.T], axis=-1)
        return r * xMx[..., None] - db_x


class ConstantCoupling(ModelSpec):
    """Constant ``A0``, ``b0`` with a harmonic atomic potential.

    U(r) = stiffness * |r|^2 / 2. With ``stiffness=0`` the atoms fly freely.
    The atomic and latent subsystems are decoupled, which gives closed-form
    latent dynamics.
    """

    name = "constant"

    def __init__(self, A0, b0, d=1, stiffness=1.0, r0=None, p0=None):
        self.A0 = SpdMatrix(np.atleast_2d(np.asarray(A0, dtype=float))).entries
        self.b0 = np.atleast_1d(np.asarray(b0, dtype=float)).copy()
        if self.b0.shape != (self.A0.shape[0],):
            raise DimensionMismatch("b0 length must match A0")
        self.d = int(d)
        self.d_prime = self.A0.shape[0]
        self.stiffness = float(stiffness)
        self.default_r0 = np.ones(self.d) if r0 is None else np.asarray(r0, dtype=float)
        self.default_p0 = np.zeros(self.d) if p0 is None else np.asarray(p0, dtype=float)

    def _batch(self, r):
        return np.asarray(r, dtype=float).shape[:-1]

    def potential(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * self.stiffness * np.sum(r * r, axis=-1)

    def force(self, r):
        return -self.stiffness * np.asarray(r, dtype=float)

    def coupling_matrix(self, r):
        return np.broadcast_to(self.A0, self._batch(r) + self.A0.shape).copy()

    def coupling_vector(self, r):
        return np.broadcast_to(self.b0, self._batch(r) + self.b0.shape).copy()

    def coupling_matrix_grad(self, r):
        n = self.d_prime
        return np.zeros(self._batch(r) + (self.d, n, n))

    def coupling_vector_grad(self, r):
        return np.zeros(self._batch(r) + (self.d_prime, self.d))


class Scalar1d(ModelSpec):
    """U = r^2/2, A = 2 + sin r, b = cos r, with d = d' = 1."""

    name = "scalar1d"
    d = 1
    d_prime = 1

    def __init__(self):
        self.default_r0 = np.array([0.3])
        self.default_p0 = np.array([1.0])

    def potential(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * r[..., 0] ** 2

    def force(self, r):
        return -np.asarray(r, dtype=float)

    def coupling_matrix(self, r):
        r = np.asarray(r, dtype=float)
        return (2.0 + np.sin(r))[..., None]

    def coupling_vector(self, r):
        return np.cos(np.asarray(r, dtype=float))

    def coupling_matrix_grad(self, r):
        r = np.asarray(r, dtype=float)
        return np.cos(r)[..., None, None]

    def coupling_vector_grad(self, r):
        r = np.asarray(r, dtype=float)
        return -np.sin(r)[..., None]


class BuiltinModel(str, enum.Enum):
    TOY = "toy"
    CONSTANT = "constant"
    SCALAR1D = "scalar1d"


def builtin_model(kind) -> ModelSpec:
    """Instantiate a built-in model.

    ``constant`` is the harmonic fixture used by the command line: d = d' = 1,
    A0 = 2, b0 = 1, starting from r = 1 at rest.
    """
    kind = BuiltinModel(kind)
    if kind is BuiltinModel.TOY:
        return ToyModel()
    if kind is BuiltinModel.SCALAR1D:
        return Scalar1d()
    return ConstantCoupling([[2.0]], [1.0], d=1, r0=[1.0], p0=[0.0])


def _check(model, r=None, x=None, p=None):
    if r is not None and np.shape(r)[-1:] != (model.d,):
        raise DimensionMismatch(f"r must have trailing length {model.d}, got {np.shape(r)}")
    if p is not None and np.shape(p)[-1:] != (model.d,):
        raise DimensionMismatch(f"p must have trailing length {model.d}, got {np.shape(p)}")
    if x is not None and np.shape(x)[-1:] != (model.d_prime,):
        raise DimensionMismatch(
            f"latent vector must have trailing length {model.d_prime}, got {np.shape(x)}")


def _quad(M, x):
    """x.M.x over the trailing two axes of M."""
    return np.sum((M @ x[..., :, None])[..., 0] * x, axis=-1)


def interaction_energy(model: ModelSpec, r, x):
    _check(model, r=r, x=x)
    x = np.asarray(x, dtype=float)
    A = model.coupling_matrix(r)
    b = model.coupling_vector(r)
    return 0.5 * _quad(A, x) - np.sum(b * x, axis=-1)


def constraint_solve(model: ModelSpec, r):
    """Latent vector minimizing the interaction energy: ``A(r) x = b(r)``."""
    _check(model, r=r)
    return spd_solve(model.coupling_matrix(r), model.coupling_vector(r))


def coupled_force(model: ModelSpec, r, x):
    """Atomic force at fixed latent vector, ``F(r) - dQ/dr(r, x)``."""
    _check(model, r=r, x=x)
    return model.force(r) - model.interaction_gradient(r, x)


def optimal_velocity(model: ModelSpec, r, p):
    """Time derivative of the constrained latent solution along velocity ``p``.

    Differentiating ``A x = b`` gives ``A xdot = (sum_k p_k db_k) - (sum_k p_k dA_k) x``.
    """
    _check(model, r=r, p=p)
    p = np.asarray(p, dtype=float)
    A = model.coupling_matrix(r)
    b = model.coupling_vector(r)
    x = spd_solve(A, b)
    dA_p = np.sum(p[..., :, None, None] * model.coupling_matrix_grad(r), axis=-3)
    db_p = (model.coupling_vector_grad(r) @ p[..., :, None])[..., 0]
    return spd_solve(A, db_p - (dA_p @ x[..., :, None])[..., 0])


def exact_energy(model: ModelSpec, r, p):
    """Conserved energy of the constrained dynamics, ``|p|^2/2 + U - b.A^-1.b/2``."""
    _check(model, r=r, p=p)
    p = np.asarray(p, dtype=float)
    b = model.coupling_vector(r)
    x = spd_solve(model.coupling_matrix(r), b)
    return 0.5 * np.sum(p * p, axis=-1) + model.potential(r) - 0.5 * np.sum(b * x, axis=-1)


def extended_energy(model: ModelSpec, eps, r, p, x, v):
    """Conserved energy of the extended Lagrangian dynamics with latent mass ``eps``."""
    _check(model, r=r, p=p, x=x)
    _check(model, x=v)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    eps = np.asarray(eps, dtype=float)
    return (0.5 * np.sum(p * p, axis=-1) + 0.5 * eps * np.sum(v * v, axis=-1)
            + model.potential(r) + interaction_energy(model, r, x))


@dataclass
class DerivativeCheck:
    quantity: str
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


@dataclass
class ValidationReport:
    r: np.ndarray
    h: float
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def max_discrepancy(self) -> float:
        return max(c.discrepancy for c in self.checks)

    def __getitem__(self, quantity):
        for c in self.checks:
            if c.quantity == quantity:
                return c
        raise KeyError(quantity)


def _fd_first(f, r, k, h):
    e = np.zeros_like(r)
    e[k] = h
    return (f(r + e) - f(r - e)) / (2.0 * h)


def _fd_third(f, r, k, h):
    e = np.zeros_like(r)
    e[k] = h
    return (f(r + 2 * e) - 2.0 * f(r + e) + 2.0 * f(r - e) - f(r - 2 * e)) / (2.0 * h**3)


def validate_derivatives(model: ModelSpec, r, h=1e-4) -> ValidationReport:
    """Compare the analytic derivatives against central differences.

    Each check passes when the max absolute discrepancy is at most
    ``100 h^2 * scale`` plus a roundoff floor, where ``scale`` is the largest
    third derivative estimated by a five-point stencil with step ``10 h``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    r = np.asarray(r, dtype=float)
    _check(model, r=r)
    H = 10.0 * h
    roundoff = np.finfo(float).eps / h
    report = ValidationReport(r=r.copy(), h=h)

    pairs = [
        ("force", model.force(r), lambda rr: -model.potential(rr), model.potential),
        ("coupling_matrix_grad", model.coupling_matrix_grad(r),
         model.coupling_matrix, model.coupling_matrix),
        ("coupling_vector_grad", np.moveaxis(model.coupling_vector_grad(r), -1, 0),
         model.coupling_vector, model.coupling_vector),
    ]
    for name, analytic, primitive, raw in pairs:
        fd = np.stack([_fd_first(primitive, r, k, h) for k in range(model.d)])
        scale = max(float(np.max(np.abs(_fd_third(raw, r, k, H)))) for k in range(model.d))
        magnitude = max(1.0, float(np.max(np.abs(raw(r)))))
        tol = 100.0 * h * h * scale + 100.0 * roundoff * magnitude
        disc = float(np.max(np.abs(np.asarray(analytic) - fd), initial=0.0))
        report.checks.append(DerivativeCheck(name, disc, tol))
    return report
