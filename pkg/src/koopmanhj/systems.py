"""Control-affine systems, costs, linearizations, and Hamiltonian lifts.

A system is ``xdot = f(x) + g(x) u`` with running cost ``q(x) + 0.5 u^T D u``,
``f(0) = 0``, ``D`` symmetric positive definite, and ``q`` vanishing to
second order at the origin.  The optimal-control Hamiltonian is

    H(x, p) = f(x)^T p - 0.5 p^T R(x) p + q(x),      R(x) = g(x) D^{-1} g(x)^T,

whose canonical equations

    xdot = f(x) - R(x) p
    pdot = -(df/dx)^T p + 0.5 d(p^T R(x) p)/dx^T - dq/dx^T

define the 2n-dimensional Hamiltonian vector field ``F(z)``, ``z = (x, p)``.
Its linearization at the origin is the Hamiltonian matrix

    H0 = [[A, -R0], [-Q0, -A^T]],   A = df/dx(0), R0 = B D^{-1} B^T, Q0 = d2q/dx2(0).

Optimal feedback laws downstream always take the form ``u = -D^{-1} g(x)^T p``
for a momentum field ``p(x)`` supplied by one of the solution procedures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import numpy.typing as npt

__all__ = [
    "ControlAffineSystem",
    "Linearization",
    "HamiltonianSystemModel",
    "control_affine_system",
    "linearize",
    "hamiltonian_value",
    "hamiltonian_vector_field",
    "hj_residual",
    "builtin_example1",
    "builtin_pendulum",
    "polynomial_system",
    "pendulum_mass_matrix",
]

_EQ_TOL = 1e-12


def _fd_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian, relative step 1e-6 per coordinate."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(func(x), dtype=float))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.atleast_1d(func(x + e)) - np.atleast_1d(func(x - e))) / (2 * h)
    return J


def _fd_gradient(func: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (func(x + e) - func(x - e)) / (2 * h)
    return grad


@dataclass(frozen=True)
class ControlAffineSystem:
    """Control-affine system with cost and derivative access.

    All maps take and return 1-D numpy arrays (the input map ``g`` returns an
    ``(n, p)`` matrix).  Invariants enforced at construction: ``f(0) = 0``,
    ``D`` symmetric positive definite, ``q(0) = 0``, ``grad_q(0) = 0``, and
    ``hess_q0`` symmetric.
    """

    n: int
    p: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    D: np.ndarray
    q: Callable[[np.ndarray], float]
    jacobian_f: Callable[[np.ndarray], np.ndarray]
    grad_q: Callable[[np.ndarray], np.ndarray]
    hess_q0: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "D", np.atleast_2d(np.asarray(self.D, dtype=float)))
        object.__setattr__(self, "hess_q0", np.asarray(self.hess_q0, dtype=float))
        zero = np.zeros(self.n)
        f0 = np.asarray(self.f(zero), dtype=float)
        if f0.shape != (self.n,) or np.max(np.abs(f0)) > _EQ_TOL:
            raise ValueError(
                f"drift must vanish at the origin: |f(0)| = {np.max(np.abs(f0)):.3e}"
            )
        if self.D.shape != (self.p, self.p):
            raise ValueError(f"control weight shape {self.D.shape} != ({self.p}, {self.p})")
        if np.linalg.norm(self.D - self.D.T) > 1e-12 * (1 + np.linalg.norm(self.D)):
            raise ValueError("control weight must be symmetric")
        if np.min(np.linalg.eigvalsh(self.D)) <= 0:
            raise ValueError("control weight must be positive definite")
        if abs(float(self.q(zero))) > _EQ_TOL:
            raise ValueError(f"state cost must vanish at the origin: q(0) = {self.q(zero)!r}")
        gq0 = np.asarray(self.grad_q(zero), dtype=float)
        if np.max(np.abs(gq0)) > 1e-9:
            raise ValueError(
                f"state-cost gradient must vanish at the origin: |grad_q(0)| = "
                f"{np.max(np.abs(gq0)):.3e}"
            )
        if self.hess_q0.shape != (self.n, self.n) or np.linalg.norm(
            self.hess_q0 - self.hess_q0.T
        ) > 1e-12 * (1 + np.linalg.norm(self.hess_q0)):
            raise ValueError("hess_q0 must be a symmetric n x n matrix")

    def R(self, x: npt.ArrayLike) -> np.ndarray:
        """State-dependent control-energy matrix ``g(x) D^{-1} g(x)^T``."""
        gx = np.atleast_2d(np.asarray(self.g(np.asarray(x, dtype=float)), dtype=float))
        gx = gx.reshape(self.n, self.p)
        return gx @ np.linalg.solve(self.D, gx.T)


@dataclass(frozen=True)
class Linearization:
    """Origin linearization of a system together with its cost matrices."""

    A: np.ndarray
    B: np.ndarray
    R0: np.ndarray
    Q0: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class HamiltonianSystemModel:
    """The 2n-dimensional Hamiltonian vector field and its linearization."""

    base: ControlAffineSystem
    F: Callable[[np.ndarray], np.ndarray]
    H0: np.ndarray
    Fn: Callable[[np.ndarray], np.ndarray]


def control_affine_system(
    n: int,
    p: int,
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    D: npt.ArrayLike,
    q: Callable[[np.ndarray], float],
    jacobian_f: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    grad_q: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    hess_q0: Optional[npt.ArrayLike] = None,
) -> ControlAffineSystem:
    """Build a system, filling missing derivatives with central differences.

    The finite-difference fallbacks use relative step ``1e-6 * max(1, |x_i|)``
    per coordinate — accurate enough for every verification tolerance used in
    this package, but analytic derivatives are preferred when available.
    """
    if jacobian_f is None:
        jacobian_f = lambda x, _f=f: _fd_jacobian(_f, x)  # noqa: E731
    if grad_q is None:
        grad_q = lambda x, _q=q: _fd_gradient(_q, x)  # noqa: E731
    if hess_q0 is None:
        hq = _fd_jacobian(grad_q, np.zeros(n))
        hess_q0 = (hq + hq.T) / 2.0
    return ControlAffineSystem(
        n=n, p=p, f=f, g=g, D=np.atleast_2d(np.asarray(D, dtype=float)), q=q,
        jacobian_f=jacobian_f, grad_q=grad_q, hess_q0=np.asarray(hess_q0, dtype=float),
    )


def linearize(sys: ControlAffineSystem) -> Linearization:
    """Origin linearization: A = df/dx(0), B = g(0), R0 = B D^{-1} B^T, Q0."""
    cond = np.linalg.cond(sys.D)
    if not np.isfinite(cond) or cond >= 1e12:
        raise ValueError("control weight not invertible")
    A = np.asarray(sys.jacobian_f(np.zeros(sys.n)), dtype=float).reshape(sys.n, sys.n)
    B = np.asarray(sys.g(np.zeros(sys.n)), dtype=float).reshape(sys.n, sys.p)
    R0 = B @ np.linalg.solve(sys.D, B.T)
    R0 = (R0 + R0.T) / 2.0
    return Linearization(A=A, B=B, R0=R0, Q0=sys.hess_q0.copy(), D=sys.D.copy())


def hamiltonian_value(sys: ControlAffineSystem, x: npt.ArrayLike, p: npt.ArrayLike) -> float:
    """H(x, p) = f(x)^T p - 0.5 p^T R(x) p + q(x)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != (sys.n,) or p.shape != (sys.n,):
        raise ValueError(f"expected two vectors of length {sys.n}, got {x.shape}, {p.shape}")
    fx = np.asarray(sys.f(x), dtype=float)
    return float(fx @ p - 0.5 * p @ sys.R(x) @ p + sys.q(x))


def hamiltonian_vector_field(sys: ControlAffineSystem) -> HamiltonianSystemModel:
    """Canonical equations of H as a vector field on z = (x, p).

    The momentum equation needs ``d(p^T R(x) p)/dx``; it is computed by
    central finite differences with relative step ``1e-6 * max(1, |x_i|)``
    (for constant input maps the derivative is exactly zero and the
    differences reproduce that to roundoff).
    """
    n = sys.n
    lin = linearize(sys)
    H0 = np.block([[lin.A, -lin.R0], [-lin.Q0, -lin.A.T]])

    def F(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x, p = z[:n], z[n:]
        xdot = np.asarray(sys.f(x), dtype=float) - sys.R(x) @ p

        def pRp(xx: np.ndarray) -> float:
            return float(p @ sys.R(xx) @ p)

        pdot = (
            -np.asarray(sys.jacobian_f(x), dtype=float).T @ p
            + 0.5 * _fd_gradient(pRp, x)
            - np.asarray(sys.grad_q(x), dtype=float)
        )
        return np.concatenate([xdot, pdot])

    def Fn(z: np.ndarray) -> np.ndarray:
        return F(z) - H0 @ np.asarray(z, dtype=float)

    return HamiltonianSystemModel(base=sys, F=F, H0=H0, Fn=Fn)


def hj_residual(
    sys: ControlAffineSystem, V_grad: Callable[[np.ndarray], np.ndarray], x: npt.ArrayLike
) -> float:
    """Pointwise residual of the stationary equation dV/dx f - 0.5 dV/dx R dV/dx^T + q.

    Exact value functions give zero; the returned signed residual is a direct
    a-posteriori quality measure for approximate solutions.
    """
    x = np.asarray(x, dtype=float)
    px = np.asarray(V_grad(x), dtype=float)
    fx = np.asarray(sys.f(x), dtype=float)
    return float(px @ fx - 0.5 * px @ sys.R(x) @ px + sys.q(x))


# ----------------------------------------------------------------------
# Built-in systems
# ----------------------------------------------------------------------

def builtin_example1(control_weight: float = 1.0) -> ControlAffineSystem:
    """Two-dimensional benchmark with closed-form principal eigenfunctions.

        xdot = alpha(x2) * (-cos(x2) (x1 - 2 x2) + 4 (x1 + sin x2),
                             (x1 - 2 x2) + 2 (x1 + sin x2))  +  (1, 0)^T u,
        alpha(x2) = 1 / (cos x2 + 2),
        q(x) = 0.5 ((x1 - 2 x2)^2 + (x1 + sin x2)^2).

    The uncontrolled drift has principal eigenfunctions
    ``phi1 = x1 - 2 x2`` (eigenvalue -1) and ``phi2 = x1 + sin x2``
    (eigenvalue 2), which makes every downstream quantity checkable in
    closed form.  ``control_weight`` sets the scalar control penalty
    ``0.5 * control_weight * u^2``; the default 1.0 is the cost stated with
    the model.  Published reference values for this system exist under
    several weight normalizations, which is why the weight is exposed.
    """
    if control_weight <= 0:
        raise ValueError(f"control_weight must be positive, got {control_weight}")

    def f(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        alpha = 1.0 / (np.cos(x2) + 2.0)
        return alpha * np.array(
            [
                -np.cos(x2) * (x1 - 2 * x2) + 4 * (x1 + np.sin(x2)),
                (x1 - 2 * x2) + 2 * (x1 + np.sin(x2)),
            ]
        )

    def jacobian_f(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        c, s = np.cos(x2), np.sin(x2)
        alpha = 1.0 / (c + 2.0)
        v = np.array([-c * (x1 - 2 * x2) + 4 * (x1 + s), 3 * x1 - 2 * x2 + 2 * s])
        Jv = np.array([[4.0 - c, s * (x1 - 2 * x2) + 6 * c], [3.0, 2 * c - 2.0]])
        dalpha = np.array([0.0, s * alpha * alpha])
        return alpha * Jv + np.outer(v, dalpha)

    def g(x: np.ndarray) -> np.ndarray:
        return np.array([[1.0], [0.0]])

    def q(x: np.ndarray) -> float:
        x1, x2 = x
        return 0.5 * ((x1 - 2 * x2) ** 2 + (x1 + np.sin(x2)) ** 2)

    def grad_q(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        a, b = x1 - 2 * x2, x1 + np.sin(x2)
        return np.array([a + b, -2 * a + np.cos(x2) * b])

    hess_q0 = np.array([[2.0, -1.0], [-1.0, 5.0]])
    return ControlAffineSystem(
        n=2, p=1, f=f, g=g, D=np.array([[float(control_weight)]]), q=q,
        jacobian_f=jacobian_f, grad_q=grad_q, hess_q0=hess_q0,
    )


_PEND_M = 0.5   # cart mass
_PEND_m = 0.2   # pole mass
_PEND_b = 0.1   # cart friction coefficient
_PEND_l = 0.3   # pole half-length
_PEND_I = 0.006  # pole inertia


def pendulum_mass_matrix(theta: float) -> np.ndarray:
    """Configuration-dependent mass matrix of the cart-pole, reduced form.

    The state convention puts the unstable upright equilibrium at the
    origin, so the matrix is evaluated with ``cos(theta - pi)``.
    """
    c = np.cos(theta - np.pi)
    ml = _PEND_m * _PEND_l
    return np.array(
        [[ml * c, _PEND_M + _PEND_m], [_PEND_I + _PEND_m * _PEND_l**2, ml * c]]
    )


def builtin_pendulum(g_gravity: float) -> ControlAffineSystem:
    """Inverted pendulum on a cart, reduced to (theta, theta_dot, cart_vel).

    Cart position is cyclic and removed.  State ``x = (theta, psi, vartheta)``
    with ``theta`` the pole angle (0 = upright), ``psi = theta_dot`` and
    ``vartheta`` the cart velocity; the input ``u`` is the horizontal force
    on the cart.  The accelerations solve the mass-matrix system

        M(theta) (psi_dot, vartheta_dot)^T = (-b vartheta + m l psi^2 s + u,
                                              -m g l s)^T,
        s = sin(theta - pi),

    solved numerically at every evaluation.  Cost: ``q(x) = x^T x`` and
    control weight ``D = 2`` (so the control term is ``0.5 * 2 * u^2 = u^2``).
    """
    if g_gravity <= 0:
        raise ValueError(f"g_gravity must be positive, got {g_gravity}")
    Mc, m, b, l, I = _PEND_M, _PEND_m, _PEND_b, _PEND_l, _PEND_I
    ml = m * l
    Il2 = I + m * l * l

    def _check_mass(theta: float) -> float:
        c = np.cos(theta - np.pi)
        det = (ml * c) ** 2 - (Mc + m) * Il2
        if abs(det) < 1e-12:
            raise RuntimeError(f"mass matrix singular at theta={theta!r}")
        return det

    def f(x: np.ndarray) -> np.ndarray:
        th, ps, vt = x
        det = _check_mass(th)
        c, s = np.cos(th - np.pi), np.sin(th - np.pi)
        r1 = -b * vt + ml * ps * ps * s
        r2 = -m * g_gravity * l * s
        # inverse of [[ml c, Mc+m], [Il2, ml c]] applied to (r1, r2)
        acc1 = (ml * c * r1 - (Mc + m) * r2) / det
        acc2 = (-Il2 * r1 + ml * c * r2) / det
        return np.array([ps, acc1, acc2])

    def g(x: np.ndarray) -> np.ndarray:
        th = x[0]
        det = _check_mass(th)
        c = np.cos(th - np.pi)
        return np.array([[0.0], [ml * c / det], [-Il2 / det]])

    def jacobian_f(x: np.ndarray) -> np.ndarray:
        th, ps, vt = x
        det = _check_mass(th)
        c, s = np.cos(th - np.pi), np.sin(th - np.pi)
        r = np.array([-b * vt + ml * ps * ps * s, -m * g_gravity * l * s])
        adj = np.array([[ml * c, -(Mc + m)], [-Il2, ml * c]])
        Minv = adj / det
        dadj = np.array([[-ml * s, 0.0], [0.0, -ml * s]])
        ddet = -2.0 * ml * ml * c * s
        dMinv = dadj / det - adj * (ddet / det**2)
        dr_dth = np.array([ml * ps * ps * c, -m * g_gravity * l * c])
        dacc_dth = dMinv @ r + Minv @ dr_dth
        dacc_dps = Minv @ np.array([2 * ml * ps * s, 0.0])
        dacc_dvt = Minv @ np.array([-b, 0.0])
        J = np.zeros((3, 3))
        J[0, 1] = 1.0
        J[1:, 0] = dacc_dth
        J[1:, 1] = dacc_dps
        J[1:, 2] = dacc_dvt
        return J

    def q(x: np.ndarray) -> float:
        return float(np.dot(x, x))

    def grad_q(x: np.ndarray) -> np.ndarray:
        return 2.0 * np.asarray(x, dtype=float)

    return ControlAffineSystem(
        n=3, p=1, f=f, g=g, D=np.array([[2.0]]), q=q,
        jacobian_f=jacobian_f, grad_q=grad_q, hess_q0=2.0 * np.eye(3),
    )


def polynomial_system(
    f_terms: Sequence[Sequence[tuple]],
    g_matrix: npt.ArrayLike,
    D: npt.ArrayLike,
    Q0: npt.ArrayLike,
) -> ControlAffineSystem:
    """System with polynomial drift, constant input map, quadratic cost.

    ``f_terms[i]`` lists ``(coefficient, exponents)`` pairs for coordinate i
    of the drift, e.g. ``[(-1.0, (1,)), (1.0, (3,))]`` for ``-x + x^3``.
    Every term must have total degree >= 1 so the origin stays an
    equilibrium.  The cost is ``q(x) = 0.5 x^T Q0 x``.
    """
    g_mat = np.atleast_2d(np.asarray(g_matrix, dtype=float))
    n = g_mat.shape[0]
    p = g_mat.shape[1]
    if len(f_terms) != n:
        raise ValueError(f"f_terms has {len(f_terms)} coordinates, input map has {n} rows")
    coeffs: list[np.ndarray] = []
    expos: list[np.ndarray] = []
    for i, terms in enumerate(f_terms):
        ci = np.array([float(t[0]) for t in terms])
        ei = np.array([tuple(int(v) for v in t[1]) for t in terms], dtype=np.int64).reshape(
            len(terms), n
        )
        if np.any(ei.sum(axis=1) < 1):
            raise ValueError(
                f"drift coordinate {i} has a constant term; the origin must be an equilibrium"
            )
        if np.any(ei < 0):
            raise ValueError(f"negative exponent in drift coordinate {i}")
        coeffs.append(ci)
        expos.append(ei)
    Q0 = np.asarray(Q0, dtype=float)
    if Q0.shape != (n, n):
        raise ValueError(f"Q0 shape {Q0.shape} != ({n}, {n})")

    def f(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array(
            [float(np.sum(c * np.prod(x[None, :] ** e, axis=1))) for c, e in zip(coeffs, expos)]
        )

    def jacobian_f(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        J = np.zeros((n, n))
        for i, (c, e) in enumerate(zip(coeffs, expos)):
            for j in range(n):
                mask = e[:, j] > 0
                if not np.any(mask):
                    continue
                ej = e[mask].copy()
                ej[:, j] -= 1
                J[i, j] = float(
                    np.sum(c[mask] * e[mask, j] * np.prod(x[None, :] ** ej, axis=1))
                )
        return J

    def g(x: np.ndarray) -> np.ndarray:
        return g_mat

    def q(x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ Q0 @ x)

    def grad_q(x: np.ndarray) -> np.ndarray:
        return Q0 @ np.asarray(x, dtype=float)

    return ControlAffineSystem(
        n=n, p=p, f=f, g=g, D=np.atleast_2d(np.asarray(D, dtype=float)), q=q,
        jacobian_f=jacobian_f, grad_q=grad_q, hess_q0=Q0,
    )
