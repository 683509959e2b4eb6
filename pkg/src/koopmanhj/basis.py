"""Monomial basis dictionaries with analytic gradients.

Two kinds of dictionaries are provided:

* :class:`BasisSet` — purely nonlinear monomial bases ``x^alpha`` with
  ``deg_min <= |alpha| <= deg_max`` and ``deg_min >= 2``, used to expand the
  nonlinear part of principal eigenfunctions and of value functions.  Because
  every exponent vector has total degree at least two, ``eval(0) = 0`` and
  ``jacobian(0) = 0`` hold exactly by construction.

* :class:`Procedure2Basis` — a dictionary on the doubled phase space
  ``z = (x, p)`` whose entries are at most linear in ``p``:
  ``Gamma(z) = (Xi1(x)^T, (Xi2(x) p)^T)^T`` where ``Xi1`` collects
  x-monomials of degree ``2..d1`` and the second block collects products
  ``m(x) * p_i`` for every x-monomial ``m`` of degree ``1..d2`` and every
  momentum component ``p_i``.  This linear-in-p structure is what lets the
  stable-manifold equation be solved for ``p`` in closed form downstream.

Monomials are ordered graded-lexicographically (ascending total degree,
then lexicographic with the first coordinate most significant), which makes
every dictionary — and everything computed from it — reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

__all__ = [
    "BasisSet",
    "Procedure2Basis",
    "monomial_basis",
    "monomial_exponents",
    "procedure2_basis",
    "value_basis_xi3",
]


def monomial_exponents(n: int, deg_min: int, deg_max: int) -> np.ndarray:
    """Exponent table of all monomials in ``n`` variables, graded-lex order.

    Returns an integer array of shape ``(M, n)``; row ``j`` holds the
    exponent vector ``alpha`` of the j-th monomial ``x^alpha`` with
    ``deg_min <= |alpha| <= deg_max``.  Ordering: ascending total degree,
    then descending exponent tuples (so for n=2, degree 2 the order is
    ``x1^2, x1*x2, x2^2``).
    """
    if n < 1:
        raise ValueError(f"dimension must be positive, got n={n}")
    if deg_max < deg_min:
        raise ValueError(f"deg_max={deg_max} < deg_min={deg_min}")
    rows: list[tuple[int, ...]] = []
    for deg in range(deg_min, deg_max + 1):
        combos = [
            alpha
            for alpha in itertools.product(range(deg + 1), repeat=n)
            if sum(alpha) == deg
        ]
        # lexicographic with x1 most significant: descending exponent tuples
        combos.sort(key=lambda alpha: tuple(-a for a in alpha))
        rows.extend(combos)
    return np.array(rows, dtype=np.int64).reshape(len(rows), n)


def _eval_monomials(exponents: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Evaluate monomials at points ``Z`` of shape (..., n) -> (..., M)."""
    return np.prod(Z[..., None, :] ** exponents, axis=-1)


def _jacobian_monomials(exponents: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Analytic jacobian of the monomials: shape (..., M, n).

    d(x^alpha)/dx_j = alpha_j * x^(alpha - e_j), using the convention that a
    decremented negative exponent contributes zero (its coefficient
    ``alpha_j`` is zero then anyway).
    """
    M, n = exponents.shape
    out = np.zeros(Z.shape[:-1] + (M, n), dtype=float)
    for j in range(n):
        ej = exponents.copy()
        mask = ej[:, j] > 0
        if not np.any(mask):
            continue
        ej[mask, j] -= 1
        vals = np.prod(Z[..., None, :] ** ej[mask, :], axis=-1)
        out[..., mask, j] = exponents[mask, j] * vals
    return out


@dataclass(frozen=True)
class BasisSet:
    """A finite monomial dictionary with analytic gradients.

    Attributes
    ----------
    dim_in : input dimension.
    M : number of basis functions.
    exponents : (M, dim_in) integer exponent table (the full descriptor).
    purely_nonlinear : True when every row has total degree >= 2, in which
        case ``eval(0) = 0`` and ``jacobian(0) = 0`` exactly.
    """

    dim_in: int
    M: int
    exponents: np.ndarray
    purely_nonlinear: bool

    def __post_init__(self) -> None:
        expo = np.asarray(self.exponents, dtype=np.int64)
        if expo.shape != (self.M, self.dim_in):
            raise ValueError(
                f"exponent table shape {expo.shape} does not match "
                f"(M, dim_in)=({self.M}, {self.dim_in})"
            )
        object.__setattr__(self, "exponents", expo)

    def eval(self, Z: npt.ArrayLike) -> np.ndarray:
        """Basis values at ``Z`` with shape (..., dim_in) -> (..., M)."""
        Z = np.asarray(Z, dtype=float)
        return _eval_monomials(self.exponents, Z)

    def jacobian(self, Z: npt.ArrayLike) -> np.ndarray:
        """Analytic jacobian at ``Z``: shape (..., M, dim_in)."""
        Z = np.asarray(Z, dtype=float)
        return _jacobian_monomials(self.exponents, Z)

    @property
    def descriptor(self) -> dict:
        """Serializable description that fully determines the basis."""
        return {
            "kind": "monomial",
            "dim_in": self.dim_in,
            "exponents": self.exponents.tolist(),
        }

    @staticmethod
    def from_descriptor(desc: dict) -> "BasisSet":
        if desc.get("kind") != "monomial":
            raise ValueError(f"unknown basis descriptor kind: {desc.get('kind')!r}")
        expo = np.array(desc["exponents"], dtype=np.int64)
        if expo.ndim != 2 or expo.shape[1] != desc["dim_in"]:
            raise ValueError("malformed exponent table in basis descriptor")
        nonlin = bool(np.all(expo.sum(axis=1) >= 2))
        return BasisSet(
            dim_in=int(desc["dim_in"]),
            M=expo.shape[0],
            exponents=expo,
            purely_nonlinear=nonlin,
        )


def monomial_basis(n: int, deg_min: int, deg_max: int) -> BasisSet:
    """Purely nonlinear monomial dictionary on R^n, degrees deg_min..deg_max.

    ``deg_min >= 2`` is required so that the dictionary vanishes to first
    order at the origin and can represent the purely nonlinear part of an
    eigenfunction without perturbing its linear part.
    """
    if deg_min < 2:
        raise ValueError(f"deg_min must be >= 2 for a purely nonlinear basis, got {deg_min}")
    expo = monomial_exponents(n, deg_min, deg_max)
    return BasisSet(dim_in=n, M=expo.shape[0], exponents=expo, purely_nonlinear=True)


def value_basis_xi3(n: int, d3: int) -> BasisSet:
    """Value-function dictionary Xi3: x-monomials of degree 2..d3.

    Quadratic forms ``Xi3(x)^T Jn Xi3(x)`` built on this dictionary contain
    only quartic-and-higher terms, so they parameterize the value-function
    content beyond its quadratic (Riccati) part.
    """
    if d3 < 2:
        raise ValueError(f"d3 must be >= 2, got {d3}")
    return monomial_basis(n, 2, d3)


@dataclass(frozen=True)
class Procedure2Basis:
    """Dictionary on z = (x, p) that is at most linear in p.

    ``eval(z) = (Xi1(x)^T, (Xi2(x) p)^T)^T`` with

    * ``Xi1``: x-monomials of degree 2..d1 (``N`` functions);
    * second block: ``m_j(x) * p_i`` for x-monomials ``m_j`` of degree
      1..d2 (monomial-major, then momentum index), ``M - N`` functions.

    Both blocks vanish at the origin together with their jacobians, so this
    is a purely nonlinear dictionary on the doubled space: the x-degree of
    every entry in the second block is at least one, hence every entry has
    total degree at least two.
    """

    n: int
    N: int
    M: int
    xi1_exponents: np.ndarray  # (N, n)
    xi2_exponents: np.ndarray  # (K, n) x-monomials of degree 1..d2, K = (M-N)/n

    def __post_init__(self) -> None:
        for name in ("xi1_exponents", "xi2_exponents"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        K = self.xi2_exponents.shape[0]
        if self.M != self.N + K * self.n:
            raise ValueError(
                f"inconsistent sizes: M={self.M}, N={self.N}, "
                f"{K} x-monomials x {self.n} momentum components"
            )

    # ------------------------------------------------------------------
    # BasisSet-compatible interface on the doubled space
    # ------------------------------------------------------------------
    @property
    def dim_in(self) -> int:
        return 2 * self.n

    @property
    def purely_nonlinear(self) -> bool:
        return True

    def eval(self, Z: npt.ArrayLike) -> np.ndarray:
        """Values at z = (x, p): shape (..., 2n) -> (..., M)."""
        Z = np.asarray(Z, dtype=float)
        x, p = Z[..., : self.n], Z[..., self.n :]
        xi1 = _eval_monomials(self.xi1_exponents, x)  # (..., N)
        mono = _eval_monomials(self.xi2_exponents, x)  # (..., K)
        block2 = mono[..., :, None] * p[..., None, :]  # (..., K, n)
        block2 = block2.reshape(Z.shape[:-1] + (-1,))
        return np.concatenate([xi1, block2], axis=-1)

    def jacobian(self, Z: npt.ArrayLike) -> np.ndarray:
        """Analytic jacobian w.r.t. z = (x, p): shape (..., M, 2n)."""
        Z = np.asarray(Z, dtype=float)
        x, p = Z[..., : self.n], Z[..., self.n :]
        n, N = self.n, self.N
        K = self.xi2_exponents.shape[0]
        out = np.zeros(Z.shape[:-1] + (self.M, 2 * n), dtype=float)
        out[..., :N, :n] = _jacobian_monomials(self.xi1_exponents, x)
        dmono = _jacobian_monomials(self.xi2_exponents, x)  # (..., K, n)
        mono = _eval_monomials(self.xi2_exponents, x)  # (..., K)
        # d(m_j p_i)/dx = p_i dm_j/dx ; d(m_j p_i)/dp_l = m_j delta_il
        dx_block = dmono[..., :, None, :] * p[..., None, :, None]  # (..., K, n, n)
        out[..., N:, :n] = dx_block.reshape(Z.shape[:-1] + (K * n, n))
        eye = np.eye(n)
        dp_block = mono[..., :, None, None] * eye[None, :, :]  # (..., K, n, n)
        out[..., N:, n:] = dp_block.reshape(Z.shape[:-1] + (K * n, n))
        return out

    # ------------------------------------------------------------------
    # Structured accessors
    # ------------------------------------------------------------------
    def xi1(self, x: npt.ArrayLike) -> np.ndarray:
        """Xi1(x): shape (..., N)."""
        return _eval_monomials(self.xi1_exponents, np.asarray(x, dtype=float))

    def xi2(self, x: npt.ArrayLike) -> np.ndarray:
        """Xi2(x): shape (..., M - N, n), so that block2 = Xi2(x) @ p."""
        x = np.asarray(x, dtype=float)
        mono = _eval_monomials(self.xi2_exponents, x)  # (..., K)
        K = self.xi2_exponents.shape[0]
        n = self.n
        eye = np.eye(n)
        block = mono[..., :, None, None] * eye[None, :, :]
        return block.reshape(x.shape[:-1] + (K * n, n))

    @property
    def descriptor(self) -> dict:
        return {
            "kind": "structured",
            "n": self.n,
            "xi1_exponents": self.xi1_exponents.tolist(),
            "xi2_exponents": self.xi2_exponents.tolist(),
        }

    @staticmethod
    def from_descriptor(desc: dict) -> "Procedure2Basis":
        if desc.get("kind") != "structured":
            raise ValueError(f"unknown basis descriptor kind: {desc.get('kind')!r}")
        xi1 = np.array(desc["xi1_exponents"], dtype=np.int64)
        xi2 = np.array(desc["xi2_exponents"], dtype=np.int64)
        n = int(desc["n"])
        N = xi1.shape[0]
        return Procedure2Basis(
            n=n, N=N, M=N + xi2.shape[0] * n, xi1_exponents=xi1, xi2_exponents=xi2
        )


def procedure2_basis(n: int, d1: int, d2: int) -> Procedure2Basis:
    """Structured dictionary for the momentum-linear manifold expansion.

    Xi1 holds the x-monomials of degree 2..d1; the second block holds
    ``m(x) * p_i`` for every x-monomial ``m`` of degree 1..d2 and every
    momentum component.  With this structure the joint zero-level set
    ``W^T z + U Gamma(z) = 0`` is linear in ``p`` and can be solved for the
    manifold ``p = p*(x)`` pointwise.
    """
    if d1 < 2:
        raise ValueError(f"d1 must be >= 2, got {d1}")
    if d2 < 1:
        raise ValueError(f"d2 must be >= 1, got {d2}")
    xi1 = monomial_exponents(n, 2, d1)
    xi2 = monomial_exponents(n, 1, d2)
    N = xi1.shape[0]
    return Procedure2Basis(
        n=n, N=N, M=N + xi2.shape[0] * n, xi1_exponents=xi1, xi2_exponents=xi2
    )
