"""Tests for the monomial dictionaries and their analytic jacobians."""
import math

import numpy as np
import pytest

from koopmanhj.basis import (
    BasisSet,
    monomial_basis,
    monomial_exponents,
    procedure2_basis,
    value_basis_xi3,
)


def _fd_jacobian(fun, Z, h=1e-6):
    """Central finite-difference jacobian of a batched basis evaluation."""
    Z = np.asarray(Z, dtype=float)
    M = fun(Z).shape[-1]
    out = np.zeros(Z.shape[:-1] + (M, Z.shape[-1]))
    for j in range(Z.shape[-1]):
        dz = np.zeros_like(Z)
        dz[..., j] = h
        out[..., :, j] = (fun(Z + dz) - fun(Z - dz)) / (2 * h)
    return out


class TestMonomialExponents:
    def test_graded_lexicographic_order(self):
        expo = monomial_exponents(2, 2, 3)
        expected = np.array(
            [[2, 0], [1, 1], [0, 2], [3, 0], [2, 1], [1, 2], [0, 3]]
        )
        np.testing.assert_array_equal(expo, expected)

    def test_counts_match_stars_and_bars(self):
        for n in (1, 2, 3):
            for dmin, dmax in ((2, 2), (2, 5), (3, 4)):
                expo = monomial_exponents(n, dmin, dmax)
                count = sum(
                    math.comb(d + n - 1, n - 1) for d in range(dmin, dmax + 1)
                )
                assert expo.shape == (count, n)

    def test_degrees_within_range(self):
        expo = monomial_exponents(3, 2, 4)
        degs = expo.sum(axis=1)
        assert degs.min() == 2 and degs.max() == 4

    def test_rows_unique(self):
        expo = monomial_exponents(3, 2, 5)
        assert len({tuple(r) for r in expo}) == expo.shape[0]


class TestBasisSet:
    def test_eval_matches_direct_monomials(self):
        basis = monomial_basis(2, 2, 4)
        rng = np.random.default_rng(0)
        Z = rng.uniform(-1, 1, size=(50, 2))
        direct = np.stack(
            [Z[:, 0] ** e[0] * Z[:, 1] ** e[1] for e in basis.exponents], axis=-1
        )
        np.testing.assert_allclose(basis.eval(Z), direct, rtol=0, atol=1e-14)

    def test_jacobian_matches_finite_differences(self):
        basis = monomial_basis(3, 2, 4)
        rng = np.random.default_rng(1)
        Z = rng.uniform(-1, 1, size=(20, 3))
        jac = basis.jacobian(Z)
        fd = _fd_jacobian(basis.eval, Z)
        np.testing.assert_allclose(jac, fd, rtol=0, atol=5e-9)

    def test_vanishes_to_first_order_at_origin(self):
        basis = monomial_basis(2, 2, 5)
        z0 = np.zeros(2)
        assert basis.purely_nonlinear
        np.testing.assert_array_equal(basis.eval(z0), np.zeros(basis.M))
        np.testing.assert_array_equal(basis.jacobian(z0), np.zeros((basis.M, 2)))

    def test_batched_and_single_evaluations_agree(self):
        basis = monomial_basis(2, 2, 3)
        rng = np.random.default_rng(2)
        Z = rng.uniform(-1, 1, size=(7, 2))
        batched = basis.eval(Z)
        for k in range(7):
            np.testing.assert_array_equal(basis.eval(Z[k]), batched[k])

    def test_rejects_linear_minimum_degree(self):
        with pytest.raises(ValueError, match="deg_min"):
            monomial_basis(2, 1, 3)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="exponent table"):
            BasisSet(dim_in=2, M=3, exponents=np.zeros((2, 2), dtype=int),
                     purely_nonlinear=True)


class TestValueBasis:
    def test_is_monomials_from_degree_two(self):
        xi3 = value_basis_xi3(2, 4)
        np.testing.assert_array_equal(
            xi3.exponents, monomial_exponents(2, 2, 4)
        )
        assert xi3.purely_nonlinear

    def test_rejects_degree_below_two(self):
        with pytest.raises(ValueError, match="d3"):
            value_basis_xi3(2, 1)


class TestProcedure2Basis:
    def test_block_structure(self):
        b = procedure2_basis(2, 3, 2)
        # first block: x-monomials of degree 2..3 in two variables -> 7
        assert b.N == 7
        # second block: (degree 1..2 x-monomials = 5) x (2 momentum coords)
        assert b.M == 7 + 5 * 2

    def test_eval_splits_into_xi1_and_momentum_linear_part(self):
        b = procedure2_basis(2, 3, 2)
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=2)
        p = rng.uniform(-1, 1, size=2)
        z = np.concatenate([x, p])
        vals = b.eval(z)
        np.testing.assert_allclose(vals[: b.N], b.xi1(x), atol=1e-15)
        np.testing.assert_allclose(vals[b.N :], (b.xi2(x) @ p).ravel(), atol=1e-15)

    def test_linear_in_momentum(self):
        b = procedure2_basis(2, 4, 3)
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, size=2)
        p1, p2 = rng.uniform(-1, 1, size=(2, 2))
        za = np.concatenate([x, p1])
        zb = np.concatenate([x, p2])
        zm = np.concatenate([x, 0.5 * (p1 + p2)])
        np.testing.assert_allclose(
            b.eval(zm), 0.5 * (b.eval(za) + b.eval(zb)), atol=1e-14
        )

    def test_jacobian_matches_finite_differences(self):
        b = procedure2_basis(2, 3, 2)
        rng = np.random.default_rng(5)
        Z = rng.uniform(-1, 1, size=(10, 4))
        np.testing.assert_allclose(
            b.jacobian(Z), _fd_jacobian(b.eval, Z), rtol=0, atol=5e-9
        )

    def test_purely_nonlinear_on_doubled_space(self):
        b = procedure2_basis(2, 3, 2)
        assert b.purely_nonlinear
        z0 = np.zeros(4)
        np.testing.assert_array_equal(b.eval(z0), np.zeros(b.M))
        np.testing.assert_array_equal(b.jacobian(z0), np.zeros((b.M, 4)))
