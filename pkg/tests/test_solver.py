import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exterior_ma.core import (
    BoundaryExpression,
    InnerDomain,
    ProblemSpec,
    QuadraticFarField,
    RightHandSide,
    ValidationError,
)
from exterior_ma.radial import exact_radial_solution
from exterior_ma.solver import (
    TOL_CONVEX,
    Grid,
    SchemeError,
    comparison_check,
    frames_2d,
    frames_3d,
    ma_operator,
    ma_operator_all,
    problem_grid,
    solve_big_ball,
    solve_dirichlet,
)


def _annulus(rhs=None, phi="(x**2+y**2)/2", R_out=4.0, c=0.0):
    return ProblemSpec(2, rhs or RightHandSide.constant(1.0), InnerDomain.ball(1.0), BoundaryExpression(phi, 2),
                       QuadraticFarField.identity(2, c=c), R_out)


def _quadratic_grid(A, n=2, h=0.1, W=5, R=2.0):
    q = lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x)
    g = Grid.build(n, h, R, None, q, W)
    return g, q(g.coords)


class TestFrames:
    @pytest.mark.parametrize("W", [1, 2, 3, 5])
    def test_2d_frames_orthogonal(self, W):
        for v, w in frames_2d(W):
            assert np.dot(v, w) == 0
            assert math.gcd(abs(int(v[0])), abs(int(v[1]))) == 1
            assert max(abs(v)) <= W

    def test_3d_frames_orthonormal_directions(self):
        for frame in frames_3d():
            F = np.asarray(frame, dtype=float)
            G = F @ F.T
            np.testing.assert_allclose(G - np.diag(np.diag(G)), 0)

    def test_direction_set_closed_under_sign(self):
        g = Grid.build(2, 0.25, 2.0, None, None, 3)
        dirs = {tuple(d) for d in g.directions.tolist()}
        # stored canonically; every direction's negative is the same line
        assert len(dirs) == len(g.directions)


class TestOperator:
    def test_paraboloid_gives_one(self):
        g, u = _quadratic_grid(np.eye(2))
        np.testing.assert_allclose(ma_operator_all(g, u), 1.0, atol=1e-10)

    def test_degenerate_gives_zero(self):
        g, u = _quadratic_grid(np.diag([1.0, 0.0]))
        np.testing.assert_allclose(ma_operator_all(g, u), 0.0, atol=1e-10)
        assert ma_operator(u, g, 0) == pytest.approx(0.0, abs=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.2, 5.0))
    def test_aligned_quadratic_exact(self, a):
        g, u = _quadratic_grid(np.diag([a, 1 / a]), h=0.2, W=2)
        np.testing.assert_allclose(ma_operator_all(g, u), 1.0, atol=1e-10)

    def test_misaligned_error_decreases_in_W(self):
        t = 0.3
        R = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        A = R @ np.diag([3.0, 1 / 3.0]) @ R.T
        errs = []
        for W in (1, 2, 3, 5):
            g, u = _quadratic_grid(A, h=0.1, W=W, R=1.5)
            errs.append(float(np.max(np.abs(ma_operator_all(g, u) - 1.0))))
        # frame sets are nested, so the error can only stay level or drop
        assert all(b <= a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.01 * errs[0]

    def test_3d_paraboloid(self):
        g, u = _quadratic_grid(np.eye(3), n=3, h=0.25, R=1.5)
        np.testing.assert_allclose(ma_operator_all(g, u), 1.0, atol=1e-10)
        assert g.reduced_angular_resolution

    def test_sharpness_oracle_consistency(self):
        f = RightHandSide.sharpness()
        p = exact_radial_solution(f, 2)
        h, W = 0.05, 5
        g = Grid.build(2, h, 7.0, None, lambda x: p.u(np.linalg.norm(x, axis=-1)), W)
        u = p.u(np.linalg.norm(g.coords, axis=1))
        k = int(np.argmin(np.linalg.norm(g.coords - [5.0, 0.0], axis=1)))
        assert ma_operator(u, g, k) == pytest.approx(1.04, abs=10 * (h**2 + W**-2.0))

    def test_bad_node(self):
        g, u = _quadratic_grid(np.eye(2))
        with pytest.raises(SchemeError):
            ma_operator(u, g, g.n_unknown)


class TestDirichlet:
    @pytest.mark.parametrize("init", ["subsolution", "supersolution"])
    def test_paraboloid_annulus(self, init):
        sol = solve_dirichlet(_annulus(), h=0.2, W=2, init=init)
        exact = 0.5 * np.sum(sol.coords**2, axis=1)
        assert sol.converged
        assert np.max(np.abs(sol.values - exact)) <= 1e-8
        assert sol.discretely_convex
        assert sol.min_second_difference() >= -TOL_CONVEX

    def test_sub_and_super_agree(self):
        prob = _annulus(RightHandSide.compact_bump(0.5, 1.0, center=[2.0, 0.0]))
        a = solve_dirichlet(prob, h=0.2, W=2, init="subsolution")
        b = solve_dirichlet(prob, h=0.2, W=2, init="supersolution")
        assert np.max(np.abs(a.values - b.values)) <= 10 * a.tol

    def test_monotone_sweeps_nondecreasing(self):
        prob = _annulus(RightHandSide.constant(1.3))
        sol = solve_dirichlet(prob, h=0.25, W=2, sweeps=30, newton=True)
        assert sol.sweeps >= 1 and sol.converged

    def test_unknown_init(self):
        with pytest.raises(ValidationError):
            solve_dirichlet(_annulus(), h=0.25, W=2, init="zero")

    def test_custom_init_needs_guess(self):
        with pytest.raises(ValidationError):
            solve_dirichlet(_annulus(), h=0.25, W=2, init="custom")

    def test_export(self, tmp_path):
        sol = solve_dirichlet(_annulus(), h=0.25, W=2)
        sol.to_csv(tmp_path / "sol.csv")
        data = np.loadtxt(tmp_path / "sol.csv", delimiter=",", skiprows=1)
        assert data.shape == (sol.grid.n_unknown, 4)
        meta = json.loads((tmp_path / "sol.json").read_text())
        assert meta["W"] == 2 and meta["converged"]


class TestComparison:
    def test_equal_data(self):
        prob = _annulus()
        a = solve_dirichlet(prob, h=0.25, W=2)
        b = solve_dirichlet(prob, h=0.25, W=2, init="supersolution")
        rep = comparison_check(a, b)
        assert rep.ordered and abs(rep.worst_violation) <= 2 * a.tol

    def test_larger_rhs_is_smaller(self):
        a = solve_dirichlet(_annulus(RightHandSide.constant(1.2)), h=0.2, W=2)
        b = solve_dirichlet(_annulus(RightHandSide.constant(1.0)), h=0.2, W=2)
        rep = comparison_check(a, b, RightHandSide.constant(1.2), RightHandSide.constant(1.0))
        assert rep.ordered and rep.worst_violation < 0

    def test_boundary_perturbation(self):
        a = solve_dirichlet(_annulus(), h=0.2, W=2)
        b = solve_dirichlet(_annulus(c=1.0), h=0.2, W=2)
        assert comparison_check(a, b).ordered

    def test_mismatched_grids(self):
        a = solve_dirichlet(_annulus(), h=0.2, W=2)
        b = solve_dirichlet(_annulus(), h=0.25, W=2)
        with pytest.raises(ValidationError):
            comparison_check(a, b)


def test_big_ball_constant_is_exact():
    sol = solve_big_ball(RightHandSide.constant(1.0), 2, 4.0, 0.25, W=2)
    np.testing.assert_allclose(sol.values, 0.5 * np.sum(sol.coords**2, axis=1), atol=1e-9)
    assert sol.certificate["strict_sandwich_ok"]


def test_problem_grid_boundary_data():
    prob = _annulus(phi="1 + x")
    g = problem_grid(prob, 0.25, 2)
    assert g.n_unknown > 0
    assert np.all(np.linalg.norm(g.coords, axis=1) > 1.0 - 1e-12)
