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
    load_problem,
    smoothstep,
    validate_fa,
)

RHS_CASES = [
    RightHandSide.constant(1.0),
    RightHandSide.constant(2.5),
    RightHandSide.radial_perturbation(1.0, 3.0),
    RightHandSide.radial_perturbation(-0.5, 2.5),
    RightHandSide.sharpness(),
    RightHandSide.compact_bump(1.0, 1.5),
    RightHandSide.compact_bump(0.7, 1.0, center=[0.5, -0.2]),
]


class TestRightHandSide:
    def test_sharpness_profile_exact_outside_bridge(self):
        f = RightHandSide.sharpness()
        r = np.array([0.1, 0.5, 1.0])
        np.testing.assert_array_equal(f.f_r(r), 1.0)
        r = np.array([2.0, 3.0, 10.0, 1e4])
        np.testing.assert_allclose(f.f_r(r), 1.0 + r**-2.0, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("eps", [1e-2, 1e-3])
    def test_bridge_is_c3(self, eps):
        # flat to third order at both ends: s(eps) ~ 35 eps^4 and 1 - s(1 - eps) ~ 35 eps^4
        assert smoothstep(0.0) == 0.0 and smoothstep(1.0) == 1.0
        assert smoothstep(eps) / eps**4 == pytest.approx(35.0, rel=100 * eps)
        assert (1.0 - smoothstep(1.0 - eps)) / eps**4 == pytest.approx(35.0, rel=100 * eps)

    @pytest.mark.parametrize("f", RHS_CASES, ids=lambda f: f.kind)
    def test_two_sided_bound(self, f):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4000, 2)) * rng.exponential(3.0, size=(4000, 1))
        vals = f(x)
        lo, hi = f.bounds
        assert np.all(vals >= lo - 1e-12) and np.all(vals <= hi + 1e-12)
        assert np.all(vals >= 1 / f.c0 - 1e-12) and np.all(vals <= f.c0 + 1e-12)

    @pytest.mark.parametrize("f", RHS_CASES, ids=lambda f: f.kind)
    def test_gradient_matches_finite_differences(self, f):
        rng = np.random.default_rng(1)
        x = rng.uniform(-3, 3, size=(50, 2))
        h = 1e-6
        fd = np.stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
        np.testing.assert_allclose(f.grad(x), fd, atol=1e-6)

    @pytest.mark.parametrize("f", RHS_CASES, ids=lambda f: f.kind)
    def test_json_round_trip(self, f):
        g = RightHandSide.from_dict(json.loads(json.dumps(f.to_dict())))
        x = np.random.default_rng(2).uniform(-4, 4, size=(100, 2))
        np.testing.assert_array_equal(f(x), g(x))

    def test_affine_pullback_requires_unit_determinant(self):
        with pytest.raises(ValidationError):
            RightHandSide.affine_pullback(RightHandSide.sharpness(), np.diag([2.0, 1.0]))

    def test_non_positive_constant_rejected(self):
        with pytest.raises(ValidationError):
            RightHandSide.constant(0.0)


class TestValidateFA:
    def test_constant_has_zero_suprema(self):
        rep = validate_fa(RightHandSide.constant(1.0), 3.0)
        assert rep.passed
        for sup in rep.suprema.values():
            np.testing.assert_array_equal(sup, 0.0)

    def test_planted_r_minus_three(self):
        rep = validate_fa(RightHandSide.radial_perturbation(1.0, 3.0), 3.0, k_max=0)
        assert rep.passed
        np.testing.assert_allclose(rep.suprema[0], 1.0, rtol=1e-12)

    def test_sharpness_fails_at_two_and_a_half(self):
        rep = validate_fa(RightHandSide.sharpness(), 2.5, k_max=0)
        assert not rep.passed
        assert rep.growth_exponents[0] == pytest.approx(0.5, abs=1e-6)

    @pytest.mark.parametrize("f", [RightHandSide.sharpness(), RightHandSide.radial_perturbation(1.0, 3.5)])
    def test_monotone_in_beta(self, f):
        betas = np.linspace(1.0, 4.0, 13)
        verdicts = [validate_fa(f, b, k_max=1).passed for b in betas]
        # once it fails it keeps failing as beta grows
        first_fail = verdicts.index(False) if False in verdicts else len(verdicts)
        assert all(verdicts[:first_fail]) and not any(verdicts[first_fail:])

    def test_pullback_verdict_matches_base(self):
        T = np.array([[2.0, 1.0], [1.0, 1.0]])
        for beta in (2.0, 2.5):
            base = validate_fa(RightHandSide.sharpness(), beta, k_max=1)
            pulled = validate_fa(RightHandSide.affine_pullback(RightHandSide.sharpness(), T), beta, k_max=1)
            assert base.passed == pulled.passed

    def test_bad_ladder(self):
        with pytest.raises(ValidationError):
            validate_fa(RightHandSide.constant(), 3.0, radii=[1.0, 2.0])


class TestQuadraticFarField:
    def test_rejects_bad_determinant(self):
        with pytest.raises(ValidationError):
            QuadraticFarField(2, np.diag([2.0, 1.0]), np.zeros(2))

    def test_rejects_log_in_3d(self):
        with pytest.raises(ValidationError):
            QuadraticFarField(3, np.eye(3), np.zeros(3), 0.0, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.2, 5.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5))
    def test_second_differences_constant(self, a, b1, b2, c):
        F = QuadraticFarField(2, np.diag([a, 1 / a]), np.array([b1, b2]), c)
        rng = np.random.default_rng(3)
        x = rng.uniform(-10, 10, size=(20, 2))
        e = np.array([0.6, 0.8])
        h = 0.5
        d2 = F.evaluate(x + h * e) - 2 * F.evaluate(x) + F.evaluate(x - h * e)
        np.testing.assert_allclose(d2 / h**2, e @ F.A @ e, rtol=1e-8, atol=1e-8)

    def test_log_term(self):
        F = QuadraticFarField.identity(2, c=1.0, d=0.5)
        x = np.array([[3.0, 4.0]])
        assert F.evaluate(x)[0] == pytest.approx(12.5 + 1.0 + 0.5 * math.log(5.0))


class TestInnerDomain:
    def test_ball_geometry(self):
        D = InnerDomain.ball(2.0, n=3)
        assert D.r_bar == 2.0 and D.rho == 2.0
        assert D.curvature_lower_bound == pytest.approx(0.5)

    def test_ellipse_boundary_samples(self):
        D = InnerDomain.ellipse([2.0, 0.5], angle=0.3)
        pts, normals, curv = D.boundary_samples(256)
        np.testing.assert_allclose(D.level(pts), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)
        assert np.min(curv) >= D.curvature_lower_bound * (1 - 1e-9)

    def test_ray_entry_hits_boundary(self):
        D = InnerDomain.ball(1.0)
        t = D.ray_entry(np.array([[3.0, 0.0]]), np.array([-1.0, 0.0]))
        assert t[0] == pytest.approx(2.0)


class TestProblemSpec:
    def test_round_trip_and_load(self, tmp_path):
        data = {"n": 2, "rhs": {"kind": "compact_bump", "params": {"a": 1.0, "width": 1.5}},
                "domain": {"kind": "ball", "radius": 1.0}, "phi": {"expr": "x**2/2 + y**2/2"},
                "far_field": {"c": 0.0}, "R_out": 8.0}
        path = tmp_path / "p.json"
        path.write_text(json.dumps(data))
        P = load_problem(path)
        Q = ProblemSpec.from_dict(P.to_dict())
        assert Q.R_out == 8.0 and Q.phi.expr == P.phi.expr

    def test_r_out_too_small(self):
        with pytest.raises(ValidationError):
            ProblemSpec(2, RightHandSide.constant(), InnerDomain.ball(1.0), BoundaryExpression("0"),
                        QuadraticFarField.identity(2), 3.0)

    def test_bad_phi_symbol(self):
        with pytest.raises(ValidationError):
            BoundaryExpression("q + 1")(np.zeros((1, 2)))

    def test_phi_gradient(self):
        phi = BoundaryExpression("x**2 + 3*y", 2)
        np.testing.assert_allclose(phi.gradient(np.array([[2.0, 1.0]])), [[4.0, 3.0]])
