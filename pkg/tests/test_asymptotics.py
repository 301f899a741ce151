import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exterior_ma.asymptotics import (
    FitError,
    expected_sigma,
    fit_far_field,
    profile_samples,
    sharpness_growth,
    verify_rate,
)
from exterior_ma.core import RightHandSide, ValidationError
from exterior_ma.radial import exact_radial_solution, mass_integral


def _annulus_samples(n, r_lo, r_hi, m, seed=0):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(m, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = np.exp(rng.uniform(math.log(r_lo), math.log(r_hi), m))
    return dirs * r[:, None]


def _quadratic(x, A, b, c):
    return 0.5 * np.einsum("ij,jk,ik->i", x, A, x) + x @ b + c


class TestFitFarField:
    def test_exact_recovery(self):
        A, b, c = np.diag([2.0, 0.5]), np.array([1.0, -1.0]), 3.0
        x = _annulus_samples(2, 4.0, 64.0, 3000)
        fit = fit_far_field(x, _quadratic(x, A, b, c), include_log=False)
        np.testing.assert_allclose(fit.A, A, atol=1e-10)
        np.testing.assert_allclose(fit.b, b, atol=1e-10)
        assert fit.c == pytest.approx(c, abs=1e-10)
        assert fit.status == "exact"
        assert np.all(fit.rho <= 1e-9)

    def test_planted_inverse_r(self):
        x = _annulus_samples(3, 16.0, 64.0, 6000)
        r = np.linalg.norm(x, axis=1)
        fit = fit_far_field(x, 0.5 * r**2 + 1 / r, window=(16.0, 64.0))
        assert fit.c == pytest.approx(0.0, abs=1e-6)
        assert fit.sigma_hat == pytest.approx(1.0, abs=0.05)
        assert np.all(np.isfinite(fit.rho)) and np.all(fit.rho > 0)

    def test_2d_log_coefficient_from_oracle(self):
        f = RightHandSide.compact_bump(1.0, 1.5)
        p = exact_radial_solution(f, 2)
        x, u = profile_samples(p, (4.0, 64.0))
        fit = fit_far_field(x, u, 2, include_log=True, window=(4.0, 64.0))
        assert fit.d == pytest.approx(mass_integral(f), rel=1e-2)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-10, 10), st.floats(0.2, 3.0))
    def test_sigma_invariant_under_basis_addition(self, b1, b2, c, a):
        x = _annulus_samples(2, 8.0, 64.0, 3000, seed=5)
        r = np.linalg.norm(x, axis=1)
        base = 0.5 * r**2 + r**-1.5
        extra = _quadratic(x, np.diag([a, 1 / a]) - np.eye(2), np.array([b1, b2]), c)
        s0 = fit_far_field(x, base, include_log=False).sigma_hat
        s1 = fit_far_field(x, base + extra, include_log=False).sigma_hat
        assert s1 == pytest.approx(s0, abs=1e-6)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_affine_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(2, 2))
        T = M / math.sqrt(abs(np.linalg.det(M)))
        if np.linalg.det(T) < 0:
            T[:, 0] *= -1
        x = _annulus_samples(2, 4.0, 64.0, 4000, seed)
        u = 0.5 * np.sum((x @ T.T) ** 2, axis=1)
        fit = fit_far_field(x, u, include_log=False)
        np.testing.assert_allclose(fit.A, T.T @ T, atol=1e-9)
        assert abs(fit.det_A - 1.0) <= 1e-8

    def test_too_few_points(self):
        x = _annulus_samples(2, 4.0, 64.0, 60)
        with pytest.raises(FitError):
            fit_far_field(x, np.sum(x**2, 1), include_log=False)

    def test_degenerate_geometry(self):
        # samples on a line: x_2 = 0 makes the quadratic basis rank deficient
        r = np.geomspace(4.0, 64.0, 600)
        x = np.column_stack([np.concatenate([r, -r]), np.zeros(1200)])
        with pytest.raises(FitError):
            fit_far_field(x, 0.5 * x[:, 0] ** 2, include_log=False)

    def test_log_only_in_2d(self):
        x = _annulus_samples(3, 4.0, 64.0, 2000)
        with pytest.raises(ValidationError):
            fit_far_field(x, np.sum(x**2, 1), include_log=True)

    def test_negative_definite_flagged(self):
        x = _annulus_samples(2, 4.0, 64.0, 2000)
        fit = fit_far_field(x, -0.5 * np.sum(x**2, 1), include_log=False)
        assert not fit.valid

    def test_json_and_csv(self, tmp_path):
        x = _annulus_samples(3, 16.0, 64.0, 4000)
        r = np.linalg.norm(x, axis=1)
        fit = fit_far_field(x, 0.5 * r**2 + 1 / r)
        data = json.loads(json.dumps(fit.to_dict()))
        assert {"A", "b", "c", "d", "sigma_hat", "annuli"} <= set(data)
        fit.plot_csv(tmp_path / "rate.csv")
        arr = np.loadtxt(tmp_path / "rate.csv", delimiter=",", skiprows=1)
        assert arr.shape == (6, 2)


class TestVerifyRate:
    @pytest.mark.parametrize("beta", [2.5, 4.0])
    def test_radial_rates(self, beta):
        p = exact_radial_solution(RightHandSide.radial_perturbation(1.0, beta), 3)
        rep = verify_rate(p, expected_sigma(beta, 3))
        assert rep.verdict == "pass", rep.to_dict()
        assert rep.k1["passed"]

    def test_harmonic_tail(self):
        # f = 1 outside a bump, n = 3: w decays like 1/r
        p = exact_radial_solution(RightHandSide.compact_bump(1.0, 1.5), 3)
        rep = verify_rate(p, expected_sigma(math.inf, 3))
        assert rep.sigma_hat == pytest.approx(1.0, abs=0.05)

    def test_narrow_window_is_inconclusive(self):
        p = exact_radial_solution(RightHandSide.radial_perturbation(1.0, 4.0), 3)
        rep = verify_rate(p, 1.0, window=(100.0, 300.0))
        assert rep.verdict == "inconclusive"

    def test_wrong_expectation_fails(self):
        p = exact_radial_solution(RightHandSide.radial_perturbation(1.0, 4.0), 3)
        assert verify_rate(p, 0.5).verdict == "fail"

    def test_expected_sigma(self):
        assert expected_sigma(4.0, 3) == 1.0
        assert expected_sigma(2.5, 3) == 0.5
        assert expected_sigma(math.inf, 3) == 1.0


class TestSharpness:
    @pytest.mark.parametrize("n,target,key", [(3, 1.0, "log"), (2, 0.5, "log2")])
    def test_leading_coefficient(self, n, target, key):
        rep = sharpness_growth(exact_radial_solution(RightHandSide.sharpness(), n))
        assert rep.coefficients[key] == pytest.approx(target, rel=0.05)
        assert rep.verdict.startswith("unbounded")

    @pytest.mark.parametrize("n", [2, 3])
    def test_constant_control(self, n):
        rep = sharpness_growth(exact_radial_solution(RightHandSide.constant(1.0), n))
        assert all(abs(v) <= 1e-6 for v in rep.coefficients.values())
        assert rep.verdict == "bounded correction"
