"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with the measured value and its
tolerance; ``conftest.py`` prints the collected lines at the end of the run.
Run ``python tests/test_acceptance.py`` to print them directly.
"""
import math

import numpy as np
import pytest

from exterior_ma.asymptotics import (
    expected_sigma,
    fit_far_field,
    profile_samples,
    sharpness_growth,
    verify_rate,
)
from exterior_ma.core import BoundaryExpression, InnerDomain, ProblemSpec, QuadraticFarField, RightHandSide
from exterior_ma.harness import ExperimentSpec, run_experiment
from exterior_ma.radial import exact_radial_solution, mass_integral, mu1, solve_d_for_c
from exterior_ma.solver import comparison_check, solve_big_ball, solve_dirichlet

RESULTS: list = []

BUMP = RightHandSide.compact_bump(1.0, 1.5)


def record(number, name, value, tol, ok=None, comparator="<="):
    if ok is None:
        ok = value <= tol if comparator == "<=" else value >= tol
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: value={value:.6g} {comparator} tol={tol:.6g}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def big_ball_16():
    # shared by the log-coefficient grid check and the sandwich certificate
    return solve_big_ball(BUMP, 2, 16.0, 1 / 16, W=5)


def test_c01_radial_det_identity():
    worst = 0.0
    for f in (RightHandSide.constant(1.0), BUMP, RightHandSide.sharpness()):
        for n in (2, 3):
            worst = max(worst, exact_radial_solution(f, n).det_residual())
    assert record(1, "radial det residual (f=1, bump, sharpness; n=2,3)", worst, 1e-8)


def test_c02_constants_calculus():
    f = RightHandSide.constant(1.0)
    r_bar, beta1 = 2.0, 0.7
    err = abs(mu1(f, 3, 1.0, r_bar, beta1) - (beta1 - r_bar**2 / 2))
    ok1 = record(2, "mu1(1) - (beta1 - r_bar^2/2)", err, 1e-12)
    vals = [mu1(f, 3, d, r_bar, beta1) for d in (1.0, 2.0, 4.0, 8.0)]
    gap = min(b - a for a, b in zip(vals, vals[1:]))
    ok2 = record(2, "mu1 increasing on d=1,2,4,8 (min increment)", gap, 0.0, comparator=">=") and gap > 0
    mu = lambda d: mu1(f, 3, d, r_bar, beta1)
    worst = 0.0
    for c in (-1.0, 0.0, 3.0, 25.0):
        worst = max(worst, abs(mu(solve_d_for_c(mu, c, d0=1.0)) - c))
    ok3 = record(2, "solve_d_for_c round trip", worst, 1e-9)
    assert ok1 and ok2 and ok3


@pytest.mark.parametrize("n,key,target", [(3, "log", 1.0), (2, "log2", 0.5)])
def test_c03_sharpness(n, key, target):
    rep = sharpness_growth(exact_radial_solution(RightHandSide.sharpness(), n), window=(1e2, 1e4))
    rel = abs(rep.coefficients[key] - target) / target
    assert record(3, f"sharpness {key} coefficient n={n} relative error", rel, 0.05)


@pytest.mark.parametrize("beta", [2.5, 4.0])
def test_c04_radial_rate(beta):
    p = exact_radial_solution(RightHandSide.radial_perturbation(1.0, beta), 3)
    rep = verify_rate(p, expected_sigma(beta, 3), window=(1e2, 1e3))
    err = abs(rep.sigma_hat - expected_sigma(beta, 3))
    assert record(4, f"sigma_hat error beta={beta}", err, 0.05)


def test_c05_log_coefficient_oracle():
    target = mass_integral(BUMP)
    x, u = profile_samples(exact_radial_solution(BUMP, 2), (4.0, 64.0))
    fit = fit_far_field(x, u, 2, include_log=True, window=(4.0, 64.0))
    assert record(5, "d_hat relative error, oracle samples", abs(fit.d - target) / target, 0.01)


def test_c05_log_coefficient_grid(big_ball_16):
    target = mass_integral(BUMP)
    fit = fit_far_field(big_ball_16.coords, big_ball_16.values, 2, include_log=True, window=(2.0, 8.0))
    assert record(5, "d_hat relative error, grid h=1/16 W=5 R=16", abs(fit.d - target) / target, 0.05)


def test_c06_paraboloid_refinement():
    prob = ProblemSpec(2, RightHandSide.constant(1.0), InnerDomain.ball(1.0), BoundaryExpression("(x**2+y**2)/2", 2),
                       QuadraticFarField.identity(2), 4.0)
    errs = []
    for h, W in ((0.2, 2), (0.1, 4), (0.05, 6)):
        sol = solve_dirichlet(prob, h=h, W=W)
        errs.append(float(np.max(np.abs(sol.values - 0.5 * np.sum(sol.coords**2, axis=1)))))
    # the scheme is exact on this paraboloid, so "decreasing" is read above the roundoff floor
    floor = 1e-9
    monotone = all(b <= a or b <= floor for a, b in zip(errs, errs[1:]))
    ok = record(6, f"paraboloid max error finest (levels {', '.join(f'{e:.1e}' for e in errs)})", errs[-1], 1e-2)
    assert monotone and ok


@pytest.mark.parametrize("R", [8.0, 16.0])
def test_c07_sandwich(R, big_ball_16):
    sol = big_ball_16 if R == 16.0 else solve_big_ball(BUMP, 2, R, 1 / 16, W=5)
    cert = sol.certificate
    worst = max(cert["max_lower_violation"], cert["max_upper_violation"])
    assert record(7, f"sandwich violation R={R:g} (slack {cert['slack']:.3g})", worst, cert["slack"])


def test_c08_uniqueness_on_t5_config():
    cfg = {"id": "E-UNIQ",
           "problem": {"n": 3, "rhs": {"kind": "constant"}, "domain": {"kind": "ball", "radius": 1.0},
                       "phi": {"expr": "0"}, "far_field": {"c": 15.0}, "R_out": 8.0},
           "solver": {"h": 0.5, "W": 5}}
    spec = ExperimentSpec.from_dict(cfg)
    rep = run_experiment(spec)
    gap = rep.payload.get("max_nodal_gap", math.inf)
    tol = 10 * spec.solver.get("tol", 1e-9)
    assert record(8, "sub/super max nodal gap, E-T5 config", gap, tol) and rep.passed


def _random_pair(rng):
    center = rng.uniform(-2.5, 2.5, size=2)
    bump = RightHandSide.compact_bump(float(rng.uniform(0.1, 1.5)), float(rng.uniform(0.5, 1.5)), center=center)
    if rng.random() < 0.5:
        return bump, RightHandSide.constant(1.0)
    return RightHandSide.constant(float(bump.bounds[1]) + float(rng.uniform(0.0, 0.3))), bump


def test_c09_comparison_principle():
    rng = np.random.default_rng(42)
    phi = BoundaryExpression("(x**2+y**2)/2", 2)
    worst, ordered, tol = -math.inf, True, 0.0
    for _ in range(20):
        f1, f2 = _random_pair(rng)
        c = float(rng.uniform(-0.5, 0.5))
        sols = [solve_dirichlet(ProblemSpec(2, f, InnerDomain.ball(1.0), phi, QuadraticFarField.identity(2, c=c), 4.0),
                                h=0.25, W=2) for f in (f1, f2)]
        rep = comparison_check(sols[0], sols[1], f1, f2)
        ordered &= rep.ordered
        worst, tol = max(worst, rep.worst_violation), max(tol, rep.tolerance)
    assert record(9, "max(sol1 - sol2) over 20 pairs", worst, tol, ok=ordered)


def test_c10_affine_equivariance():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        M = rng.normal(size=(2, 2))
        T = M / math.sqrt(abs(np.linalg.det(M)))
        if np.linalg.det(T) < 0:
            T[:, 0] *= -1
        dirs = rng.normal(size=(4000, 2))
        x = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * np.exp(rng.uniform(math.log(4), math.log(64), 4000))[:, None]
        fit = fit_far_field(x, 0.5 * np.sum((x @ T.T) ** 2, axis=1), include_log=False)
        worst = max(worst, abs(fit.det_A - 1.0), float(np.max(np.abs(fit.A - T.T @ T))))
    assert record(10, "affine equivariance |det A' - 1|, |A' - T'T|", worst, 1e-8)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
