"""Boundary barriers and the matched sub/supersolution pair.

A lemma barrier at a boundary point xi is a global radial solution z of
det D^2 z = f1 centred at xi, corrected by the tangent plane of phi and
tilted along the inward normal so that it touches phi from below at xi
only. The pointwise max over many xi is a subsolution attaining phi on the
boundary; glued to a radial exterior solution it produces the subsolution
of the matched pair, whose far-field constant agrees with that of a radial
supersolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .core import (BoundaryExpression, InnerDomain, ProblemSpec, RightHandSide,
                   ValidationError, sphere_directions)
from .radial import (RadialProfile, ThresholdError, exact_radial_solution, min_shooting_parameter,
                     mu1, mu2, solve_d_for_c)

A_CAP = 2.0**40


class BarrierError(ValueError):
    """A barrier certificate failed at a sample point."""


def _boundary_count(n: int, m: Optional[int]) -> int:
    return m if m is not None else (64 if n == 2 else 256)


def _exterior_samples(domain: InnerDomain, radius: float, count: int, rng) -> np.ndarray:
    """Uniform samples of B(0, radius) minus D."""
    n = domain.n
    out = []
    for _ in range(50):
        x = rng.uniform(-radius, radius, size=(2 * count, n))
        out.append(x[(np.linalg.norm(x, axis=1) <= radius) & ~domain.contains(x)])
        if sum(len(o) for o in out) >= count:
            break
    return np.concatenate(out)[:count]


# ---------------------------------------------------------------------------
# lemma barriers


@dataclass
class LemmaBarrier:
    """w(x) = z(|x - xi|) + phi(xi) + grad phi(xi).(x - xi) - A (x - xi).nu_in."""

    xi: np.ndarray
    inward: np.ndarray
    A: float
    phi_xi: float
    grad_phi_xi: np.ndarray
    z: Callable
    f1: RightHandSide
    certificate: dict = field(default_factory=dict)

    @property
    def slope(self) -> np.ndarray:
        return self.grad_phi_xi - self.A * self.inward

    def __call__(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=float) - self.xi
        r = np.linalg.norm(y, axis=-1)
        return self.z(r.ravel()).reshape(r.shape) + self.phi_xi + y @ self.slope


def _global_profile(f1: RightHandSide, n: int, reach: float):
    prof = exact_radial_solution(f1, n, d=0.0, r0=0.0, r_max=max(1e3, 10 * reach))
    return prof, prof.tabulate(reach)


def lemma_barrier(xi, f1: RightHandSide, phi: BoundaryExpression, domain: InnerDomain,
                  normal=None, f: Optional[RightHandSide] = None, n_boundary: Optional[int] = None,
                  n_det_samples: int = 2000, seed: int = 0, z=None) -> LemmaBarrier:
    """Tilted radial barrier touching phi from below at the boundary point xi.

    The tilt A is doubled from 1 until w - phi < 0 at every boundary sample
    other than xi; failure beyond the cap 2^40 raises BarrierError.
    """
    n = domain.n
    xi = np.asarray(xi, dtype=float)
    if abs(float(domain.level(xi))) > 1e-8:
        raise ValidationError("xi must lie on the boundary of D")
    if normal is None:
        normal = (xi - domain.center) @ domain.Q
    outward = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    reach = 2.0 * (10.0 * domain.diam + domain.r_bar)
    if z is None:
        z = _global_profile(f1, n, reach)[1]
    phi_xi = float(phi(xi[None])[0])
    grad = phi.gradient(xi[None])[0]

    pts, _, _ = domain.boundary_samples(n_boundary or (720 if n == 2 else 4000))
    y = pts - xi
    dist = np.linalg.norm(y, axis=1)
    pts, y, dist = pts[dist > 1e-9], y[dist > 1e-9], dist[dist > 1e-9]
    depth = -y @ outward                      # normal coordinate in the barrier's frame, >= 0 on the boundary
    tangential = np.linalg.norm(y + np.outer(depth, outward), axis=1)
    base = z(dist) + phi_xi + y @ grad - phi(pts)
    delta1 = 0.1 * domain.curvature_lower_bound

    A = 1.0
    while True:
        gap = base - A * depth
        if np.max(gap) < 0:
            break
        if A >= A_CAP:
            k = int(np.argmax(gap))
            raise BarrierError(f"tilt search exceeded cap {A_CAP:g}: w - phi = {gap[k]:.3g} "
                               f"at boundary sample {pts[k].tolist()}")
        A *= 2.0

    near = tangential <= delta1
    cert = {
        "A": A,
        "delta1": delta1,
        "touch_error": 0.0,
        "max_gap_near": float(np.max(gap[near])) if np.any(near) else None,
        "max_gap_far": float(np.max(gap[~near])) if np.any(~near) else None,
        "min_depth_far": float(np.min(depth[~near])) if np.any(~near) else None,
        "boundary_samples": int(len(pts)),
    }
    w = LemmaBarrier(xi, -outward, A, phi_xi, grad, z, f1, cert)
    cert["touch_error"] = abs(float(w(xi[None])[0]) - phi_xi)
    if f is not None:
        rng = np.random.default_rng(seed)
        x = _exterior_samples(domain, 10.0 * domain.diam + domain.r_bar, n_det_samples, rng)
        det_w = f1.f_r(np.linalg.norm(x - xi, axis=1))
        margin = det_w - f(x)
        cert["min_det_margin"] = float(np.min(margin))
        if cert["min_det_margin"] < -1e-12:
            k = int(np.argmin(margin))
            raise BarrierError(f"det D^2 w = {det_w[k]:.6g} < f = {f(x[k:k+1])[0]:.6g} at {x[k].tolist()}")
    return w


@dataclass
class LemmaEnvelope:
    """Pointwise max of lemma barriers over sampled boundary points."""

    barriers: list
    domain: InnerDomain
    c1: float = math.nan

    def __post_init__(self):
        self._xi = np.array([b.xi for b in self.barriers])
        self._slope = np.array([b.slope for b in self.barriers])
        self._phi = np.array([b.phi_xi for b in self.barriers])
        self._z = self.barriers[0].z

    def __call__(self, x, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        out = np.empty(len(flat))
        for s in range(0, len(flat), chunk):
            y = flat[s:s + chunk, None, :] - self._xi[None]
            r = np.linalg.norm(y, axis=-1)
            vals = self._z(r.ravel()).reshape(r.shape) + self._phi + np.einsum("ijk,jk->ij", y, self._slope)
            out[s:s + chunk] = vals.max(axis=1)
        return out.reshape(x.shape[:-1])


def lemma_envelope(problem_or_domain, phi: BoundaryExpression, f1: RightHandSide,
                   f: Optional[RightHandSide] = None, m: Optional[int] = None,
                   n_c1_samples: int = 20000, seed: int = 0) -> LemmaEnvelope:
    """Envelope max_xi w_xi over m boundary points (64 in 2-D, 256 in 3-D).

    The discrete max under-approximates the sup over all of the boundary.
    c1 is estimated by dense sampling of w - |x|^2/2 on B(0, 10 diam D) minus D.
    """
    domain = problem_or_domain
    n = domain.n
    m = _boundary_count(n, m)
    reach = 2.0 * (10.0 * domain.diam + domain.r_bar)
    z = _global_profile(f1, n, reach)[1]
    pts, nrm, _ = domain.boundary_samples(m)
    barriers = [lemma_barrier(p, f1, phi, domain, normal=q, f=f if i == 0 else None, z=z, seed=seed)
                for i, (p, q) in enumerate(zip(pts, nrm))]
    env = LemmaEnvelope(barriers, domain)
    rng = np.random.default_rng(seed)
    radius = 10.0 * domain.diam
    if radius > np.linalg.norm(domain.center) + domain.rho:
        x = _exterior_samples(domain, radius, n_c1_samples, rng)
        env.c1 = float(np.max(env(x) - 0.5 * np.sum(x * x, axis=1)))
    return env


# ---------------------------------------------------------------------------
# radial bounds for non-radial sources


def radial_bounds(rhs: RightHandSide, n: int, r_max: float = 64.0, rungs: int = 240,
                  directions: Optional[int] = None, margin: float = 1e-3):
    """Radial (majorant, minorant) of f.

    Radial sources are their own bounds. Otherwise f is maximised/minimised
    over spheres on a radius ladder, the extremes are widened over adjacent
    rungs, and the last rung is extended by a power tail r^-beta whose
    constant is sampled out to 10^3 r_max.
    """
    if rhs.is_radial:
        return rhs, rhs
    beta = rhs.beta if math.isfinite(rhs.beta) else math.inf
    dirs = sphere_directions(n, directions or (64 if n == 2 else 256))
    radii = np.unique(np.concatenate([np.linspace(0.0, 4.0, rungs // 3), np.geomspace(4.0, r_max, rungs)]))

    def sphere_ext(rs):
        g = rhs.g(rs[:, None, None] * dirs[None])
        return g.max(axis=1), g.min(axis=1)

    hi, lo = sphere_ext(radii)
    hi = np.maximum.reduce([hi, np.roll(hi, 1), np.roll(hi, -1)])
    lo = np.minimum.reduce([lo, np.roll(lo, 1), np.roll(lo, -1)])
    scale = margin * max(1e-12, float(np.max(np.abs(np.concatenate([hi, lo])))))
    hi, lo = hi + scale, lo - scale
    f_lo, _ = rhs.bounds
    lo = np.maximum(lo, -1.0 + 0.5 * f_lo)
    if math.isfinite(beta):
        far = np.geomspace(r_max, 1e3 * r_max, 64)
        fh, fl = sphere_ext(far)
        c_hi = max(float(np.max(fh * far**beta)), 0.0) * (1 + margin)
        c_lo = min(float(np.min(fl * far**beta)), 0.0) * (1 + margin)
        hi[-1] = max(hi[-1], c_hi * r_max**-beta)
        lo[-1] = min(lo[-1], c_lo * r_max**-beta)
    else:
        hi[-1], lo[-1] = max(hi[-1], 0.0), min(lo[-1], 0.0)
    return (RightHandSide.radial_envelope(radii, hi, beta),
            RightHandSide.radial_envelope(radii, lo, beta))


# ---------------------------------------------------------------------------
# matched pair


@dataclass
class BarrierPair:
    """Glued subsolution and radial supersolution sharing the far-field constant c."""

    sub: Callable
    super: Callable
    d: float
    d2: float
    c: float
    beta1: float
    beta2: float
    c_star: float
    d0: float
    sub_profile: RadialProfile
    super_profile: RadialProfile
    envelope: LemmaEnvelope
    certificate: dict = field(default_factory=dict)

    def far_gap(self, radii) -> np.ndarray:
        """sub - super along the first coordinate axis."""
        radii = np.asarray(radii, dtype=float)
        return self.sub_profile.u(radii) - self.super_profile.u(radii)


def _inner_radius(domain: InnerDomain) -> float:
    """Radius of the largest origin-centred ball inside D."""
    if not domain.contains(np.zeros((1, domain.n)))[0]:
        raise ValidationError("radial barriers need the origin inside D")
    dirs = sphere_directions(domain.n, 720 if domain.n == 2 else 2000)
    y = -domain.center
    Qe = dirs @ domain.Q
    alpha = np.einsum("ij,ij->i", Qe, dirs)
    beta = Qe @ y
    gamma = y @ domain.Q @ y - 1.0
    exits = (-beta + np.sqrt(beta**2 - alpha * gamma)) / alpha
    return float(np.min(exits))


@dataclass
class _Glued:
    envelope: LemmaEnvelope
    lower: Callable
    r_bar: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        out = self.lower(r.ravel()).reshape(r.shape)
        inner = r < self.r_bar + 1.0
        if np.any(inner):
            w = self.envelope(x[inner])
            out[inner] = np.where(r[inner] < self.r_bar, w, np.maximum(w, out[inner]))
        return out


@dataclass
class _Radial:
    profile: Callable

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        return self.profile(r.ravel()).reshape(r.shape)


def build_barrier_pair(problem: ProblemSpec, c: float, n_samples: int = 10_000, seed: int = 42,
                       m: Optional[int] = None) -> BarrierPair:
    """Construct the subsolution u_{1,d(c)} and supersolution u-bar_{d2(c)} (n >= 3)."""
    n, D, phi, f = problem.n, problem.domain, problem.phi, problem.rhs
    if n < 3:
        raise ValidationError("build_barrier_pair needs n >= 3; 2-D uses the log coefficient")
    ff = problem.far_field
    if np.max(np.abs(ff.A - np.eye(n))) > 1e-12 or np.any(ff.b != 0):
        raise ValidationError("barrier pair expects far field A = I, b = 0 (apply the affine normalisation)")
    if D is None:
        raise ValidationError("barrier pair needs an inner domain")
    f_bar, f_low = radial_bounds(f, n)
    _, f_sup = f.bounds
    f1 = RightHandSide.constant(1.1 * max(f_sup, 1.0))
    env = lemma_envelope(D, phi, f1, f=f, m=m, seed=seed)

    r_bar = D.r_bar
    r_lo = min(2.0, _inner_radius(D))
    rng = np.random.default_rng(seed)
    ball = _exterior_samples(D, r_bar, 20_000, rng)
    bpts, _, _ = D.boundary_samples(2048)
    beta1 = float(np.min(env(np.concatenate([ball, bpts])))) - 1.0
    beta2 = float(np.max(phi(bpts))) + 1.0

    split = 1e3 * r_bar
    sph = (r_bar + 1.0) * sphere_directions(n, 2048)
    glue_target = float(np.max(env(sph))) + 1.0
    d_min1 = max(min_shooting_parameter(f_bar, n, r_lo), 0.0)
    d_min2 = max(min_shooting_parameter(f_low, n, r_lo), 0.0)

    def lower_profile(d):
        raw = exact_radial_solution(f_bar, n, d=d, r0=r_lo, lower=1.0, r_max=split)
        shift = beta1 - float(raw.u(np.array([r_bar]))[0])
        return exact_radial_solution(f_bar, n, d=d, r0=r_lo, base=shift, lower=1.0, r_max=split)

    def glue(d):
        return float(lower_profile(d).u(np.array([r_bar + 1.0]))[0]) - glue_target

    if glue(d_min1) > 0:
        d0 = d_min1
    else:
        hi = max(1.0, 2 * d_min1)
        while glue(hi) <= 0:
            hi *= 2.0
            if hi > 2.0**60:
                raise BarrierError("glue condition cannot be met")
        d0 = brentq(glue, d_min1, hi, xtol=1e-12)
        d0 = d0 * (1 + 1e-9) + 1e-12

    m1 = lambda d: mu1(f_bar, n, d, r_bar, beta1, split=split)
    m2 = lambda d: mu2(f_low, n, d, beta2, r_start=r_lo, split=1e3 * r_lo)
    c_star = max(m1(d0), m2(d_min2))
    if c <= c_star:
        raise ThresholdError(f"c = {c:g} <= c_* = {c_star:g}")
    d = solve_d_for_c(m1, c, d0)
    d2 = solve_d_for_c(m2, c, d_min2)

    low = lower_profile(d)
    up = exact_radial_solution(f_low, n, d=d2, r0=r_lo, base=beta2, lower=1.0, r_max=1e3 * r_lo)
    reach = 1e3 * r_bar
    sub = _Glued(env, low.tabulate(reach), r_bar)
    sup = _Radial(up.tabulate(reach))
    pair = BarrierPair(sub, sup, d, d2, c, beta1, beta2, c_star, d0, low, up, env)
    pair.certificate = certify_pair(pair, problem, n_samples, seed)
    return pair


def certify_pair(pair: BarrierPair, problem: ProblemSpec, n_samples: int = 10_000, seed: int = 42) -> dict:
    """Check sub <= super on random samples, sub <= phi on the boundary, and the far gap."""
    D, phi, n = problem.domain, problem.phi, problem.n
    rng = np.random.default_rng(seed)
    r_bar = D.r_bar
    near = _exterior_samples(D, 4.0 * r_bar, n_samples // 2, rng)
    dirs = sphere_directions(n, 4096)[rng.integers(0, 4096, n_samples - len(near))]
    radii = np.exp(rng.uniform(np.log(r_bar), np.log(1e3 * r_bar), len(dirs)))
    far = dirs * radii[:, None]
    far = far[~D.contains(far)]
    x = np.concatenate([near, far])
    s, u = pair.sub(x), pair.super(x)
    slack = 1e-9 * (1.0 + np.abs(u))
    viol = s - u
    k = int(np.argmax(viol))
    bpts, _, _ = D.boundary_samples(4096)
    bgap = pair.sub(bpts) - phi(bpts)
    xis = pair.envelope._xi
    touch = np.abs(pair.sub(xis) - phi(xis))
    ladder = r_bar * np.array([10.0, 100.0, 1000.0])
    cert = {
        "n_samples": int(len(x)),
        "min_super_minus_sub": float(-viol[k]),
        "ordering_ok": bool(np.all(viol <= slack)),
        "max_sub_minus_phi_boundary": float(np.max(bgap)),
        "max_touch_error": float(np.max(touch)),
        "far_gap": dict(zip(ladder.tolist(), pair.far_gap(ladder).tolist())),
        "c1": pair.envelope.c1,
    }
    if not cert["ordering_ok"]:
        raise BarrierError(f"barrier ordering violated: sub - super = {viol[k]:.3g} at {x[k].tolist()}")
    return cert
