"""Radial Monge-Ampere: exact solutions, matching constants, log coefficients.

A radial solution is written as

    u(r) = base + (r^2 - r0^2) / 2 + W(r),    W(r) = int_{r0}^r (u'(s) - s) ds,
    u'(s) = (s^n + kappa(s))^(1/n),           kappa(s) = d - L^n + G(s),
    G(s) = int_L^s n t^(n-1) (f(t) - 1) dt,

with L = 1 (exterior families) or L = 0 (global solutions). Working with
u' - s and f - 1 keeps w = u - r^2/2 accurate to near machine precision at
large r. G and W are computed with Gauss-Legendre panels on a graded grid;
beyond the radius where f - 1 becomes a pure power a r^-p, G is closed
form and the tail of W is integrated analytically from the expansion of
(s^n + kappa)^(1/n) - s in powers of kappa / s^n.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .core import RightHandSide, ValidationError

_GL_X, _GL_W = leggauss(20)


class DegenerateShootingError(ValueError):
    """s^n + kappa(s) became negative: the shooting parameter d is too small."""


class DivergentIntegralError(ValueError):
    """An improper integral of the radial calculus does not converge."""


class ThresholdError(ValueError):
    """Requested far-field constant lies below the admissible range (c <= c_*)."""


def radial_det(u_prime, u_second, r, n: int):
    """det D^2 h for radial h: h''(r) (h'(r)/r)^(n-1)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radial_det needs r > 0")
    return u_second * (np.asarray(u_prime) / r) ** (n - 1)


# ---------------------------------------------------------------------------
# quadrature backbone (independent of d and base)


def _panel_nodes(r_start: float, r_max: float, extra, ratio: float = 1.1, h_small: float = 0.05):
    pts = []
    if r_start < 1.0:
        pts.append(np.arange(r_start, 1.0, h_small))
        geo_start = 1.0
    else:
        geo_start = r_start
    k = int(math.ceil(math.log(r_max / geo_start) / math.log(ratio))) if r_max > geo_start else 0
    pts.append(geo_start * ratio ** np.arange(k + 1))
    pts.append([r_start, r_max])
    extra = np.asarray(extra, dtype=float)
    pts.append(extra[(extra > r_start) & (extra < r_max)])
    nodes = np.unique(np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in pts]))
    nodes = nodes[(nodes >= r_start) & (nodes <= r_max)]
    if r_start > 0:
        # dyadic grading toward the start absorbs a degenerate u'(r0) = 0
        delta = nodes[1] - nodes[0]
        nodes = np.unique(np.concatenate([nodes, r_start + delta * 2.0 ** -np.arange(1, 41)]))
    # drop near-duplicates produced by the union
    keep = np.concatenate([[True], np.diff(nodes) > 1e-14 * np.maximum(1.0, nodes[1:])])
    return nodes[keep]


class _Quadrature:
    """Tabulates G on a panel grid for one (f, n, L, r_start, r_max)."""

    def __init__(self, f: RightHandSide, n: int, lower: float, r_start: float, r_max: float):
        if not f.is_radial:
            raise ValidationError("radial engine needs a radial right-hand side")
        self.f, self.n, self.L = f, n, float(lower)
        self.r_start, self.r_max = float(r_start), float(r_max)
        a, p, r_t = f.tail
        self.tail_a, self.tail_p = float(a), float(p)
        lo = min(self.r_start, self.L)
        self.nodes = _panel_nodes(lo, self.r_max, np.concatenate([f.breakpoints, [self.L, self.r_start]]))
        self.r_t = max(float(r_t), self.nodes[0])
        # cumulative H(s) = int_{nodes[0]}^s n t^(n-1) g over panels below r_t
        a_, b_ = self.nodes[:-1], self.nodes[1:]
        below = b_ <= self.r_t * (1 + 1e-15)
        inc = np.zeros_like(a_)
        inc[below] = self._panel_integral(a_[below], b_[below])
        self.H_nodes = np.concatenate([[0.0], np.cumsum(inc)])
        idx = np.searchsorted(self.nodes, self.r_t)
        self.H_rt = float(self.H_nodes[min(idx, len(self.nodes) - 1)]) if self.r_t > self.nodes[0] else 0.0
        self.H_L = float(self.H(np.array([self.L]))[0])
        self._wcache = {}

    def _integrand(self, t):
        return self.n * t ** (self.n - 1) * self.f.g_r(t)

    def _panel_integral(self, a, b):
        t = 0.5 * (b - a)[:, None] * (_GL_X + 1.0) + a[:, None]
        return 0.5 * (b - a) * (self._integrand(t) @ _GL_W)

    def _closed(self, a, s):
        n, A, p = self.n, self.tail_a, self.tail_p
        if A == 0.0:
            return np.zeros_like(s)
        if p == n:
            return n * A * np.log(s / a)
        return n * A * (s ** (n - p) - a ** (n - p)) / (n - p)

    def H(self, s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        lo = s <= self.r_t
        if np.any(lo):
            sl = s[lo]
            k = np.clip(np.searchsorted(self.nodes, sl, side="right") - 1, 0, len(self.nodes) - 2)
            out[lo] = self.H_nodes[k] + self._panel_integral(self.nodes[k], sl)
        if np.any(~lo):
            out[~lo] = self.H_rt + self._closed(self.r_t, s[~lo])
        return out

    def G(self, s):
        return self.H(s) - self.H_L

    def kappa(self, s, d: float):
        return d - self.L**self.n + self.G(s)

    def v(self, s, d: float):
        """u'(s) - s, evaluated stably."""
        s = np.asarray(s, dtype=float)
        kap = self.kappa(s, d)
        out = np.zeros_like(s)
        pos = s > 0
        sp = s[pos]
        z = kap[pos] / sp**self.n
        bad = z < -1.0 - 1e-12
        if np.any(bad):
            first = float(np.min(sp[bad]))
            raise DegenerateShootingError(
                f"degenerate shooting parameter d={d:g}: int_L^s n t^(n-1) f dt + d < 0 at s={first:.6g}")
        z = np.maximum(z, -1.0)
        with np.errstate(divide="ignore"):
            out[pos] = sp * np.expm1(np.log1p(z) / self.n)
        if np.any(~pos):
            # s = 0 only happens for the global family, where kappa(0) = d
            out[~pos] = d ** (1.0 / self.n) if d > 0 else 0.0
        return out

    def W_nodes(self, d: float):
        key = float(d)
        if key not in self._wcache:
            a, b = self.nodes[:-1], self.nodes[1:]
            start = np.searchsorted(self.nodes, self.r_start)
            a, b = a[start:], b[start:]
            t = 0.5 * (b - a)[:, None] * (_GL_X + 1.0) + a[:, None]
            vals = self.v(t.ravel(), d).reshape(t.shape)
            inc = 0.5 * (b - a) * (vals @ _GL_W)
            self._wcache[key] = (self.nodes[start:], np.concatenate([[0.0], np.cumsum(inc)]))
            if len(self._wcache) > 256:
                self._wcache.pop(next(iter(self._wcache)))
        return self._wcache[key]

    def W(self, r, d: float):
        """int_{r_start}^r (u' - s) ds for r_start <= r <= r_max."""
        nodes, Wn = self.W_nodes(d)
        r = np.asarray(r, dtype=float)
        k = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, len(nodes) - 2)
        a = nodes[k]
        t = 0.5 * (r - a)[:, None] * (_GL_X + 1.0) + a[:, None]
        vals = self.v(t.ravel(), d).reshape(t.shape)
        return Wn[k] + 0.5 * (r - a) * (vals @ _GL_W)

    # -- asymptotic tail -----------------------------------------------------

    def tail_coefficients(self, d: float):
        """kappa(s) = K0 + K1 s^(n-p) (or K0 + K1 log s when p = n) for s >= r_t."""
        n, A, p = self.n, self.tail_a, self.tail_p
        G_rt = self.H_rt - self.H_L
        base = d - self.L**n + G_rt
        if A == 0.0:
            return base, 0.0
        if p == n:
            K1 = n * A
            return base - K1 * math.log(self.r_t), K1
        K1 = n * A / (n - p)
        return base - K1 * self.r_t ** (n - p), K1

    def tail_terms(self, d: float):
        """Power terms [(coef, q)] of v(s) ~ sum coef s^-q (p != n)."""
        n, p = self.n, self.tail_p
        K0, K1 = self.tail_coefficients(d)
        c1 = 1.0 / n
        c2 = c1 * (c1 - 1.0) / 2.0
        c3 = c2 * (c1 - 2.0) / 3.0
        # kappa^j / s^(j n - 1), expanded in K0, K1 s^(n-p)
        terms = []
        for cj, j in ((c1, 1), (c2, 2), (c3, 3)):
            for i in range(j + 1):
                coef = cj * math.comb(j, i) * K0 ** (j - i) * K1**i
                if coef != 0.0:
                    terms.append((coef, j * n - 1 - i * (n - p)))
        return terms

    def tail_integral(self, a: float, b: float, d: float, drop_log: bool = False) -> float:
        """int_a^b of the asymptotic expansion of v; b may be inf."""
        if self.tail_p == self.n and self.tail_a != 0.0:
            return self._tail_integral_log(a, b, d, drop_log)
        total = 0.0
        for coef, q in self.tail_terms(d):
            if abs(q - 1.0) < 1e-12:
                if drop_log:
                    continue
                if math.isinf(b):
                    raise DivergentIntegralError("logarithmically divergent tail")
                total += coef * math.log(b / a)
            elif q < 1.0:
                if math.isinf(b):
                    raise DivergentIntegralError(f"tail decays like s^-{q:g}: not integrable")
                total += coef * (b ** (1 - q) - a ** (1 - q)) / (1 - q)
            else:
                bt = 0.0 if math.isinf(b) else b ** (1 - q)
                total += coef * (a ** (1 - q) - bt) / (q - 1)
        return total

    def _tail_integral_log(self, a, b, d, drop_log):
        # p == n: kappa = K0 + K1 log s; first order only plus the K0^2 term
        n = self.n
        K0, K1 = self.tail_coefficients(d)
        if n == 2:
            raise DivergentIntegralError("p = n = 2: (log s)^2 growth")

        def F1(s):  # antiderivative of (K0 + K1 log s) s^(1-n) / n
            m = n - 2
            return -(K0 / (n * m)) * s ** (-m) - (K1 / n) * s ** (-m) * (math.log(s) / m + 1.0 / m**2)

        c2 = (1.0 / n) * (1.0 / n - 1.0) / 2.0
        q = 2 * n - 1
        upper = 0.0 if math.isinf(b) else F1(b) + c2 * K0**2 * b ** (1 - q) / (1 - q)
        lower = F1(a) + c2 * K0**2 * a ** (1 - q) / (1 - q)
        return upper - lower

    def tail_relative_size(self, s: float, d: float) -> float:
        return abs(float(self.kappa(np.array([s]), d)[0])) / s**self.n


@lru_cache(maxsize=64)
def _quadrature(f: RightHandSide, n: int, lower: float, r_start: float, r_max: float) -> _Quadrature:
    return _Quadrature(f, n, lower, r_start, r_max)


# ---------------------------------------------------------------------------
# radial profile


@dataclass
class RadialProfile:
    """Radial solution u(r) of det D^2 u = f with closed-form u', u''."""

    n: int
    r0: float
    d: float
    base: float
    f_ref: RightHandSide
    lower: float
    r_max: float
    tail: dict = field(default_factory=dict)
    _q: _Quadrature = field(default=None, repr=False)

    @property
    def grid(self) -> np.ndarray:
        return self._q.W_nodes(self.d)[0]

    def _check(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r < self.r0 * (1 - 1e-14)):
            raise ValueError(f"profile is defined for r >= {self.r0}")
        return r

    def u_prime(self, r):
        r = self._check(r)
        return r + self._q.v(r, self.d)

    def u_second(self, r):
        r = self._check(r)
        up = self.u_prime(r)
        with np.errstate(divide="ignore"):
            return r ** (self.n - 1) * self.f_ref.f_r(r) / up ** (self.n - 1)

    def w(self, r):
        """u(r) - r^2 / 2."""
        r = self._check(r)
        out = np.empty_like(r)
        inside = r <= self.r_max
        const = self.base - 0.5 * self.r0**2
        if np.any(inside):
            out[inside] = const + self._q.W(r[inside], self.d)
        if np.any(~inside):
            if not self.tail.get("valid", False):
                raise ValueError(f"r > r_max = {self.r_max:g} and no valid tail model")
            W_end = float(self._q.W(np.array([self.r_max]), self.d)[0])
            out[~inside] = [const + W_end + self._q.tail_integral(self.r_max, ri, self.d)
                            for ri in r[~inside]]
        return out

    def u(self, r):
        r = self._check(r)
        return 0.5 * r**2 + self.w(r)

    __call__ = u

    def f(self, r):
        return self.f_ref.f_r(np.asarray(r, dtype=float))

    def evaluate(self, x, center=None):
        """u(|x - center|) for Cartesian points."""
        x = np.asarray(x, dtype=float)
        c = np.zeros(x.shape[-1]) if center is None else np.asarray(center)
        r = np.linalg.norm(x - c, axis=-1)
        return self.u(r.ravel()).reshape(r.shape)

    @property
    def nodes_u(self) -> np.ndarray:
        return self.u(self.grid)

    @property
    def nodes_u_prime(self) -> np.ndarray:
        return self.u_prime(self.grid)

    def det_residual(self) -> float:
        """max |u''(u'/r)^(n-1) - f| / (1 + |f|) over interior nodes.

        u'' comes from a fourth-order central difference of the closed-form u',
        with the step shrunk near a degenerate start where u'' is singular.
        """
        g = self.grid
        gap = g - self.r0
        sel = (gap > 1e-4 * max(self.r0, 1.0)) & (g > 0)
        r = g[sel]
        h = np.minimum(1e-3 * np.maximum(r, 1.0), 0.005 * gap[sel])
        sel2 = r + 2 * h <= self.r_max
        r, h = r[sel2], h[sel2]
        up = self.u_prime
        upp = (8 * (up(r + h) - up(r - h)) - (up(r + 2 * h) - up(r - 2 * h))) / (12 * h)
        fr = self.f(r)
        res = np.abs(radial_det(up(r), upp, r, self.n) - fr) / (1.0 + np.abs(fr))
        return float(np.max(res))

    def is_convex(self, tol: float = 1e-10) -> bool:
        """u' strictly increasing and scaled second differences of u >= -tol on the grid."""
        g = self.grid
        up = self.nodes_u_prime
        u = self.nodes_u
        h = np.diff(g)
        slopes = np.diff(u) / h
        second = np.diff(slopes) * 0.5 * (h[1:] + h[:-1])
        return bool(np.all(np.diff(up) > 0) and np.all(second >= -tol * (1 + np.abs(u[1:-1]))))

    def tabulate(self, r_hi: float, num: int = 4000) -> "TabulatedProfile":
        """Cubic Hermite interpolant of u on [r0, r_hi] built from exact u and u'."""
        lo = self.r0
        pts = [np.linspace(lo, min(r_hi, lo + 1.0), 400)]
        if r_hi > lo + 1.0:
            pts.append(np.geomspace(lo + 1.0, r_hi, num))
        r = np.unique(np.concatenate(pts))
        return TabulatedProfile(self, CubicHermiteSpline(r, self.u(r), self.u_prime(r)), float(r[-1]))

    # -- export ---------------------------------------------------------------

    def to_csv(self, path, sidecar: bool = True) -> None:
        path = Path(path)
        g = self.grid
        data = np.column_stack([g, self.u(g), self.u_prime(g), self.f(g)])
        np.savetxt(path, data, delimiter=",", header="r,u,u_prime,f", comments="", fmt="%.17g")
        if sidecar:
            meta = {"n": self.n, "r0": self.r0, "d": self.d, "base": self.base, "lower": self.lower,
                    "r_max": self.r_max, "tail": self.tail, "rhs": self.f_ref.to_dict()}
            path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


@dataclass(frozen=True)
class TabulatedProfile:
    """Fast evaluator of a RadialProfile; falls back to the exact profile beyond r_hi."""

    profile: RadialProfile
    spline: CubicHermiteSpline
    r_hi: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = self.spline(np.minimum(r, self.r_hi))
        far = r > self.r_hi
        if np.any(far):
            out[far] = self.profile.u(r[far])
        return out


def _tail_model(q: _Quadrature, n: int, d: float, base: float, r0: float) -> dict:
    K0, K1 = q.tail_coefficients(d)
    p, a = q.tail_p, q.tail_a
    model = {"quadratic": 0.5, "K0": K0, "K1": K1, "p": p if a else math.inf, "valid": False}
    if a != 0.0 and p <= 2.0:
        model["reason"] = f"f - 1 decays like r^-{p:g} with exponent <= 2: no constant-c expansion"
        return model
    if q.tail_relative_size(q.r_max, d) > 1e-3:
        model["reason"] = "grid too short for the asymptotic tail"
        return model
    W_end = float(q.W(np.array([q.r_max]), d)[0])
    const = base - 0.5 * r0**2 + W_end
    eff_p = p if a else math.inf
    if n >= 3:
        model["log_coefficient"] = 0.0
        model["constant"] = const + q.tail_integral(q.r_max, math.inf, d)
        model["residual_exponent"] = min(eff_p, n) - 2.0
    else:
        model["log_coefficient"] = K0 / 2.0
        model["constant"] = (const - 0.5 * K0 * math.log(q.r_max)
                             + q.tail_integral(q.r_max, math.inf, d, drop_log=True))
        model["residual_exponent"] = min(eff_p - 2.0, 2.0)
    model["valid"] = True
    return model


def exact_radial_solution(f: RightHandSide, n: int, d: float = 0.0, r0: float = 0.0, base: float = 0.0,
                          r_max: Optional[float] = None, lower: Optional[float] = None) -> RadialProfile:
    """Radial solution u(r) = base + int_{r0}^r (int_L^s n t^(n-1) f dt + d)^(1/n) ds.

    ``r0 = 0`` selects the global solution (lower limit 0 in both integrals);
    otherwise the inner integral starts at L = 1, as for the exterior
    barrier families. ``lower`` overrides L.
    """
    if n not in (2, 3):
        raise ValidationError("n must be 2 or 3")
    if r0 < 0:
        raise ValidationError("r0 must be >= 0")
    L = (0.0 if r0 == 0 else 1.0) if lower is None else float(lower)
    if r_max is None:
        r_max = 1e6 * max(r0, 1.0)
    q = _quadrature(f, n, L, float(r0), float(r_max))
    # validates positivity of the inner integral over the whole grid
    q.W_nodes(d)
    kap0 = float(q.kappa(np.array([r0]), d)[0]) + r0**n
    if kap0 < -1e-12 * max(1.0, r0**n):
        raise DegenerateShootingError(f"degenerate shooting parameter d={d:g} at s={r0:g}")
    return RadialProfile(n, float(r0), float(d), float(base), f, L, float(r_max),
                         _tail_model(q, n, d, base, r0), q)


# ---------------------------------------------------------------------------
# matching constants


def _mu(f: RightHandSide, n: int, d: float, r_start: float, beta: float, split: float) -> float:
    if n < 3:
        raise ValidationError("mu is defined for n >= 3; use log_coefficient in 2-D")
    a, p, _ = f.tail
    if a != 0.0 and p <= 2.0:
        raise DivergentIntegralError(f"f - 1 ~ r^-{p:g}: the matching integral diverges")
    q = _quadrature(f, n, 1.0, float(r_start), float(split))
    W_end = float(q.W(np.array([split]), d)[0])
    return beta - 0.5 * r_start**2 + W_end + q.tail_integral(split, math.inf, d)


def mu1(f_bar: RightHandSide, n: int, d: float, r_bar: float, beta1: float,
        split: Optional[float] = None) -> float:
    """Far-field constant of the subsolution family started at r_bar."""
    return _mu(f_bar, n, d, r_bar, beta1, split or 1e3 * r_bar)


def mu2(f_low: RightHandSide, n: int, d: float, beta2: float, r_start: float = 2.0,
        split: Optional[float] = None) -> float:
    """Far-field constant of the supersolution family started at r_start (2 by default)."""
    return _mu(f_low, n, d, r_start, beta2, split or 1e3 * r_start)


def min_shooting_parameter(f: RightHandSide, n: int, r_start: float, lower: float = 1.0) -> float:
    """Smallest d keeping s^n + kappa(s) >= 0 on [r_start, inf)."""
    q = _quadrature(f, n, float(lower), float(r_start), 1e3 * max(r_start, 1.0))
    s = np.concatenate([q.nodes[q.nodes >= r_start], [r_start]])
    F = s**n - lower**n + q.G(s)
    return float(-np.min(F))


def solve_d_for_c(mu: Callable[[float], float], c: float, d0: float = 0.0,
                  rtol: float = 1e-9, max_doublings: int = 60) -> float:
    """Invert a strictly increasing map d -> mu(d) on [d0, inf)."""
    target_tol = rtol * max(1.0, abs(c))
    m0 = mu(d0)
    if c < m0 - target_tol:
        raise ThresholdError(f"c = {c:g} <= c_* = {m0:g}: below the admissible range")
    if abs(m0 - c) <= target_tol:
        return float(d0)
    lo, hi = d0, max(1.0, abs(d0))
    if hi <= lo:
        hi = lo + 1.0
    for _ in range(max_doublings):
        if mu(hi) >= c:
            break
        lo, hi = hi, hi + 2.0 * (hi - d0 if hi > d0 else 1.0)
    else:
        raise ValueError(f"root not bracketed after {max_doublings} doublings (d = {hi:g})")
    d = brentq(lambda t: mu(t) - c, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(mu(d) - c) > target_tol:
        raise ValueError(f"inversion stalled: |mu(d) - c| = {abs(mu(d) - c):.3g}")
    return float(d)


def log_coefficient(f: RightHandSide, d: float) -> float:
    """d - 1 + int_1^inf 2t (f(t) - 1) dt  (2-D).

    This is the limit of kappa for the 2-D exterior family; the coefficient
    of log r in the profile itself is half of it.
    """
    a, p, _ = f.tail
    if a != 0.0 and p <= 2.0:
        raise DivergentIntegralError(f"int 2t (f - 1) dt diverges: f - 1 ~ r^-{p:g}")
    q = _quadrature(f, 2, 1.0, 1.0, 1e3)
    K0, K1 = q.tail_coefficients(d)
    return float(K0)


def mass_integral(f: RightHandSide, n: int = 2) -> float:
    """int_0^inf t (f(t) - 1) dt, i.e. (1/2 pi) int_{R^2} (f - 1) for radial f."""
    a, p, _ = f.tail
    if a != 0.0 and p <= 2.0:
        raise DivergentIntegralError("f - 1 is not integrable")
    q = _quadrature(f, 2, 0.0, 0.0, 1e3)
    K0, _ = q.tail_coefficients(0.0)
    return float(K0) / 2.0
