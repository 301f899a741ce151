"""Problem vocabulary: source terms, inner domains, far-field data, problem specs.

Every object here is immutable after construction and its evaluators are
pure, so instances can be shared freely between workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import sympy

RADIAL_KINDS = ("constant", "radial_perturbation", "sharpness", "compact_bump", "radial_envelope")
KINDS = RADIAL_KINDS + ("affine_pullback",)


class ValidationError(ValueError):
    """Raised when an input violates a structural invariant."""


# ---------------------------------------------------------------------------
# smooth bridge


def smoothstep(t):
    """C^3 step from 0 (t <= 0) to 1 (t >= 1): t^4 (35 - 84 t + 70 t^2 - 20 t^3)."""
    t = np.clip(t, 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def smoothstep_prime(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 140.0 * tc**3 * (1.0 - tc) ** 3, 0.0)


def sphere_directions(n: int, m: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^n (n = 2 or 3)."""
    if n == 2:
        t = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        k = np.arange(m) + 0.5
        z = 1.0 - 2.0 * k / m
        phi = np.pi * (1.0 + math.sqrt(5.0)) * k
        s = np.sqrt(1.0 - z**2)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    raise ValidationError(f"unsupported dimension n={n}")


# ---------------------------------------------------------------------------
# source terms


@dataclass(frozen=True, eq=False)
class RightHandSide:
    """Source term f of det(D^2 u) = f.

    Every radial kind is written as f(r) = 1 + g(r) where g is known in
    closed form and equals ``tail_a * r**(-tail_p)`` exactly for
    ``r >= tail_r``. The quadrature engine relies on that pure-power tail.

    Use the constructors (:meth:`constant`, :meth:`radial_perturbation`,
    :meth:`sharpness`, :meth:`compact_bump`, :meth:`affine_pullback`)
    rather than building instances directly.
    """

    kind: str
    beta: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown rhs kind {self.kind!r}")
        # forces the positivity check at construction
        _ = self.c0

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, value: float = 1.0) -> "RightHandSide":
        value = float(value)
        if value <= 0:
            raise ValidationError("constant rhs must be positive")
        return cls("constant", math.inf if value == 1.0 else 0.0, {"value": value})

    @classmethod
    def radial_perturbation(cls, a: float, p: float, r_lo: float = 1.0, r_hi: float = 2.0,
                            beta: Optional[float] = None) -> "RightHandSide":
        """f = 1 + a S(r) r^-p with S the C^3 bridge from 0 on [0, r_lo] to 1 on [r_hi, inf)."""
        if not 0 <= r_lo < r_hi:
            raise ValidationError("need 0 <= r_lo < r_hi")
        return cls("radial_perturbation", float(p) if beta is None else float(beta),
                   {"a": float(a), "p": float(p), "r_lo": float(r_lo), "r_hi": float(r_hi)})

    @classmethod
    def sharpness(cls) -> "RightHandSide":
        """f = 1 on [0, 1], f = 1 + r^-2 on [2, inf): decay exponent exactly 2."""
        return cls("sharpness", 2.0, {"a": 1.0, "p": 2.0, "r_lo": 1.0, "r_hi": 2.0})

    @classmethod
    def compact_bump(cls, a: float, width: float, center=None) -> "RightHandSide":
        """f = 1 + a (1 - |x - center|^2 / width^2)^4 inside the bump, 1 outside."""
        if width <= 0:
            raise ValidationError("bump width must be positive")
        params = {"a": float(a), "width": float(width)}
        if center is not None:
            params["center"] = [float(c) for c in center]
        return cls("compact_bump", math.inf, params)

    @classmethod
    def affine_pullback(cls, base: "RightHandSide", T) -> "RightHandSide":
        """x -> base(T x); T must have det(T) = 1."""
        T = np.asarray(T, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValidationError("T must be square")
        if abs(np.linalg.det(T) - 1.0) > 1e-10:
            raise ValidationError(f"det(T) = {np.linalg.det(T)!r}, expected 1")
        return cls("affine_pullback", base.beta, {"base": base, "T": T})

    @classmethod
    def radial_envelope(cls, radii, g_values, beta: float) -> "RightHandSide":
        """Piecewise-linear tabulated radial perturbation with a power tail.

        Used for radial majorants/minorants of non-radial sources.
        """
        radii = np.asarray(radii, dtype=float)
        g_values = np.asarray(g_values, dtype=float)
        if radii.ndim != 1 or radii.shape != g_values.shape or np.any(np.diff(radii) <= 0):
            raise ValidationError("radii must be increasing and match g_values")
        return cls("radial_envelope", float(beta), {"radii": radii, "g": g_values})

    # -- structure ----------------------------------------------------------

    @property
    def is_radial(self) -> bool:
        if self.kind == "compact_bump":
            return not any(self.params.get("center", [0.0]))
        return self.kind in RADIAL_KINDS

    @property
    def tail(self) -> tuple[float, float, float]:
        """(a, p, r_t) with g(r) = a r^-p exactly for r >= r_t."""
        k, P = self.kind, self.params
        if k == "constant":
            return P["value"] - 1.0, 0.0, 0.0
        if k in ("radial_perturbation", "sharpness"):
            return P["a"], P["p"], P["r_hi"]
        if k == "compact_bump":
            return 0.0, 0.0, P["width"]
        if k == "radial_envelope":
            r_m, g_m = P["radii"][-1], P["g"][-1]
            if not math.isfinite(self.beta):
                return 0.0, 0.0, r_m
            return g_m * r_m**self.beta, self.beta, r_m
        raise ValidationError("tail is defined for radial kinds only")

    @property
    def breakpoints(self) -> np.ndarray:
        """Radii where the radial profile is not smooth; quadrature panels align to them."""
        k, P = self.kind, self.params
        if k in ("radial_perturbation", "sharpness"):
            return np.array([P["r_lo"], P["r_hi"]])
        if k == "compact_bump":
            return np.array([P["width"]])
        if k == "radial_envelope":
            return np.asarray(P["radii"])
        return np.array([])

    # -- radial evaluators ----------------------------------------------------

    def g_r(self, r):
        """Perturbation f(r) - 1, computed without cancellation."""
        r = np.asarray(r, dtype=float)
        k, P = self.kind, self.params
        if k == "constant":
            return np.full_like(r, P["value"] - 1.0)
        if k in ("radial_perturbation", "sharpness"):
            s = smoothstep((r - P["r_lo"]) / (P["r_hi"] - P["r_lo"]))
            with np.errstate(divide="ignore", invalid="ignore"):
                val = P["a"] * s * np.where(r > 0, r, 1.0) ** (-P["p"])
            return np.where(s > 0, val, 0.0)
        if k == "compact_bump":
            q = 1.0 - (r / P["width"]) ** 2
            return np.where(q > 0, P["a"] * np.clip(q, 0, None) ** 4, 0.0)
        if k == "radial_envelope":
            a, p, r_t = self.tail
            inner = np.interp(r, P["radii"], P["g"])
            with np.errstate(divide="ignore"):
                outer = a * np.maximum(r, r_t) ** (-p) if p else np.full_like(r, a)
            return np.where(r <= r_t, inner, outer)
        raise ValidationError(f"{k} is not radial")

    def g_r_prime(self, r):
        r = np.asarray(r, dtype=float)
        k, P = self.kind, self.params
        if k == "constant":
            return np.zeros_like(r)
        if k in ("radial_perturbation", "sharpness"):
            width = P["r_hi"] - P["r_lo"]
            t = (r - P["r_lo"]) / width
            rs = np.where(r > 0, r, 1.0)
            s, ds = smoothstep(t), smoothstep_prime(t) / width
            val = P["a"] * (ds * rs ** (-P["p"]) - P["p"] * s * rs ** (-P["p"] - 1.0))
            return np.where(s > 0, val, 0.0)
        if k == "compact_bump":
            w = P["width"]
            q = 1.0 - (r / w) ** 2
            return np.where(q > 0, -8.0 * P["a"] * np.clip(q, 0, None) ** 3 * r / w**2, 0.0)
        if k == "radial_envelope":
            radii, g = P["radii"], P["g"]
            slopes = np.diff(g) / np.diff(radii)
            idx = np.clip(np.searchsorted(radii, r, side="right") - 1, 0, len(slopes) - 1)
            a, p, r_t = self.tail
            with np.errstate(divide="ignore"):
                outer = -p * a * np.maximum(r, r_t) ** (-p - 1.0) if p else np.zeros_like(r)
            return np.where(r < r_t, slopes[idx], outer)
        raise ValidationError(f"{k} is not radial")

    def f_r(self, r):
        return 1.0 + self.g_r(r)

    # -- Cartesian evaluators -------------------------------------------------

    def g(self, x) -> np.ndarray:
        """f(x) - 1 at points ``x`` of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "affine_pullback":
            base, T = self.params["base"], self.params["T"]
            return base.g(x @ T.T)
        if self.kind == "compact_bump" and "center" in self.params:
            c = np.asarray(self.params["center"])
            return self.g_r(np.linalg.norm(x - c[: x.shape[-1]], axis=-1))
        return self.g_r(np.linalg.norm(x, axis=-1))

    def __call__(self, x) -> np.ndarray:
        return 1.0 + self.g(x)

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "affine_pullback":
            base, T = self.params["base"], self.params["T"]
            return base.grad(x @ T.T) @ T
        c = np.zeros(x.shape[-1])
        if self.kind == "compact_bump" and "center" in self.params:
            c = np.asarray(self.params["center"])[: x.shape[-1]]
        y = x - c
        r = np.linalg.norm(y, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, y / r[..., None], 0.0)
        return self.g_r_prime(r)[..., None] * unit

    # -- bounds ---------------------------------------------------------------

    @cached_property
    def bounds(self) -> tuple[float, float]:
        """(inf f, sup f), from dense radial sampling plus the limit at infinity."""
        if self.kind == "affine_pullback":
            return self.params["base"].bounds
        P = self.params
        if self.kind == "compact_bump":
            vals = np.array([1.0, 1.0 + P["a"]])
        else:
            _, _, r_t = self.tail
            r = np.concatenate([np.linspace(0.0, max(r_t, 1.0), 4001), [r_t, 10 * r_t + 10]])
            vals = self.f_r(r)
            if self.tail[1] > 0 or self.tail[0] == 0:
                vals = np.append(vals, 1.0)
        lo, hi = float(np.min(vals)), float(np.max(vals))
        if not lo > 0:
            raise ValidationError(f"rhs {self.kind} is not positive (inf f = {lo:g})")
        return lo, hi

    @property
    def c0(self) -> float:
        """Two-sided positivity constant: 1/c0 <= f <= c0."""
        lo, hi = self.bounds
        return max(hi, 1.0 / lo, 1.0)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        params = {}
        for key, val in self.params.items():
            if isinstance(val, RightHandSide):
                params[key] = val.to_dict()
            elif isinstance(val, np.ndarray):
                params[key] = val.tolist()
            else:
                params[key] = val
        return {"kind": self.kind, "beta": _json_float(self.beta), "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "RightHandSide":
        kind = data["kind"]
        P = dict(data.get("params", {}))
        beta = data.get("beta")
        if kind == "constant":
            return cls.constant(P.get("value", 1.0))
        if kind == "sharpness":
            return cls.sharpness()
        if kind == "radial_perturbation":
            return cls.radial_perturbation(P["a"], P["p"], P.get("r_lo", 1.0), P.get("r_hi", 2.0),
                                           beta=None if beta is None else _parse_float(beta))
        if kind == "compact_bump":
            return cls.compact_bump(P["a"], P["width"], P.get("center"))
        if kind == "affine_pullback":
            return cls.affine_pullback(cls.from_dict(P["base"]), P["T"])
        if kind == "radial_envelope":
            return cls.radial_envelope(P["radii"], P["g"], _parse_float(beta))
        raise ValidationError(f"unknown rhs kind {kind!r}")


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _parse_float(v) -> float:
    return float(v)


# ---------------------------------------------------------------------------
# (FA) check


@dataclass
class FAReport:
    beta: float
    radii: np.ndarray
    suprema: dict  # k -> array of sup |x|^(beta+k) |D^k (f-1)| per radius
    growth_exponents: dict  # k -> log-log slope over the top half of the ladder
    passed_k: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "beta": _json_float(self.beta),
            "radii": self.radii.tolist(),
            "suprema": {str(k): v.tolist() for k, v in self.suprema.items()},
            "growth_exponents": {str(k): v for k, v in self.growth_exponents.items()},
            "passed_k": {str(k): v for k, v in self.passed_k.items()},
            "passed": self.passed,
        }


def _directional_derivative(g: Callable, x: np.ndarray, e: np.ndarray, h: np.ndarray, k: int):
    hh = h[..., None]
    if k == 1:
        return (g(x + hh * e) - g(x - hh * e)) / (2 * h)
    if k == 2:
        return (g(x + hh * e) - 2 * g(x) + g(x - hh * e)) / h**2
    if k == 3:
        return (g(x + 2 * hh * e) - 2 * g(x + hh * e) + 2 * g(x - hh * e) - g(x - 2 * hh * e)) / (2 * h**3)
    raise ValueError(k)


def validate_fa(rhs: RightHandSide, beta: float, radii=None, k_max: int = 3, n: int = 2,
                n_samples: Optional[int] = None, step_rel: float = 1e-4,
                last_rungs: int = 5, growth_tol: float = 1e-3) -> FAReport:
    """Decidable surrogate for the (FA) decay condition.

    On each sphere of the ladder, records sup |x|^(beta+k) |D^k (f - 1)|, the
    norm of the k-th derivative tensor being estimated as the largest
    directional k-th derivative over a fixed set of directions (exact for
    symmetric tensors in the limit of dense directions). A clause fails when
    its suprema grow strictly across each of the last ``last_rungs`` rungs.
    """
    radii = np.asarray(2.0 ** np.arange(1, 11) if radii is None else radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or radii[0] < 2:
        raise ValidationError("radii must be increasing with smallest >= 2")
    if not 0 <= k_max <= 3:
        raise ValidationError("k_max must be in 0..3")
    if rhs.kind == "affine_pullback":
        n = rhs.params["T"].shape[0]
    m = n_samples or (64 if n == 2 else 96)
    dirs = sphere_directions(n, m)
    probe_dirs = np.concatenate([np.eye(n), sphere_directions(n, 8 if n == 2 else 12)])
    pts = radii[:, None, None] * dirs[None, :, :]  # (R, m, n)

    fvals = rhs(pts)
    if np.any(~np.isfinite(fvals)):
        bad = pts[~np.isfinite(fvals)][0]
        raise ValidationError(f"f evaluation failed at {bad.tolist()}")
    if np.any(fvals <= 0):
        bad = pts[fvals <= 0][0]
        raise ValidationError(f"non-positive f sample at {bad.tolist()}")

    suprema, growth, passed_k = {}, {}, {}
    rr = radii[:, None]
    h = step_rel * np.broadcast_to(rr, pts.shape[:-1])
    for k in range(k_max + 1):
        if k == 0:
            mag = np.abs(rhs.g(pts))
        else:
            mag = np.zeros(pts.shape[:-1])
            for e in probe_dirs:
                dk = _directional_derivative(rhs.g, pts, e, h, k)
                if np.any(~np.isfinite(dk)):
                    bad = pts[~np.isfinite(dk)][0]
                    raise ValidationError(f"derivative of order {k} failed at {bad.tolist()}")
                mag = np.maximum(mag, np.abs(dk))
        with np.errstate(over="ignore"):
            sup = np.max(rr ** (beta + k) * mag, axis=1)
        suprema[k] = sup
        top = slice(len(radii) // 2, None)
        pos = sup[top] > 0
        if np.count_nonzero(pos) >= 2:
            growth[k] = float(np.polyfit(np.log(radii[top][pos]), np.log(sup[top][pos]), 1)[0])
        else:
            growth[k] = 0.0
        tail = sup[-(last_rungs + 1):]
        increasing = np.all(tail[1:] > tail[:-1] * (1.0 + growth_tol)) and tail[-1] > 0
        passed_k[k] = bool(np.all(np.isfinite(sup)) and not increasing)
    return FAReport(float(beta), radii, suprema, growth, passed_k, all(passed_k.values()))


# ---------------------------------------------------------------------------
# far field


@dataclass(frozen=True, eq=False)
class QuadraticFarField:
    """Target expansion 1/2 x'Ax + b.x + c + d log sqrt(x'Ax)."""

    n: int
    A: np.ndarray
    b: np.ndarray
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.n not in (2, 3):
            raise ValidationError("n must be 2 or 3")
        if A.shape != (self.n, self.n) or b.shape != (self.n,):
            raise ValidationError("A must be n x n and b an n-vector")
        if np.max(np.abs(A - A.T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
            raise ValidationError("A is not symmetric")
        if np.min(np.linalg.eigvalsh(A)) <= 0:
            raise ValidationError("A is not positive definite")
        if abs(np.linalg.det(A) - 1.0) > 1e-12:
            raise ValidationError(f"det(A) = {np.linalg.det(A)!r}, expected 1")
        if self.n == 3 and self.d != 0:
            raise ValidationError("log coefficient must be 0 for n = 3")

    @classmethod
    def identity(cls, n: int, c: float = 0.0, d: float = 0.0) -> "QuadraticFarField":
        return cls(n, np.eye(n), np.zeros(n), c, d)

    def quadratic_form(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.A, x)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = self.quadratic_form(x)
        val = 0.5 * q + x @ self.b + self.c
        if self.d:
            val = val + 0.5 * self.d * np.log(q)
        return val

    __call__ = evaluate

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        Ax = x @ self.A
        g = Ax + self.b
        if self.d:
            g = g + self.d * Ax / self.quadratic_form(x)[..., None]
        return g

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "c": self.c, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict, n: int) -> "QuadraticFarField":
        A = np.asarray(data.get("A", np.eye(n).tolist()), dtype=float).reshape(n, n)
        return cls(n, A, np.asarray(data.get("b", [0.0] * n), dtype=float),
                   float(data.get("c", 0.0)), float(data.get("d", 0.0)))


# ---------------------------------------------------------------------------
# inner domain


def _rotation(n: int, rotation) -> np.ndarray:
    if rotation is None:
        return np.eye(n)
    rot = np.asarray(rotation, dtype=float)
    if rot.ndim == 0:
        if n != 2:
            raise ValidationError("an angle rotation is only meaningful in 2-D")
        c, s = math.cos(float(rot)), math.sin(float(rot))
        return np.array([[c, -s], [s, c]])
    if rot.shape != (n, n) or np.max(np.abs(rot @ rot.T - np.eye(n))) > 1e-10:
        raise ValidationError("rotation must be an orthogonal n x n matrix")
    return rot


@dataclass(frozen=True, eq=False)
class InnerDomain:
    """Strictly convex hole D: a ball, or an ellipse/ellipsoid.

    D = {y : (y - center)' Q (y - center) <= 1} with Q = R diag(axes^-2) R'.
    """

    kind: str
    center: np.ndarray
    semi_axes: np.ndarray
    rotation: Any = None

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        axes = np.asarray(self.semi_axes, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "semi_axes", axes)
        if self.kind not in ("ball", "ellipse"):
            raise ValidationError(f"unknown domain kind {self.kind!r}")
        if center.ndim != 1 or center.shape[0] not in (2, 3) or axes.shape != center.shape:
            raise ValidationError("center and semi_axes must be n-vectors with n in {2, 3}")
        if np.any(axes <= 0):
            raise ValidationError("semi-axes must be positive")
        object.__setattr__(self, "R", _rotation(len(center), self.rotation))

    @classmethod
    def ball(cls, radius: float, center=None, n: int = 2) -> "InnerDomain":
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls("ball", center, np.full(len(center), float(radius)))

    @classmethod
    def ellipse(cls, semi_axes, angle: float = 0.0, center=None) -> "InnerDomain":
        semi_axes = np.asarray(semi_axes, dtype=float)
        center = np.zeros(len(semi_axes)) if center is None else center
        rotation = angle if len(semi_axes) == 2 else None
        return cls("ellipse", center, semi_axes, rotation)

    @property
    def n(self) -> int:
        return len(self.center)

    @cached_property
    def Q(self) -> np.ndarray:
        return self.R @ np.diag(self.semi_axes**-2.0) @ self.R.T

    @property
    def rho(self) -> float:
        """Radius of the ball about ``center`` contained in D."""
        return float(np.min(self.semi_axes))

    @property
    def r_bar(self) -> float:
        """Radius of a ball about the origin containing D."""
        return float(np.linalg.norm(self.center) + np.max(self.semi_axes))

    @property
    def diam(self) -> float:
        return 2.0 * float(np.max(self.semi_axes))

    @property
    def curvature_lower_bound(self) -> float:
        a = self.semi_axes
        return float(np.min(a) / np.max(a) ** 2)

    def level(self, x) -> np.ndarray:
        """(x - c)'Q(x - c) - 1: negative inside D, zero on the boundary."""
        y = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", y, self.Q, y) - 1.0

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 0

    def ray_entry(self, x, e, max_len=np.inf) -> np.ndarray:
        """First s in (0, max_len] with x + s e on the boundary, entering from outside; inf if none."""
        y = np.asarray(x, dtype=float) - self.center
        e = np.asarray(e, dtype=float)
        Qe = e @ self.Q
        alpha = Qe @ e
        beta = y @ Qe
        gamma = np.einsum("...i,ij,...j->...", y, self.Q, y) - 1.0
        disc = beta**2 - alpha * gamma
        with np.errstate(invalid="ignore"):
            s = (-beta - np.sqrt(np.maximum(disc, 0.0))) / alpha
        hit = (disc > 0) & (s > 0) & (s <= max_len) & (gamma > 0)
        return np.where(hit, s, np.inf)

    def boundary_samples(self, m: int):
        """(points, outward unit normals, curvature) at m boundary points.

        In 3-D the curvature column holds the smallest principal curvature
        lower bound, exact for balls.
        """
        u = sphere_directions(self.n, m)
        M = self.R @ np.diag(self.semi_axes)
        pts = self.center + u @ M.T
        nrm = (pts - self.center) @ self.Q
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        if self.n == 2:
            a, b = self.semi_axes
            t = np.arctan2(u[:, 1], u[:, 0])
            curv = a * b / (a**2 * np.sin(t) ** 2 + b**2 * np.cos(t) ** 2) ** 1.5
        else:
            curv = np.full(m, self.curvature_lower_bound)
        return pts, nrm, curv

    def point(self, t) -> np.ndarray:
        """Boundary parametrization xi(t), 2-D only."""
        if self.n != 2:
            raise ValidationError("point(t) is defined for 2-D domains")
        t = np.asarray(t, dtype=float)
        u = np.stack([np.cos(t), np.sin(t)], axis=-1)
        return self.center + u @ (self.R @ np.diag(self.semi_axes)).T

    def signed_distance(self, x, m: int = 4096) -> np.ndarray:
        """Signed distance to the boundary (negative inside); exact for balls."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(x - self.center, axis=-1) - self.semi_axes[0]
        pts, _, _ = self.boundary_samples(m)
        flat = x.reshape(-1, self.n)
        dist = np.array([np.min(np.linalg.norm(pts - p, axis=-1)) for p in flat]).reshape(x.shape[:-1])
        return np.where(self.contains(x), -dist, dist)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": self.center.tolist()}
        if self.kind == "ball":
            out["radius"] = float(self.semi_axes[0])
        else:
            out["semi_axes"] = self.semi_axes.tolist()
            if self.rotation is not None:
                rot = np.asarray(self.rotation)
                out["rotation"] = float(rot) if rot.ndim == 0 else rot.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict, n: int) -> "InnerDomain":
        center = data.get("center", [0.0] * n)
        if data["kind"] == "ball":
            return cls.ball(data["radius"], center, n)
        return cls("ellipse", center, data["semi_axes"], data.get("rotation", data.get("angle")))


# ---------------------------------------------------------------------------
# boundary data


_SYMS = sympy.symbols("x y z")


@dataclass(frozen=True, eq=False)
class BoundaryExpression:
    """Closed-form boundary data phi(x), in the variables x, y, z and r = |x|."""

    expr: str
    n: int = 2

    @cached_property
    def _compiled(self):
        syms = _SYMS[: self.n]
        r = sympy.sqrt(sum(s**2 for s in syms))
        local = {"r": r, "x1": _SYMS[0], "x2": _SYMS[1], "x3": _SYMS[2]}
        try:
            e = sympy.sympify(self.expr, locals=local)
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ValidationError(f"cannot parse phi expression {self.expr!r}") from exc
        extra = e.free_symbols - set(syms)
        if extra:
            raise ValidationError(f"phi uses unknown symbols {sorted(map(str, extra))}")
        value = sympy.lambdify(syms, e, "numpy")
        grad = [sympy.lambdify(syms, sympy.diff(e, s), "numpy") for s in syms]
        return value, grad

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value, _ = self._compiled
        out = value(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, grad = self._compiled
        cols = [np.broadcast_to(np.asarray(g(*np.moveaxis(x, -1, 0)), dtype=float), x.shape[:-1])
                for g in grad]
        return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# problem spec


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    rhs: RightHandSide
    domain: Optional[InnerDomain]
    phi: BoundaryExpression
    far_field: QuadraticFarField
    R_out: float

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValidationError("n must be 2 or 3")
        if self.far_field.n != self.n:
            raise ValidationError("far field dimension mismatch")
        if self.rhs.kind == "affine_pullback" and self.rhs.params["T"].shape[0] != self.n:
            raise ValidationError("pullback matrix dimension mismatch")
        if self.domain is not None:
            if self.domain.n != self.n:
                raise ValidationError("domain dimension mismatch")
            if self.R_out < 4 * self.domain.r_bar:
                raise ValidationError(f"R_out = {self.R_out} must be >= 4 r_bar = {4 * self.domain.r_bar}")
        elif self.R_out <= 0:
            raise ValidationError("R_out must be positive")

    @property
    def r_bar(self) -> float:
        return self.domain.r_bar if self.domain is not None else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rhs": self.rhs.to_dict(),
            "domain": None if self.domain is None else self.domain.to_dict(),
            "phi": {"expr": self.phi.expr},
            "far_field": self.far_field.to_dict(),
            "R_out": self.R_out,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        try:
            n = int(data["n"])
            rhs = RightHandSide.from_dict(data["rhs"])
            dom = data.get("domain")
            domain = None if dom is None else InnerDomain.from_dict(dom, n)
            phi = BoundaryExpression(str(data.get("phi", {}).get("expr", "0")), n)
            far = QuadraticFarField.from_dict(data.get("far_field", {}), n)
            return cls(n, rhs, domain, phi, far, float(data["R_out"]))
        except KeyError as exc:
            raise ValidationError(f"missing key {exc.args[0]!r} in problem config") from exc


def load_problem(path) -> ProblemSpec:
    return ProblemSpec.from_dict(json.loads(Path(path).read_text()))
