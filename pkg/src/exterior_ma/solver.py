"""Monotone wide-stencil finite differences for det(D^2 u) = f.

The discrete operator at a node is

    MA_h[u] = min over frames (v_1..v_n) of  prod_j max(D_j u, 0) + sum_j min(D_j u, 0),

with D_j the centred second difference along v_j scaled by (h |v_j|)^-2.
Near a boundary the arm along v is cut at the exact intersection and the
non-uniform three-point formula is used with the Dirichlet value there. The
scheme is degenerate elliptic, so explicit sweeps u <- u + tau (MA_h[u] - f)
are monotone; a semismooth Newton iteration on the active frames finishes
the solve.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import gmres, spsolve

from .core import InnerDomain, ProblemSpec, QuadraticFarField, RightHandSide, BoundaryExpression, ValidationError
from .radial import exact_radial_solution

TOL_CONVEX = 1e-8


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class SchemeError(RuntimeError):
    """Internal inconsistency: monotonicity broken or an unresolvable neighbour."""


# ---------------------------------------------------------------------------
# stencils


def frames_2d(W: int):
    """Orthogonal integer pairs (v, v_perp): v = (p, q) primitive, p >= 1, q >= 0, max(p, q) <= W."""
    out = []
    for p in range(1, W + 1):
        for q in range(0, W + 1):
            if gcd(p, q) == 1:
                out.append((np.array([p, q]), np.array([-q, p])))
    out.sort(key=lambda f: (max(abs(f[0])), f[0][1]))
    return out


def frames_3d():
    """Axis frame, three face-diagonal frames and twelve space-diagonal frames."""
    e = np.eye(3, dtype=int)
    out = [(e[0], e[1], e[2])]
    for k in range(3):
        i, j = [m for m in range(3) if m != k]
        out.append((e[i] + e[j], e[i] - e[j], e[k]))
    for s1 in (1, -1):
        for s2 in (1, -1):
            dvec = np.array([1, s1, s2])
            for a in (np.array([s1, -1, 0]), np.array([0, s2, -s1]), np.array([s2, 0, -1])):
                if a @ dvec != 0:
                    continue
                out.append((dvec, a, np.cross(dvec, a)))
    return out


def _canonical(v) -> tuple:
    v = tuple(int(c) for c in v)
    for c in v:
        if c != 0:
            return v if c > 0 else tuple(-x for x in v)
    raise ValueError("zero direction")


# ---------------------------------------------------------------------------
# grid


@dataclass
class Grid:
    """Cartesian grid on B(0, R_out) minus D with cut-cell stencil data.

    Node classes: 0 exterior, 1 interior, 2 near-inner-boundary, 3 near-outer-boundary,
    4 Dirichlet (within 1e-6 h of the boundary).
    """

    n: int
    h: float
    W: int
    R_out: float
    domain: Optional[InnerDomain]
    boundary_value: Callable
    shape: tuple = ()
    directions: np.ndarray = None
    frames: np.ndarray = None
    unknown: np.ndarray = None
    coords: np.ndarray = None
    node_class: np.ndarray = None
    dirichlet: np.ndarray = None
    dirichlet_values: np.ndarray = None
    reduced_angular_resolution: bool = False

    @classmethod
    def build(cls, n: int, h: float, R_out: float, domain: Optional[InnerDomain] = None,
              boundary_value: Optional[Callable] = None, W: int = 5) -> "Grid":
        if n not in (2, 3):
            raise ValidationError("n must be 2 or 3")
        if h <= 0 or R_out <= 0:
            raise ValidationError("h and R_out must be positive")
        g = cls(n, float(h), int(W), float(R_out), domain, boundary_value or (lambda x: 0.5 * np.sum(x * x, -1)))
        g._setup()
        return g

    def _setup(self):
        n, h = self.n, self.h
        fr = frames_2d(self.W) if n == 2 else frames_3d()
        self.reduced_angular_resolution = n == 3
        dirs, index = [], {}
        frame_idx = []
        for frame in fr:
            row = []
            for v in frame:
                key = _canonical(v)
                if key not in index:
                    index[key] = len(dirs)
                    dirs.append(key)
                row.append(index[key])
            frame_idx.append(row)
        self.directions = np.array(dirs, dtype=int)
        self.frames = np.array(frame_idx, dtype=int)
        pad = int(np.max(np.abs(self.directions)))
        N = int(math.ceil(self.R_out / h - 1e-12))
        m = 2 * (N + pad) + 1
        self.shape = (m,) * n
        self.offset = N + pad
        axes = (np.arange(m) - self.offset) * h
        X = np.stack(np.meshgrid(*([axes] * n), indexing="ij"), axis=-1).reshape(-1, n)
        r = np.linalg.norm(X, axis=1)
        eps = 1e-6 * h
        on_bdry = np.abs(r - self.R_out) <= eps
        inside = r < self.R_out - eps
        if self.domain is not None:
            lev = self.domain.level(X)
            grad = 2.0 * np.linalg.norm((X - self.domain.center) @ self.domain.Q, axis=1)
            dist = lev / np.maximum(grad, 1e-300)
            on_bdry |= (np.abs(dist) <= eps) & (r <= self.R_out + eps)
            inside &= dist > eps
        cand = np.flatnonzero(inside)
        strides = np.array([m ** (n - 1 - k) for k in range(n)])
        self.strides = strides

        # distance fractions along every direction, both signs
        Xc = X[cand]
        t_all = np.ones((len(self.directions), 2, len(cand)))
        kind_all = np.zeros((len(self.directions), 2, len(cand)), dtype=np.int8)  # 1 inner, 2 outer
        for j, v in enumerate(self.directions):
            for s, sign in enumerate((1, -1)):
                step = sign * h * v.astype(float)
                t_out = self._sphere_exit(Xc, step)
                t_in = (self.domain.ray_entry(Xc, step, 1.0 + 1e-9) if self.domain is not None
                        else np.full(len(cand), np.inf))
                t_raw = np.minimum(t_out, t_in)
                cut = t_raw <= 1.0 + 1e-9
                t_all[j, s] = np.where(cut, np.minimum(t_raw, 1.0), 1.0)
                kind_all[j, s] = np.where(cut, np.where(t_in <= t_out, 1, 2), 0)
        tmin = t_all.min(axis=(0, 1))
        dir_mask = tmin < 1e-6
        self.dirichlet = np.union1d(cand[dir_mask], np.flatnonzero(on_bdry))
        self.dirichlet_values = self.boundary_value(X[self.dirichlet]) if len(self.dirichlet) else np.zeros(0)
        keep = ~dir_mask
        self.unknown = cand[keep]
        self.coords = X[self.unknown]
        t_all, kind_all = t_all[:, :, keep], kind_all[:, :, keep]
        nu = len(self.unknown)

        node_class = np.zeros(m**n, dtype=np.int8)
        node_class[self.dirichlet] = 4
        cut_inner = np.any(kind_all == 1, axis=(0, 1))
        cut_outer = np.any(kind_all == 2, axis=(0, 1))
        node_class[self.unknown] = np.where(cut_inner, 2, np.where(cut_outer, 3, 1))
        self.node_class = node_class

        # unknown numbering, extended value vector = [full array values, boundary point values]
        col = np.full(m**n, -1, dtype=np.int64)
        col[self.unknown] = np.arange(nu)
        self.col_of = col
        known = np.zeros(m**n, dtype=bool)
        known[self.unknown] = True
        known[self.dirichlet] = True

        nd = len(self.directions)
        self.nbr = np.empty((nd, 2, nu), dtype=np.int64)
        self.coef = np.empty((nd, 2, nu))
        bpts = []
        nb = m**n
        for j, v in enumerate(self.directions):
            lin = int(v @ strides)
            hv2 = h * h * float(v @ v)
            tp, tm = t_all[j, 0], t_all[j, 1]
            for s, sign in enumerate((1, -1)):
                t = t_all[j, s]
                idx = self.unknown + sign * lin
                cut = kind_all[j, s] > 0
                if np.any(~cut & ~known[idx]):
                    bad = self.coords[np.flatnonzero(~cut & ~known[idx])[0]]
                    raise SchemeError(f"unresolvable neighbour at node {bad.tolist()} along {v.tolist()}")
                ncut = int(np.count_nonzero(cut))
                if ncut:
                    pts = self.coords[cut] + (sign * h * t[cut])[:, None] * v
                    bpts.append(pts)
                    idx = idx.copy()
                    idx[cut] = nb + np.arange(ncut)
                    nb += ncut
                self.nbr[j, s] = idx
                self.coef[j, s] = 2.0 / ((tp + tm) * t * hv2)
        self.boundary_points = np.concatenate(bpts) if bpts else np.zeros((0, n))
        self.boundary_point_values = (self.boundary_value(self.boundary_points)
                                      if len(self.boundary_points) else np.zeros(0))
        self.n_full = m**n

    def _sphere_exit(self, X, step):
        a = step @ step
        b = X @ step
        c = np.sum(X * X, axis=1) - self.R_out**2
        return (-b + np.sqrt(np.maximum(b * b - a * c, 0.0))) / a

    # -- value vectors --------------------------------------------------------

    @property
    def n_unknown(self) -> int:
        return len(self.unknown)

    def extended(self, u: np.ndarray) -> np.ndarray:
        """Full-array values followed by boundary-point values."""
        full = np.zeros(self.n_full)
        full[self.unknown] = u
        full[self.dirichlet] = self.dirichlet_values
        return np.concatenate([full, self.boundary_point_values])

    def second_differences(self, u: np.ndarray) -> np.ndarray:
        ext = self.extended(u)
        cp, cm = self.coef[:, 0], self.coef[:, 1]
        return cp * (ext[self.nbr[:, 0]] - u) + cm * (ext[self.nbr[:, 1]] - u)

    def full_array(self, u: np.ndarray, fill=np.nan) -> np.ndarray:
        full = np.full(self.n_full, fill)
        full[self.unknown] = u
        full[self.dirichlet] = self.dirichlet_values
        return full.reshape(self.shape)

    def node_coords(self, flat_idx) -> np.ndarray:
        ij = np.stack(np.unravel_index(flat_idx, self.shape), axis=-1)
        return (ij - self.offset) * self.h


# ---------------------------------------------------------------------------
# operator


def _frame_values(D: np.ndarray, frames: np.ndarray):
    Df = D[frames]                               # (n_frames, n, nodes)
    pos = np.maximum(Df, 0.0)
    return np.prod(pos, axis=1) + np.sum(np.minimum(Df, 0.0), axis=1), Df


def ma_operator_all(grid: Grid, u: np.ndarray) -> np.ndarray:
    """MA_h[u] at every unknown node."""
    vals, _ = _frame_values(grid.second_differences(u), grid.frames)
    return vals.min(axis=0)


def ma_operator(values: np.ndarray, grid: Grid, node: int) -> float:
    """MA_h at a single unknown node (index into grid.unknown)."""
    if node < 0 or node >= grid.n_unknown:
        raise SchemeError(f"node {node} is not an unknown node")
    return float(ma_operator_all(grid, values)[node])


def _jacobian(grid: Grid, u: np.ndarray):
    D = grid.second_differences(u)
    vals, Df = _frame_values(D, grid.frames)
    k = np.argmin(vals, axis=0)                  # lowest index on ties
    nodes = np.arange(grid.n_unknown)
    act = Df[k, :, nodes]                        # (nodes, n)
    pos = np.maximum(act, 0.0)
    rows, cols, data = [], [], []
    diag = np.zeros(grid.n_unknown)
    for a in range(grid.n):
        others = np.prod(np.delete(pos, a, axis=1), axis=1)
        w = np.where(act[:, a] > 0, others, np.where(act[:, a] < 0, 1.0, 0.0))
        j = grid.frames[k, a]
        for s in range(2):
            c = grid.coef[j, s, nodes]
            nb = grid.nbr[j, s, nodes]
            diag -= w * c
            inside = nb < grid.n_full
            colj = np.where(inside, grid.col_of[np.minimum(nb, grid.n_full - 1)], -1)
            ok = colj >= 0
            rows.append(nodes[ok])
            cols.append(colj[ok])
            data.append((w * c)[ok])
    diag = np.where(np.abs(diag) < 1e-12, -1e-12, diag)
    rows.append(nodes)
    cols.append(nodes)
    data.append(diag)
    J = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n_unknown,) * 2)
    return J, vals.min(axis=0), D


def _lipschitz_bound(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Per-node bound on |d MA_h / d u_i| over all frames (not only the active one)."""
    D = grid.second_differences(u)
    Df = np.maximum(D[grid.frames], 0.0)                  # (frames, n, nodes)
    csum = grid.coef[:, 0] + grid.coef[:, 1]
    Cf = csum[grid.frames]
    total = np.zeros_like(Cf[:, 0])
    for a in range(grid.n):
        total = total + (np.prod(np.delete(Df, a, axis=1), axis=1) + 1.0) * Cf[:, a]
    return np.max(total, axis=0)


def linear_solve(J, rhs: np.ndarray, rtol: float = 1e-10, accept: float = 1e-6,
                 direct_limit: int = 20_000) -> np.ndarray:
    """Solve the Newton system J x = rhs.

    J is a nonsymmetric M-matrix up to sign: SuperLU for small systems,
    smoothed-aggregation AMG preconditioned GMRES otherwise. An AMG solution
    whose relative residual exceeds ``accept`` falls back to SuperLU.
    """
    if J.shape[0] <= direct_limit:
        return spsolve(J, rhs)
    A = (-J).tocsr()
    M = pyamg.smoothed_aggregation_solver(A, symmetry="nonsymmetric").aspreconditioner(cycle="V")
    norm_b = max(float(np.linalg.norm(rhs)), 1e-300)
    x, _ = gmres(A, -rhs, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=10)
    if np.all(np.isfinite(x)) and np.linalg.norm(J @ x - rhs) <= accept * norm_b:
        return x
    return spsolve(J.tocsc(), rhs)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class DiscreteSolution:
    grid: Grid
    values: np.ndarray
    residual_history: list
    sweeps: int
    newton_steps: int
    wall_time: float
    W: int
    h: float
    init: str
    converged: bool
    tol: float
    residual: np.ndarray = None
    certificate: dict = field(default_factory=dict)

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords

    @property
    def final_residual(self) -> float:
        return float(self.residual_history[-1])

    def min_second_difference(self) -> float:
        return float(np.min(self.grid.second_differences(self.values)))

    @property
    def discretely_convex(self) -> bool:
        return self.min_second_difference() >= -TOL_CONVEX

    def metadata(self) -> dict:
        return {
            "n": self.grid.n, "h": self.h, "W": self.W, "R_out": self.grid.R_out,
            "init": self.init, "converged": self.converged, "tol": self.tol,
            "sweeps": self.sweeps, "newton_steps": self.newton_steps,
            "wall_time": self.wall_time, "residual_history": [float(r) for r in self.residual_history],
            "n_unknown": self.grid.n_unknown,
            "reduced_angular_resolution": self.grid.reduced_angular_resolution,
            "certificate": self.certificate,
        }

    def to_csv(self, path) -> None:
        path = Path(path)
        n = self.grid.n
        cols = ["x", "y", "z"][:n] + ["value", "residual"]
        res = self.residual if self.residual is not None else np.full(len(self.values), np.nan)
        data = np.column_stack([self.coords, self.values, res])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, default=float))


def _quadratic_barrier(grid: Grid, kappa: float, lower: bool) -> np.ndarray:
    """kappa |x|^2 / 2 + C below (or above) every Dirichlet value."""
    q = lambda x: 0.5 * kappa * np.sum(x * x, axis=-1)
    pts = np.concatenate([grid.boundary_points, grid.node_coords(grid.dirichlet)])
    vals = np.concatenate([grid.boundary_point_values, grid.dirichlet_values])
    gap = vals - q(pts)
    C = float(np.min(gap)) if lower else float(np.max(gap))
    return q(grid.coords) + C


def solve_dirichlet(problem: ProblemSpec, grid: Optional[Grid] = None, init: str = "subsolution",
                    tol: float = 1e-9, max_iter: int = 100, sweeps: int = 50,
                    initial=None, h: float = 0.1, W: int = 5, newton: bool = True,
                    check_monotone: bool = True) -> DiscreteSolution:
    """Solve det D^2 u = f on B(0, R_out) minus D with phi on the boundary of D
    and the far-field quadratic on the outer sphere.

    Phase 1 runs explicit monotone sweeps with tau <= h^2 / (4 n c0 W^2),
    checking that iterates move monotonically from a sub- or supersolution;
    Phase 2 is damped semismooth Newton on the active frames.
    """
    t0 = time.perf_counter()
    f = problem.rhs
    lo, hi = f.bounds
    if not lo > 0:
        raise ValidationError("f must be bounded below by a positive constant")
    if grid is None:
        grid = problem_grid(problem, h=h, W=W)
    fx = f(grid.coords)
    if np.min(fx) <= 0:
        raise ValidationError("f must be positive on the grid")
    n = grid.n

    if init == "subsolution":
        u = _quadratic_barrier(grid, (hi * 1.0001) ** (1.0 / n), lower=True)
        if initial is not None:
            u = np.maximum(u, _evaluate_initial(initial, grid))
    elif init == "supersolution":
        u = _quadratic_barrier(grid, (lo / 1.0001) ** (1.0 / n), lower=False)
        if initial is not None:
            u = np.minimum(u, _evaluate_initial(initial, grid))
    elif init == "custom":
        if initial is None:
            raise ValidationError("init='custom' needs an initial guess")
        u = _evaluate_initial(initial, grid)
    else:
        raise ValidationError(f"unknown init {init!r}")

    F = ma_operator_all(grid, u) - fx
    if init == "subsolution" and np.min(F) < -1e-9 * max(1.0, hi):
        raise SchemeError(f"initial guess is not a discrete subsolution (min MA_h - f = {np.min(F):.3g})")
    if init == "supersolution" and np.max(F) > 1e-9 * max(1.0, hi):
        raise SchemeError(f"initial guess is not a discrete supersolution (max MA_h - f = {np.max(F):.3g})")
    history = [float(np.max(np.abs(F)))]

    # phase 1: monotone sweeps
    c0 = f.c0
    Wmax = float(np.max(np.abs(grid.directions)))
    tau = grid.h**2 / (4 * n * c0 * Wmax**2)
    tau0 = tau
    done = 0
    window = []
    for k in range(sweeps if newton else max_iter):
        tau = np.minimum(tau0, 0.5 / _lipschitz_bound(grid, u))
        u_new = u + tau * F
        if check_monotone and init in ("subsolution", "supersolution"):
            step = u_new - u
            if init == "subsolution" and np.min(step) < -1e-14 * (1 + np.max(np.abs(u))):
                raise SchemeError("monotone sweep decreased an iterate started from a subsolution")
            if init == "supersolution" and np.max(step) > 1e-14 * (1 + np.max(np.abs(u))):
                raise SchemeError("monotone sweep increased an iterate started from a supersolution")
        u = u_new
        F = ma_operator_all(grid, u) - fx
        done += 1
        history.append(float(np.max(np.abs(F))))
        if history[-1] <= tol:
            break
        if not newton and done >= 500 and history[-1] > (1 - 1e-3) * history[-501]:
            raise NonConvergenceError("residual stagnated in monotone sweeps", history)

    # phase 2: damped Newton
    steps = 0
    while newton and history[-1] > tol:
        if steps >= max_iter:
            raise NonConvergenceError(f"Newton did not reach tol {tol:g} in {max_iter} steps "
                                      f"(residual {history[-1]:.3g})", history)
        J, MA, _ = _jacobian(grid, u)
        F = MA - fx
        # 3-D wide stencils fill in badly under LU, so AMG takes over much earlier
        delta = linear_solve(J, -F, direct_limit=20_000 if n == 2 else 2_000)
        r0 = float(np.max(np.abs(F)))
        alpha = 1.0
        for _ in range(31):
            trial = u + alpha * delta
            Ft = ma_operator_all(grid, trial) - fx
            rt = float(np.max(np.abs(Ft)))
            if rt < r0:
                break
            alpha *= 0.5
        else:
            raise NonConvergenceError("line search failed after 30 halvings", history)
        u, F = trial, Ft
        steps += 1
        history.append(rt)

    converged = history[-1] <= tol
    sol = DiscreteSolution(grid, u, history, done, steps, time.perf_counter() - t0, grid.W, grid.h,
                           init, converged, tol, residual=F)
    if not converged and not newton:
        raise NonConvergenceError(f"sweeps ended at residual {history[-1]:.3g}", history)
    return sol


def _evaluate_initial(initial, grid: Grid) -> np.ndarray:
    if callable(initial):
        return np.asarray(initial(grid.coords), dtype=float)
    arr = np.asarray(initial, dtype=float)
    if arr.shape != (grid.n_unknown,):
        raise ValidationError("initial values must have one entry per unknown node")
    return arr


def problem_grid(problem: ProblemSpec, h: float, W: int = 5) -> Grid:
    """Grid for a problem: phi on the boundary of D, far-field quadratic on the outer sphere."""
    D, phi, far = problem.domain, problem.phi, problem.far_field
    R = problem.R_out

    def boundary_value(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        on_outer = np.abs(r - R) <= 1e-6 * R
        out = np.empty(len(x))
        if np.any(on_outer):
            out[on_outer] = far.evaluate(x[on_outer])
        if np.any(~on_outer):
            out[~on_outer] = phi(x[~on_outer]) if D is not None else far.evaluate(x[~on_outer])
        return out

    return Grid.build(problem.n, h, R, D, boundary_value, W)


# ---------------------------------------------------------------------------
# big ball and comparison


def solve_big_ball(f: RightHandSide, n: int, R: float, h: float, W: int = 5, tol: float = 1e-9,
                   max_iter: int = 100, sweeps: int = 20, slack_factor: float = 10.0) -> DiscreteSolution:
    """det D^2 u_R = f in B_R, u_R = R^2 / 2 on the sphere, with the radial sandwich certificate."""
    from .barriers import radial_bounds

    problem = ProblemSpec(n, f, None, BoundaryExpression("0", n), QuadraticFarField.identity(n), float(R))
    sol = solve_dirichlet(problem, h=h, W=W, tol=tol, max_iter=max_iter, sweeps=sweeps)
    f_bar, f_low = radial_bounds(f, n)
    r = np.linalg.norm(sol.coords, axis=1)
    ladder = np.linspace(0.0, R, 4001)
    h_minus = exact_radial_solution(f_bar, n, r0=0.0, r_max=max(1e3, 10 * R))
    h_plus = exact_radial_solution(f_low, n, r0=0.0, r_max=max(1e3, 10 * R))
    # normalising constants taken over [0, R] (the global versions need not exist in 2-D)
    beta_minus = float(np.min(0.5 * ladder**2 - h_minus.u(ladder)))
    beta_plus = float(np.max(0.5 * ladder**2 - h_plus.u(ladder)))
    lower = h_minus.u(r) + beta_minus
    upper = h_plus.u(r) + beta_plus
    slack = slack_factor * (h**2 + W**-2.0) * R**2
    v_low = float(np.max(lower - sol.values))
    v_up = float(np.max(sol.values - upper))
    sol.certificate = {
        "beta_minus": beta_minus, "beta_plus": beta_plus, "slack": slack,
        "max_lower_violation": v_low, "max_upper_violation": v_up,
        "sandwich_ok": bool(v_low <= slack and v_up <= slack),
        "strict_sandwich_ok": bool(v_low <= 1e-8 and v_up <= 1e-8),
        "center_value": float(center_value(sol)),
    }
    return sol


def center_value(sol: DiscreteSolution) -> float:
    i = int(np.argmin(np.linalg.norm(sol.coords, axis=1)))
    return float(sol.values[i])


@dataclass
class OrderingReport:
    ordered: bool
    worst_violation: float
    worst_node: list
    tolerance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def comparison_check(sol1: DiscreteSolution, sol2: DiscreteSolution, f1=None, f2=None) -> OrderingReport:
    """Check sol1 <= sol2 + 10 max(tol1, tol2) nodewise (f1 >= f2 expected)."""
    g1, g2 = sol1.grid, sol2.grid
    if g1.n_unknown != g2.n_unknown or g1.h != g2.h or not np.array_equal(g1.unknown, g2.unknown):
        raise ValidationError("solutions live on different grids")
    if f1 is not None and f2 is not None:
        a, b = np.asarray(f1(g1.coords)), np.asarray(f2(g1.coords))
        if np.any(a < b - 1e-14):
            raise ValidationError("comparison needs f1 >= f2 at every node")
    tol = 10.0 * max(sol1.tol, sol2.tol)
    diff = sol1.values - sol2.values
    k = int(np.argmax(diff))
    return OrderingReport(bool(diff[k] <= tol), float(diff[k]), g1.coords[k].tolist(), tol)
