"""Closed-loop liquidation: feedback, fundamental matrix, simulation and costs.

Value convention: the quadratic-form value of a penalized problem is
``V = 1/2 [x; y]^T P [x; y]`` and the matching terminal penalty is
``1/2 (n |X_T|^2 + 2 Y_T^T X_T)``. With this scaling the Riccati equation, the
feedback law and the running cost ``1/2 xi^T Lambda xi + Y^T xi + 1/2 X^T Sigma X``
are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from ._ode import integrate_forward
from .bounds import BoundReport, arccoth, pq_bounds, t0 as bounds_t0
from .model import BlockSym, ModelParams, def_blocks, p_from_q
from .riccati import RiccatiSolution, write_csv


def feedback(q_t: BlockSym, x, y, params: ModelParams) -> np.ndarray:
    """Optimal trading rate ``Lambda^-1 (D x - E y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (params.d,) or y.shape != (params.d,):
        raise ValueError(f"state vectors must have length {params.d}")
    dd, ee, _ = def_blocks(q_t, params.gamma_mat)
    return np.linalg.solve(params.lam, dd @ x - ee @ y)


def _gain(params: ModelParams) -> Callable[[np.ndarray], np.ndarray]:
    # xi = K z with K = -Lambda^-1 [-I, gamma] Q
    d = params.d
    j = np.hstack([-np.eye(d), params.gamma_mat])
    lam_inv = params.lam_inv

    def gain(q: np.ndarray) -> np.ndarray:
        return -lam_inv @ j @ q
    return gain


def _f_block(params: ModelParams):
    d = params.d
    j = np.hstack([-np.eye(d), params.gamma_mat])

    def f(q: np.ndarray) -> np.ndarray:
        return j @ q @ j.T
    return f


def _sub_grid(solution: RiccatiSolution, t0: float, grid: Sequence[float] | None, t_end: float | None = None):
    if grid is None:
        end = solution.t_end if t_end is None else t_end
        g = solution.grid
        inner = g[(g > t0) & (g < end)]
        grid = np.concatenate([[t0], inner, [end]])
    grid = np.asarray(grid, dtype=float)
    if grid[0] < solution.t_start or grid[-1] > solution.t_end + 1e-14:
        raise ValueError("grid extends beyond the Riccati solution")
    return grid


def rho_integral(params: ModelParams, a: float, b: float) -> np.ndarray:
    """Exact ``int_a^b rho(r) dr`` for the piecewise-constant schedule (per asset)."""
    cuts = [a] + params.rho.breakpoints(a, b) + [b]
    out = np.zeros(params.d)
    for lo, hi in zip(cuts, cuts[1:]):
        out += params.rho(0.5 * (lo + hi)) * (hi - lo)
    return out


@dataclass
class FundamentalPath:
    grid: np.ndarray
    phi: np.ndarray
    phi_inv: np.ndarray


def fundamental(params: ModelParams, solution: RiccatiSolution, t0: float,
                grid: Sequence[float] | None = None, rtol: float = 1e-10) -> FundamentalPath:
    """Integrate ``dPhi/ds = -Lambda^-1 F(s) Phi`` and its inverse from ``Phi(t0) = I``."""
    grid = _sub_grid(solution, t0, grid)
    d = params.d
    lam_inv = params.lam_inv
    fb = _f_block(params)

    def make(_tm):
        def rhs(s, v):
            m = lam_inv @ fb(solution.eval_matrix(min(s, solution.t_end)))
            phi = v[:d * d].reshape(d, d)
            inv = v[d * d:].reshape(d, d)
            return np.concatenate([(-m @ phi).ravel(), (inv @ m).ravel()])
        return rhs

    y0 = np.concatenate([np.eye(d).ravel(), np.eye(d).ravel()])
    vals = integrate_forward(make, y0, grid, [], rtol=rtol, atol=1e-13)
    return FundamentalPath(grid, vals[:, :d * d].reshape(-1, d, d), vals[:, d * d:].reshape(-1, d, d))


@dataclass
class Trajectory:
    """Sampled closed-loop path; ``running_cost[k]`` is the cost accrued on ``[t0, grid[k]]``."""

    grid: np.ndarray
    x_path: np.ndarray
    y_path: np.ndarray
    xi_path: np.ndarray
    running_cost: np.ndarray
    n: float | None = None
    limit: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.x_path.shape[1]

    def columns(self) -> list[str]:
        d = self.d
        return (["t"] + [f"X_{i + 1}" for i in range(d)] + [f"Y_{i + 1}" for i in range(d)]
                + [f"xi_{i + 1}" for i in range(d)] + ["running_cost"])

    def rows(self) -> np.ndarray:
        return np.column_stack([self.grid, self.x_path, self.y_path, self.xi_path, self.running_cost])

    def to_csv(self, path) -> str:
        return write_csv(path, self.columns(), self.rows())


def running_integrand(params: ModelParams, t: float, x, y, xi) -> float:
    return float(0.5 * xi @ params.lam @ xi + y @ xi + 0.5 * x @ params.sigma(t) @ x)


def simulate(params: ModelParams, solution: RiccatiSolution, t0: float, x0, y0,
             grid: Sequence[float] | None = None,
             bump: Callable[[float], np.ndarray] | None = None,
             t_end: float | None = None, rtol: float = 1e-10) -> Trajectory:
    """Forward closed-loop simulation under the feedback of ``solution``.

    ``bump(s)`` is added to the feedback rate when given (used for optimality
    checks). The path stops at ``t_end`` (default: end of the solution).
    """
    grid = _sub_grid(solution, t0, grid, t_end)
    grid = np.union1d(grid, params.breakpoints(grid[0], grid[-1]))
    d = params.d
    x0 = np.asarray(x0, dtype=float).reshape(d)
    y0 = np.asarray(y0, dtype=float).reshape(d)
    gain = _gain(params)
    lam = params.lam
    g = params.gamma

    def make(tm):
        rho = params.rho(tm)
        sig = params.sigma(tm)

        def rhs(s, v):
            x, y = v[:d], v[d:2 * d]
            xi = gain(solution.eval_matrix(min(s, solution.t_end))) @ v[:2 * d]
            if bump is not None:
                xi = xi + bump(s)
            run = 0.5 * xi @ lam @ xi + y @ xi + 0.5 * x @ sig @ x
            return np.concatenate([-xi, -rho * y + g * xi, [run]])
        return rhs

    vals = integrate_forward(make, np.concatenate([x0, y0, [0.0]]), grid,
                             params.breakpoints(grid[0], grid[-1]), rtol=rtol, atol=1e-13)
    xs, ys = vals[:, :d], vals[:, d:2 * d]
    xis = np.array([gain(solution.eval_matrix(t)) @ np.concatenate([x, y])
                    for t, x, y in zip(grid, xs, ys)])
    if bump is not None:
        xis = xis + np.array([bump(t) for t in grid])
    return Trajectory(grid, xs, ys, xis, vals[:, 2 * d], None if solution.limit else solution.n,
                      solution.limit, {"t0": float(t0)})


def terminal_penalty(n: float, x_t, y_t) -> float:
    x_t, y_t = np.asarray(x_t), np.asarray(y_t)
    return float(0.5 * (n * x_t @ x_t + 2.0 * y_t @ x_t))


def cost(params: ModelParams, traj: Trajectory, terminal_penalty_n: float | None = None) -> float:
    """Simpson quadrature of the running cost along ``traj`` plus the optional penalty.

    Quadrature restarts at schedule breakpoints, where the integrand may jump.
    """
    grid = traj.grid
    vals = np.array([running_integrand(params, t, x, y, xi)
                     for t, x, y, xi in zip(grid, traj.x_path, traj.y_path, traj.xi_path)])
    cuts = [0]
    for b in params.breakpoints(grid[0], grid[-1]):
        k = int(np.searchsorted(grid, b))
        if 0 < k < len(grid) - 1 and grid[k] == b:
            cuts.append(k)
    cuts.append(len(grid) - 1)
    total = 0.0
    for i0, i1 in zip(cuts, cuts[1:]):
        seg = vals[i0:i1 + 1].copy()
        if i1 == i0:
            continue
        # left limit of Sigma at the right end of the segment
        tm = 0.5 * (grid[i1 - 1] + grid[i1])
        seg[-1] = running_integrand(params, tm, traj.x_path[i1], traj.y_path[i1], traj.xi_path[i1])
        total += float(simpson(seg, x=grid[i0:i1 + 1]))
    if terminal_penalty_n is not None:
        total += terminal_penalty(terminal_penalty_n, traj.x_path[-1], traj.y_path[-1])
    return total


def value(p_t: BlockSym, x, y) -> float:
    """Quadratic-form value ``1/2 [x; y]^T P [x; y]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * p_t.quad(x, y)


def value_at(solution: RiccatiSolution, t: float, x, y) -> float:
    q = BlockSym.from_matrix(solution.eval_matrix(t))
    return value(p_from_q(q, solution.params.gamma_mat), x, y)


def tail_estimated_cost(params: ModelParams, limit_traj: Trajectory, top: RiccatiSolution) -> dict:
    """Constrained cost of a limit path stopped at ``T - delta``.

    The tail ``[T - delta, T]`` is priced with the largest-penalty solution.
    """
    head = cost(params, limit_traj)
    t_stop = float(limit_traj.grid[-1])
    tail = value_at(top, t_stop, limit_traj.x_path[-1], limit_traj.y_path[-1])
    return {"cost": head + tail, "head": head, "tail": tail, "t_stop": t_stop,
            "label": "tail-estimated", "tail_n": top.n}


# ---------------------------------------------------------------------------
# path identities and ladder checks

def y_identity_residual(params: ModelParams, traj: Trajectory) -> float:
    """Max deviation from ``Y + gamma X - w = exp(-int rho)(y0 + gamma x0)``.

    ``w(s) = int_t0^s exp(-int_u^s rho) gamma rho X(u) du`` by exponential
    trapezoid on the trajectory grid.
    """
    g = params.gamma
    grid = traj.grid
    x0, y0 = traj.x_path[0], traj.y_path[0]
    w = np.zeros_like(traj.x_path)
    decay = np.zeros_like(traj.x_path)
    for k in range(len(grid) - 1):
        h = grid[k + 1] - grid[k]
        rho = params.rho(0.5 * (grid[k] + grid[k + 1]))
        e = np.exp(-rho * h)
        w[k + 1] = e * w[k] + 0.5 * h * (e * g * rho * traj.x_path[k] + g * rho * traj.x_path[k + 1])
        decay[k + 1] = decay[k] + rho * h
    rhs = np.exp(-decay) * (y0 + g * x0)
    lhs = traj.y_path + g * traj.x_path - w
    return float(np.max(np.abs(lhs - rhs)))


def strategy_identity_residual(params: ModelParams, solution: RiccatiSolution, traj: Trajectory) -> float:
    """Max deviation of ``xi`` from its state representation via ``D + E gamma`` and ``E``."""
    g = params.gamma
    grid = traj.grid
    x0, y0 = traj.x_path[0], traj.y_path[0]
    lam_inv = params.lam_inv
    w = np.zeros(params.d)
    decay = np.zeros(params.d)
    worst = 0.0
    for k, t in enumerate(grid):
        if k > 0:
            h = grid[k] - grid[k - 1]
            rho = params.rho(0.5 * (grid[k] + grid[k - 1]))
            e = np.exp(-rho * h)
            w = e * w + 0.5 * h * (e * g * rho * traj.x_path[k - 1] + g * rho * traj.x_path[k])
            decay = decay + rho * h
        _, ee, ff = def_blocks(BlockSym.from_matrix(solution.eval_matrix(t)), params.gamma_mat)
        xi = lam_inv @ (ff @ traj.x_path[k] - ee @ (np.exp(-decay) * (y0 + g * x0)) - ee @ w)
        worst = max(worst, float(np.max(np.abs(xi - traj.xi_path[k]))))
    return worst


def dynamics_residual(params: ModelParams, traj: Trajectory) -> float:
    """Trapezoid check of ``dX = -xi ds`` and ``dY = (-rho Y + gamma xi) ds``."""
    grid = traj.grid
    h = np.diff(grid)[:, None]
    dx = np.diff(traj.x_path, axis=0) + 0.5 * h * (traj.xi_path[1:] + traj.xi_path[:-1])
    rho = np.array([params.rho(0.5 * (a + b)) for a, b in zip(grid, grid[1:])])
    fy = -rho * 0.5 * (traj.y_path[1:] + traj.y_path[:-1]) + params.gamma * 0.5 * (traj.xi_path[1:] + traj.xi_path[:-1])
    dy = np.diff(traj.y_path, axis=0) - h * fy
    return float(max(np.max(np.abs(dx)), np.max(np.abs(dy))))


@dataclass
class LiquidationReport:
    ns: list
    penalty_terms: list
    cross_terms: list
    threshold: float
    decreasing: bool
    cross_decreasing: bool

    @property
    def passed(self) -> bool:
        return (self.decreasing and self.cross_decreasing and self.penalty_terms[-1] < self.threshold
                and self.cross_terms[-1] < self.threshold)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def summary(self) -> dict:
        return {"bound": "liquidation", "verdict": self.verdict, "n": self.ns,
                "n_xT_sq": self.penalty_terms, "abs_yT_xT": self.cross_terms,
                "threshold": self.threshold}


def check_liquidation(params: ModelParams, ladder: Sequence[RiccatiSolution], t0: float, x0, y0,
                      threshold: float = 1e-2) -> LiquidationReport:
    """Track ``n |X^n(T)|^2`` and ``|Y^n(T)^T X^n(T)|`` along a ladder of penalized solutions."""
    ns, pen, cross = [], [], []
    for sol in ladder:
        tr = simulate(params, sol, t0, x0, y0)
        xt, yt = tr.x_path[-1], tr.y_path[-1]
        ns.append(sol.n)
        pen.append(float(sol.n * xt @ xt))
        cross.append(float(abs(yt @ xt)))
    zero = all(p == 0 for p in pen)
    dec = zero or all(b < a for a, b in zip(pen, pen[1:]))
    cdec = all(c == 0 for c in cross) or all(b < a for a, b in zip(cross, cross[1:]))
    return LiquidationReport(ns, pen, cross, threshold, dec, cdec)


def ladder_statistics(params: ModelParams, ladder: Sequence[RiccatiSolution], t0: float, x0, y0) -> dict:
    """Uniform-in-n quantities: max |X|/|Phi|, max |Y|, max |xi| per rung."""
    out = {"n": [], "x_over_phi": [], "y_max": [], "xi_max": []}
    for sol in ladder:
        tr = simulate(params, sol, t0, x0, y0)
        fp = fundamental(params, sol, t0, tr.grid)
        phi_norm = np.sqrt(np.sum(fp.phi**2, axis=(1, 2)))
        out["n"].append(sol.n)
        out["x_over_phi"].append(float(np.max(np.linalg.norm(tr.x_path, axis=1) / phi_norm)))
        out["y_max"].append(float(np.max(np.linalg.norm(tr.y_path, axis=1))))
        out["xi_max"].append(float(np.max(np.linalg.norm(tr.xi_path, axis=1))))
    return out


def compact_distance(a: Trajectory, b: Trajectory, t_stop: float) -> float:
    """Sup over the common grid up to ``t_stop`` of ``|Z_a - Z_b|``."""
    if not np.array_equal(a.grid, b.grid):
        raise ValueError("trajectories must share a grid")
    mask = a.grid <= t_stop
    za = np.hstack([a.x_path, a.y_path])[mask]
    zb = np.hstack([b.x_path, b.y_path])[mask]
    return float(np.max(np.linalg.norm(za - zb, axis=1)))


def sign_changes(traj: Trajectory) -> dict:
    """Whether any position or rate crosses zero (short positions are not excluded)."""
    return {"short_position": bool(np.any(traj.x_path < -1e-12)),
            "negative_rate": bool(np.any(traj.xi_path < -1e-12))}


def q_integral_path(params: ModelParams, n: float, grid: Sequence[float]) -> np.ndarray:
    """Cumulative ``int_{grid[0]}^s q^n`` at every grid point, in closed form.

    Below ``T0`` the lower bound is constant; above it ``q = coth(T - u + k) - 1``
    with antiderivative ``-log sinh(T - u + k) - u``.
    """
    grid = np.asarray(grid, dtype=float)
    T = params.horizon
    start = bounds_t0(params)
    k = arccoth((n - params.gamma_max) / params.lambda_max + 1.0)
    q_flat = pq_bounds(params, n, 0.0)[0] if start > 0 else 0.0

    def anti(u):
        u = np.asarray(u, dtype=float)
        hi = np.maximum(u, start)
        tail = -np.log(np.sinh(T - hi + k)) - hi + np.log(np.sinh(T - start + k)) + start
        return q_flat * (np.minimum(u, start) - 0.0) + tail

    return anti(grid) - anti(grid[0])


def check_fundamental_bound(params: ModelParams, solution: RiccatiSolution, t0: float = 0.0,
                            tol: float = 1e-10) -> BoundReport:
    """``|Phi(t0, s)|^2 <= d (lambda_max / lambda_min) exp(-2 int_t0^s q^n)`` (Frobenius norm).

    Margins are relative to the bound.
    """
    fp = fundamental(params, solution, t0)
    lhs = np.sum(fp.phi**2, axis=(1, 2))
    rhs = params.d * params.lambda_max / params.lambda_min * np.exp(-2.0 * q_integral_path(params, solution.n, fp.grid))
    return BoundReport("fundamental", fp.grid, (rhs - lhs) / rhs, tol, {"n": solution.n, "t0": t0})


__all__ = [
    "feedback", "fundamental", "FundamentalPath", "Trajectory", "simulate", "cost", "value",
    "value_at", "terminal_penalty", "running_integrand", "tail_estimated_cost",
    "y_identity_residual", "strategy_identity_residual", "dynamics_residual",
    "LiquidationReport", "check_liquidation", "ladder_statistics", "compact_distance",
    "sign_changes", "rho_integral", "q_integral_path", "check_fundamental_bound",
]
