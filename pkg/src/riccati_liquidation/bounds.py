"""Closed-form a priori estimates and checks of computed solutions against them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from ._ode import integrate_backward
from .model import BlockSym, ModelParams, Schedule, def_blocks, frob, min_eig
from .riccati import GridSpec, RiccatiSolution, write_csv

BOUND_TOL = 1e-7


# ---------------------------------------------------------------------------
# constants

def alpha(params: ModelParams) -> float:
    return (params.sigma_inf + 2.0 * params.gamma_max * params.rho_inf) / params.lambda_min


def beta(params: ModelParams) -> float:
    return 3.0 + 2.0 * params.rho_inf**2


def n0(params: ModelParams) -> float:
    """Smallest penalization level for which the finer estimates are proved."""
    a, b = alpha(params), beta(params)
    return max(params.lambda_min * (math.sqrt(1.0 + a) + 1.0) + params.gamma_min,
               (b + 1.0) * params.gamma_max + 1.0)


def t0(params: ModelParams, n0_val: float | None = None) -> float:
    """Start of the terminal window on which the weighted bounds hold."""
    base = n0(params)
    n0_val = base if n0_val is None else n0_val
    if n0_val < base - 1e-12:
        raise ValueError(f"n0_val={n0_val:g} is below n0={base:g}")
    b = beta(params)
    T = params.horizon
    worst = -math.inf
    for g in params.gamma:
        width = params.lambda_min / (g * (0.5 + b)) * (n0_val - (b + 1.0) * g) / (n0_val - 0.5 * g)
        worst = max(worst, T - width)
    out = max(worst, 0.0)
    if out >= T:
        raise ValueError(f"T0={out:g} is not below T={T:g}; inconsistent parameters")
    return out


def arccoth(z: float) -> float:
    if not z > 1.0:
        raise ValueError(f"arccoth needs an argument > 1, got {z!r}")
    return 0.5 * math.log((z + 1.0) / (z - 1.0))


def coth(x: float) -> float:
    if x == 0.0:
        return math.inf
    return 1.0 / math.tanh(x)


# ---------------------------------------------------------------------------
# one-asset benchmark

@dataclass(frozen=True)
class ScalarTriple:
    grid: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n: float
    gamma: float

    @property
    def d(self) -> np.ndarray:
        return self.a - self.gamma * self.b

    @property
    def e(self) -> np.ndarray:
        return self.gamma * self.c - self.b

    @property
    def f(self) -> np.ndarray:
        return self.d + self.e * self.gamma


def _as_schedule(v) -> Schedule:
    return v if isinstance(v, Schedule) else Schedule.constant(float(v))


def scalar_triple_solve(lam: float, gamma_i: float, sigma_bar, rho_i, n: float,
                        grid: np.ndarray, rtol: float = 1e-10) -> ScalarTriple:
    """Solve the three coupled scalar Riccati equations backward from ``(n, 1, 1/gamma)``.

    ``sigma_bar`` and ``rho_i`` may be floats or scalar schedules. ``grid`` is
    an increasing array ending at the horizon.
    """
    if not n > gamma_i:
        raise ValueError("scalar triple needs n > gamma_i")
    sig, rho = _as_schedule(sigma_bar), _as_schedule(rho_i)
    grid = np.asarray(grid, dtype=float)
    bps = sorted(set(sig.breakpoints(grid[0], grid[-1])) | set(rho.breakpoints(grid[0], grid[-1])))
    g = gamma_i

    def make(tm):
        s, r = float(sig(tm)), float(rho(tm))

        def f(_t, y):
            a, b, c = y
            dd, ee = a - g * b, g * c - b
            return [-s + dd * dd / lam,
                    r * b - ee * dd / lam,
                    2 * r * c - 2 * r / g + ee * ee / lam]
        return f

    vals = integrate_backward(make, np.array([n, 1.0, 1.0 / g]), grid, bps, rtol=rtol, atol=1e-12)
    return ScalarTriple(grid, vals[:, 0], vals[:, 1], vals[:, 2], float(n), float(g))


def scalar_priori_bounds(lam: float, gamma: float, rho_inf: float, sigma_inf: float,
                         n: float, t: float, horizon: float) -> dict:
    """Closed-form envelope of the scalar triple at time ``t``.

    Keys: ``D_lo, D_hi, A_lo, A_hi, B_lo, C_lo, C_hi, F_lo, F_hi``.
    """
    if not n > gamma:
        raise ValueError("bounds need n > gamma")
    tau = horizon - t
    d_lo = gamma / (math.exp(gamma * tau / lam) * (1.0 + gamma / (n - gamma)) - 1.0)
    kappa = math.sqrt(2.0 / lam * max(sigma_inf, gamma * rho_inf))
    if kappa == 0.0:
        d_hi = lam / (tau + lam / (n - gamma))
    else:
        d_hi = lam * kappa * coth(kappa * tau + arccoth((n - gamma) / (lam * kappa)))
    shrink = math.exp(-rho_inf * tau)
    return {
        "D_lo": d_lo, "D_hi": d_hi,
        "A_lo": d_lo, "A_hi": d_hi + gamma,
        "F_lo": d_lo, "F_hi": d_hi + gamma,
        "B_lo": shrink,
        "C_lo": shrink / gamma, "C_hi": 1.0 / gamma,
        "kappa": kappa,
    }


# ---------------------------------------------------------------------------
# reports

@dataclass
class BoundReport:
    """Per-point margins of one bound family; negative margin means violated."""

    name: str
    grid: np.ndarray
    margin: np.ndarray
    tol: float = BOUND_TOL
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margin >= -self.tol))

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.margin)) if len(self.margin) else 0

    @property
    def worst_t(self) -> float:
        return float(self.grid[self.worst_index]) if len(self.grid) else math.nan

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margin)) if len(self.margin) else math.inf

    def summary(self) -> dict:
        out = {"bound": self.name, "verdict": self.verdict, "worst_t": self.worst_t,
               "worst_margin": self.worst_margin}
        out.update(self.extra)
        return out

    def to_csv(self, path) -> str:
        finite = np.where(np.isfinite(self.margin), self.margin, np.finfo(float).max)
        return write_csv(path, ["t", "margin"], np.column_stack([self.grid, finite]))

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# rough (envelope) estimate

@dataclass(frozen=True)
class Envelope:
    """Diagonal closed-form bounds for the A, C and F blocks; arrays are (N, d)."""

    grid: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    f_lo: np.ndarray
    f_hi: np.ndarray


def _kappa_i(params: ModelParams, i: int) -> float:
    g = params.gamma[i]
    return math.sqrt(2.0 / params.lambda_max * max(params.sigma_inf, g * params.rho_i_inf(i)))


def upper_a(params: ModelParams, i: int, t: float) -> float:
    """n-free upper bound ``lambda_max kappa_i coth(kappa_i (T - t)) + gamma_i``."""
    tau = params.horizon - t
    k = _kappa_i(params, i)
    if tau <= 0.0:
        return math.inf
    if k == 0.0:
        return params.lambda_max / tau + params.gamma[i]
    return params.lambda_max * k * coth(k * tau) + params.gamma[i]


def lower_a(params: ModelParams, i: int, n: float, t: float) -> float:
    g = params.gamma[i]
    tau = params.horizon - t
    return g / (math.exp(g * tau / params.lambda_min) * (1.0 + g / (n - g)) - 1.0)


def envelope(params: ModelParams, n: float, grid: Sequence[float]) -> Envelope:
    if not n >= params.gamma_max:
        raise ValueError("envelope needs n >= gamma_max")
    grid = np.asarray(grid, dtype=float)
    d = params.d
    a_lo = np.empty((len(grid), d))
    a_hi = np.empty_like(a_lo)
    c_lo = np.empty_like(a_lo)
    for k, t in enumerate(grid):
        for i in range(d):
            a_lo[k, i] = lower_a(params, i, n, t) if n > params.gamma[i] else 0.0
            a_hi[k, i] = upper_a(params, i, t)
            c_lo[k, i] = math.exp(-params.rho_i_inf(i) * (params.horizon - t)) / params.gamma[i]
    c_hi = np.broadcast_to(1.0 / params.gamma, a_lo.shape).copy()
    return Envelope(grid, a_lo, a_hi, c_lo, c_hi, a_lo.copy(), a_hi.copy())


def decoupled_bounds(params: ModelParams, n: float, grid: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal comparison solutions ``(Q_min, Q_max)`` on ``grid``.

    Each asset gets an independent scalar triple: with ``(lambda_min, gamma_i,
    0, rho_i)`` for the lower and ``(lambda_max, gamma_i, |Sigma(t)|, rho_i)``
    for the upper solution.
    """
    grid = np.asarray(grid, dtype=float)
    d = params.d
    sig_norm = params.sigma.map(frob)
    out = []
    for lam, sig in ((params.lambda_min, Schedule.constant(0.0)), (params.lambda_max, sig_norm)):
        q = np.zeros((len(grid), 2 * d, 2 * d))
        for i in range(d):
            rho_i = params.rho.map(lambda v, i=i: v[i])
            tr = scalar_triple_solve(lam, params.gamma[i], sig, rho_i, n, grid)
            q[:, i, i] = tr.a
            q[:, i, d + i] = tr.b
            q[:, d + i, i] = tr.b
            q[:, d + i, d + i] = tr.c
        out.append(q)
    return out[0], out[1]


def _diag_margin(value: np.ndarray, lo: np.ndarray | None, hi: np.ndarray | None) -> float:
    m = math.inf
    if lo is not None:
        m = min(m, min_eig(value - np.diag(lo)))
    if hi is not None and np.all(np.isfinite(hi)):
        m = min(m, min_eig(np.diag(hi) - value))
    return m


def check_envelope(solution: RiccatiSolution, tol: float = BOUND_TOL,
                   with_decoupled: bool = True) -> BoundReport:
    """Check ``lower <= A^n, C^n, F^n <= upper`` (and ``Q_min <= Q^n <= Q_max``).

    Upper bounds that are infinite at ``t = T`` are skipped there.
    """
    params = solution.params
    env = envelope(params, solution.n, solution.grid)
    if with_decoupled:
        q_lo, q_hi = decoupled_bounds(params, solution.n, solution.grid)
    g = params.gamma_mat
    margin = np.empty(len(solution.grid))
    for k in range(len(solution.grid)):
        blk = solution.block(k)
        _, _, f = def_blocks(blk, g)
        m = min(_diag_margin(blk.a, env.a_lo[k], env.a_hi[k]),
                _diag_margin(blk.c, env.c_lo[k], env.c_hi[k]),
                _diag_margin(f, env.f_lo[k], env.f_hi[k]))
        if with_decoupled:
            q = solution.values[k]
            m = min(m, min_eig(q - q_lo[k]), min_eig(q_hi[k] - q))
        margin[k] = m
    return BoundReport("envelope", solution.grid.copy(), margin, tol, {"n": solution.n})


# ---------------------------------------------------------------------------
# finer estimate on [T0, T]

def pq_bounds(params: ModelParams, n: float, t: float) -> tuple[float, float]:
    """Return ``(q^n(t), p^n(t))``, extended by constants below ``T0``."""
    base = n0(params)
    if not n > base:
        raise ValueError(f"pq_bounds needs n > n0 = {base:g}")
    T = params.horizon
    start = t0(params)
    lmin, lmax = params.lambda_min, params.lambda_max
    if t < start:
        q = min(lower_a(params, i, base, 0.0) for i in range(params.d)) / lmax
        p = max(upper_a(params, i, start) for i in range(params.d)) / lmin
        return q, p
    root = math.sqrt(1.0 + alpha(params))
    k1 = arccoth(((n - params.gamma_min) / lmin - 1.0) / root)
    k2 = arccoth((n - params.gamma_max) / lmax + 1.0)
    tau = T - t
    p = root * coth(root * tau + k1) + 1.0
    q = coth(tau + k2) - 1.0
    return q, p


def _sqrt_inv(lam: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(lam)
    return (v / np.sqrt(w)) @ v.T


def weighted_f(solution: RiccatiSolution, k: int) -> np.ndarray:
    """``sqrt(Lambda^-1) F sqrt(Lambda^-1)`` at grid index ``k``."""
    s = _sqrt_inv(solution.params.lam)
    _, _, f = def_blocks(solution.block(k), solution.params.gamma_mat)
    out = s @ f @ s
    return 0.5 * (out + out.T)


def check_weighted_F(solution: RiccatiSolution, tol: float = BOUND_TOL) -> BoundReport:
    params = solution.params
    start = t0(params)
    idx = np.nonzero(solution.grid >= start)[0]
    margin = np.empty(len(idx))
    eye = np.eye(params.d)
    for j, k in enumerate(idx):
        q, p = pq_bounds(params, solution.n, float(solution.grid[k]))
        fh = weighted_f(solution, k)
        margin[j] = min(min_eig(fh - q * eye), min_eig(p * eye - fh))
    return BoundReport("weighted_F", solution.grid[idx].copy(), margin, tol,
                       {"n": solution.n, "T0": start})


def check_key_inequality(solution: RiccatiSolution, tol: float = BOUND_TOL) -> BoundReport:
    """Sign check of ``-2F <= [-I, g](QS + SQ)[-I; g] <= 2F`` on ``[T0, T]``."""
    params = solution.params
    d = params.d
    start = t0(params)
    idx = np.nonzero(solution.grid >= start)[0]
    j = np.hstack([-np.eye(d), params.gamma_mat])
    margin = np.empty(len(idx))
    for m, k in enumerate(idx):
        t = float(solution.grid[k])
        s = np.zeros((2 * d, 2 * d))
        s[d:, d:] = -np.diag(params.rho(t))
        q = solution.values[k]
        mid = j @ (q @ s + s @ q) @ j.T
        _, _, f = def_blocks(solution.block(k), params.gamma_mat)
        margin[m] = min(min_eig(2 * f - mid), min_eig(mid + 2 * f))
    return BoundReport("key_inequality", solution.grid[idx].copy(), margin, tol, {"T0": start})


# ---------------------------------------------------------------------------
# exponential integrals of p^n and q^n

def _integral(params: ModelParams, n: float, t: float, s: float, which: int) -> float:
    if s <= t:
        return 0.0
    start = t0(params)
    pieces = [(t, s)] if (s <= start or t >= start) else [(t, start), (start, s)]
    total = 0.0
    for a, b in pieces:
        val, _ = quad(lambda u: pq_bounds(params, n, u)[which], a, b, limit=200,
                      epsabs=1e-13, epsrel=1e-12)
        total += val
    return total


def exp_integrals(params: ModelParams, n: float, t: float, s: float) -> tuple[float, float]:
    """Quadrature values ``(exp(int_t^s p^n), exp(-int_t^s q^n))``."""
    return math.exp(_integral(params, n, t, s, 1)), math.exp(-_integral(params, n, t, s, 0))


def exp_integral_constants(params: ModelParams, t: float, n_ref: float | None = None) -> tuple[float, float]:
    """Constants ``(L_p, L_q)`` valid for every ``n >= n_ref`` and start time ``t``.

    On ``[T0, T]`` the bound uses ``p^n <= 1 + sqrt(1 + alpha) + 1/(T - u + c_n)``
    with ``c_n = lambda_min / (n - gamma_min - lambda_min (1 + sqrt(1 + alpha)))``,
    and ``q^n >= 1/(T - u + e_n) - 1`` with ``e_n = lambda_max / (n - gamma_max + lambda_max)``.
    """
    T = params.horizon
    start = t0(params)
    root = math.sqrt(1.0 + alpha(params))
    base = n0(params)
    n_ref = base if n_ref is None else n_ref
    gap = n_ref - params.gamma_min - params.lambda_min * (1.0 + root)
    if gap <= 0:
        n_ref = base + 1.0
        gap = n_ref - params.gamma_min - params.lambda_min * (1.0 + root)
    c_ref = params.lambda_min / gap
    # below T0 the p bound is the n-free constant of the extension
    p_flat = max(upper_a(params, i, start) for i in range(params.d)) / params.lambda_min if start > 0 else 0.0
    grow = math.exp((1.0 + root) * T)
    # cases s < T0, t < T0 <= s and T0 <= t < s
    l_p = max(math.exp(p_flat * start), math.exp(p_flat * start) * grow * (T - start + c_ref),
              grow * (T - t + c_ref))
    l_q = 1.0
    if t < start:
        l_q = max(l_q, math.exp(T) / (T - start))
    if t < T:
        l_q = max(l_q, math.exp(T) / (T - max(t, start)))
    return l_p, l_q


def exp_integral_bound(params: ModelParams, n: float, t: float, s: float,
                       n_ref: float | None = None) -> tuple[float, float]:
    """Upper bounds for ``exp(int_t^s p^n)`` and ``exp(-int_t^s q^n)``."""
    base = n0(params)
    if not n > base:
        raise ValueError(f"needs n > n0 = {base:g}")
    if not 0.0 <= t <= s <= params.horizon:
        raise ValueError("needs 0 <= t <= s <= T")
    T = params.horizon
    start = t0(params)
    root = math.sqrt(1.0 + alpha(params))
    l_p, l_q = exp_integral_constants(params, t, n_ref)
    if s < start:
        return l_p, l_q
    c_n = params.lambda_min / (n - params.gamma_min - params.lambda_min * (1.0 + root))
    e_n = params.lambda_max / (n - params.gamma_max + params.lambda_max)
    return l_p / (T - s + c_n), l_q * (T - s + e_n)


# ---------------------------------------------------------------------------
# E-decay

def e_decay_constant(solution: RiccatiSolution) -> float:
    """Empirical ``sup_s |E^n(s)| / (T - s + eps)``, eps = the last grid step."""
    grid = solution.grid
    eps = float(grid[-1] - grid[-2])
    g = solution.params.gamma_mat
    best = 0.0
    for k, t in enumerate(grid):
        _, e, _ = def_blocks(solution.block(k), g)
        best = max(best, frob(e) / (solution.params.horizon - t + eps))
    return best


def nonincreasing_with_slack(values: Sequence[float], slack: float = 0.1) -> bool:
    return all(b <= (1.0 + slack) * a for a, b in zip(values, values[1:]))


__all__ = [
    "alpha", "beta", "n0", "t0", "arccoth", "ScalarTriple", "scalar_triple_solve",
    "scalar_priori_bounds", "BoundReport", "Envelope", "envelope", "decoupled_bounds",
    "check_envelope", "pq_bounds", "weighted_f", "check_weighted_F", "check_key_inequality",
    "exp_integrals", "exp_integral_constants", "exp_integral_bound", "e_decay_constant",
    "nonincreasing_with_slack", "upper_a", "lower_a",
]
