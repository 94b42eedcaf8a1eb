"""Comparison principle for matrix Riccati equations with deterministic coefficients.

An instance is ``dK/dt = K H K - G^T K - K G - I(t)``, ``K(T) = S``. If
``S1 <= S2``, ``0 <= H2 <= H1`` and ``I1 <= I2`` then ``K1 <= K2`` on ``[0, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._ode import integrate_sym_backward
from .model import ModelParams, Schedule, min_eig
from .riccati import coefficients, terminal_condition


@dataclass(frozen=True)
class GeneralRiccatiInstance:
    G: Schedule
    H: Schedule
    I_src: Schedule
    S: np.ndarray
    horizon: float

    @property
    def d(self) -> int:
        return self.S.shape[0]

    def breakpoints(self, t_start: float = 0.0) -> list[float]:
        pts = set()
        for sched in (self.G, self.H, self.I_src):
            pts.update(sched.breakpoints(t_start, self.horizon))
        return sorted(pts)

    def check_points(self, grid) -> np.ndarray:
        starts = np.concatenate([self.G.starts, self.H.starts, self.I_src.starts])
        return np.union1d(np.asarray(grid, dtype=float), starts[starts <= self.horizon])


def _make_field(inst: GeneralRiccatiInstance) -> Callable[[float], Callable]:
    def make(tm):
        g, h, i = inst.G(tm), inst.H(tm), inst.I_src(tm)

        def f(k):
            return k @ h @ k - g.T @ k - k @ g - i
        return f
    return make


def solve_general(inst: GeneralRiccatiInstance, grid, rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Values of ``K`` on ``grid`` (increasing, ending at the horizon), shape (N, d, d)."""
    grid = np.asarray(grid, dtype=float)
    if abs(grid[-1] - inst.horizon) > 1e-14 * max(1.0, inst.horizon):
        raise ValueError("grid must end at the instance horizon")
    bps = inst.breakpoints(grid[0])
    grid = np.union1d(grid, bps)
    values, _ = integrate_sym_backward(_make_field(inst), np.asarray(inst.S, dtype=float), grid,
                                       bps, rtol=rtol, atol=atol)
    return values


@dataclass
class ComparisonReport:
    applicable: bool
    hypothesis_violations: list[str]
    grid: np.ndarray = field(default_factory=lambda: np.empty(0))
    margin: np.ndarray = field(default_factory=lambda: np.empty(0))
    tol: float = 1e-8

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margin)) if len(self.margin) else float("inf")

    @property
    def verdict(self) -> str:
        if not self.applicable:
            return "inapplicable"
        return "pass" if self.worst_margin >= -self.tol else "fail"

    def summary(self) -> dict:
        return {"bound": "comparison", "verdict": self.verdict,
                "worst_margin": self.worst_margin,
                "worst_t": float(self.grid[np.argmin(self.margin)]) if len(self.margin) else None,
                "hypothesis_violations": self.hypothesis_violations}


def check_hypotheses(inst1: GeneralRiccatiInstance, inst2: GeneralRiccatiInstance, grid,
                     tol: float = 1e-12) -> list[str]:
    """Ordering hypotheses checked at breakpoints and grid points."""
    out = []
    if inst1.horizon != inst2.horizon:
        out.append("instances have different horizons")
        return out
    if min_eig(inst2.S - inst1.S) < -tol:
        out.append("S1 <= S2 fails")
    pts = np.union1d(inst1.check_points(grid), inst2.check_points(grid))
    for t in pts:
        if np.max(np.abs(inst1.G(t) - inst2.G(t))) > tol:
            out.append(f"G differs at t={t:g}")
            break
    for t in pts:
        if min_eig(inst2.H(t)) < -tol:
            out.append(f"H2 not PSD at t={t:g}")
            break
    for t in pts:
        if min_eig(inst1.H(t) - inst2.H(t)) < -tol:
            out.append(f"H2 <= H1 fails at t={t:g}")
            break
    for t in pts:
        if min_eig(inst2.I_src(t) - inst1.I_src(t)) < -tol:
            out.append(f"I1 <= I2 fails at t={t:g}")
            break
    return out


def check_comparison(inst1: GeneralRiccatiInstance, inst2: GeneralRiccatiInstance, grid,
                     tol: float = 1e-8) -> ComparisonReport:
    grid = np.asarray(grid, dtype=float)
    bad = check_hypotheses(inst1, inst2, grid)
    if bad:
        return ComparisonReport(False, bad, tol=tol)
    pts = np.union1d(grid, inst1.breakpoints(grid[0]) + inst2.breakpoints(grid[0]))
    k1 = solve_general(inst1, pts)
    k2 = solve_general(inst2, pts)
    margin = np.array([min_eig(b - a) for a, b in zip(k1, k2)])
    return ComparisonReport(True, [], pts, margin, tol)


def _psd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    m = rng.standard_normal((d, d)) * scale
    return m.T @ m


def random_ordered_pair(seed: int, d: int, horizon: float = 1.0, pieces: int = 2
                        ) -> tuple[GeneralRiccatiInstance, GeneralRiccatiInstance]:
    """Deterministic random pair satisfying the comparison hypotheses."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    starts = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 0.9, pieces - 1)) * horizon])
    g = Schedule(starts, [rng.standard_normal((d, d)) * 0.5 for _ in starts])
    h2 = [_psd(rng, d, 0.5) for _ in starts]
    h1 = [h + _psd(rng, d, 0.5) for h in h2]
    i1 = [_psd(rng, d) for _ in starts]
    i2 = [i + _psd(rng, d, 0.5) for i in i1]
    s1 = _psd(rng, d)
    s2 = s1 + _psd(rng, d, 0.5)
    inst1 = GeneralRiccatiInstance(g, Schedule(starts, h1), Schedule(starts, i1), s1, horizon)
    inst2 = GeneralRiccatiInstance(g, Schedule(starts, h2), Schedule(starts, i2), s2, horizon)
    return inst1, inst2


def riccati_instance(params: ModelParams, n: float) -> GeneralRiccatiInstance:
    """The transformed liquidation Riccati equation written as a general instance."""
    starts = np.union1d(params.rho.starts, params.sigma.starts)
    mats = [coefficients(params, float(s)) for s in starts]
    return GeneralRiccatiInstance(
        G=Schedule(starts, [m[1] for m in mats]),
        H=Schedule(starts, [m[0] for m in mats]),
        I_src=Schedule(starts, [m[2] for m in mats]),
        S=terminal_condition(n, params).matrix(),
        horizon=params.horizon,
    )


def envelope_instances(params: ModelParams, n: float) -> tuple[GeneralRiccatiInstance, GeneralRiccatiInstance]:
    """Instances whose solutions sandwich the liquidation equation.

    The lower one replaces ``Lambda`` by ``lambda_min I`` and drops ``Sigma``;
    the upper one uses ``lambda_max I`` and ``|Sigma(t)| I``.
    """
    true = riccati_instance(params, n)
    d = params.d
    eye = np.eye(d)
    out = []
    for lam, sig in ((params.lambda_min, lambda s: 0.0 * s),
                     (params.lambda_max, lambda s: np.sqrt(np.sum(s**2)) * eye)):
        p = params.replace(lam=lam * eye, sigma=params.sigma.map(sig))
        inst = riccati_instance(p, n)
        out.append(GeneralRiccatiInstance(true.G, inst.H, inst.I_src, inst.S, params.horizon))
    return out[0], out[1]


__all__ = [
    "GeneralRiccatiInstance", "solve_general", "ComparisonReport", "check_hypotheses",
    "check_comparison", "random_ordered_pair", "riccati_instance", "envelope_instances",
]
