"""Segmented adaptive integration helpers shared by the solvers.

Coefficients are piecewise constant, so each integration runs segment by
segment between schedule breakpoints with the coefficients frozen at the
segment midpoint.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

METHOD = "RK45"


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


def sym_pack(m: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(m.shape[0])
    return m[iu]


def sym_unpack(v: np.ndarray, size: int) -> np.ndarray:
    m = np.zeros((size, size))
    m[np.triu_indices(size)] = v
    return m + m.T - np.diag(np.diag(m))


def segments(grid: np.ndarray, breakpoints) -> list[tuple[int, int]]:
    """Index ranges ``[i0, i1]`` of ``grid`` split at breakpoints (which must be grid nodes)."""
    cuts = [0]
    for b in breakpoints:
        k = int(np.searchsorted(grid, b))
        if k < len(grid) and grid[k] == b and 0 < k < len(grid) - 1:
            cuts.append(k)
    cuts.append(len(grid) - 1)
    cuts = sorted(set(cuts))
    return [(cuts[j], cuts[j + 1]) for j in range(len(cuts) - 1)]


def integrate_sym_backward(
    make_rhs: Callable[[float], Callable[[np.ndarray], np.ndarray]],
    terminal: np.ndarray,
    grid: np.ndarray,
    breakpoints,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> tuple[np.ndarray, int]:
    """Integrate ``dK/dt = f(K)`` backward from ``K(grid[-1]) = terminal``.

    ``make_rhs(t_mid)`` returns the matrix field valid on the segment
    containing ``t_mid``. The state is the upper triangle of ``K`` so the
    result is symmetric by construction. Returns values on ``grid`` and the
    number of right-hand-side evaluations.
    """
    size = terminal.shape[0]
    out = np.empty((len(grid), size, size))
    out[-1] = 0.5 * (terminal + terminal.T)
    state = sym_pack(out[-1])
    nfev = 0
    for i0, i1 in reversed(segments(grid, breakpoints)):
        field = make_rhs(0.5 * (grid[i0] + grid[i1]))

        def f(_t, v, field=field):
            return sym_pack(field(sym_unpack(v, size)))

        t_eval = grid[i0:i1 + 1][::-1]
        sol = solve_ivp(f, (grid[i1], grid[i0]), state, method=METHOD, t_eval=t_eval,
                        rtol=rtol, atol=atol)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if len(sol.t) else float(grid[i1])
            raise IntegrationError(f"integration failed: {sol.message}", t_fail)
        vals = sol.y.T[::-1]
        for j, v in enumerate(vals):
            out[i0 + j] = sym_unpack(v, size)
        state = sol.y[:, -1]
        nfev += sol.nfev
    out[-1] = 0.5 * (terminal + terminal.T)
    return out, nfev


def integrate_forward(
    make_rhs: Callable[[float], Callable[[float, np.ndarray], np.ndarray]],
    y0: np.ndarray,
    grid: np.ndarray,
    breakpoints,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> np.ndarray:
    """Integrate a vector ODE forward across segments, sampling on ``grid``."""
    out = np.empty((len(grid), len(y0)))
    out[0] = y0
    state = np.asarray(y0, dtype=float)
    for i0, i1 in segments(grid, breakpoints):
        fn = make_rhs(0.5 * (grid[i0] + grid[i1]))
        sol = solve_ivp(fn, (grid[i0], grid[i1]), state, method=METHOD,
                        t_eval=grid[i0:i1 + 1], rtol=rtol, atol=atol)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if len(sol.t) else float(grid[i0])
            raise IntegrationError(f"integration failed: {sol.message}", t_fail)
        out[i0:i1 + 1] = sol.y.T
        state = sol.y[:, -1]
    return out


def integrate_backward(
    make_rhs: Callable[[float], Callable[[float, np.ndarray], np.ndarray]],
    y_end: np.ndarray,
    grid: np.ndarray,
    breakpoints,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> np.ndarray:
    """Vector counterpart of :func:`integrate_sym_backward`."""
    out = np.empty((len(grid), len(y_end)))
    out[-1] = y_end
    state = np.asarray(y_end, dtype=float)
    for i0, i1 in reversed(segments(grid, breakpoints)):
        fn = make_rhs(0.5 * (grid[i0] + grid[i1]))
        sol = solve_ivp(fn, (grid[i1], grid[i0]), state, method=METHOD,
                        t_eval=grid[i0:i1 + 1][::-1], rtol=rtol, atol=atol)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if len(sol.t) else float(grid[i1])
            raise IntegrationError(f"integration failed: {sol.message}", t_fail)
        out[i0:i1 + 1] = sol.y.T[::-1]
        state = sol.y[:, -1]
    out[-1] = y_end
    return out
