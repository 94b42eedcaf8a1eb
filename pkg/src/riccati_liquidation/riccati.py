"""Backward integration of the transformed matrix Riccati equation.

For a penalization level ``n`` the 2d x 2d matrix ``Q`` solves, in forward time,

    dQ/dt = Q R Q - Q S(t) - S(t) Q - Gamma(t),
    Q(T)  = [[n I, I], [I, gamma^-1]],

with ``R = [-I; gamma] Lambda^-1 [-I, gamma]``, ``S = diag(0, -rho)`` and
``Gamma = diag(Sigma, gamma^-1 rho + rho gamma^-1)``. Letting ``n`` grow gives
the singular-terminal solution on ``[0, T)``.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from ._ode import IntegrationError, integrate_sym_backward
from .model import BlockSym, ModelParams, frob, min_eig, opnorm

log = logging.getLogger(__name__)

SYM_RTOL = 1e-10
PSD_RTOL = 1e-8
MONO_RTOL = 1e-7


class PSDViolation(RuntimeError):
    def __init__(self, min_eig: float, t: float):
        super().__init__(f"solution left the PSD cone: min eigenvalue {min_eig:.3e} at t={t:.6g}")
        self.min_eig = min_eig
        self.t = t


class PreconditionError(ValueError):
    pass


class LadderWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Time grid with geometric clustering toward ``t_end``.

    ``refinement`` is the ratio between the first and the last step; 1 gives
    a uniform grid.
    """

    t_start: float
    t_end: float
    base_steps: int = 2000
    refinement: float = 8.0

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("grid needs t_start < t_end")
        if self.base_steps < 1:
            raise ValueError("base_steps must be positive")
        if self.refinement < 1:
            raise ValueError("refinement must be >= 1")

    def points(self, extra: Sequence[float] = ()) -> np.ndarray:
        n = self.base_steps
        length = self.t_end - self.t_start
        if n == 1 or self.refinement == 1.0:
            pts = np.linspace(self.t_start, self.t_end, n + 1)
        else:
            ratio = self.refinement ** (-1.0 / (n - 1))
            steps = ratio ** np.arange(n)
            steps *= length / steps.sum()
            pts = self.t_start + np.concatenate([[0.0], np.cumsum(steps)])
            pts[-1] = self.t_end
        extra = [float(e) for e in extra if self.t_start < e < self.t_end]
        if extra:
            pts = np.union1d(pts, extra)
        # drop nodes closer than a few ulps; keep the endpoints exact
        keep = np.concatenate([[True], np.diff(pts) > 1e-13 * max(1.0, abs(self.t_end))])
        pts = pts[keep]
        pts[-1] = self.t_end
        return pts

    def halved(self) -> "GridSpec":
        return GridSpec(self.t_start, self.t_end, 2 * self.base_steps, self.refinement)


def default_grid(params: ModelParams, base_steps: int = 2000, refinement: float = 8.0) -> GridSpec:
    return GridSpec(0.0, params.horizon, base_steps, refinement)


def boundary_layer_nodes(params: ModelParams, n: float, grid: "GridSpec") -> list[float]:
    """Extra nodes ``T - c 2^(j/2)`` resolving the terminal layer of width ``c ~ lambda_min / n``.

    Only added where the base grid is coarser than the layer.
    """
    c = params.lambda_min / max(n - params.gamma_min, 1.0)
    pts = grid.points()
    last = float(pts[-1] - pts[-2])
    out = []
    j = -4
    while c * 2.0 ** (j / 2) < 4.0 * last:
        t = grid.t_end - c * 2.0 ** (j / 2)
        if t > grid.t_start:
            out.append(t)
        j += 1
    return out


def coefficients(params: ModelParams, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(R, S, Gamma)`` at time ``t``."""
    d = params.d
    eye = np.eye(d)
    g = params.gamma_mat
    rho = np.diag(params.rho(t))
    j = np.hstack([-eye, g])  # [-I, gamma]
    r = j.T @ params.lam_inv @ j
    s = np.zeros((2 * d, 2 * d))
    s[d:, d:] = -rho
    gam = np.zeros((2 * d, 2 * d))
    gam[:d, :d] = params.sigma(t)
    gam[d:, d:] = params.gamma_inv @ rho + rho @ params.gamma_inv
    return r, s, gam


def _field(r, s, gam):
    def f(q):
        return q @ r @ q - q @ s - s @ q - gam
    return f


def rhs(t: float, q: BlockSym, params: ModelParams) -> BlockSym:
    """Forward-time drift ``dQ/dt`` of the transformed Riccati equation."""
    m = q.matrix()
    if m.shape != (2 * params.d, 2 * params.d):
        raise ValueError(f"block size {q.d} does not match d={params.d}")
    out = _field(*coefficients(params, t))(m)
    return BlockSym.from_matrix(0.5 * (out + out.T))


def terminal_condition(n: float, params: ModelParams) -> BlockSym:
    if n < params.gamma_max:
        raise PreconditionError(
            f"terminal value is PSD only for n >= gamma_max = {params.gamma_max:g}; got n={n:g}")
    d = params.d
    return BlockSym(n * np.eye(d), np.eye(d), params.gamma_inv.copy())


@dataclass(frozen=True)
class RiccatiSolution:
    """Values of ``Q^n`` on a time grid.

    ``values[i]`` is the assembled 2d x 2d matrix at ``grid[i]``. For a limit
    solution ``limit`` is true and ``n`` is the ladder rung that was returned.
    """

    params: ModelParams
    n: float
    grid: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    limit: bool = False

    def block(self, i: int) -> BlockSym:
        return BlockSym.from_matrix(self.values[i])

    @property
    def t_start(self) -> float:
        return float(self.grid[0])

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    @cached_property
    def _slopes(self) -> tuple[np.ndarray, np.ndarray]:
        # one-sided derivatives per interval, coefficients frozen at its midpoint
        g = self.grid
        left = np.empty((len(g) - 1,) + self.values.shape[1:])
        right = np.empty_like(left)
        cache: dict = {}
        for i in range(len(g) - 1):
            tm = 0.5 * (g[i] + g[i + 1])
            key = (tuple(self.params.rho(tm)), self.params.sigma(tm).tobytes())
            if key not in cache:
                cache[key] = _field(*coefficients(self.params, tm))
            f = cache[key]
            left[i] = f(self.values[i])
            right[i] = f(self.values[i + 1])
        return left, right

    def eval_matrix(self, t: float) -> np.ndarray:
        g = self.grid
        if t < g[0] or t > g[-1]:
            raise ValueError(f"t={t} outside solution range [{g[0]}, {g[-1]}]")
        i = int(np.searchsorted(g, t, side="right")) - 1
        if i >= len(g) - 1:
            return self.values[-1].copy()
        if t == g[i]:
            return self.values[i].copy()
        h = g[i + 1] - g[i]
        s = (t - g[i]) / h
        left, right = self._slopes
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        m = h00 * self.values[i] + h10 * h * left[i] + h01 * self.values[i + 1] + h11 * h * right[i]
        return 0.5 * (m + m.T)

    def restrict(self, t_max: float) -> "RiccatiSolution":
        """Copy restricted to ``[t_start, t_max]``, adding ``t_max`` as a node."""
        mask = self.grid < t_max
        grid = np.concatenate([self.grid[mask], [t_max]])
        vals = np.concatenate([self.values[mask], [self.eval_matrix(t_max)]])
        return RiccatiSolution(self.params, self.n, grid, vals, dict(self.diagnostics), self.limit)

    def columns(self) -> list[str]:
        return column_names(self.params.d)

    def rows(self) -> np.ndarray:
        iu = np.triu_indices(2 * self.params.d)
        return np.column_stack([self.grid, self.values[:, iu[0], iu[1]]])

    def to_csv(self, path) -> str:
        """Write the columnar file; returns its sha256 digest."""
        return write_csv(path, self.columns(), self.rows())


def column_names(d: int) -> list[str]:
    names = ["t"]
    for i, j in zip(*np.triu_indices(2 * d)):
        if i < d and j < d:
            names.append(f"A_{i + 1}{j + 1}")
        elif i < d:
            names.append(f"B_{i + 1}{j - d + 1}")
        else:
            names.append(f"C_{i - d + 1}{j - d + 1}")
    return names


def fmt(v: float) -> str:
    return f"{v:.12g}"


def write_csv(path, header: Sequence[str], rows: np.ndarray) -> str:
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


class SolutionFileError(ValueError):
    pass


def read_solution_csv(path, params: ModelParams, n: float, sha256: str | None = None) -> RiccatiSolution:
    """Load a solution file written by :meth:`RiccatiSolution.to_csv`.

    Raises ``SolutionFileError`` on a checksum mismatch, a wrong header or a
    ragged / non-numeric body.
    """
    path = Path(path)
    raw = path.read_bytes()
    if sha256 is not None and hashlib.sha256(raw).hexdigest() != sha256:
        raise SolutionFileError(f"{path}: checksum mismatch")
    rows = list(csv.reader(raw.decode(errors="replace").splitlines()))
    expected = column_names(params.d)
    if not rows or rows[0] != expected:
        raise SolutionFileError(f"{path}: header does not match d={params.d}")
    body = rows[1:]
    if not body or any(len(r) != len(expected) for r in body):
        raise SolutionFileError(f"{path}: expected {len(expected)} columns on every row")
    try:
        data = np.array(body, dtype=float)
    except ValueError as exc:
        raise SolutionFileError(f"{path}: non-numeric entry") from exc
    if not np.all(np.isfinite(data)) or np.any(np.diff(data[:, 0]) <= 0):
        raise SolutionFileError(f"{path}: non-finite values or non-increasing time column")
    size = 2 * params.d
    iu = np.triu_indices(size)
    vals = np.zeros((len(data), size, size))
    vals[:, iu[0], iu[1]] = data[:, 1:]
    vals = vals + np.transpose(vals, (0, 2, 1)) - vals * np.eye(size)
    return RiccatiSolution(params, n, data[:, 0], vals, {"source": str(path)})


def _check_solution(grid, values):
    sym = 0.0
    worst = (math.inf, None)
    for t, m in zip(grid, values):
        sym = max(sym, float(np.max(np.abs(m - m.T))) / (1.0 + frob(m)))
        lam = min_eig(m)
        scaled = lam / (1.0 + frob(m))
        if scaled < worst[0]:
            worst = (scaled, (lam, float(t)))
    return sym, worst


def solve_penalized(
    params: ModelParams,
    n: float,
    grid: GridSpec | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> RiccatiSolution:
    """Integrate ``Q^n`` backward from ``T`` on ``grid``.

    Requires ``n >= gamma_max`` so the terminal value is PSD; the a priori
    bounds additionally assume ``n > n0`` (see :func:`bounds.n0`).
    """
    grid = grid or default_grid(params)
    if abs(grid.t_end - params.horizon) > 1e-14 * max(1.0, params.horizon):
        raise PreconditionError("penalized solves must end at the horizon T")
    term = terminal_condition(n, params).matrix()
    pts = grid.points(params.breakpoints(grid.t_start, grid.t_end) + boundary_layer_nodes(params, n, grid))

    def make(tm):
        return _field(*coefficients(params, tm))

    values, nfev = integrate_sym_backward(make, term, pts, params.breakpoints(grid.t_start, grid.t_end),
                                          rtol=rtol, atol=atol)
    sym, (scaled, info) = _check_solution(pts, values)
    lam, t_worst = info
    if scaled < -PSD_RTOL:
        raise PSDViolation(lam, t_worst)
    diag = {"max_symmetry_defect": sym, "min_eigenvalue": lam, "min_eigenvalue_t": t_worst,
            "rhs_evaluations": nfev, "grid_points": len(pts)}
    return RiccatiSolution(params, float(n), pts, values, diag)


def default_ladder(params: ModelParams, k_max: int = 12) -> list[float]:
    from .bounds import n0

    base = n0(params)
    return [base * 2.0**k for k in range(1, k_max + 1)]


def psd_gap(upper: np.ndarray, lower: np.ndarray) -> float:
    """Smallest eigenvalue of ``upper - lower``."""
    return min_eig(upper - lower)


def solve_limit(
    params: ModelParams,
    t_max: float,
    n_ladder: Sequence[float] | None = None,
    tol: float = 1e-4,
    grid: GridSpec | None = None,
    n_samples: int = 50,
    rtol: float = 1e-10,
) -> RiccatiSolution:
    """Climb a penalization ladder until ``Q^n`` settles on ``[0, t_max]``.

    Stops at the first rung whose sup-distance (Frobenius) to the previous
    rung on ``[0, t_max]`` is below ``tol``. If the ladder runs out the last
    rung is returned with ``diagnostics["converged"] = False`` and a
    :class:`LadderWarning`. PSD monotonicity between consecutive rungs is
    checked at ``n_samples`` points and a violation raises ``ValueError``.
    """
    if not t_max < params.horizon:
        raise PreconditionError("t_max must be strictly below T")
    from .bounds import n0

    ladder = list(n_ladder) if n_ladder is not None else default_ladder(params)
    if sorted(ladder) != ladder or len(set(ladder)) != len(ladder):
        raise PreconditionError("ladder must be strictly increasing")
    base = n0(params)
    if ladder[0] <= base:
        raise PreconditionError(f"every ladder entry must exceed n0 = {base:g}")
    grid = grid or default_grid(params)
    samples = np.linspace(grid.t_start, t_max, n_samples)
    base_nodes = grid.points(params.breakpoints(grid.t_start, grid.t_end))
    base_nodes = base_nodes[base_nodes <= t_max]
    history: list[dict] = []
    prev = None
    chosen = None
    converged = False
    worst_mono = math.inf
    for n in ladder:
        sol = solve_penalized(params, n, grid, rtol=rtol)
        entry: dict = {"n": n}
        if prev is not None:
            # rung grids differ only by boundary-layer nodes; compare on the shared base nodes
            dist = max(frob(sol.eval_matrix(t) - prev.eval_matrix(t)) for t in base_nodes)
            dist = max(dist, frob(sol.eval_matrix(t_max) - prev.eval_matrix(t_max)))
            mono = math.inf
            for t in samples:
                hi, lo = sol.eval_matrix(t), prev.eval_matrix(t)
                mono = min(mono, psd_gap(hi, lo) / (1.0 + frob(hi)))
            worst_mono = min(worst_mono, mono)
            entry.update(sup_diff=dist, monotonicity_margin=mono)
            if mono < -MONO_RTOL:
                raise ValueError(f"ladder lost PSD monotonicity between n={prev.n:g} and n={n:g}: {mono:.3e}")
            history.append(entry)
            log.debug("ladder rung n=%g sup_diff=%.3e", n, dist)
            if dist < tol:
                chosen, converged = sol, True
                break
        else:
            history.append(entry)
        prev = sol
    if chosen is None:
        chosen = prev
        warnings.warn(f"penalization ladder exhausted before reaching tol={tol:g}", LadderWarning)
    out = chosen.restrict(t_max)
    diag = dict(chosen.diagnostics)
    diag.update(history=history, converged=converged, monotonicity_margin=worst_mono,
                t_max=t_max, tol=tol)
    return RiccatiSolution(params, chosen.n, out.grid, out.values, diag, limit=True)


def operator_norm_at_terminal(n: float, params: ModelParams) -> float:
    return opnorm(terminal_condition(n, params).matrix())


def eval(solution: RiccatiSolution, t: float) -> BlockSym:  # noqa: A001 - public name by design
    """Dense output of a solution at ``t`` (cubic Hermite, exact at nodes)."""
    return BlockSym.from_matrix(solution.eval_matrix(t))


__all__ = [
    "GridSpec", "RiccatiSolution", "IntegrationError", "PSDViolation", "PreconditionError",
    "LadderWarning", "coefficients", "rhs", "terminal_condition", "solve_penalized",
    "solve_limit", "eval", "default_grid", "default_ladder", "read_solution_csv",
    "SolutionFileError", "write_csv", "column_names",
]
