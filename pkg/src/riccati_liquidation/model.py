"""Model parameters, piecewise-constant schedules and 2d x 2d block algebra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

PSD_RTOL = 1e-10


def frob(m: np.ndarray) -> float:
    """Frobenius norm ``sqrt(sum m_ij^2)``."""
    return float(np.sqrt(np.sum(np.asarray(m, dtype=float) ** 2)))


def opnorm(m: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix (the induced 2-norm for PSD input)."""
    m = np.asarray(m, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[-1])


def min_eig(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def psd_tol(m: np.ndarray) -> float:
    return PSD_RTOL * (1.0 + frob(m))


class Schedule:
    """Piecewise-constant, right-continuous function of time.

    ``starts[k]`` is the left end of piece ``k``; the first start must be 0.
    The last piece extends to the horizon (inclusive).
    """

    def __init__(self, starts: Sequence[float], values: Sequence[Any]):
        starts = np.asarray(starts, dtype=float)
        vals = np.asarray(values, dtype=float)
        if starts.ndim != 1 or len(starts) == 0:
            raise ValueError("schedule needs at least one piece")
        if len(vals) != len(starts):
            raise ValueError("schedule starts and values differ in length")
        if np.any(np.diff(starts) <= 0):
            raise ValueError("schedule starts must be strictly increasing")
        self.starts = starts
        self.values = vals
        self.starts.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def constant(cls, value) -> "Schedule":
        return cls([0.0], [value])

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.values[max(k, 0)]

    def breakpoints(self, t_start: float, t_end: float) -> list[float]:
        """Interior jump times strictly inside ``(t_start, t_end)``."""
        return [float(s) for s in self.starts[1:] if t_start < s < t_end]

    def map(self, fn) -> "Schedule":
        return Schedule(self.starts, [fn(v) for v in self.values])

    def __repr__(self) -> str:
        return f"Schedule(starts={self.starts.tolist()}, values={self.values.tolist()})"


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the liquidation problem.

    ``lam`` is the instantaneous impact matrix, ``gamma`` the diagonal of the
    persistent impact matrix, ``rho`` a schedule of resilience diagonals
    (length-d vectors) and ``sigma`` a schedule of d x d risk matrices.
    """

    d: int
    lam: np.ndarray
    gamma: np.ndarray
    rho: Schedule
    sigma: Schedule
    horizon: float

    @classmethod
    def constant(cls, lam, gamma, rho, sigma, horizon: float = 1.0) -> "ModelParams":
        """Build constant-coefficient parameters; scalars are accepted for d = 1."""
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        d = lam.shape[0]
        gamma = np.asarray(gamma, dtype=float).reshape(-1)
        if gamma.size == 1 and d > 1:
            gamma = np.full(d, float(gamma[0]))
        rho = np.asarray(rho, dtype=float)
        if rho.ndim == 2:
            rho = np.diag(rho).copy()
        rho = rho.reshape(-1)
        if rho.size == 1 and d > 1:
            rho = np.full(d, float(rho[0]))
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim < 2:
            sigma = np.diag(np.broadcast_to(sigma.reshape(-1), (d,)).astype(float))
        return cls(d, lam, gamma, Schedule.constant(rho), Schedule.constant(sigma), float(horizon))

    # derived scalars
    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.lam)[0])

    @property
    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.lam)[-1])

    @property
    def gamma_min(self) -> float:
        return float(np.min(self.gamma))

    @property
    def gamma_max(self) -> float:
        return float(np.max(self.gamma))

    @property
    def rho_inf(self) -> float:
        # rho is diagonal, so the operator norm is the largest entry
        return float(np.max(np.abs(self.rho.values)))

    def rho_i_inf(self, i: int) -> float:
        return float(np.max(np.abs(self.rho.values[:, i])))

    @property
    def sigma_inf(self) -> float:
        return max(frob(v) for v in self.sigma.values)

    @property
    def gamma_mat(self) -> np.ndarray:
        return np.diag(self.gamma)

    @property
    def gamma_inv(self) -> np.ndarray:
        return np.diag(1.0 / self.gamma)

    @property
    def lam_inv(self) -> np.ndarray:
        return np.linalg.inv(self.lam)

    def breakpoints(self, t_start: float = 0.0, t_end: float | None = None) -> list[float]:
        t_end = self.horizon if t_end is None else t_end
        pts = set(self.rho.breakpoints(t_start, t_end)) | set(self.sigma.breakpoints(t_start, t_end))
        return sorted(pts)

    def replace(self, **changes) -> "ModelParams":
        kw = dict(d=self.d, lam=self.lam, gamma=self.gamma, rho=self.rho,
                  sigma=self.sigma, horizon=self.horizon)
        kw.update(changes)
        return ModelParams(**kw)

    def permute(self, perm: Sequence[int]) -> "ModelParams":
        """Relabel assets: new asset i is old asset ``perm[i]``."""
        p = np.asarray(perm)
        return self.replace(
            lam=self.lam[np.ix_(p, p)],
            gamma=self.gamma[p],
            rho=self.rho.map(lambda v: v[p]),
            sigma=self.sigma.map(lambda v: v[np.ix_(p, p)]),
        )

    # serialization
    def to_config(self) -> dict:
        return {
            "d": self.d,
            "lambda": self.lam.tolist(),
            "gamma": self.gamma.tolist(),
            "rho": [{"t_start": float(s), "value": v.tolist()}
                    for s, v in zip(self.rho.starts, self.rho.values)],
            "sigma": [{"t_start": float(s), "value": v.tolist()}
                      for s, v in zip(self.sigma.starts, self.sigma.values)],
            "T": self.horizon,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelParams":
        """Parse a config tree. Raises ``ConfigError`` on structural problems."""
        try:
            d = int(cfg["d"])
            lam = np.asarray(cfg["lambda"], dtype=float).reshape(d, d)
            gamma = np.asarray(cfg["gamma"], dtype=float).reshape(d)
            horizon = float(cfg["T"])
            rho = _parse_schedule(cfg["rho"], d, diagonal=True)
            sigma = _parse_schedule(cfg["sigma"], d, diagonal=False)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError([f"malformed config: {exc!r}"]) from exc
        return cls(d, lam, gamma, rho, sigma, horizon)


def _parse_schedule(pieces, d: int, diagonal: bool) -> Schedule:
    if not (isinstance(pieces, list) and pieces and all(isinstance(p, dict) for p in pieces)):
        pieces = [{"t_start": 0.0, "value": pieces}]
    starts, values = [], []
    for piece in pieces:
        v = np.asarray(piece["value"], dtype=float)
        if diagonal:
            if v.ndim == 2:
                if np.any(np.abs(v - np.diag(np.diag(v))) > 0):
                    raise ValueError("rho must be diagonal")
                v = np.diag(v)
            v = np.broadcast_to(v.reshape(-1), (d,)).copy()
        else:
            v = v.reshape(d, d)
        starts.append(float(piece["t_start"]))
        values.append(v)
    return Schedule(starts, values)


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def validate(params: ModelParams) -> list[str]:
    """Return every violated invariant of ``params`` (empty when valid)."""
    out: list[str] = []
    d = params.d
    if d < 1:
        return ["d: not a positive integer"]
    lam = np.asarray(params.lam, dtype=float)
    if lam.shape != (d, d):
        out.append(f"lambda: shape {lam.shape} != ({d}, {d})")
    else:
        if np.max(np.abs(lam - lam.T)) > psd_tol(lam):
            out.append("lambda: not symmetric")
        if np.linalg.eigvalsh(0.5 * (lam + lam.T))[0] <= 0:
            out.append("lambda not positive definite")
    gamma = np.asarray(params.gamma, dtype=float)
    if gamma.shape != (d,):
        out.append(f"gamma: shape {gamma.shape} != ({d},)")
    elif np.any(gamma <= 0):
        out.append("gamma entry not > 0")
    if not params.horizon > 0:
        out.append("T: horizon not > 0")
    for name, sched in (("rho", params.rho), ("sigma", params.sigma)):
        if sched.starts[0] != 0.0:
            out.append(f"{name}: schedule does not start at t=0")
        if sched.starts[-1] >= params.horizon:
            out.append(f"{name}: breakpoint at or beyond T")
    for k, v in enumerate(params.rho.values):
        if v.shape != (d,):
            out.append(f"rho[{k}]: shape {v.shape} != ({d},)")
        elif np.any(v < 0):
            out.append(f"rho[{k}]: entry < 0")
    for k, v in enumerate(params.sigma.values):
        if v.shape != (d, d):
            out.append(f"sigma[{k}]: shape {v.shape} != ({d}, {d})")
            continue
        tol = psd_tol(v)
        if np.max(np.abs(v - v.T)) > tol:
            out.append(f"sigma[{k}]: not symmetric")
        elif min_eig(v) < -tol:
            out.append(f"sigma[{k}]: not positive semidefinite")
    for name, sched in (("rho", params.rho), ("sigma", params.sigma)):
        if not np.all(np.isfinite(sched.values)):
            out.append(f"{name}: non-finite value")
    return out


@dataclass(frozen=True)
class BlockSym:
    """Symmetric 2d x 2d matrix ``[[A, B], [B^T, C]]``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def d(self) -> int:
        return self.a.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.a, self.b], [self.b.T, self.c]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "BlockSym":
        m = np.asarray(m, dtype=float)
        d = m.shape[0] // 2
        if m.shape != (2 * d, 2 * d):
            raise ValueError(f"expected a square matrix of even size, got {m.shape}")
        return cls(m[:d, :d].copy(), m[:d, d:].copy(), m[d:, d:].copy())

    def quad(self, u: np.ndarray, v: np.ndarray) -> float:
        """``[u^T v^T] Q [u; v]`` computed blockwise."""
        return float(u @ self.a @ u + 2.0 * u @ self.b @ v + v @ self.c @ v)

    def __add__(self, other: "BlockSym") -> "BlockSym":
        return BlockSym(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "BlockSym") -> "BlockSym":
        return BlockSym(self.a - other.a, self.b - other.b, self.c - other.c)


def _gamma_diag(gamma) -> np.ndarray:
    g = np.asarray(gamma, dtype=float)
    return np.diag(g) if g.ndim == 1 else g


def def_blocks(q: BlockSym, gamma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Derived blocks ``D = A - g B^T``, ``E = g C - B``, ``F = D + E g``."""
    g = _gamma_diag(gamma)
    if g.shape != q.a.shape:
        raise ValueError(f"gamma shape {g.shape} does not match block shape {q.a.shape}")
    dd = q.a - g @ q.b.T
    ee = g @ q.c - q.b
    return dd, ee, dd + ee @ g


def p_from_q(q: BlockSym, gamma) -> BlockSym:
    g = _gamma_diag(gamma)
    return BlockSym(q.a, q.b, q.c - np.diag(1.0 / np.diag(g)))


def q_from_p(p: BlockSym, gamma) -> BlockSym:
    g = _gamma_diag(gamma)
    return BlockSym(p.a, p.b, p.c + np.diag(1.0 / np.diag(g)))


@dataclass(frozen=True)
class StateVec:
    x: np.ndarray
    y: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.zeros_like(x) if self.y is None else np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape:
            raise ValueError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
