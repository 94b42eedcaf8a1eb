"""Shared parameter sets and cached solves for the test-suite."""

from __future__ import annotations

import functools

import numpy as np

from riccati_liquidation.model import ModelParams
from riccati_liquidation.riccati import GridSpec, solve_penalized


def fig1(k: float = 0.0) -> ModelParams:
    return ModelParams.constant(np.diag([10.0, 1.0]), [1.0, 1.0], [1.0, 1.0],
                                np.array([[1.0, k], [k, 1.0]]), 1.0)


def scalar_free(lam: float = 1.0, gamma: float = 1.0, T: float = 1.0) -> ModelParams:
    """d = 1 with no risk and no resilience."""
    return ModelParams.constant(lam, [gamma], [0.0], np.zeros((1, 1)), T)


def single_asset(lam: float, gamma: float, rho: float, sigma: float = 0.0, T: float = 1.0) -> ModelParams:
    return ModelParams.constant(lam, [gamma], [rho], np.array([[sigma]]), T)


@functools.lru_cache(maxsize=None)
def fig1_solution(k: float, n: float, steps: int = 2000):
    return solve_penalized(fig1(k), n, GridSpec(0.0, 1.0, steps))


@functools.lru_cache(maxsize=None)
def scalar_solution(n: float, steps: int = 2000):
    return solve_penalized(scalar_free(), n, GridSpec(0.0, 1.0, steps))
