"""The twelve acceptance criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per criterion is
printed in the terminal summary.
"""

import time

import numpy as np
import pytest

import oracles
from helpers import fig1, fig1_solution, scalar_free, single_asset
from riccati_liquidation import bounds, comparison, trajectory
from riccati_liquidation.model import BlockSym, Schedule
from riccati_liquidation.riccati import GridSpec, default_ladder, solve_penalized

X0, Y0 = np.array([1.0, 1.0]), np.array([0.0, 0.0])


@pytest.mark.criterion(1, "closed-form D(t) for the risk-free scalar case")
def test_c01_closed_form(record_property):
    params = scalar_free()
    start = time.perf_counter()
    sol = solve_penalized(params, 3.0, GridSpec(0.0, 1.0, 2000))
    elapsed = time.perf_counter() - start
    d_num = np.array([sol.block(i).a[0, 0] - params.gamma[0] * sol.block(i).b[0, 0]
                      for i in range(len(sol.grid))])
    exact = oracles.scalar_d(sol.grid, 1.0, 1.0, 1.0, 3.0)
    err = float(np.max(np.abs(d_num - exact) / exact))
    record_property("max_rel_err", f"{err:.2e}")
    record_property("runtime_s", f"{elapsed:.3f}")
    assert err <= 1e-6
    assert elapsed < 1.0


@pytest.mark.criterion(2, "TWAP limit of the scalar closed-loop position")
def test_c02_twap(record_property):
    params = scalar_free()
    sups = []
    for n in [8.0 * 2**k for k in range(9)]:
        sol = solve_penalized(params, n)
        tr = trajectory.simulate(params, sol, 0.0, [1.0], [0.0])
        mask = tr.grid <= 0.95
        sups.append(float(np.max(np.abs(tr.x_path[mask, 0] - oracles.twap(tr.grid[mask], 0.0, 1.0, 1.0)))))
    record_property("final_sup", f"{sups[-1]:.3e}")
    assert all(b < a for a, b in zip(sups, sups[1:]))
    assert sups[-1] <= 1e-3


@pytest.mark.criterion(3, "simulated penalized cost equals the quadratic-form value")
def test_c03_value_consistency(record_property):
    worst = 0.0
    for k in (-0.5, 0.0, 0.5):
        params, sol = fig1(k), fig1_solution(k, 256.0)
        tr = trajectory.simulate(params, sol, 0.0, X0, Y0)
        c = trajectory.cost(params, tr, 256.0)
        v = trajectory.value_at(sol, 0.0, X0, Y0)
        worst = max(worst, abs(c - v) / v)
    record_property("worst_rel_err", f"{worst:.2e}")
    assert worst <= 2e-3


@pytest.mark.criterion(4, "PSD monotonicity along the penalization ladder")
def test_c04_monotone_ladder(record_property):
    rungs = [fig1_solution(0.0, n) for n in (16.0, 32.0, 64.0, 128.0, 256.0, 512.0)]
    samples = np.linspace(0.0, 1.0, 50)
    worst = np.inf
    for lo, hi in zip(rungs, rungs[1:]):
        for t in samples:
            q_hi, q_lo = hi.eval_matrix(t), lo.eval_matrix(t)
            margin = np.linalg.eigvalsh(q_hi - q_lo)[0] + 1e-7 * (1.0 + np.linalg.norm(q_hi))
            worst = min(worst, margin)
    record_property("worst_slack", f"{worst:.3e}")
    assert worst >= 0.0


@pytest.mark.criterion(5, "envelope containment at n = 64")
def test_c05_envelope(record_property):
    rep = bounds.check_envelope(fig1_solution(0.0, 64.0), tol=1e-7)
    record_property("worst_margin", f"{rep.worst_margin:.3e}")
    assert rep.passed


@pytest.mark.criterion(6, "weighted-F sandwich and terminal identities of q, p")
def test_c06_weighted_f(record_property):
    params = fig1()
    sol = fig1_solution(0.0, 64.0)
    rep = bounds.check_weighted_F(sol, tol=1e-7)
    q_t, p_t = bounds.pq_bounds(params, 64.0, 1.0)
    record_property("worst_margin", f"{rep.worst_margin:.3e}")
    assert rep.passed
    assert q_t == pytest.approx((64.0 - params.gamma_max) / params.lambda_max, rel=1e-14)
    assert p_t == pytest.approx((64.0 - params.gamma_min) / params.lambda_min, rel=1e-14)


@pytest.mark.criterion(7, "comparison principle campaign and tanh oracle")
def test_c07_comparison(record_property):
    worst = np.inf
    grid = np.linspace(0.0, 1.0, 101)
    for seed in range(100):
        i1, i2 = comparison.random_ordered_pair(seed, 1 + seed % 3)
        rep = comparison.check_comparison(i1, i2, grid, tol=1e-8)
        assert rep.verdict == "pass", rep.summary()
        worst = min(worst, rep.worst_margin)
    one = lambda v: Schedule.constant(np.array([[v]]))  # noqa: E731
    inst = comparison.GeneralRiccatiInstance(one(0.0), one(1.0), one(1.0), np.zeros((1, 1)), 1.0)
    tanh_err = float(np.max(np.abs(comparison.solve_general(inst, grid)[:, 0, 0] - oracles.tanh_solution(grid, 1.0))))
    record_property("worst_margin", f"{worst:.3e}")
    record_property("tanh_err", f"{tanh_err:.2e}")
    assert tanh_err <= 1e-8


@pytest.mark.criterion(8, "liquidation: n|X(T)|^2 and Y(T)'X(T) decay along the ladder")
def test_c08_liquidation(record_property):
    params = fig1()
    ladder = [fig1_solution(0.0, n) for n in default_ladder(params)]
    rep = trajectory.check_liquidation(params, ladder, 0.0, X0, Y0, threshold=1e-2)
    record_property("final_penalty_term", f"{rep.penalty_terms[-1]:.3e}")
    record_property("final_cross_term", f"{rep.cross_terms[-1]:.3e}")
    assert rep.decreasing and rep.cross_decreasing
    assert rep.penalty_terms[-1] < 1e-2 and rep.cross_terms[-1] < 1e-2


@pytest.mark.criterion(9, "value increases in the correlation; liquid asset trades faster")
def test_c09_fig1(record_property):
    n = 1024.0
    values, rates = [], []
    for k in (-0.5, 0.0, 0.5):
        sol = fig1_solution(k, n)
        values.append(trajectory.value_at(sol, 0.0, X0, Y0))
        q0 = BlockSym.from_matrix(sol.eval_matrix(0.0))
        rates.append(trajectory.feedback(q0, X0, Y0, fig1(k)))
    record_property("V", [round(v, 6) for v in values])
    assert all(b > a for a, b in zip(values, values[1:]))
    assert all(r[1] > r[0] for r in rates)


@pytest.mark.criterion(10, "single-asset initial rate increases with persistent impact")
def test_c10_fig3(record_property):
    n = 16384.0
    rates = []
    for g in (0.5, 1.0, 2.0, 4.0):
        params = single_asset(0.1, g, 1.0)
        assert n > bounds.n0(params)
        sol = solve_penalized(params, n)
        q0 = BlockSym.from_matrix(sol.eval_matrix(0.0))
        rates.append(float(trajectory.feedback(q0, [1.0], [0.0], params)[0]))
    record_property("xi0", [round(r, 6) for r in rates])
    assert all(b > a for a, b in zip(rates, rates[1:]))


@pytest.mark.criterion(11, "fundamental-matrix norm bound")
def test_c11_fundamental(record_property):
    worst = np.inf
    for n in (64.0, 256.0):
        rep = trajectory.check_fundamental_bound(fig1(), fig1_solution(0.0, n), 0.0, tol=0.0)
        assert rep.passed, rep.summary()
        worst = min(worst, rep.worst_margin)
    record_property("worst_relative_margin", f"{worst:.3e}")


def _bump(j: int, amp: float):
    direction = np.cos(np.array([0.3, 1.1]) * (j + 1))
    return lambda t: amp * np.sin((j + 1) * np.pi * t) * direction


@pytest.mark.criterion(12, "first-order optimality under bump perturbations")
def test_c12_bumps(record_property):
    params, n = fig1(), 64.0
    sol = fig1_solution(0.0, n)
    base = trajectory.cost(params, trajectory.simulate(params, sol, 0.0, X0, Y0), n)
    ratios = []
    for j in range(5):
        excess = []
        for amp in (1e-2, 5e-3):
            tr = trajectory.simulate(params, sol, 0.0, X0, Y0, bump=_bump(j, amp))
            excess.append(trajectory.cost(params, tr, n) - base)
        assert excess[0] > 0 and excess[1] > 0
        ratios.append(excess[0] / excess[1])
    record_property("ratios", [round(r, 4) for r in ratios])
    assert all(3.5 <= r <= 4.5 for r in ratios)
