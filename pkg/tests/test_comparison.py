import numpy as np
import pytest

import oracles
from helpers import fig1, fig1_solution
from riccati_liquidation import comparison
from riccati_liquidation.comparison import GeneralRiccatiInstance, check_comparison, solve_general
from riccati_liquidation.model import Schedule

GRID = np.linspace(0.0, 1.0, 101)


def one(v: float) -> Schedule:
    return Schedule.constant(np.array([[v]]))


def scalar(h: float, i: float, s: float, g: float = 0.0) -> GeneralRiccatiInstance:
    return GeneralRiccatiInstance(one(g), one(h), one(i), np.array([[s]]), 1.0)


class TestSolver:
    def test_zero_fixed_point(self):
        k = solve_general(scalar(1.0, 0.0, 0.0), GRID)
        assert np.all(k == 0.0)

    def test_tanh(self):
        k = solve_general(scalar(1.0, 1.0, 0.0), GRID)[:, 0, 0]
        assert np.max(np.abs(k - oracles.tanh_solution(GRID, 1.0))) < 1e-9

    def test_linear_decay(self):
        # H = 0, I = 0: dK/dt = -2 g K, so K(t) = S exp(2 g (T - t))
        k = solve_general(scalar(0.0, 0.0, 1.5, g=0.3), GRID)[:, 0, 0]
        assert np.allclose(k, 1.5 * np.exp(0.6 * (1.0 - GRID)), rtol=1e-9)

    def test_matches_liquidation_solver(self):
        sol = fig1_solution(0.0, 64.0)
        k = solve_general(comparison.riccati_instance(fig1(), 64.0), sol.grid[::100])
        ref = np.array([sol.eval_matrix(t) for t in sol.grid[::100]])
        assert np.max(np.abs(k - ref)) / np.max(np.abs(ref)) < 1e-7

    def test_symmetric_output(self):
        i1, _ = comparison.random_ordered_pair(4, 3)
        k = solve_general(i1, GRID)
        assert np.array_equal(k, np.transpose(k, (0, 2, 1)))


class TestCheck:
    def test_identical_instances_zero_margin(self):
        i1, _ = comparison.random_ordered_pair(1, 2)
        rep = check_comparison(i1, i1, GRID)
        assert rep.verdict == "pass"
        assert abs(rep.worst_margin) < 1e-12

    def test_source_gap_gives_tanh_margin(self):
        rep = check_comparison(scalar(1.0, 0.0, 0.0), scalar(1.0, 1.0, 0.0), GRID)
        assert rep.verdict == "pass"
        assert np.allclose(rep.margin, oracles.tanh_solution(rep.grid, 1.0), atol=1e-9)

    @pytest.mark.parametrize("seed", range(0, 100, 7))
    def test_random_pairs_d3(self, seed):
        i1, i2 = comparison.random_ordered_pair(seed, 3)
        rep = check_comparison(i1, i2, GRID)
        assert rep.verdict == "pass", rep.summary()

    def test_deterministic(self):
        a = check_comparison(*comparison.random_ordered_pair(11, 2), GRID)
        b = check_comparison(*comparison.random_ordered_pair(11, 2), GRID)
        assert np.array_equal(a.margin, b.margin)

    def test_reversed_pair_inapplicable(self):
        i1, i2 = comparison.random_ordered_pair(5, 2)
        rep = check_comparison(i2, i1, GRID)
        assert rep.verdict == "inapplicable"
        assert rep.hypothesis_violations
        assert rep.summary()["verdict"] == "inapplicable"

    def test_negative_h2_flagged(self):
        bad = check_comparison(scalar(1.0, 0.0, 0.0), scalar(-0.5, 0.0, 0.0), GRID)
        assert any("H2 not PSD" in v for v in bad.hypothesis_violations)

    def test_different_g_flagged(self):
        bad = check_comparison(scalar(1.0, 0.0, 0.0, g=0.1), scalar(1.0, 0.0, 0.0), GRID)
        assert any("G differs" in v for v in bad.hypothesis_violations)

    def test_rejects_d0(self):
        with pytest.raises(ValueError):
            comparison.random_ordered_pair(0, 0)


class TestLiquidationInstances:
    def test_envelope_sandwich(self):
        params = fig1()
        lo, hi = comparison.envelope_instances(params, 64.0)
        true = comparison.riccati_instance(params, 64.0)
        assert check_comparison(lo, true, GRID).verdict == "pass"
        assert check_comparison(true, hi, GRID).verdict == "pass"

    def test_ladder_is_ordered(self):
        params = fig1(0.5)
        rep = check_comparison(comparison.riccati_instance(params, 32.0),
                               comparison.riccati_instance(params, 64.0), GRID)
        assert rep.verdict == "pass"
        assert rep.worst_margin >= -1e-8
