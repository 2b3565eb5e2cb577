"""Tests for positions, wealth simulation, and policy evaluation."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from regimeweave.hjb import MarketModel, solve_income_loading, solve_regime_factors
from regimeweave.markov import RngStream, validate_generator
from regimeweave.montecarlo import estimate_value_mc
from regimeweave.portfolio import (
    NORMAL_INCOME,
    RHO_ZERO,
    CaseMismatch,
    Strategy,
    build_solution,
    evaluate_policy,
    hedge_weight,
    merton_weight,
    optimal_strategy,
    simulate_wealth,
    strategy_from_value_factor,
    utility,
    value_function,
)

Q2 = validate_generator([[-0.5, 0.5], [0.3, -0.3]])


def make_market(**overrides):
    params = dict(
        rate=0.03,
        correlation=0.4,
        risk_aversion=1.5,
        horizon=2.0,
        stock_drift=[0.08, 0.03],
        stock_vol=[0.25, 0.4],
        income_drift=[0.02, -0.01],
        income_vol=[0.12, 0.2],
        generator=Q2,
    )
    params.update(overrides)
    return MarketModel(**params)


class TestUtility:
    def test_values_and_shape(self):
        assert utility(0.0, 2.0) == -0.5
        assert utility(1.0, 1.0) == pytest.approx(-np.exp(-1.0), rel=1e-15)
        out = utility(np.array([0.0, 1.0]), 1.5)
        assert out.shape == (2,)

    def test_monotone_increasing_concave(self):
        x = np.linspace(-1.0, 3.0, 50)
        u = utility(x, 1.5)
        assert np.all(np.diff(u) > 0)
        assert np.all(np.diff(u, 2) < 0)

    def test_rejects_bad_aversion(self):
        with pytest.raises(ValueError):
            utility(1.0, 0.0)


class TestPositions:
    def test_merton_hand_substitution(self):
        market = make_market()
        # excess 0.05, vol 0.25, gamma 1.5, remaining growth exp(0.03 * 2)
        expected = 0.05 / (1.5 * 0.25**2 * np.exp(0.06))
        assert merton_weight(market, 0.0, 0) == pytest.approx(expected, abs=1e-15)

    def test_merton_scales_inversely_with_aversion(self):
        a = merton_weight(make_market(risk_aversion=1.5), 0.5, 1)
        b = merton_weight(make_market(risk_aversion=3.0), 0.5, 1)
        assert b == pytest.approx(a / 2.0, rel=1e-15)

    def test_hedge_hand_substitution(self):
        market = make_market()
        tau = 2.0
        expected = -0.12 * 0.4 * np.expm1(0.03 * tau) / (0.03 * 0.25 * np.exp(0.03 * tau))
        assert hedge_weight(market, 0.0, 0) == pytest.approx(expected, abs=1e-15)

    def test_hedge_zero_rate_limit(self):
        market = make_market(rate=0.0)
        assert hedge_weight(market, 0.5, 0) == pytest.approx(-0.12 * 0.4 * 1.5 / 0.25, rel=1e-15)
        tiny = make_market(rate=1e-10)
        assert hedge_weight(tiny, 0.5, 0) == pytest.approx(
            hedge_weight(market, 0.5, 0), rel=1e-8
        )

    def test_hedge_vanishes_without_correlation(self):
        market = make_market(correlation=0.0)
        for t in (0.0, 1.0, 1.9):
            assert hedge_weight(market, t, 0) == 0.0
            assert hedge_weight(market, t, 1) == 0.0

    def test_hedge_independent_of_aversion(self):
        a = hedge_weight(make_market(risk_aversion=1.5), 0.3, 1)
        b = hedge_weight(make_market(risk_aversion=4.0), 0.3, 1)
        assert a == b

    def test_positions_vanish_at_horizon_when_discounted(self):
        market = make_market()
        assert hedge_weight(market, 2.0, 0) == 0.0
        assert merton_weight(market, 2.0, 0) == pytest.approx(0.05 / (1.5 * 0.0625), rel=1e-15)


class TestOptimalStrategy:
    def test_normal_income_combines_parts(self):
        market = make_market()
        strat = optimal_strategy(market, NORMAL_INCOME)
        t, regime = 0.7, 1
        expected = merton_weight(market, t, regime) + hedge_weight(market, t, regime)
        assert strat(t, 0.0, regime) == pytest.approx(expected, abs=1e-15)

    def test_rho_zero_case(self):
        market = make_market(correlation=0.0)
        strat = optimal_strategy(market, RHO_ZERO)
        assert strat(0.7, 5.0, 0) == pytest.approx(merton_weight(market, 0.7, 0), abs=1e-15)

    def test_case_mismatch(self):
        with pytest.raises(CaseMismatch):
            optimal_strategy(make_market(), RHO_ZERO)
        with pytest.raises(ValueError, match="unknown case"):
            optimal_strategy(make_market(), "lognormal")

    def test_scaled_strategy(self):
        strat = optimal_strategy(make_market(), NORMAL_INCOME)
        bumped = strat.scaled(1.25)
        assert bumped(0.7, 0.0, 1) == pytest.approx(1.25 * strat(0.7, 0.0, 1), rel=1e-15)

    def test_matches_first_order_condition_on_separable_factor(self):
        market = make_market()
        table = solve_regime_factors(market)
        loading = solve_income_loading(market)

        def factor(t, y, regime):
            return np.exp(loading.value(t) * y) * table.value(t, regime)

        from_factor = strategy_from_value_factor(market, factor)
        closed = optimal_strategy(market, NORMAL_INCOME)
        for t, y, regime in ((0.0, 0.5, 0), (0.9, -1.0, 1), (1.8, 2.0, 0)):
            assert from_factor(t, y, regime) == pytest.approx(closed(t, y, regime), rel=1e-7)


class TestSimulateWealth:
    def test_riskless_growth_exact(self):
        # no position and no income leaves pure compounding
        market = make_market(income_drift=[0.0, 0.0], income_vol=[0.0, 0.0])
        idle = Strategy(position=lambda t, y, i: 0.0 * np.asarray(t), label="idle")
        path = simulate_wealth(market, idle, 0.0, 2.0, 0.0, 0, 64, RngStream(seed=1))
        assert_allclose(path.wealth, 2.0 * np.exp(0.03 * path.times), rtol=1e-14)

    def test_deterministic_income_accrual(self):
        # deterministic income integrates against the discount factor;
        # freezing income over each step leaves an O(1/n_steps) gap
        market = make_market(
            generator=validate_generator([[0.0, 0.0], [0.0, 0.0]]),
            income_vol=[0.0, 0.0],
        )
        idle = Strategy(position=lambda t, y, i: 0.0 * np.asarray(t), label="idle")
        path = simulate_wealth(market, idle, 0.0, 1.0, 0.5, 0, 512, RngStream(seed=2))
        oracle = 1.0 * np.exp(0.03 * 2.0) + quad(
            lambda s: np.exp(0.03 * (2.0 - s)) * (0.5 + 0.02 * s), 0.0, 2.0
        )[0]
        assert path.wealth[-1] == pytest.approx(oracle, rel=2e-4)

    def test_constant_position_moments(self):
        # zero rate and income: X_T = x0 + pi (alpha T + sigma B_T) exactly
        market = make_market(
            rate=0.0,
            generator=validate_generator([[0.0, 0.0], [0.0, 0.0]]),
            income_drift=[0.0, 0.0],
            income_vol=[0.0, 0.0],
        )
        hold = Strategy(position=lambda t, y, i: 2.0 + 0.0 * np.asarray(t), label="hold")
        finals = np.array(
            [
                simulate_wealth(
                    market, hold, 0.0, 1.0, 0.0, 0, 16, RngStream(seed=3, stream_id=k)
                ).wealth[-1]
                for k in range(3000)
            ]
        )
        expected_mean = 1.0 + 2.0 * 0.08 * 2.0
        expected_var = (2.0 * 0.25) ** 2 * 2.0
        assert finals.mean() == pytest.approx(expected_mean, abs=4 * np.sqrt(expected_var / 3000))
        assert finals.var(ddof=1) == pytest.approx(expected_var, rel=0.15)

    def test_reproducible_and_shared_scenarios(self):
        market = make_market()
        strat = optimal_strategy(market, NORMAL_INCOME)
        a = simulate_wealth(market, strat, 0.0, 1.0, 0.5, 0, 32, RngStream(seed=4))
        b = simulate_wealth(market, strat, 0.0, 1.0, 0.5, 0, 32, RngStream(seed=4))
        assert_allclose(a.wealth, b.wealth, atol=0)
        # a different strategy on the same stream sees the same scenario
        c = simulate_wealth(market, strat.scaled(2.0), 0.0, 1.0, 0.5, 0, 32, RngStream(seed=4))
        assert_allclose(c.times, a.times, atol=0)
        assert_allclose(c.income, a.income, atol=0)
        assert_allclose(c.positions, 2.0 * a.positions, rtol=1e-15)
        assert not np.allclose(c.wealth, a.wealth)

    def test_path_fields_consistent(self):
        market = make_market()
        strat = optimal_strategy(market, NORMAL_INCOME)
        path = simulate_wealth(market, strat, 0.5, 1.0, 0.2, 1, 16, RngStream(seed=5))
        assert path.times[0] == 0.5
        assert path.times[-1] == 2.0
        assert path.wealth[0] == 1.0
        assert path.income[0] == 0.2
        assert len(path.positions) == len(path.times) - 1
        assert len(path.regimes) == len(path.times) - 1


class TestEvaluatePolicy:
    def test_optimal_policy_attains_value(self):
        market = make_market()
        bundle = build_solution(market, NORMAL_INCOME)
        x0, y0, regime = 1.0, 0.5, 0
        est = evaluate_policy(
            market, bundle.strategy, 0.0, x0, y0, regime, 4000, 128, RngStream(seed=6)
        )
        target = bundle.value(0.0, x0, y0, regime)
        assert abs(est.value - target) < 4 * est.stderr

    def test_perturbed_policies_do_worse(self):
        market = make_market()
        strat = optimal_strategy(market, NORMAL_INCOME)
        args = (0.0, 1.0, 0.5, 0, 2000, 64)
        best = evaluate_policy(market, strat, *args, RngStream(seed=7))
        for factor in (0.5, 0.75, 1.25, 1.5):
            worse = evaluate_policy(market, strat.scaled(factor), *args, RngStream(seed=7))
            assert worse.value <= best.value + 2 * worse.stderr

    def test_matches_value_factor_estimator_at_rho_zero(self):
        market = make_market(correlation=0.0)
        strat = optimal_strategy(market, RHO_ZERO)
        x0, y0, regime = 1.0, 0.5, 1
        policy = evaluate_policy(market, strat, 0.0, x0, y0, regime, 3000, 96, RngStream(seed=8))
        direct = estimate_value_mc(market, 0.0, x0, y0, regime, 3000, 96, RngStream(seed=9))
        spread = np.hypot(policy.stderr, direct.stderr)
        assert abs(policy.value - direct.value) < 4 * spread


class TestSolutionBundleAndValue:
    def test_bundle_pieces_agree(self):
        market = make_market()
        bundle = build_solution(market, NORMAL_INCOME)
        value = value_function(market, factors=bundle.factors)
        t, x, y, regime = 0.4, 1.2, -0.3, 1
        assert bundle.value(t, x, y, regime) == pytest.approx(value(t, x, y, regime), rel=1e-15)
        assert bundle.case == NORMAL_INCOME

    def test_terminal_value_is_utility(self):
        market = make_market()
        value = value_function(market)
        for x in (-1.0, 0.0, 2.5):
            assert value(2.0, x, 3.0, 0) == pytest.approx(utility(x, 1.5), rel=1e-12)

    def test_value_increases_with_wealth_and_income(self):
        market = make_market()
        value = value_function(market)
        assert value(0.5, 2.0, 0.5, 0) > value(0.5, 1.0, 0.5, 0)
        assert value(0.5, 1.0, 1.5, 0) > value(0.5, 1.0, 0.5, 0)

    def test_build_solution_checks_case(self):
        with pytest.raises(CaseMismatch):
            build_solution(make_market(), RHO_ZERO)
