"""Optimal stock positions, wealth simulation, and policy evaluation.

Positions are money amounts held in the stock, not fractions of wealth:
with exponential utility the optimal position is wealth-independent and
splits into a myopic mean-variance part and an income hedge.  Wealth paths
use an integrating-factor scheme that compounds interest exactly within
each step, so a zero-position, zero-income path earns the riskless rate to
machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .hjb import IncomeLoading, MarketModel, RegimeFactorTable, solve_income_loading, solve_regime_factors
from .markov import RngStream, simulate_path
from .montecarlo import MCEstimate, _estimate, _run_paths, merged_time_grid

__all__ = [
    "CaseMismatch",
    "RHO_ZERO",
    "NORMAL_INCOME",
    "Strategy",
    "WealthPath",
    "SolutionBundle",
    "utility",
    "merton_weight",
    "hedge_weight",
    "optimal_strategy",
    "strategy_from_value_factor",
    "value_function",
    "build_solution",
    "simulate_wealth",
    "evaluate_policy",
]

RHO_ZERO = "rho0"
NORMAL_INCOME = "normal_income"


class CaseMismatch(ValueError):
    """Requested solution case contradicts the market's parameters."""


@dataclass(frozen=True)
class Strategy:
    """Feedback rule for the money amount held in the stock.

    ``position(t, income, regime)`` must accept numpy arrays broadcast
    against each other; wealth never enters because exponential utility
    makes the optimum wealth-free.
    """

    position: Callable[[float, float, int], float]
    label: str = ""

    def __call__(self, t, income, regime):
        return self.position(t, income, regime)

    def scaled(self, factor: float) -> "Strategy":
        def scaled_position(t, income, regime):
            return factor * self.position(t, income, regime)

        suffix = f" x{factor:g}" if self.label else f"x{factor:g}"
        return Strategy(position=scaled_position, label=self.label + suffix)


@dataclass(frozen=True)
class WealthPath:
    """Joint wealth/income trajectory on a jump-refined grid.

    ``regimes`` and ``positions`` apply on ``[times[k], times[k+1])``.
    """

    times: NDArray[np.float64]
    wealth: NDArray[np.float64]
    income: NDArray[np.float64]
    regimes: NDArray[np.int64]
    positions: NDArray[np.float64]


@dataclass(frozen=True)
class SolutionBundle:
    """Everything the solved model offers: curves, strategy, and value."""

    market: MarketModel
    case: str
    loading: IncomeLoading
    factors: RegimeFactorTable
    strategy: Strategy
    value: Callable[[float, float, float, int], float]


def utility(wealth, risk_aversion: float):
    """Exponential utility ``-exp(-risk_aversion * wealth) / risk_aversion``."""
    if risk_aversion <= 0:
        raise ValueError("risk_aversion must be positive")
    out = -np.exp(-risk_aversion * np.asarray(wealth, dtype=float)) / risk_aversion
    return out if out.ndim else float(out)


def merton_weight(market: MarketModel, t, regime):
    """Myopic position: excess return over ``risk_aversion * variance``,
    discounted by the remaining riskless growth."""
    tau = market.horizon - np.asarray(t, dtype=float)
    excess = market.excess_return()[regime]
    vol = market.stock_vol[regime]
    out = excess / (market.risk_aversion * vol**2 * np.exp(market.rate * tau))
    return out if np.ndim(out) else float(out)


def hedge_weight(market: MarketModel, t, regime):
    """Income-hedging position, zero when stock and income are uncorrelated.

    Closed form ``-income_vol * correlation * expm1(rate * tau) /
    (rate * stock_vol * exp(rate * tau))`` with the zero-rate limit
    ``-income_vol * correlation * tau / stock_vol``.
    """
    market.require_normal_income("hedge_weight")
    tau = market.horizon - np.asarray(t, dtype=float)
    ivol = market.income_vol[regime]
    vol = market.stock_vol[regime]
    rho = market.correlation
    if market.rate == 0.0:
        out = -ivol * rho * tau / vol
    else:
        r = market.rate
        out = -ivol * rho * np.expm1(r * tau) / (r * vol * np.exp(r * tau))
    return out if np.ndim(out) else float(out)


def optimal_strategy(market: MarketModel, case: str = NORMAL_INCOME) -> Strategy:
    """Optimal feedback position for the requested solution case.

    ``"normal_income"`` covers correlated arithmetic income and returns the
    myopic plus hedge position; ``"rho0"`` is the uncorrelated special case
    and requires ``market.correlation == 0``, where the hedge vanishes and
    only the myopic part remains.
    """
    _check_case(market, case)
    if case == RHO_ZERO:

        def position(t, income, regime):
            return merton_weight(market, t, regime)

    else:

        def position(t, income, regime):
            return merton_weight(market, t, regime) + hedge_weight(market, t, regime)

    return Strategy(position=position, label=case)


def strategy_from_value_factor(
    market: MarketModel, factor, relative_step: float = 1e-6
) -> Strategy:
    """First-order-condition position built from a wealth-free factor.

    For a candidate value ``-(1/gamma) exp(-gamma x exp(rate tau)) *
    factor(t, y, regime)`` the best position is

        (excess / vol + correlation * income_vol * d log factor / dy)
        / (gamma * vol * exp(rate * tau))

    with the log-derivative taken by central differences.  Recovers the
    closed-form strategy when given the separable factor.
    """
    market.require_normal_income("strategy_from_value_factor")

    def position(t, income, regime):
        t = np.asarray(t, dtype=float)
        income = np.asarray(income, dtype=float)
        step = relative_step * np.maximum(1.0, np.abs(income))
        mid = factor(t, income, regime)
        ratio = (factor(t, income + step, regime) - factor(t, income - step, regime)) / (
            2.0 * step * mid
        )
        tau = market.horizon - t
        excess = market.excess_return()[regime]
        vol = market.stock_vol[regime]
        ivol = market.income_vol[regime]
        out = (excess / vol + market.correlation * ivol * ratio) / (
            market.risk_aversion * vol * np.exp(market.rate * tau)
        )
        return out if np.ndim(out) else float(out)

    return Strategy(position=position, label="value-factor")


def value_function(
    market: MarketModel,
    factors: RegimeFactorTable | None = None,
    n_steps: int = 2048,
):
    """Closed-form value function ``V(t, wealth, income, regime)``.

    Solves the regime-factor ODE if no table is supplied.  The returned
    callable broadcasts over array arguments.
    """
    if factors is None:
        factors = solve_regime_factors(market, n_steps=n_steps)
    loading = solve_income_loading(market)
    gamma = market.risk_aversion

    def value(t, wealth, income, regime):
        growth = np.exp(market.rate * (market.horizon - np.asarray(t, dtype=float)))
        exponent = -gamma * np.asarray(wealth, dtype=float) * growth + loading.value(t) * np.asarray(
            income, dtype=float
        )
        out = -np.exp(exponent) / gamma * factors.value(t, regime)
        return out if np.ndim(out) else float(out)

    return value


def build_solution(market: MarketModel, case: str = NORMAL_INCOME, n_steps: int = 2048) -> SolutionBundle:
    """Solve the model end to end: loading, factors, strategy, and value."""
    _check_case(market, case)
    factors = solve_regime_factors(market, n_steps=n_steps)
    return SolutionBundle(
        market=market,
        case=case,
        loading=solve_income_loading(market),
        factors=factors,
        strategy=optimal_strategy(market, case),
        value=value_function(market, factors=factors),
    )


def _check_case(market: MarketModel, case: str) -> None:
    if case not in (RHO_ZERO, NORMAL_INCOME):
        raise ValueError(f"unknown case {case!r}; expected {RHO_ZERO!r} or {NORMAL_INCOME!r}")
    if case == RHO_ZERO and market.correlation != 0.0:
        raise CaseMismatch(
            f"case 'rho0' requires zero correlation, market has {market.correlation}"
        )
    market.require_normal_income(f"case {case!r}")


def simulate_wealth(
    market: MarketModel,
    strategy: Strategy,
    t_start: float,
    wealth_start: float,
    income_start: float,
    regime: int,
    n_steps: int,
    rng: RngStream | np.random.Generator,
) -> WealthPath:
    """Simulate one joint (regime, income, wealth) path under a strategy.

    The stock and income shocks are correlated standard normals; interest
    compounds exactly through an integrating factor, with the position,
    income level, and regime frozen over each step:

        wealth[k] = exp(rate (t_k - t_0)) * (wealth_start
                    + sum of discounted step cashflows before t_k)

    The draw order (chain, stock shocks, income shocks) never depends on the
    strategy, so two strategies evaluated on the same stream see identical
    scenarios (common random numbers).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    path = simulate_path(market.generator, regime, t_start, market.horizon, gen)
    times, regimes = merged_time_grid(path, n_steps)
    dt = np.diff(times)
    sqrt_dt = np.sqrt(dt)
    stock_shock = gen.standard_normal(len(dt))
    income_shock = gen.standard_normal(len(dt))
    rho = market.correlation
    joint = rho * stock_shock + np.sqrt(1.0 - rho**2) * income_shock

    income = np.empty(len(times))
    income[0] = income_start
    np.cumsum(
        market.income_drift[regimes] * dt + market.income_vol[regimes] * sqrt_dt * joint,
        out=income[1:],
    )
    income[1:] += income_start

    positions = np.broadcast_to(
        np.asarray(strategy(times[:-1], income[:-1], regimes), dtype=float), dt.shape
    )

    r = market.rate
    accrual = np.expm1(r * dt) / r if r != 0.0 else dt  # integral of exp(r s) over a step
    cash = (
        positions * market.excess_return()[regimes] + income[:-1]
    ) * accrual + positions * market.stock_vol[regimes] * sqrt_dt * stock_shock
    discount = np.exp(-r * (times[1:] - t_start))
    wealth = np.empty(len(times))
    wealth[0] = wealth_start
    np.cumsum(discount * cash, out=wealth[1:])
    wealth[1:] += wealth_start
    wealth *= np.exp(r * (times - t_start))

    return WealthPath(
        times=times, wealth=wealth, income=income, regimes=regimes, positions=np.array(positions)
    )


def evaluate_policy(
    market: MarketModel,
    strategy: Strategy,
    t_start: float,
    wealth_start: float,
    income_start: float,
    regime: int,
    n_paths: int,
    n_steps: int,
    rng: RngStream,
) -> MCEstimate:
    """Expected terminal utility of a strategy by path simulation.

    Path ``k`` uses stream ``rng.stream_id + k``; running different
    strategies with the same ``rng`` pairs them on identical scenarios.
    """
    gamma = market.risk_aversion

    def one_path(gen: np.random.Generator) -> float:
        path = simulate_wealth(
            market, strategy, t_start, wealth_start, income_start, regime, n_steps, gen
        )
        return float(utility(path.wealth[-1], gamma))

    values = _run_paths(one_path, n_paths, rng)
    return _estimate(values)
