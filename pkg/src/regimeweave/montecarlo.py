"""Monte Carlo estimators for the separable pieces of the value function.

Two probabilistic representations are sampled here, both driven by the
regime chain:

* the regime factor ``h_i(t)`` equals the expectation of the exponential of
  the growth rate integrated along the regime path, which is computable
  exactly per path because the loading integrals have closed forms;
* with zero stock-income correlation the wealth-free factor
  ``g(t, y, regime)`` equals the expectation of
  ``exp(-integral of (risk_aversion * exp(rate*(horizon-s)) * Y_s
  + half squared Sharpe of the current regime) ds)``
  over income paths ``Y``, sampled with per-regime-exact Gaussian steps and
  a trapezoid rule for the time integral.

Estimators assign one counter-based stream per path, so results do not
depend on execution order or on the ``REGIMEWEAVE_THREADS`` worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .hjb import MarketModel, growth_coefficients, solve_income_loading
from .markov import RegimePath, RngStream, simulate_path

__all__ = [
    "NonZeroRho",
    "MCEstimate",
    "IncomePath",
    "merged_time_grid",
    "simulate_income_path",
    "estimate_regime_factor",
    "estimate_value_factor",
    "estimate_value_mc",
]

THREADS_ENV = "REGIMEWEAVE_THREADS"


class NonZeroRho(ValueError):
    """Estimator only valid when stock and income are uncorrelated."""


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with its standard error."""

    value: float
    stderr: float
    n_paths: int


@dataclass(frozen=True)
class IncomePath:
    """Income level on a time grid refined at regime jumps.

    ``regimes[k]`` is the regime in force on ``[times[k], times[k+1])``.
    """

    times: NDArray[np.float64]
    values: NDArray[np.float64]
    regimes: NDArray[np.int64]


def merged_time_grid(
    path: RegimePath, n_steps: int
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Uniform grid over the path's span, refined with the jump times.

    Splitting steps at jumps keeps per-step coefficients constant, so a
    Gaussian Euler step is exact in distribution on every interval.
    Returns the grid and the regime governing each interval.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    uniform = np.linspace(path.t_start, path.t_end, n_steps + 1)
    times = np.union1d(uniform, path.times[1:])
    regimes = path.states[np.searchsorted(path.times, times[:-1], side="right") - 1]
    return times, regimes


def simulate_income_path(
    market: MarketModel,
    path: RegimePath,
    income_start: float,
    n_steps: int,
    rng: RngStream | np.random.Generator | None = None,
    normals: NDArray[np.float64] | None = None,
) -> IncomePath:
    """Sample the income level along a given regime path.

    Per-step increments are ``drift * dt + vol * sqrt(dt) * z`` with the
    regime's coefficients, exact in distribution because the grid is split
    at jumps.  Pass ``normals`` (one standard normal per grid step) to reuse
    or negate draws; otherwise they come from ``rng``.
    """
    market.require_normal_income("simulate_income_path")
    times, regimes = merged_time_grid(path, n_steps)
    dt = np.diff(times)
    if normals is None:
        if rng is None:
            raise ValueError("provide either rng or normals")
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        normals = gen.standard_normal(len(dt))
    elif len(normals) != len(dt):
        raise ValueError(f"need {len(dt)} normals, got {len(normals)}")
    steps = market.income_drift[regimes] * dt + market.income_vol[regimes] * np.sqrt(dt) * normals
    values = np.empty(len(times))
    values[0] = income_start
    np.cumsum(steps, out=values[1:])
    values[1:] += income_start
    return IncomePath(times=times, values=values, regimes=regimes)


def estimate_regime_factor(
    market: MarketModel,
    t_start: float,
    regime: int,
    n_paths: int,
    rng: RngStream,
) -> MCEstimate:
    """Monte Carlo estimate of the regime factor ``h_regime(t_start)``.

    Each path draws only the regime chain; conditional on it the integrated
    growth rate is a sum of closed-form segment integrals, so the only error
    is statistical.  Path ``k`` uses stream ``rng.stream_id + k``.
    """
    _check_horizon(market, t_start)
    coeffs = growth_coefficients(market)
    loading = solve_income_loading(market)

    def one_path(gen: np.random.Generator) -> float:
        path = simulate_path(market.generator, regime, t_start, market.horizon, gen)
        starts, ends, states = path.segments()
        exponent = (
            coeffs.constant[states] * (ends - starts)
            + coeffs.linear[states] * loading.integral(starts, ends)
            + coeffs.quadratic[states] * loading.square_integral(starts, ends)
        ).sum()
        return float(np.exp(exponent))

    values = _run_paths(one_path, n_paths, rng)
    return _estimate(values)


def estimate_value_factor(
    market: MarketModel,
    t_start: float,
    income_start: float,
    regime: int,
    n_paths: int,
    n_steps: int,
    rng: RngStream,
    antithetic: bool = True,
) -> MCEstimate:
    """Monte Carlo estimate of the wealth-free value factor ``g``.

    Valid only for zero stock-income correlation, where the wealth and
    income parts of the problem decouple and the factor has a Feynman-Kac
    form along (chain, income) paths.  The income integral uses a trapezoid
    rule on the jump-refined grid (bias of order ``1/n_steps**2``); the
    regime term is exact.  With ``antithetic=True`` each path evaluates the
    mirrored income draw on the same chain path and averages the pair,
    which counts as a single sample.
    """
    if market.correlation != 0.0:
        raise NonZeroRho(
            f"value-factor sampling requires zero correlation, got {market.correlation}"
        )
    market.require_normal_income("estimate_value_factor")
    _check_horizon(market, t_start)
    gamma = market.risk_aversion
    # half squared Sharpe per regime, the sign-flipped constant growth term
    sharpe_half = -growth_coefficients(market).constant

    def one_path(gen: np.random.Generator) -> float:
        path = simulate_path(market.generator, regime, t_start, market.horizon, gen)
        times, regimes = merged_time_grid(path, n_steps)
        dt = np.diff(times)
        z = gen.standard_normal(len(dt))
        discount = gamma * np.exp(market.rate * (market.horizon - times))
        regime_term = float((sharpe_half[regimes] * dt).sum())
        drift = market.income_drift[regimes] * dt
        shock = market.income_vol[regimes] * np.sqrt(dt)

        def sample(sign: float) -> float:
            income = np.empty(len(times))
            income[0] = income_start
            np.cumsum(drift + sign * shock * z, out=income[1:])
            income[1:] += income_start
            income_term = float(np.trapezoid(discount * income, times))
            return float(np.exp(-income_term - regime_term))

        if antithetic:
            return 0.5 * (sample(1.0) + sample(-1.0))
        return sample(1.0)

    values = _run_paths(one_path, n_paths, rng)
    return _estimate(values)


def estimate_value_mc(
    market: MarketModel,
    t_start: float,
    wealth_start: float,
    income_start: float,
    regime: int,
    n_paths: int,
    n_steps: int,
    rng: RngStream,
    antithetic: bool = True,
) -> MCEstimate:
    """Monte Carlo estimate of the value function at zero correlation.

    Scales the sampled wealth-free factor by the deterministic wealth term
    ``-(1/gamma) exp(-gamma * wealth * exp(rate * (horizon - t)))``.
    """
    factor = estimate_value_factor(
        market, t_start, income_start, regime, n_paths, n_steps, rng, antithetic
    )
    gamma = market.risk_aversion
    growth = np.exp(market.rate * (market.horizon - t_start))
    scale = -np.exp(-gamma * wealth_start * growth) / gamma
    return MCEstimate(
        value=scale * factor.value,
        stderr=abs(scale) * factor.stderr,
        n_paths=factor.n_paths,
    )


def _check_horizon(market: MarketModel, t_start: float) -> None:
    if not 0.0 <= t_start < market.horizon:
        raise ValueError(f"t_start must lie in [0, horizon), got {t_start}")


def _estimate(values: NDArray[np.float64]) -> MCEstimate:
    n = len(values)
    return MCEstimate(
        value=float(values.mean()),
        stderr=float(values.std(ddof=1) / np.sqrt(n)),
        n_paths=n,
    )


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if count < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {count}")
    return count


def _run_paths(one_path, n_paths: int, rng: RngStream) -> NDArray[np.float64]:
    """Evaluate ``one_path`` under per-path streams, in index order.

    Path ``k`` always uses stream ``rng.stream_id + k`` and writes slot
    ``k`` of the result, so the returned array (and anything reduced from
    it) is identical for any worker count.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    values = np.empty(n_paths)

    def fill(start: int, stop: int) -> None:
        for k in range(start, stop):
            gen = RngStream(rng.seed, rng.stream_id + k).generator()
            values[k] = one_path(gen)

    n_threads = _thread_count()
    if n_threads == 1:
        fill(0, n_paths)
        return values
    bounds = np.linspace(0, n_paths, n_threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = [
            pool.submit(fill, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])
        ]
        for f in futures:
            f.result()
    return values
