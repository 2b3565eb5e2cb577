"""Batch front end for compound-chain portfolio models.

Reads a JSON model configuration and runs one of five subcommands:
``compose`` (compound generator, embedded chain, stationary law),
``solve`` (income loading, regime factors or sampled value factors,
strategy, value grid), ``simulate`` (sample paths), ``evaluate``
(policy scores against the value prediction), and ``validate`` (the
cross-check battery).  All tables are CSV with 17-significant-digit
floats and all reports are JSON with sorted keys, so a rerun with the
same config and seed writes byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .compose import (
    CompoundChainSpec,
    CopulaSpec,
    NonGenerator,
    QuadratureFailure,
    Unsupported,
    compose_copula,
    compose_independent,
)
from .hjb import MarketModel, hjb_residual, solve_income_loading, solve_regime_factors
from .markov import (
    GeneratorError,
    GeneratorMatrix,
    RngStream,
    embedded_chain,
    stationary_distribution,
    transition_probabilities,
    validate_generator,
)
from .montecarlo import estimate_regime_factor, estimate_value_factor, estimate_value_mc
from .portfolio import (
    NORMAL_INCOME,
    RHO_ZERO,
    Strategy,
    build_solution,
    evaluate_policy,
    hedge_weight,
    merton_weight,
    optimal_strategy,
    simulate_wealth,
    value_function,
)

HASH_LENGTH = 12


class ParseError(ValueError):
    """The config file is missing, unreadable, or not JSON."""


class ValidationError(ValueError):
    """The config parsed but violates the schema; lists every problem."""

    def __init__(self, problems: Sequence[str]):
        self.problems = tuple(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


@dataclass(frozen=True)
class ModelConfig:
    """Validated model configuration plus the raw document it came from."""

    document: dict
    config_hash: str
    chain: CompoundChainSpec | None
    generator: GeneratorMatrix
    mapping: object | None
    market: MarketModel
    case: str
    n_steps: int
    n_paths: int
    dt: float | None
    seed: int


@dataclass(frozen=True)
class RunReport:
    """Artifact manifest for one subcommand run.

    Wall-clock timings are carried for operator feedback on stderr but are
    kept out of the persisted report file so reruns with the same config
    and seed are byte-identical.
    """

    command: str
    config_hash: str
    seed: int
    inputs: dict
    outputs: dict
    provenance: dict
    results: dict
    timings: dict


# ---------------------------------------------------------------------------
# configuration loading


def load_config(path: str | Path) -> ModelConfig:
    """Read and validate a JSON model configuration.

    Every violation is collected before raising, so one round trip
    surfaces all problems; field paths use dotted JSON notation, for
    example ``market.rho`` or ``market.regimes[2].sigma``.

    Raises
    ------
    ParseError
        Unreadable file or malformed JSON.
    ValidationError
        Schema or invariant violations, with one message per problem.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ParseError(f"config {path} must hold a JSON object at the top level")

    problems: list[str] = []
    chain, generator, mapping = _load_chains(document, problems)
    market = _load_market(document, generator, problems)
    n_steps, n_paths, dt, seed = _load_numerics(document, problems)
    case = _load_case(document, market, problems)
    for key in sorted(set(document) - {"chains", "market", "numerics", "case"}):
        problems.append(f"{key}: unknown top-level section")
    if problems:
        raise ValidationError(problems)
    return ModelConfig(
        document=document,
        config_hash=hashlib.sha256(raw).hexdigest()[:HASH_LENGTH],
        chain=chain,
        generator=generator,
        mapping=mapping,
        market=market,
        case=case,
        n_steps=n_steps,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


def _number(section, key, path, problems, *, required=True, default=None):
    if key not in section:
        if required:
            problems.append(f"{path}: missing required field")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{path}: expected a number, got {value!r}")
        return None
    if not math.isfinite(value):
        problems.append(f"{path}: must be finite, got {value!r}")
        return None
    return float(value)


def _integer(section, key, path, problems, *, default=None):
    if key not in section:
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        problems.append(f"{path}: expected an integer, got {value!r}")
        return None
    return value


def _load_generator(raw, path, problems):
    try:
        return validate_generator(raw)
    except (GeneratorError, TypeError, ValueError) as exc:
        problems.append(f"{path}: {exc}")
        return None


def _load_chains(document, problems):
    section = document.get("chains")
    if not isinstance(section, dict):
        problems.append("chains: required section must be a JSON object")
        return None, None, None
    for key in sorted(set(section) - {"compound", "epsilon", "zeta", "composition"}):
        problems.append(f"chains.{key}: unknown field")
    has_compound = "compound" in section
    has_parts = "epsilon" in section or "zeta" in section
    if has_compound and has_parts:
        problems.append("chains: give either compound or epsilon/zeta, not both")
        return None, None, None
    if has_compound:
        if "composition" in section:
            problems.append("chains.composition: meaningless with a direct compound generator")
        return None, _load_generator(section["compound"], "chains.compound", problems), None
    if "epsilon" not in section or "zeta" not in section:
        problems.append("chains: needs either compound or both epsilon and zeta")
        return None, None, None
    eps = _load_generator(section["epsilon"], "chains.epsilon", problems)
    zeta = _load_generator(section["zeta"], "chains.zeta", problems)
    method, copula = _load_composition(section.get("composition"), problems)
    if eps is None or zeta is None or method is None:
        return None, None, None
    try:
        if method == "independent":
            chain = compose_independent(eps, zeta)
        else:
            chain = compose_copula(eps, zeta, copula)
    except (Unsupported, NonGenerator, QuadratureFailure) as exc:
        problems.append(f"chains.composition: {exc}")
        return None, None, None
    return chain, chain.generator, chain.mapping


def _load_composition(section, problems):
    if section is None:
        return "independent", None
    if not isinstance(section, dict):
        problems.append("chains.composition: must be a JSON object")
        return None, None
    method = section.get("method")
    if method == "independent":
        for key in sorted(set(section) - {"method"}):
            problems.append(f"chains.composition.{key}: unknown field")
        return "independent", None
    if method == "copula":
        for key in sorted(set(section) - {"method", "correlation", "fd_step"}):
            problems.append(f"chains.composition.{key}: unknown field")
        correlation = _number(section, "correlation", "chains.composition.correlation", problems)
        fd_step = _number(
            section, "fd_step", "chains.composition.fd_step", problems, required=False, default=1e-4
        )
        ok = correlation is not None and fd_step is not None
        if correlation is not None and not -1.0 <= correlation <= 1.0:
            problems.append(
                f"chains.composition.correlation: must lie in [-1, 1], got {correlation:g}"
            )
            ok = False
        if fd_step is not None and not 0.0 < fd_step <= 0.1:
            problems.append(f"chains.composition.fd_step: must lie in (0, 0.1], got {fd_step:g}")
            ok = False
        if not ok:
            return None, None
        return "copula", CopulaSpec(correlation=correlation, fd_step=fd_step)
    problems.append(f"chains.composition.method: expected 'independent' or 'copula', got {method!r}")
    return None, None


def _load_market(document, generator, problems):
    section = document.get("market")
    if not isinstance(section, dict):
        problems.append("market: required section must be a JSON object")
        return None
    for key in sorted(set(section) - {"r", "rho", "gamma", "T", "regimes"}):
        problems.append(f"market.{key}: unknown field")
    before = len(problems)
    rate = _number(section, "r", "market.r", problems)
    rho = _number(section, "rho", "market.rho", problems)
    if rho is not None and not -1.0 <= rho <= 1.0:
        problems.append(f"market.rho: must lie in [-1, 1], got {rho:g}")
    gamma = _number(section, "gamma", "market.gamma", problems)
    if gamma is not None and gamma <= 0.0:
        problems.append(f"market.gamma: must be positive, got {gamma:g}")
    horizon = _number(section, "T", "market.T", problems)
    if horizon is not None and horizon <= 0.0:
        problems.append(f"market.T: must be positive, got {horizon:g}")
    regimes = section.get("regimes")
    alpha, sigma, mu, delta = [], [], [], []
    if not isinstance(regimes, list) or not regimes:
        problems.append("market.regimes: must be a non-empty array of regime objects")
    else:
        if generator is not None and len(regimes) != generator.n_states:
            problems.append(
                f"market.regimes: got {len(regimes)} regimes for a compound chain"
                f" with {generator.n_states} states"
            )
        for k, entry in enumerate(regimes):
            if not isinstance(entry, dict):
                problems.append(f"market.regimes[{k}]: must be a JSON object")
                continue
            for key in sorted(set(entry) - {"alpha", "sigma", "mu", "delta"}):
                problems.append(f"market.regimes[{k}].{key}: unknown field")
            a = _number(entry, "alpha", f"market.regimes[{k}].alpha", problems)
            s = _number(entry, "sigma", f"market.regimes[{k}].sigma", problems)
            if s is not None and s <= 0.0:
                problems.append(f"market.regimes[{k}].sigma: must be positive, got {s:g}")
            m = _number(entry, "mu", f"market.regimes[{k}].mu", problems)
            d = _number(entry, "delta", f"market.regimes[{k}].delta", problems)
            if d is not None and d < 0.0:
                problems.append(f"market.regimes[{k}].delta: must be nonnegative, got {d:g}")
            alpha.append(a)
            sigma.append(s)
            mu.append(m)
            delta.append(d)
    if len(problems) > before or generator is None:
        return None
    try:
        return MarketModel(
            rate=rate,
            correlation=rho,
            risk_aversion=gamma,
            horizon=horizon,
            stock_drift=np.array(alpha),
            stock_vol=np.array(sigma),
            income_drift=np.array(mu),
            income_vol=np.array(delta),
            generator=generator,
        )
    except ValueError as exc:
        problems.append(f"market: {exc}")
        return None


def _load_numerics(document, problems):
    section = document.get("numerics", {})
    if not isinstance(section, dict):
        problems.append("numerics: must be a JSON object")
        return 2048, 20000, None, 0
    for key in sorted(set(section) - {"n_steps", "n_paths", "dt", "seed"}):
        problems.append(f"numerics.{key}: unknown field")
    n_steps = _integer(section, "n_steps", "numerics.n_steps", problems, default=2048)
    if n_steps is not None and (n_steps < 8 or n_steps % 2):
        problems.append(f"numerics.n_steps: must be an even integer >= 8, got {n_steps}")
    n_paths = _integer(section, "n_paths", "numerics.n_paths", problems, default=20000)
    if n_paths is not None and n_paths < 2:
        problems.append(f"numerics.n_paths: must be at least 2, got {n_paths}")
    dt = _number(section, "dt", "numerics.dt", problems, required=False)
    if dt is not None and dt <= 0.0:
        problems.append(f"numerics.dt: must be positive, got {dt:g}")
    seed = _integer(section, "seed", "numerics.seed", problems, default=0)
    if seed is not None and not 0 <= seed < 2**63:
        problems.append(f"numerics.seed: must lie in [0, 2**63), got {seed}")
    return n_steps if n_steps else 2048, n_paths if n_paths else 20000, dt, seed if seed else 0


def _load_case(document, market, problems):
    case = document.get("case", NORMAL_INCOME)
    if case not in (RHO_ZERO, NORMAL_INCOME):
        problems.append(f"case: expected {RHO_ZERO!r} or {NORMAL_INCOME!r}, got {case!r}")
        return NORMAL_INCOME
    if case == RHO_ZERO and market is not None and market.correlation != 0.0:
        problems.append(f"case: {RHO_ZERO!r} requires market.rho = 0, got {market.correlation:g}")
    return case


# ---------------------------------------------------------------------------
# deterministic output helpers


def _json_text(value, indent: int = 0) -> str:
    """Render JSON with sorted keys and 17-significant-digit floats."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = (
            f"{inner}{json.dumps(str(k))}: {_json_text(v, indent + 1)}"
            for k, v in sorted(value.items())
        )
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = (f"{inner}{_json_text(v, indent + 1)}" for v in value)
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return "null"
    return json.dumps(value, ensure_ascii=False)


def _cell(value) -> str:
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if number == 0.0:  # normalize negative zero
            number = 0.0
        return format(number, ".17g")
    return str(value)


def _write_csv(path: Path, comments: Sequence[str], columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as stream:
        for line in comments:
            stream.write(f"# {line}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _comments(config: ModelConfig, units: str, provenance: str) -> list[str]:
    return [
        f"units: {units}",
        f"provenance: {provenance}",
        f"config: {config.config_hash} seed: {config.seed}",
    ]


def _state_labels(n_states: int, mapping) -> list[str]:
    if mapping is None:
        return [str(k) for k in range(n_states)]
    labels = []
    for k in range(n_states):
        i, j = mapping.pair(k)
        labels.append(f"{k} (eps={i},zeta={j})")
    return labels


def _matrix_rows(labels, matrix):
    return [[labels[i], *matrix[i]] for i in range(len(labels))]


def _persist_report(report: RunReport, out_dir: Path) -> None:
    payload = {
        "command": report.command,
        "config_hash": report.config_hash,
        "seed": report.seed,
        "inputs": report.inputs,
        "outputs": report.outputs,
        "provenance": report.provenance,
        "results": report.results,
    }
    (out_dir / f"{report.command}_report.json").write_text(_json_text(payload) + "\n")


def _sim_steps(config: ModelConfig) -> int:
    dt = config.dt if config.dt is not None else config.market.horizon / 256.0
    return max(2, math.ceil(config.market.horizon / dt))


def parse_grid(text: str) -> list[np.ndarray]:
    """Parse ``start:stop:count`` axis specs separated by commas."""
    axes = []
    for part in text.split(","):
        fields = part.split(":")
        if len(fields) != 3:
            raise ParseError(f"grid axis {part!r} must have the form start:stop:count")
        try:
            start, stop, count = float(fields[0]), float(fields[1]), int(fields[2])
        except ValueError as exc:
            raise ParseError(f"grid axis {part!r}: {exc}") from exc
        if count < 1:
            raise ParseError(f"grid axis {part!r}: count must be at least 1")
        axes.append(np.linspace(start, stop, count))
    return axes


# ---------------------------------------------------------------------------
# subcommands


def cmd_compose(config: ModelConfig, out_dir: Path) -> RunReport:
    """Emit the compound generator, embedded chain, and stationary law."""
    started = time.perf_counter()
    generator = config.generator
    labels = _state_labels(generator.n_states, config.mapping)
    embedded = embedded_chain(generator)
    stationary = stationary_distribution(generator)
    method = config.chain.method if config.chain is not None else "direct"

    outputs = {
        "compound_generator_json": "compound_generator.json",
        "compound_generator_csv": "compound_generator.csv",
        "embedded_chain": "embedded_chain.csv",
        "stationary_distribution": "stationary_distribution.csv",
    }
    provenance = {name: "closed-form" for name in outputs}
    (out_dir / "compound_generator.json").write_text(
        _json_text(
            {
                "config": config.config_hash,
                "labels": labels,
                "method": method,
                "n_states": generator.n_states,
                "provenance": "closed-form",
                "rates": generator.rates,
            }
        )
        + "\n"
    )
    _write_csv(
        out_dir / "compound_generator.csv",
        _comments(config, "off-diagonal entries are jump rates per unit time", "closed-form"),
        ["state", *labels],
        _matrix_rows(labels, generator.rates),
    )
    _write_csv(
        out_dir / "embedded_chain.csv",
        _comments(config, "jump-destination probabilities, dimensionless", "closed-form"),
        ["state", *labels],
        _matrix_rows(labels, embedded.probs),
    )
    _write_csv(
        out_dir / "stationary_distribution.csv",
        _comments(config, "long-run occupancy probabilities, dimensionless", "closed-form"),
        ["state", "probability"],
        [[labels[k], stationary[k]] for k in range(generator.n_states)],
    )
    results = {
        "method": method,
        "n_states": generator.n_states,
        "stationary_distribution": stationary,
    }
    if config.chain is not None and method == "copula":
        independent = compose_independent(config.chain.eps, config.chain.zeta)
        diff = generator.rates - independent.generator.rates
        _write_csv(
            out_dir / "independent_diff.csv",
            _comments(
                config, "copula minus independent compound rates per unit time", "closed-form"
            ),
            ["state", *labels],
            _matrix_rows(labels, diff),
        )
        outputs["independent_diff"] = "independent_diff.csv"
        provenance["independent_diff"] = "closed-form"
        results["max_abs_rate_diff"] = float(np.max(np.abs(diff)))

    outputs["report"] = "compose_report.json"
    provenance["report"] = "closed-form"
    report = RunReport(
        command="compose",
        config_hash=config.config_hash,
        seed=config.seed,
        inputs={"config": config.document},
        outputs=outputs,
        provenance=provenance,
        results=results,
        timings={"total": time.perf_counter() - started},
    )
    _persist_report(report, out_dir)
    return report


def cmd_solve(
    config: ModelConfig,
    out_dir: Path,
    grid: list[np.ndarray] | None = None,
    n_paths: int | None = None,
) -> RunReport:
    """Emit the income loading, regime or value factors, strategy, and value grid.

    The normal-income case solves the factor ODE system; the rho0 case
    estimates the wealth-free value factor by Monte Carlo on a (t, y)
    grid instead, regime by regime.
    """
    started = time.perf_counter()
    market = config.market
    horizon = market.horizon
    n_regimes = market.n_regimes
    labels = _state_labels(n_regimes, config.mapping)
    axes = grid if grid is not None else []
    if len(axes) > 3:
        raise ParseError("--grid accepts at most three axes: t, x, y")
    t_axis = axes[0] if len(axes) > 0 else np.linspace(0.0, 0.9 * horizon, 5)
    x_axis = axes[1] if len(axes) > 1 else np.linspace(0.0, 2.0, 5)
    y_axis = axes[2] if len(axes) > 2 else np.linspace(-1.0, 1.0, 5)
    curve_t = np.linspace(0.0, horizon, 201)

    loading = solve_income_loading(market)
    outputs = {"income_loading": "income_loading.csv", "strategy": "strategy.csv"}
    provenance = {"income_loading": "closed-form", "strategy": "closed-form"}
    _write_csv(
        out_dir / "income_loading.csv",
        _comments(config, "t in time units; m is the exponent loading per unit income", "closed-form"),
        ["t", "m"],
        zip(curve_t, loading.value(curve_t)),
    )

    strategy_columns = ["t"]
    for label in labels:
        strategy_columns += [f"merton[{label}]", f"hedge[{label}]", f"total[{label}]"]
    merton = np.column_stack([merton_weight(market, curve_t, k) for k in range(n_regimes)])
    hedge = np.column_stack([hedge_weight(market, curve_t, k) for k in range(n_regimes)])
    strategy_rows = []
    for i, t in enumerate(curve_t):
        row = [t]
        for k in range(n_regimes):
            row += [merton[i, k], hedge[i, k], merton[i, k] + hedge[i, k]]
        strategy_rows.append(row)
    _write_csv(
        out_dir / "strategy.csv",
        _comments(config, "money units held in the stock", "closed-form"),
        strategy_columns,
        strategy_rows,
    )

    results = {"case": config.case, "m_at_0": float(loading.value(0.0))}
    if config.case == NORMAL_INCOME:
        factors = solve_regime_factors(market, n_steps=config.n_steps)
        _write_csv(
            out_dir / "regime_factors.csv",
            _comments(config, "dimensionless multiplicative value factors", "ODE"),
            ["t", *[f"h[{label}]" for label in labels]],
            [[t, *factors.value(t)] for t in curve_t],
        )
        outputs["regime_factors"] = "regime_factors.csv"
        provenance["regime_factors"] = "ODE"
        value = value_function(market, factors=factors)
        value_rows = []
        for t in t_axis:
            for x in x_axis:
                for y in y_axis:
                    for k in range(n_regimes):
                        value_rows.append([t, x, y, labels[k], value(t, x, y, k)])
        _write_csv(
            out_dir / "value_grid.csv",
            _comments(config, "expected terminal utility, dimensionless", "ODE"),
            ["t", "x", "y", "regime", "value"],
            value_rows,
        )
        outputs["value_grid"] = "value_grid.csv"
        provenance["value_grid"] = "ODE"
        results["h_at_0"] = factors.value(0.0)
    else:
        if np.any(t_axis >= horizon):
            raise ParseError("grid: t values must lie below the horizon for MC value factors")
        n_mc = n_paths if n_paths is not None else config.n_paths
        n_sim = _sim_steps(config)
        gamma = market.risk_aversion
        factor_rows, value_rows = [], []
        point = 0
        for t in t_axis:
            growth = math.exp(market.rate * (horizon - t))
            for y in y_axis:
                for k in range(n_regimes):
                    rng = RngStream(config.seed, point * n_mc)
                    point += 1
                    est = estimate_value_factor(market, t, y, k, n_mc, n_sim, rng)
                    factor_rows.append([t, y, labels[k], est.value, est.stderr, est.n_paths])
                    for x in x_axis:
                        scale = -math.exp(-gamma * x * growth) / gamma
                        value_rows.append(
                            [t, x, y, labels[k], scale * est.value, abs(scale) * est.stderr]
                        )
        _write_csv(
            out_dir / "value_factor_mc.csv",
            _comments(config, "dimensionless wealth-free value factors", "MC±stderr"),
            ["t", "y", "regime", "estimate", "stderr", "n_paths"],
            factor_rows,
        )
        outputs["value_factor_mc"] = "value_factor_mc.csv"
        provenance["value_factor_mc"] = "MC±stderr"
        _write_csv(
            out_dir / "value_grid.csv",
            _comments(config, "expected terminal utility, dimensionless", "MC±stderr"),
            ["t", "x", "y", "regime", "value", "stderr"],
            value_rows,
        )
        outputs["value_grid"] = "value_grid.csv"
        provenance["value_grid"] = "MC±stderr"
        results["n_paths"] = n_mc

    outputs["report"] = "solve_report.json"
    provenance["report"] = "closed-form"
    report = RunReport(
        command="solve",
        config_hash=config.config_hash,
        seed=config.seed,
        inputs={"config": config.document},
        outputs=outputs,
        provenance=provenance,
        results=results,
        timings={"total": time.perf_counter() - started},
    )
    _persist_report(report, out_dir)
    return report


def cmd_simulate(
    config: ModelConfig,
    out_dir: Path,
    wealth_start: float = 1.0,
    income_start: float = 0.0,
    regime: int = 0,
    n_paths: int | None = None,
) -> RunReport:
    """Emit sample (wealth, income, regime) paths under the optimal strategy."""
    started = time.perf_counter()
    market = config.market
    if not 0 <= regime < market.n_regimes:
        raise ValidationError([f"i0: regime index must lie in [0, {market.n_regimes})"])
    strategy = optimal_strategy(market, config.case)
    n = n_paths if n_paths is not None else min(config.n_paths, 16)
    n_sim = _sim_steps(config)
    labels = _state_labels(market.n_regimes, config.mapping)

    rows, terminal = [], []
    for j in range(n):
        path = simulate_wealth(
            market, strategy, 0.0, wealth_start, income_start, regime, n_sim, RngStream(config.seed, j)
        )
        for k, t in enumerate(path.times):
            # regimes and positions sit on interval left endpoints; the final
            # node reuses the last interval's regime and holds no position
            held = path.regimes[min(k, len(path.regimes) - 1)]
            position = path.positions[k] if k < len(path.positions) else ""
            rows.append([j, t, path.wealth[k], path.income[k], labels[held], position])
        terminal.append(path.wealth[-1])
    _write_csv(
        out_dir / "paths.csv",
        _comments(
            config,
            "t in time units; wealth, income, position in money units",
            "MC sample paths (exact conditional scheme)",
        ),
        ["path", "t", "wealth", "income", "regime", "position"],
        rows,
    )
    terminal = np.asarray(terminal)
    report = RunReport(
        command="simulate",
        config_hash=config.config_hash,
        seed=config.seed,
        inputs={
            "config": config.document,
            "i0": regime,
            "n_paths": n,
            "x0": wealth_start,
            "y0": income_start,
        },
        outputs={"paths": "paths.csv", "report": "simulate_report.json"},
        provenance={"paths": "MC sample paths (exact conditional scheme)", "report": "closed-form"},
        results={
            "n_paths": n,
            "terminal_wealth_max": float(terminal.max()),
            "terminal_wealth_mean": float(terminal.mean()),
            "terminal_wealth_min": float(terminal.min()),
        },
        timings={"total": time.perf_counter() - started},
    )
    _persist_report(report, out_dir)
    return report


def cmd_evaluate(
    config: ModelConfig,
    out_dir: Path,
    wealth_start: float = 1.0,
    income_start: float = 0.0,
    regime: int = 0,
    comparisons: Sequence[float] = (),
    n_paths: int | None = None,
) -> RunReport:
    """Score the optimal strategy and constant comparisons on common paths."""
    started = time.perf_counter()
    market = config.market
    if not 0 <= regime < market.n_regimes:
        raise ValidationError([f"i0: regime index must lie in [0, {market.n_regimes})"])
    bundle = build_solution(market, config.case, n_steps=config.n_steps)
    predicted = float(bundle.value(0.0, wealth_start, income_start, regime))
    n = n_paths if n_paths is not None else config.n_paths
    n_sim = _sim_steps(config)

    policies = [("pi-hat (optimal)", bundle.strategy)]
    for level in comparisons:
        policies.append((f"constant pi={level:g}", _constant_strategy(level)))
    rows, scored = [], {}
    for name, strategy in policies:
        # the shared stream pairs every policy on identical scenarios
        est = evaluate_policy(
            market, strategy, 0.0, wealth_start, income_start, regime, n, n_sim,
            RngStream(config.seed, 0),
        )
        rows.append([name, est.value, est.stderr, est.n_paths, predicted, est.value - predicted])
        scored[name] = {"estimate": est.value, "stderr": est.stderr}
    _write_csv(
        out_dir / "evaluation.csv",
        _comments(config, "expected terminal utility, dimensionless", "MC±stderr"),
        ["policy", "estimate", "stderr", "n_paths", "predicted_value", "gap"],
        rows,
    )
    report = RunReport(
        command="evaluate",
        config_hash=config.config_hash,
        seed=config.seed,
        inputs={
            "config": config.document,
            "comparisons": list(comparisons),
            "i0": regime,
            "n_paths": n,
            "x0": wealth_start,
            "y0": income_start,
        },
        outputs={"evaluation": "evaluation.csv", "report": "evaluate_report.json"},
        provenance={"evaluation": "MC±stderr", "report": "closed-form"},
        results={"policies": scored, "predicted_value": predicted},
        timings={"total": time.perf_counter() - started},
    )
    _persist_report(report, out_dir)
    return report


def _constant_strategy(level: float) -> Strategy:
    def position(t, income, regime):
        return level

    return Strategy(position=position, label=f"constant pi={level:g}")


def cmd_validate(config: ModelConfig, out_dir: Path, n_paths: int | None = None) -> RunReport:
    """Run the cross-check battery and emit pass/fail rows with margins."""
    started = time.perf_counter()
    market = config.market
    n_mc = n_paths if n_paths is not None else min(config.n_paths, 20000)
    n_sim = _sim_steps(config)
    checks: list[tuple[str, str, float, float, str]] = []

    if config.chain is None:
        checks.append(
            ("kronecker_oracle", "closed-form", 0.0, 0.0, "skipped: compound generator given directly")
        )
        checks.append(
            ("simultaneous_jumps_zero", "closed-form", 0.0, 0.0, "skipped: no component chains")
        )
        checks.append(
            ("marginal_preservation", "closed-form", 0.0, 0.0, "skipped: no component chains")
        )
    else:
        eps, zeta = config.chain.eps, config.chain.zeta
        independent = compose_independent(eps, zeta)
        oracle = _loop_kronecker(eps.rates, zeta.rates)
        scale = max(np.max(np.abs(eps.rates)), np.max(np.abs(zeta.rates)))
        checks.append(
            (
                "kronecker_oracle",
                "closed-form",
                float(np.max(np.abs(independent.generator.rates - oracle))),
                1e-13 * scale,
                "independent composition vs loop-built Kronecker sum",
            )
        )
        checks.append(
            (
                "simultaneous_jumps_zero",
                "closed-form",
                _simultaneous_mass(independent),
                0.0,
                "rates where both components would jump at once",
            )
        )
        checks.append(
            (
                "marginal_preservation",
                "closed-form",
                max(_marginal_gap(independent, t) for t in (0.1, 1.0, 5.0)),
                1e-10,
                "compound time-t law marginalized vs component laws at t in {0.1, 1, 5}",
            )
        )

    factors = solve_regime_factors(market, n_steps=config.n_steps)
    worst = 0.0
    for regime in range(market.n_regimes):
        est = estimate_regime_factor(
            market, 0.0, regime, n_mc, RngStream(config.seed, 1_000_000 * (regime + 1))
        )
        worst = max(worst, abs(est.value - float(factors.value(0.0, regime))) / est.stderr)
    checks.append(
        (
            "h_mc_vs_ode",
            "MC±stderr",
            worst,
            4.0,
            f"regime factors at t=0, {n_mc} paths per regime, gap in stderr units",
        )
    )

    value = value_function(market, factors=factors)
    strategy = optimal_strategy(market, config.case)
    est = evaluate_policy(market, strategy, 0.0, 1.0, 0.0, 0, n_mc, n_sim, RngStream(config.seed, 0))
    predicted = float(value(0.0, 1.0, 0.0, 0))
    checks.append(
        (
            "policy_vs_value",
            "MC±stderr",
            abs(est.value - predicted) / est.stderr,
            4.0,
            f"optimal-policy score vs value prediction, {n_mc} paths, gap in stderr units",
        )
    )

    ratio = 0.0
    for t in np.linspace(0.05 * market.horizon, 0.95 * market.horizon, 3):
        for x in (0.0, 1.0, 2.0):
            for y in (-0.5, 0.0, 0.5):
                for regime in range(market.n_regimes):
                    residual = hjb_residual(market, value, t, x, y, regime)
                    ratio = max(ratio, abs(residual) / (1.0 + abs(value(t, x, y, regime))))
    checks.append(
        (
            "hjb_residual",
            "ODE",
            ratio,
            1e-4,
            "max |residual| / (1 + |V|) over a 3x3x3 grid and all regimes",
        )
    )

    market_rho0 = replace(market, correlation=0.0)
    hedge_mass = max(
        abs(float(hedge_weight(market_rho0, t, regime)))
        for t in np.linspace(0.0, market.horizon, 7)
        for regime in range(market.n_regimes)
    )
    checks.append(
        ("rho_zero_hedge", "closed-form", hedge_mass, 0.0, "hedge position with correlation forced to 0")
    )
    est0 = estimate_value_mc(
        market_rho0, 0.0, 1.0, 0.2, 0, n_mc, n_sim, RngStream(config.seed, 50_000_000)
    )
    predicted0 = float(value_function(market_rho0, n_steps=config.n_steps)(0.0, 1.0, 0.2, 0))
    checks.append(
        (
            "rho_zero_value",
            "MC±stderr",
            abs(est0.value - predicted0) / est0.stderr,
            4.0,
            f"sampled vs deterministic value at zero correlation, {n_mc} paths, stderr units",
        )
    )

    rows, summary, n_failed = [], {}, 0
    for name, source, margin, tolerance, detail in checks:
        passed = margin <= tolerance
        n_failed += not passed
        rows.append([name, source, "pass" if passed else "fail", margin, tolerance, detail])
        summary[name] = {"margin": margin, "status": "pass" if passed else "fail", "tolerance": tolerance}
    _write_csv(
        out_dir / "validation.csv",
        _comments(
            config,
            "margin and tolerance are check-specific: rates, probabilities, stderr units, residual ratios",
            "closed-form / ODE / MC±stderr per row",
        ),
        ["check", "provenance", "status", "margin", "tolerance", "detail"],
        rows,
    )
    report = RunReport(
        command="validate",
        config_hash=config.config_hash,
        seed=config.seed,
        inputs={"config": config.document},
        outputs={"report": "validate_report.json", "validation": "validation.csv"},
        provenance={"report": "closed-form", "validation": "closed-form / ODE / MC±stderr per row"},
        results={"checks": summary, "n_checks": len(checks), "n_failed": n_failed},
        timings={"total": time.perf_counter() - started},
    )
    _persist_report(report, out_dir)
    return report


def _loop_kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # element-by-element rebuild, deliberately independent of np.kron
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n * m, n * m))
    for i in range(n):
        for j in range(m):
            row = i + n * j
            for i2 in range(n):
                out[row, i2 + n * j] += a[i, i2]
            for j2 in range(m):
                out[row, i + n * j2] += b[j, j2]
    return out


def _simultaneous_mass(chain: CompoundChainSpec) -> float:
    mapping = chain.mapping
    worst = 0.0
    for k in range(mapping.n_compound):
        for k2 in range(mapping.n_compound):
            i, j = mapping.pair(k)
            i2, j2 = mapping.pair(k2)
            if i != i2 and j != j2:
                worst = max(worst, abs(float(chain.generator.rates[k, k2])))
    return worst


def _marginal_gap(chain: CompoundChainSpec, t: float) -> float:
    n, m = chain.eps.n_states, chain.zeta.n_states
    joint = transition_probabilities(chain.generator, t).probs.reshape(m, n, m, n)
    p_eps = transition_probabilities(chain.eps, t).probs
    p_zeta = transition_probabilities(chain.zeta, t).probs
    gap_eps = np.max(np.abs(joint.sum(axis=2) - p_eps[None, :, :]))
    gap_zeta = np.max(np.abs(joint.sum(axis=3) - p_zeta[:, None, :]))
    return float(max(gap_eps, gap_zeta))


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimeweave",
        description="Compose compound regime chains and solve the income-hedging portfolio model.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", required=True, help="path to the JSON model configuration")
        sub.add_argument("--seed", type=int, default=None, help="override numerics.seed")
        sub.add_argument("--out", default="out", help="output directory, created if missing")
        sub.add_argument("--paths", type=int, default=None, help="override the Monte Carlo path count")

    def start_state(sub):
        sub.add_argument("--x0", type=float, default=1.0, help="initial wealth in money units")
        sub.add_argument("--y0", type=float, default=0.0, help="initial income level in money units")
        sub.add_argument("--i0", type=int, default=0, help="initial compound regime index")

    common(subparsers.add_parser("compose", help="emit the compound chain artifacts"))
    solve = subparsers.add_parser("solve", help="emit loading, factors, strategy, and value tables")
    common(solve)
    solve.add_argument(
        "--grid",
        default=None,
        help="up to three comma-separated axes start:stop:count for t, x, y",
    )
    simulate = subparsers.add_parser("simulate", help="emit sample wealth/income/regime paths")
    common(simulate)
    start_state(simulate)
    evaluate = subparsers.add_parser("evaluate", help="score policies against the value prediction")
    common(evaluate)
    start_state(evaluate)
    evaluate.add_argument(
        "--compare",
        default="",
        help="comma-separated constant stock positions to score against the optimum",
    )
    common(subparsers.add_parser("validate", help="run the cross-check battery"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns 0 on success, 1 on validation failure, 2 on config errors."""
    args = _build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**63:
                raise ValidationError([f"--seed: must lie in [0, 2**63), got {args.seed}"])
            config = replace(config, seed=args.seed)
        if args.paths is not None and args.paths < 2:
            raise ValidationError([f"--paths: must be at least 2, got {args.paths}"])
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "compose":
            report = cmd_compose(config, out_dir)
        elif args.command == "solve":
            grid = parse_grid(args.grid) if args.grid else None
            report = cmd_solve(config, out_dir, grid=grid, n_paths=args.paths)
        elif args.command == "simulate":
            report = cmd_simulate(config, out_dir, args.x0, args.y0, args.i0, n_paths=args.paths)
        elif args.command == "evaluate":
            try:
                levels = [float(part) for part in args.compare.split(",") if part.strip()]
            except ValueError as exc:
                raise ParseError(f"--compare: {exc}") from exc
            report = cmd_evaluate(
                config, out_dir, args.x0, args.y0, args.i0, comparisons=levels, n_paths=args.paths
            )
        else:
            report = cmd_validate(config, out_dir, n_paths=args.paths)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for name in sorted(report.outputs):
        print(f"{name}: {Path(args.out) / report.outputs[name]}")
    print(f"# {args.command}: wall {time.perf_counter() - started:.2f} s", file=sys.stderr)
    if args.command == "validate" and report.results["n_failed"]:
        print(
            f"validation failed: {report.results['n_failed']} of"
            f" {report.results['n_checks']} checks",
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
