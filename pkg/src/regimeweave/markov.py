"""Continuous-time Markov chains: generators, embedded chains, simulation.

The rate matrix convention throughout is ``rates[i, j]`` = jump rate from
state ``i`` to state ``j`` (row = from-state), with zero row sums and the
diagonal holding the negative exit rate.  States are 0-indexed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "GeneratorError",
    "NonSquare",
    "NegativeOffDiagonal",
    "RowSumViolation",
    "AbsorbingState",
    "Reducible",
    "GeneratorMatrix",
    "TransitionMatrix",
    "RegimePath",
    "RngStream",
    "validate_generator",
    "embedded_chain",
    "generator_from_embedded",
    "stationary_distribution",
    "simulate_path",
    "transition_probabilities",
]

ROW_SUM_TOL = 1e-9
STATIONARY_RESIDUAL_TOL = 1e-12


class GeneratorError(ValueError):
    """Base class for rate-matrix validation failures."""


class NonSquare(GeneratorError):
    pass


class NegativeOffDiagonal(GeneratorError):
    pass


class RowSumViolation(GeneratorError):
    pass


class AbsorbingState(GeneratorError):
    pass


class Reducible(GeneratorError):
    pass


@dataclass(frozen=True)
class GeneratorMatrix:
    """Validated CTMC rate matrix.

    Construct via :func:`validate_generator`; direct construction skips
    validation and is reserved for internal use on already-clean data.
    """

    rates: NDArray[np.float64]
    n_states: int

    def exit_rates(self) -> NDArray[np.float64]:
        """Per-state exit rates (negative diagonal)."""
        return -np.diag(self.rates)

    def __repr__(self) -> str:  # compact; full matrix via .rates
        return f"GeneratorMatrix(n_states={self.n_states})"


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic probability matrix over a finite state space."""

    probs: NDArray[np.float64]
    n_states: int

    def __post_init__(self) -> None:
        p = self.probs
        if p.shape != (self.n_states, self.n_states):
            raise NonSquare(f"expected ({self.n_states}, {self.n_states}), got {p.shape}")
        if np.any(p < -1e-15) or np.any(p > 1 + 1e-12):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise RowSumViolation("transition-matrix rows must sum to 1 within 1e-12")


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant CTMC trajectory on ``[t_start, t_end]``.

    ``times[0] == t_start`` carries the initial state; subsequent entries are
    jump instants, strictly increasing and < ``t_end``.  The state is
    ``states[k]`` on ``[times[k], times[k+1])``.
    """

    t_start: float
    t_end: float
    times: NDArray[np.float64]
    states: NDArray[np.int64]
    n_states: int

    def state_at(self, t: float) -> int:
        """State occupied at time ``t`` (right-continuous)."""
        if not self.t_start <= t <= self.t_end:
            raise ValueError(f"t={t} outside [{self.t_start}, {self.t_end}]")
        k = np.searchsorted(self.times, t, side="right") - 1
        return int(self.states[k])

    def segments(self) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int64]]:
        """Return (start, end, state) arrays of the constant-regime segments."""
        starts = self.times
        ends = np.append(self.times[1:], self.t_end)
        return starts, ends, self.states

    def occupancy(self) -> NDArray[np.float64]:
        """Fraction of total time spent in each state."""
        starts, ends, states = self.segments()
        occ = np.zeros(self.n_states)
        np.add.at(occ, states, ends - starts)
        return occ / (self.t_end - self.t_start)

    def n_jumps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Distinct stream ids under one seed give statistically independent
    substreams (Philox keyed streams), so Monte Carlo workers can be
    assigned ``stream_id = path index`` with results independent of the
    worker count.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))


def validate_generator(rates) -> GeneratorMatrix:
    """Validate a rate matrix and return it with the diagonal repaired.

    Off-diagonal entries must be nonnegative and each row must sum to zero
    within ``1e-9``; the diagonal is then reset to the exact negative sum of
    the off-diagonal row so downstream code can rely on exact zero row sums.

    Raises
    ------
    NonSquare, NegativeOffDiagonal, RowSumViolation
    """
    q = np.array(rates, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise NonSquare(f"rate matrix must be square, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise GeneratorError("rate matrix entries must be finite")
    n = q.shape[0]
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise NegativeOffDiagonal(f"negative rate {q[i, j]} at ({i}, {j})")
    row_sums = q.sum(axis=1)
    if np.any(np.abs(row_sums) > ROW_SUM_TOL):
        i = int(np.argmax(np.abs(row_sums)))
        raise RowSumViolation(f"row {i} sums to {row_sums[i]:.3e} (tolerance {ROW_SUM_TOL})")
    q = off
    np.fill_diagonal(q, -off.sum(axis=1))
    q.flags.writeable = False
    return GeneratorMatrix(rates=q, n_states=n)


def embedded_chain(generator: GeneratorMatrix) -> TransitionMatrix:
    """Jump-destination chain of a CTMC: ``P[i, j] = rate(i, j) / exit_rate(i)``.

    Diagonal entries are zero.  Raises :class:`AbsorbingState` if any state
    has zero exit rate.
    """
    q = generator.rates
    lam = generator.exit_rates()
    if np.any(lam == 0):
        raise AbsorbingState(f"state {int(np.argmax(lam == 0))} has zero exit rate")
    p = q / lam[:, None]
    np.fill_diagonal(p, 0.0)
    return TransitionMatrix(probs=p, n_states=generator.n_states)


def generator_from_embedded(embedded: TransitionMatrix, exit_rates) -> GeneratorMatrix:
    """Rebuild the rate matrix from a jump chain and per-state exit rates."""
    lam = np.asarray(exit_rates, dtype=float)
    q = embedded.probs * lam[:, None]
    np.fill_diagonal(q, -lam)
    return validate_generator(q)


def stationary_distribution(generator: GeneratorMatrix) -> NDArray[np.float64]:
    """Unique probability vector ``pi`` with ``pi @ Q = 0``.

    Raises :class:`Reducible` when the left null space of the rate matrix is
    not one-dimensional or the solution is not strictly positive.
    """
    from scipy.linalg import null_space

    q = generator.rates
    ns = null_space(q.T)
    if ns.shape[1] != 1:
        raise Reducible(f"left null space has dimension {ns.shape[1]}, expected 1")
    pi = ns[:, 0]
    pi = pi / pi.sum()
    if np.any(pi <= 0):
        raise Reducible("stationary solution is not strictly positive")
    residual = np.max(np.abs(pi @ q))
    if residual >= STATIONARY_RESIDUAL_TOL:
        raise Reducible(f"stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL}")
    return pi


def simulate_path(
    generator: GeneratorMatrix,
    initial_state: int,
    t_start: float,
    t_end: float,
    rng: RngStream | np.random.Generator,
    _block: int = 1024,
) -> RegimePath:
    """Simulate one trajectory by exponential holding times and jump draws.

    Holding time in state ``i`` is Exp(exit_rate(i)); the destination is
    drawn from the embedded-chain row.  The path is truncated at the first
    jump time >= ``t_end``.  Identical ``(generator, initial_state, horizon,
    rng)`` reproduce the path exactly.  Passing a ``numpy.random.Generator``
    instead of a stream lets a caller draw further variates from the same
    stream after the path.
    """
    if not 0 <= initial_state < generator.n_states:
        raise ValueError(f"initial_state {initial_state} out of range")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    q = generator.rates
    lam = generator.exit_rates()
    # Cumulative embedded rows; rows with zero exit rate are never consulted.
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(off / np.where(lam[:, None] == 0, 1.0, lam[:, None]), axis=1)

    gen = rng.generator() if isinstance(rng, RngStream) else rng
    times = [t_start]
    states = [int(initial_state)]
    t = t_start
    state = int(initial_state)
    exps = np.empty(0)
    unis = np.empty(0)
    k = 0
    while True:
        rate = lam[state]
        if rate == 0.0:
            break
        if k >= len(exps):
            # Draw in fixed-size blocks: one Exp(1) and one U(0,1) per jump,
            # so the stream consumption is a deterministic function of the path.
            exps = gen.standard_exponential(_block)
            unis = gen.random(_block)
            k = 0
        t = t + exps[k] / rate
        if t >= t_end:
            break
        state = int(np.searchsorted(cum[state], unis[k] * cum[state, -1], side="right"))
        times.append(t)
        states.append(state)
        k += 1
    return RegimePath(
        t_start=float(t_start),
        t_end=float(t_end),
        times=np.asarray(times, dtype=float),
        states=np.asarray(states, dtype=np.int64),
        n_states=generator.n_states,
    )


def transition_probabilities(generator: GeneratorMatrix, t: float) -> TransitionMatrix:
    """Transition matrix ``exp(Q t)`` computed by uniformization.

    The Poisson-weighted power series of the uniformized jump chain keeps
    every intermediate matrix row-stochastic and nonnegative, unlike the
    naive Taylor series.  Series truncated when the Poisson tail mass drops
    below 1e-14; large ``t`` handled by repeated squaring of a short-time
    factor, which preserves stochasticity as well.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = generator.n_states
    lam_max = float(np.max(generator.exit_rates()))
    if t == 0.0 or lam_max == 0.0:
        return TransitionMatrix(probs=np.eye(n), n_states=n)

    # Split so the base factor has uniformization intensity <= 8.
    n_squarings = max(0, int(np.ceil(np.log2(lam_max * t / 8.0))))
    dt = t / (2**n_squarings)

    w = np.eye(n) + generator.rates / lam_max  # uniformized DTMC, row-stochastic
    mu = lam_max * dt
    weight = np.exp(-mu)
    term = np.eye(n)
    p = weight * term
    mass = weight
    k = 0
    while 1.0 - mass > 1e-14:
        k += 1
        term = term @ w
        weight = weight * mu / k
        p = p + weight * term
        mass += weight
    p /= p.sum(axis=1, keepdims=True)  # remove the truncated tail mass

    for _ in range(n_squarings):
        p = p @ p
    return TransitionMatrix(probs=p, n_states=n)
