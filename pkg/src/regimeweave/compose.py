"""Compound chains built from two marginal regime processes.

A pair of independent chains (sizes m and n) composes into a single chain on
m*n states via the Kronecker sum of the rate matrices; discrete-time chains
compose via the Kronecker product.  Dependence between the marginal jump
processes is introduced through a Gaussian copula on the short-horizon jump
indicators, with the compound rate matrix recovered by finite-difference
extrapolation.

Compound state numbering puts the first component fastest: state ``(i, j)``
maps to ``i + m * j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtr, ndtri, pdtr

from .markov import GeneratorMatrix, TransitionMatrix, validate_generator

__all__ = [
    "Unsupported",
    "NonGenerator",
    "QuadratureFailure",
    "StateMapping",
    "CopulaSpec",
    "CompoundChainSpec",
    "kronecker_sum",
    "compose_independent",
    "compose_discrete_product",
    "compose_copula",
    "marginalize",
    "bivariate_normal_cdf",
    "gaussian_copula",
    "copula_joint_pmf",
]

TWO_PI = 2.0 * np.pi

# negative extrapolated rates beyond this magnitude abort composition;
# anything smaller is roundoff and is clamped to zero
RATE_CLAMP = 1e-8


class Unsupported(ValueError):
    """Requested composition is outside the implemented family."""


class NonGenerator(ValueError):
    """Extrapolated rates do not form a valid rate matrix."""


class QuadratureFailure(ArithmeticError):
    """Bivariate normal quadrature produced an out-of-bounds probability."""


@dataclass(frozen=True)
class StateMapping:
    """Bijection between pairs ``(i, j)`` and compound indices ``i + n_first * j``."""

    n_first: int
    n_second: int

    def __post_init__(self) -> None:
        if self.n_first < 1 or self.n_second < 1:
            raise ValueError("component chains need at least one state each")

    @property
    def n_compound(self) -> int:
        return self.n_first * self.n_second

    def index(self, i: int, j: int) -> int:
        if not (0 <= i < self.n_first and 0 <= j < self.n_second):
            raise ValueError(f"pair ({i}, {j}) out of range")
        return i + self.n_first * j

    def pair(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_compound:
            raise ValueError(f"compound index {k} out of range")
        return k % self.n_first, k // self.n_first


@dataclass(frozen=True)
class CopulaSpec:
    """Gaussian-copula coupling of the two marginal jump processes.

    ``correlation`` is the copula's normal-score correlation, not the
    correlation of the regime indicators themselves.  ``fd_step`` is the
    short horizon used to extrapolate compound rates; the leading
    finite-horizon error is removed by a step-halving (Richardson)
    combination, leaving an error of order ``fd_step**2``.
    """

    correlation: float
    fd_step: float = 1e-4

    def __post_init__(self) -> None:
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError(f"correlation must lie in [-1, 1], got {self.correlation}")
        if not 0.0 < self.fd_step <= 0.1:
            raise ValueError(f"fd_step must lie in (0, 0.1], got {self.fd_step}")


@dataclass(frozen=True)
class CompoundChainSpec:
    """A compound chain together with its parents and index mapping."""

    eps: GeneratorMatrix
    zeta: GeneratorMatrix
    mapping: StateMapping
    generator: GeneratorMatrix
    method: str  # "independent" or "copula"
    copula: CopulaSpec | None = None


def kronecker_sum(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Kronecker sum with the first argument on the fast index.

    Satisfies ``expm(kronecker_sum(a, b)) == kron(expm(b), expm(a))``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape[0], b.shape[0]
    return np.kron(np.eye(n), a) + np.kron(b, np.eye(m))


def compose_independent(eps: GeneratorMatrix, zeta: GeneratorMatrix) -> CompoundChainSpec:
    """Compound rate matrix of two independent chains.

    Each compound state ``(i, j)`` jumps either in the first coordinate at
    the first chain's rates or in the second at the second chain's rates;
    simultaneous moves get rate exactly zero.
    """
    mapping = StateMapping(eps.n_states, zeta.n_states)
    q = kronecker_sum(eps.rates, zeta.rates)
    return CompoundChainSpec(
        eps=eps,
        zeta=zeta,
        mapping=mapping,
        generator=validate_generator(q),
        method="independent",
    )


def compose_discrete_product(
    eps: TransitionMatrix, zeta: TransitionMatrix
) -> tuple[TransitionMatrix, StateMapping]:
    """Joint one-step chain of two independent discrete-time chains.

    ``probs[(i, j), (i2, j2)] = eps[i, i2] * zeta[j, j2]`` under the compound
    numbering, which is the Kronecker product with the second chain on the
    slow index.
    """
    mapping = StateMapping(eps.n_states, zeta.n_states)
    probs = np.kron(zeta.probs, eps.probs)
    return TransitionMatrix(probs=probs, n_states=mapping.n_compound), mapping


def compose_copula(
    eps: GeneratorMatrix, zeta: GeneratorMatrix, copula: CopulaSpec
) -> CompoundChainSpec:
    """Compound rates for copula-coupled two-state marginal chains.

    Over a short horizon ``h`` each marginal either holds or jumps; the pair
    of hold indicators is coupled by a Gaussian copula on their survival
    probabilities ``u = exp(-rate_i h)`` and ``v = exp(-rate_j h)``.  Joint
    transition probabilities follow by inclusion-exclusion, rates are the
    probabilities divided by ``h``, and two step sizes are combined as
    ``2 r(h/2) - r(h)`` to cancel the O(h) bias from multiple jumps.

    Only 2x2 marginals are supported: with more states the copula on hold
    indicators does not pin down which destination a joint jump selects.

    Raises
    ------
    Unsupported
        If either marginal chain has more than two states.
    NonGenerator
        If extrapolation leaves an off-diagonal rate below ``-1e-8``.
    """
    if eps.n_states != 2 or zeta.n_states != 2:
        raise Unsupported(
            f"copula composition needs two-state marginals, got "
            f"{eps.n_states} and {zeta.n_states}"
        )
    mapping = StateMapping(2, 2)
    h = copula.fd_step
    q = 2.0 * _copula_rates(eps, zeta, copula.correlation, h / 2, mapping) - _copula_rates(
        eps, zeta, copula.correlation, h, mapping
    )

    off = q.copy()
    np.fill_diagonal(off, 0.0)
    worst = float(off.min())
    if worst < -RATE_CLAMP:
        raise NonGenerator(
            f"extrapolated rate {worst:.3e} is negative beyond the {RATE_CLAMP} clamp"
        )
    off[off < 0] = 0.0
    np.fill_diagonal(off, -off.sum(axis=1))
    return CompoundChainSpec(
        eps=eps,
        zeta=zeta,
        mapping=mapping,
        generator=validate_generator(off),
        method="copula",
        copula=copula,
    )


def _copula_rates(
    eps: GeneratorMatrix,
    zeta: GeneratorMatrix,
    correlation: float,
    h: float,
    mapping: StateMapping,
) -> NDArray[np.float64]:
    """Finite-horizon rate estimates ``P_h / h`` for the copula coupling."""
    lam_e = eps.exit_rates()
    lam_z = zeta.exit_rates()
    q = np.zeros((4, 4))
    for j in range(2):
        for i in range(2):
            u = np.exp(-lam_e[i] * h)  # first chain holds
            v = np.exp(-lam_z[j] * h)  # second chain holds
            both_hold = float(gaussian_copula(u, v, correlation))
            s = mapping.index(i, j)
            q[s, mapping.index(1 - i, j)] = (v - both_hold) / h
            q[s, mapping.index(i, 1 - j)] = (u - both_hold) / h
            q[s, mapping.index(1 - i, 1 - j)] = (1.0 - u - v + both_hold) / h
            q[s, s] = -(1.0 - both_hold) / h
    return q


def marginalize(
    generator: GeneratorMatrix, mapping: StateMapping, atol: float = 1e-9
) -> tuple[GeneratorMatrix, GeneratorMatrix]:
    """Recover the two marginal rate matrices from a compound chain.

    The rate of a first-coordinate move ``i -> i2`` from compound state
    ``(i, j)`` is summed over all second-coordinate destinations.  If that
    sum varies with ``j`` by more than ``atol`` the first coordinate alone is
    not Markov and a ``ValueError`` is raised; likewise for the second.
    """
    q = generator.rates
    if q.shape[0] != mapping.n_compound:
        raise ValueError(
            f"generator has {q.shape[0]} states but mapping expects {mapping.n_compound}"
        )
    m, n = mapping.n_first, mapping.n_second
    # reshape to blocks indexed [j, i, j2, i2]
    blocks = q.reshape(n, m, n, m)

    rates_eps = blocks.sum(axis=2)  # [j, i, i2]: first-coordinate move, any second
    spread = rates_eps.max(axis=0) - rates_eps.min(axis=0)
    np.fill_diagonal(spread, 0.0)
    if spread.max() > atol:
        raise ValueError(
            f"first-coordinate rates vary with the other state by {spread.max():.3e}"
        )
    q_eps = rates_eps.mean(axis=0)
    np.fill_diagonal(q_eps, 0.0)
    np.fill_diagonal(q_eps, -q_eps.sum(axis=1))

    rates_zeta = blocks.sum(axis=3)  # [j, i, j2]
    rates_zeta = np.moveaxis(rates_zeta, 1, 0)  # [i, j, j2]
    spread = rates_zeta.max(axis=0) - rates_zeta.min(axis=0)
    np.fill_diagonal(spread, 0.0)
    if spread.max() > atol:
        raise ValueError(
            f"second-coordinate rates vary with the other state by {spread.max():.3e}"
        )
    q_zeta = rates_zeta.mean(axis=0)
    np.fill_diagonal(q_zeta, 0.0)
    np.fill_diagonal(q_zeta, -q_zeta.sum(axis=1))

    return validate_generator(q_eps), validate_generator(q_zeta)


# ---------------------------------------------------------------------------
# Bivariate normal CDF and the Gaussian copula
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def bivariate_normal_cdf(x, y, correlation: float):
    """P(X <= x, Y <= y) for standard normals with the given correlation.

    Quadrature of the tetrachoric series in trigonometric form for moderate
    correlation, switching to an expansion around the perfectly-correlated
    case when ``|correlation| > 0.925``; both branches are accurate to about
    5e-16.  Accepts array arguments broadcast against each other.
    """
    rho = float(correlation)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    # +-38 is already conclusive for a standard normal in double precision,
    # so clipping handles infinite arguments with no separate branch
    h = -np.clip(x, -38.0, 38.0)
    k = -np.clip(y, -38.0, 38.0)
    upper = _bvn_upper(h, k, rho)  # P(X > h, Y > k) = P(X <= x, Y <= y)

    lo = np.maximum(0.0, ndtr(x) + ndtr(y) - 1.0)
    hi = np.minimum(ndtr(x), ndtr(y))
    if np.any(upper < lo - 1e-10) or np.any(upper > hi + 1e-10):
        worst = float(np.max(np.maximum(lo - upper, upper - hi)))
        raise QuadratureFailure(f"probability outside admissible bounds by {worst:.3e}")
    return np.clip(upper, lo, hi) if upper.ndim else float(np.clip(upper, lo, hi))


def _bvn_upper(h, k, rho: float):
    """P(X > h, Y > k) for standard normals; h, k same-shape arrays."""
    if abs(rho) < 0.925:
        base = ndtr(-h) * ndtr(-k)
        if rho == 0.0:
            return base
        # integrate the correlation derivative of the CDF from 0 to rho,
        # substituting rho = sin(theta) to flatten the integrand
        hk = h * k
        hs = (h * h + k * k) / 2.0
        asr = np.arcsin(rho)
        sn = np.sin(asr * (_GL_NODES + 1.0) / 2.0)
        expo = (np.multiply.outer(hk, sn) - hs[..., None]) / (1.0 - sn**2)
        return base + (np.exp(expo) @ _GL_WEIGHTS) * asr / (2.0 * TWO_PI)

    # strong correlation: expand around the comonotone limit
    k = -k if rho < 0 else k
    hk = h * k
    bvn = np.zeros_like(h)
    if abs(rho) < 1.0:
        as_ = (1.0 - rho) * (1.0 + rho)
        a = np.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / as_ + hk) / 2.0
        mask = asr > -100.0
        bvn = np.where(
            mask,
            a
            * np.exp(np.where(mask, asr, 0.0))
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_**2 / 5.0),
            0.0,
        )
        mask = -hk < 100.0
        b = np.sqrt(bs)
        tail = np.sqrt(TWO_PI) * ndtr(-b / a)
        bvn = bvn - np.where(
            mask,
            np.exp(np.where(mask, -hk / 2.0, 0.0))
            * tail
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
            0.0,
        )
        half = a / 2.0
        xs = (half * (_GL_NODES + 1.0)) ** 2  # quadrature in the residual variance
        rs = np.sqrt(1.0 - xs)
        asr = -(bs[..., None] / xs + hk[..., None]) / 2.0
        mask = asr > -100.0
        c1 = c[..., None]
        d1 = d[..., None]
        integrand = np.exp(np.where(mask, asr, 0.0)) * (
            np.exp(-hk[..., None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
            - (1.0 + c1 * xs * (1.0 + d1 * xs))
        )
        bvn = bvn + half * (np.where(mask, integrand, 0.0) @ _GL_WEIGHTS)
        bvn = -bvn / TWO_PI
    if rho > 0:
        return bvn + ndtr(-np.maximum(h, k))
    adjust = np.where(
        k > h,
        np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k)),
        0.0,
    )
    return adjust - bvn


def gaussian_copula(u, v, correlation: float):
    """Gaussian copula C(u, v) on the unit square."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any((v < 0) | (v > 1)):
        raise ValueError("copula arguments must lie in [0, 1]")
    with np.errstate(divide="ignore"):  # ndtri(0) and ndtri(1) are signed infinities
        return bivariate_normal_cdf(ndtri(u), ndtri(v), correlation)


def copula_joint_pmf(counts_first, counts_second, mean_first: float, mean_second: float, correlation: float):
    """Joint pmf of two Poisson counts coupled by a Gaussian copula.

    The probability of the pair ``(y1, y2)`` is the copula volume of the
    rectangle ``(F1(y1 - 1), F1(y1)] x (F2(y2 - 1), F2(y2)]`` where ``F``
    are the Poisson CDFs.  Marginals are exactly Poisson for any
    correlation; zero correlation reduces to the product pmf.
    """
    if mean_first <= 0 or mean_second <= 0:
        raise ValueError("Poisson means must be positive")
    y1 = np.asarray(counts_first)
    y2 = np.asarray(counts_second)
    if np.any(y1 < 0) or np.any(y2 < 0):
        raise ValueError("counts must be nonnegative")
    y1, y2 = np.broadcast_arrays(y1, y2)

    f1_hi = pdtr(y1, mean_first)
    f1_lo = np.where(y1 > 0, pdtr(np.maximum(y1 - 1, 0), mean_first), 0.0)
    f2_hi = pdtr(y2, mean_second)
    f2_lo = np.where(y2 > 0, pdtr(np.maximum(y2 - 1, 0), mean_second), 0.0)

    pmf = (
        gaussian_copula(f1_hi, f2_hi, correlation)
        - gaussian_copula(f1_lo, f2_hi, correlation)
        - gaussian_copula(f1_hi, f2_lo, correlation)
        + gaussian_copula(f1_lo, f2_lo, correlation)
    )
    pmf = np.maximum(pmf, 0.0)  # rectangle volume; negatives are roundoff
    return pmf if pmf.ndim else float(pmf)
