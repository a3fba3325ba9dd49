"""Fine/coarse increment generation with the exact pairwise-sum coupling.

Two increment families are supported. ``GAUSSIAN`` gives the classical
N(0, dt) increments. ``BINOMIAL_COUPLED`` starts from symmetric two-point
variables ``+-sqrt(dt_L)`` on the finest level ``L``; summing pairs upwards
makes a level-``l`` component equal to ``(2 Bin(2^(L-l), 1/2) - 2^(L-l)) *
sqrt(dt_L)``. Level-``l`` increments are drawn straight from that marginal
and the coarse ones are formed by adding neighbouring fine increments, so the
coarse/fine coupling holds exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Up to this many trials a draw is the popcount of n random bits.
BITS_MAX_N = 64
# Largest support (n + 1 points) served by a cached inverse-CDF table.
TABLE_MAX_N = 4096

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LN2 = math.log(2.0)


class IncrementKind(enum.Enum):
    GAUSSIAN = "gaussian"
    BINOMIAL_COUPLED = "binomial"


def _stirlerr(n: np.ndarray) -> np.ndarray:
    """``log(n!) - log(sqrt(2 pi n) (n/e)^n)`` for integer ``n >= 1``."""
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    small = n <= 15
    ns = n[small]
    out[small] = [math.lgamma(v + 1.0) - (v + 0.5) * math.log(v) + v - _LOG_SQRT_2PI for v in ns]
    nl = n[~small]
    nn = nl * nl
    out[~small] = (
        1 / 12 - (1 / 360 - (1 / 1260 - (1 / 1680 - 1 / 1188 / nn) / nn) / nn) / nn
    ) / nl
    return out


def _bd0(x: np.ndarray, mean: float) -> np.ndarray:
    """Deviance term ``x log(x/mean) + mean - x`` without cancellation."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    near = np.abs(x - mean) < 0.1 * (x + mean)
    xn = x[near]
    v = (xn - mean) / (xn + mean)
    s = (xn - mean) * v
    ej = 2.0 * xn * v
    v2 = v * v
    for j in range(1, 12):
        ej = ej * v2
        s = s + ej / (2 * j + 1)
    out[near] = s
    xf = x[~near]
    out[~near] = xf * np.log(xf / mean) + mean - xf
    return out


def binomial_log_pmf(n: int, k) -> np.ndarray:
    """``log(C(n, k) 2^-n)`` for integer arrays ``k``; ``-inf`` off the support.

    Uses the saddle-point form (Stirling error plus deviance terms) so the
    result keeps full relative precision for large ``n``.
    """
    k = np.asarray(k, dtype=np.int64)
    out = np.full(k.shape, -np.inf)
    if n < 0:
        return out
    edge = (k == 0) | (k == n)
    out[edge] = -n * _LN2
    inner = (k > 0) & (k < n)
    if inner.any():
        ki = k[inner].astype(float)
        nk = n - ki
        half = n / 2.0
        lc = (
            _stirlerr(np.array([n]))[0]
            - _stirlerr(ki)
            - _stirlerr(nk)
            - _bd0(ki, half)
            - _bd0(nk, half)
        )
        out[inner] = lc + 0.5 * np.log(n / (2.0 * math.pi * ki * nk))
    return out


def _exact_row(n: int) -> np.ndarray:
    # big-integer binomial row; int / int true division rounds correctly
    denom = 1 << n
    row = np.empty(n + 1)
    c = 1
    for k in range(n + 1):
        row[k] = c / denom
        c = c * (n - k) // (k + 1)
    return row


def binomial_pmf(n: int, k: int) -> float:
    """P(Bin(n, 1/2) = k); zero outside ``0..n``."""
    if k < 0 or k > n:
        return 0.0
    if n <= TABLE_MAX_N:
        return math.comb(n, k) / (1 << n)
    return float(np.exp(binomial_log_pmf(n, np.array([k]))[0]))


@lru_cache(maxsize=64)
def binomial_pmf_table(n: int) -> np.ndarray:
    """pmf of Bin(n, 1/2) over ``k = 0..n`` (read-only, cached).

    Exact big-integer evaluation up to ``TABLE_MAX_N``, the saddle-point
    log form above it.
    """
    if n <= TABLE_MAX_N:
        pmf = _exact_row(n)
    else:
        pmf = np.exp(binomial_log_pmf(n, np.arange(n + 1)))
    pmf.setflags(write=False)
    return pmf


@lru_cache(maxsize=64)
def _cdf_table(n: int) -> tuple[np.ndarray, np.ndarray]:
    """CDF of Bin(n, 1/2) and a guide table ``g[i] = min{k : cdf[k] > i/(n+1)}``."""
    cdf = np.cumsum(binomial_pmf_table(n))
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    cdf.setflags(write=False)
    cells = n + 1
    guide = np.searchsorted(cdf, np.arange(cells) / cells, side="right").astype(np.int64)
    guide.setflags(write=False)
    return cdf, guide


def _inverse_cdf(n: int, u: np.ndarray) -> np.ndarray:
    cdf, guide = _cdf_table(n)
    u = np.atleast_1d(u)
    k = guide[(u * len(guide)).astype(np.int64)]
    # the guide never overshoots; walk up a few cells, then bisect the rest (tails)
    for _ in range(4):
        low = cdf[k] <= u
        if not low.any():
            return k
        k = k + low
    low = cdf[k] <= u
    if low.any():
        k[low] = np.searchsorted(cdf, u[low], side="right")
    return k


def _popcount_binomial(n: int, rng: np.random.Generator, size):
    if n < 64:
        bits = rng.integers(0, 1 << n, size=size, dtype=np.uint64)
    else:
        bits = rng.integers(0, 2**64 - 1, size=size, dtype=np.uint64, endpoint=True)
    return np.bitwise_count(bits).astype(np.int64)


def sample_binomial(n: int, rng: np.random.Generator, size=None):
    """Draw from Bin(n, 1/2).

    ``n <= 64`` counts the set bits of an ``n``-bit uniform integer;
    ``n <= TABLE_MAX_N`` inverts a cached CDF table (guide-table search);
    larger ``n`` falls
    back to numpy's rejection sampler (BTPE).
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if n <= BITS_MAX_N:
        k = _popcount_binomial(n, rng, size)
    elif n <= TABLE_MAX_N:
        k = _inverse_cdf(n, np.asarray(rng.random(size=size)))
    else:
        k = np.asarray(rng.binomial(n, 0.5, size=size), dtype=np.int64)
    return int(np.asarray(k).reshape(-1)[0]) if size is None else k


@dataclass(frozen=True)
class IncrementDistribution:
    kind: IncrementKind
    finest_level: int = 0
    horizon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", IncrementKind(self.kind))
        if self.finest_level < 0:
            raise ValueError("finest_level must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def step_size(self, level: int) -> float:
        return self.horizon / 2**level

    def variance(self, level: int) -> float:
        return self.step_size(level)

    def trials(self, level: int) -> int:
        """Number of finest-level two-point variables summed into one level-``level`` component."""
        self._check_level(level)
        return 2 ** (self.finest_level - level)

    def _check_level(self, level: int) -> None:
        if level < 0:
            raise ValueError(f"level must be nonnegative, got {level}")
        if self.kind is IncrementKind.BINOMIAL_COUPLED and level > self.finest_level:
            raise ValueError(
                f"level {level} exceeds finest level {self.finest_level} of the binomial family"
            )

    def support(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Values and probabilities of one level-``level`` component (binomial only)."""
        if self.kind is not IncrementKind.BINOMIAL_COUPLED:
            raise ValueError("a Gaussian increment has no finite support")
        n = self.trials(level)
        k = np.arange(n + 1)
        values = (2 * k - n) * math.sqrt(self.step_size(self.finest_level))
        return values, np.asarray(binomial_pmf_table(n))


@dataclass(frozen=True)
class LevelIncrements:
    """Fine increments of shape ``(2**l, count, m)`` and the summed coarse ones."""

    level: int
    fine: np.ndarray
    coarse: np.ndarray | None


def coarsen(fine: np.ndarray) -> np.ndarray:
    """Pairwise sums ``fine[2i] + fine[2i+1]`` along the first axis."""
    return fine[0::2] + fine[1::2]


def sample_fine(
    dist: IncrementDistribution,
    level: int,
    rng: np.random.Generator,
    dim_wiener: int = 1,
    count: int = 1,
    correlation: np.ndarray | None = None,
) -> LevelIncrements:
    dist._check_level(level)
    shape = (2**level, count, dim_wiener)
    if dist.kind is IncrementKind.GAUSSIAN:
        fine = rng.standard_normal(shape) * math.sqrt(dist.step_size(level))
        if correlation is not None and not np.array_equal(correlation, np.eye(dim_wiener)):
            fine = fine @ np.linalg.cholesky(correlation).T
    else:
        if correlation is not None and not np.array_equal(correlation, np.eye(dim_wiener)):
            raise ValueError("binomial increments require independent Wiener components")
        n = dist.trials(level)
        k = sample_binomial(n, rng, size=shape)
        fine = (2 * k - n) * math.sqrt(dist.step_size(dist.finest_level))
    coarse = coarsen(fine) if level >= 1 else None
    return LevelIncrements(level=level, fine=fine, coarse=coarse)
