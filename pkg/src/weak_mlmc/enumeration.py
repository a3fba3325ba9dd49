"""Exact level-0 expectation by enumerating the binomial outcome lattice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .increments import binomial_pmf_table
from .sde import SchemeKind, SdeModel, SimulationFault, step_fn

DEFAULT_BUDGET = 10**8
CHUNK = 1 << 18


class EnumerationBudgetExceeded(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"enumeration needs {count} outcomes, budget is {budget}")
        self.count = count
        self.budget = budget


def outcome_count(L: int, l: int, m: int) -> int:
    """Number of distinct increment paths on level ``l``: ``(2^(L-l)+1)^(2^l m)``."""
    if not 0 <= l <= L:
        raise ValueError(f"need 0 <= l <= L, got l={l}, L={L}")
    if m < 1:
        raise ValueError("m must be positive")
    return (2 ** (L - l) + 1) ** (2**l * m)


@dataclass(frozen=True)
class OutcomeLattice:
    """Level-0 increment lattice: ``m`` independent components, each on
    ``2^L + 1`` points ``(2k - 2^L) sqrt(T 2^-L)`` with Bin(2^L, 1/2) weights."""

    finest_level: int
    dim_wiener: int
    horizon: float = 1.0

    @property
    def trials(self) -> int:
        return 2**self.finest_level

    @property
    def unit(self) -> float:
        return math.sqrt(self.horizon / 2**self.finest_level)

    @property
    def values(self) -> np.ndarray:
        n = self.trials
        return (2 * np.arange(n + 1) - n) * self.unit

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(binomial_pmf_table(self.trials))

    @property
    def size(self) -> int:
        return outcome_count(self.finest_level, 0, self.dim_wiener)

    def points(self, flat_index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lattice points and their probabilities for the given flat indices."""
        side = self.trials + 1
        idx = np.unravel_index(flat_index, (side,) * self.dim_wiener)
        vals, wts = self.values, self.weights
        pts = np.stack([vals[i] for i in idx], axis=-1)
        prob = np.ones(len(flat_index))
        for i in idx:
            prob = prob * wts[i]
        return pts, prob

    def chunks(self, chunk: int = CHUNK, order: np.ndarray | None = None):
        total = self.size
        for start in range(0, total, chunk):
            stop = min(start + chunk, total)
            flat = np.arange(start, stop) if order is None else np.asarray(order[start:stop])
            yield self.points(flat)


def lattice_index(x: float, L: int, horizon: float = 1.0) -> int:
    """Binomial count ``k`` of a level-0 component value ``x``."""
    n = 2**L
    unit = math.sqrt(horizon / n)
    raw = (x / unit + n) / 2
    k = round(raw)
    if abs(raw - k) > 1e-9 * max(1.0, n) or not 0 <= k <= n:
        raise ValueError(f"{x} is not on the level-0 lattice for L={L}")
    return int(k)


def outcome_probability(outcome, L: int, horizon: float = 1.0) -> float:
    """Product over components of ``P(Bin(2^L, 1/2) = k(x_j))``."""
    table = binomial_pmf_table(2**L)
    prob = 1.0
    for x in np.atleast_1d(np.asarray(outcome, dtype=float)):
        prob *= float(table[lattice_index(float(x), L, horizon)])
    return prob


@dataclass(frozen=True)
class EnumerationResult:
    expectation: float
    outcomes_evaluated: int
    cost_units: int


def enumerate_level0(
    model: SdeModel,
    payoff,
    scheme: SchemeKind,
    L: int,
    budget: int = DEFAULT_BUDGET,
    chunk: int = CHUNK,
    order: np.ndarray | None = None,
) -> EnumerationResult:
    """``E[f(X_0)]`` for the one-step level-0 scheme under binomial increments.

    Each lattice point is pushed through one scheme step of size ``T`` from
    ``x0``; the probability-weighted payoffs are summed with ``math.fsum``.
    ``order`` optionally permutes the flat lattice indices (the result does
    not depend on it beyond final rounding).
    """
    lattice = OutcomeLattice(L, model.dim_wiener, model.horizon)
    total = lattice.size
    if total > budget:
        raise EnumerationBudgetExceeded(total, budget)
    step = step_fn(scheme)
    partials = []
    for pts, prob in lattice.chunks(chunk, order):
        x = np.broadcast_to(model.x0, (len(pts), model.dim_state))
        x1 = step(model, x, model.horizon, pts)
        if not np.isfinite(x1).all():
            raise SimulationFault("non-finite state during level-0 enumeration", step=0, level=0)
        terms = np.asarray(payoff(x1), dtype=float) * prob
        partials.append(math.fsum(terms.tolist()))
    return EnumerationResult(expectation=math.fsum(partials), outcomes_evaluated=total, cost_units=total)
