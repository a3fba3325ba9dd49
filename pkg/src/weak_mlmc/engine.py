"""Telescoping MLMC estimator with antithetic level corrections.

The three supported estimators differ in the time-stepping scheme, the
increment family and how level 0 is handled:

============  ===========  ==========  ==========  ===============
variant       scheme       increments  antithetic  level 0
============  ===========  ==========  ==========  ===============
euler         weak Euler   binomial    no          sampled
normal        Milstein     Gaussian    yes         sampled
binomial      Milstein     binomial    yes         enumerated
============  ===========  ==========  ==========  ===============

The binomial increment law depends on the finest level ``L``; when the
adaptive loop raises ``L`` for a binomial variant every level is resampled
(and level 0 re-enumerated). Gaussian levels are kept.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .enumeration import DEFAULT_BUDGET, EnumerationBudgetExceeded, enumerate_level0, outcome_count
from .increments import IncrementDistribution, IncrementKind, sample_binomial
from .sde import SchemeKind, SdeModel, SimulationFault, step_fn
from .streams import RandomStreams

log = logging.getLogger(__name__)


class EstimatorVariant(enum.Enum):
    EULER_BINOMIAL = "euler"
    ANTITHETIC_MILSTEIN_GAUSSIAN = "normal"
    ANTITHETIC_MILSTEIN_BINOMIAL_ENUM = "binomial"

    @property
    def scheme(self) -> SchemeKind:
        if self is EstimatorVariant.EULER_BINOMIAL:
            return SchemeKind.WEAK_EULER
        return SchemeKind.MILSTEIN_NO_LEVY

    @property
    def increment_kind(self) -> IncrementKind:
        if self is EstimatorVariant.ANTITHETIC_MILSTEIN_GAUSSIAN:
            return IncrementKind.GAUSSIAN
        return IncrementKind.BINOMIAL_COUPLED

    @property
    def antithetic(self) -> bool:
        return self is not EstimatorVariant.EULER_BINOMIAL

    @property
    def enumerates_level0(self) -> bool:
        return self is EstimatorVariant.ANTITHETIC_MILSTEIN_BINOMIAL_ENUM

    @property
    def law_depends_on_finest_level(self) -> bool:
        return self.increment_kind is IncrementKind.BINOMIAL_COUPLED

    @property
    def label(self) -> str:
        return self.value.capitalize()


class ConvergenceError(RuntimeError):
    """The bias test still fails at the maximum level."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def sample_cost(variant: EstimatorVariant, level: int) -> int:
    """Scheme steps charged for one sample of ``Y_level``."""
    if level == 0:
        return 1
    fine = 2**level
    coarse = 2 ** (level - 1)
    return (2 * fine if variant.antithetic else fine) + coarse


def _distribution(variant, model, finest_level):
    return IncrementDistribution(variant.increment_kind, finest_level, model.horizon)


def _pair_draws(dist: IncrementDistribution, level: int, rng, m: int, count: int, chol):
    """Two consecutive fine increments ``(a, b)``, each of shape ``(count, m)``."""
    if dist.kind is IncrementKind.GAUSSIAN:
        z = rng.standard_normal((2, count, m)) * math.sqrt(dist.step_size(level))
        if chol is not None:
            z = z @ chol.T
        return z[0], z[1]
    n = dist.trials(level)
    k = sample_binomial(n, rng, size=(2, count, m))
    z = (2 * k - n) * math.sqrt(dist.step_size(dist.finest_level))
    return z[0], z[1]


def _draw(dist, level, rng, m, count, chol):
    if dist.kind is IncrementKind.GAUSSIAN:
        z = rng.standard_normal((count, m)) * math.sqrt(dist.step_size(level))
        return z @ chol.T if chol is not None else z
    n = dist.trials(level)
    return (2 * sample_binomial(n, rng, size=(count, m)) - n) * math.sqrt(dist.step_size(dist.finest_level))


def _noise_factor(model: SdeModel, dist: IncrementDistribution):
    if model.independent_noise:
        return None
    if dist.kind is IncrementKind.BINOMIAL_COUPLED:
        raise ValueError("binomial increments require independent Wiener components")
    return np.linalg.cholesky(model.correlation)


def _finite(x, level, what):
    if not np.isfinite(x).all():
        raise SimulationFault(f"non-finite {what} state on level {level}", level=level)


def level_payoffs(
    variant: EstimatorVariant,
    model: SdeModel,
    payoff,
    level: int,
    count: int,
    rng: np.random.Generator,
    finest_level: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fine and coarse payoffs ``(P^f_l, P^c_{l-1})`` on shared increments.

    For antithetic variants ``P^f_l`` is the average of the payoffs of the
    fine path and its pair-swapped twin. Increments are drawn one fine pair
    at a time; the coarse step uses their exact sum.
    """
    if level < 1:
        raise ValueError("level corrections need level >= 1")
    L = level if finest_level is None else finest_level
    dist = _distribution(variant, model, L)
    chol = _noise_factor(model, dist)
    step = step_fn(variant.scheme)
    m = model.dim_wiener
    dt_f = model.step_size(level)
    dt_c = 2 * dt_f
    start = np.broadcast_to(model.x0, (count, model.dim_state))
    xf = start.copy()
    xc = start.copy()
    xa = start.copy() if variant.antithetic else None
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(2 ** (level - 1)):
            a, b = _pair_draws(dist, level, rng, m, count, chol)
            xf = step(model, step(model, xf, dt_f, a), dt_f, b)
            if xa is not None:
                xa = step(model, step(model, xa, dt_f, b), dt_f, a)
            xc = step(model, xc, dt_c, a + b)
    _finite(xf, level, "fine")
    _finite(xc, level, "coarse")
    pf = np.asarray(payoff(xf), dtype=float)
    if xa is not None:
        _finite(xa, level, "antithetic")
        pf = 0.5 * (pf + np.asarray(payoff(xa), dtype=float))
    pc = np.asarray(payoff(xc), dtype=float)
    return pf, pc


def level_correction_samples(variant, model, payoff, level, count, rng, finest_level=None) -> np.ndarray:
    """``count`` i.i.d. samples of ``Y_l = P^f_l - P^c_{l-1}``."""
    pf, pc = level_payoffs(variant, model, payoff, level, count, rng, finest_level)
    return pf - pc


def level0_samples(variant, model, payoff, count, rng, finest_level: int = 0) -> np.ndarray:
    """``count`` samples of the one-step payoff ``P_0``."""
    dist = _distribution(variant, model, finest_level)
    chol = _noise_factor(model, dist)
    xi = _draw(dist, 0, rng, model.dim_wiener, count, chol)
    x = np.broadcast_to(model.x0, (count, model.dim_state))
    x1 = step_fn(variant.scheme)(model, x, model.horizon, xi)
    _finite(x1, 0, "level-0")
    return np.asarray(payoff(x1), dtype=float)


def allocate_paths(level_variances, level_costs, epsilon: float, min_paths: int = 0) -> np.ndarray:
    """Optimal path counts ``ceil(2 eps^-2 sqrt(V_l/C_l) sum_k sqrt(V_k C_k))``.

    Levels with zero variance get zero paths; the others at least ``min_paths``.
    """
    V = np.asarray(level_variances, dtype=float)
    C = np.asarray(level_costs, dtype=float)
    if np.any(V < 0) or np.any(C <= 0) or not epsilon > 0:
        raise ValueError("need variances >= 0, costs > 0 and epsilon > 0")
    total = np.sum(np.sqrt(V * C))
    raw = np.ceil(2.0 / epsilon**2 * np.sqrt(V / C) * total)
    if not np.all(raw < 2.0**62):
        raise OverflowError(f"path allocation for epsilon={epsilon:g} exceeds 2^62 paths")
    M = raw.astype(np.int64)
    M = np.where(V > 0, np.maximum(M, min_paths), 0)
    return M


def fit_slope(levels, values) -> float:
    """Decay rate ``-slope`` of the least-squares line through ``(l, log2 v_l)``."""
    x = np.asarray(levels, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("need at least three (level, value) points")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("values must be positive and finite")
    # shift by the first value so a constant sequence fits a slope of exactly zero
    ly = np.log2(y) - math.log2(y[0])
    xc = x - x.mean()
    slope = np.dot(xc, ly - ly.mean()) / np.dot(xc, xc)
    return float(-slope) + 0.0


def extrapolate_levels(pilot_levels: int, pilot_bias: float, target_rmse: float) -> int:
    """Finest level for ``target_rmse`` assuming the bias halves per level."""
    goal = target_rmse / math.sqrt(2)
    if pilot_bias <= goal:
        return pilot_levels
    return pilot_levels + math.ceil(math.log2(pilot_bias / goal))


@dataclass
class _Accumulator:
    """Streaming (count, mean, M2) with pairwise merge."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, samples: np.ndarray) -> None:
        n = samples.size
        if n == 0:
            return
        mb = float(np.mean(samples))
        with np.errstate(over="ignore"):
            m2b = float(np.sum((samples - mb) ** 2))
        tot = self.count + n
        delta = mb - self.mean
        self.mean += delta * n / tot
        self.m2 += m2b + delta * delta * self.count * n / tot
        self.count = tot

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


@dataclass(frozen=True)
class LevelStats:
    level: int
    mean: float
    variance: float
    paths: int
    cost_units: int
    enumerated: bool = False


@dataclass
class MlmcConfig:
    warmup: int = 100
    min_paths: int = 100
    start_level: int = 1
    min_finest_level: int = 2
    max_level: int = 20
    weak_order: float = 1.0
    pilot_rmse: float | None = 5e-4
    pilot_default_level: int = 4
    enum_budget: int = DEFAULT_BUDGET
    early_deepening: bool = True
    block: int = 1 << 16


@dataclass
class MlmcEstimate:
    value: float
    levels: list[LevelStats]
    total_cost: int
    target_rmse: float
    beta_fit: float
    convergence_fit: float
    finest_level: int = 0
    level0_enumerated: bool = False
    level0_paths: int = 0
    overhead_cost: int = 0
    pilot_levels: int | None = None
    variance_estimate: float = 0.0
    bias_estimate: float = 0.0
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class PilotResult:
    levels: int
    cost: int
    bias: float
    pilot_levels: int
    fallback: bool = False


def _bias_estimate(acc: dict[int, _Accumulator], L: int, order: float, n_sigma: float = 0.0) -> float:
    """Weak-extrapolation bias from the last two corrections.

    With ``n_sigma > 0`` each ``|mean_l|`` is first reduced by that many
    standard errors, giving a value the bias exceeds with high confidence.
    """
    tail = []
    for l in (L - 1, L):
        if l >= 1:
            a = acc[l]
            se = math.sqrt(a.variance / a.count) if a.count > 1 else math.inf
            tail.append(max(abs(a.mean) - n_sigma * se, 0.0) if math.isfinite(se) else (math.inf if n_sigma < 0 else 0.0))
    return max(tail) / (2**order - 1)


def _fits(acc: dict[int, _Accumulator], L: int) -> tuple[float, float]:
    lv = [l for l in range(1, L + 1) if acc[l].count > 1]

    def safe(vals):
        pts = [(l, v) for l, v in zip(lv, vals) if v > 0]
        if len(pts) < 3:
            return float("nan")
        return fit_slope(*zip(*pts))

    return safe([acc[l].variance for l in lv]), safe([abs(acc[l].mean) for l in lv])


class _Run:
    """Mutable state of one adaptive estimate."""

    def __init__(self, variant, model, payoff, epsilon, streams, config):
        self.variant = variant
        self.model = model
        self.payoff = payoff
        self.eps = epsilon
        self.streams = streams
        self.cfg = config
        self.epoch = 0
        self.calls: dict[int, int] = {}
        self.acc: dict[int, _Accumulator] = {}
        self.enum_level0: int | None = None  # enumeration cost when level 0 is exact
        self.discarded = 0
        self.warnings: list[str] = []

    def sample_level(self, level: int, count: int, L: int) -> None:
        call = self.calls.get(level, 0)
        self.calls[level] = call + 1
        acc = self.acc[level]
        block = self.cfg.block
        for b, start in enumerate(range(0, count, block)):
            n = min(block, count - start)
            rng = self.streams.generator(self.epoch, level, call, b)
            try:
                if level == 0:
                    ys = level0_samples(self.variant, self.model, self.payoff, n, rng, L)
                else:
                    ys = level_correction_samples(self.variant, self.model, self.payoff, level, n, rng, L)
            except SimulationFault as exc:
                raise SimulationFault(
                    f"level {level}, paths {start}..{start + n - 1}: {exc}", level=level
                ) from exc
            acc.add(ys)

    def open_level(self, level: int, L: int) -> None:
        self.acc[level] = _Accumulator()
        if level == 0 and self.variant.enumerates_level0:
            try:
                res = enumerate_level0(
                    self.model, self.payoff, self.variant.scheme, L, budget=self.cfg.enum_budget
                )
            except EnumerationBudgetExceeded as exc:
                self.warnings.append(f"level-0 enumeration skipped at L={L} ({exc}); sampling instead")
                log.warning("%s", self.warnings[-1])
            else:
                self.acc[0].mean = res.expectation
                self.enum_level0 = res.cost_units
                return
        if level == 0:
            self.enum_level0 = None
        self.sample_level(level, self.cfg.warmup, L)

    def level_cost(self, level: int) -> int:
        if level == 0 and self.enum_level0 is not None:
            return self.enum_level0
        return self.acc[level].count * sample_cost(self.variant, level)

    def discard(self, L: int) -> None:
        self.discarded += sum(self.level_cost(l) for l in range(L + 1))
        self.acc.clear()
        self.calls.clear()
        self.enum_level0 = None
        self.epoch += 1

    def allocation(self, L: int) -> np.ndarray:
        V = [self.acc[l].variance for l in range(L + 1)]
        if self.enum_level0 is not None:
            V[0] = 0.0
        C = [sample_cost(self.variant, l) for l in range(L + 1)]
        return allocate_paths(V, C, self.eps, self.cfg.min_paths)

    def screen(self, L: int, n_sigma: float = 3.0) -> bool:
        """True when the top two corrections already show the bias is too large.

        Inconclusive cases double the samples on those levels, never beyond
        what the allocation would give them anyway; at that cap the point
        estimate decides, as the post-allocation test would.
        """
        target = self.eps / math.sqrt(2)
        p = self.cfg.weak_order
        top = [l for l in (L - 1, L) if l >= 1]
        while True:
            if _bias_estimate(self.acc, L, p, n_sigma) > target:
                return True
            if _bias_estimate(self.acc, L, p, -n_sigma) <= target:
                return False
            M = self.allocation(L)
            grow = {l: min(self.acc[l].count, int(M[l]) - self.acc[l].count) for l in top}
            grow = {l: e for l, e in grow.items() if e > 0}
            if not grow:
                return _bias_estimate(self.acc, L, p) >= target
            for l, e in grow.items():
                self.sample_level(l, e, L)

    def fill(self, L: int) -> None:
        exact0 = self.enum_level0 is not None
        while True:
            M = self.allocation(L)
            extra = [max(0, int(M[l]) - self.acc[l].count) for l in range(L + 1)]
            if exact0:
                extra[0] = 0
            if not any(extra):
                return
            for l, e in enumerate(extra):
                if e:
                    self.sample_level(l, e, L)


def pilot_select_levels(
    variant: EstimatorVariant,
    model: SdeModel,
    payoff,
    pilot_rmse: float,
    target_rmse: float,
    rng=0,
    config: MlmcConfig | None = None,
) -> PilotResult:
    """Run a cheap estimate at ``pilot_rmse`` and extrapolate the finest level
    needed for ``target_rmse`` under first-order weak convergence."""
    cfg = config or MlmcConfig()
    streams = rng if isinstance(rng, RandomStreams) else RandomStreams(rng)
    pilot_cfg = MlmcConfig(**{**cfg.__dict__, "pilot_rmse": None})
    try:
        est = run_mlmc(variant, model, payoff, pilot_rmse, streams, pilot_cfg)
    except (ConvergenceError, SimulationFault) as exc:
        log.warning("pilot failed (%s); using default level %d", exc, cfg.pilot_default_level)
        cost = getattr(exc, "diagnostics", {}).get("total_cost", 0)
        return PilotResult(cfg.pilot_default_level, cost, float("nan"), -1, fallback=True)
    b = est.bias_estimate
    if not math.isfinite(b):
        return PilotResult(cfg.pilot_default_level, est.total_cost, b, est.finest_level, fallback=True)
    L = extrapolate_levels(est.finest_level, b, target_rmse)
    return PilotResult(min(L, cfg.max_level), est.total_cost, b, est.finest_level)


def run_mlmc(
    variant: EstimatorVariant,
    model: SdeModel,
    payoff,
    epsilon: float,
    rng=0,
    config: MlmcConfig | None = None,
    initial_level: int | None = None,
) -> MlmcEstimate:
    """Adaptive MLMC estimate of ``E[f(X(T))]`` with RMSE target ``epsilon``.

    The MSE budget is split evenly between sampling variance and squared
    bias. ``rng`` is a seed or a :class:`RandomStreams`; results depend only
    on it and the configuration.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    variant = EstimatorVariant(variant)
    cfg = config or MlmcConfig()
    streams = rng if isinstance(rng, RandomStreams) else RandomStreams(rng)

    overhead = 0
    pilot_levels = None
    warnings: list[str] = []
    L = cfg.start_level if initial_level is None else initial_level
    if (
        initial_level is None
        and variant.law_depends_on_finest_level
        and cfg.pilot_rmse is not None
        and epsilon < cfg.pilot_rmse
    ):
        pilot = pilot_select_levels(variant, model, payoff, cfg.pilot_rmse, epsilon, streams.child(1), cfg)
        overhead += pilot.cost
        pilot_levels = pilot.pilot_levels
        L = pilot.levels
        if pilot.fallback:
            warnings.append(f"pilot failed; started from default L={L}")
    L = max(L, 1)

    run = _Run(variant, model, payoff, epsilon, streams.child(0), cfg)
    while True:
        for l in range(L + 1):
            if l not in run.acc:
                run.open_level(l, L)
        if cfg.early_deepening and L < cfg.max_level and run.screen(L):
            # skip the full allocation; warm-up samples already reject this L
            if variant.law_depends_on_finest_level:
                run.discard(L)
            L += 1
            continue
        run.fill(L)
        bias = _bias_estimate(run.acc, L, cfg.weak_order)
        if L >= cfg.min_finest_level and bias < epsilon / math.sqrt(2):
            break
        if L >= cfg.max_level:
            diag = {
                "finest_level": L,
                "bias_estimate": bias,
                "means": [run.acc[l].mean for l in range(L + 1)],
                "total_cost": overhead + run.discarded + sum(run.level_cost(l) for l in range(L + 1)),
            }
            raise ConvergenceError(f"bias test failed at maximum level {L} (bias {bias:.3g})", diag)
        if variant.law_depends_on_finest_level:
            run.discard(L)
        L += 1

    overhead += run.discarded
    stats = []
    for l in range(L + 1):
        exact = l == 0 and run.enum_level0 is not None
        acc = run.acc[l]
        stats.append(
            LevelStats(
                level=l,
                mean=acc.mean,
                variance=0.0 if exact else acc.variance,
                paths=0 if exact else acc.count,
                cost_units=run.level_cost(l),
                enumerated=exact,
            )
        )
    beta, order = _fits(run.acc, L)
    var_est = sum(s.variance / s.paths for s in stats if s.paths > 0)
    enumerated = run.enum_level0 is not None
    return MlmcEstimate(
        value=math.fsum(s.mean for s in stats),
        levels=stats,
        total_cost=overhead + sum(s.cost_units for s in stats),
        target_rmse=epsilon,
        beta_fit=beta,
        convergence_fit=order,
        finest_level=L,
        level0_enumerated=enumerated,
        level0_paths=outcome_count(L, 0, model.dim_wiener) if enumerated else stats[0].paths,
        overhead_cost=overhead,
        pilot_levels=pilot_levels,
        variance_estimate=var_est,
        bias_estimate=bias,
        warnings=warnings + run.warnings,
    )
