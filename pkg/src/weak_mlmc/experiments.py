"""Experiment configuration, the variance/convergence/complexity studies and CSV output."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import models
from .engine import (
    EstimatorVariant,
    MlmcConfig,
    _Accumulator,
    level_correction_samples,
    run_mlmc,
)
from .enumeration import DEFAULT_BUDGET
from .streams import RandomStreams

OUT_ENV = "WEAK_MLMC_OUT"
DEFAULT_RMSE = (5e-4, 2e-4, 1e-4, 5e-5, 2e-5, 1e-5)
Z95 = 1.959963984540054

VARIANCE_HEADER = ("level", "variance", "err")
MEAN_HEADER = ("level", "mean", "err")
PATHS_HEADER = ("rmse", "paths", "err")
COST_HEADER = ("rmse", "cost", "err")

_VARIANT_INDEX = {v: i for i, v in enumerate(EstimatorVariant)}
_STUDY_LEVELS, _STUDY_COMPLEXITY, _STUDY_PRICE = 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass
class ExperimentConfig:
    model: str = "basket"
    params: dict = field(default_factory=dict)
    payoff: str | None = None
    variants: tuple[EstimatorVariant, ...] = tuple(EstimatorVariant)
    rmse: tuple[float, ...] = DEFAULT_RMSE
    repetitions: int = 100
    seed: int = 20180101
    out: Path = Path("results")
    enum_budget: int = DEFAULT_BUDGET
    levels: int = 6
    samples: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if not self.rmse:
            raise ConfigError("rmse list is empty")
        if any(not (e > 0) for e in self.rmse):
            raise ConfigError("rmse values must be strictly positive")
        if any(a <= b for a, b in zip(self.rmse, self.rmse[1:])):
            raise ConfigError("rmse values must be sorted in strictly descending order")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.samples < 0:
            raise ConfigError("samples must be nonnegative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.model not in MODEL_BUILDERS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(MODEL_BUILDERS)}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def mlmc_config(self) -> MlmcConfig:
        return MlmcConfig(enum_budget=self.enum_budget)


# --- config parsing -------------------------------------------------------

_KEYS = {
    "model": str,
    "payoff": str,
    "variants": "variants",
    "variant": "variants",
    "rmse": "floats",
    "reps": int,
    "repetitions": int,
    "seed": int,
    "out": Path,
    "enum_budget": int,
    "enum-budget": int,
    "levels": int,
    "samples": int,
    "jobs": int,
}
_CANON = {"variant": "variants", "reps": "repetitions", "enum-budget": "enum_budget"}


def parse_variants(text: str) -> tuple[EstimatorVariant, ...]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    if not names:
        raise ValueError("empty variant list")
    if names == ["all"]:
        return tuple(EstimatorVariant)
    try:
        return tuple(EstimatorVariant(n) for n in names)
    except ValueError:
        raise ValueError(f"unknown variant in {text!r}; choose from euler, normal, binomial") from None


def _convert(key: str, raw: str):
    kind = _KEYS[key]
    if kind == "variants":
        return parse_variants(raw)
    if kind == "floats":
        return tuple(float(t) for t in raw.split(",") if t.strip())
    if kind is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw, 0)
    return kind(raw)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; ``param.<name>`` sets a model parameter."""
    values: dict = {}
    params: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno, source)
        key, raw = (t.strip() for t in stripped.split("=", 1))
        if not raw:
            raise ConfigError(f"missing value for {key!r}", lineno, source)
        if key.startswith("param."):
            name = key[len("param."):]
            try:
                params[name] = json.loads(raw)
            except json.JSONDecodeError:
                raise ConfigError(f"parameter {name!r} is not a number or JSON array: {raw!r}", lineno, source) from None
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, source)
        try:
            values[_CANON.get(key, key)] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from None
    if params:
        values["params"] = params
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then ``overrides`` (CLI flags)."""
    merged: dict = {}
    if os.environ.get(OUT_ENV):
        merged["out"] = Path(os.environ[OUT_ENV])
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", source=str(p)) from None
        merged.update(parse_config_text(text, str(p)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "params":
            merged["params"] = {**merged.get("params", {}), **value}
        else:
            merged[key] = value
    known = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig(**{k: v for k, v in merged.items() if k in known})
    cfg.validate()
    build_problem(cfg)
    return cfg


# --- models ----------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    model: object
    payoff: object
    reference: float | None = None


def _basket(params, payoff):
    allowed = {f.name for f in fields(models.BasketModelParams)}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown basket parameters {sorted(unknown)}")
    p = models.BasketModelParams(**{k: float(v) for k, v in params.items()})
    if payoff not in (None, "basket"):
        raise ConfigError("the basket model only supports the basket payoff")
    return Problem(models.basket_model(p), models.basket_payoff(p))


def _gbm(params, payoff):
    allowed = {"rate", "vol", "x0", "horizon"}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown gbm parameters {sorted(unknown)}")
    kw = {"rate": 0.2, "vol": 0.1, "x0": 1.0, "horizon": 1.0, **{k: float(v) for k, v in params.items()}}
    model = models.gbm_model(**kw)
    if payoff in (None, "identity"):
        return Problem(model, models.first_component, models.gbm_mean(kw["rate"], kw["x0"], kw["horizon"]))
    if payoff == "constant":
        return Problem(model, models.constant_payoff(1.0), 1.0)
    raise ConfigError(f"unsupported gbm payoff {payoff!r}")


def _linear(params, payoff):
    try:
        A = params["drift"]
        Bs = params["diffusion"]
        x0 = params["x0"]
    except KeyError as exc:
        raise ConfigError(f"linear model needs param.{exc.args[0]}") from None
    try:
        model = models.linear_sde(
            A, Bs, x0, float(params.get("horizon", 1.0)), correlation=params.get("correlation"), name="linear"
        )
    except ValueError as exc:
        raise ConfigError(f"invalid linear model: {exc}") from None
    if payoff in (None, "identity"):
        f = models.first_component
    elif payoff == "sum":
        def f(x):
            return x.sum(axis=-1)
    elif payoff == "constant":
        f = models.constant_payoff(float(params.get("value", 1.0)))
    elif payoff == "call-on-sum":
        strike = float(params.get("strike", 0.0))
        disc = float(params.get("discount", 1.0))

        def f(x):
            return disc * np.maximum(x.sum(axis=-1) - strike, 0.0)
    else:
        raise ConfigError(f"unsupported linear payoff {payoff!r}")
    return Problem(model, f)


MODEL_BUILDERS = {"basket": _basket, "gbm": _gbm, "linear": _linear}


def build_problem(config: ExperimentConfig) -> Problem:
    return MODEL_BUILDERS[config.model](dict(config.params), config.payoff)


# --- statistics --------------------------------------------------------------


def mean_ci(values) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width over repetitions."""
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    if a.size == 1:
        return float(a[0]), 0.0
    return float(a.mean()), float(Z95 * a.std(ddof=1) / math.sqrt(a.size))


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- level studies (variance and convergence) --------------------------------


def _level_moments_task(task):
    config, variant, rep = task
    prob = build_problem(config)
    streams = RandomStreams(config.seed).child(_STUDY_LEVELS, _VARIANT_INDEX[variant], rep)
    out = {}
    if config.samples > 0:
        L = config.levels
        block = 1 << 16
        for l in range(1, L + 1):
            acc = _Accumulator()
            for b, start in enumerate(range(0, config.samples, block)):
                n = min(block, config.samples - start)
                ys = level_correction_samples(
                    variant, prob.model, prob.payoff, l, n, streams.generator(l, b), finest_level=L
                )
                acc.add(ys)
            out[l] = (acc.mean, acc.variance)
    else:
        est = run_mlmc(variant, prob.model, prob.payoff, config.rmse[-1], streams, config.mlmc_config())
        for s in est.levels[1:]:
            out[s.level] = (s.mean, s.variance)
    return out


def level_study(config: ExperimentConfig) -> dict:
    """Per variant and level: lists of (mean, variance) of ``Y_l`` over repetitions.

    With ``config.samples > 0`` every level ``1..config.levels`` gets that
    many samples (binomial laws use ``L = config.levels``); otherwise each
    repetition runs a full MLMC estimate at the finest configured RMSE.
    """
    results = {}
    for variant in config.variants:
        tasks = [(config, variant, r) for r in range(config.repetitions)]
        per_rep = _map(_level_moments_task, tasks, config.jobs)
        levels = sorted({l for rep in per_rep for l in rep})
        results[variant] = {l: [rep[l] for rep in per_rep if l in rep] for l in levels}
    return results


def variance_rows(study_variant: dict) -> list[tuple]:
    rows = []
    for l, vals in study_variant.items():
        m, e = mean_ci([v for _, v in vals])
        rows.append((l, m, e))
    return rows


def convergence_rows(study_variant: dict) -> list[tuple]:
    rows = []
    for l, vals in study_variant.items():
        m, e = mean_ci([abs(mu) for mu, _ in vals])
        rows.append((l, m, e))
    return rows


def run_variance_study(config: ExperimentConfig, study: dict | None = None) -> dict:
    study = level_study(config) if study is None else study
    return {v: variance_rows(s) for v, s in study.items()}


def run_convergence_study(config: ExperimentConfig, study: dict | None = None) -> dict:
    study = level_study(config) if study is None else study
    return {v: convergence_rows(s) for v, s in study.items()}


# --- complexity study ----------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    rmse: float
    value: float
    total_cost: int
    level0_paths: int
    finest_level: int
    overhead_cost: int
    warnings: tuple[str, ...] = ()


def _mlmc_task(task):
    config, variant, study, rep, idx = task
    prob = build_problem(config)
    streams = RandomStreams(config.seed).child(study, _VARIANT_INDEX[variant], rep, idx)
    eps = config.rmse[idx]
    est = run_mlmc(variant, prob.model, prob.payoff, eps, streams, config.mlmc_config())
    return RunSummary(
        eps, est.value, est.total_cost, est.level0_paths, est.finest_level, est.overhead_cost, tuple(est.warnings)
    )


def mlmc_sweep(config: ExperimentConfig, study: int = _STUDY_COMPLEXITY) -> dict:
    """``{variant: [[RunSummary per repetition] per rmse]}``."""
    out = {}
    for variant in config.variants:
        tasks = [
            (config, variant, study, r, i) for i in range(len(config.rmse)) for r in range(config.repetitions)
        ]
        flat = _map(_mlmc_task, tasks, config.jobs)
        reps = config.repetitions
        out[variant] = [flat[i * reps:(i + 1) * reps] for i in range(len(config.rmse))]
    return out


def run_complexity_study(config: ExperimentConfig, sweep: dict | None = None) -> dict:
    """``{variant: {"paths": rows, "cost": rows}}`` with cost reported as ``rmse^2 * cost``."""
    sweep = mlmc_sweep(config) if sweep is None else sweep
    out = {}
    for variant, per_eps in sweep.items():
        paths, cost = [], []
        for runs in per_eps:
            eps = runs[0].rmse
            paths.append((eps, *mean_ci([r.level0_paths for r in runs])))
            cost.append((eps, *mean_ci([eps**2 * r.total_cost for r in runs])))
        out[variant] = {"paths": paths, "cost": cost}
    return out


def run_price(config: ExperimentConfig) -> list[dict]:
    sweep = mlmc_sweep(config, _STUDY_PRICE)
    ref = build_problem(config).reference
    rows = []
    for variant, per_eps in sweep.items():
        for runs in per_eps:
            value, err = mean_ci([r.value for r in runs])
            cost, _ = mean_ci([r.total_cost for r in runs])
            rows.append(
                {
                    "variant": variant.value,
                    "rmse": runs[0].rmse,
                    "value": value,
                    "err": err,
                    "cost": cost,
                    "finest_level": max(r.finest_level for r in runs),
                    "reference": "" if ref is None else ref,
                }
            )
    return rows


# --- CSV -------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def emit_csv(rows, path, header=VARIANCE_HEADER) -> Path:
    """Write ``rows`` under ``header``: comma separated, LF line ends, shortest round-trip floats."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                if isinstance(row, dict):
                    row = [row[h] for h in header]
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [[float(c) for c in row] for row in r]


def variant_dir(out: Path, variant: EstimatorVariant) -> Path:
    return Path(out) / variant.value


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    cfg = replace(config, **kw)
    cfg.validate()
    return cfg
