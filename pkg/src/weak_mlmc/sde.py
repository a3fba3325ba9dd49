"""SDE models and one-step schemes (weak Euler, Milstein without Levy areas).

All step functions are vectorised over paths: a state argument may be a
single vector of shape ``(d,)`` or a batch of shape ``(n, d)``; increments
follow the same convention with trailing dimension ``m``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SchemeKind(enum.Enum):
    WEAK_EULER = "euler"
    MILSTEIN_NO_LEVY = "milstein"


class SimulationFault(FloatingPointError):
    """A path produced a non-finite state."""

    def __init__(self, message: str, step: int | None = None, level: int | None = None):
        super().__init__(message)
        self.step = step
        self.level = level


# Coefficient callables receive a state batch of shape (n, d).
Drift = Callable[[np.ndarray], np.ndarray]
DiffusionCol = Callable[[np.ndarray, int], np.ndarray]
DiffusionJac = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class SdeModel:
    """Autonomous SDE ``dX = mu(X) dt + sum_j sigma_j(X) dW_j`` on ``[0, T]``.

    ``drift(x)`` maps ``(n, d) -> (n, d)``, ``diffusion_col(x, j)`` returns
    column ``j`` of the diffusion matrix with shape ``(n, d)`` and
    ``diffusion_col_jac(x, j)`` its Jacobian with shape ``(n, d, d)``, where
    ``[..., a, b] = d sigma_{a j} / d x_b``. A state-independent Jacobian
    may be returned as a single ``(d, d)`` matrix.
    """

    dim_state: int
    dim_wiener: int
    drift: Drift
    diffusion_col: DiffusionCol
    diffusion_col_jac: DiffusionJac
    x0: np.ndarray
    horizon: float
    correlation: np.ndarray = field(default=None)  # type: ignore[assignment]
    name: str = "sde"

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_wiener < 1:
            raise ValueError("dimensions must be positive")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        x0 = np.asarray(self.x0, dtype=float).reshape(self.dim_state)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.correlation is None:
            corr = np.eye(self.dim_wiener)
        else:
            corr = np.array(self.correlation, dtype=float)
        if corr.shape != (self.dim_wiener, self.dim_wiener):
            raise ValueError(f"correlation must be {self.dim_wiener}x{self.dim_wiener}")
        if not np.allclose(corr, corr.T, rtol=0, atol=1e-14):
            raise ValueError("correlation must be symmetric")
        if not np.all(np.diag(corr) == 1.0):
            raise ValueError("correlation must have unit diagonal")
        corr.setflags(write=False)
        object.__setattr__(self, "correlation", corr)

    @property
    def independent_noise(self) -> bool:
        return bool(np.array_equal(self.correlation, np.eye(self.dim_wiener)))

    def step_size(self, level: int) -> float:
        return self.horizon / 2**level


def _as_batch(x, xi):
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), np.atleast_2d(xi), single


def _check_finite(out: np.ndarray) -> None:
    if not np.isfinite(out).all():
        raise SimulationFault("non-finite state produced by step")


def _euler_batch(model: SdeModel, x: np.ndarray, dt: float, xi: np.ndarray) -> np.ndarray:
    out = x + dt * model.drift(x)
    for j in range(model.dim_wiener):
        out += model.diffusion_col(x, j) * xi[:, j, None]
    return out


def _milstein_batch(model: SdeModel, x: np.ndarray, dt: float, xi: np.ndarray) -> np.ndarray:
    m = model.dim_wiener
    cols = [model.diffusion_col(x, j) for j in range(m)]
    out = x + dt * model.drift(x)
    for j in range(m):
        out += cols[j] * xi[:, j, None]
    corr = model.correlation
    for j in range(m):
        xj = xi[:, j, None]
        # v_j = sum_k sigma_k (xi_j xi_k - Omega_jk dt)
        v = cols[0] * (xj * xi[:, 0, None] - corr[j, 0] * dt)
        for k in range(1, m):
            v += cols[k] * (xj * xi[:, k, None] - corr[j, k] * dt)
        jac = model.diffusion_col_jac(x, j)
        if jac.ndim == 2:
            out += 0.5 * (v @ jac.T)
        else:
            out += 0.5 * np.einsum("nab,nb->na", jac, v)
    return out


def _validate(model: SdeModel, dt: float, xi: np.ndarray) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if xi.shape[-1] != model.dim_wiener:
        raise ValueError(f"increment has {xi.shape[-1]} components, model needs {model.dim_wiener}")


def euler_step(model: SdeModel, x, dt: float, xi) -> np.ndarray:
    """One weak Euler step ``x + mu(x) dt + sum_j sigma_j(x) xi_j``."""
    xb, xib, single = _as_batch(x, xi)
    _validate(model, dt, xib)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _euler_batch(model, xb, dt, xib)
    _check_finite(out)
    return out[0] if single else out


def milstein_step_no_levy(model: SdeModel, x, dt: float, xi) -> np.ndarray:
    """One Milstein step with the Levy-area terms dropped.

    Adds ``1/2 sum_{j,k} sigma_j'(x) sigma_k(x) (xi_j xi_k - Omega_jk dt)``
    to the Euler step.
    """
    xb, xib, single = _as_batch(x, xi)
    _validate(model, dt, xib)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _milstein_batch(model, xb, dt, xib)
    _check_finite(out)
    return out[0] if single else out


_STEPPERS = {
    SchemeKind.WEAK_EULER: _euler_batch,
    SchemeKind.MILSTEIN_NO_LEVY: _milstein_batch,
}


def step_fn(scheme: SchemeKind):
    return _STEPPERS[SchemeKind(scheme)]


def level_of(num_steps: int) -> int:
    """Level ``l`` such that ``num_steps == 2**l``."""
    if num_steps < 1 or num_steps & (num_steps - 1):
        raise ValueError(f"number of steps must be a power of two, got {num_steps}")
    return num_steps.bit_length() - 1


def simulate_path(model: SdeModel, scheme: SchemeKind, increments) -> np.ndarray:
    """Terminal state after folding the scheme over ``increments``.

    ``increments`` has shape ``(2**l, m)`` for one path or ``(2**l, n, m)``
    for a batch of ``n`` paths; the step size is ``T / 2**l``.
    """
    incs = np.asarray(increments, dtype=float)
    single = incs.ndim == 2
    if single:
        incs = incs[:, None, :]
    if incs.ndim != 3 or incs.shape[-1] != model.dim_wiener:
        raise ValueError(f"increments must have shape (steps, [n,] {model.dim_wiener})")
    level = level_of(incs.shape[0])
    dt = model.step_size(level)
    step = step_fn(scheme)
    x = np.broadcast_to(model.x0, (incs.shape[1], model.dim_state)).copy()
    for i in range(incs.shape[0]):
        with np.errstate(over="ignore", invalid="ignore"):
            x = step(model, x, dt, incs[i])
        if not np.isfinite(x).all():
            raise SimulationFault(f"non-finite state at step {i} of level {level}", step=i, level=level)
    return x[0] if single else x


def antithetic_increments(fine):
    """Swap every adjacent pair ``(2i-1, 2i)`` along the first axis."""
    arr = np.asarray(fine)
    if arr.shape[0] % 2:
        raise ValueError(f"antithetic swap needs an even number of increments, got {arr.shape[0]}")
    out = np.empty_like(arr)
    out[0::2] = arr[1::2]
    out[1::2] = arr[0::2]
    return out
