"""Ready-made models and payoffs: linear SDEs, scalar GBM and the two-asset basket."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sde import SdeModel


def linear_sde(drift_matrix, diffusion_matrices, x0, horizon, correlation=None, name="linear") -> SdeModel:
    """``dX = A X dt + sum_j B_j X dW_j`` with constant ``A`` and ``B_j``.

    Column ``j`` of the diffusion is ``B_j x`` and its Jacobian is ``B_j``.
    """
    A = np.array(drift_matrix, dtype=float, ndmin=2)
    Bs = [np.array(b, dtype=float, ndmin=2) for b in diffusion_matrices]
    d = A.shape[0]
    if A.shape != (d, d) or any(b.shape != (d, d) for b in Bs):
        raise ValueError("drift and diffusion matrices must all be d x d")
    for mat in (A, *Bs):
        mat.setflags(write=False)
    At = A.T
    Bts = [b.T for b in Bs]

    def drift(x):
        return x @ At

    def diffusion_col(x, j):
        return x @ Bts[j]

    def diffusion_col_jac(x, j):
        return Bs[j]

    return SdeModel(
        dim_state=d,
        dim_wiener=len(Bs),
        drift=drift,
        diffusion_col=diffusion_col,
        diffusion_col_jac=diffusion_col_jac,
        x0=np.asarray(x0, dtype=float),
        horizon=float(horizon),
        correlation=correlation,
        name=name,
    )


def gbm_model(rate=0.2, vol=0.1, x0=1.0, horizon=1.0) -> SdeModel:
    return linear_sde([[rate]], [[[vol]]], [x0], horizon, name="gbm")


def gbm_mean(rate, x0, horizon) -> float:
    return x0 * math.exp(rate * horizon)


@dataclass(frozen=True)
class BasketModelParams:
    horizon: float = 1.0
    strike: float = 2.0
    x1_0: float = 1.0
    x2_0: float = 1.0
    rate: float = 0.2
    sigma1: float = 0.05
    sigma2: float = 0.1
    sigma3: float = 0.15
    sigma4: float = 0.2


def basket_model(params: BasketModelParams = BasketModelParams()) -> SdeModel:
    """Two assets driven by two Wiener processes.

    dX1 = r X1 dt + s1 X1 dW1 + s2 (X1 + X2) dW2
    dX2 = r X2 dt + s3 X2 dW1 + s4 X2 dW2
    """
    p = params
    A = [[p.rate, 0.0], [0.0, p.rate]]
    B1 = [[p.sigma1, 0.0], [0.0, p.sigma3]]
    B2 = [[p.sigma2, p.sigma2], [0.0, p.sigma4]]
    return linear_sde(A, [B1, B2], [p.x1_0, p.x2_0], p.horizon, name="basket")


def basket_payoff(params: BasketModelParams = BasketModelParams()):
    discount = math.exp(-params.rate * params.horizon)
    strike = params.strike

    def payoff(x):
        return discount * np.maximum(x[..., 0] + x[..., 1] - strike, 0.0)

    return payoff


def first_component(x):
    return x[..., 0]


def constant_payoff(value: float = 1.0):
    def payoff(x):
        return np.full(np.shape(x)[:-1], value, dtype=float)

    return payoff
