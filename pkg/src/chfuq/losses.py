"""Training objectives built on the autodiff engine.

All losses take ``(n, 1)`` tensors (or arrays, treated as constants) and
return a 1x1 tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as E
from .engine import Tensor

LOSS_KINDS = ("mse", "rmspe", "ghr", "qd", "elbo")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "rmspe"
    gamma: float = 0.5
    lam: float = 0.1
    alpha: float = 0.05
    softness: float = 200.0
    beta_kl: float = 1.0
    prior_sigma: float = 1.0
    mc_samples: int = 1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.softness <= 0:
            raise ValueError("softness must be positive")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be non-negative")
        if self.prior_sigma <= 0:
            raise ValueError("prior_sigma must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


def _pair(mu, y) -> tuple[Tensor, Tensor]:
    mu, y = E.as_tensor(mu), E.as_tensor(y)
    if mu.shape != y.shape:
        raise ValueError(f"prediction shape {mu.shape} != target shape {y.shape}")
    if mu.shape[0] == 0:
        raise ValueError("empty batch")
    return mu, y


def mse_loss(mu, y) -> Tensor:
    mu, y = _pair(mu, y)
    return E.mean(E.square(y - mu))


def rmspe_loss(mu, y) -> Tensor:
    """Fractional root mean squared percentage error."""
    mu, y = _pair(mu, y)
    if np.any(y.data == 0):
        raise ValueError("rmspe is undefined for zero targets")
    return E.sqrt(E.mean(E.square((y - mu) / y)))


def ghr_loss(mu, var, y, gamma: float) -> Tensor:
    """Weighted Gaussian NLL: mean of gamma/2 ln var + (1-gamma) (y-mu)^2 / (2 var)."""
    mu, y = _pair(mu, y)
    var = E.as_tensor(var)
    if var.shape != mu.shape:
        raise ValueError(f"variance shape {var.shape} != prediction shape {mu.shape}")
    if np.any(var.data <= 0):
        raise ValueError("variance must be strictly positive")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    terms = (gamma / 2.0) * E.log(var) + (1.0 - gamma) * E.square(y - mu) / (2.0 * var)
    return E.mean(terms)


def soft_indicator(y, lower, upper, s: float) -> Tensor:
    """Product of sigmoids approximating ``lower <= y <= upper``."""
    if s <= 0:
        raise ValueError("softness must be positive")
    y, lower, upper = E.as_tensor(y), E.as_tensor(lower), E.as_tensor(upper)
    return E.sigmoid(s * (y - lower)) * E.sigmoid(s * (upper - y))


def hard_indicator(y, lower, upper) -> np.ndarray:
    y, lower, upper = (np.asarray(getattr(a, "data", a), dtype=float) for a in (y, lower, upper))
    return (lower <= y) & (y <= upper)


@dataclass
class QDComponents:
    total: float
    rmspe: float
    mpiw_soft: float
    mpiw_hard: float
    picp_soft: float
    picp_hard: float
    penalty: float


def qd_loss(mu, lower, upper, y, config: LossConfig) -> tuple[Tensor, QDComponents]:
    """RMSPE on ``mu`` blended with the quality-driven interval objective.

    The captured-width term and the coverage estimate both use the soft
    indicator so that they carry gradient; hard-indicator values are returned
    for logging. When no sample is captured the width term is zero.
    """
    mu, y = _pair(mu, y)
    lower, upper = E.as_tensor(lower), E.as_tensor(upper)
    n = y.shape[0]
    alpha = config.alpha
    k_soft = soft_indicator(y, lower, upper, config.softness)
    k_hard = hard_indicator(y, lower, upper)
    width = upper - lower
    captured = int(k_hard.sum())
    if captured == 0:
        mpiw = Tensor(0.0)
        mpiw_hard = 0.0
    else:
        mpiw = E.sum(width * k_soft) / E.sum(k_soft)
        mpiw_hard = float((width.data * k_hard).sum() / captured)
    picp_soft = E.mean(k_soft)
    shortfall = E.relu((1.0 - alpha) - picp_soft)
    penalty = (config.lam * n / (alpha * (1.0 - alpha))) * E.square(shortfall)
    rmspe = rmspe_loss(mu, y)
    total = config.gamma * rmspe + (1.0 - config.gamma) * (mpiw + penalty)
    parts = QDComponents(
        total=total.item(),
        rmspe=rmspe.item(),
        mpiw_soft=mpiw.item(),
        mpiw_hard=mpiw_hard,
        picp_soft=picp_soft.item(),
        picp_hard=float(k_hard.mean()),
        penalty=penalty.item(),
    )
    return total, parts


def beta_elbo_loss(
    sampler: Callable[[], tuple[Tensor, Tensor]],
    y,
    kl: Tensor | None,
    n_train: int,
    config: LossConfig,
) -> Tensor:
    """Monte Carlo weighted NLL plus ``beta_kl * KL / n_train``.

    ``sampler`` performs one stochastic forward pass and returns ``(mu, var)``.
    ``kl`` is the closed-form KL of the variational posterior to the prior.
    """
    if kl is None:
        raise ValueError("beta-ELBO needs a network with Bayesian layers")
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    nll = None
    for _ in range(config.mc_samples):
        mu, var = sampler()
        term = ghr_loss(mu, var, y, config.gamma)
        nll = term if nll is None else nll + term
    nll = nll / float(config.mc_samples)
    return nll + (config.beta_kl / n_train) * kl
