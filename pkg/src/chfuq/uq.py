"""Prediction intervals: split conformal, Gaussian bounds, QD bounds, Bayesian MC."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats as sps

from . import nn
from .special import normal_ppf
from .stats import picp as _picp

DEFAULT_CALIBRATION_SIZE = 300


@dataclass
class PredictionBundle:
    mu: np.ndarray
    sigma: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sigma_model2: np.ndarray | None = None
    sigma_data2: np.ndarray | None = None
    sigma_pred2: np.ndarray | None = None
    reliable: np.ndarray | None = None

    def picp(self, y) -> float:
        if self.lower is None:
            raise ValueError("bundle carries no interval")
        return _picp(self.lower, self.upper, y)

    def scaled(self, factor: float) -> "PredictionBundle":
        """Rescale every location/scale field by ``factor`` (variances by its square)."""
        def lin(a):
            return None if a is None else a * factor

        def quad(a):
            return None if a is None else a * factor ** 2

        model2, data2 = quad(self.sigma_model2), quad(self.sigma_data2)
        # rebuild the sum so the decomposition stays exact after rescaling
        pred2 = model2 + data2 if model2 is not None and data2 is not None \
            else quad(self.sigma_pred2)
        return PredictionBundle(lin(self.mu), lin(self.sigma), lin(self.lower), lin(self.upper),
                                model2, data2, pred2, self.reliable)


@dataclass
class CalibrationResult:
    kind: str
    quantile: float
    m: int
    alpha: float
    rank: int
    infinite: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "quantile": self.quantile, "m": self.m, "alpha": self.alpha,
                "rank": self.rank, "infinite": self.infinite}

    @classmethod
    def from_dict(cls, d) -> "CalibrationResult":
        return cls(kind=d["kind"], quantile=float(d["quantile"]), m=int(d["m"]),
                   alpha=float(d["alpha"]), rank=int(d["rank"]), infinite=bool(d["infinite"]))


def conformal_rank(m: int, alpha: float) -> int:
    # small epsilon guards against (m+1)(1-alpha) landing a hair above an integer
    return int(math.ceil((m + 1) * (1.0 - alpha) - 1e-9))


def empirical_quantile(values, alpha: float, kind: str = "vanilla") -> CalibrationResult:
    """The ``ceil((m+1)(1-alpha))``-th smallest value; flags ``infinite`` when that exceeds m."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    m = len(values)
    if m == 0:
        raise ValueError("no calibration scores")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = conformal_rank(m, alpha)
    if k > m:
        return CalibrationResult(kind, math.inf, m, alpha, k, infinite=True)
    q = float(np.partition(values, k - 1)[k - 1])
    return CalibrationResult(kind, q, m, alpha, k)


def _predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    if callable(model) and not hasattr(model, "predict"):
        return model
    return model.predict


def cp_calibrate_vanilla(model, X_cal, y_cal, alpha: float) -> CalibrationResult:
    mu = np.asarray(_predictor(model)(X_cal), dtype=np.float64).reshape(-1)
    residuals = np.abs(np.asarray(y_cal, dtype=np.float64).reshape(-1) - mu)
    return empirical_quantile(residuals, alpha, "vanilla")


def cp_interval_vanilla(mu, result: CalibrationResult) -> tuple[np.ndarray, np.ndarray]:
    if result.kind != "vanilla":
        raise ValueError("expected a vanilla calibration result")
    mu = np.asarray(mu, dtype=np.float64)
    return mu - result.quantile, mu + result.quantile


def cp_calibrate_adaptive(model, sigma_model, X_cal, y_cal, alpha: float) -> CalibrationResult:
    mu = np.asarray(_predictor(model)(X_cal), dtype=np.float64).reshape(-1)
    sigma = np.asarray(_predictor(sigma_model)(X_cal), dtype=np.float64).reshape(-1)
    if np.any(sigma <= 0):
        raise ValueError("uncertainty estimates must be strictly positive")
    scores = np.abs(np.asarray(y_cal, dtype=np.float64).reshape(-1) - mu) / sigma
    return empirical_quantile(scores, alpha, "adaptive")


def cp_interval_adaptive(mu, sigma, result: CalibrationResult) -> tuple[np.ndarray, np.ndarray]:
    if result.kind != "adaptive":
        raise ValueError("expected an adaptive calibration result")
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if result.infinite:
        return np.full_like(mu, -np.inf), np.full_like(mu, np.inf)
    return mu - sigma * result.quantile, mu + sigma * result.quantile


@dataclass(frozen=True)
class BetaCoverageLaw:
    l: int  # noqa: E741 - conventional name of the order-statistic index
    a: int
    b: int

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def cdf(self, x):
        return sps.beta.cdf(x, self.a, self.b)


def beta_coverage_params(n: int, alpha: float) -> BetaCoverageLaw:
    """Coverage law ``Beta(l, n + 1 - l)`` with ``l = ceil((n + 1)(1 - alpha))``."""
    if n < 1:
        raise ValueError("calibration size must be >= 1")
    k = conformal_rank(n, alpha)
    return BetaCoverageLaw(l=k, a=k, b=n + 1 - k)


@dataclass
class CoverageSimulation:
    coverage: np.ndarray
    law: BetaCoverageLaw
    ks_distance: float
    mean: float
    fraction_below_target: float
    infinite_trials: int

    def summary(self) -> dict:
        return {"trials": int(len(self.coverage)), "l": self.law.l, "a": self.law.a,
                "b": self.law.b, "beta_mean": self.law.mean, "ks_distance": self.ks_distance,
                "mean": self.mean, "fraction_below_target": self.fraction_below_target,
                "infinite_trials": self.infinite_trials}


def coverage_simulation(generator: Callable, model, m: int, alpha: float, trials: int,
                        seed: int = 0, test_size: int = 20000, test_data=None,
                        ) -> CoverageSimulation:
    """Repeat vanilla split-conformal calibration on fresh calibration draws.

    ``generator(n, rng)`` returns ``(X, y)``. The test set is drawn once (or
    passed as ``test_data``); each trial draws ``m`` calibration points with
    its own child seed and records test coverage.
    """
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    predict = _predictor(model)
    seeds = np.random.SeedSequence(seed).spawn(trials + 1)
    if test_data is None:
        X_test, y_test = generator(test_size, np.random.default_rng(seeds[0]))
    else:
        X_test, y_test = test_data
    y_test = np.asarray(y_test, dtype=np.float64).reshape(-1)
    abs_res = np.sort(np.abs(y_test - np.asarray(predict(X_test), dtype=np.float64).reshape(-1)))
    law = beta_coverage_params(m, alpha)
    coverage = np.empty(trials)
    infinite = 0
    for t in range(trials):
        X_cal, y_cal = generator(m, np.random.default_rng(seeds[t + 1]))
        result = cp_calibrate_vanilla(predict, X_cal, y_cal, alpha)
        if result.infinite:
            infinite += 1
            coverage[t] = 1.0
        else:
            coverage[t] = np.searchsorted(abs_res, result.quantile, side="right") / len(abs_res)
    ks = float(sps.kstest(coverage, law.cdf).statistic)
    return CoverageSimulation(coverage, law, ks, float(coverage.mean()),
                              float(np.mean(coverage < 1.0 - alpha)), infinite)


def hr_interval(mu, sigma, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian bounds ``mu -+ sigma * z_{1-alpha/2}``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    delta = sigma * normal_ppf(1.0 - alpha / 2.0)
    return mu - delta, mu + delta


def bnn_predict(spec: nn.NetworkSpec, params: nn.ParameterSet, x, samples: int,
                alpha: float, seed: int = 0) -> PredictionBundle:
    """Monte Carlo prediction with a model/data variance split."""
    if samples < 2:
        raise ValueError("at least two samples are needed for a variance")
    if spec.head != "double":
        raise ValueError("Bayesian prediction needs a (mu, sigma) network")
    mode = nn.ForwardMode(phase="eval", stochastic=spec.bayesian, seed=seed)
    mus, variances = [], []
    for _ in range(samples):
        out = nn.predict_arrays(x, spec, params, mode)
        mus.append(out["mu"])
        variances.append(out["sigma"] ** 2)
    mus = np.stack(mus)
    mu = mus.mean(axis=0)
    data2 = np.stack(variances).mean(axis=0)
    model2 = mus.var(axis=0, ddof=1)
    pred2 = model2 + data2
    sigma = np.sqrt(pred2)
    lower, upper = hr_interval(mu, sigma, alpha)
    return PredictionBundle(mu=mu, sigma=sigma, lower=lower, upper=upper,
                            sigma_model2=model2, sigma_data2=data2, sigma_pred2=pred2)


def qd_extract(mu, lower, upper) -> PredictionBundle:
    """Pass bounds through; flag rows where ``mu`` lies outside them."""
    mu, lower, upper = (np.asarray(a, dtype=np.float64) for a in (mu, lower, upper))
    reliable = ~((upper < mu) | (lower > mu))
    return PredictionBundle(mu=mu, lower=lower, upper=upper, reliable=reliable)
