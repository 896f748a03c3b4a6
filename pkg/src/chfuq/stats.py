"""Evaluation metrics, the Breusch-Pagan test and regime summaries.

Error metrics take predictions first and targets second. Interval metrics
take ``lower`` and ``upper`` arrays; infinite bounds are allowed and count as
covering.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .special import chi2_survival, normal_ppf

DEFAULT_BAND_EDGES = (0.0, 0.25, 0.5)
AUCE_GRID = 99


def _vectors(*arrays) -> list[np.ndarray]:
    out = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise ValueError("inputs must have equal length")
    if n == 0:
        raise ValueError("empty input")
    return out


def _check_nonzero(y):
    if np.any(y == 0):
        raise ValueError("percentage errors are undefined for zero targets")


def mape(mu, y) -> float:
    mu, y = _vectors(mu, y)
    _check_nonzero(y)
    return float(100.0 * np.mean(np.abs((y - mu) / y)))


def rmspe_metric(mu, y) -> float:
    mu, y = _vectors(mu, y)
    _check_nonzero(y)
    return float(100.0 * np.sqrt(np.mean(((y - mu) / y) ** 2)))


def rmse(mu, y) -> float:
    mu, y = _vectors(mu, y)
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def q2(mu, y) -> float:
    """Squared error over squared spread of predictions about the target mean."""
    mu, y = _vectors(mu, y)
    denom = np.sum((mu - y.mean()) ** 2)
    if denom <= 0:
        raise ValueError("q2 is undefined when every prediction equals the target mean")
    return float(np.sum((mu - y) ** 2) / denom)


def picp(lower, upper, y) -> float:
    lower, upper, y = _vectors(lower, upper, y)
    return float(np.mean((lower <= y) & (y <= upper)))


def informativeness_samples(mu, lower, upper) -> np.ndarray:
    mu, lower, upper = _vectors(mu, lower, upper)
    width = upper - lower
    with np.errstate(invalid="ignore", divide="ignore"):
        score = 1.0 - width / (2.0 * mu)
    ok = (width >= 0) & (width <= 2.0 * mu) & np.isfinite(width)
    return np.where(ok, score, 0.0)


def informativeness(mu, lower, upper) -> float:
    return float(100.0 * informativeness_samples(mu, lower, upper).mean())


def calibration_samples(mu, lower, upper, y) -> np.ndarray:
    """Triangular compatibility score with apex 1 at ``mu`` and 0 at the bounds.

    A side that collapses onto ``mu`` scores 1 only for ``y == mu``.
    """
    mu, lower, upper, y = _vectors(mu, lower, upper, y)
    out = np.zeros_like(y)
    inside = (lower <= y) & (y <= upper)
    at_apex = inside & (y == mu)
    out[at_apex] = 1.0
    left = inside & (y < mu) & (y >= lower) & (mu > lower)
    right = inside & (y > mu) & (y <= upper) & (mu < upper)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[left] = (y[left] - lower[left]) / (mu[left] - lower[left])
        out[right] = (y[right] - upper[right]) / (mu[right] - upper[right])
    # an infinite bound flattens the triangle: the limit score is 1
    out[left & np.isinf(lower)] = 1.0
    out[right & np.isinf(upper)] = 1.0
    return np.clip(out, 0.0, 1.0)


def calibration_triangular(mu, lower, upper, y) -> float:
    return float(100.0 * calibration_samples(mu, lower, upper, y).mean())


def uqf_samples(inform, calib) -> np.ndarray:
    inform, calib = _vectors(inform, calib)
    if np.any((inform < 0) | (inform > 1) | (calib < 0) | (calib > 1)):
        raise ValueError("per-sample scores must lie in [0, 1]")
    out = np.zeros_like(inform)
    pos = (inform > 0) & (calib > 0)
    out[pos] = 2.0 / (1.0 / inform[pos] + 1.0 / calib[pos])
    return out


def uqf(inform, calib) -> float:
    return float(100.0 * uqf_samples(inform, calib).mean())


def auce(y, mu=None, sigma=None, interval_fn: Callable | None = None,
         grid_size: int = AUCE_GRID) -> float:
    """Area between empirical and nominal coverage of central intervals.

    Either ``(mu, sigma)`` describe Gaussian predictive distributions, or
    ``interval_fn(p)`` returns ``(lower, upper)`` for nominal level ``p``.
    Levels form a uniform grid on [0, 1] including both ends; the area is
    integrated with the trapezoid rule.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if interval_fn is None:
        if mu is None or sigma is None:
            raise ValueError("pass either (mu, sigma) or interval_fn")
        mu, sigma = _vectors(mu, sigma)
        z_abs = np.abs(y - mu) / sigma

        def coverage(p):
            if p >= 1.0:
                return 1.0
            return float(np.mean(z_abs <= normal_ppf(0.5 + p / 2.0)))
    else:
        def coverage(p):
            lower, upper = interval_fn(p)
            return picp(lower, upper, y)

    grid = np.linspace(0.0, 1.0, grid_size)
    gaps = np.array([abs(coverage(p) - p) for p in grid])
    return float(np.sum((gaps[1:] + gaps[:-1]) * np.diff(grid)) / 2.0)


# ---------------------------------------------------------------------------
# Breusch-Pagan


class RankDeficientError(np.linalg.LinAlgError):
    """The design matrix does not have full column rank."""


@dataclass
class OLSResult:
    coef: np.ndarray
    residuals: np.ndarray
    r2: float


def ols_fit(X, targets) -> OLSResult:
    """Least squares with an intercept column, via Cholesky on the normal equations."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    n, p = X.shape
    if len(t) != n:
        raise ValueError("features and targets differ in length")
    if n <= p + 1:
        raise ValueError(f"need more than {p + 1} samples, got {n}")
    Z = np.column_stack([np.ones(n), X])
    # column equilibration keeps the Gram matrix well conditioned
    scale = np.sqrt(np.sum(Z * Z, axis=0))
    if np.any(scale == 0):
        raise RankDeficientError("design matrix has an all-zero column")
    Zs = Z / scale
    gram = Zs.T @ Zs
    if np.linalg.cond(gram) > 1e12:
        raise RankDeficientError("design matrix is rank deficient")
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("design matrix is rank deficient") from exc
    rhs = Zs.T @ t
    tmp = np.linalg.solve(chol, rhs)
    coef = np.linalg.solve(chol.T, tmp) / scale
    resid = t - Z @ coef
    ss_tot = np.sum((t - t.mean()) ** 2)
    r2 = 0.0 if ss_tot == 0 else float(1.0 - np.sum(resid ** 2) / ss_tot)
    return OLSResult(coef=coef, residuals=resid, r2=r2)


@dataclass
class BPTestResult:
    statistic: float
    dof: int
    p_value: float
    reject: bool
    r2: float
    alpha: float


def breusch_pagan(residuals, X, alpha: float = 0.05) -> BPTestResult:
    """Koenker's studentized test: ``N * R^2`` of squared residuals on ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    e2 = np.asarray(residuals, dtype=np.float64).reshape(-1) ** 2
    fit = ols_fit(X, e2)
    n, p = X.shape
    stat = n * fit.r2
    pval = chi2_survival(max(stat, 0.0), p)
    return BPTestResult(statistic=stat, dof=p, p_value=pval, reject=pval < alpha,
                        r2=fit.r2, alpha=alpha)


# ---------------------------------------------------------------------------
# regime summaries and the report


@dataclass
class BandSummary:
    band: str
    count: int
    mean: float | None
    std: float | None
    max: float | None

    @property
    def present(self) -> bool:
        return self.count > 0


def band_labels(edges: Sequence[float]) -> list[str]:
    edges = list(edges)
    labels = [f"X<{edges[0]:g}"]
    labels += [f"{lo:g}<=X<{hi:g}" for lo, hi in zip(edges[:-1], edges[1:])]
    labels.append(f"X>={edges[-1]:g}")
    return labels


def regime_width_summary(lower, upper, mu, quality, edges: Sequence[float] = DEFAULT_BAND_EDGES,
                         ) -> list[BandSummary]:
    """Relative interval width ``(upper - lower) / mu`` grouped by outlet-quality band."""
    edges = np.asarray(edges, dtype=np.float64)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("band edges must be strictly increasing")
    lower, upper, mu, quality = _vectors(lower, upper, mu, quality)
    rel = (upper - lower) / mu
    band = np.searchsorted(edges, quality, side="right")
    out = []
    for k, label in enumerate(band_labels(edges)):
        sel = rel[band == k]
        if len(sel) == 0:
            out.append(BandSummary(label, 0, None, None, None))
        else:
            out.append(BandSummary(label, int(len(sel)), float(sel.mean()),
                                   float(sel.std()), float(sel.max())))
    return out


@dataclass
class EvaluationReport:
    subset: str
    n: int
    mape: float
    rmspe: float
    rmse: float
    q2: float
    auce: float | None = None
    picp: float | None = None
    informativeness: float | None = None
    calibration: float | None = None
    uqf: float | None = None
    width_mean: float | None = None
    width_std: float | None = None
    unreliable: int | None = None
    bp_statistic: float | None = None
    bp_p_value: float | None = None
    bp_reject: bool | None = None
    regimes: list[BandSummary] = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("regimes")
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.row()), lineterminator="\n")
        w.writeheader()
        w.writerow({k: _fmt(v) for k, v in self.row().items()})
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"[{self.subset}] n={self.n}"]
        for key, value in self.row().items():
            if key in ("subset", "n") or value is None:
                continue
            lines.append(f"  {key:<16} {_fmt(value)}")
        for b in self.regimes:
            if b.present:
                lines.append(f"  width[{b.band}] mean={b.mean:.4f}% std={b.std:.4f}% "
                             f"max={b.max:.4f}% (n={b.count})")
            else:
                lines.append(f"  width[{b.band}] absent")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return v


def evaluate_predictions(mu, y, lower=None, upper=None, sigma=None, quality=None,
                         features=None, reliable=None, subset: str = "test",
                         band_edges: Sequence[float] = DEFAULT_BAND_EDGES,
                         interval_fn: Callable | None = None, alpha: float = 0.05,
                         ) -> EvaluationReport:
    """Assemble every metric available for the given predictions."""
    mu, y = _vectors(mu, y)
    report = EvaluationReport(subset=subset, n=len(y), mape=mape(mu, y),
                              rmspe=rmspe_metric(mu, y), rmse=rmse(mu, y), q2=q2(mu, y))
    if sigma is not None:
        report.auce = auce(y, mu=mu, sigma=sigma)
    elif interval_fn is not None:
        report.auce = auce(y, interval_fn=interval_fn)
    if lower is not None and upper is not None:
        inf_s = informativeness_samples(mu, lower, upper)
        cal_s = calibration_samples(mu, lower, upper, y)
        rel = (np.asarray(upper) - np.asarray(lower)) / mu
        report.picp = picp(lower, upper, y)
        report.informativeness = float(100.0 * inf_s.mean())
        report.calibration = float(100.0 * cal_s.mean())
        report.uqf = float(100.0 * uqf_samples(inf_s, cal_s).mean())
        report.width_mean = float(100.0 * rel.mean())
        report.width_std = float(100.0 * rel.std())
        if quality is not None:
            # percent, like width_mean
            report.regimes = [
                b if not b.present else BandSummary(b.band, b.count, 100.0 * b.mean,
                                                    100.0 * b.std, 100.0 * b.max)
                for b in regime_width_summary(lower, upper, mu, quality, band_edges)
            ]
    if reliable is not None:
        report.unreliable = int(np.sum(~np.asarray(reliable, dtype=bool)))
    if features is not None:
        bp = breusch_pagan(y - mu, features, alpha)
        report.bp_statistic, report.bp_p_value, report.bp_reject = bp.statistic, bp.p_value, bp.reject
    return report
