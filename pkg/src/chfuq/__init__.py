"""Coverage-oriented uncertainty quantification for critical-heat-flux regression."""

from .estimators import (
    BayesianHeteroscedasticRegressor,
    ConformalRegressor,
    HeteroscedasticRegressor,
    QualityDrivenRegressor,
    ResNetRegressor,
)

__all__ = [
    "BayesianHeteroscedasticRegressor",
    "ConformalRegressor",
    "HeteroscedasticRegressor",
    "QualityDrivenRegressor",
    "ResNetRegressor",
]

__version__ = "0.1.0"
