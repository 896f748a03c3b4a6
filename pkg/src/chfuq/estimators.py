"""scikit-learn style regressors wrapping the network, losses and intervals.

Every estimator standardizes its inputs (optional) and divides the target by
its training mean before fitting. Relative errors are unchanged by that
rescaling; predictions are mapped back to the original units.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import losses as L
from . import nn
from . import optim
from . import uq


class _NetworkRegressor(RegressorMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses choose heads and loss."""

    _head = "single"
    _bayesian = False
    _allow_zero_target = False

    def _loss_config(self) -> L.LossConfig:
        raise NotImplementedError

    def _coverage_gate(self) -> bool:
        return False

    def _selection_metric(self) -> str:
        return "rmspe"

    # -- helpers -----------------------------------------------------------

    def _spec(self, n_features: int) -> nn.NetworkSpec:
        return nn.NetworkSpec(
            n_features=n_features, width=self.width, depth=self.depth, head=self._head,
            mtl=self.mtl, head_width=self.head_width, head_depth=self.head_depth,
            beta=self.softplus_beta, bayesian=self._bayesian,
        )

    def _train_config(self) -> optim.TrainConfig:
        return optim.TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            selection_metric=self._selection_metric(), coverage_gate=self._coverage_gate(),
            alpha=self.alpha, mc_samples_eval=getattr(self, "n_samples", 20),
            seed=self.random_state,
        )

    def _check_target(self, y):
        if self._allow_zero_target:
            if np.any(y < 0):
                raise ValueError("target must be non-negative")
        elif np.any(y <= 0):
            raise ValueError("target must be strictly positive")

    def _transform_X(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.x_mean_) / self.x_std_

    def _split_validation(self, X, y, eval_set):
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            return X, y, Xv, yv
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1) when no eval_set is given")
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        val, tr = order[:n_val], order[n_val:]
        return X[tr], y[tr], X[val], y[val]

    def _pretrained_pair(self):
        source = self.pretrained
        if not isinstance(source, _NetworkRegressor):
            source = _NetworkRegressor.load(source)
        check_is_fitted(source, "params_")
        return (source.spec_, source.params_), source

    # -- public API --------------------------------------------------------

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; validation data comes from ``eval_set`` or a random hold-out."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self._check_target(y)
        X, y, Xv, yv = self._split_validation(X, y, eval_set)
        self._check_target(yv)
        self.n_features_in_ = X.shape[1]
        donor = None
        if getattr(self, "pretrained", None) is not None:
            pair, donor = self._pretrained_pair()
        if donor is not None:
            # reuse the donor's scaling so transferred weights see the same inputs
            self.x_mean_, self.x_std_, self.y_scale_ = donor.x_mean_, donor.x_std_, donor.y_scale_
        else:
            if self.standardize:
                self.x_mean_ = X.mean(axis=0)
                self.x_std_ = X.std(axis=0)
                self.x_std_[self.x_std_ == 0] = 1.0
            else:
                self.x_mean_ = np.zeros(X.shape[1])
                self.x_std_ = np.ones(X.shape[1])
            self.y_scale_ = float(np.mean(y)) if np.mean(y) > 0 else 1.0
        Z, Zv = self._transform_X(X), self._transform_X(Xv)
        self.spec_ = self._spec(X.shape[1])
        if getattr(self, "pretrained", None) is not None:
            params = optim.transfer_init(pair, self.spec_, seed=self.random_state,
                                         freeze=self.freeze)
        else:
            params = nn.init_parameters(self.spec_, seed=self.random_state)
        self.params_, self.trace_ = optim.train(
            self.spec_, params, (Z, y / self.y_scale_), (Zv, yv / self.y_scale_),
            self._loss_config(), self._train_config(),
        )
        return self

    def _raw_outputs(self, X) -> dict[str, np.ndarray]:
        check_is_fitted(self, "params_")
        return nn.predict_arrays(self._transform_X(X), self.spec_, self.params_)

    def predict(self, X) -> np.ndarray:
        return self.predict_bundle(X).mu

    def predict_bundle(self, X) -> uq.PredictionBundle:
        out = self._raw_outputs(X)
        return uq.PredictionBundle(mu=out["mu"]).scaled(self.y_scale_)

    def predict_interval(self, X) -> tuple[np.ndarray, np.ndarray]:
        bundle = self.predict_bundle(X)
        if bundle.lower is None:
            raise ValueError(f"{type(self).__name__} does not produce intervals")
        return bundle.lower, bundle.upper

    # -- persistence -------------------------------------------------------

    def save(self, path):
        check_is_fitted(self, "params_")
        extra = {
            "estimator": type(self).__name__,
            "params": {k: v for k, v in self.get_params(deep=False).items() if k != "pretrained"},
            "x_mean": self.x_mean_.tolist(), "x_std": self.x_std_.tolist(),
            "y_scale": self.y_scale_,
        }
        nn.save_checkpoint(path, self.spec_, self.params_, extra)

    @classmethod
    def load(cls, path) -> "_NetworkRegressor":
        spec, params, extra = nn.load_checkpoint(path)
        klass = ESTIMATORS.get(extra.get("estimator", ""))
        if klass is None:
            raise ValueError(f"{path}: checkpoint does not describe a known estimator")
        if cls is not _NetworkRegressor and not issubclass(klass, cls):
            raise ValueError(f"{path}: holds a {klass.__name__}, not a {cls.__name__}")
        est = klass(**extra["params"])
        est.spec_, est.params_ = spec, params
        est.x_mean_ = np.asarray(extra["x_mean"], dtype=np.float64)
        est.x_std_ = np.asarray(extra["x_std"], dtype=np.float64)
        est.y_scale_ = float(extra["y_scale"])
        est.n_features_in_ = spec.n_features
        return est


class ResNetRegressor(_NetworkRegressor):
    """Deterministic point regressor (the baseline).

    Parameters
    ----------
    loss : {'rmspe', 'mse'}
        Training objective. ``'mse'`` also accepts zero targets.
    """

    def __init__(self, loss="rmspe", width=64, depth=8, mtl=False, head_width=32, head_depth=0,
                 softplus_beta=1.0, optimizer="adam", learning_rate=1e-3, weight_decay=0.0,
                 batch_size=512, max_epochs=1500, patience=100, alpha=0.05,
                 validation_fraction=0.1, standardize=True, random_state=0):
        self.loss = loss
        self.width = width
        self.depth = depth
        self.mtl = mtl
        self.head_width = head_width
        self.head_depth = head_depth
        self.softplus_beta = softplus_beta
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.alpha = alpha
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.random_state = random_state

    @property
    def _allow_zero_target(self):
        return self.loss == "mse"

    def _selection_metric(self):
        return "rmse" if self.loss == "mse" else "rmspe"

    def _loss_config(self):
        if self.loss not in ("rmspe", "mse"):
            raise ValueError(f"loss must be 'rmspe' or 'mse', got {self.loss!r}")
        return L.LossConfig(kind=self.loss, alpha=self.alpha)


class HeteroscedasticRegressor(_NetworkRegressor):
    """Mean/standard-deviation network trained with the gamma-weighted Gaussian NLL.

    ``pretrained`` (a fitted estimator or checkpoint path) enables transfer
    learning; ``freeze='backbone'`` then trains the output layers only.
    """

    _head = "double"

    def __init__(self, gamma=0.5, width=64, depth=8, mtl=False, head_width=32, head_depth=0,
                 softplus_beta=1.0, optimizer="adam", learning_rate=1e-3, weight_decay=0.0,
                 batch_size=512, max_epochs=1500, patience=100, alpha=0.05,
                 coverage_gate=False, validation_fraction=0.1, standardize=True,
                 pretrained=None, freeze="none", random_state=0):
        self.gamma = gamma
        self.width = width
        self.depth = depth
        self.mtl = mtl
        self.head_width = head_width
        self.head_depth = head_depth
        self.softplus_beta = softplus_beta
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.alpha = alpha
        self.coverage_gate = coverage_gate
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.pretrained = pretrained
        self.freeze = freeze
        self.random_state = random_state

    def _coverage_gate(self):
        return self.coverage_gate

    def _loss_config(self):
        return L.LossConfig(kind="ghr", gamma=self.gamma, alpha=self.alpha)

    def predict_bundle(self, X) -> uq.PredictionBundle:
        out = self._raw_outputs(X)
        lower, upper = uq.hr_interval(out["mu"], out["sigma"], self.alpha)
        return uq.PredictionBundle(mu=out["mu"], sigma=out["sigma"], lower=lower,
                                   upper=upper).scaled(self.y_scale_)


class QualityDrivenRegressor(_NetworkRegressor):
    """Three-head network (mean, lower, upper) trained with the QD loss.

    With ``coverage_gate`` on, only epochs whose validation PICP reaches
    ``1 - alpha`` are eligible for selection.
    """

    _head = "triple"

    def __init__(self, lam=0.1, softness=200.0, gamma=0.5, width=64, depth=8, mtl=False,
                 head_width=32, head_depth=0, softplus_beta=1.0, optimizer="adam",
                 learning_rate=1e-3, weight_decay=0.0, batch_size=512, max_epochs=1500,
                 patience=100, alpha=0.05, coverage_gate=True, validation_fraction=0.1,
                 standardize=True, pretrained=None, freeze="none", random_state=0):
        self.lam = lam
        self.softness = softness
        self.gamma = gamma
        self.width = width
        self.depth = depth
        self.mtl = mtl
        self.head_width = head_width
        self.head_depth = head_depth
        self.softplus_beta = softplus_beta
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.alpha = alpha
        self.coverage_gate = coverage_gate
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.pretrained = pretrained
        self.freeze = freeze
        self.random_state = random_state

    def _coverage_gate(self):
        return self.coverage_gate

    def _loss_config(self):
        return L.LossConfig(kind="qd", gamma=self.gamma, lam=self.lam, alpha=self.alpha,
                            softness=self.softness)

    def predict_bundle(self, X) -> uq.PredictionBundle:
        out = self._raw_outputs(X)
        return uq.qd_extract(out["mu"], out["lower"], out["upper"]).scaled(self.y_scale_)


class BayesianHeteroscedasticRegressor(_NetworkRegressor):
    """Heteroscedastic network with mean-field Gaussian weights (beta-ELBO).

    ``n_samples`` stochastic forward passes produce the prediction and split
    the predictive variance into model and data parts.
    """

    _head = "double"
    _bayesian = True

    def __init__(self, beta_kl=1.0, prior_sigma=1.0, gamma=0.5, mc_samples=1, n_samples=20,
                 width=64, depth=8, mtl=False, head_width=32, head_depth=0, softplus_beta=1.0,
                 optimizer="adam", learning_rate=1e-3, weight_decay=0.0, batch_size=512,
                 max_epochs=1500, patience=100, alpha=0.05, validation_fraction=0.1,
                 standardize=True, random_state=0):
        self.beta_kl = beta_kl
        self.prior_sigma = prior_sigma
        self.gamma = gamma
        self.mc_samples = mc_samples
        self.n_samples = n_samples
        self.width = width
        self.depth = depth
        self.mtl = mtl
        self.head_width = head_width
        self.head_depth = head_depth
        self.softplus_beta = softplus_beta
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.alpha = alpha
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.random_state = random_state

    def _loss_config(self):
        return L.LossConfig(kind="elbo", gamma=self.gamma, alpha=self.alpha,
                            beta_kl=self.beta_kl, prior_sigma=self.prior_sigma,
                            mc_samples=self.mc_samples)

    def predict_bundle(self, X, seed=None) -> uq.PredictionBundle:
        check_is_fitted(self, "params_")
        seed = self.random_state if seed is None else seed
        bundle = uq.bnn_predict(self.spec_, self.params_, self._transform_X(X),
                                self.n_samples, self.alpha, seed)
        return bundle.scaled(self.y_scale_)


def default_sigma_estimator(random_state=0, **overrides) -> ResNetRegressor:
    """Residual-magnitude regressor: 4 blocks of width 32, MSE loss, softplus output."""
    params = dict(loss="mse", width=32, depth=4, random_state=random_state)
    params.update(overrides)
    return ResNetRegressor(**params)


class ConformalRegressor(RegressorMixin, BaseEstimator):
    """Split-conformal intervals around a point regressor.

    ``fit`` holds out ``calibration_size`` rows, trains ``estimator`` on the
    rest (and, for ``method='adaptive'``, a residual-magnitude model on the
    training residuals), then calibrates on the held-out rows. Use
    ``calibrate`` alone when the models are already fitted.
    """

    def __init__(self, estimator=None, method="vanilla", sigma_estimator=None, alpha=0.05,
                 calibration_size=uq.DEFAULT_CALIBRATION_SIZE, random_state=0):
        self.estimator = estimator
        self.method = method
        self.sigma_estimator = sigma_estimator
        self.alpha = alpha
        self.calibration_size = calibration_size
        self.random_state = random_state

    def _check_method(self):
        if self.method not in ("vanilla", "adaptive"):
            raise ValueError(f"method must be 'vanilla' or 'adaptive', got {self.method!r}")

    def fit(self, X, y, eval_set=None):
        self._check_method()
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.calibration_size >= len(X):
            raise ValueError("calibration_size must be smaller than the number of rows")
        rng = np.random.default_rng(self.random_state)
        cal = np.zeros(len(X), dtype=bool)
        cal[rng.choice(len(X), size=self.calibration_size, replace=False)] = True
        base = self.estimator if self.estimator is not None else ResNetRegressor(
            random_state=self.random_state)
        self.estimator_ = clone(base).fit(X[~cal], y[~cal], eval_set=eval_set)
        if self.method == "adaptive":
            self.sigma_estimator_ = self._fit_sigma(X[~cal], y[~cal])
        self.n_features_in_ = X.shape[1]
        self.calibration_mask_ = cal
        return self.calibrate(X[cal], y[cal], prefit=True)

    def _fit_sigma(self, X, y):
        residuals = np.abs(y - self.estimator_.predict(X))
        est = self.sigma_estimator if self.sigma_estimator is not None else \
            default_sigma_estimator(self.random_state)
        return clone(est).fit(X, residuals)

    def calibrate(self, X_cal, y_cal, prefit=False):
        """Compute the conformal quantile on ``(X_cal, y_cal)``.

        Without ``prefit`` the wrapped ``estimator`` (and ``sigma_estimator``)
        must already be fitted and are used as is.
        """
        self._check_method()
        if not prefit:
            self.estimator_ = self.estimator
            if self.method == "adaptive":
                if self.sigma_estimator is None:
                    raise ValueError("adaptive calibration of a prefit model needs sigma_estimator")
                self.sigma_estimator_ = self.sigma_estimator
            self.n_features_in_ = getattr(self.estimator, "n_features_in_", None)
        X_cal, y_cal = check_X_y(X_cal, y_cal, dtype=np.float64)
        mu = np.asarray(self.estimator_.predict(X_cal), dtype=np.float64)
        if self.method == "vanilla":
            self.scores_ = np.abs(y_cal - mu)
        else:
            sigma = self._sigma(X_cal)
            self.scores_ = np.abs(y_cal - mu) / sigma
        self.calibration_ = uq.empirical_quantile(self.scores_, self.alpha, self.method)
        return self

    def _sigma(self, X) -> np.ndarray:
        sigma = np.asarray(self.sigma_estimator_.predict(X), dtype=np.float64)
        if np.any(sigma <= 0):
            raise ValueError("uncertainty estimates must be strictly positive")
        return sigma

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "calibration_")
        return np.asarray(self.estimator_.predict(X), dtype=np.float64)

    def _bounds(self, mu, sigma, result):
        if self.method == "vanilla":
            return uq.cp_interval_vanilla(mu, result)
        return uq.cp_interval_adaptive(mu, sigma, result)

    def predict_bundle(self, X) -> uq.PredictionBundle:
        mu = self.predict(X)
        sigma = self._sigma(X) if self.method == "adaptive" else None
        lower, upper = self._bounds(mu, sigma, self.calibration_)
        return uq.PredictionBundle(mu=mu, sigma=sigma, lower=lower, upper=upper)

    def predict_interval(self, X) -> tuple[np.ndarray, np.ndarray]:
        b = self.predict_bundle(X)
        return b.lower, b.upper

    def interval_function(self, X):
        """``level -> (lower, upper)`` using the stored calibration scores."""
        mu = self.predict(X)
        sigma = self._sigma(X) if self.method == "adaptive" else None

        def at(level):
            if level <= 0:
                return mu.copy(), mu.copy()
            if level >= 1:
                return np.full_like(mu, -np.inf), np.full_like(mu, np.inf)
            result = uq.empirical_quantile(self.scores_, 1.0 - level, self.method)
            return self._bounds(mu, sigma, result)

        return at


ESTIMATORS = {cls.__name__: cls for cls in (
    ResNetRegressor, HeteroscedasticRegressor, QualityDrivenRegressor,
    BayesianHeteroscedasticRegressor,
)}
