"""Optimizers, the mini-batch training loop and transfer-learning init."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import engine as E
from . import losses as L
from . import nn
from . import uq
from .stats import rmse, rmspe_metric

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam", "adamw")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
IMPROVEMENT_RTOL = 1e-6
VARIANCE_FLOOR = 1e-12


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or infinity."""


class NoCoverageFeasibleModel(RuntimeError):
    """No epoch reached the target validation coverage under the coverage gate."""


def _no_decay(name: str) -> bool:
    # variational scales and batchnorm affine terms are not decayed
    return name.endswith("_rho") or ".bn." in name


@dataclass
class OptimizerState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(kind: str, values: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
                   state: OptimizerState, lr: float, weight_decay: float = 0.0,
                   t: int | None = None) -> OptimizerState:
    """Update ``values`` in place for every name present in ``grads``.

    SGD and Adam apply weight decay as an L2 term on the gradient; AdamW
    decays the weights directly.
    """
    if kind not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {kind!r}")
    state.t = state.t + 1 if t is None else t
    if state.t < 1:
        raise ValueError("step counter must be >= 1")
    b1, b2 = ADAM_BETAS
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in layer {nn.layer_of(name)!r} ({name})")
        p = values[name]
        decay = 0.0 if _no_decay(name) else weight_decay
        if kind == "sgd":
            p -= lr * (g + decay * p)
            continue
        if kind == "adam" and decay:
            g = g + decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        if kind == "adamw" and decay:
            p -= lr * decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 512
    max_epochs: int = 1500
    patience: int = 100
    selection_metric: str = "rmspe"
    coverage_gate: bool = False
    alpha: float = 0.05
    mc_samples_eval: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch size, epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.selection_metric not in ("rmspe", "rmse"):
            raise ValueError("selection metric must be 'rmspe' or 'rmse'")


@dataclass
class TrainTrace:
    loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    val_picp: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str = ""

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "val_metric", "val_picp"])
            for i, row in enumerate(zip(self.loss, self.val_metric, self.val_picp), start=1):
                w.writerow([i, *(repr(float(v)) for v in row)])


def _method_of(spec: nn.NetworkSpec, loss_kind: str) -> str:
    if loss_kind == "qd":
        if spec.head != "triple":
            raise ValueError("the qd loss needs a triple-head network")
        return "qd"
    if loss_kind in ("ghr", "elbo"):
        if spec.head != "double":
            raise ValueError(f"the {loss_kind} loss needs a double-head network")
        if (loss_kind == "elbo") != spec.bayesian:
            raise ValueError("the elbo loss is used exactly with Bayesian networks")
        return "bhr" if spec.bayesian else "hr"
    if spec.head != "single" or spec.bayesian:
        raise ValueError(f"the {loss_kind} loss needs a deterministic single-head network")
    return "point"


def batch_loss(spec, params, leaves, x, y, config: L.LossConfig, rng, n_train: int) -> E.Tensor:
    mode = nn.ForwardMode(phase="train", stochastic=spec.bayesian, rng=rng)
    if config.kind == "elbo":
        def sampler():
            out = nn.network_forward(x, spec, params, mode, leaves)
            return out["mu"], E.clamp_min(E.square(out["sigma"]), VARIANCE_FLOOR)

        kl = nn.kl_total(spec, params, config.prior_sigma, leaves)
        return L.beta_elbo_loss(sampler, y, kl, n_train, config)
    out = nn.network_forward(x, spec, params, mode, leaves)
    if config.kind == "mse":
        return L.mse_loss(out["mu"], y)
    if config.kind == "rmspe":
        return L.rmspe_loss(out["mu"], y)
    if config.kind == "ghr":
        var = E.clamp_min(E.square(out["sigma"]), VARIANCE_FLOOR)
        return L.ghr_loss(out["mu"], var, y, config.gamma)
    total, _ = L.qd_loss(out["mu"], out["lower"], out["upper"], y, config)
    return total


def validation_bundle(spec, params, x, alpha: float, mc_samples: int = 20,
                      seed: int = 0) -> uq.PredictionBundle:
    """Predictions and intervals built the same way the method does at test time."""
    if spec.bayesian:
        return uq.bnn_predict(spec, params, x, mc_samples, alpha, seed)
    out = nn.predict_arrays(x, spec, params)
    if spec.head == "double":
        lower, upper = uq.hr_interval(out["mu"], out["sigma"], alpha)
        return uq.PredictionBundle(mu=out["mu"], sigma=out["sigma"], lower=lower, upper=upper)
    if spec.head == "triple":
        return uq.qd_extract(out["mu"], out["lower"], out["upper"])
    return uq.PredictionBundle(mu=out["mu"])


def train(spec: nn.NetworkSpec, params: nn.ParameterSet, train_data, val_data,
          loss_config: L.LossConfig, train_config: TrainConfig,
          ) -> tuple[nn.ParameterSet, TrainTrace]:
    """Mini-batch training with early stopping on a validation metric.

    ``train_data`` and ``val_data`` are ``(X, y)`` pairs. The returned
    parameters are a snapshot from the best eligible epoch. With the coverage
    gate on, epochs whose validation PICP falls below ``1 - alpha`` are not
    eligible.
    """
    _method_of(spec, loss_config.kind)
    X, y = (np.asarray(a, dtype=np.float64) for a in train_data)
    Xv, yv = (np.asarray(a, dtype=np.float64) for a in val_data)
    y = y.reshape(-1, 1)
    yv = yv.reshape(-1)
    if train_config.coverage_gate and spec.head == "single":
        raise ValueError("the coverage gate needs a network that produces intervals")
    params = params.copy()
    rng = np.random.default_rng(train_config.seed)
    state = OptimizerState()
    trace = TrainTrace()
    best = None
    best_value = np.inf
    since_best = 0
    n = len(X)
    bs = train_config.batch_size
    target = 1.0 - train_config.alpha
    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            leaves = params.leaves()
            loss = batch_loss(spec, params, leaves, X[idx], y[idx], loss_config, rng, n)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"training loss diverged at epoch {epoch}")
            grads = E.backward(loss)
            named = {name: grads[t] for name, t in leaves.items() if t in grads}
            optimizer_step(train_config.optimizer, params.values, named, state,
                           train_config.learning_rate, train_config.weight_decay)
            total += value * len(idx)
            count += len(idx)
        trace.loss.append(total / count)

        bundle = validation_bundle(spec, params, Xv, train_config.alpha,
                                   train_config.mc_samples_eval, train_config.seed)
        if train_config.selection_metric == "rmspe":
            metric = rmspe_metric(bundle.mu, yv)
        else:
            metric = rmse(bundle.mu, yv)
        picp_value = bundle.picp(yv) if bundle.lower is not None else float("nan")
        trace.val_metric.append(metric)
        trace.val_picp.append(picp_value)

        eligible = not train_config.coverage_gate or picp_value >= target
        improved = eligible and (
            best is None or (metric < best_value and best_value - metric >= IMPROVEMENT_RTOL * abs(best_value))
        )
        if improved:
            best, best_value = params.copy(), metric
            trace.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        log.debug("epoch %d loss %.6g val %.6g picp %.4f", epoch, trace.loss[-1], metric, picp_value)
        if since_best >= train_config.patience:
            trace.stop_reason = "patience"
            break
    else:
        trace.stop_reason = "max_epochs"
    if best is None:
        raise NoCoverageFeasibleModel(
            f"no epoch reached validation coverage {target:.3f} "
            f"(best seen {np.nanmax(trace.val_picp):.3f})"
        )
    return best, trace


def transfer_init(pretrained, new_spec: nn.NetworkSpec, seed: int | None = 0,
                  freeze: str = "none") -> nn.ParameterSet:
    """Initialize ``new_spec`` from a pretrained ``(spec, params)`` pair or checkpoint path.

    Layers whose names and shapes match are copied; everything else is
    freshly initialized. ``freeze='backbone'`` leaves only the output layers
    trainable.
    """
    if isinstance(pretrained, (str, bytes)) or hasattr(pretrained, "__fspath__"):
        old_spec, old_params, _ = nn.load_checkpoint(pretrained)
    else:
        old_spec, old_params = pretrained
    backbone = ["input"] + [f"block{i}" for i in range(new_spec.depth)]
    fresh = nn.init_parameters(new_spec, seed)
    mismatched = []
    for layer in backbone:
        new_vals = fresh.layer_values(layer)
        old_vals = old_params.layer_values(layer)
        if set(new_vals) != set(old_vals) or any(
            new_vals[k].shape != old_vals[k].shape for k in new_vals
        ):
            mismatched.append(layer)
    if mismatched:
        raise ValueError(f"backbone layers differ from the pretrained model: {mismatched}")
    for name, value in old_params.values.items():
        if name in fresh.values and fresh.values[name].shape == value.shape:
            fresh.values[name] = value.copy()
    for name, value in old_params.buffers.items():
        if name in fresh.buffers and fresh.buffers[name].shape == value.shape:
            fresh.buffers[name] = value.copy()
    if freeze == "backbone":
        outputs = set(new_spec.output_layers())
        fresh.trainable = {name: name in outputs for name in fresh.trainable}
    elif freeze != "none":
        raise ValueError(f"freeze must be 'none' or 'backbone', got {freeze!r}")
    return fresh
