"""Residual tabular networks: layer specs, parameters, forward pass, checkpoints.

A network is an input projection, a stack of pre-activated residual blocks
(batchnorm -> relu -> dense, plus the skip connection), an optional joint
layer with per-head hidden layers, and one output layer per head. Heads are
``mu`` and ``sigma`` (softplus-positive) and ``lower``/``upper`` (raw).
With ``bayesian=True`` every dense layer holds a mean-field Gaussian
posterior over its weights and is sampled with the reparameterization trick.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import engine as E
from .engine import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
CHECKPOINT_MAGIC = b"CHFUQCK1"

HEAD_LAYOUTS = {
    "single": ("mu",),
    "double": ("mu", "sigma"),
    "triple": ("mu", "lower", "upper"),
}
POSITIVE_HEADS = ("mu", "sigma")

LAYER_KINDS = ("dense", "batchnorm", "relu", "softplus-head", "residual-block", "bayes-dense")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_width: int
    out_width: int
    beta: float | None = None
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_width <= 0 or self.out_width <= 0:
            raise ValueError(f"layer {self.name!r} has a zero width")
        if self.kind == "residual-block" and self.in_width != self.out_width:
            raise ValueError(f"residual block {self.name!r} must preserve width")
        if self.beta is not None and self.beta <= 0:
            raise ValueError(f"layer {self.name!r}: softplus beta must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``depth`` counts residual blocks. With ``mtl=True`` a joint dense+relu
    layer maps the backbone to ``head_width`` and each head gets
    ``head_depth`` hidden layers before its output layer.
    """

    n_features: int = 5
    width: int = 64
    depth: int = 8
    head: str = "single"
    mtl: bool = False
    head_width: int = 32
    head_depth: int = 0
    beta: float = 1.0
    bayesian: bool = False
    init_sigma_frac: float = 0.05

    def __post_init__(self):
        if self.head not in HEAD_LAYOUTS:
            raise ValueError(f"head must be one of {sorted(HEAD_LAYOUTS)}, got {self.head!r}")
        if self.n_features <= 0 or self.width <= 0 or (self.mtl and self.head_width <= 0):
            raise ValueError("layer widths must be positive")
        if self.depth < 0 or self.head_depth < 0:
            raise ValueError("depth must be non-negative")
        if self.beta <= 0:
            raise ValueError("softplus beta must be positive")

    @property
    def heads(self) -> tuple[str, ...]:
        return HEAD_LAYOUTS[self.head]

    def layers(self) -> list[LayerSpec]:
        dense = "bayes-dense" if self.bayesian else "dense"
        out = [LayerSpec("input", dense, self.n_features, self.width)]
        out += [
            LayerSpec(f"block{i}", "residual-block", self.width, self.width)
            for i in range(self.depth)
        ]
        head_in = self.width
        if self.mtl:
            out.append(LayerSpec("joint", dense, self.width, self.head_width))
            head_in = self.head_width
        for h in self.heads:
            for j in range(self.head_depth if self.mtl else 0):
                out.append(LayerSpec(f"{h}_hidden{j}", dense, head_in, head_in))
            out.append(
                LayerSpec(
                    f"{h}_out",
                    "softplus-head" if h in POSITIVE_HEADS else dense,
                    head_in,
                    1,
                    beta=self.beta if h in POSITIVE_HEADS else None,
                )
            )
        return out

    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers()]

    def output_layers(self) -> list[str]:
        return [f"{h}_out" for h in self.heads]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(**dict(d))


@dataclass
class ForwardMode:
    """Forward-pass context.

    ``phase='train'`` normalizes with batch statistics and updates running
    statistics; ``stochastic=True`` samples Bayesian weights from ``rng`` (or a
    generator seeded with ``seed``).
    """

    phase: str = "eval"
    stochastic: bool = False
    seed: int | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.phase not in ("train", "eval"):
            raise ValueError(f"phase must be 'train' or 'eval', got {self.phase!r}")

    def generator(self) -> np.random.Generator:
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        return self.rng


@dataclass
class ParameterSet:
    """Trainable values, batchnorm running statistics and the freeze mask."""

    values: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            dict(self.trainable),
        )

    def leaves(self) -> dict[str, Tensor]:
        """Fresh graph leaves; frozen layers' values are not tracked."""
        return {
            name: Tensor(value, requires_grad=self.trainable.get(layer_of(name), True))
            for name, value in self.values.items()
        }

    def layer_values(self, layer: str) -> dict[str, np.ndarray]:
        prefix = layer + "."
        return {k: v for k, v in self.values.items() if k.startswith(prefix)}


def layer_of(param_name: str) -> str:
    return param_name.split(".", 1)[0]


# ---------------------------------------------------------------------------
# initialization


def _rho_for(sigma: float) -> float:
    return float(np.log(np.expm1(sigma)))


def _init_dense(rng, name, fan_in, fan_out, bayesian, sigma_frac, values):
    w_bound = np.sqrt(6.0 / fan_in)
    b_bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-w_bound, w_bound, size=(fan_in, fan_out))
    b = rng.uniform(-b_bound, b_bound, size=(1, fan_out))
    if bayesian:
        values[f"{name}.W_mean"] = W
        values[f"{name}.W_rho"] = np.full_like(W, _rho_for(sigma_frac * w_bound))
        values[f"{name}.b_mean"] = b
        values[f"{name}.b_rho"] = np.full_like(b, _rho_for(sigma_frac * b_bound))
    else:
        values[f"{name}.W"] = W
        values[f"{name}.b"] = b


def init_parameters(spec: NetworkSpec, seed: int | None = 0) -> ParameterSet:
    """Kaiming-uniform weights (relu gain), biases uniform in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    values: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for layer in spec.layers():
        trainable[layer.name] = layer.trainable
        if layer.kind == "residual-block":
            w = layer.out_width
            values[f"{layer.name}.bn.gamma"] = np.ones((1, w))
            values[f"{layer.name}.bn.beta"] = np.zeros((1, w))
            buffers[f"{layer.name}.bn.running_mean"] = np.zeros((1, w))
            buffers[f"{layer.name}.bn.running_var"] = np.ones((1, w))
        _init_dense(
            rng, layer.name, layer.in_width, layer.out_width,
            spec.bayesian, spec.init_sigma_frac, values,
        )
    return ParameterSet(values, buffers, trainable)


def apply_freeze_mask(params: ParameterSet, mask: Sequence[bool]) -> ParameterSet:
    """Return a copy whose layer trainability follows ``mask`` (layer order)."""
    names = list(params.trainable)
    if len(mask) != len(names):
        raise ValueError(f"freeze mask has {len(mask)} entries for {len(names)} layers")
    out = params.copy()
    out.trainable = {name: bool(flag) for name, flag in zip(names, mask)}
    return out


# ---------------------------------------------------------------------------
# forward pass


def _get(leaves: Mapping[str, Tensor] | None, params: ParameterSet, name: str) -> Tensor:
    if leaves is not None and name in leaves:
        return leaves[name]
    return Tensor(params.values[name])


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor, buffers: dict, prefix: str,
                      mode: ForwardMode) -> Tensor:
    if mode.phase == "train":
        mu = E.mean(x, axis=0)
        centered = x - mu
        var = E.mean(E.square(centered), axis=0)
        normalized = centered / E.sqrt(var + BN_EPS)
        n = x.shape[0]
        unbiased = var.data * (n / (n - 1)) if n > 1 else var.data
        rm, rv = f"{prefix}.running_mean", f"{prefix}.running_var"
        buffers[rm] = (1 - BN_MOMENTUM) * buffers[rm] + BN_MOMENTUM * mu.data
        buffers[rv] = (1 - BN_MOMENTUM) * buffers[rv] + BN_MOMENTUM * unbiased
    else:
        mu = buffers[f"{prefix}.running_mean"]
        var = buffers[f"{prefix}.running_var"]
        normalized = (x - Tensor(mu)) / Tensor(np.sqrt(var + BN_EPS))
    return normalized * gamma + beta


def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return x @ W + b


def bayes_dense_forward(x: Tensor, W_mean: Tensor, W_rho: Tensor, b_mean: Tensor,
                        b_rho: Tensor, mode: ForwardMode) -> Tensor:
    """Dense layer with ``W = mean + softplus(rho) * eps`` when stochastic."""
    if not mode.stochastic:
        return x @ W_mean + b_mean
    rng = mode.generator()
    eps_W = rng.standard_normal(W_mean.shape)
    eps_b = rng.standard_normal(b_mean.shape)
    W = W_mean + E.softplus(W_rho) * eps_W
    b = b_mean + E.softplus(b_rho) * eps_b
    return x @ W + b


def _linear(spec: NetworkSpec, params: ParameterSet, leaves, name: str, x: Tensor,
            mode: ForwardMode) -> Tensor:
    if spec.bayesian:
        return bayes_dense_forward(
            x,
            _get(leaves, params, f"{name}.W_mean"),
            _get(leaves, params, f"{name}.W_rho"),
            _get(leaves, params, f"{name}.b_mean"),
            _get(leaves, params, f"{name}.b_rho"),
            mode,
        )
    return dense_forward(x, _get(leaves, params, f"{name}.W"), _get(leaves, params, f"{name}.b"))


def residual_block_forward(x: Tensor, spec: NetworkSpec, params: ParameterSet, name: str,
                           mode: ForwardMode, leaves=None) -> Tensor:
    """``dense(relu(batchnorm(x))) + x``."""
    if x.shape[1] != spec.width:
        raise ValueError(f"{name}: input width {x.shape[1]} != block width {spec.width}")
    h = batchnorm_forward(
        x,
        _get(leaves, params, f"{name}.bn.gamma"),
        _get(leaves, params, f"{name}.bn.beta"),
        params.buffers,
        f"{name}.bn",
        mode,
    )
    h = _linear(spec, params, leaves, name, E.relu(h), mode)
    return h + x


def network_forward(x, spec: NetworkSpec, params: ParameterSet, mode: ForwardMode | None = None,
                    leaves: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
    """Run the network; returns one ``(n, 1)`` tensor per head."""
    mode = mode or ForwardMode()
    x = E.as_tensor(x)
    if x.shape[1] != spec.n_features:
        raise ValueError(f"expected {spec.n_features} input features, got {x.shape[1]}")
    h = _linear(spec, params, leaves, "input", x, mode)
    for i in range(spec.depth):
        h = residual_block_forward(h, spec, params, f"block{i}", mode, leaves)
    h = E.relu(h)
    if spec.mtl:
        h = E.relu(_linear(spec, params, leaves, "joint", h, mode))
    outputs = {}
    for head in spec.heads:
        z = h
        for j in range(spec.head_depth if spec.mtl else 0):
            z = E.relu(_linear(spec, params, leaves, f"{head}_hidden{j}", z, mode))
        z = _linear(spec, params, leaves, f"{head}_out", z, mode)
        if head in POSITIVE_HEADS:
            z = E.softplus(z, spec.beta)
        outputs[head] = z
    return outputs


def predict_arrays(x: np.ndarray, spec: NetworkSpec, params: ParameterSet,
                   mode: ForwardMode | None = None, batch_size: int = 8192) -> dict[str, np.ndarray]:
    """Forward without tracking, returning flat numpy arrays per head."""
    mode = mode or ForwardMode()
    x = np.asarray(x, dtype=np.float64)
    chunks: dict[str, list] = {h: [] for h in spec.heads}
    for start in range(0, max(len(x), 1), batch_size):
        out = network_forward(x[start:start + batch_size], spec, params, mode)
        for h, t in out.items():
            chunks[h].append(t.data[:, 0])
    return {h: np.concatenate(v) for h, v in chunks.items()}


# ---------------------------------------------------------------------------
# variational regularizer


def kl_gaussian(mean, rho, prior_sigma: float) -> Tensor:
    """Sum of KL(N(mean, softplus(rho)^2) || N(0, prior_sigma^2)) over entries."""
    if not prior_sigma > 0:
        raise ValueError(f"prior sigma must be positive, got {prior_sigma}")
    sigma = E.softplus(E.as_tensor(rho))
    mean = E.as_tensor(mean)
    var_p = prior_sigma ** 2
    terms = (
        float(np.log(prior_sigma)) - E.log(sigma)
        + (E.square(sigma) + E.square(mean)) / (2.0 * var_p)
        - 0.5
    )
    return E.sum(terms)


def kl_total(spec: NetworkSpec, params: ParameterSet, prior_sigma: float,
             leaves: Mapping[str, Tensor] | None = None) -> Tensor:
    if not spec.bayesian:
        raise ValueError("network has no Bayesian layers")
    total = None
    for name in params.values:
        if name.endswith("_mean"):
            base = name[: -len("_mean")]
            term = kl_gaussian(_get(leaves, params, name), _get(leaves, params, base + "_rho"),
                               prior_sigma)
            total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: magic (8 bytes) | header length (uint32 LE) | UTF-8 JSON header |
#         float64 LE blocks in header order


def save_checkpoint(path, spec: NetworkSpec, params: ParameterSet, extra: dict | None = None):
    entries = []
    blobs = []
    offset = 0
    for kind, store in (("param", params.values), ("buffer", params.buffers)):
        for name, value in store.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                            "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "format_version": 1,
        "spec": spec.to_dict(),
        "layers": spec.layer_names(),
        "trainable": params.trainable,
        "entries": entries,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[NetworkSpec, ParameterSet, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    body = memoryview(data)[12 + hlen:]
    values, buffers = {}, {}
    for entry in header["entries"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=entry["offset"])
        arr = arr.reshape(entry["shape"]).astype(np.float64)
        (values if entry["kind"] == "param" else buffers)[entry["name"]] = arr
    spec = NetworkSpec.from_dict(header["spec"])
    return spec, ParameterSet(values, buffers, dict(header["trainable"])), header["extra"]

