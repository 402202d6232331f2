"""Mapping network θ : Z -> X and the differentiable forward models F : X -> Y."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from functools import partial
from typing import Any, Callable, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from chex import dataclass
import jax.tree_util as tu
from toolz import compose_left

from . import core, utils
from .core import Tensor

logger = logging.getLogger(__name__)

# =========================
# MLP parameters
# =========================

ACTIVATIONS: Dict[str, Callable[..., Tensor]] = {
    'leaky_relu': core.leaky_relu,
    'tanh': core.tanh,
}

@dataclass(frozen=True)
class MlpParams:
    """weights[i] has shape (dims[i], dims[i+1]); rows of the input are
    independent samples, so a layer computes x @ W + b"""
    weights: List[Tensor]
    biases: List[Tensor]
    slope: float = 0.2
    activation: str = 'leaky_relu'

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise core.DimensionError("MlpParams needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.values.ndim != 2 or b.shape != (w.shape[1],):
                raise core.DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if i > 0 and self.weights[i-1].shape[1] != w.shape[0]:
                raise core.DimensionError(
                    f"layer {i}: in-dim {w.shape[0]} does not chain with previous out-dim {self.weights[i-1].shape[1]}")
        if self.activation not in ACTIVATIONS:
            raise core.ConfigError(f"unknown activation {self.activation}")

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def tensors(self) -> List[Tensor]:
        return [leaf for leaf in tu.tree_leaves(self) if core.is_tensor(leaf)]

    def detached(self) -> "MlpParams":
        """read-only view sharing storage; ops on it record no parameter grads"""
        return self.replace(weights=[w.detach() for w in self.weights],
                            biases=[b.detach() for b in self.biases])

    def clone(self, requires_grad: Optional[bool] = None) -> "MlpParams":
        rg = lambda t: t.requires_grad if requires_grad is None else requires_grad
        return self.replace(weights=[core.tensor(w.values, requires_grad=rg(w)) for w in self.weights],
                            biases=[core.tensor(b.values, requires_grad=rg(b)) for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t.values)) for t in self.tensors())

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return utils.tree2arrays({'layers': [{'weight': w, 'bias': b} for w, b in zip(self.weights, self.biases)]})

    def meta(self) -> Dict[str, Any]:
        return {'slope': self.slope, 'activation': self.activation, 'n_layers': self.n_layers}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any], prefix: str = "",
                    requires_grad: bool = True) -> "MlpParams":
        n = int(meta['n_layers'])
        get = lambda i, k: core.tensor(arrays[f"{prefix}layers.{i}.{k}"], requires_grad=requires_grad)
        return cls(weights=[get(i, 'weight') for i in range(n)],
                   biases=[get(i, 'bias') for i in range(n)],
                   slope=float(meta['slope']), activation=meta['activation'])

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)

def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return core.add(core.matmul(x, w), b)

def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    """linear -> act -> ... -> linear; no activation after the last layer"""
    if x.shape[-1] != params.dims[0]:
        raise core.DimensionError(f"input has dim {x.shape[-1]}, network expects {params.dims[0]}")
    act = ACTIVATIONS[params.activation]
    if params.activation == 'leaky_relu':
        act = partial(act, slope=params.slope)
    layers = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layers.append(partial(_linear, w=w, b=b))
        if i < params.n_layers - 1:
            layers.append(act)
    return compose_left(*layers)(x)

def mapping_forward(params: MlpParams, z: Tensor) -> Tensor:
    """θ(z): linear -> leaky_relu -> linear -> leaky_relu -> linear"""
    if params.activation != 'leaky_relu':
        raise core.ConfigError("the mapping network uses leaky_relu activations")
    return mlp_forward(params, z)

def init_mlp(key: utils.PRNGKey, dims: List[int], slope: float = 0.2, activation: str = 'leaky_relu',
             scale: float = 1.0, zero_bias: bool = True, requires_grad: bool = True) -> MlpParams:
    """uniform fan-in init: W ~ U(-s, s), s = scale / sqrt(fan_in)"""
    keys = key.split(len(dims) - 1)
    weights, biases = [], []
    for k, (d_in, d_out) in zip(keys, zip(dims[:-1], dims[1:])):
        kw, kb = k.split()
        bound = scale / np.sqrt(d_in)
        weights.append(core.tensor(utils.uniform(kw, -bound, bound, (d_in, d_out)), requires_grad=requires_grad))
        b = np.zeros(d_out) if zero_bias else utils.uniform(kb, -bound, bound, d_out)
        biases.append(core.tensor(b, requires_grad=requires_grad))
    return MlpParams(weights=weights, biases=biases, slope=slope, activation=activation)

def init_mapping(key: utils.PRNGKey, d_z: int, d_x: int, hidden: int = 64, n_layers: int = 3,
                 slope: float = 0.2) -> MlpParams:
    if n_layers < 1:
        raise core.ConfigError("mapping network needs at least one layer")
    dims = [d_z] + [hidden] * (n_layers - 1) + [d_x]
    return init_mlp(key, dims, slope=slope)

def identity_mapping(d: int, n_layers: int = 3, slope: float = 0.2) -> MlpParams:
    """square identity layers with zero biases: θ(z) = z wherever the
    activations pass their input through (positive orthant, or slope=1)"""
    return MlpParams(weights=[core.tensor(np.eye(d), requires_grad=True) for _ in range(n_layers)],
                     biases=[core.tensor(np.zeros(d), requires_grad=True) for _ in range(n_layers)],
                     slope=slope)

# =========================
# Forward models
# =========================

@dataclass(frozen=True)
class ForwardModel(ABC):
    """pure, deterministic map from X to Y"""
    kind: ClassVar[str] = ''

    @property
    @abstractmethod
    def in_dim(self) -> int: ...

    @property
    @abstractmethod
    def out_dim(self) -> int: ...

    @abstractmethod
    def apply(self, x: Tensor) -> Tensor: ...

    @abstractmethod
    def to_arrays(self) -> Dict[str, np.ndarray]: ...

    def meta(self) -> Dict[str, Any]:
        return {'kind': self.kind}

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise core.DimensionError(f"{self.kind}: input dim {x.shape[-1]} != model input dim {self.in_dim}")
        return self.apply(x)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """plain numpy evaluation, nothing recorded"""
        return self(Tensor(x)).values

@dataclass(frozen=True)
class RuggedDecoder(ForwardModel):
    """F(x) = sin(x W + b) A + x C: oscillating features on top of a linear
    trend, so ||F(x) - y||^2 has many local minima in x"""
    W: Tensor   # (d_x, d_h)
    b: Tensor   # (d_h,)
    A: Tensor   # (d_h, d_y)
    C: Tensor   # (d_x, d_y)
    kind: ClassVar[str] = 'rugged_decoder'

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.A.shape[1]

    def apply(self, x: Tensor) -> Tensor:
        return rugged_forward(self, x)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return utils.tree2arrays({'W': self.W, 'b': self.b, 'A': self.A, 'C': self.C})

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any], prefix: str = "") -> "RuggedDecoder":
        return cls(**{k: core.tensor(arrays[f"{prefix}{k}"]) for k in ('W', 'b', 'A', 'C')})

def rugged_forward(spec: RuggedDecoder, x: Tensor) -> Tensor:
    features = core.sin(core.add(core.matmul(x, spec.W), spec.b))
    return core.add(core.matmul(features, spec.A), core.matmul(x, spec.C))

def make_rugged_decoder(key: utils.PRNGKey, d_x: int = 2, d_y: int = 8, d_hidden: int = 16,
                        frequency: float = 3.0, amplitude: float = 1.0, linear: float = 0.3,
                        phase: bool = True) -> RuggedDecoder:
    kw, kb, ka, kc = key.split(4)
    b = utils.uniform(kb, -np.pi, np.pi, d_hidden) if phase else np.zeros(d_hidden)
    return RuggedDecoder(
        W=core.tensor(utils.normal(kw, frequency, (d_x, d_hidden))),
        b=core.tensor(b),
        A=core.tensor(utils.normal(ka, amplitude / np.sqrt(d_hidden), (d_hidden, d_y))),
        C=core.tensor(utils.normal(kc, linear / np.sqrt(d_x), (d_x, d_y))),
    )

@dataclass(frozen=True)
class MiniDecoder(ForwardModel):
    """2-layer tanh decoder; params stay None until loaded or fitted"""
    d_x: int = 8
    d_y: int = 32
    params: Optional[MlpParams] = None
    kind: ClassVar[str] = 'mini_decoder'

    @property
    def in_dim(self) -> int:
        return self.d_x

    @property
    def out_dim(self) -> int:
        return self.d_y

    def apply(self, x: Tensor) -> Tensor:
        return mini_decoder_forward(self, x)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        if self.params is None:
            raise core.UninitializedModelError("mini decoder has no weights")
        return self.params.to_arrays()

    def meta(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'd_x': self.d_x, 'd_y': self.d_y,
                **(self.params.meta() if self.params is not None else {})}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any], prefix: str = "") -> "MiniDecoder":
        params = MlpParams.from_arrays(arrays, meta, prefix=prefix, requires_grad=False)
        return cls(d_x=int(meta['d_x']), d_y=int(meta['d_y']), params=params)

def mini_decoder_forward(spec: MiniDecoder, x: Tensor) -> Tensor:
    if spec.params is None:
        raise core.UninitializedModelError("mini decoder used before its weights were set")
    return mlp_forward(spec.params, x)

@dataclass(frozen=True)
class AdditiveCorrection(ForwardModel):
    """F(a + r): the optimized input is a correction r added to a fixed anchor a.
    The decay term λ||r||^2 is added by the task_plus_decay objective."""
    wrapped: ForwardModel
    anchor: Tensor
    decay: float = 1.0
    kind: ClassVar[str] = 'additive_correction'

    def __post_init__(self):
        if self.anchor.shape != (self.wrapped.in_dim,):
            raise core.DimensionError(
                f"anchor shape {self.anchor.shape} does not match wrapped input dim {self.wrapped.in_dim}")
        if self.decay < 0:
            raise core.ConfigError("decay must be >= 0")

    @property
    def in_dim(self) -> int:
        return self.wrapped.in_dim

    @property
    def out_dim(self) -> int:
        return self.wrapped.out_dim

    def apply(self, correction: Tensor) -> Tensor:
        return additive_forward(self, correction)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"wrapped.{k}": v for k, v in self.wrapped.to_arrays().items()}
        arrays['anchor'] = self.anchor.numpy()
        return arrays

    def meta(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'decay': self.decay, 'wrapped': self.wrapped.meta()}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any], prefix: str = "") -> "AdditiveCorrection":
        wrapped = model_from_arrays(arrays, meta['wrapped'], prefix=f"{prefix}wrapped.")
        return cls(wrapped=wrapped, anchor=core.tensor(arrays[f"{prefix}anchor"]), decay=float(meta['decay']))

def additive_forward(spec: AdditiveCorrection, correction: Tensor) -> Tensor:
    if correction.shape[-1] != spec.anchor.shape[0]:
        raise core.DimensionError(f"correction dim {correction.shape[-1]} != anchor dim {spec.anchor.shape[0]}")
    return spec.wrapped(core.add(correction, spec.anchor))

# global registry of forward models
MODELS = {
    'rugged_decoder': RuggedDecoder,
    'mini_decoder': MiniDecoder,
    'additive_correction': AdditiveCorrection,
}
def get_model(kind: str) -> type:
    if kind not in MODELS:
        raise core.ConfigError(f"unknown forward model kind {kind}, expected one of {list(MODELS)}")
    return MODELS[kind]

def model_from_arrays(arrays: Dict[str, np.ndarray], meta: Dict[str, Any], prefix: str = "") -> ForwardModel:
    return get_model(meta['kind']).from_arrays(arrays, meta, prefix=prefix)

# =========================
# Mini decoder fitting
# =========================

def make_decoder_dataset(key: utils.PRNGKey, n: int = 256, d_x: int = 8, d_y: int = 32,
                         hidden: int = 32, noise: float = 0.01) -> Tuple[np.ndarray, np.ndarray]:
    """realizable (x, y) pairs from a seeded tanh generator network"""
    kx, kg, kn = key.split(3)
    generator = init_mlp(kg, [d_x, hidden, d_y], activation='tanh', scale=2.0, zero_bias=False,
                         requires_grad=False)
    xs = utils.normal(kx, 1.0, (n, d_x))
    ys = mlp_forward(generator, Tensor(xs)).values + utils.normal(kn, noise, (n, d_y))
    return xs, ys

def fit_mini_decoder(dataset: Tuple[np.ndarray, np.ndarray], epochs: int = 1000, lr: float = 1e-2,
                     key: Optional[utils.PRNGKey] = None, hidden: int = 32,
                     history: Optional[List[float]] = None) -> MlpParams:
    """full-batch Adam on mse; the returned params are frozen (no grads)"""
    from . import optimizers
    xs, ys = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in dataset)
    if xs.size == 0 or ys.size == 0 or len(xs) == 0:
        raise core.InputError("cannot fit a decoder on an empty dataset")
    if len(xs) != len(ys):
        raise core.DimensionError(f"dataset has {len(xs)} inputs but {len(ys)} targets")
    key = key or utils.PRNGKey(0)
    params = init_mlp(key, [xs.shape[1], hidden, ys.shape[1]], activation='tanh', zero_bias=True)
    state = optimizers.make_optimizer('adam', lr=lr)
    x, y = Tensor(xs), Tensor(ys)
    n = len(xs)
    for epoch in range(epochs):
        with core.tape():
            loss = core.scale(core.mse(mlp_forward(params, x), y), 1.0 / n)
            core.zero_grad(params.tensors())
            core.backward(loss)
        optimizers.step(state, params.tensors())
        if history is not None:
            history.append(loss.item())
    final = core.mse(mlp_forward(params, x), y).item() / n
    logger.info(f"fitted mini decoder on {n} samples: final mse {final:.3e}")
    return params.clone(requires_grad=False)

def make_mini_decoder(key: utils.PRNGKey, d_x: int = 8, d_y: int = 32, hidden: int = 32,
                      n_data: int = 256, epochs: int = 1000, lr: float = 1e-2, noise: float = 0.01) -> MiniDecoder:
    kd, kf = key.split()
    dataset = make_decoder_dataset(kd, n=n_data, d_x=d_x, d_y=d_y, hidden=hidden, noise=noise)
    params = fit_mini_decoder(dataset, epochs=epochs, lr=lr, key=kf, hidden=hidden)
    return MiniDecoder(d_x=d_x, d_y=d_y, params=params)
