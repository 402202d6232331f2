"""First-order update rules for z (inference) and θ (training).

Updates always descend: p <- p - lr * direction.
"""
from __future__ import annotations

from dataclasses import field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from chex import dataclass

from . import core
from .core import Tensor

@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        if self.kind not in UPDATES:
            raise core.ConfigError(f"unknown optimizer {self.kind}, expected one of {list(UPDATES)}")
        if self.lr < 0:
            raise core.ConfigError(f"learning rate must be >= 0, got {self.lr}")

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {f"m.{i}": m for i, m in enumerate(self.m)}
        out.update({f"v.{i}": v for i, v in enumerate(self.v)})
        return out

    def meta(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 'weight_decay': self.weight_decay, 't': self.t, 'n_moments': len(self.m)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> "OptimizerState":
        n = int(meta['n_moments'])
        return cls(kind=meta['kind'], lr=float(meta['lr']), beta1=float(meta['beta1']),
                   beta2=float(meta['beta2']), eps=float(meta['eps']),
                   weight_decay=float(meta['weight_decay']), t=int(meta['t']),
                   m=[np.array(arrays[f"m.{i}"]) for i in range(n)],
                   v=[np.array(arrays[f"v.{i}"]) for i in range(n)])

def _sgd(state: OptimizerState, i: int, g: np.ndarray) -> np.ndarray:
    return state.lr * g

def _adam(state: OptimizerState, i: int, g: np.ndarray) -> np.ndarray:
    state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
    state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
    m_hat = state.m[i] / (1 - state.beta1 ** state.t)
    v_hat = state.v[i] / (1 - state.beta2 ** state.t)
    return state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

UPDATES: Dict[str, Callable[[OptimizerState, int, np.ndarray], np.ndarray]] = {
    'sgd': _sgd,
    'adam': _adam,
    'adamw': _adam,
}

def step(state: OptimizerState, params: Sequence[Tensor], grads: Optional[Sequence[np.ndarray]] = None) -> None:
    """one in-place descent step on every param. grads default to param.grad"""
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise core.ContractError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise core.ContractError(f"param {i} has no gradient; run backward first")
        if np.shape(g) != p.shape:
            raise core.DimensionError(f"param {i}: grad shape {np.shape(g)} != param shape {p.shape}")
    if state.kind != 'sgd' and not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if state.m and [m.shape for m in state.m] != [p.shape for p in params]:
        raise core.DimensionError("optimizer moments do not match the params")
    state.t += 1
    update = UPDATES[state.kind]
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.kind == 'adamw':
            # decoupled decay
            p.values -= state.lr * state.weight_decay * p.values
        p.values -= update(state, i, np.asarray(g, dtype=np.float64))

def make_optimizer(kind: str = 'adam', lr: float = 0.1, **kwargs) -> OptimizerState:
    return OptimizerState(kind=kind, lr=lr, **kwargs)
