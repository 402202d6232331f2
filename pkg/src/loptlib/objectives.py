"""Loss functions L(y_hat, y) and observation masking."""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from chex import dataclass

from . import core, utils
from .core import Tensor

@dataclass(frozen=True)
class Observation:
    """y is (d_y,) for one observation or (n, d_y) for a batch of rows.
    mask (same trailing shape) marks the entries that count."""
    y: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.y)):
            raise core.InputError("observation holds non-finite entries")
        if self.mask is not None:
            _check_mask(self.mask, self.y.shape)

    @property
    def dim(self) -> int:
        return self.y.shape[-1]

    def rows(self, idx) -> "Observation":
        """sub-batch of a stacked observation"""
        mask = self.mask if self.mask is None or self.mask.ndim == 1 else self.mask[idx]
        return Observation(y=np.atleast_2d(self.y)[idx], mask=mask)

def observation(y, mask=None) -> Observation:
    return Observation(y=np.asarray(y, dtype=np.float64),
                       mask=None if mask is None else np.asarray(mask, dtype=bool))

def stack_observations(observations: Sequence[Observation]) -> Observation:
    if not observations:
        raise core.InputError("no observations to stack")
    ys = np.stack([o.y for o in observations])
    masks = [o.mask for o in observations]
    if all(m is None for m in masks):
        return Observation(y=ys)
    d = ys.shape[-1]
    mask = np.stack([np.ones(d, dtype=bool) if m is None else m for m in masks])
    return Observation(y=ys, mask=mask)

def _check_mask(mask: np.ndarray, shape) -> None:
    if mask.shape[-1:] != tuple(shape[-1:]) or mask.ndim > len(shape):
        raise core.DimensionError(f"mask shape {mask.shape} does not match observation shape {tuple(shape)}")
    if not np.all(mask.sum(axis=-1) >= 1):
        raise core.InputError("mask must keep at least one entry")

@dataclass(frozen=True)
class Objective:
    """kind: l2 | l2_plus_feature | task_plus_decay. For task_plus_decay,
    `task` names the wrapped loss and `decay` weighs ||correction||^2."""
    kind: str = 'l2'
    mask: Optional[np.ndarray] = None
    projection: Optional[np.ndarray] = None   # (d_y, k): features are y @ P
    feature_weight: float = 1.0
    decay: float = 0.0
    task: str = 'l2'

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise core.ConfigError(f"unknown objective kind {self.kind}, expected one of {list(OBJECTIVES)}")
        if self.task not in ('l2', 'l2_plus_feature'):
            raise core.ConfigError(f"unknown task loss {self.task}")
        if self.decay < 0:
            raise core.ConfigError(f"decay must be >= 0, got {self.decay}")
        if self.mask is not None and not np.any(self.mask):
            raise core.InputError("mask must keep at least one entry")
        needs_projection = self.kind == 'l2_plus_feature' or (self.kind == 'task_plus_decay' and self.task == 'l2_plus_feature')
        if needs_projection and self.projection is None:
            raise core.ConfigError("l2_plus_feature needs a feature projection")

def resolve_mask(obj: Objective, obs: Observation) -> Optional[np.ndarray]:
    """the observation's own mask wins over the objective's"""
    mask = obs.mask if obs.mask is not None else obj.mask
    if mask is not None:
        _check_mask(mask, obs.y.shape)
    return mask

# =========================
# Loss terms
# =========================

def _l2(y_hat: Tensor, target: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    if mask is None:
        return core.mse(y_hat, target)
    return core.masked_mse(y_hat, target, mask)

def _feature(obj: Objective, y_hat: Tensor, target: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    # hidden entries are zeroed before projection, so they cannot leak into features
    if mask is not None:
        keep = Tensor(np.broadcast_to(mask, y_hat.shape).astype(np.float64))
        y_hat, target = core.mul(y_hat, keep), core.mul(target, keep)
    P = Tensor(obj.projection)
    return core.mse(core.matmul(y_hat, P), core.matmul(target, P))

def _task(obj: Objective, kind: str, y_hat: Tensor, target: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    loss = _l2(y_hat, target, mask)
    if kind == 'l2_plus_feature':
        loss = core.add(loss, core.scale(_feature(obj, y_hat, target, mask), obj.feature_weight))
    return loss

def eval_loss(obj: Objective, y_hat: Tensor, obs: Observation, correction: Optional[Tensor] = None) -> Tensor:
    """scalar loss; for batched rows, the sum of per-row losses"""
    if y_hat.shape[-1] != obs.dim:
        raise core.DimensionError(f"prediction dim {y_hat.shape[-1]} != observation dim {obs.dim}")
    mask = resolve_mask(obj, obs)
    target = Tensor(np.broadcast_to(obs.y, y_hat.shape))
    if obj.kind == 'task_plus_decay':
        if correction is None:
            raise core.ContractError("task_plus_decay needs the correction tensor")
        loss = _task(obj, obj.task, y_hat, target, mask)
        return core.add(loss, core.scale(core.l2_norm_sq(correction), obj.decay))
    return _task(obj, obj.kind, y_hat, target, mask)

def row_losses(obj: Objective, y_hat: np.ndarray, obs: Observation,
               correction: Optional[np.ndarray] = None) -> np.ndarray:
    """per-row loss values (numpy, nothing recorded); same terms as eval_loss"""
    y_hat = np.atleast_2d(y_hat)
    mask = resolve_mask(obj, obs)
    target = np.broadcast_to(obs.y, y_hat.shape)
    sq = (y_hat - target) ** 2
    if mask is None:
        loss = sq.sum(axis=-1) / y_hat.shape[-1]
    else:
        m = np.broadcast_to(mask, y_hat.shape)
        loss = (m * sq).sum(axis=-1) / m.sum(axis=-1)
    task = obj.task if obj.kind == 'task_plus_decay' else obj.kind
    if task == 'l2_plus_feature':
        keep = np.ones(y_hat.shape) if mask is None else np.broadcast_to(mask, y_hat.shape)
        diff = (y_hat * keep) @ obj.projection - (target * keep) @ obj.projection
        loss = loss + obj.feature_weight * (diff ** 2).sum(axis=-1) / diff.shape[-1]
    if obj.kind == 'task_plus_decay':
        if correction is None:
            raise core.ContractError("task_plus_decay needs the correction values")
        loss = loss + obj.decay * (np.atleast_2d(correction) ** 2).sum(axis=-1)
    return loss

def apply_mask_semantics(obj: Objective, grad_y: Tensor, obs: Optional[Observation] = None) -> Tensor:
    """zero the gradient at hidden entries"""
    mask = obj.mask if obs is None or obs.mask is None else obs.mask
    if mask is None:
        raise core.ContractError("apply_mask_semantics needs a mask")
    return Tensor(np.where(np.broadcast_to(mask, grad_y.shape), grad_y.values, 0.0))

def masked_l2_grad(obj: Objective, y_hat: np.ndarray, obs: Observation) -> np.ndarray:
    """dL/dŷ of the l2 loss with the mask applied after differentiation: the
    full residual gradient, scaled per row by the visible count, then zeroed
    at hidden entries. Equals the gradient of the masked loss."""
    if obj.kind != 'l2':
        raise core.ConfigError(f"post-hoc gradient masking needs the l2 objective, got {obj.kind}")
    y_hat = np.atleast_2d(y_hat)
    grad = 2.0 * (y_hat - np.broadcast_to(obs.y, y_hat.shape))
    mask = resolve_mask(obj, obs)
    if mask is None:
        return grad / y_hat.shape[-1]
    counts = np.broadcast_to(mask, y_hat.shape).sum(axis=-1, keepdims=True)
    return apply_mask_semantics(obj, Tensor(grad / counts), obs).values

# global registry of objective kinds
OBJECTIVES = ('l2', 'l2_plus_feature', 'task_plus_decay')

def feature_projection(key: utils.PRNGKey, d_y: int, k: Optional[int] = None) -> np.ndarray:
    """fixed random projection standing in for a perceptual feature net"""
    k = k or max(1, d_y // 2)
    return utils.normal(key, 1.0 / np.sqrt(d_y), (d_y, k))

def make_objective(kind: str = 'l2', d_y: Optional[int] = None, key: Optional[utils.PRNGKey] = None,
                   mask=None, feature_dim: Optional[int] = None, feature_weight: float = 1.0,
                   decay: float = 0.0, task: str = 'l2') -> Objective:
    """build an objective from config-level values (mask literals allowed)"""
    if isinstance(mask, (str, list, tuple)):
        if d_y is None:
            raise core.ConfigError("mask literal needs the observation dim")
        mask = utils.parse_mask(mask, d_y)
    needs_projection = kind == 'l2_plus_feature' or (kind == 'task_plus_decay' and task == 'l2_plus_feature')
    projection = None
    if needs_projection:
        if d_y is None or key is None:
            raise core.ConfigError("feature projection needs d_y and a key")
        projection = feature_projection(key, d_y, feature_dim)
    return Objective(kind=kind, mask=mask, projection=projection, feature_weight=feature_weight,
                     decay=decay, task=task)
