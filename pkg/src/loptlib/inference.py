"""Optimization-based inference: descent in X (baseline) or in Z through θ (mapped)."""
from __future__ import annotations

import logging
from functools import partial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from chex import dataclass

from . import core, models, objectives as obj_, optimizers, utils
from .core import Tensor
from .models import ForwardModel, MlpParams
from .objectives import Objective, Observation

logger = logging.getLogger(__name__)

INIT_POLICIES = ('zero', 'gaussian')
MASK_MODES = ('loss', 'gradient')

@dataclass(frozen=True)
class InferenceConfig:
    steps: int = 20
    optimizer: str = 'adam'
    lr: float = 0.1
    init: str = 'zero'
    sigma: float = 1.0
    hypotheses: int = 1
    seed: int = 0
    divergence_factor: float = 1e6
    chunk_size: int = 64
    mask_mode: str = 'loss'

    def __post_init__(self):
        if self.steps < 1:
            raise core.ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.init not in INIT_POLICIES:
            raise core.ConfigError(f"init must be one of {INIT_POLICIES}, got {self.init}")
        if self.init == 'gaussian' and self.sigma <= 0:
            raise core.ConfigError("gaussian init needs sigma > 0")
        if self.hypotheses < 1:
            raise core.ConfigError("hypotheses must be >= 1")
        if self.mask_mode not in MASK_MODES:
            raise core.ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode}")
        optimizers.make_optimizer(self.optimizer, lr=self.lr)

    def make_optimizer(self) -> optimizers.OptimizerState:
        return optimizers.make_optimizer(self.optimizer, lr=self.lr)

@dataclass(frozen=True)
class InferenceTrace:
    """points[t] is the iterate after t updates (t = 0..T); losses[t] its loss"""
    points: np.ndarray
    losses: np.ndarray
    x_hat: np.ndarray
    space: str
    seed: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.losses) - 1

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])

    def to_frame(self) -> pd.DataFrame:
        """columns step, loss, p0..; the same layout for X and Z traces"""
        frame = pd.DataFrame({'step': np.arange(len(self.losses)), 'loss': self.losses})
        for j in range(self.points.shape[1]):
            frame[f"p{j}"] = self.points[:, j]
        return frame

# =========================
# Descent loop
# =========================

Decoder = Callable[[Tensor], Tensor]

def init_points(cfg_init: str, sigma: float, keys: Sequence[utils.PRNGKey], dim: int) -> np.ndarray:
    if cfg_init == 'zero':
        return np.zeros((len(keys), dim))
    return np.stack([utils.normal(k, sigma, dim) for k in keys])

def descend(decode: Decoder, model: ForwardModel, obj: Objective, obs: Observation, start: np.ndarray,
            optimizer: optimizers.OptimizerState, steps: int, divergence_factor: float = 1e6,
            on_divergence: str = 'raise', mask_mode: str = 'loss') -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """run `steps` descent updates on each row of `start`.

    Returns (points (T+1, n, d), losses (T+1, n), diverged (n,)). With
    on_divergence='raise' the first diverging step raises; with 'flag'
    diverged rows are reported and the others run to completion.

    mask_mode='gradient' differentiates the unmasked l2 loss and zeroes the
    gradient at hidden entries of ŷ before it flows back; recorded losses
    are the masked ones either way."""
    point = Tensor(np.array(np.atleast_2d(start), dtype=np.float64), requires_grad=True)
    n = point.shape[0]
    points = np.empty((steps + 1,) + point.shape)
    losses = np.empty((steps + 1, n))
    diverged = np.zeros(n, dtype=bool)
    with np.errstate(all='ignore' if on_divergence == 'flag' else 'warn'):
        for t in range(steps + 1):
            with core.tape():
                x = decode(point)
                y_hat = model(x)
                if mask_mode == 'gradient':
                    # surrogate whose dL/dŷ is the post-hoc masked gradient
                    loss = core.sum(core.mul(y_hat, Tensor(obj_.masked_l2_grad(obj, y_hat.values, obs))))
                else:
                    loss = obj_.eval_loss(obj, y_hat, obs, correction=x)
                points[t] = point.values
                losses[t] = obj_.row_losses(obj, model.evaluate(x.values), obs, x.values)
                bad = ~np.isfinite(losses[t])
                if t > 0:
                    bad |= (losses[0] > 0) & (losses[t] > divergence_factor * losses[0])
                if np.any(bad & ~diverged):
                    if on_divergence == 'raise':
                        raise core.DivergenceError(
                            f"loss diverged at step {t}: {losses[t][bad].tolist()}", step=t)
                    logger.debug(f"{int(np.sum(bad & ~diverged))} rows diverged at step {t}")
                    diverged |= bad
                if t == steps:
                    break
                point.zero_grad()
                core.backward(loss)
            optimizers.step(optimizer, [point])
    return points, losses, diverged

def _trace(points: np.ndarray, losses: np.ndarray, x_hat: np.ndarray, space: str, seed: int) -> InferenceTrace:
    return InferenceTrace(points=points, losses=losses, x_hat=x_hat, space=space, seed=seed)

def _identity(x: Tensor) -> Tensor:
    return x

def infer_baseline(model: ForwardModel, obj: Objective, obs: Observation, cfg: InferenceConfig,
                   init: Optional[np.ndarray] = None, seed: Optional[int] = None) -> InferenceTrace:
    """argmin_x L(F(x), y) by descent in X"""
    seed = cfg.seed if seed is None else seed
    start = init_points(cfg.init, cfg.sigma, [utils.PRNGKey(seed)], model.in_dim) if init is None else init
    points, losses, _ = descend(_identity, model, obj, obs, start, cfg.make_optimizer(), cfg.steps,
                                cfg.divergence_factor, mask_mode=cfg.mask_mode)
    return _trace(points[:, 0], losses[:, 0], points[-1, 0].copy(), 'x', seed)

def check_theta(theta: MlpParams, model: ForwardModel) -> None:
    if theta.dims[-1] != model.in_dim:
        raise core.DimensionError(f"mapping output dim {theta.dims[-1]} != forward model input dim {model.in_dim}")

def decode_x(theta: MlpParams, z: np.ndarray) -> np.ndarray:
    return models.mapping_forward(theta.detached(), Tensor(z)).values

def infer_mapped(theta: MlpParams, model: ForwardModel, obj: Objective, obs: Observation, cfg: InferenceConfig,
                 init: Optional[np.ndarray] = None, seed: Optional[int] = None) -> InferenceTrace:
    """argmin_z L(F(θ(z)), y) by descent in Z; x_hat = θ(z_T)"""
    check_theta(theta, model)
    seed = cfg.seed if seed is None else seed
    frozen = theta.detached()
    start = init_points(cfg.init, cfg.sigma, [utils.PRNGKey(seed)], theta.dims[0]) if init is None else init
    points, losses, _ = descend(partial(models.mapping_forward, frozen), model, obj, obs, start,
                                cfg.make_optimizer(), cfg.steps, cfg.divergence_factor,
                                mask_mode=cfg.mask_mode)
    z_hat = points[-1, 0]
    return _trace(points[:, 0], losses[:, 0], decode_x(frozen, z_hat), 'z', seed)

def infer_multi(theta: MlpParams, model: ForwardModel, obj: Objective, obs: Observation, cfg: InferenceConfig,
                seeds: Optional[Sequence[int]] = None, threads: int = 1) -> List[InferenceTrace]:
    """independent mapped runs from distinct random z_0, sorted by final loss"""
    seeds = list(seeds) if seeds is not None else [cfg.seed + h for h in range(cfg.hypotheses)]
    if len(seeds) >= 2 and cfg.init == 'zero':
        raise core.ConfigError("multi-hypothesis inference with zero init yields identical hypotheses")
    traces = utils.parallel_map(lambda s: infer_mapped(theta, model, obj, obs, cfg, seed=s), seeds, threads)
    return sorted(traces, key=lambda tr: tr.final_loss)

def infer_many(theta: Optional[MlpParams], model: ForwardModel, obj: Objective,
               observations: Sequence[Observation], cfg: InferenceConfig, threads: int = 1) -> List[InferenceTrace]:
    """one run per observation, batched in fixed-size chunks. theta=None runs
    the baseline. Observation i starts from key (cfg.seed, i)."""
    if theta is not None:
        check_theta(theta, model)
        frozen = theta.detached()
        decode, dim, space = partial(models.mapping_forward, frozen), theta.dims[0], 'z'
    else:
        decode, dim, space = _identity, model.in_dim, 'x'
    base = utils.PRNGKey(cfg.seed)

    def run(idx: np.ndarray) -> List[InferenceTrace]:
        batch = obj_.stack_observations([observations[i] for i in idx])
        start = init_points(cfg.init, cfg.sigma, [base.fold_in(int(i)) for i in idx], dim)
        points, losses, _ = descend(decode, model, obj, batch, start, cfg.make_optimizer(), cfg.steps,
                                    cfg.divergence_factor, mask_mode=cfg.mask_mode)
        x_hats = points[-1] if theta is None else decode_x(frozen, points[-1])
        return [_trace(points[:, r], losses[:, r], x_hats[r], space, cfg.seed) for r in range(len(idx))]

    chunked = utils.parallel_map(run, utils.chunks(len(observations), cfg.chunk_size), threads)
    return [trace for chunk in chunked for trace in chunk]

def loss_surface(model: ForwardModel, obj: Objective, obs: Observation,
                 theta: Optional[MlpParams] = None) -> Callable[[np.ndarray], np.ndarray]:
    """vectorized point -> loss map over X (theta=None) or over Z"""
    frozen = theta.detached() if theta is not None else None

    def evalfn(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        x = points if frozen is None else decode_x(frozen, points)
        with np.errstate(all='ignore'):
            return obj_.row_losses(obj, model.evaluate(x), obs, x)
    return evalfn
