"""Landscape learning: trajectory collection into a replay buffer, θ rounds
on buffered latents, and their coordinate-descent alternation."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from functools import partial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from chex import dataclass
from tqdm import tqdm

from . import core, inference, models, objectives as obj_, optimizers, utils
from .core import Tensor
from .models import ForwardModel, MlpParams
from .objectives import Objective, Observation

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class TrainConfig:
    """n_buffers (B) rounds; n_samples (N) trajectories of n_steps (T) per round"""
    n_buffers: int = 50
    n_samples: int = 64
    n_steps: int = 20
    lr_z: float = 0.1
    lr_theta: float = 1e-3
    z_optimizer: str = 'adam'
    theta_optimizer: str = 'adamw'
    weight_decay: float = 0.1
    init: str = 'zero'
    init_sigma: float = 1.0
    batch_size: int = 1
    chunk_size: int = 64
    max_retries: int = 3
    divergence_factor: float = 1e6
    checkpoint_every: int = 0
    seed: int = 0
    progress: bool = False

    def __post_init__(self):
        for name in ('n_buffers', 'n_samples', 'n_steps', 'batch_size', 'chunk_size'):
            if getattr(self, name) < 1:
                raise core.ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr_z < 0 or self.lr_theta < 0:
            raise core.ConfigError("learning rates must be >= 0")
        if self.init not in inference.INIT_POLICIES:
            raise core.ConfigError(f"init must be one of {inference.INIT_POLICIES}, got {self.init}")
        if self.init_sigma <= 0:
            raise core.ConfigError("init_sigma must be > 0")
        if self.max_retries < 0 or self.checkpoint_every < 0:
            raise core.ConfigError("max_retries and checkpoint_every must be >= 0")
        self.z_state()
        self.theta_state()

    @property
    def iterations_per_round(self) -> int:
        return self.n_samples * self.n_steps

    def z_state(self) -> optimizers.OptimizerState:
        return optimizers.make_optimizer(self.z_optimizer, lr=self.lr_z)

    def theta_state(self) -> optimizers.OptimizerState:
        kw = {'weight_decay': self.weight_decay} if self.theta_optimizer == 'adamw' else {}
        return optimizers.make_optimizer(self.theta_optimizer, lr=self.lr_theta, **kw)

# =========================
# Observation samplers
# =========================

class ObservationSampler(ABC):
    @abstractmethod
    def sample(self, key: utils.PRNGKey, n: int) -> Observation:
        """n observations stacked as rows"""

@dataclass(frozen=True)
class PriorSampler(ObservationSampler):
    """y = F(x*) + η with x* ~ N(prior_shift, prior_sigma²), η ~ N(0, noise_sigma²)"""
    model: ForwardModel
    prior_sigma: float = 1.0
    noise_sigma: float = 0.0
    prior_shift: float = 0.0
    mask: Optional[np.ndarray] = None

    def sample(self, key: utils.PRNGKey, n: int) -> Observation:
        kx, kn = key.split()
        xs = self.prior_shift + utils.normal(kx, self.prior_sigma, (n, self.model.in_dim))
        ys = self.model.evaluate(xs)
        if self.noise_sigma > 0:
            ys = ys + utils.normal(kn, self.noise_sigma, ys.shape)
        return Observation(y=ys, mask=self.mask)

class DatasetSampler(ObservationSampler):
    """hands out the rows of a fixed observation set in order, once"""
    def __init__(self, observations: Observation):
        self.observations = observations
        self.cursor = 0

    @property
    def remaining(self) -> int:
        return len(np.atleast_2d(self.observations.y)) - self.cursor

    def sample(self, key: utils.PRNGKey, n: int) -> Observation:
        if n > self.remaining:
            raise core.InputError(f"observation sampler exhausted: {n} requested, {self.remaining} left")
        idx = np.arange(self.cursor, self.cursor + n)
        self.cursor += n
        return self.observations.rows(idx)

# =========================
# Replay buffer
# =========================

@dataclass(frozen=True)
class ReplayBuffer:
    """entry i*T + (t-1) holds z_t of trajectory i, paired with observation i"""
    zs: np.ndarray            # (N*T, d_z)
    obs_index: np.ndarray     # (N*T,)
    observations: Observation # N stacked rows
    losses: np.ndarray        # (N*T,) loss at z_t recorded during collection
    round_id: int = 0
    retries: int = 0

    def __post_init__(self):
        assert len(self.zs) == len(self.obs_index) == len(self.losses)

    @property
    def size(self) -> int:
        return len(self.zs)

    @property
    def dim(self) -> int:
        return self.zs.shape[1]

    def sample_indices(self, key: utils.PRNGKey, n: int) -> np.ndarray:
        """uniform, with replacement"""
        if self.size == 0:
            raise core.ContractError("cannot sample from an empty replay buffer")
        return utils.integers(key, 0, self.size, n)

    def entries(self, idx: np.ndarray) -> Tuple[np.ndarray, Observation]:
        return self.zs[idx], self.observations.rows(self.obs_index[idx])

@dataclass(frozen=True)
class RoundStats:
    round_id: int
    collect_loss: float
    final_loss: float
    theta_loss_before: float
    theta_loss_after: float
    retries: int
    iterations: int

def rounds_frame(rounds: Sequence[RoundStats]) -> pd.DataFrame:
    columns = ['round_id', 'collect_loss', 'final_loss', 'theta_loss_before', 'theta_loss_after',
               'retries', 'iterations']
    return pd.DataFrame([[getattr(r, c) for c in columns] for r in rounds], columns=columns)

@dataclass
class TrainResult:
    theta: MlpParams
    optimizer: optimizers.OptimizerState
    rounds: List[RoundStats]

    @property
    def iterations(self) -> int:
        return sum(r.iterations for r in self.rounds)

    def to_frame(self) -> pd.DataFrame:
        return rounds_frame(self.rounds)

# =========================
# Collection
# =========================

def _collect_chunk(decode, d_z: int, model: ForwardModel, obj: Objective, obs: Observation, idx: np.ndarray,
                   cfg: TrainConfig, key: utils.PRNGKey) -> Tuple[np.ndarray, np.ndarray, int]:
    """T descent steps for rows idx; diverged rows restart from a fresh gaussian draw"""
    start = inference.init_points(cfg.init, cfg.init_sigma, [key.fold_in(int(i)) for i in idx], d_z)
    points, losses, diverged = inference.descend(decode, model, obj, obs.rows(idx), start, cfg.z_state(),
                                                 cfg.n_steps, cfg.divergence_factor, on_divergence='flag')
    retries = 0
    for attempt in range(1, cfg.max_retries + 1):
        if not np.any(diverged):
            break
        rows = np.flatnonzero(diverged)
        retries += len(rows)
        logger.warning(f"retrying {len(rows)} diverged trajectories (attempt {attempt})")
        start = inference.init_points('gaussian', cfg.init_sigma,
                                       [key.fold_in(int(idx[r])).fold_in(attempt) for r in rows], d_z)
        p, l, d = inference.descend(decode, model, obj, obs.rows(idx[rows]), start, cfg.z_state(),
                                    cfg.n_steps, cfg.divergence_factor, on_divergence='flag')
        points[:, rows], losses[:, rows] = p, l
        diverged[rows] = d
    if np.any(diverged):
        raise core.DivergenceError(f"{int(diverged.sum())} trajectories still diverge after "
                                   f"{cfg.max_retries} retries")
    return points, losses, retries

def collect_trajectories(theta: MlpParams, model: ForwardModel, obj: Objective, sampler: ObservationSampler,
                         cfg: TrainConfig, key: utils.PRNGKey, round_id: int = 0, threads: int = 1) -> ReplayBuffer:
    """run N trajectories with θ frozen and store z_1..z_T of each"""
    inference.check_theta(theta, model)
    ks, kz = key.split()
    obs = sampler.sample(ks, cfg.n_samples)
    decode = partial(models.mapping_forward, theta.detached())
    run = lambda idx: _collect_chunk(decode, theta.dims[0], model, obj, obs, idx, cfg, kz)
    results = utils.parallel_map(run, utils.chunks(cfg.n_samples, cfg.chunk_size), threads)
    # (T+1, N, d) -> drop z_0 -> trajectory-major (N*T, d)
    points = np.concatenate([p for p, _, _ in results], axis=1)[1:]
    losses = np.concatenate([l for _, l, _ in results], axis=1)[1:]
    T, N, d = points.shape
    return ReplayBuffer(zs=points.transpose(1, 0, 2).reshape(N * T, d),
                        obs_index=np.repeat(np.arange(N), T),
                        observations=obs,
                        losses=losses.T.reshape(N * T),
                        round_id=round_id,
                        retries=sum(r for _, _, r in results))

# =========================
# θ training
# =========================

def buffer_loss(theta: MlpParams, buffer: ReplayBuffer, model: ForwardModel, obj: Objective,
                chunk_size: int = 1024) -> float:
    """mean loss of all buffered entries under the current θ"""
    frozen = theta.detached()
    total = 0.0
    for idx in utils.chunks(buffer.size, chunk_size):
        z, obs = buffer.entries(idx)
        x = inference.decode_x(frozen, z)
        with np.errstate(all='ignore'):
            total += float(np.sum(obj_.row_losses(obj, model.evaluate(x), obs, x)))
    return total / buffer.size

def train_theta_round(theta: MlpParams, buffer: ReplayBuffer, model: ForwardModel, obj: Objective,
                      cfg: TrainConfig, state: optimizers.OptimizerState,
                      key: utils.PRNGKey) -> Tuple[MlpParams, RoundStats]:
    """N*T θ updates, each on batch_size entries drawn uniformly from the buffer.
    θ is updated in place; buffered z never change."""
    if buffer.size == 0:
        raise core.ContractError("train_theta_round needs a collected buffer")
    n_iter = cfg.iterations_per_round
    before = buffer_loss(theta, buffer, model, obj)
    draws = buffer.sample_indices(key, n_iter * cfg.batch_size).reshape(n_iter, cfg.batch_size)
    params = theta.tensors()
    for idx in draws:
        z, obs = buffer.entries(idx)
        with core.tape():
            x = models.mapping_forward(theta, Tensor(z))
            loss = obj_.eval_loss(obj, model(x), obs, correction=x)
            if cfg.batch_size > 1:
                loss = core.scale(loss, 1.0 / cfg.batch_size)
            core.zero_grad(params)
            core.backward(loss)
        optimizers.step(state, params)
    after = buffer_loss(theta, buffer, model, obj)
    logger.debug(f"round {buffer.round_id}: buffer loss {before:.4e} -> {after:.4e}")
    stats = RoundStats(round_id=buffer.round_id,
                       collect_loss=float(np.mean(buffer.losses)),
                       final_loss=float(np.mean(buffer.losses.reshape(-1, cfg.n_steps)[:, -1])),
                       theta_loss_before=before, theta_loss_after=after,
                       retries=buffer.retries, iterations=n_iter)
    return theta, stats

RoundCallback = Callable[[int, MlpParams, optimizers.OptimizerState, List[RoundStats]], None]

def _check_finite(theta: MlpParams, round_id: int) -> None:
    if not theta.is_finite():
        raise core.DivergenceError(f"θ has non-finite parameters after round {round_id}", round_id=round_id)

def coordinate_descent_train(theta0: MlpParams, model: ForwardModel, obj: Objective, sampler: ObservationSampler,
                             cfg: TrainConfig, callback: Optional[RoundCallback] = None, threads: int = 1,
                             state: Optional[optimizers.OptimizerState] = None,
                             start_round: int = 0) -> TrainResult:
    """B rounds of (collect with θ frozen, then train θ with z frozen).
    θ optimizer moments persist across rounds; θ0 itself is not modified."""
    theta = theta0.clone(requires_grad=True)
    state = state if state is not None else cfg.theta_state()
    base = utils.named_key(cfg.seed, 'train')
    rounds: List[RoundStats] = []
    for b in tqdm(range(start_round, cfg.n_buffers), disable=not cfg.progress, desc='rounds'):
        kc, kt = base.fold_in(b).split()
        buffer = collect_trajectories(theta, model, obj, sampler, cfg, kc, round_id=b, threads=threads)
        theta, stats = train_theta_round(theta, buffer, model, obj, cfg, state, kt)
        _check_finite(theta, b)
        rounds.append(stats)
        logger.info(f"round {b + 1}/{cfg.n_buffers}: collection loss {stats.collect_loss:.4e}, "
                    f"buffer loss {stats.theta_loss_before:.4e} -> {stats.theta_loss_after:.4e}")
        if callback is not None:
            callback(b, theta, state, rounds)
    return TrainResult(theta=theta, optimizer=state, rounds=rounds)

def online_train(theta0: MlpParams, model: ForwardModel, obj: Objective, sampler: ObservationSampler,
                 cfg: TrainConfig, callback: Optional[RoundCallback] = None) -> TrainResult:
    """no buffer: every z step is immediately followed by one θ step on the
    updated z. Runs exactly B*N*T iterations."""
    inference.check_theta(theta0, model)
    theta = theta0.clone(requires_grad=True)
    params = theta.tensors()
    state = cfg.theta_state()
    base = utils.named_key(cfg.seed, 'train')
    d_z = theta.dims[0]
    rounds: List[RoundStats] = []
    for b in tqdm(range(cfg.n_buffers), disable=not cfg.progress, desc='rounds'):
        ks, kz = base.fold_in(b).split()
        obs = sampler.sample(ks, cfg.n_samples)
        z_losses, theta_losses, final = [], [], []
        for i in range(cfg.n_samples):
            row = obs.rows(np.array([i]))
            z = Tensor(inference.init_points(cfg.init, cfg.init_sigma, [kz.fold_in(i)], d_z), requires_grad=True)
            z_state = cfg.z_state()
            for t in range(cfg.n_steps):
                with core.tape():
                    x = models.mapping_forward(theta.detached(), z)
                    loss = obj_.eval_loss(obj, model(x), row, correction=x)
                    z.zero_grad()
                    core.backward(loss)
                optimizers.step(z_state, [z])
                z_losses.append(loss.item())
                with core.tape():
                    x = models.mapping_forward(theta, z.detach())
                    loss = obj_.eval_loss(obj, model(x), row, correction=x)
                    core.zero_grad(params)
                    core.backward(loss)
                optimizers.step(state, params)
                theta_losses.append(loss.item())
            final.append(theta_losses[-1])
        _check_finite(theta, b)
        stats = RoundStats(round_id=b, collect_loss=float(np.mean(z_losses)), final_loss=float(np.mean(final)),
                           theta_loss_before=float(np.mean(theta_losses)), theta_loss_after=float('nan'),
                           retries=0, iterations=cfg.iterations_per_round)
        rounds.append(stats)
        logger.info(f"online round {b + 1}/{cfg.n_buffers}: mean loss {stats.collect_loss:.4e}")
        if callback is not None:
            callback(b, theta, state, rounds)
    return TrainResult(theta=theta, optimizer=state, rounds=rounds)
