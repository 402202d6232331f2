"""Loss-landscape grids, smoothness metrics, convergence curves and ablations."""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from chex import dataclass
from scipy import linalg, ndimage

from . import core, inference, utils
from .inference import InferenceConfig, InferenceTrace
from .models import ForwardModel, MlpParams
from .objectives import Objective, Observation

logger = logging.getLogger(__name__)

# =========================
# PCA directions
# =========================

@dataclass(frozen=True)
class PcaResult:
    directions: np.ndarray   # (2, d), rows orthonormal
    variances: np.ndarray    # (2,), descending
    mean: np.ndarray
    degenerate: bool = False

def _fix_sign(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] > 0 else -v

def pca_directions(latents: np.ndarray, strict: bool = True, rtol: float = 1e-12) -> PcaResult:
    """top-2 principal directions of a latent cloud.

    With rank 1 data the second direction is an arbitrary orthogonal
    completion: raised as DegenerateDataError when strict, else flagged."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] < 2:
        raise core.DimensionError(f"pca needs an (n, d >= 2) matrix, got shape {latents.shape}")
    if len(latents) < 3:
        raise core.DegenerateDataError(f"pca needs at least 3 points, got {len(latents)}")
    mean = latents.mean(axis=0)
    centered = latents - mean
    cov = centered.T @ centered / (len(latents) - 1)
    evals, evecs = linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    floor = rtol * latents.shape[1] * max(evals[0], np.finfo(float).tiny)
    if evals[0] <= np.finfo(float).tiny:
        raise core.DegenerateDataError("latent cloud has rank 0")
    degenerate = bool(evals[1] <= floor)
    if degenerate:
        if strict:
            raise core.DegenerateDataError("latent cloud has rank 1; second direction is undetermined")
        logger.warning("latent cloud has rank 1; second pca direction is an arbitrary orthogonal completion")
    directions = np.stack([_fix_sign(evecs[:, 0]), _fix_sign(evecs[:, 1])])
    return PcaResult(directions=directions, variances=evals, mean=mean, degenerate=degenerate)

# =========================
# Landscape grids
# =========================

@dataclass(frozen=True)
class LandscapeGrid:
    """losses[i, j] is the loss at center + alphas[i] * d1 + betas[j] * d2"""
    center: np.ndarray
    directions: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray

    @property
    def resolution(self) -> int:
        return len(self.alphas)

    @property
    def half_width(self) -> float:
        return float(self.alphas[-1])

    @property
    def spacing(self) -> float:
        return float(self.alphas[1] - self.alphas[0])

    def argmin(self) -> Tuple[int, int]:
        i, j = np.unravel_index(np.nanargmin(self.losses), self.losses.shape)
        return int(i), int(j)

    def min_is_interior(self) -> bool:
        i, j = self.argmin()
        return 0 < i < self.resolution - 1 and 0 < j < self.resolution - 1

    def to_frame(self) -> pd.DataFrame:
        a, b = np.meshgrid(self.alphas, self.betas, indexing='ij')
        return pd.DataFrame({'alpha': a.ravel(), 'beta': b.ravel(), 'loss': self.losses.ravel()})

def landscape_grid(evalfn: Callable[[np.ndarray], np.ndarray], center: np.ndarray, dirs: np.ndarray,
                   half_width: float, resolution: int = 41, chunk_size: int = 4096,
                   threads: int = 1) -> LandscapeGrid:
    """evaluate a vectorized point -> loss map over a square 2-plane grid.
    Non-finite losses are stored as they are."""
    if resolution < 3:
        raise core.ConfigError(f"resolution must be >= 3, got {resolution}")
    if not half_width > 0:
        raise core.ConfigError(f"half_width must be > 0, got {half_width}")
    center, dirs = np.asarray(center, dtype=np.float64), np.asarray(dirs, dtype=np.float64)
    if dirs.shape != (2,) + center.shape:
        raise core.DimensionError(f"directions {dirs.shape} do not match center {center.shape}")
    if not np.allclose(dirs @ dirs.T, np.eye(2), rtol=0, atol=1e-10):
        raise core.InputError("grid directions must be orthonormal")
    steps = np.linspace(-half_width, half_width, resolution)
    a, b = np.meshgrid(steps, steps, indexing='ij')
    points = center + a.reshape(-1, 1) * dirs[0] + b.reshape(-1, 1) * dirs[1]
    values = utils.parallel_map(lambda idx: np.asarray(evalfn(points[idx]), dtype=np.float64),
                                utils.chunks(len(points), chunk_size), threads)
    losses = np.concatenate(values).reshape(resolution, resolution)
    return LandscapeGrid(center=center, directions=dirs, alphas=steps, betas=steps.copy(), losses=losses)

def _neighbour_mean(losses: np.ndarray) -> np.ndarray:
    kernel = np.ones((3, 3)) / 8.0
    kernel[1, 1] = 0.0
    return ndimage.convolve(losses, kernel, mode='nearest')

def spike_count(grid: LandscapeGrid, factor: float = 2.0) -> int:
    """interior vertices whose loss exceeds factor x the mean of their 8 neighbours"""
    with np.errstate(invalid='ignore'):
        spikes = grid.losses > factor * _neighbour_mean(grid.losses)
    return int(np.sum(spikes[1:-1, 1:-1]))

def laplacian_energy(grid: LandscapeGrid) -> float:
    """mean squared discrete Laplacian over interior vertices"""
    lap = ndimage.laplace(grid.losses, mode='nearest') / grid.spacing ** 2
    return float(np.mean(lap[1:-1, 1:-1] ** 2))

def recovered_latents(theta: Optional[MlpParams], model: ForwardModel, obj: Objective,
                      observations: Sequence[Observation], cfg: InferenceConfig, n_starts: int = 4,
                      threads: int = 1) -> np.ndarray:
    """end points of short gaussian-start runs, (n_starts, n_obs, d)"""
    runs = []
    for s in range(n_starts):
        start_cfg = cfg.replace(init='gaussian', seed=cfg.seed + s)
        traces = inference.infer_many(theta, model, obj, observations, start_cfg, threads=threads)
        runs.append(np.stack([tr.points[-1] for tr in traces]))
    return np.stack(runs)

def _space_grids(theta: Optional[MlpParams], model: ForwardModel, obj: Objective,
                 observations: Sequence[Observation], cfg: InferenceConfig, resolution: int,
                 half_width_factor: float, n_starts: int, threads: int) -> List[LandscapeGrid]:
    latents = recovered_latents(theta, model, obj, observations, cfg, n_starts=n_starts, threads=threads)
    pca = pca_directions(latents.reshape(-1, latents.shape[-1]), strict=False)
    half_width = half_width_factor * np.sqrt(pca.variances[0])
    grids = []
    for i, obs in enumerate(observations):
        evalfn = inference.loss_surface(model, obj, obs, theta)
        grids.append(landscape_grid(evalfn, latents[0, i], pca.directions, half_width, resolution,
                                    threads=threads))
    return grids

def paired_landscapes(theta: MlpParams, model: ForwardModel, obj: Objective, observations: Sequence[Observation],
                      cfg: InferenceConfig, resolution: int = 41, half_width_factor: float = 3.0,
                      n_starts: int = 4, threads: int = 1) -> List[Tuple[LandscapeGrid, LandscapeGrid]]:
    """(X-space grid, Z-space grid) per observation. Each space gets its own
    PCA plane over recovered latents; grids are centred on the first run's end
    point and extend half_width_factor latent standard deviations."""
    kw = dict(resolution=resolution, half_width_factor=half_width_factor, n_starts=n_starts, threads=threads)
    x_grids = _space_grids(None, model, obj, observations, cfg, **kw)
    z_grids = _space_grids(theta, model, obj, observations, cfg, **kw)
    return list(zip(x_grids, z_grids))

# =========================
# Convergence curves
# =========================

def convergence_curves(traces: Sequence[InferenceTrace]) -> pd.DataFrame:
    """per-step mean and standard error of the loss across traces"""
    if not traces:
        raise core.InputError("no traces to aggregate")
    lengths = {len(getattr(tr, 'losses', tr)) for tr in traces}
    if len(lengths) != 1:
        raise core.InputError(f"traces have mixed lengths {sorted(lengths)}")
    losses = np.stack([np.asarray(getattr(tr, 'losses', tr), dtype=np.float64) for tr in traces])
    n = len(losses)
    stderr = losses.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(losses.shape[1])
    return pd.DataFrame({'step': np.arange(losses.shape[1]), 'mean': losses.mean(axis=0),
                         'stderr': stderr, 'n': n})

# =========================
# Ablations
# =========================

ABLATION_VARIANTS = ('full', 'no_cd_no_buffer', 'random_theta', 'baseline')

@dataclass(frozen=True)
class AblationSuite:
    """variants maps label -> θ; None runs the baseline in X"""
    variants: Dict[str, Optional[MlpParams]]
    observations: List[Observation]
    steps: Tuple[int, ...] = (20, 200)
    baseline_lr: Optional[float] = None

@dataclass(frozen=True)
class AblationReport:
    table: pd.DataFrame    # index: variant, columns: step counts, values: mean loss

    def loss(self, variant: str, step: int) -> float:
        return float(self.table.loc[variant, step])

    def to_frame(self) -> pd.DataFrame:
        frame = self.table.reset_index().melt(id_vars='variant', var_name='steps', value_name='mean_loss')
        return frame.sort_values(['variant', 'steps'], kind='stable').reset_index(drop=True)

def run_ablation(suite: AblationSuite, model: ForwardModel, obj: Objective, cfg: InferenceConfig,
                 threads: int = 1) -> AblationReport:
    """mean loss of every variant at each step count, all on the same observations"""
    missing = [v for v in ABLATION_VARIANTS if v not in suite.variants]
    if missing:
        raise core.InputError(f"ablation suite is missing variants {missing}")
    if not suite.observations:
        raise core.InputError("ablation suite has no observations")
    # a run of max(steps) passes through every shorter step count
    run_cfg = cfg.replace(steps=max(suite.steps))
    rows = {}
    for label, theta in suite.variants.items():
        variant_cfg = run_cfg
        if theta is None and suite.baseline_lr is not None:
            variant_cfg = run_cfg.replace(lr=suite.baseline_lr)
        traces = inference.infer_many(theta, model, obj, suite.observations, variant_cfg, threads=threads)
        losses = np.stack([tr.losses for tr in traces])
        rows[label] = [float(np.mean(losses[:, s])) for s in suite.steps]
        logger.info(f"ablation {label}: " + ", ".join(f"{s} steps {v:.4e}" for s, v in zip(suite.steps, rows[label])))
    table = pd.DataFrame.from_dict(rows, orient='index', columns=list(suite.steps))
    table.index.name = 'variant'
    return AblationReport(table=table)

def relative_improvement(report: AblationReport, variant: str, reference: str, step: int) -> float:
    """percentage loss reduction of variant against reference"""
    ref = report.loss(reference, step)
    if ref == 0:
        raise core.InputError(f"reference {reference} has zero loss at step {step}")
    return 100.0 * (ref - report.loss(variant, step)) / ref

def sweep_baseline_lr(model: ForwardModel, obj: Objective, observations: Sequence[Observation],
                      cfg: InferenceConfig, lrs: Sequence[float], threads: int = 1) -> Tuple[float, pd.DataFrame]:
    """pick the baseline step size with the lowest mean final loss; a
    diverging step size scores inf"""
    if not lrs:
        raise core.ConfigError("baseline lr sweep needs at least one learning rate")
    scores = []
    for lr in lrs:
        try:
            traces = inference.infer_many(None, model, obj, observations, cfg.replace(lr=lr), threads=threads)
            scores.append(float(np.mean([tr.final_loss for tr in traces])))
        except core.DivergenceError:
            logger.info(f"baseline lr {lr} diverged")
            scores.append(float('inf'))
    frame = pd.DataFrame({'lr': list(lrs), 'mean_loss': scores})
    best = float(frame['lr'][int(np.argmin(scores))])
    logger.info(f"best baseline lr {best}")
    return best, frame
