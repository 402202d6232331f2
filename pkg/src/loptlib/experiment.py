"""Turn a resolved config into models, objectives, samplers and run configs;
read and write checkpoints."""
from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

import numpy as np
from chex import dataclass

from . import core, models, objectives as obj_, optimizers, utils
from .analysis import AblationSuite
from .inference import InferenceConfig
from .models import ForwardModel, MlpParams
from .objectives import Objective, Observation
from .trainer import PriorSampler, TrainConfig

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class ExperimentConfig:
    config: Dict[str, Any]
    train: TrainConfig
    inference: InferenceConfig
    seed: int
    out_dir: str = '.'

    @classmethod
    def from_dict(cls, config: Dict[str, Any], out_dir: str = '.') -> "ExperimentConfig":
        return cls(config=config, train=train_config(config), inference=inference_config(config),
                   seed=int(config['seed']), out_dir=out_dir)

def train_config(config: Dict[str, Any]) -> TrainConfig:
    return TrainConfig(**config['train'], seed=int(config['seed']))

def inference_config(config: Dict[str, Any], **overrides) -> InferenceConfig:
    fields = {k: v for k, v in config['inference'].items() if k != 'baseline_lrs'}
    fields['seed'] = int(config['seed'])
    fields.update(overrides)
    return InferenceConfig(**fields)

def _base_model(kind: str, spec: Dict[str, Any], key: utils.PRNGKey) -> ForwardModel:
    if kind == 'rugged_decoder':
        return models.make_rugged_decoder(key, d_x=spec['d_x'], d_y=spec['d_y'], d_hidden=spec['d_hidden'],
                                          frequency=spec['frequency'], amplitude=spec['amplitude'],
                                          linear=spec['linear'])
    if kind == 'mini_decoder':
        return models.make_mini_decoder(key, d_x=spec['d_x'], d_y=spec['d_y'], hidden=spec['hidden'],
                                        n_data=spec['n_data'], epochs=spec['epochs'], lr=spec['lr'],
                                        noise=spec['noise'])
    raise core.ConfigError(f"cannot build a {kind} as a base model")

def build_model(config: Dict[str, Any]) -> ForwardModel:
    spec = config['model']
    models.get_model(spec['kind'])
    key = utils.named_key(config['seed'], 'model')
    if spec['kind'] != 'additive_correction':
        return _base_model(spec['kind'], spec, key)
    kw, ka = key.split()
    wrapped = _base_model(spec['wrapped'], spec, kw)
    anchor = core.tensor(utils.normal(ka, spec['anchor_sigma'], wrapped.in_dim))
    return models.AdditiveCorrection(wrapped=wrapped, anchor=anchor, decay=spec['decay'])

def build_objective(config: Dict[str, Any], model: ForwardModel) -> Objective:
    """λ lives on the additive_correction model only: that model always gets
    task_plus_decay with the model's decay, wrapping objective.kind (or
    objective.task when the kind is already task_plus_decay)."""
    spec = config['objective']
    kind, task, decay = spec['kind'], spec['task'], 0.0
    if isinstance(model, models.AdditiveCorrection):
        task = task if kind == 'task_plus_decay' else kind
        kind, decay = 'task_plus_decay', model.decay
    elif kind == 'task_plus_decay':
        raise core.ConfigError(f"task_plus_decay needs an additive_correction model, got {model.kind}")
    return obj_.make_objective(kind, d_y=model.out_dim, key=utils.named_key(config['seed'], 'objective'),
                               mask=spec['mask'], feature_dim=spec['feature_dim'],
                               feature_weight=spec['feature_weight'], decay=decay, task=task)

def build_mapping(config: Dict[str, Any], d_x: int) -> MlpParams:
    """the initial θ; also the ablation's untrained random_theta"""
    spec = config['mapping']
    return models.init_mapping(utils.named_key(config['seed'], 'mapping'), spec['d_z'], d_x,
                               hidden=spec['hidden'], n_layers=spec['n_layers'], slope=spec['slope'])

def observation_mask(config: Dict[str, Any], d_y: int) -> Optional[np.ndarray]:
    return utils.parse_mask(config['data']['mask'], d_y)

def build_sampler(config: Dict[str, Any], model: ForwardModel, prior_shift: float = 0.0) -> PriorSampler:
    data = config['data']
    return PriorSampler(model=model, prior_sigma=data['prior_sigma'], noise_sigma=data['noise_sigma'],
                        prior_shift=prior_shift, mask=observation_mask(config, model.out_dim))

def heldout_observations(config: Dict[str, Any], model: ForwardModel,
                         n: Optional[int] = None) -> List[Observation]:
    """held-out observations; data.prior_shift moves them off the training prior"""
    sampler = build_sampler(config, model, prior_shift=config['data']['prior_shift'])
    stacked = sampler.sample(utils.named_key(config['seed'], 'test'), n or config['data']['n_test'])
    return [stacked.rows(i) for i in range(len(stacked.y))]

def ablation_suite(config: Dict[str, Any], model: ForwardModel, full: MlpParams, no_cd_no_buffer: MlpParams,
                   steps=None, baseline_lr: Optional[float] = None) -> AblationSuite:
    variants = {
        'full': full,
        'no_cd_no_buffer': no_cd_no_buffer,
        'random_theta': build_mapping(config, model.in_dim),
        'baseline': None,
    }
    return AblationSuite(variants=variants, observations=heldout_observations(config, model),
                         steps=tuple(steps or config['ablation']['steps']), baseline_lr=baseline_lr)

# =========================
# Checkpoints
# =========================

@dataclass(frozen=True)
class Checkpoint:
    theta: MlpParams
    optimizer: optimizers.OptimizerState
    round_id: int
    model: ForwardModel
    config: Dict[str, Any]

def _prefixed(prefix: str, arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}

def _strip(prefix: str, arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in arrays.items() if k.startswith(f"{prefix}.")}

def save_checkpoint(path: str, theta: MlpParams, optimizer: optimizers.OptimizerState, round_id: int,
                    model: ForwardModel, config: Dict[str, Any]) -> None:
    arrays = {**_prefixed('theta', theta.to_arrays()),
              **_prefixed('optimizer', optimizer.arrays()),
              **_prefixed('model', model.to_arrays())}
    meta = {'round_id': int(round_id), 'theta': theta.meta(), 'optimizer': optimizer.meta(),
            'model': model.meta(), 'config': config}
    utils.save_container(path, arrays, version=utils.CHECKPOINT_VERSION, meta=meta)
    logger.info(f"wrote checkpoint for round {round_id} to {path}")

def load_checkpoint(path: str) -> Checkpoint:
    arrays, meta = utils.load_container(path, utils.CHECKPOINT_VERSION)
    try:
        theta = MlpParams.from_arrays(_strip('theta', arrays), meta['theta'])
        optimizer = optimizers.OptimizerState.from_arrays(_strip('optimizer', arrays), meta['optimizer'])
        model = models.model_from_arrays(_strip('model', arrays), meta['model'])
        return Checkpoint(theta=theta, optimizer=optimizer, round_id=int(meta['round_id']), model=model,
                          config=meta['config'])
    except KeyError as e:
        raise core.InputError(f"{path} is missing checkpoint entry {e}")
