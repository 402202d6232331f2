"""Pose-estimation hyperparameters: 128-d Z mapped to a 32-d pose latent."""
from copy import deepcopy

from ..utils import nested_update
from .base import config as base

config = nested_update(deepcopy(base), {
    'model': {'kind': 'mini_decoder', 'd_x': 32, 'd_y': 63, 'hidden': 64},
    'mapping': {'d_z': 128, 'hidden': 512},
    'train': {'n_buffers': 500, 'n_samples': 40960, 'n_steps': 200, 'lr_z': 0.1, 'lr_theta': 0.005,
              'weight_decay': 0.1},
    'inference': {'steps': 200, 'lr': 0.1, 'baseline_lrs': [0.5, 0.1, 0.05, 0.01, 0.001]},
})
